use serde::{Deserialize, Serialize};

use super::{ParamBlocks, Real, ShapeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments per parameter block, plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamWState<T> {
    pub config: AdamWConfig,
    pub step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamWState<T> {
    pub fn new<P: ParamBlocks<T>>(params: &P, config: AdamWConfig) -> Self {
        let zeros = || params.blocks().iter().map(|b| vec![T::zero(); b.len()]).collect();
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One AdamW update with decoupled weight decay: `p ← p − lr·(wd·p + m̂/(√v̂ + eps))`.
pub fn adamw_step<T: Real, P: ParamBlocks<T>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamWState<T>,
) -> Result<(), ShapeError> {
    let g_blocks = grads.blocks();
    let p_blocks = params.blocks_mut();
    if g_blocks.len() != p_blocks.len() || p_blocks.len() != state.m.len() {
        return Err(ShapeError::mismatch("adamw_step blocks", p_blocks.len(), g_blocks.len()));
    }
    for (i, (p, g)) in p_blocks.iter().zip(&g_blocks).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(ShapeError::mismatch("adamw_step block", p.len(), g.len()));
        }
    }

    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
    let (one_b1, one_b2) = (T::from_f64(1.0 - c.beta1), T::from_f64(1.0 - c.beta2));
    let (lr, wd, eps) = (T::from_f64(c.lr), T::from_f64(c.weight_decay), T::from_f64(c.eps));
    let (bc1, bc2) = (T::from_f64(bc1), T::from_f64(bc2));

    for (i, (p, g)) in p_blocks.into_iter().zip(g_blocks).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for j in 0..p.len() {
            let gj = g[j];
            m[j] = b1 * m[j] + one_b1 * gj;
            v[j] = b2 * v[j] + one_b2 * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            p[j] = p[j] - lr * (wd * p[j] + m_hat / (v_hat.sqrt() + eps));
        }
    }
    Ok(())
}
