use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{affine, affine_input_grad, affine_param_grads};
use super::{Matrix, NumericMode, ParamBlocks, Real, ShapeError};

/// One affine layer; `weight` is `in × out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Matrix::zeros(input, output),
            bias: vec![T::zero(); output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }
}

/// Affine layers with ReLU between them and identity on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
}

/// Per-layer inputs and hidden pre-activations saved by [`mlp_forward`].
#[derive(Debug, Clone)]
pub struct MlpCache<T> {
    inputs: Vec<Matrix<T>>,
    pre_activations: Vec<Matrix<T>>,
}

impl<T: Real> Mlp<T> {
    /// Zero-filled MLP through the given widths, e.g. `[2d, d, d]`.
    pub fn zeros(widths: &[usize]) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        Self {
            layers: widths.windows(2).map(|w| Linear::zeros(w[0], w[1])).collect(),
        }
    }

    /// Kaiming-uniform weights (gain √2 before a ReLU, 1 on the output layer), zero biases.
    pub fn kaiming(widths: &[usize], rng: &mut impl Rng) -> Self {
        let mut mlp = Self::zeros(widths);
        let last = mlp.layers.len() - 1;
        for (i, layer) in mlp.layers.iter_mut().enumerate() {
            let fan_in = layer.input_dim().max(1) as f64;
            let gain2 = if i == last { 1.0 } else { 2.0 };
            let bound = (3.0 * gain2 / fan_in).sqrt();
            for w in layer.weight.as_mut_slice() {
                *w = T::from_f64(rng.gen_range(-bound..=bound));
            }
        }
        mlp
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        Mlp {
            layers: self
                .layers
                .iter()
                .map(|l| Linear {
                    weight: l.weight.cast(),
                    bias: l.bias.iter().map(|&b| U::from_f64(b.as_f64())).collect(),
                })
                .collect(),
        }
    }

    /// Copy with every parameter passed through the storage format of `mode`.
    pub fn stored(&self, mode: NumericMode) -> Self {
        let mut out = self.clone();
        for l in &mut out.layers {
            mode.store(&mut l.weight);
            let mut b = Matrix::from_vec(1, l.bias.len(), std::mem::take(&mut l.bias)).expect("bias row");
            mode.store(&mut b);
            l.bias = b.into_vec();
        }
        out
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.as_slice().len() + l.bias.len()).sum()
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.add_assign(&b.weight).expect("same shape");
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    /// Forward pass without keeping a cache.
    pub fn apply(&self, x: &Matrix<T>, mode: NumericMode) -> Result<Matrix<T>, ShapeError> {
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = affine(&h, &layer.weight, &layer.bias)?;
            if i != last {
                h.map_inplace(relu);
            }
            mode.store(&mut h);
        }
        Ok(h)
    }
}

#[inline]
fn relu<T: Real>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

impl<T: Real> ParamBlocks<T> for Mlp<T> {
    fn block_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    fn blocks(&self) -> Vec<&[T]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(l.weight.as_mut_slice());
            out.push(l.bias.as_mut_slice());
        }
        out
    }
}

pub fn mlp_forward<T: Real>(params: &Mlp<T>, x: &Matrix<T>) -> Result<(Matrix<T>, MlpCache<T>), ShapeError> {
    mlp_forward_mode(params, x, NumericMode::FAST)
}

pub(crate) fn mlp_forward_mode<T: Real>(
    params: &Mlp<T>,
    x: &Matrix<T>,
    mode: NumericMode,
) -> Result<(Matrix<T>, MlpCache<T>), ShapeError> {
    if x.cols() != params.input_dim() {
        return Err(ShapeError::mismatch("mlp_forward", params.input_dim(), x.cols()));
    }
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(last);
    let mut h = x.clone();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = affine(&h, &layer.weight, &layer.bias)?;
        inputs.push(h);
        if i == last {
            mode.store(&mut z);
            h = z;
        } else {
            mode.store(&mut z);
            let mut a = z.clone();
            a.map_inplace(relu);
            pre_activations.push(z);
            h = a;
        }
    }
    Ok((h, MlpCache { inputs, pre_activations }))
}

/// Returns `(dX, dParams)` for the forward pass recorded in `cache`.
pub fn mlp_backward<T: Real>(
    params: &Mlp<T>,
    cache: &MlpCache<T>,
    dy: &Matrix<T>,
) -> Result<(Matrix<T>, Mlp<T>), ShapeError> {
    let mut grads = params.zeros_like();
    let dx = mlp_backward_into(params, cache, dy, &mut grads)?;
    Ok((dx, grads))
}

/// Like [`mlp_backward`] but accumulates into existing gradients.
pub(crate) fn mlp_backward_into<T: Real>(
    params: &Mlp<T>,
    cache: &MlpCache<T>,
    dy: &Matrix<T>,
    grads: &mut Mlp<T>,
) -> Result<Matrix<T>, ShapeError> {
    if cache.inputs.len() != params.layers.len() {
        return Err(ShapeError::mismatch(
            "mlp_backward cache",
            params.layers.len(),
            cache.inputs.len(),
        ));
    }
    let rows = cache.inputs[0].rows();
    if dy.shape() != (rows, params.output_dim()) {
        return Err(ShapeError::mismatch(
            "mlp_backward dy",
            format!("{:?}", (rows, params.output_dim())),
            format!("{:?}", dy.shape()),
        ));
    }
    let mut delta = dy.clone();
    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        let g = &mut grads.layers[i];
        affine_param_grads(&cache.inputs[i], &delta, &mut g.weight, &mut g.bias);
        let mut d_in = affine_input_grad(&delta, &layer.weight);
        if i > 0 {
            let z = &cache.pre_activations[i - 1];
            for (d, &zv) in d_in.as_mut_slice().iter_mut().zip(z.as_slice()) {
                if zv <= T::zero() {
                    *d = T::zero();
                }
            }
        }
        delta = d_in;
    }
    Ok(delta)
}
