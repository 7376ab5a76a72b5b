//! Central finite-difference verification of analytic gradients.

use serde::Serialize;

use super::ParamBlocks;

#[derive(Debug, Clone, Serialize)]
pub struct BlockError {
    pub name: String,
    /// `max |analytic − numeric| / max(max |analytic|, max |numeric|)` over the block.
    pub max_rel_err: f64,
    pub max_abs_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FdReport {
    pub blocks: Vec<BlockError>,
    pub max_rel_err: f64,
    pub passed: bool,
}

/// Compares `analytic` against central differences of `f` around `params`.
///
/// Errors are normalised per parameter block so that entries whose gradient
/// is tiny compared to the rest of their block do not dominate.
pub fn finite_diff_check<P, F>(f: F, params: &P, analytic: &P, h: f64, tolerance: f64) -> FdReport
where
    P: ParamBlocks<f64> + Clone,
    F: Fn(&P) -> f64,
{
    let names = params.block_names();
    let analytic_blocks = analytic.blocks();
    let mut probe = params.clone();
    let mut blocks = Vec::with_capacity(names.len());
    for (bi, name) in names.into_iter().enumerate() {
        let len = params.blocks()[bi].len();
        let mut numeric = Vec::with_capacity(len);
        for j in 0..len {
            let orig = probe.blocks()[bi][j];
            probe.blocks_mut()[bi][j] = orig + h;
            let up = f(&probe);
            probe.blocks_mut()[bi][j] = orig - h;
            let down = f(&probe);
            probe.blocks_mut()[bi][j] = orig;
            numeric.push((up - down) / (2.0 * h));
        }
        let a = analytic_blocks[bi];
        let scale = a
            .iter()
            .chain(&numeric)
            .fold(0.0f64, |m, &x| m.max(x.abs()));
        let max_abs_err = a
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (&x, &y)| m.max((x - y).abs()));
        let max_rel_err = if scale > 0.0 { max_abs_err / scale } else { 0.0 };
        blocks.push(BlockError {
            name,
            max_rel_err,
            max_abs_err,
        });
    }
    let max_rel_err = blocks.iter().fold(0.0f64, |m, b| m.max(b.max_rel_err));
    FdReport {
        passed: max_rel_err < tolerance,
        max_rel_err,
        blocks,
    }
}
