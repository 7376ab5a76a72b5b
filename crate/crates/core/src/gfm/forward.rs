use crate::embed::clamp_prob;
use crate::numerics::{
    mlp_backward_into, mlp_forward_mode, sigmoid, Matrix, MlpCache, NumericMode, Real, SegmentSums, Storage,
};
use crate::quadgraph::NodeType;

use super::{GfmError, GfmParams, ModelView, Result};

/// Per-query inputs to [`forward`].
#[derive(Debug, Clone, Copy)]
pub struct GfmInputs<'a, T> {
    /// Text embedding of every node, `n × d`.
    pub nodes: &'a Matrix<T>,
    /// Text embedding of every view relation (originals, then inverses), `2R × d`.
    pub relations: &'a Matrix<T>,
    pub query: &'a [T],
    /// Query-related nodes `V_q`.
    pub seeds: &'a [u32],
}

/// Everything [`backward`] needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace<'v, T> {
    view: &'v ModelView,
    fingerprint: u64,
    seed_mask: Vec<bool>,
    query: Vec<T>,
    init_cache: MlpCache<T>,
    init_input: Matrix<T>,
    states: Vec<Matrix<T>>,
    relations: Vec<Matrix<T>>,
    relation_caches: Vec<MlpCache<T>>,
    update_caches: Vec<MlpCache<T>>,
    scores: Vec<T>,
}

impl<T: Real> ForwardTrace<'_, T> {
    /// Node states `H^0 … H^L`.
    pub fn states(&self) -> &[Matrix<T>] {
        &self.states
    }

    /// Relation embeddings `H_R^1 … H_R^L`.
    pub fn relation_embeddings(&self) -> &[Matrix<T>] {
        &self.relations
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }
}

/// Parameter gradients plus the gradient with respect to the query embedding.
#[derive(Debug, Clone)]
pub struct GfmGradients<T> {
    pub params: GfmParams<T>,
    pub query: Vec<T>,
}

fn expect_dim(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(GfmError::Dimension { what, expected, got });
    }
    Ok(())
}

pub(crate) fn seed_mask(n: usize, seeds: &[u32]) -> Result<Vec<bool>> {
    let mut mask = vec![false; n];
    for &s in seeds {
        if s as usize >= n {
            return Err(GfmError::SeedOutOfRange { node: s, n_nodes: n });
        }
        mask[s as usize] = true;
    }
    Ok(mask)
}

/// `[h_v ; 1{v ∈ V_q}·h_q]` for every row.
fn init_input<T: Real>(nodes: &Matrix<T>, query: &[T], mask: &[bool]) -> Matrix<T> {
    let d = nodes.cols();
    let mut x = Matrix::zeros(nodes.rows(), 2 * d);
    for (v, &seed) in mask.iter().enumerate() {
        let row = x.row_mut(v);
        row[..d].copy_from_slice(nodes.row(v));
        if seed {
            row[d..].copy_from_slice(query);
        }
    }
    x
}

pub(crate) fn init_rows<T: Real>(
    nodes: &Matrix<T>,
    query: &[T],
    mask: &[bool],
    params: &GfmParams<T>,
    mode: NumericMode,
) -> Result<(Matrix<T>, Matrix<T>, MlpCache<T>)> {
    expect_dim("node embedding width", params.dim, nodes.cols())?;
    expect_dim("query embedding width", params.dim, query.len())?;
    let x = init_input(nodes, query, mask);
    let (h, cache) = mlp_forward_mode(&params.init, &x, mode)?;
    Ok((h, x, cache))
}

/// Layer-0 states `H^0`.
pub fn init_node_states<T: Real>(
    nodes: &Matrix<T>,
    query: &[T],
    seeds: &[u32],
    params: &GfmParams<T>,
    mode: NumericMode,
) -> Result<Matrix<T>> {
    let mask = seed_mask(nodes.rows(), seeds)?;
    Ok(init_rows(nodes, query, &mask, params, mode)?.0)
}

fn relation_with_cache<T: Real>(
    relations: &Matrix<T>,
    layer: usize,
    params: &GfmParams<T>,
    mode: NumericMode,
) -> Result<(Matrix<T>, MlpCache<T>)> {
    if layer == 0 || layer > params.layers {
        return Err(GfmError::LayerOutOfRange {
            layer,
            layers: params.layers,
        });
    }
    expect_dim("relation embedding width", params.dim, relations.cols())?;
    Ok(mlp_forward_mode(&params.relation[layer - 1], relations, mode)?)
}

/// `H_R^l = g^l(H_R)`, always applied to the base relation embeddings.
pub fn relation_embed_layer<T: Real>(
    relations: &Matrix<T>,
    layer: usize,
    params: &GfmParams<T>,
    mode: NumericMode,
) -> Result<Matrix<T>> {
    Ok(relation_with_cache(relations, layer, params, mode)?.0)
}

/// Sum of DistMult messages `h_src ⊙ h_rel` at each destination.
pub(crate) fn aggregate<T: Real>(
    h_prev: &Matrix<T>,
    view: &ModelView,
    rel_layer: &Matrix<T>,
    mode: NumericMode,
) -> Matrix<T> {
    let mut acc = SegmentSums::new(view.n_nodes(), h_prev.cols(), mode.reduction);
    for e in 0..view.n_edges() {
        let (s, r, t) = view.edge(e);
        acc.add_product(t as usize, h_prev.row(s as usize), rel_layer.row(r as usize));
    }
    let mut a = acc.finish();
    mode.store(&mut a);
    a
}

pub(crate) fn update_rows<T: Real>(
    h_prev: &Matrix<T>,
    agg: &Matrix<T>,
    params: &GfmParams<T>,
    layer: usize,
    mode: NumericMode,
) -> Result<(Matrix<T>, MlpCache<T>)> {
    let u = h_prev.hcat(agg)?;
    Ok(mlp_forward_mode(&params.update[layer - 1], &u, mode)?)
}

/// One round of message passing: `h_v^l = UpdateMLP_l([h_v^{l−1} ; Σ h_{v'} ⊙ h_r^l])`.
pub fn propagate_layer<T: Real>(
    h_prev: &Matrix<T>,
    view: &ModelView,
    rel_layer: &Matrix<T>,
    params: &GfmParams<T>,
    layer: usize,
    mode: NumericMode,
) -> Result<Matrix<T>> {
    if layer == 0 || layer > params.layers {
        return Err(GfmError::LayerOutOfRange {
            layer,
            layers: params.layers,
        });
    }
    expect_dim("state rows", view.n_nodes(), h_prev.rows())?;
    expect_dim("state width", params.dim, h_prev.cols())?;
    expect_dim("relation rows", view.n_relations(), rel_layer.rows())?;
    expect_dim("relation width", params.dim, rel_layer.cols())?;
    let a = aggregate(h_prev, view, rel_layer, mode);
    Ok(update_rows(h_prev, &a, params, layer, mode)?.0)
}

fn logit<T: Real>(w: &[T], b: T, h_last: &[T], h_text: &[T], query: &[T]) -> T {
    let d = h_last.len();
    let mut z = b;
    for k in 0..d {
        z += w[k] * h_last[k];
    }
    for k in 0..d {
        z += w[d + k] * h_text[k];
    }
    for k in 0..d {
        z += w[2 * d + k] * query[k];
    }
    z
}

/// `p(v) = sigmoid(Predictor_{type(v)}([h_v^L ; h_v ; h_q]))`, clamped to `[1e-7, 1 − 1e-7]`.
pub fn predict_scores<T: Real>(
    h_last: &Matrix<T>,
    nodes: &Matrix<T>,
    query: &[T],
    kinds: &[NodeType],
    params: &GfmParams<T>,
) -> Result<Vec<T>> {
    expect_dim("node rows", h_last.rows(), nodes.rows())?;
    expect_dim("node kinds", h_last.rows(), kinds.len())?;
    expect_dim("state width", params.dim, h_last.cols())?;
    expect_dim("node embedding width", params.dim, nodes.cols())?;
    expect_dim("query embedding width", params.dim, query.len())?;
    Ok(kinds
        .iter()
        .enumerate()
        .map(|(v, kind)| {
            let p = &params.predictors[kind.index()].layers[0];
            let z = logit(p.weight.as_slice(), p.bias[0], h_last.row(v), nodes.row(v), query);
            clamp_prob(sigmoid(z))
        })
        .collect())
}

/// Copies of the parameters and inputs in the storage format of `mode`.
pub(crate) fn stored_inputs<T: Real>(
    params: &GfmParams<T>,
    inputs: &GfmInputs<'_, T>,
    mode: NumericMode,
) -> Option<(GfmParams<T>, Matrix<T>, Matrix<T>, Vec<T>)> {
    if mode.storage != Storage::Half {
        return None;
    }
    let mut nodes = inputs.nodes.clone();
    let mut relations = inputs.relations.clone();
    mode.store(&mut nodes);
    mode.store(&mut relations);
    let query = inputs.query.iter().map(|q| q.round_half()).collect();
    Some((params.stored(mode), nodes, relations, query))
}

pub(crate) fn check_inputs<T: Real>(view: &ModelView, inputs: &GfmInputs<'_, T>, params: &GfmParams<T>) -> Result<()> {
    expect_dim("node embedding rows", view.n_nodes(), inputs.nodes.rows())?;
    expect_dim("node embedding width", params.dim, inputs.nodes.cols())?;
    expect_dim("relation embedding rows", view.n_relations(), inputs.relations.rows())?;
    expect_dim("relation embedding width", params.dim, inputs.relations.cols())?;
    expect_dim("query embedding width", params.dim, inputs.query.len())?;
    Ok(())
}

/// Scores every node of `view` for one query.
pub fn forward<'v, T: Real>(
    view: &'v ModelView,
    inputs: GfmInputs<'_, T>,
    params: &GfmParams<T>,
    mode: NumericMode,
) -> Result<(Vec<T>, ForwardTrace<'v, T>)> {
    check_inputs(view, &inputs, params)?;
    let mask = seed_mask(view.n_nodes(), inputs.seeds)?;
    let fingerprint = params.fingerprint();
    let stored = stored_inputs(params, &inputs, mode);
    let (params, nodes, rel_base, query) = match &stored {
        Some((p, n, r, q)) => (p, n, r, q.as_slice()),
        None => (params, inputs.nodes, inputs.relations, inputs.query),
    };

    let (h0, init_input, init_cache) = init_rows(nodes, query, &mask, params, mode)?;
    let mut states = vec![h0];
    let mut relations = Vec::with_capacity(params.layers);
    let mut relation_caches = Vec::with_capacity(params.layers);
    let mut update_caches = Vec::with_capacity(params.layers);
    for l in 1..=params.layers {
        let (r, rc) = relation_with_cache(rel_base, l, params, mode)?;
        let prev = &states[l - 1];
        let a = aggregate(prev, view, &r, mode);
        let (h, uc) = update_rows(prev, &a, params, l, mode)?;
        relations.push(r);
        relation_caches.push(rc);
        update_caches.push(uc);
        states.push(h);
    }
    let scores = predict_scores(&states[params.layers], nodes, query, view.kinds(), params)?;
    let trace = ForwardTrace {
        view,
        fingerprint,
        seed_mask: mask,
        query: query.to_vec(),
        init_cache,
        init_input,
        states,
        relations,
        relation_caches,
        update_caches,
        scores: scores.clone(),
    };
    Ok((scores, trace))
}

/// Exact gradients of `Σ_v dScores[v] · p(v)` for the pass recorded in `trace`.
///
/// The score clamp is treated as the identity.
pub fn backward<T: Real>(trace: &ForwardTrace<'_, T>, d_scores: &[T], params: &GfmParams<T>) -> Result<GfmGradients<T>> {
    if params.fingerprint() != trace.fingerprint {
        return Err(GfmError::StaleTrace);
    }
    let view = trace.view;
    let (n, d) = (view.n_nodes(), params.dim);
    expect_dim("score gradient length", n, d_scores.len())?;
    let mut g = params.zeros_like();
    let mut dq = vec![T::zero(); d];

    let h_last = &trace.states[params.layers];
    let mut dh = Matrix::zeros(n, d);
    for (v, kind) in view.kinds().iter().enumerate() {
        let p = trace.scores[v];
        let dz = d_scores[v] * p * (T::one() - p);
        if dz == T::zero() {
            continue;
        }
        let t = kind.index();
        let w = params.predictors[t].layers[0].weight.as_slice();
        let gp = &mut g.predictors[t].layers[0];
        gp.bias[0] += dz;
        let gw = gp.weight.as_mut_slice();
        let (hl, hv) = (h_last.row(v), &trace.init_input.row(v)[..d]);
        let dhv = dh.row_mut(v);
        for k in 0..d {
            gw[k] += dz * hl[k];
            dhv[k] += dz * w[k];
            gw[d + k] += dz * hv[k];
            gw[2 * d + k] += dz * trace.query[k];
            dq[k] += dz * w[2 * d + k];
        }
    }

    for l in (1..=params.layers).rev() {
        let du = mlp_backward_into(&params.update[l - 1], &trace.update_caches[l - 1], &dh, &mut g.update[l - 1])?;
        let mut dh_prev = du.col_slice(0, d);
        let da = du.col_slice(d, d);
        let h_prev = &trace.states[l - 1];
        let r = &trace.relations[l - 1];
        let mut dr = Matrix::zeros(view.n_relations(), d);
        for e in 0..view.n_edges() {
            let (s, rel, t) = view.edge(e);
            let dat = da.row(t as usize);
            let rr = r.row(rel as usize);
            let hs = h_prev.row(s as usize);
            let dhs = dh_prev.row_mut(s as usize);
            for k in 0..d {
                dhs[k] += dat[k] * rr[k];
            }
            let drr = dr.row_mut(rel as usize);
            for k in 0..d {
                drr[k] += dat[k] * hs[k];
            }
        }
        mlp_backward_into(&params.relation[l - 1], &trace.relation_caches[l - 1], &dr, &mut g.relation[l - 1])?;
        dh = dh_prev;
    }

    let dx = mlp_backward_into(&params.init, &trace.init_cache, &dh, &mut g.init)?;
    for (v, &seed) in trace.seed_mask.iter().enumerate() {
        if seed {
            for (q, &x) in dq.iter_mut().zip(&dx.row(v)[d..]) {
                *q += x;
            }
        }
    }
    Ok(GfmGradients { params: g, query: dq })
}
