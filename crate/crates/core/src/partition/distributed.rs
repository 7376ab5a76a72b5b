//! Partitioned forward pass.
//!
//! Each worker owns the states of its nodes. Per layer it computes messages
//! for the view edges whose source it owns, sums them per destination, and
//! ships one partial sum per remote destination node to the owning worker.
//! Owners add the partials in ascending source-part order before the update
//! MLP. In exact-reduction mode the partials travel as unrounded expansions,
//! so the result is bitwise equal to a single-worker pass.

use std::sync::mpsc::{channel, Receiver, Sender};
use std::thread;

use super::{PartitionError, PartitionPlan, Result};
use crate::gfm::{
    check_inputs, init_rows, predict_scores, relation_embed_layer, seed_mask, stored_inputs, update_rows, GfmInputs,
    GfmParams, ModelView,
};
use crate::numerics::{Matrix, NumericMode, Real, SegmentSums};

/// What one worker holds: its nodes and the routing tables for its edges.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkerShard {
    pub part: u32,
    /// Owned nodes, ascending global id; state row `i` belongs to `nodes[i]`.
    pub nodes: Vec<u32>,
    /// View edges whose source this worker owns, in view order.
    pub edges: Vec<u32>,
    /// Per destination part: the remote nodes this worker sends partial sums for, ascending.
    pub outbound: Vec<Vec<u32>>,
    /// Per source part: local rows receiving that part's partial sums, in the sender's order.
    pub inbound: Vec<Vec<u32>>,
}

/// Global id → row index inside the owning worker.
fn local_rows(plan: &PartitionPlan) -> Vec<u32> {
    let mut next = vec![0u32; plan.n_parts];
    plan.assignment
        .iter()
        .map(|&p| {
            let r = next[p as usize];
            next[p as usize] += 1;
            r
        })
        .collect()
}

pub fn build_shards(view: &ModelView, plan: &PartitionPlan) -> Vec<WorkerShard> {
    let k = plan.n_parts;
    let row = local_rows(plan);
    let mut shards: Vec<WorkerShard> = (0..k as u32)
        .map(|part| WorkerShard {
            part,
            nodes: Vec::new(),
            edges: Vec::new(),
            outbound: vec![Vec::new(); k],
            inbound: vec![Vec::new(); k],
        })
        .collect();
    for (v, &p) in plan.assignment.iter().enumerate() {
        shards[p as usize].nodes.push(v as u32);
    }
    for e in 0..view.n_edges() {
        let (s, _, t) = view.edge(e);
        let (ps, pt) = (plan.part_of(s) as usize, plan.part_of(t) as usize);
        shards[ps].edges.push(e as u32);
        if ps != pt {
            shards[ps].outbound[pt].push(t);
        }
    }
    for p in 0..k {
        for q in 0..k {
            let out = &mut shards[p].outbound[q];
            out.sort_unstable();
            out.dedup();
        }
    }
    for p in 0..k {
        for q in 0..k {
            let rows = shards[p].outbound[q].iter().map(|&t| row[t as usize]).collect();
            shards[q].inbound[p] = rows;
        }
    }
    shards
}

struct Shared<'a, T> {
    view: &'a ModelView,
    plan: &'a PartitionPlan,
    row: &'a [u32],
    params: &'a GfmParams<T>,
    nodes: &'a Matrix<T>,
    relations: &'a Matrix<T>,
    query: &'a [T],
    mask: &'a [bool],
    mode: NumericMode,
}

fn run_worker<T: Real>(
    ctx: &Shared<'_, T>,
    shard: &WorkerShard,
    senders: Vec<Option<Sender<SegmentSums<T>>>>,
    receivers: Vec<Option<Receiver<SegmentSums<T>>>>,
) -> Result<Vec<T>> {
    let (d, me) = (ctx.params.dim, shard.part as usize);
    let n_local = shard.nodes.len();
    let local_emb = ctx.nodes.select_rows(&shard.nodes);
    let local_mask: Vec<bool> = shard.nodes.iter().map(|&v| ctx.mask[v as usize]).collect();
    let (mut h, _, _) = init_rows(&local_emb, ctx.query, &local_mask, ctx.params, ctx.mode)?;

    for l in 1..=ctx.params.layers {
        let r = relation_embed_layer(ctx.relations, l, ctx.params, ctx.mode)?;
        let mut local = SegmentSums::new(n_local, d, ctx.mode.reduction);
        let mut outgoing: Vec<SegmentSums<T>> = shard
            .outbound
            .iter()
            .map(|dsts| SegmentSums::new(dsts.len(), d, ctx.mode.reduction))
            .collect();
        for &e in &shard.edges {
            let (s, rel, t) = ctx.view.edge(e as usize);
            let hs = h.row(ctx.row[s as usize] as usize);
            let q = ctx.plan.part_of(t) as usize;
            if q == me {
                local.add_product(ctx.row[t as usize] as usize, hs, r.row(rel as usize));
            } else {
                let slot = shard.outbound[q].binary_search(&t).expect("routing table covers every boundary edge");
                outgoing[q].add_product(slot, hs, r.row(rel as usize));
            }
        }
        for (q, (sums, tx)) in outgoing.into_iter().zip(&senders).enumerate() {
            if let Some(tx) = tx {
                if !shard.outbound[q].is_empty() {
                    tx.send(sums).map_err(|_| PartitionError::Worker)?;
                }
            }
        }
        let mut total = SegmentSums::new(n_local, d, ctx.mode.reduction);
        for (q, rx) in receivers.iter().enumerate() {
            if q == me {
                for i in 0..n_local {
                    total.merge_segment(i, &local, i);
                }
            } else if !shard.inbound[q].is_empty() {
                let partial = rx.as_ref().expect("channel per part pair").recv().map_err(|_| PartitionError::Worker)?;
                for (slot, &row) in shard.inbound[q].iter().enumerate() {
                    total.merge_segment(row as usize, &partial, slot);
                }
            }
        }
        let mut a = total.finish();
        ctx.mode.store(&mut a);
        h = update_rows(&h, &a, ctx.params, l, ctx.mode)?.0;
    }
    let kinds: Vec<_> = shard.nodes.iter().map(|&v| ctx.view.kinds()[v as usize]).collect();
    Ok(predict_scores(&h, &local_emb, ctx.query, &kinds, ctx.params)?)
}

/// Scores every node with one thread per part; equivalent to `gfm::forward`.
pub fn distributed_forward<T: Real>(
    view: &ModelView,
    plan: &PartitionPlan,
    inputs: GfmInputs<'_, T>,
    params: &GfmParams<T>,
    mode: NumericMode,
) -> Result<Vec<T>> {
    if plan.assignment.len() != view.n_nodes() {
        return Err(PartitionError::PlanMismatch {
            plan: plan.assignment.len(),
            graph: view.n_nodes(),
        });
    }
    check_inputs(view, &inputs, params)?;
    let mask = seed_mask(view.n_nodes(), inputs.seeds)?;
    let stored = stored_inputs(params, &inputs, mode);
    let (params, nodes, relations, query) = match &stored {
        Some((p, n, r, q)) => (p, n, r, q.as_slice()),
        None => (params, inputs.nodes, inputs.relations, inputs.query),
    };
    let shards = build_shards(view, plan);
    let row = local_rows(plan);
    let ctx = Shared {
        view,
        plan,
        row: &row,
        params,
        nodes,
        relations,
        query,
        mask: &mask,
        mode,
    };

    // one single-producer single-consumer mailbox per ordered part pair
    let k = plan.n_parts;
    let mut senders: Vec<Vec<Option<Sender<SegmentSums<T>>>>> = (0..k).map(|_| (0..k).map(|_| None).collect()).collect();
    let mut receivers: Vec<Vec<Option<Receiver<SegmentSums<T>>>>> =
        (0..k).map(|_| (0..k).map(|_| None).collect()).collect();
    for p in 0..k {
        for q in 0..k {
            if p != q {
                let (tx, rx) = channel();
                senders[p][q] = Some(tx);
                receivers[q][p] = Some(rx);
            }
        }
    }

    let results: Vec<Result<Vec<T>>> = thread::scope(|scope| {
        let handles: Vec<_> = shards
            .iter()
            .zip(senders)
            .zip(receivers)
            .map(|((shard, tx), rx)| {
                let ctx = &ctx;
                scope.spawn(move || run_worker(ctx, shard, tx, rx))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or(Err(PartitionError::Worker)))
            .collect()
    });

    let mut scores = vec![T::zero(); view.n_nodes()];
    for (shard, res) in shards.iter().zip(results) {
        for (&v, s) in shard.nodes.iter().zip(res?) {
            scores[v as usize] = s;
        }
    }
    Ok(scores)
}
