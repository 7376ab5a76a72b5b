//! Splitting oversized graphs into training-sized pieces.
//!
//! Connected components are kept whole when they fit within `max_nodes`
//! plus 10% slack; larger components are cut into BFS-ordered chunks of
//! `max_nodes`. Pieces are then packed first-fit-decreasing into bins.

use std::collections::VecDeque;

use super::{Edge, GraphError, QuadGraph, Result};

#[derive(Debug, Clone)]
pub struct Subgraph {
    pub graph: QuadGraph,
    /// `global_ids[local]` is the node id in the input graph.
    pub global_ids: Vec<u32>,
    /// Indices into the query list handed to [`split_subgraphs`].
    pub queries: Vec<usize>,
}

impl Subgraph {
    pub fn local_id(&self, global: u32) -> Option<u32> {
        self.global_ids.binary_search(&global).ok().map(|i| i as u32)
    }
}

#[derive(Debug, Clone)]
pub struct SplitOutput {
    pub subgraphs: Vec<Subgraph>,
    /// Queries none of whose labeled nodes landed in any subgraph.
    pub dropped_queries: usize,
}

fn components(graph: &QuadGraph) -> Vec<Vec<u32>> {
    let n = graph.n_nodes();
    let mut comp = vec![u32::MAX; n];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..n as u32 {
        if comp[start as usize] != u32::MAX {
            continue;
        }
        let c = out.len() as u32;
        let mut members = Vec::new();
        comp[start as usize] = c;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            members.push(v);
            let outs = graph.out_index().edges_of(v).iter().map(|&e| graph.edges()[e as usize].dst);
            let ins = graph.in_index().edges_of(v).iter().map(|&e| graph.edges()[e as usize].src);
            for u in outs.chain(ins) {
                if comp[u as usize] == u32::MAX {
                    comp[u as usize] = c;
                    queue.push_back(u);
                }
            }
        }
        out.push(members);
    }
    out
}

/// Splits `graph` into subgraphs of at most `max_nodes * 1.1` nodes and
/// assigns each query (given by its labeled node ids) to the subgraph that
/// holds most of its labels, ties to the lower subgraph index.
pub fn split_subgraphs(graph: &QuadGraph, queries: &[Vec<u32>], max_nodes: usize) -> Result<SplitOutput> {
    if max_nodes == 0 {
        return Err(GraphError::InvalidArgument("max_nodes must be at least 1".into()));
    }
    let capacity = max_nodes + max_nodes / 10;

    let mut pieces: Vec<Vec<u32>> = Vec::new();
    for members in components(graph) {
        if members.len() <= capacity {
            pieces.push(members);
        } else {
            // members are already in BFS order
            pieces.extend(members.chunks(max_nodes).map(<[u32]>::to_vec));
        }
    }
    for p in &mut pieces {
        p.sort_unstable();
    }
    pieces.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));

    let mut bins: Vec<Vec<u32>> = Vec::new();
    for piece in pieces {
        match bins.iter_mut().find(|b| b.len() + piece.len() <= capacity) {
            Some(bin) => bin.extend(piece),
            None => bins.push(piece),
        }
    }
    if bins.is_empty() {
        bins.push(Vec::new());
    }

    let n = graph.n_nodes();
    let mut bin_of = vec![0usize; n];
    let mut local_of = vec![0u32; n];
    for (b, bin) in bins.iter_mut().enumerate() {
        bin.sort_unstable();
        for (i, &v) in bin.iter().enumerate() {
            bin_of[v as usize] = b;
            local_of[v as usize] = i as u32;
        }
    }

    let mut bin_edges: Vec<Vec<Edge>> = vec![Vec::new(); bins.len()];
    for e in graph.edges() {
        let b = bin_of[e.src as usize];
        if b == bin_of[e.dst as usize] {
            bin_edges[b].push(Edge::new(local_of[e.src as usize], e.rel, local_of[e.dst as usize]));
        }
    }

    let mut bin_queries: Vec<Vec<usize>> = vec![Vec::new(); bins.len()];
    let mut dropped = 0;
    for (qi, labels) in queries.iter().enumerate() {
        let mut votes = vec![0usize; bins.len()];
        for &v in labels {
            if (v as usize) < n {
                votes[bin_of[v as usize]] += 1;
            }
        }
        // max_by_key keeps the last maximum; scan manually for lowest index
        let mut best: Option<(usize, usize)> = None;
        for (b, &c) in votes.iter().enumerate() {
            if c > 0 && best.map_or(true, |(_, bc)| c > bc) {
                best = Some((b, c));
            }
        }
        match best {
            Some((b, _)) => bin_queries[b].push(qi),
            None => dropped += 1,
        }
    }
    if dropped > 0 {
        log::warn!("split_subgraphs: dropped {dropped} queries with no labeled nodes in any subgraph");
    }

    let mut subgraphs = Vec::with_capacity(bins.len());
    for ((bin, edges), queries) in bins.into_iter().zip(bin_edges).zip(bin_queries) {
        let nodes = bin.iter().map(|&v| graph.node(v).clone()).collect();
        let sub = QuadGraph::from_parts(nodes, graph.relations().to_vec(), edges)?;
        subgraphs.push(Subgraph {
            graph: sub,
            global_ids: bin,
            queries,
        });
    }
    Ok(SplitOutput {
        subgraphs,
        dropped_queries: dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadgraph::{NodeRecord, NodeType};

    fn chain_components(sizes: &[usize]) -> QuadGraph {
        let total: usize = sizes.iter().sum();
        let nodes = (0..total as u32)
            .map(|i| NodeRecord::new(i, NodeType::Entity, format!("n{i}")))
            .collect();
        let mut edges = Vec::new();
        let mut base = 0u32;
        for &s in sizes {
            for i in 0..s as u32 - 1 {
                edges.push(Edge::new(base + i, 0, base + i + 1));
            }
            base += s as u32;
        }
        QuadGraph::build(nodes, vec!["next".into()], edges).unwrap()
    }

    #[test]
    fn small_graph_is_not_split() {
        let g = chain_components(&[4, 6]);
        let out = split_subgraphs(&g, &[vec![0, 9]], 100).unwrap();
        assert_eq!(out.subgraphs.len(), 1);
        assert_eq!(out.subgraphs[0].graph, g);
        assert_eq!(out.subgraphs[0].queries, vec![0]);
    }

    /// Exhaustive oracle: the fewest bins of capacity 66 that hold two
    /// unsplittable 60-node components is 2, and each bin holds one of them.
    #[test]
    fn two_components_of_sixty() {
        let g = chain_components(&[60, 60]);
        let out = split_subgraphs(&g, &[], 60).unwrap();
        let mut best = usize::MAX;
        for mask in 0u32..4 {
            let load = |b: u32| (0..2).filter(|&c| (mask >> c) & 1 == b).count() * 60;
            if load(0) <= 66 && load(1) <= 66 {
                best = best.min((0..2).filter(|&b| load(b) > 0).count());
            }
        }
        assert_eq!(out.subgraphs.len(), best);
        for s in &out.subgraphs {
            assert_eq!(s.graph.n_nodes(), 60);
            assert_eq!(s.graph.n_edges(), 59);
        }
    }

    #[test]
    fn query_goes_to_majority_then_lower_index() {
        let g = chain_components(&[60, 60]);
        let queries = vec![vec![0, 1, 70], vec![0, 70], vec![61, 62, 3], vec![500]];
        let out = split_subgraphs(&g, &queries, 60).unwrap();
        assert_eq!(out.subgraphs[0].queries, vec![0, 1]);
        assert_eq!(out.subgraphs[1].queries, vec![2]);
        assert_eq!(out.dropped_queries, 1);
    }

    #[test]
    fn large_component_is_chunked() {
        let g = chain_components(&[250]);
        let out = split_subgraphs(&g, &[], 100).unwrap();
        let total: usize = out.subgraphs.iter().map(|s| s.graph.n_nodes()).sum();
        assert_eq!(total, 250);
        assert!(out.subgraphs.iter().all(|s| s.graph.n_nodes() <= 110));
        let edges: usize = out.subgraphs.iter().map(|s| s.graph.n_edges()).sum();
        assert!(edges <= g.n_edges());
        // local ids map back to contiguous chain neighbours
        for s in &out.subgraphs {
            for e in s.graph.edges() {
                assert_eq!(s.global_ids[e.dst as usize], s.global_ids[e.src as usize] + 1);
            }
        }
    }

    #[test]
    fn zero_capacity_is_rejected() {
        assert!(split_subgraphs(&QuadGraph::empty(), &[], 0).is_err());
    }
}
