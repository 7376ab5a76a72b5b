//! Generated graphs for tests, benchmarks and the planted-path task.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::quadgraph::{Edge, NodeRecord, NodeType, QuadGraph, BELONGS_TO, HAS_ATTRIBUTE, INCLUDED_IN};

/// Random typed graph with three intra-layer relations and correctly typed
/// cross-layer edges. Every node type is present when `n_nodes >= 4`.
pub fn random_graph(n_nodes: usize, n_edges: usize, seed: u64) -> QuadGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds: Vec<NodeType> = (0..n_nodes)
        .map(|i| {
            if i < 4 {
                NodeType::ALL[i]
            } else {
                NodeType::ALL[rng.gen_range(0..4)]
            }
        })
        .collect();
    let nodes = kinds
        .iter()
        .enumerate()
        .map(|(i, &k)| NodeRecord::new(i as u32, k, format!("{} {i}", k.as_str())))
        .collect();
    let relations: Vec<String> = ["r0", "r1", "r2"].iter().map(|s| s.to_string()).collect();
    // reserved relations are appended after the three intra relations
    let (has_attr, included, belongs) = (3, 4, 5);
    let mut edges = Vec::with_capacity(n_edges);
    if n_nodes > 0 {
        for _ in 0..n_edges {
            let src = rng.gen_range(0..n_nodes as u32);
            let dst = rng.gen_range(0..n_nodes as u32);
            let cross = match (kinds[src as usize], kinds[dst as usize]) {
                (NodeType::Entity, NodeType::Attribute) => Some(has_attr),
                (NodeType::Entity, NodeType::Document) => Some(included),
                (NodeType::Entity | NodeType::Document, NodeType::Community) => Some(belongs),
                _ => None,
            };
            let rel = match cross {
                Some(r) if rng.gen_bool(0.5) => r,
                _ => rng.gen_range(0..3),
            };
            edges.push(Edge::new(src, rel, dst));
        }
    }
    QuadGraph::build(nodes, relations, edges).expect("generated graph is valid")
}

/// One query of the planted task: `seed -parent_of-> bridge -born_in-> answer`,
/// with `docs[0]` mentioning seed and bridge and `docs[1]` bridge and answer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedQuery {
    pub query_id: String,
    pub query: String,
    pub seed: u32,
    pub bridge: u32,
    pub answer: u32,
    pub answer_text: String,
    pub docs: [u32; 2],
}

impl PlantedQuery {
    /// Answer entity and both supporting documents.
    pub fn positives(&self) -> Vec<u32> {
        vec![self.answer, self.docs[0], self.docs[1]]
    }
}

#[derive(Debug, Clone)]
pub struct PlantedTask {
    pub graph: QuadGraph,
    pub queries: Vec<PlantedQuery>,
}

const SYLLABLES: [&str; 24] = [
    "ka", "lo", "mi", "ru", "te", "sa", "vo", "ni", "pe", "zu", "ha", "do", "fi", "gu", "be", "ko", "ra", "ti", "mu",
    "se", "wa", "yo", "ne", "xi",
];

fn names(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..3).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub const PLANTED_QUERIES: usize = 20;
const ENTITIES: usize = 100;
const DOCUMENTS: usize = 50;
const ATTRIBUTES: usize = 30;
const COMMUNITIES: usize = 20;

/// 200-node graph (100 entities, 50 documents, 30 attributes, 20
/// communities) with 20 queries whose answers sit two hops from their seed.
///
/// Distractor entities carry the same relation types, so the answer is
/// only identified by following the two relations from the seed.
pub fn planted_task(seed: u64) -> PlantedTask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = PLANTED_QUERIES;
    let ent_names = names(ENTITIES + ATTRIBUTES, &mut rng);
    let doc0 = ENTITIES as u32;
    let attr0 = doc0 + DOCUMENTS as u32;
    let comm0 = attr0 + ATTRIBUTES as u32;

    let mut nodes = Vec::new();
    for (i, name) in ent_names.iter().take(ENTITIES).enumerate() {
        nodes.push(NodeRecord::new(i as u32, NodeType::Entity, name.clone()));
    }
    let mut doc_texts = vec![String::new(); DOCUMENTS];
    for i in 0..q {
        let (s, b, a) = (&ent_names[3 * i], &ent_names[3 * i + 1], &ent_names[3 * i + 2]);
        doc_texts[2 * i] = format!("{s} is the parent of {b}.");
        doc_texts[2 * i + 1] = format!("{b} was born in {a}.");
    }
    for (j, t) in doc_texts.iter_mut().enumerate().skip(2 * q) {
        *t = format!("Miscellaneous notes, volume {j}.");
    }
    for (j, t) in doc_texts.into_iter().enumerate() {
        nodes.push(NodeRecord::new(doc0 + j as u32, NodeType::Document, t).with_key(format!("doc{j}")));
    }
    for j in 0..ATTRIBUTES {
        let text = format!("trait {}", ent_names[ENTITIES + j]);
        nodes.push(NodeRecord::new(attr0 + j as u32, NodeType::Attribute, text));
    }
    for j in 0..COMMUNITIES {
        nodes.push(NodeRecord::new(comm0 + j as u32, NodeType::Community, format!("cluster {j}")));
    }

    let relations: Vec<String> = ["parent_of", "born_in", "knows", "likes", "works_with"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let (parent_of, born_in) = (0u32, 1u32);
    let (has_attr, included, belongs) = (5u32, 6u32, 7u32);
    let mut edges = Vec::new();
    let mut queries = Vec::with_capacity(q);
    for i in 0..q {
        let (s, b, a) = (3 * i as u32, 3 * i as u32 + 1, 3 * i as u32 + 2);
        let (d1, d2) = (doc0 + 2 * i as u32, doc0 + 2 * i as u32 + 1);
        edges.push(Edge::new(s, parent_of, b));
        edges.push(Edge::new(b, born_in, a));
        edges.extend([Edge::new(s, included, d1), Edge::new(b, included, d1)]);
        edges.extend([Edge::new(b, included, d2), Edge::new(a, included, d2)]);
        queries.push(PlantedQuery {
            query_id: format!("q{i}"),
            query: format!("Where was the child of {} born?", ent_names[s as usize]),
            seed: s,
            bridge: b,
            answer: a,
            answer_text: ent_names[a as usize].clone(),
            docs: [d1, d2],
        });
    }
    let planted = 3 * q as u32;
    let distractors = planted..ENTITIES as u32;
    for _ in 0..20 {
        for rel in [parent_of, born_in] {
            let x = rng.gen_range(distractors.clone());
            let y = rng.gen_range(0..ENTITIES as u32);
            edges.push(Edge::new(x, rel, y));
        }
    }
    for _ in 0..150 {
        let x = rng.gen_range(0..ENTITIES as u32);
        let y = rng.gen_range(0..ENTITIES as u32);
        edges.push(Edge::new(x, rng.gen_range(2..5), y));
    }
    for x in distractors {
        let d = doc0 + rng.gen_range(2 * q as u32..DOCUMENTS as u32);
        edges.push(Edge::new(x, included, d));
    }
    for x in 0..ENTITIES as u32 {
        edges.push(Edge::new(x, has_attr, attr0 + rng.gen_range(0..ATTRIBUTES as u32)));
        if rng.gen_bool(0.3) {
            edges.push(Edge::new(x, belongs, comm0 + rng.gen_range(0..COMMUNITIES as u32)));
        }
    }
    for j in 0..DOCUMENTS as u32 {
        edges.push(Edge::new(doc0 + j, belongs, comm0 + rng.gen_range(0..COMMUNITIES as u32)));
    }
    let graph = QuadGraph::build(nodes, relations, edges).expect("planted graph is valid");
    debug_assert_eq!(graph.relation_id(INCLUDED_IN), Some(included));
    debug_assert_eq!(graph.relation_id(HAS_ATTRIBUTE), Some(has_attr));
    debug_assert_eq!(graph.relation_id(BELONGS_TO), Some(belongs));
    PlantedTask { graph, queries }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_graph_has_all_types() {
        let g = random_graph(30, 60, 1);
        let s = g.stats();
        assert_eq!(s.nodes, 30);
        assert_eq!(s.edges, 60);
        assert!(NodeType::ALL.iter().all(|&k| s.count(k) > 0));
        assert_eq!(g, random_graph(30, 60, 1));
    }

    #[test]
    fn planted_task_shape() {
        let t = planted_task(0);
        let s = t.graph.stats();
        assert_eq!((s.nodes, s.entities, s.documents, s.attributes, s.communities), (200, 100, 50, 30, 20));
        assert_eq!(t.queries.len(), 20);
        for q in &t.queries {
            let g = &t.graph;
            assert!(q.query.contains(&g.node(q.seed).text));
            assert!(g.edges().contains(&Edge::new(q.seed, 0, q.bridge)));
            assert!(g.edges().contains(&Edge::new(q.bridge, 1, q.answer)));
            // the seed has exactly one parent_of edge
            let out = g.out_index().edges_of(q.seed);
            assert_eq!(out.iter().filter(|&&e| g.edges()[e as usize].rel == 0).count(), 1);
            assert_eq!(g.kind(q.docs[0]), NodeType::Document);
        }
    }
}
