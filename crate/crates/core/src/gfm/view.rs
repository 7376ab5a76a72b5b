use crate::quadgraph::{NodeType, QuadGraph};

pub fn inverse_name(name: &str) -> String {
    format!("inverse {name}")
}

/// The graph as the model sees it: every edge `(u, r, v)` also appears as
/// `(v, r + R, u)`.
///
/// Edges are stored as parallel arrays, originals first and then their
/// inverses in the same order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelView {
    kinds: Vec<NodeType>,
    relation_names: Vec<String>,
    pub(crate) src: Vec<u32>,
    pub(crate) rel: Vec<u32>,
    pub(crate) dst: Vec<u32>,
}

pub fn augment_with_inverses(graph: &QuadGraph) -> ModelView {
    let r = graph.n_relations() as u32;
    let mut relation_names: Vec<String> = graph.relations().iter().map(|x| x.name.clone()).collect();
    relation_names.extend(graph.relations().iter().map(|x| inverse_name(&x.name)));
    let edges = graph.edges();
    let m = edges.len();
    let (mut src, mut rel, mut dst) = (Vec::with_capacity(2 * m), Vec::with_capacity(2 * m), Vec::with_capacity(2 * m));
    for e in edges {
        src.push(e.src);
        rel.push(e.rel);
        dst.push(e.dst);
    }
    for e in edges {
        src.push(e.dst);
        rel.push(e.rel + r);
        dst.push(e.src);
    }
    ModelView {
        kinds: graph.nodes().iter().map(|n| n.kind).collect(),
        relation_names,
        src,
        rel,
        dst,
    }
}

impl ModelView {
    pub fn n_nodes(&self) -> usize {
        self.kinds.len()
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    pub fn kinds(&self) -> &[NodeType] {
        &self.kinds
    }

    /// `(src, rel, dst)` of view edge `e`.
    pub fn edge(&self, e: usize) -> (u32, u32, u32) {
        (self.src[e], self.rel[e], self.dst[e])
    }

    pub fn in_degree(&self, v: u32) -> usize {
        self.dst.iter().filter(|&&x| x == v).count()
    }
}
