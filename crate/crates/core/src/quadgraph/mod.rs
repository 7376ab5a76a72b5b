//! Four-layer typed knowledge graph.
//!
//! Nodes live in one of four layers (attribute, entity, document, community).
//! Relations are either ordinary intra-layer predicates or one of the three
//! reserved cross-layer links, whose endpoint types are checked at build time.

mod ingest;
mod io;
mod split;

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use ingest::{ingest_kg_docs, ingest_kg_docs_from, ingest_quad_layers, ingest_quad_layers_from};
pub use io::{load_graph, read_graph, save_graph, write_graph, GRAPH_FORMAT_VERSION, GRAPH_MAGIC};
pub use split::{split_subgraphs, SplitOutput, Subgraph};

pub const HAS_ATTRIBUTE: &str = "has_attribute";
pub const INCLUDED_IN: &str = "included_in";
pub const BELONGS_TO: &str = "belongs_to";

/// Reserved cross-layer relation names, in the order they are appended.
pub const RESERVED_RELATIONS: [&str; 3] = [HAS_ATTRIBUTE, INCLUDED_IN, BELONGS_TO];

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("duplicate node id {0}")]
    DuplicateNodeId(u32),
    #[error("node ids are not dense: expected {expected} nodes numbered 0..{expected}, found id {found}")]
    SparseNodeIds { expected: usize, found: u32 },
    #[error("duplicate relation name {0:?}")]
    DuplicateRelation(String),
    #[error("relation ids are not dense: found id {0}")]
    SparseRelationIds(u32),
    #[error("edge {edge}: node {node} out of range ({n_nodes} nodes)")]
    NodeOutOfRange { edge: usize, node: u32, n_nodes: usize },
    #[error("edge {edge}: relation {rel} out of range ({n_relations} relations)")]
    RelationOutOfRange { edge: usize, rel: u32, n_relations: usize },
    #[error("edge {edge}: {relation} cannot link {src:?} -> {dst:?}")]
    CrossLayerTyping {
        edge: usize,
        relation: String,
        src: NodeType,
        dst: NodeType,
    },
    #[error("document node {0} has empty text")]
    EmptyDocument(u32),
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },
    #[error("link references unknown entity {0:?}")]
    UnknownEntity(String),
    #[error("link references unknown document {0:?}")]
    UnknownDocument(String),
    #[error("unknown layer tag {0:?}")]
    UnknownLayer(String),
    #[error("edge references unknown node {0:?}")]
    UnknownNode(String),
    #[error("graph file format error: {0}")]
    Format(String),
    #[error("graph file version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("graph file is truncated")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeType {
    Attribute,
    Entity,
    Document,
    Community,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [
        NodeType::Attribute,
        NodeType::Entity,
        NodeType::Document,
        NodeType::Community,
    ];

    /// Dense index used for per-type tables.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NodeType::Attribute => "attribute",
            NodeType::Entity => "entity",
            NodeType::Document => "document",
            NodeType::Community => "community",
        }
    }

    pub fn parse(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == tag)
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationKind {
    Intra,
    CrossLayer,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: u32,
    pub name: String,
    pub kind: RelationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub kind: NodeType,
    pub text: String,
    /// External identifier (document id, entity surface form, layered-file id).
    pub key: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Edge {
    pub src: u32,
    pub rel: u32,
    pub dst: u32,
}

impl Edge {
    pub fn new(src: u32, rel: u32, dst: u32) -> Self {
        Self { src, rel, dst }
    }
}

/// Input record for [`QuadGraph::build`].
#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub id: u32,
    pub kind: NodeType,
    pub text: String,
    pub key: Option<String>,
}

impl NodeRecord {
    pub fn new(id: u32, kind: NodeType, text: impl Into<String>) -> Self {
        Self {
            id,
            kind,
            text: text.into(),
            key: None,
        }
    }

    pub fn with_key(mut self, key: impl Into<String>) -> Self {
        self.key = Some(key.into());
        self
    }
}

/// Compressed edge index: edge ids grouped by one endpoint.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    edge_ids: Vec<u32>,
}

impl Adjacency {
    fn build(n_nodes: usize, edges: &[Edge], key: impl Fn(&Edge) -> u32) -> Self {
        let mut offsets = vec![0usize; n_nodes + 1];
        for e in edges {
            offsets[key(e) as usize + 1] += 1;
        }
        for i in 0..n_nodes {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut edge_ids = vec![0u32; edges.len()];
        // ascending edge id within each bucket
        for (i, e) in edges.iter().enumerate() {
            let slot = &mut cursor[key(e) as usize];
            edge_ids[*slot] = i as u32;
            *slot += 1;
        }
        Self { offsets, edge_ids }
    }

    /// Edge ids incident on `node`, ascending.
    pub fn edges_of(&self, node: u32) -> &[u32] {
        let n = node as usize;
        &self.edge_ids[self.offsets[n]..self.offsets[n + 1]]
    }

    pub fn degree(&self, node: u32) -> usize {
        let n = node as usize;
        self.offsets[n + 1] - self.offsets[n]
    }

    pub fn edge_ids(&self) -> &[u32] {
        &self.edge_ids
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub attributes: usize,
    pub entities: usize,
    pub documents: usize,
    pub communities: usize,
    pub relations: usize,
    pub edges: usize,
    pub cross_layer_edges: usize,
}

impl GraphStats {
    pub fn count(&self, kind: NodeType) -> usize {
        match kind {
            NodeType::Attribute => self.attributes,
            NodeType::Entity => self.entities,
            NodeType::Document => self.documents,
            NodeType::Community => self.communities,
        }
    }
}

/// Validated, immutable four-layer graph with forward and reverse edge indices.
#[derive(Debug, Clone)]
pub struct QuadGraph {
    nodes: Vec<Node>,
    relations: Vec<Relation>,
    edges: Vec<Edge>,
    out_index: Adjacency,
    in_index: Adjacency,
}

impl PartialEq for QuadGraph {
    fn eq(&self, other: &Self) -> bool {
        // indices are derived from the edge list
        self.nodes == other.nodes && self.relations == other.relations && self.edges == other.edges
    }
}

fn cross_layer_allowed(relation: &str, src: NodeType, dst: NodeType) -> Option<bool> {
    use NodeType::*;
    match relation {
        HAS_ATTRIBUTE => Some(src == Entity && dst == Attribute),
        INCLUDED_IN => Some(src == Entity && dst == Document),
        BELONGS_TO => Some(matches!(src, Entity | Document) && dst == Community),
        _ => None,
    }
}

fn relation_kind(name: &str) -> RelationKind {
    if RESERVED_RELATIONS.contains(&name) {
        RelationKind::CrossLayer
    } else {
        RelationKind::Intra
    }
}

impl QuadGraph {
    /// Validates the inputs and builds both adjacency indices.
    ///
    /// Node ids must be a permutation of `0..nodes.len()`; relation names must
    /// be unique and are numbered in the given order. Any reserved cross-layer
    /// relation that is missing gets appended.
    pub fn build(nodes: Vec<NodeRecord>, relations: Vec<String>, edges: Vec<Edge>) -> Result<Self> {
        let n = nodes.len();
        let mut slots: Vec<Option<Node>> = vec![None; n];
        for rec in nodes {
            let idx = rec.id as usize;
            if idx >= n {
                return Err(GraphError::SparseNodeIds {
                    expected: n,
                    found: rec.id,
                });
            }
            if slots[idx].is_some() {
                return Err(GraphError::DuplicateNodeId(rec.id));
            }
            if rec.kind == NodeType::Document && rec.text.trim().is_empty() {
                return Err(GraphError::EmptyDocument(rec.id));
            }
            let key = rec.key.unwrap_or_else(|| rec.id.to_string());
            slots[idx] = Some(Node {
                kind: rec.kind,
                text: rec.text,
                key,
            });
        }
        // every slot is filled: n records, ids < n, no duplicates
        let nodes: Vec<Node> = slots.into_iter().map(|s| s.expect("dense ids")).collect();

        let mut seen = HashSet::new();
        let mut table = Vec::with_capacity(relations.len() + RESERVED_RELATIONS.len());
        for name in relations {
            if !seen.insert(name.clone()) {
                return Err(GraphError::DuplicateRelation(name));
            }
            table.push(Relation {
                id: table.len() as u32,
                kind: relation_kind(&name),
                name,
            });
        }
        for name in RESERVED_RELATIONS {
            if seen.insert(name.to_string()) {
                table.push(Relation {
                    id: table.len() as u32,
                    name: name.to_string(),
                    kind: RelationKind::CrossLayer,
                });
            }
        }

        Self::from_parts(nodes, table, edges)
    }

    /// Builds from an already-numbered relation table (ids must equal positions).
    pub(crate) fn from_parts(nodes: Vec<Node>, relations: Vec<Relation>, edges: Vec<Edge>) -> Result<Self> {
        for (i, r) in relations.iter().enumerate() {
            if r.id as usize != i {
                return Err(GraphError::SparseRelationIds(r.id));
            }
        }
        let n = nodes.len();
        for (i, e) in edges.iter().enumerate() {
            for node in [e.src, e.dst] {
                if node as usize >= n {
                    return Err(GraphError::NodeOutOfRange {
                        edge: i,
                        node,
                        n_nodes: n,
                    });
                }
            }
            let Some(rel) = relations.get(e.rel as usize) else {
                return Err(GraphError::RelationOutOfRange {
                    edge: i,
                    rel: e.rel,
                    n_relations: relations.len(),
                });
            };
            let (src, dst) = (nodes[e.src as usize].kind, nodes[e.dst as usize].kind);
            if let Some(false) = cross_layer_allowed(&rel.name, src, dst) {
                return Err(GraphError::CrossLayerTyping {
                    edge: i,
                    relation: rel.name.clone(),
                    src,
                    dst,
                });
            }
        }
        let out_index = Adjacency::build(n, &edges, |e| e.src);
        let in_index = Adjacency::build(n, &edges, |e| e.dst);
        Ok(Self {
            nodes,
            relations,
            edges,
            out_index,
            in_index,
        })
    }

    pub fn empty() -> Self {
        Self::build(Vec::new(), Vec::new(), Vec::new()).expect("empty graph is valid")
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: u32) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn kind(&self, id: u32) -> NodeType {
        self.nodes[id as usize].kind
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation_id(&self, name: &str) -> Option<u32> {
        self.relations.iter().find(|r| r.name == name).map(|r| r.id)
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edges grouped by source node.
    pub fn out_index(&self) -> &Adjacency {
        &self.out_index
    }

    /// Edges grouped by destination node.
    pub fn in_index(&self) -> &Adjacency {
        &self.in_index
    }

    pub fn is_cross_layer(&self, e: &Edge) -> bool {
        self.relations[e.rel as usize].kind == RelationKind::CrossLayer
    }

    /// Node ids of one type, ascending.
    pub fn nodes_of_type(&self, kind: NodeType) -> impl Iterator<Item = u32> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(move |(_, n)| n.kind == kind)
            .map(|(i, _)| i as u32)
    }

    /// Map from external key to node id. Later duplicates shadow earlier ones.
    pub fn key_index(&self) -> HashMap<&str, u32> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.key.as_str(), i as u32))
            .collect()
    }

    pub fn stats(&self) -> GraphStats {
        graph_stats(self)
    }
}

pub fn graph_stats(graph: &QuadGraph) -> GraphStats {
    let mut stats = GraphStats {
        nodes: graph.n_nodes(),
        relations: graph.n_relations(),
        edges: graph.n_edges(),
        ..Default::default()
    };
    for n in graph.nodes() {
        match n.kind {
            NodeType::Attribute => stats.attributes += 1,
            NodeType::Entity => stats.entities += 1,
            NodeType::Document => stats.documents += 1,
            NodeType::Community => stats.communities += 1,
        }
    }
    stats.cross_layer_edges = graph.edges().iter().filter(|e| graph.is_cross_layer(e)).count();
    stats
}
