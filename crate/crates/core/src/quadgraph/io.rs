//! Binary graph container.
//!
//! Layout (little-endian):
//!
//! ```text
//! "QGR1" | version: u32 | header_len: u64 | header JSON | edges: [src u32, rel u32, dst u32] * E | text blob
//! ```
//!
//! The header carries the counts, the relation table, per-node types and the
//! byte offsets of every node's text and key inside the trailing blob.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Edge, GraphError, Node, NodeType, QuadGraph, Relation, Result};

pub const GRAPH_MAGIC: &[u8; 4] = b"QGR1";
pub const GRAPH_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    n_nodes: usize,
    n_edges: usize,
    relations: Vec<Relation>,
    node_types: Vec<NodeType>,
    /// `2 * n_nodes + 1` offsets: text_0, key_0, text_1, key_1, ..., end.
    blob_offsets: Vec<u64>,
}

pub fn save_graph(graph: &QuadGraph, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_graph(graph, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<QuadGraph> {
    read_graph(&mut BufReader::new(File::open(path)?))
}

pub fn write_graph(graph: &QuadGraph, w: &mut impl Write) -> Result<()> {
    let mut blob = Vec::new();
    let mut blob_offsets = Vec::with_capacity(2 * graph.n_nodes() + 1);
    for n in graph.nodes() {
        blob_offsets.push(blob.len() as u64);
        blob.extend_from_slice(n.text.as_bytes());
        blob_offsets.push(blob.len() as u64);
        blob.extend_from_slice(n.key.as_bytes());
    }
    blob_offsets.push(blob.len() as u64);
    let header = Header {
        n_nodes: graph.n_nodes(),
        n_edges: graph.n_edges(),
        relations: graph.relations().to_vec(),
        node_types: graph.nodes().iter().map(|n| n.kind).collect(),
        blob_offsets,
    };
    let json = serde_json::to_vec(&header).map_err(|e| GraphError::Format(e.to_string()))?;

    w.write_all(GRAPH_MAGIC)?;
    w.write_all(&GRAPH_FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for e in graph.edges() {
        w.write_all(&e.src.to_le_bytes())?;
        w.write_all(&e.rel.to_le_bytes())?;
        w.write_all(&e.dst.to_le_bytes())?;
    }
    w.write_all(&blob)?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => GraphError::Truncated,
        _ => GraphError::Io(e),
    })
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_graph(r: &mut impl Read) -> Result<QuadGraph> {
    let mut magic = [0u8; 4];
    read_exact(r, &mut magic)?;
    if &magic != GRAPH_MAGIC {
        return Err(GraphError::Format(format!("bad magic bytes {magic:?}")));
    }
    let version = read_u32(r)?;
    if version != GRAPH_FORMAT_VERSION {
        return Err(GraphError::VersionMismatch {
            found: version,
            expected: GRAPH_FORMAT_VERSION,
        });
    }
    let mut len = [0u8; 8];
    read_exact(r, &mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    read_exact(r, &mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| GraphError::Format(e.to_string()))?;
    if header.node_types.len() != header.n_nodes || header.blob_offsets.len() != 2 * header.n_nodes + 1 {
        return Err(GraphError::Format("node table does not match node count".into()));
    }

    let mut edge_bytes = vec![0u8; header.n_edges * 12];
    read_exact(r, &mut edge_bytes)?;
    let word = |c: &[u8]| u32::from_le_bytes([c[0], c[1], c[2], c[3]]);
    let edges: Vec<Edge> = edge_bytes
        .chunks_exact(12)
        .map(|c| Edge::new(word(&c[0..4]), word(&c[4..8]), word(&c[8..12])))
        .collect();

    let blob_len = *header.blob_offsets.last().unwrap_or(&0) as usize;
    let mut blob = vec![0u8; blob_len];
    read_exact(r, &mut blob)?;
    let slice = |i: usize| -> Result<String> {
        let (a, b) = (header.blob_offsets[i] as usize, header.blob_offsets[i + 1] as usize);
        if a > b || b > blob.len() {
            return Err(GraphError::Format(format!("bad blob offsets at entry {i}")));
        }
        String::from_utf8(blob[a..b].to_vec()).map_err(|e| GraphError::Format(e.to_string()))
    };
    let mut nodes = Vec::with_capacity(header.n_nodes);
    for (i, &kind) in header.node_types.iter().enumerate() {
        nodes.push(Node {
            kind,
            text: slice(2 * i)?,
            key: slice(2 * i + 1)?,
        });
    }
    QuadGraph::from_parts(nodes, header.relations, edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadgraph::tests::small_graph;

    fn round_trip(g: &QuadGraph) -> QuadGraph {
        let mut buf = Vec::new();
        write_graph(g, &mut buf).unwrap();
        read_graph(&mut buf.as_slice()).unwrap()
    }

    #[test]
    fn empty_round_trip() {
        let g = QuadGraph::empty();
        assert_eq!(round_trip(&g), g);
    }

    #[test]
    fn small_round_trip_via_file() {
        let g = small_graph();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.qgr");
        save_graph(&g, &path).unwrap();
        let back = load_graph(&path).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.edges(), g.edges());
        assert_eq!(back.in_index(), g.in_index());
    }

    #[test]
    fn wrong_magic() {
        let mut buf = Vec::new();
        write_graph(&small_graph(), &mut buf).unwrap();
        buf[0] = b'X';
        assert!(matches!(read_graph(&mut buf.as_slice()), Err(GraphError::Format(_))));
    }

    #[test]
    fn version_mismatch() {
        let mut buf = Vec::new();
        write_graph(&small_graph(), &mut buf).unwrap();
        buf[4] = 9;
        assert!(matches!(
            read_graph(&mut buf.as_slice()),
            Err(GraphError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn truncated_file() {
        let mut buf = Vec::new();
        write_graph(&small_graph(), &mut buf).unwrap();
        for cut in [2, 10, buf.len() - 1] {
            assert!(matches!(read_graph(&mut &buf[..cut]), Err(GraphError::Truncated)), "cut {cut}");
        }
    }
}
