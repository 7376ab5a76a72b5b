//! Importers for graph exports produced by external graph constructors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::{Edge, GraphError, NodeRecord, NodeType, QuadGraph, Result, INCLUDED_IN};

#[derive(Deserialize)]
struct TripleLine {
    h: String,
    r: String,
    t: String,
}

#[derive(Deserialize)]
struct DocLine {
    id: String,
    #[serde(default)]
    title: String,
    text: String,
}

#[derive(Deserialize)]
struct LinkLine {
    entity: String,
    doc_id: String,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum LayeredLine {
    Node { layer: String, id: String, text: String },
    Edge { src: String, rel: String, dst: String },
}

/// Parses a JSONL stream, skipping blank lines. Line numbers are 1-based.
fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead, file: &str) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| GraphError::Parse {
            file: file.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, value));
    }
    Ok(out)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// Text stored on a document node: title and body separated by a newline.
fn document_text(title: &str, text: &str) -> String {
    if title.trim().is_empty() {
        text.to_string()
    } else {
        format!("{title}\n{text}")
    }
}

/// Knowledge-graph triples plus a document corpus and entity-to-document links.
pub fn ingest_kg_docs(triple_file: &Path, doc_file: &Path, link_file: &Path) -> Result<QuadGraph> {
    ingest_kg_docs_from(open(triple_file)?, open(doc_file)?, open(link_file)?)
}

pub fn ingest_kg_docs_from(triples: impl BufRead, docs: impl BufRead, links: impl BufRead) -> Result<QuadGraph> {
    let triples: Vec<(usize, TripleLine)> = read_jsonl(triples, "triples")?;
    let docs: Vec<(usize, DocLine)> = read_jsonl(docs, "documents")?;
    let links: Vec<(usize, LinkLine)> = read_jsonl(links, "links")?;

    let mut nodes = Vec::new();
    let mut entity_ids: HashMap<String, u32> = HashMap::new();
    let mut relations: Vec<String> = Vec::new();
    let mut relation_ids: HashMap<String, u32> = HashMap::new();
    let mut raw_edges = Vec::new();

    let mut entity = |name: &str, nodes: &mut Vec<NodeRecord>| -> u32 {
        let folded = name.to_lowercase();
        *entity_ids.entry(folded.clone()).or_insert_with(|| {
            let id = nodes.len() as u32;
            nodes.push(NodeRecord::new(id, NodeType::Entity, name).with_key(folded));
            id
        })
    };

    for (line, t) in &triples {
        if t.h.trim().is_empty() || t.t.trim().is_empty() || t.r.trim().is_empty() {
            return Err(GraphError::Parse {
                file: "triples".into(),
                line: *line,
                message: "empty head, relation or tail".into(),
            });
        }
        let h = entity(&t.h, &mut nodes);
        let tail = entity(&t.t, &mut nodes);
        let next = relations.len() as u32;
        let rel = *relation_ids.entry(t.r.clone()).or_insert_with(|| {
            relations.push(t.r.clone());
            next
        });
        raw_edges.push(Edge::new(h, rel, tail));
    }

    let mut doc_ids: HashMap<&str, u32> = HashMap::new();
    for (line, d) in &docs {
        let id = nodes.len() as u32;
        if doc_ids.insert(d.id.as_str(), id).is_some() {
            return Err(GraphError::Parse {
                file: "documents".into(),
                line: *line,
                message: format!("duplicate document id {:?}", d.id),
            });
        }
        nodes.push(NodeRecord::new(id, NodeType::Document, document_text(&d.title, &d.text)).with_key(d.id.clone()));
    }

    let included_in = match relations.iter().position(|r| r == INCLUDED_IN) {
        Some(i) => i as u32,
        None => {
            relations.push(INCLUDED_IN.to_string());
            relations.len() as u32 - 1
        }
    };
    for (_, l) in &links {
        let e = *entity_ids
            .get(&l.entity.to_lowercase())
            .ok_or_else(|| GraphError::UnknownEntity(l.entity.clone()))?;
        let d = *doc_ids
            .get(l.doc_id.as_str())
            .ok_or_else(|| GraphError::UnknownDocument(l.doc_id.clone()))?;
        raw_edges.push(Edge::new(e, included_in, d));
    }

    QuadGraph::build(nodes, relations, raw_edges)
}

/// Layered JSONL export carrying all four node types.
pub fn ingest_quad_layers(layered_file: &Path) -> Result<QuadGraph> {
    ingest_quad_layers_from(open(layered_file)?)
}

pub fn ingest_quad_layers_from(reader: impl BufRead) -> Result<QuadGraph> {
    let lines: Vec<(usize, LayeredLine)> = read_jsonl(reader, "layered")?;
    let mut nodes = Vec::new();
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut pending = Vec::new();
    for (line, rec) in lines {
        match rec {
            LayeredLine::Node { layer, id, text } => {
                let kind = NodeType::parse(&layer).ok_or(GraphError::UnknownLayer(layer))?;
                let nid = nodes.len() as u32;
                if ids.insert(id.clone(), nid).is_some() {
                    return Err(GraphError::Parse {
                        file: "layered".into(),
                        line,
                        message: format!("duplicate node id {id:?}"),
                    });
                }
                nodes.push(NodeRecord::new(nid, kind, text).with_key(id));
            }
            LayeredLine::Edge { src, rel, dst } => pending.push((src, rel, dst)),
        }
    }

    // first-use order; build() appends whichever reserved names never appear
    let mut relations: Vec<String> = Vec::new();
    let mut rel_ids: HashMap<String, u32> = HashMap::new();
    let mut edges = Vec::with_capacity(pending.len());
    for (src, rel, dst) in pending {
        let s = *ids.get(&src).ok_or_else(|| GraphError::UnknownNode(src.clone()))?;
        let d = *ids.get(&dst).ok_or_else(|| GraphError::UnknownNode(dst.clone()))?;
        let next = relations.len() as u32;
        let r = *rel_ids.entry(rel.clone()).or_insert_with(|| {
            relations.push(rel);
            next
        });
        edges.push(Edge::new(s, r, d));
    }
    QuadGraph::build(nodes, relations, edges)
}
