//! Training manifest: one JSON object per line,
//! `{"query_id", "query", "graph", "positives", "seeds"?}`.
//!
//! Graph paths are resolved relative to the manifest's directory.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{QuerySample, Result, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestLine {
    pub query_id: String,
    pub query: String,
    pub graph: PathBuf,
    pub positives: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub samples: Vec<QuerySample>,
    /// Distinct graph files in first-seen order; `QuerySample::graph` indexes this list.
    pub graphs: Vec<PathBuf>,
}

pub fn read_manifest(reader: impl BufRead, base: &Path) -> Result<Manifest> {
    let mut graphs = Vec::new();
    let mut index: HashMap<PathBuf, usize> = HashMap::new();
    let mut samples = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestLine = serde_json::from_str(&line).map_err(|e| TrainError::Manifest {
            line: i + 1,
            message: e.to_string(),
        })?;
        let path = base.join(&rec.graph);
        let graph = *index.entry(path.clone()).or_insert_with(|| {
            graphs.push(path);
            graphs.len() - 1
        });
        samples.push(QuerySample {
            query_id: rec.query_id,
            query: rec.query,
            graph,
            seeds: rec.seeds,
            positives: rec.positives,
        });
    }
    Ok(Manifest { samples, graphs })
}

pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let base = path.parent().unwrap_or(Path::new("."));
    read_manifest(BufReader::new(File::open(path)?), base)
}
