use std::fs::OpenOptions;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::RunConfig;

/// What one subcommand did, written as a single JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub started_at: String,
    pub wall_time_s: f64,
    pub config: RunConfig,
    /// Command-specific output: metrics, loss history, plan statistics...
    pub result: Value,
    pub warnings: Vec<String>,
}

/// Writes `report` to `dir` under a timestamped name that is never reused.
pub fn write_report(report: &RunReport, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating report dir {}", dir.display()))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.6fZ");
    let body = serde_json::to_vec_pretty(report)?;
    for n in 0u32.. {
        let name = if n == 0 {
            format!("{}-{stamp}.json", report.command)
        } else {
            format!("{}-{stamp}-{n}.json", report.command)
        };
        let path = dir.join(name);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                f.write_all(&body).with_context(|| format!("writing {}", path.display()))?;
                return Ok(path);
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
    unreachable!("u32 range exhausted")
}
