use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AnswerRecord, ReasonError, Result, RetrievalResult};
use crate::quadgraph::NodeType;

/// One labeled evaluation question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalExample {
    pub query_id: String,
    pub query: String,
    pub answers: Vec<String>,
    pub supporting_docs: Vec<u32>,
    /// Labeled evidence nodes of any type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evidence: Option<Vec<u32>>,
}

pub fn read_dataset(reader: impl Read) -> Result<Vec<EvalExample>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| ReasonError::Dataset { line: i + 1, message };
        let ex: EvalExample = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        if ex.answers.is_empty() {
            return Err(err(format!("query {} has no gold answers", ex.query_id)));
        }
        if !seen.insert(ex.query_id.clone()) {
            return Err(err(format!("duplicate query id {}", ex.query_id)));
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<EvalExample>> {
    read_dataset(File::open(path)?)
}

/// Lowercase, drop punctuation and the articles a/an/the, collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn token_f1(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    if p.is_empty() || g.is_empty() {
        return f64::from(u8::from(p == g));
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &g {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &p {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / p.len() as f64;
    let recall = common as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// `(EM, F1)` against the best-matching gold answer.
pub fn score_answer(pred: &str, golds: &[String]) -> (f64, f64) {
    let p = normalize_answer(pred);
    golds.iter().fold((0.0f64, 0.0f64), |(em, f1), g| {
        let g = normalize_answer(g);
        (em.max(f64::from(u8::from(p == g))), f1.max(token_f1(&p, &g)))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub queries: usize,
    pub em: f64,
    pub f1: f64,
    /// Document recall at each requested cutoff.
    pub recall: BTreeMap<usize, f64>,
    /// Mean share of labeled evidence nodes retrieved; `None` when nothing is labeled.
    pub evidence_recall: Option<f64>,
    pub unparsed_answers: usize,
}

impl Metrics {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.recall.get(&k).copied()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Aggregates answer quality and retrieval recall in dataset order.
///
/// Queries without supporting documents are left out of the recall means.
/// R@2 and R@5 are always reported, alongside any cutoffs in `k_list`.
pub fn evaluate_run(
    dataset: &[EvalExample],
    retrievals: &[(String, RetrievalResult)],
    answers: &[AnswerRecord],
    k_list: &[usize],
) -> Result<Metrics> {
    let by_id: HashMap<&str, &RetrievalResult> = retrievals.iter().map(|(q, r)| (q.as_str(), r)).collect();
    let answer_by_id: HashMap<&str, &AnswerRecord> = answers.iter().map(|a| (a.query_id.as_str(), a)).collect();
    let mut ks: Vec<usize> = k_list.iter().copied().chain([2, 5]).filter(|&k| k > 0).collect();
    ks.sort_unstable();
    ks.dedup();

    let (mut ems, mut f1s) = (Vec::new(), Vec::new());
    let mut recalls: BTreeMap<usize, Vec<f64>> = ks.iter().map(|&k| (k, Vec::new())).collect();
    let mut evidence = Vec::new();
    let mut unparsed = 0;
    for ex in dataset {
        let missing = |what: &str| ReasonError::QueryMismatch(format!("no {what} for query {}", ex.query_id));
        let r = by_id.get(ex.query_id.as_str()).ok_or_else(|| missing("retrieval"))?;
        let a = answer_by_id.get(ex.query_id.as_str()).ok_or_else(|| missing("answer"))?;
        let (em, f1) = score_answer(&a.answer, &ex.answers);
        ems.push(em);
        f1s.push(f1);
        unparsed += usize::from(!a.parsed);

        if !ex.supporting_docs.is_empty() {
            let gold: HashSet<u32> = ex.supporting_docs.iter().copied().collect();
            let docs = r.ids(NodeType::Document);
            for &k in &ks {
                let hit = docs.iter().take(k).filter(|d| gold.contains(d)).count();
                recalls.get_mut(&k).expect("cutoff registered").push(hit as f64 / gold.len() as f64);
            }
        }
        if let Some(ev) = ex.evidence.as_ref().filter(|e| !e.is_empty()) {
            let gold: HashSet<u32> = ev.iter().copied().collect();
            let got: HashSet<u32> = r.all_ids().collect();
            evidence.push(gold.intersection(&got).count() as f64 / gold.len() as f64);
        }
    }
    if dataset.len() != retrievals.len() || dataset.len() != answers.len() {
        return Err(ReasonError::QueryMismatch(format!(
            "{} questions, {} retrievals, {} answers",
            dataset.len(),
            retrievals.len(),
            answers.len()
        )));
    }
    Ok(Metrics {
        queries: dataset.len(),
        em: mean(&ems),
        f1: mean(&f1s),
        recall: recalls.into_iter().map(|(k, v)| (k, mean(&v))).collect(),
        evidence_recall: (!evidence.is_empty()).then(|| mean(&evidence)),
        unparsed_answers: unparsed,
    })
}
