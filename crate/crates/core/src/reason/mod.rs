//! Multi-type retrieval, prompting, answer parsing and QA metrics.

mod llm;
mod metrics;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Real;
use crate::quadgraph::{NodeType, QuadGraph};

pub use llm::{answer_all, call_llm, LlmClient, LlmConfig, API_KEY_ENV};
pub use metrics::{
    evaluate_run, load_dataset, normalize_answer, read_dataset, score_answer, EvalExample, Metrics,
};

#[derive(Debug, Error)]
pub enum ReasonError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("score vector has {got} entries but the graph has {expected} nodes")]
    ScoreLength { expected: usize, got: usize },
    #[error("retrieval references node {0}, which is not in the graph")]
    UnknownNode(u32),
    #[error("no LLM endpoint configured")]
    NoEndpoint,
    #[error("LLM request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("LLM endpoint returned HTTP {status} after {attempts} attempt(s): {body}")]
    Status { status: u16, attempts: u32, body: String },
    #[error("LLM transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("malformed LLM response: {0}")]
    Malformed(String),
    #[error("query ids do not line up: {0}")]
    QueryMismatch(String),
    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ReasonError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: u32,
    pub score: f64,
}

/// Top-k nodes of each type, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub attribute: Vec<Scored>,
    pub entity: Vec<Scored>,
    pub document: Vec<Scored>,
    pub community: Vec<Scored>,
}

impl RetrievalResult {
    pub fn of(&self, kind: NodeType) -> &[Scored] {
        match kind {
            NodeType::Attribute => &self.attribute,
            NodeType::Entity => &self.entity,
            NodeType::Document => &self.document,
            NodeType::Community => &self.community,
        }
    }

    fn of_mut(&mut self, kind: NodeType) -> &mut Vec<Scored> {
        match kind {
            NodeType::Attribute => &mut self.attribute,
            NodeType::Entity => &mut self.entity,
            NodeType::Document => &mut self.document,
            NodeType::Community => &mut self.community,
        }
    }

    pub fn ids(&self, kind: NodeType) -> Vec<u32> {
        self.of(kind).iter().map(|s| s.id).collect()
    }

    /// Every retrieved id, all types.
    pub fn all_ids(&self) -> impl Iterator<Item = u32> + '_ {
        NodeType::ALL.into_iter().flat_map(move |t| self.of(t).iter().map(|s| s.id))
    }
}

/// Descending score, then ascending id.
fn rank_order(a: &Scored, b: &Scored) -> Ordering {
    b.score.total_cmp(&a.score).then(a.id.cmp(&b.id))
}

/// Independent top-k per node type; ties go to the lower node id.
pub fn topk_per_type<T: Real>(scores: &[T], graph: &QuadGraph, k: usize) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(ReasonError::ZeroK);
    }
    if scores.len() != graph.n_nodes() {
        return Err(ReasonError::ScoreLength {
            expected: graph.n_nodes(),
            got: scores.len(),
        });
    }
    let mut out = RetrievalResult::default();
    for kind in NodeType::ALL {
        let mut all: Vec<Scored> = graph
            .nodes_of_type(kind)
            .map(|id| Scored {
                id,
                score: scores[id as usize].as_f64(),
            })
            .collect();
        if all.len() > k {
            all.select_nth_unstable_by(k - 1, rank_order);
            all.truncate(k);
        }
        all.sort_by(rank_order);
        *out.of_mut(kind) = all;
    }
    Ok(out)
}

pub const PROMPT_PREAMBLE: &str = "As an advanced reading comprehension assistant, your task is to analyze text passages and corresponding questions meticulously. Your response start after \"Thought: \", where you will methodically break down the reasoning process, illustrating how you arrive at conclusions. Conclude with \"Answer: \" to present a concise, definitive response, devoid of additional elaborations.'";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub text: String,
    pub documents: Vec<String>,
    pub entities: Vec<String>,
}

/// Fills the reasoning template with the retrieved document and entity texts.
pub fn build_prompt(query: &str, retrieval: &RetrievalResult, graph: &QuadGraph) -> Result<PromptBundle> {
    build_prompt_with(query, retrieval, graph, false)
}

/// As [`build_prompt`]; `extra_sections` also renders the attribute and
/// community retrievals between the entity and question sections.
pub fn build_prompt_with(
    query: &str,
    retrieval: &RetrievalResult,
    graph: &QuadGraph,
    extra_sections: bool,
) -> Result<PromptBundle> {
    let texts = |kind| -> Result<Vec<String>> {
        retrieval
            .of(kind)
            .iter()
            .map(|s| {
                if (s.id as usize) < graph.n_nodes() {
                    Ok(graph.node(s.id).text.clone())
                } else {
                    Err(ReasonError::UnknownNode(s.id))
                }
            })
            .collect()
    };
    let documents = texts(NodeType::Document)?;
    let entities = texts(NodeType::Entity)?;

    let mut text = String::from(PROMPT_PREAMBLE);
    text.push_str("\n\n");
    let mut section = |title: &str, items: &[String]| {
        text.push_str("### ");
        text.push_str(title);
        text.push_str(":\n");
        text.push_str(&items.join("\n"));
        text.push_str("\n\n");
    };
    section("Document", &documents);
    section("Entity", &entities);
    if extra_sections {
        section("Attribute", &texts(NodeType::Attribute)?);
        section("Community", &texts(NodeType::Community)?);
    }
    text.push_str("### Question:\n");
    text.push_str(query);
    text.push_str("\nThought: ");
    Ok(PromptBundle {
        text,
        documents,
        entities,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedAnswer {
    pub text: String,
    /// False when the output had no "Answer:" marker.
    pub parsed: bool,
}

pub fn parse_answer(raw: &str) -> ParsedAnswer {
    match raw.rfind("Answer:") {
        Some(i) => ParsedAnswer {
            text: raw[i + "Answer:".len()..].trim().to_string(),
            parsed: true,
        },
        None => ParsedAnswer {
            text: raw.trim().to_string(),
            parsed: false,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub query_id: String,
    pub raw: String,
    pub answer: String,
    pub parsed: bool,
    pub latency_s: f64,
}

impl AnswerRecord {
    pub fn new(query_id: impl Into<String>, raw: String, latency_s: f64) -> Self {
        let p = parse_answer(&raw);
        Self {
            query_id: query_id.into(),
            raw,
            answer: p.text,
            parsed: p.parsed,
            latency_s,
        }
    }
}
