use std::collections::HashSet;
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::backend::ChatBackend;
use crate::domain::{Query, RefinementMode, Transcript};
use crate::engine::{Engine, EngineConfig};

const DEMO_CORPUS: &str = include_str!("../../data/demo_corpus.jsonl");

/// One question of an experiment corpus. The reference answer is an
/// annotation for human review and is never sent to a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusItem {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_answer: Option<String>,
}

impl CorpusItem {
    pub fn query(&self, max_iterations: u32) -> Result<Query, HarnessError> {
        Query::new(self.id.clone(), self.question.trim(), max_iterations).map_err(|e| {
            HarnessError::InvalidItem {
                id: self.id.clone(),
                message: e.to_string(),
            }
        })
    }
}

/// Parses a line-delimited corpus. Blank lines are skipped; ids must be
/// unique.
pub fn parse_corpus(text: &str) -> Result<Vec<CorpusItem>, HarnessError> {
    let mut seen = HashSet::new();
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let item: CorpusItem = serde_json::from_str(line).map_err(|e| HarnessError::Schema {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(item.id.clone()) {
            return Err(HarnessError::DuplicateId {
                id: item.id,
                line: line_no,
            });
        }
        items.push(item);
    }
    Ok(items)
}

pub fn load_corpus(path: &Path) -> Result<Vec<CorpusItem>, HarnessError> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

/// The five bundled demonstration questions with their reference answers.
pub fn demo_corpus() -> Vec<CorpusItem> {
    parse_corpus(DEMO_CORPUS).expect("bundled corpus parses")
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub modes: Vec<RefinementMode>,
    pub max_iterations: u32,
    pub concurrency: usize,
    pub engine: EngineConfig,
}

impl RunConfig {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            modes: vec![RefinementMode::Full],
            max_iterations: 3,
            concurrency: 1,
            engine: EngineConfig::new(model),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.concurrency == 0 {
            return Err(HarnessError::InvalidConfig(
                "concurrency limit must be >= 1".into(),
            ));
        }
        if self.modes.is_empty() {
            return Err(HarnessError::InvalidConfig(
                "at least one mode is required".into(),
            ));
        }
        Ok(())
    }
}

/// Runs every (item, mode) pair, item-major. Up to `concurrency` sessions
/// are in flight at once; the output order always follows the corpus.
/// A failing session is recorded in its transcript, not returned as an
/// error.
pub async fn run_corpus<B: ChatBackend>(
    corpus: &[CorpusItem],
    config: &RunConfig,
    backend: B,
) -> Result<Vec<Transcript>, HarnessError> {
    if corpus.is_empty() {
        return Err(HarnessError::EmptyCorpus);
    }
    config.validate()?;
    let mut jobs = Vec::with_capacity(corpus.len() * config.modes.len());
    for item in corpus {
        let query = item.query(config.max_iterations)?;
        for &mode in &config.modes {
            jobs.push((query.clone(), mode));
        }
    }
    let engine = Engine::new(backend, config.engine.clone());
    let engine = &engine;
    let transcripts = stream::iter(jobs)
        .map(|(query, mode)| async move { engine.run_session(&query, mode).await })
        .buffered(config.concurrency)
        .collect()
        .await;
    Ok(transcripts)
}
