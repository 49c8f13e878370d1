//! Operator surface: corpus runs, transcript files, cost reports and the
//! command line.

pub mod cli;
mod corpus;
mod report;
mod transcripts;

use thiserror::Error;

pub use corpus::{demo_corpus, load_corpus, parse_corpus, run_corpus, CorpusItem, RunConfig};
pub use report::{cost_report, CostReport, GroupSummary, PriceSheet};
pub use transcripts::{
    read_transcripts, read_transcripts_from, write_transcripts, write_transcripts_to,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("line {line}: duplicate corpus id `{id}`")]
    DuplicateId { id: String, line: usize },
    #[error("corpus item `{id}`: {message}")]
    InvalidItem { id: String, message: String },
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid price sheet: {0}")]
    InvalidPrices(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
