//! Self-refinement of chat-model answers.
//!
//! A session asks a model for an answer, then repeatedly has the same model
//! list the answer's defects, rewrite it with that guidance and vote on
//! whether the rewrite beats the previous answer. The loop stops at the
//! first rewrite that does not win or at the iteration cap.
//!
//! * [`domain`] holds the shared value types and the session transcript.
//! * [`prompts`] renders the prompt templates.
//! * [`backend`] talks to chat-completion servers, or plays back scripts.
//! * [`engine`] runs the loop.
//! * [`harness`] runs corpora, persists transcripts and reports cost.

pub mod backend;
pub mod domain;
pub mod engine;
pub mod harness;
pub mod prompts;

pub use domain::{
    Answer, CostLedger, DefectReport, IterationRecord, PromptKind, Query, RefinementMode,
    StopReason, TokenUsage, Transcript, Vote,
};
pub use engine::{parse_vote, run_session, Engine, EngineConfig};
