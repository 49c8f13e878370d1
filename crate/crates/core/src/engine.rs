//! The refinement loop.
//!
//! A session asks for an initial answer, then runs rounds of defect
//! analysis, optimization and a pairwise vote. A candidate replaces the
//! incumbent only when the vote prefers it; any other verdict ends the
//! session with the incumbent. Each call is built from the question, the
//! incumbent and the current round's defect only.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatRequest};
use crate::domain::{
    is_accepted, Answer, CostLedger, DefectReport, IterationRecord, PromptKind, Query,
    RefinementMode, StopReason, TokenUsage, Transcript, Vote,
};
use crate::prompts::{self, PromptError, PromptText};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("unparseable vote reply {0:?}")]
    UnparseableVote(String),
    #[error("empty defect analysis in round {round}")]
    EmptyDefect { round: u32 },
    #[error("model returned an empty answer ({kind} call, round {round})")]
    EmptyAnswer { kind: PromptKind, round: u32 },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("vote must be present exactly when mode {0} votes")]
    VoteContract(RefinementMode),
}

/// Sampling temperature per prompt kind.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Temperatures {
    pub initial: f64,
    pub defect: f64,
    pub optimize: f64,
    pub vote: f64,
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            initial: 0.7,
            defect: 0.0,
            optimize: 0.7,
            vote: 0.0,
        }
    }
}

impl Temperatures {
    pub fn for_kind(&self, kind: PromptKind) -> f64 {
        match kind {
            PromptKind::InitialAnswer => self.initial,
            PromptKind::DefectAnalysis => self.defect,
            PromptKind::GuidedOptimization | PromptKind::BlindOptimization => self.optimize,
            PromptKind::Vote => self.vote,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub model: String,
    pub temperatures: Temperatures,
}

impl EngineConfig {
    pub fn new(model: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            temperatures: Temperatures::default(),
        }
    }
}

/// Parses a vote reply.
///
/// A reply that is exactly `0`, `1` or `2` after trimming maps directly.
/// Otherwise the reply is split on non-alphanumeric characters and must
/// contain exactly one distinct standalone label.
pub fn parse_vote(raw: &str) -> Result<Vote, EngineError> {
    let trimmed = raw.trim();
    let mut chars = trimmed.chars();
    if let (Some(c), None) = (chars.next(), chars.next()) {
        if let Some(v) = Vote::from_label(c) {
            return Ok(v);
        }
    }
    let labels: BTreeSet<Vote> = raw
        .split(|c: char| !c.is_alphanumeric())
        .filter_map(|tok| {
            let mut cs = tok.chars();
            match (cs.next(), cs.next()) {
                (Some(c), None) => Vote::from_label(c),
                _ => None,
            }
        })
        .collect();
    match labels.len() {
        1 => Ok(labels.into_iter().next().unwrap()),
        _ => Err(EngineError::UnparseableVote(raw.to_string())),
    }
}

/// Whether a round's candidate becomes the new incumbent.
pub fn accept_rule(mode: RefinementMode, vote: Option<Vote>) -> Result<bool, EngineError> {
    if mode.votes() != vote.is_some() {
        return Err(EngineError::VoteContract(mode));
    }
    Ok(is_accepted(mode, vote))
}

/// What the engine carries between rounds. Only the incumbent answer
/// survives a round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionState {
    pub query: Query,
    pub incumbent: Answer,
    pub round: u32,
    pub mode: RefinementMode,
}

impl SessionState {
    pub fn new(query: Query, initial: Answer, mode: RefinementMode) -> Self {
        Self {
            query,
            incumbent: initial,
            round: 0,
            mode,
        }
    }

    pub fn finished(&self) -> bool {
        self.round >= self.query.max_iterations()
    }
}

/// Progress notifications for callers that want to watch the loop.
#[derive(Debug, Clone, Copy)]
pub enum SessionEvent<'a> {
    Call {
        kind: PromptKind,
        round: u32,
        prompt: &'a str,
        reply: &'a str,
    },
    Decision {
        round: u32,
        vote: Option<Vote>,
        accepted: bool,
    },
}

pub type Observer<'o> = dyn FnMut(&SessionEvent<'_>) + Send + 'o;

/// Runs refinement sessions against one backend.
pub struct Engine<B> {
    backend: B,
    config: EngineConfig,
}

impl<B: ChatBackend> Engine<B> {
    pub fn new(backend: B, config: EngineConfig) -> Self {
        Self { backend, config }
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    async fn call(
        &self,
        prompt: PromptText,
        round: u32,
        ledger: &mut CostLedger,
        observer: &mut Observer<'_>,
    ) -> Result<(String, TokenUsage), EngineError> {
        let kind = prompt.kind;
        let request = ChatRequest::single_user(
            self.config.model.clone(),
            prompt,
            self.config.temperatures.for_kind(kind),
        );
        let response = self.backend.complete(&request).await?;
        ledger.record(kind, round, response.usage);
        observer(&SessionEvent::Call {
            kind,
            round,
            prompt: &request.messages[0].content,
            reply: &response.content,
        });
        Ok((response.content, response.usage))
    }

    /// Runs one optimization round from `state`.
    ///
    /// Every call made is appended to `ledger`, including calls of a round
    /// that fails part-way.
    pub async fn step(
        &self,
        state: &SessionState,
        ledger: &mut CostLedger,
        observer: &mut Observer<'_>,
    ) -> Result<(SessionState, IterationRecord), EngineError> {
        let round = state.round + 1;
        let q = &state.query;
        let incumbent = &state.incumbent;
        let mut tokens = TokenUsage::ZERO;

        let defect = if state.mode.analyses_defects() {
            let (raw, usage) = self
                .call(
                    prompts::render_defect(q, incumbent)?,
                    round,
                    ledger,
                    observer,
                )
                .await?;
            tokens = tokens + usage;
            Some(
                DefectReport::new(raw.trim(), round)
                    .map_err(|_| EngineError::EmptyDefect { round })?,
            )
        } else {
            None
        };

        let prompt = match &defect {
            Some(d) => prompts::render_guided_optimization(q, incumbent, d)?,
            None => prompts::render_blind_optimization(q, incumbent)?,
        };
        let kind = prompt.kind;
        let (raw, usage) = self.call(prompt, round, ledger, observer).await?;
        tokens = tokens + usage;
        let text = raw.trim();
        if text.is_empty() {
            return Err(EngineError::EmptyAnswer { kind, round });
        }
        let candidate = Answer::new(text, round);

        let vote = if state.mode.votes() {
            let (raw, usage) = self
                .call(
                    prompts::render_vote(q, incumbent, &candidate)?,
                    round,
                    ledger,
                    observer,
                )
                .await?;
            tokens = tokens + usage;
            Some(parse_vote(&raw)?)
        } else {
            None
        };

        let accepted = accept_rule(state.mode, vote)?;
        observer(&SessionEvent::Decision {
            round,
            vote,
            accepted,
        });
        let next = SessionState {
            query: state.query.clone(),
            incumbent: if accepted {
                candidate.clone()
            } else {
                incumbent.clone()
            },
            round,
            mode: state.mode,
        };
        let record = IterationRecord {
            round,
            defect,
            candidate,
            vote,
            accepted,
            tokens,
        };
        Ok((next, record))
    }

    pub async fn run_session(&self, query: &Query, mode: RefinementMode) -> Transcript {
        self.run_session_observed(query, mode, &mut |_| {}).await
    }

    /// Runs a whole session. Backend and parse failures end the session
    /// with [`StopReason::BackendError`] and the incumbent as the final
    /// answer; when the initial call itself fails that answer is empty.
    pub async fn run_session_observed(
        &self,
        query: &Query,
        mode: RefinementMode,
        observer: &mut Observer<'_>,
    ) -> Transcript {
        let mut ledger = CostLedger::new();
        let mut records = Vec::new();

        let initial = match self
            .call(prompts::render_initial(query), 0, &mut ledger, observer)
            .await
        {
            Ok((raw, _)) if !raw.trim().is_empty() => Answer::initial(raw.trim()),
            Ok(_) => {
                let err = EngineError::EmptyAnswer {
                    kind: PromptKind::InitialAnswer,
                    round: 0,
                };
                return self.aborted(query, mode, ledger, err);
            }
            Err(err) => return self.aborted(query, mode, ledger, err),
        };

        let mut state = SessionState::new(query.clone(), initial.clone(), mode);
        let mut stop_reason = StopReason::MaxIterations;
        let mut error = None;
        while !state.finished() {
            match self.step(&state, &mut ledger, observer).await {
                Ok((next, record)) => {
                    let rejected = !record.accepted;
                    let tie = record.vote == Some(Vote::Tie);
                    records.push(record);
                    state = next;
                    if rejected {
                        stop_reason = if tie {
                            StopReason::VoteTie
                        } else {
                            StopReason::VoteRejected
                        };
                        break;
                    }
                }
                Err(e) => {
                    stop_reason = StopReason::BackendError;
                    error = Some(e.to_string());
                    break;
                }
            }
        }

        Transcript {
            query: query.clone(),
            model: self.config.model.clone(),
            mode,
            initial,
            records,
            final_answer: state.incumbent,
            stop_reason,
            error,
            ledger,
        }
    }

    fn aborted(
        &self,
        query: &Query,
        mode: RefinementMode,
        ledger: CostLedger,
        err: EngineError,
    ) -> Transcript {
        Transcript {
            query: query.clone(),
            model: self.config.model.clone(),
            mode,
            initial: Answer::initial(""),
            records: Vec::new(),
            final_answer: Answer::initial(""),
            stop_reason: StopReason::BackendError,
            error: Some(err.to_string()),
            ledger,
        }
    }
}

/// Convenience wrapper around [`Engine::run_session`].
pub async fn run_session<B: ChatBackend>(
    query: &Query,
    mode: RefinementMode,
    backend: B,
    config: EngineConfig,
) -> Transcript {
    Engine::new(backend, config).run_session(query, mode).await
}
