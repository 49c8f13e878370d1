//! Value types shared by the prompt renderer, the engine and the harness.
//!
//! Everything here is an immutable value once built. The session audit
//! model ([`Transcript`]) carries enough information to replay the
//! acceptance decisions without re-contacting a model.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Add;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("query text must be non-empty and carry no surrounding whitespace")]
    InvalidQueryText,
    #[error("defect analysis is empty")]
    EmptyDefect,
    #[error("defect report round must be >= 1")]
    DefectRound,
    #[error("unknown refinement mode `{0}` (expected full, blind or reckless)")]
    UnknownMode(String),
    #[error("unknown prompt kind `{0}`")]
    UnknownKind(String),
    #[error("token usage total {total} does not equal prompt {prompt} + completion {completion}")]
    InconsistentUsage {
        prompt: u64,
        completion: u64,
        total: u64,
    },
    #[error("transcript invariant violated: {0}")]
    Transcript(String),
}

/// A user question plus the number of optimization rounds it may go through.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawQuery")]
pub struct Query {
    id: String,
    text: String,
    max_iterations: u32,
}

#[derive(Deserialize)]
struct RawQuery {
    id: String,
    text: String,
    max_iterations: u32,
}

impl TryFrom<RawQuery> for Query {
    type Error = DomainError;

    fn try_from(raw: RawQuery) -> Result<Self, Self::Error> {
        Query::new(raw.id, raw.text, raw.max_iterations)
    }
}

impl Query {
    /// The text is taken as-is: callers normalise user input before building
    /// a query, so a value with leading or trailing whitespace is rejected.
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        max_iterations: u32,
    ) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() || text.trim() != text {
            return Err(DomainError::InvalidQueryText);
        }
        Ok(Self {
            id: id.into(),
            text,
            max_iterations,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn max_iterations(&self) -> u32 {
        self.max_iterations
    }
}

/// A model answer tagged with the round that produced it (0 = initial).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub round: u32,
}

impl Answer {
    pub fn new(text: impl Into<String>, round: u32) -> Self {
        Self {
            text: text.into(),
            round,
        }
    }

    pub fn initial(text: impl Into<String>) -> Self {
        Self::new(text, 0)
    }
}

/// One-sentence flaw analysis of the incumbent answer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawDefect")]
pub struct DefectReport {
    text: String,
    round: u32,
}

#[derive(Deserialize)]
struct RawDefect {
    text: String,
    round: u32,
}

impl TryFrom<RawDefect> for DefectReport {
    type Error = DomainError;

    fn try_from(raw: RawDefect) -> Result<Self, Self::Error> {
        DefectReport::new(raw.text, raw.round)
    }
}

impl DefectReport {
    pub fn new(text: impl Into<String>, round: u32) -> Result<Self, DomainError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(DomainError::EmptyDefect);
        }
        if round == 0 {
            return Err(DomainError::DefectRound);
        }
        Ok(Self { text, round })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn round(&self) -> u32 {
        self.round
    }
}

/// Verdict of the pairwise comparison between the incumbent ("1") and the
/// freshly optimized candidate ("2"); "0" is a tie.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vote {
    Previous,
    Candidate,
    Tie,
}

impl Vote {
    /// The reply label the voting prompt asks the model for.
    pub fn label(self) -> char {
        match self {
            Vote::Tie => '0',
            Vote::Previous => '1',
            Vote::Candidate => '2',
        }
    }

    pub fn from_label(label: char) -> Option<Self> {
        match label {
            '0' => Some(Vote::Tie),
            '1' => Some(Vote::Previous),
            '2' => Some(Vote::Candidate),
            _ => None,
        }
    }
}

/// Which parts of the loop run each round.
///
/// `Full` analyses defects, optimizes with that guidance and votes. `Blind`
/// drops the defect analysis. `Reckless` drops the vote and accepts every
/// candidate until the iteration cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementMode {
    Full,
    Blind,
    Reckless,
}

impl RefinementMode {
    pub const ALL: [RefinementMode; 3] = [
        RefinementMode::Full,
        RefinementMode::Blind,
        RefinementMode::Reckless,
    ];

    pub fn analyses_defects(self) -> bool {
        !matches!(self, RefinementMode::Blind)
    }

    pub fn votes(self) -> bool {
        !matches!(self, RefinementMode::Reckless)
    }

    /// Backend calls issued per optimization round.
    pub fn calls_per_round(self) -> u32 {
        match self {
            RefinementMode::Full => 3,
            RefinementMode::Blind | RefinementMode::Reckless => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RefinementMode::Full => "full",
            RefinementMode::Blind => "blind",
            RefinementMode::Reckless => "reckless",
        }
    }
}

impl fmt::Display for RefinementMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RefinementMode {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" => Ok(RefinementMode::Full),
            "blind" => Ok(RefinementMode::Blind),
            "reckless" => Ok(RefinementMode::Reckless),
            other => Err(DomainError::UnknownMode(other.to_string())),
        }
    }
}

/// Tag carried by every outbound model call.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PromptKind {
    #[serde(rename = "initial")]
    InitialAnswer,
    #[serde(rename = "defect")]
    DefectAnalysis,
    #[serde(rename = "optimize")]
    GuidedOptimization,
    #[serde(rename = "blind_optimize")]
    BlindOptimization,
    #[serde(rename = "vote")]
    Vote,
}

impl PromptKind {
    pub const ALL: [PromptKind; 5] = [
        PromptKind::InitialAnswer,
        PromptKind::DefectAnalysis,
        PromptKind::GuidedOptimization,
        PromptKind::BlindOptimization,
        PromptKind::Vote,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PromptKind::InitialAnswer => "initial",
            PromptKind::DefectAnalysis => "defect",
            PromptKind::GuidedOptimization => "optimize",
            PromptKind::BlindOptimization => "blind_optimize",
            PromptKind::Vote => "vote",
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PromptKind {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PromptKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| DomainError::UnknownKind(s.to_string()))
    }
}

/// Token counts for one or more calls. A component the backend did not
/// report is `None`; it is never filled in with a guess.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenUsage {
    #[serde(default)]
    pub prompt: Option<u64>,
    #[serde(default)]
    pub completion: Option<u64>,
    #[serde(default)]
    pub total: Option<u64>,
}

impl TokenUsage {
    pub const ZERO: TokenUsage = TokenUsage {
        prompt: Some(0),
        completion: Some(0),
        total: Some(0),
    };

    pub fn new(prompt: u64, completion: u64) -> Self {
        Self {
            prompt: Some(prompt),
            completion: Some(completion),
            total: Some(prompt + completion),
        }
    }

    pub fn unknown() -> Self {
        Self::default()
    }

    pub fn total_only(total: u64) -> Self {
        Self {
            prompt: None,
            completion: None,
            total: Some(total),
        }
    }

    /// Builds usage from whatever a backend reported. When both components
    /// are present the total is derived from them, and a contradicting
    /// reported total is an error.
    pub fn from_reported(
        prompt: Option<u64>,
        completion: Option<u64>,
        total: Option<u64>,
    ) -> Result<Self, DomainError> {
        match (prompt, completion, total) {
            (Some(p), Some(c), Some(t)) if p + c != t => Err(DomainError::InconsistentUsage {
                prompt: p,
                completion: c,
                total: t,
            }),
            (Some(p), Some(c), _) => Ok(Self::new(p, c)),
            _ => Ok(Self {
                prompt,
                completion,
                total,
            }),
        }
    }

    pub fn is_consistent(&self) -> bool {
        match (self.prompt, self.completion, self.total) {
            (Some(p), Some(c), Some(t)) => p + c == t,
            (Some(_), Some(_), None) => false,
            _ => true,
        }
    }
}

fn add_known(a: Option<u64>, b: Option<u64>) -> Option<u64> {
    Some(a? + b?)
}

impl Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            prompt: add_known(self.prompt, rhs.prompt),
            completion: add_known(self.completion, rhs.completion),
            total: add_known(self.total, rhs.total),
        }
    }
}

impl std::iter::Sum for TokenUsage {
    fn sum<I: Iterator<Item = TokenUsage>>(iter: I) -> Self {
        iter.fold(TokenUsage::ZERO, |acc, u| acc + u)
    }
}

/// Audit entry for one optimization round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub round: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub defect: Option<DefectReport>,
    pub candidate: Answer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vote: Option<Vote>,
    pub accepted: bool,
    pub tokens: TokenUsage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxIterations,
    VoteRejected,
    VoteTie,
    BackendError,
}

/// One outbound call in the cost ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub kind: PromptKind,
    pub round: u32,
    #[serde(flatten)]
    pub usage: TokenUsage,
}

/// Per-call token accounting for a session.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub entries: Vec<LedgerEntry>,
}

/// Price of one model, in currency units per 1000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub prompt_per_1k: f64,
    pub completion_per_1k: f64,
}

impl ModelPrice {
    /// Monetary cost of `usage`, or `None` when a component is unknown.
    pub fn cost_of(&self, usage: &TokenUsage) -> Option<f64> {
        let p = usage.prompt? as f64;
        let c = usage.completion? as f64;
        Some(p / 1000.0 * self.prompt_per_1k + c / 1000.0 * self.completion_per_1k)
    }
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, kind: PromptKind, round: u32, usage: TokenUsage) {
        self.entries.push(LedgerEntry { kind, round, usage });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, kind: PromptKind) -> usize {
        self.entries.iter().filter(|e| e.kind == kind).count()
    }

    pub fn grand_total(&self) -> TokenUsage {
        self.entries.iter().map(|e| e.usage).sum()
    }

    pub fn totals_by_kind(&self) -> BTreeMap<PromptKind, TokenUsage> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let slot = out.entry(e.kind).or_insert(TokenUsage::ZERO);
            *slot = *slot + e.usage;
        }
        out
    }

    pub fn cost(&self, price: &ModelPrice) -> Option<f64> {
        self.entries
            .iter()
            .map(|e| price.cost_of(&e.usage))
            .sum::<Option<f64>>()
    }
}

/// Full audit trail of one refinement session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub query: Query,
    /// Model the session ran against; empty when unknown.
    #[serde(default)]
    pub model: String,
    pub mode: RefinementMode,
    pub initial: Answer,
    pub records: Vec<IterationRecord>,
    #[serde(rename = "final")]
    pub final_answer: Answer,
    pub stop_reason: StopReason,
    /// Diagnostic for `BackendError` stops.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub ledger: CostLedger,
}

/// Whether a round's candidate replaces the incumbent.
pub fn is_accepted(mode: RefinementMode, vote: Option<Vote>) -> bool {
    match mode {
        RefinementMode::Reckless => true,
        _ => vote == Some(Vote::Candidate),
    }
}

impl Transcript {
    /// Replays the records from the initial answer under the acceptance
    /// rule and returns the answer that should have been returned.
    pub fn replay_final(&self) -> &Answer {
        self.records.iter().fold(&self.initial, |incumbent, r| {
            if r.accepted {
                &r.candidate
            } else {
                incumbent
            }
        })
    }

    pub fn call_count(&self) -> usize {
        self.ledger.len()
    }

    /// Checks every structural invariant of a finished session.
    pub fn validate(&self) -> Result<(), DomainError> {
        let fail = |msg: String| Err(DomainError::Transcript(msg));
        if self.initial.round != 0 {
            return fail(format!("initial answer has round {}", self.initial.round));
        }
        if self.records.len() > self.query.max_iterations as usize {
            return fail(format!(
                "{} records exceed max_iterations {}",
                self.records.len(),
                self.query.max_iterations
            ));
        }
        for (i, r) in self.records.iter().enumerate() {
            let expected = i as u32 + 1;
            if r.round != expected {
                return fail(format!(
                    "record {i} has round {} (expected {expected})",
                    r.round
                ));
            }
            if r.candidate.round != r.round {
                return fail(format!(
                    "candidate of round {} tagged round {}",
                    r.round, r.candidate.round
                ));
            }
            if self.mode.analyses_defects() != r.defect.is_some() {
                return fail(format!(
                    "round {} defect presence does not match mode {}",
                    r.round, self.mode
                ));
            }
            if let Some(d) = &r.defect {
                if d.round() != r.round {
                    return fail(format!(
                        "defect of round {} tagged round {}",
                        r.round,
                        d.round()
                    ));
                }
            }
            if self.mode.votes() != r.vote.is_some() {
                return fail(format!(
                    "round {} vote presence does not match mode {}",
                    r.round, self.mode
                ));
            }
            if r.accepted != is_accepted(self.mode, r.vote) {
                return fail(format!("round {} acceptance contradicts its vote", r.round));
            }
            if !r.tokens.is_consistent() {
                return fail(format!("round {} token usage is inconsistent", r.round));
            }
        }
        if self.replay_final() != &self.final_answer {
            return fail("final answer does not match replay of accepted records".into());
        }
        if matches!(
            self.stop_reason,
            StopReason::VoteRejected | StopReason::VoteTie
        ) {
            match self.records.last() {
                Some(r) if !r.accepted => {}
                _ => {
                    return fail(format!(
                        "{:?} requires a final rejected record",
                        self.stop_reason
                    ))
                }
            }
        }
        if self.stop_reason == StopReason::MaxIterations
            && self.records.len() != self.query.max_iterations as usize
        {
            return fail("max_iterations stop before the cap was reached".into());
        }
        if self.ledger.entries.iter().any(|e| !e.usage.is_consistent()) {
            return fail("ledger entry with inconsistent token usage".into());
        }
        Ok(())
    }
}
