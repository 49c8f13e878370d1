use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::domain::{ModelPrice, PromptKind, RefinementMode, TokenUsage, Transcript};

/// Per-model token prices, as loaded from `{model: {prompt_per_1k, completion_per_1k}}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceSheet {
    pub models: BTreeMap<String, ModelPrice>,
}

impl PriceSheet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(
        mut self,
        model: impl Into<String>,
        prompt_per_1k: f64,
        completion_per_1k: f64,
    ) -> Self {
        self.models.insert(
            model.into(),
            ModelPrice {
                prompt_per_1k,
                completion_per_1k,
            },
        );
        self
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        for (model, p) in &self.models {
            for v in [p.prompt_per_1k, p.completion_per_1k] {
                if !v.is_finite() || v < 0.0 {
                    return Err(HarnessError::InvalidPrices(format!(
                        "model `{model}` has price {v}; prices must be finite and >= 0"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(json: &str) -> Result<Self, HarnessError> {
        let sheet: PriceSheet =
            serde_json::from_str(json).map_err(|e| HarnessError::InvalidPrices(e.to_string()))?;
        sheet.validate()?;
        Ok(sheet)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, model: &str) -> Option<&ModelPrice> {
        self.models.get(model)
    }

    /// Every price multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            models: self
                .models
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        ModelPrice {
                            prompt_per_1k: p.prompt_per_1k * factor,
                            completion_per_1k: p.completion_per_1k * factor,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Aggregate over all transcripts sharing a mode and model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub mode: RefinementMode,
    pub model: String,
    pub sessions: usize,
    pub calls: usize,
    pub calls_by_kind: BTreeMap<PromptKind, usize>,
    pub tokens_by_kind: BTreeMap<PromptKind, TokenUsage>,
    pub tokens: TokenUsage,
    /// Tokens spent in each optimization round (index 0 is round 1),
    /// summed over the group's sessions.
    pub iteration_tokens: Vec<TokenUsage>,
    /// `None` when the model is not priced or a usage component is unknown.
    pub cost: Option<f64>,
}

impl GroupSummary {
    pub fn cost_per_session(&self) -> Option<f64> {
        self.cost
            .filter(|_| self.sessions > 0)
            .map(|c| c / self.sessions as f64)
    }

    /// Change in per-round token spend from one round to the next.
    pub fn iteration_deltas(&self) -> Vec<Option<i64>> {
        self.iteration_tokens
            .windows(2)
            .map(|w| Some(w[1].total? as i64 - w[0].total? as i64))
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CostReport {
    pub groups: Vec<GroupSummary>,
    pub tokens: TokenUsage,
    pub cost: Option<f64>,
    pub priced: bool,
}

impl CostReport {
    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn group(&self, mode: RefinementMode, model: &str) -> Option<&GroupSummary> {
        self.groups
            .iter()
            .find(|g| g.mode == mode && g.model == model)
    }
}

/// Summarises token use, call counts and (given prices) monetary cost per
/// (mode, model) group.
pub fn cost_report(transcripts: &[Transcript], prices: Option<&PriceSheet>) -> CostReport {
    let mut groups: BTreeMap<(RefinementMode, String), GroupSummary> = BTreeMap::new();
    for t in transcripts {
        let g = groups
            .entry((t.mode, t.model.clone()))
            .or_insert_with(|| GroupSummary {
                mode: t.mode,
                model: t.model.clone(),
                sessions: 0,
                calls: 0,
                calls_by_kind: BTreeMap::new(),
                tokens_by_kind: BTreeMap::new(),
                tokens: TokenUsage::ZERO,
                iteration_tokens: Vec::new(),
                cost: Some(0.0),
            });
        g.sessions += 1;
        for e in &t.ledger.entries {
            g.calls += 1;
            *g.calls_by_kind.entry(e.kind).or_default() += 1;
            let slot = g.tokens_by_kind.entry(e.kind).or_insert(TokenUsage::ZERO);
            *slot = *slot + e.usage;
            g.tokens = g.tokens + e.usage;
            if e.round >= 1 {
                let idx = e.round as usize - 1;
                if g.iteration_tokens.len() <= idx {
                    g.iteration_tokens.resize(idx + 1, TokenUsage::ZERO);
                }
                g.iteration_tokens[idx] = g.iteration_tokens[idx] + e.usage;
            }
        }
        let session_cost = prices
            .and_then(|p| p.get(&t.model))
            .and_then(|price| t.ledger.cost(price));
        g.cost = match (g.cost, session_cost) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
    }
    let groups: Vec<GroupSummary> = groups.into_values().collect();
    let tokens = groups.iter().map(|g| g.tokens).sum();
    let cost = if prices.is_some() {
        groups.iter().map(|g| g.cost).sum()
    } else {
        None
    };
    CostReport {
        groups,
        tokens,
        cost,
        priced: prices.is_some(),
    }
}

fn num(v: Option<u64>) -> String {
    v.map_or_else(|| "?".to_string(), |n| n.to_string())
}

fn money(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |c| format!("{c:.6}"))
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.groups.is_empty() {
            return writeln!(f, "no transcripts");
        }
        write!(
            f,
            "{:<9} {:<24} {:>8} {:>6} {:>10} {:>10} {:>10}",
            "mode", "model", "sessions", "calls", "prompt", "completion", "total"
        )?;
        if self.priced {
            write!(
                f,
                " {:>12} {:>12} {:>8}",
                "cost", "cost/session", "relative"
            )?;
        }
        writeln!(f)?;
        let cheapest = self
            .groups
            .iter()
            .filter_map(GroupSummary::cost_per_session)
            .filter(|c| *c > 0.0)
            .fold(None, |m: Option<f64>, c| Some(m.map_or(c, |m| m.min(c))));
        for g in &self.groups {
            write!(
                f,
                "{:<9} {:<24} {:>8} {:>6} {:>10} {:>10} {:>10}",
                g.mode.as_str(),
                if g.model.is_empty() { "-" } else { &g.model },
                g.sessions,
                g.calls,
                num(g.tokens.prompt),
                num(g.tokens.completion),
                num(g.tokens.total)
            )?;
            if self.priced {
                let relative = match (g.cost_per_session(), cheapest) {
                    (Some(c), Some(min)) => format!("{:.2}x", c / min),
                    _ => "n/a".into(),
                };
                write!(
                    f,
                    " {:>12} {:>12} {:>8}",
                    money(g.cost),
                    money(g.cost_per_session()),
                    relative
                )?;
            }
            writeln!(f)?;
        }
        writeln!(f)?;
        writeln!(f, "calls by kind")?;
        for g in &self.groups {
            let parts: Vec<String> = g
                .calls_by_kind
                .iter()
                .map(|(k, n)| format!("{k}={n} ({} tok)", num(g.tokens_by_kind[k].total)))
                .collect();
            writeln!(f, "  {}/{}: {}", g.mode, g.model, parts.join(", "))?;
        }
        writeln!(f)?;
        writeln!(f, "tokens per iteration")?;
        for g in &self.groups {
            let rounds: Vec<String> = g
                .iteration_tokens
                .iter()
                .enumerate()
                .map(|(i, u)| format!("r{}={}", i + 1, num(u.total)))
                .collect();
            let deltas: Vec<String> = g
                .iteration_deltas()
                .into_iter()
                .map(|d| d.map_or_else(|| "?".into(), |d| format!("{d:+}")))
                .collect();
            writeln!(
                f,
                "  {}/{}: {}{}",
                g.mode,
                g.model,
                if rounds.is_empty() {
                    "-".into()
                } else {
                    rounds.join(" ")
                },
                if deltas.is_empty() {
                    String::new()
                } else {
                    format!("  (deltas {})", deltas.join(" "))
                }
            )?;
        }
        writeln!(f)?;
        write!(f, "total tokens: {}", num(self.tokens.total))?;
        if self.priced {
            write!(f, ", total cost: {}", money(self.cost))?;
        }
        writeln!(f)
    }
}
