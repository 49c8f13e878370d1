//! Prompt rendering and classification.
//!
//! Each prompt is a fixed template whose `{name}` slots are filled in a
//! single left-to-right pass. Text substituted into a slot is copied
//! verbatim, so brace sequences inside user text are never expanded.

use thiserror::Error;

use crate::domain::{Answer, DefectReport, PromptKind, Query};

pub const DEFECT_TEMPLATE: &str = "Please list the defects of answer {a} to the question {q}. List the defects in one sentence instead of a list with line breaks!";

pub const GUIDED_OPTIMIZATION_TEMPLATE: &str = "The answer {a} to the question {q} is not optimal because that {d}. Please refine the answer providing a better one regarding the aforementioned flaw. You should provide nothing but the answer.";

pub const BLIND_OPTIMIZATION_TEMPLATE: &str = "The answer {a} to the question {q} may be suboptimal. Please refine the answer providing a better one. You should provide nothing but the answer.";

pub const VOTE_TEMPLATE: &str = "The question is {q}, to which there are two optimal answers, one is {a}, the other one is {a*}. Please answer either \"1\" or \"2\" if you think one of them is better, or \"0\" if you think they're equally good. Do not reply anything else than a number!";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("answer text is empty")]
    InvalidAnswer,
    #[error("defect analysis is missing")]
    MissingDefect,
    #[error("previous answer (round {previous}) must precede the candidate (round {candidate})")]
    OrderingError { previous: u32, candidate: u32 },
}

/// A rendered prompt ready to be sent as a single user message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptText {
    pub kind: PromptKind,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Segment<'t> {
    Literal(&'t str),
    Slot(&'t str),
}

/// Splits a template into literal runs and `{name}` slots.
fn segments(template: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else {
            break;
        };
        if open > 0 {
            out.push(Segment::Literal(&rest[..open]));
        }
        out.push(Segment::Slot(&rest[open + 1..open + close]));
        rest = &rest[open + close + 1..];
    }
    if !rest.is_empty() {
        out.push(Segment::Literal(rest));
    }
    out
}

/// Fills every slot of `template` from `values` in one pass.
///
/// Panics if the template names a slot missing from `values`; templates
/// are compile-time constants so that is a programming error.
fn substitute(template: &str, values: &[(&str, &str)]) -> String {
    let mut out =
        String::with_capacity(template.len() + values.iter().map(|(_, v)| v.len()).sum::<usize>());
    for seg in segments(template) {
        match seg {
            Segment::Literal(s) => out.push_str(s),
            Segment::Slot(name) => {
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .unwrap_or_else(|| panic!("no value for template slot `{name}`"));
                out.push_str(value);
            }
        }
    }
    out
}

/// The literal runs of a template, in order.
pub fn skeleton(template: &str) -> Vec<&str> {
    segments(template)
        .into_iter()
        .filter_map(|s| match s {
            Segment::Literal(l) => Some(l),
            Segment::Slot(_) => None,
        })
        .collect()
}

/// The template for a kind, or `None` for the initial answer (whose prompt
/// is the bare question).
pub fn template_for(kind: PromptKind) -> Option<&'static str> {
    match kind {
        PromptKind::InitialAnswer => None,
        PromptKind::DefectAnalysis => Some(DEFECT_TEMPLATE),
        PromptKind::GuidedOptimization => Some(GUIDED_OPTIMIZATION_TEMPLATE),
        PromptKind::BlindOptimization => Some(BLIND_OPTIMIZATION_TEMPLATE),
        PromptKind::Vote => Some(VOTE_TEMPLATE),
    }
}

fn non_empty(a: &Answer) -> Result<(), PromptError> {
    if a.text.is_empty() {
        Err(PromptError::InvalidAnswer)
    } else {
        Ok(())
    }
}

pub fn render_initial(q: &Query) -> PromptText {
    PromptText {
        kind: PromptKind::InitialAnswer,
        text: q.text().to_string(),
    }
}

pub fn render_defect(q: &Query, a: &Answer) -> Result<PromptText, PromptError> {
    non_empty(a)?;
    Ok(PromptText {
        kind: PromptKind::DefectAnalysis,
        text: substitute(DEFECT_TEMPLATE, &[("a", &a.text), ("q", q.text())]),
    })
}

pub fn render_guided_optimization(
    q: &Query,
    a: &Answer,
    d: &DefectReport,
) -> Result<PromptText, PromptError> {
    non_empty(a)?;
    if d.text().is_empty() {
        return Err(PromptError::MissingDefect);
    }
    Ok(PromptText {
        kind: PromptKind::GuidedOptimization,
        text: substitute(
            GUIDED_OPTIMIZATION_TEMPLATE,
            &[("a", &a.text), ("q", q.text()), ("d", d.text())],
        ),
    })
}

pub fn render_blind_optimization(q: &Query, a: &Answer) -> Result<PromptText, PromptError> {
    non_empty(a)?;
    Ok(PromptText {
        kind: PromptKind::BlindOptimization,
        text: substitute(
            BLIND_OPTIMIZATION_TEMPLATE,
            &[("a", &a.text), ("q", q.text())],
        ),
    })
}

/// Renders the comparison prompt. Label "1" is always the previous answer
/// and "2" the candidate.
pub fn render_vote(
    q: &Query,
    previous: &Answer,
    candidate: &Answer,
) -> Result<PromptText, PromptError> {
    if previous.round >= candidate.round {
        return Err(PromptError::OrderingError {
            previous: previous.round,
            candidate: candidate.round,
        });
    }
    non_empty(previous)?;
    non_empty(candidate)?;
    Ok(PromptText {
        kind: PromptKind::Vote,
        text: substitute(
            VOTE_TEMPLATE,
            &[
                ("q", q.text()),
                ("a", &previous.text),
                ("a*", &candidate.text),
            ],
        ),
    })
}

/// True when `text` is the template's literal runs separated by arbitrary
/// slot contents: anchored at both ends, middle runs found left to right.
fn matches_skeleton(text: &str, template: &str) -> bool {
    let segs = segments(template);
    let mut rest = text;
    let last = segs.len().saturating_sub(1);
    for (i, seg) in segs.iter().enumerate() {
        let Segment::Literal(lit) = *seg else {
            continue;
        };
        if i == 0 {
            match rest.strip_prefix(lit) {
                Some(r) => rest = r,
                None => return false,
            }
        } else if i == last {
            return rest.ends_with(lit);
        } else {
            match rest.find(lit) {
                Some(pos) => rest = &rest[pos + lit.len()..],
                None => return false,
            }
        }
    }
    true
}

/// Maps prompt text back to the kind whose template produced it, falling
/// back to [`PromptKind::InitialAnswer`].
pub fn classify(text: &str) -> PromptKind {
    const ORDER: [PromptKind; 4] = [
        PromptKind::Vote,
        PromptKind::DefectAnalysis,
        PromptKind::GuidedOptimization,
        PromptKind::BlindOptimization,
    ];
    ORDER
        .into_iter()
        .find(|k| template_for(*k).is_some_and(|t| matches_skeleton(text, t)))
        .unwrap_or(PromptKind::InitialAnswer)
}
