#![allow(dead_code)]

use std::future::Future;

use refine_core::backend::{BackendScript, ScriptedBackend, ScriptedReply};
use refine_core::PromptKind;

pub fn block_on<F: Future>(f: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
        .block_on(f)
}

/// Script with initial answer "A0", defects "d1".., candidates "A1".. for
/// both optimization kinds, and the given vote replies. All replies carry
/// zero token counts.
pub fn numbered_script(rounds: usize, votes: &[&str]) -> BackendScript {
    let defects: Vec<String> = (1..=rounds).map(|i| format!("d{i}")).collect();
    let answers: Vec<String> = (1..=rounds).map(|i| format!("A{i}")).collect();
    let d: Vec<&str> = defects.iter().map(String::as_str).collect();
    let a: Vec<&str> = answers.iter().map(String::as_str).collect();
    BackendScript::new()
        .with(PromptKind::InitialAnswer, &["A0"])
        .with(PromptKind::DefectAnalysis, &d)
        .with(PromptKind::GuidedOptimization, &a)
        .with(PromptKind::BlindOptimization, &a)
        .with(PromptKind::Vote, votes)
}

pub fn scripted(script: BackendScript) -> ScriptedBackend {
    ScriptedBackend::new(script)
}

/// Script whose replies all carry fixed token counts per kind.
pub fn costed_script(
    rounds: usize,
    votes: &[&str],
    usage: &[(PromptKind, u64, u64)],
) -> BackendScript {
    let base = numbered_script(rounds, votes);
    let mut out = BackendScript::new();
    for (kind, replies) in base.queues {
        let (p, c) = usage
            .iter()
            .find(|(k, _, _)| *k == kind)
            .map(|(_, p, c)| (*p, *c))
            .unwrap_or((0, 0));
        for r in replies {
            out.push(kind, ScriptedReply::new(r.content, p, c));
        }
    }
    out
}
