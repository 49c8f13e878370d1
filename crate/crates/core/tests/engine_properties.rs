mod common;

use proptest::prelude::*;

use common::{block_on, numbered_script, scripted};
use refine_core::backend::{BackendScript, ChatRequest};
use refine_core::engine::{Engine, EngineConfig};
use refine_core::prompts::PromptText;
use refine_core::{PromptKind, Query, RefinementMode, StopReason, Transcript};

fn mode() -> impl Strategy<Value = RefinementMode> {
    prop_oneof![
        Just(RefinementMode::Full),
        Just(RefinementMode::Blind),
        Just(RefinementMode::Reckless)
    ]
}

fn votes() -> impl Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(
        prop_oneof![Just("0"), Just("1"), Just("2"), Just("2"), Just("2")],
        0..8,
    )
}

fn run(mode: RefinementMode, max: u32, script: BackendScript) -> Transcript {
    let engine = Engine::new(scripted(script), EngineConfig::new("m"));
    let q = Query::new("q", "Q?", max).unwrap();
    block_on(engine.run_session(&q, mode))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn transcripts_replay_and_conserve(mode in mode(), max in 0u32..7, votes in votes(), stock in 0usize..8) {
        let t = run(mode, max, numbered_script(stock, &votes));
        prop_assert!(t.validate().is_ok(), "{:?}", t.validate());
        prop_assert_eq!(t.replay_final(), &t.final_answer);
        for (i, r) in t.records.iter().enumerate() {
            prop_assert_eq!(r.round as usize, i + 1);
        }
        let sum: refine_core::TokenUsage = t.ledger.entries.iter().map(|e| e.usage).sum();
        prop_assert_eq!(sum, t.ledger.grand_total());
        let by_kind: refine_core::TokenUsage = t.ledger.totals_by_kind().values().copied().sum();
        prop_assert_eq!(by_kind, t.ledger.grand_total());
    }

    /// The vote only truncates the candidate sequence: a Full run ends on
    /// the Reckless run's candidate at the last accepted round.
    #[test]
    fn full_mode_truncates_the_reckless_sequence(max in 1u32..7, votes in votes()) {
        let stock = max as usize;
        let full = run(RefinementMode::Full, max, numbered_script(stock, &votes));
        let reckless = run(RefinementMode::Reckless, max, numbered_script(stock, &votes));
        prop_assume!(full.stop_reason != StopReason::BackendError);
        let last_accepted = full.records.iter().rev().find(|r| r.accepted).map_or(0, |r| r.round);
        let expected = if last_accepted == 0 {
            &reckless.initial
        } else {
            &reckless.records[last_accepted as usize - 1].candidate
        };
        prop_assert_eq!(&full.final_answer, expected);
    }

    /// Scripted replies depend only on kind and queue position.
    #[test]
    fn scripted_backend_ignores_request_text(texts in prop::collection::vec("[a-z ]{1,20}", 3)) {
        let script = BackendScript::new().with(PromptKind::Vote, &["1", "2", "0"]);
        let b = scripted(script);
        let got: Vec<String> = texts
            .iter()
            .map(|t| {
                let req = ChatRequest::single_user("m", PromptText { kind: PromptKind::Vote, text: t.clone() }, 0.0);
                b.scripted_next(&req).unwrap().content
            })
            .collect();
        prop_assert_eq!(got, vec!["1", "2", "0"]);
    }
}

#[test]
fn requests_never_carry_history() {
    let b = scripted(numbered_script(4, &["2", "2", "2", "2"]));
    let engine = Engine::new(&b, EngineConfig::new("m"));
    let q = Query::new("q", "Q?", 4).unwrap();
    let t = block_on(engine.run_session(&q, RefinementMode::Full));
    assert_eq!(t.final_answer.text, "A4");
    let reqs = b.requests();
    assert_eq!(reqs.len(), 13);
    for r in &reqs {
        assert_eq!(r.messages.len(), 1);
    }
    // round 3 prompts mention only the round-2 incumbent and the round-3 defect
    let round3 = &reqs[7..10];
    for r in round3 {
        let text = &r.messages[0].content;
        assert!(
            !text.contains("A1") && !text.contains("d2") && !text.contains("A0"),
            "{text}"
        );
    }
    assert!(round3[1].messages[0].content.contains("d3"));
    assert!(round3[2].messages[0]
        .content
        .contains("one is A2, the other one is A3"));
}

#[test]
fn temperatures_follow_kind() {
    let b = scripted(numbered_script(1, &["2"]));
    let engine = Engine::new(&b, EngineConfig::new("m"));
    let q = Query::new("q", "Q?", 1).unwrap();
    block_on(engine.run_session(&q, RefinementMode::Full));
    let temps: Vec<(Option<PromptKind>, f64)> = b
        .requests()
        .iter()
        .map(|r| (r.kind, r.temperature))
        .collect();
    assert_eq!(
        temps,
        vec![
            (Some(PromptKind::InitialAnswer), 0.7),
            (Some(PromptKind::DefectAnalysis), 0.0),
            (Some(PromptKind::GuidedOptimization), 0.7),
            (Some(PromptKind::Vote), 0.0),
        ]
    );
}

#[test]
fn sessions_share_a_backend_concurrently() {
    let votes = vec!["2"; 12];
    let mut script = numbered_script(12, &votes);
    script.queues.insert(
        PromptKind::InitialAnswer,
        (0..4)
            .map(|_| refine_core::backend::ScriptedReply::new("A0", 1, 1))
            .collect(),
    );
    let b = scripted(script);
    let engine = Engine::new(&b, EngineConfig::new("m"));
    let queries: Vec<Query> = (0..4)
        .map(|i| Query::new(format!("q{i}"), "Q?", 3).unwrap())
        .collect();
    let ts = block_on(futures::future::join_all(
        queries
            .iter()
            .map(|q| engine.run_session(q, RefinementMode::Full)),
    ));
    assert!(ts
        .iter()
        .all(|t| t.stop_reason == StopReason::MaxIterations));
    let total_calls: usize = ts.iter().map(Transcript::call_count).sum();
    assert_eq!(total_calls, 4 * 10);
}
