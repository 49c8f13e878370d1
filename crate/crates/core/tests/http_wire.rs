use std::time::Duration;

use proptest::prelude::*;

use refine_core::backend::{
    stub_serve, BackendError, ChatBackend, ChatMessage, ChatRequest, HttpBackend, HttpConfig,
    RetryPolicy, Role, StubFixture,
};
use refine_core::engine::{Engine, EngineConfig};
use refine_core::prompts::PromptText;
use refine_core::{PromptKind, Query, RefinementMode, StopReason, TokenUsage};

fn fast_backend(base_url: String) -> HttpBackend {
    let mut cfg = HttpConfig::new(base_url, "test-key");
    cfg.retry = RetryPolicy {
        max_attempts: 5,
        base_delay: Duration::from_millis(5),
        factor: 2.0,
    };
    HttpBackend::new(cfg).unwrap()
}

fn request(text: &str) -> ChatRequest {
    ChatRequest::single_user(
        "gpt-test",
        PromptText {
            kind: PromptKind::InitialAnswer,
            text: text.into(),
        },
        0.7,
    )
}

const LONDON: &str = r#"{"choices":[{"message":{"role":"assistant","content":"London"}}],"usage":{"prompt_tokens":12,"completion_tokens":3,"total_tokens":15}}"#;

#[tokio::test]
async fn extracts_content_and_usage() {
    let stub = stub_serve(vec![StubFixture::ok(LONDON)]).await.unwrap();
    let backend = fast_backend(stub.base_url());
    let resp = backend
        .complete(&request("Where were the 2012 Olympics held?"))
        .await
        .unwrap();
    assert_eq!(resp.content, "London");
    assert_eq!(resp.usage, TokenUsage::new(12, 3));
    assert_eq!(resp.attempts, 1);
    assert_eq!(resp.model, "gpt-test");
    let bodies = stub.requests();
    assert_eq!(bodies.len(), 1);
    let body: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(body["model"], "gpt-test");
    assert_eq!(body["temperature"], 0.7);
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(
        body["messages"][0]["content"],
        "Where were the 2012 Olympics held?"
    );
    stub.close().await;
}

#[tokio::test]
async fn retries_rate_limits_then_succeeds() {
    let stub = stub_serve(vec![
        StubFixture::status(429, "{}"),
        StubFixture::status(429, "{}"),
        StubFixture::ok(LONDON),
    ])
    .await
    .unwrap();
    let resp = fast_backend(stub.base_url())
        .complete(&request("q"))
        .await
        .unwrap();
    assert_eq!(resp.attempts, 3);
    assert_eq!(stub.request_count(), 3);
}

#[tokio::test]
async fn gives_up_after_five_attempts() {
    let stub = stub_serve(vec![StubFixture::status(503, "busy"); 7])
        .await
        .unwrap();
    let err = fast_backend(stub.base_url())
        .complete(&request("q"))
        .await
        .unwrap_err();
    assert_eq!(
        err,
        BackendError::Server {
            status: 503,
            attempts: 5,
            body: "busy".into()
        }
    );
    assert_eq!(stub.request_count(), 5);
    let stub = stub_serve(vec![StubFixture::status(429, "{}"); 6])
        .await
        .unwrap();
    let err = fast_backend(stub.base_url())
        .complete(&request("q"))
        .await
        .unwrap_err();
    assert_eq!(err, BackendError::RateLimited { attempts: 5 });
}

#[tokio::test]
async fn auth_errors_are_not_retried() {
    for status in [401, 403] {
        let stub = stub_serve(vec![
            StubFixture::status(status, "no"),
            StubFixture::ok(LONDON),
        ])
        .await
        .unwrap();
        let err = fast_backend(stub.base_url())
            .complete(&request("q"))
            .await
            .unwrap_err();
        assert_eq!(err, BackendError::Auth { status });
        assert_eq!(stub.request_count(), 1);
    }
}

#[tokio::test]
async fn missing_choices_is_malformed() {
    let stub = stub_serve(vec![StubFixture::ok(r#"{"usage":{"total_tokens":3}}"#)])
        .await
        .unwrap();
    let err = fast_backend(stub.base_url())
        .complete(&request("q"))
        .await
        .unwrap_err();
    assert!(matches!(err, BackendError::MalformedResponse(_)), "{err:?}");
}

#[tokio::test]
async fn stub_answers_500_past_its_fixtures() {
    let stub = stub_serve(vec![StubFixture::ok(LONDON)]).await.unwrap();
    let client = reqwest::Client::new();
    let url = format!("{}/chat/completions", stub.base_url());
    let first = client
        .post(&url)
        .body("{\"messages\":[]}")
        .send()
        .await
        .unwrap();
    assert_eq!(first.status(), 200);
    let second = client.post(&url).body("{}").send().await.unwrap();
    assert_eq!(second.status(), 500);
    assert!(second.text().await.unwrap().contains("exceeds"));
    assert!(stub.requests()[0].contains("messages"));
}

#[tokio::test]
async fn stub_rejects_empty_fixture_list() {
    assert!(stub_serve(vec![]).await.is_err());
}

#[tokio::test]
async fn transport_failure_after_close() {
    let stub = stub_serve(vec![StubFixture::ok(LONDON)]).await.unwrap();
    let url = stub.base_url();
    stub.close().await;
    let err = fast_backend(url).complete(&request("q")).await.unwrap_err();
    assert!(matches!(err, BackendError::Transport(_)), "{err:?}");
}

#[tokio::test]
async fn full_session_over_the_wire() {
    let stub = stub_serve(vec![
        StubFixture::completion(
            "The 2012 Olympics took place in London, UK, opening on July 27th.",
            14,
            18,
        ),
        StubFixture::completion("The answer includes irrelevant dates.", 40, 7),
        StubFixture::completion("London, UK.", 60, 4),
        StubFixture::completion("2", 70, 1),
        StubFixture::completion("The answer lacks the venue.", 30, 6),
        StubFixture::completion("London.", 50, 2),
        StubFixture::completion("1", 55, 1),
    ])
    .await
    .unwrap();
    let engine = Engine::new(fast_backend(stub.base_url()), EngineConfig::new("gpt-test"));
    let q = Query::new("olympics", "Where were the 2012 Olympics held?", 3).unwrap();
    let t = engine.run_session(&q, RefinementMode::Full).await;
    assert_eq!(t.final_answer.text, "London, UK.");
    assert_eq!(t.stop_reason, StopReason::VoteRejected);
    assert_eq!(t.ledger.grand_total(), TokenUsage::new(319, 39));
    t.validate().unwrap();

    let bodies = stub.requests();
    assert_eq!(bodies.len(), 7);
    for (i, raw) in bodies.iter().enumerate() {
        let body: serde_json::Value = serde_json::from_str(raw).unwrap();
        let messages = body["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 1, "request {i}");
        assert_eq!(messages[0]["role"], "user");
    }
    let vote: serde_json::Value = serde_json::from_str(&bodies[3]).unwrap();
    assert_eq!(vote["temperature"], 0.0);
    assert!(vote["messages"][0]["content"]
        .as_str()
        .unwrap()
        .starts_with("The question is Where were the 2012 Olympics held?, to which"));
}

fn arb_request() -> impl Strategy<Value = ChatRequest> {
    let role = prop_oneof![Just(Role::User), Just(Role::System), Just(Role::Assistant)];
    (
        "[a-z0-9.-]{1,12}",
        prop::collection::vec((role, "\\PC{1,30}"), 1..4),
        0u32..=200,
    )
        .prop_map(|(model, msgs, t)| ChatRequest {
            model,
            messages: msgs
                .into_iter()
                .map(|(role, content)| ChatMessage { role, content })
                .collect(),
            temperature: t as f64 / 100.0,
            kind: None,
        })
}

proptest! {
    #[test]
    fn wire_body_is_a_fixed_point(req in arb_request()) {
        let first = serde_json::to_string(&req.to_wire()).unwrap();
        let parsed: ChatRequest = serde_json::from_str(&first).unwrap();
        let second = serde_json::to_string(&parsed.to_wire()).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(parsed.messages, req.messages);
    }

    #[test]
    fn backoff_ceilings_never_decrease(base_ms in 1u64..2000, retries in 1u32..5) {
        let p = RetryPolicy { max_attempts: 5, base_delay: Duration::from_millis(base_ms), factor: 2.0 };
        let ceilings: Vec<Duration> = (0..retries).map(|i| p.ceiling(i)).collect();
        prop_assert!(ceilings.windows(2).all(|w| w[0] <= w[1]));
    }
}
