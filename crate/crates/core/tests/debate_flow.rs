//! End-to-end debate runs against the mock and stub backends.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use axum::routing::post;
use axum::{Json, Router};
use colloquy_core::orchestrator::{LogKind, STIMULUS_LABEL};
use colloquy_core::persistence::{load_canonical, TranscriptWriter, FILE_PREFIX};
use colloquy_core::provider::{
    resolve_api_key, ChatClient, Completer, CompletionRequest, CompletionResult, FaultPlan,
    FinishReason, KeySource, OpenAiTransport, ProviderError, RetryPolicy, Role,
};
use colloquy_core::{reference, Command, Debate, PersonaId, Phase, RunOutcome, TurnError};
use common::{fixed_clock, mock_debate, reference_debate_config, registry};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use regex::Regex;
use serde_json::json;

fn speakers() -> BTreeMap<PersonaId, String> {
    [
        ("anne".into(), "Anne".into()),
        ("john".into(), "John".into()),
    ]
    .into_iter()
    .collect()
}

#[tokio::test]
async fn reference_run_opens_verbatim_and_alternates() {
    let config = reference_debate_config(50);
    let question = config.opening_question.clone();
    let (mock, debate) = mock_debate(config, FaultPlan::Never);
    assert_eq!(debate.run(u64::MAX).await, RunOutcome::Ended);

    let state = debate.snapshot();
    assert_eq!(state.turns.len(), 50);
    assert_eq!(state.turns[0].speaker.as_str(), "anne");
    assert_eq!(state.turns[0].content, question);
    assert_eq!(state.turns[0].attempt_count, 0);
    for (i, t) in state.turns.iter().enumerate() {
        assert_eq!(t.index, i as u64);
        let expected = if i % 2 == 0 { "anne" } else { "john" };
        assert_eq!(t.speaker.as_str(), expected);
    }
    // the opening question is not generated
    assert_eq!(mock.call_count(), 49);
}

#[tokio::test]
async fn john_may_open() {
    let mut config = reference_debate_config(5);
    config.opening_speaker = "john".into();
    let (_, debate) = mock_debate(config, FaultPlan::Never);
    debate.run(u64::MAX).await;
    let speakers: Vec<String> = debate
        .snapshot()
        .turns
        .iter()
        .map(|t| t.speaker.to_string())
        .collect();
    assert_eq!(speakers, ["john", "anne", "john", "anne", "john"]);
}

/// Random command schedules keep turn indices dense, speakers alternating
/// and every accepted stimulus delivered to exactly one prompt.
#[tokio::test]
async fn random_command_schedules_preserve_invariants() {
    let mut rng = StdRng::seed_from_u64(99);
    for run in 0..150 {
        let turns = rng.gen_range(1..=24);
        let (mock, debate) = mock_debate(reference_debate_config(turns), FaultPlan::Never);
        let mut injected = Vec::new();
        let mut seq = 0;
        let mut schedule_rng = StdRng::seed_from_u64(run);
        loop {
            let outcome = debate
                .run_with_hook(u64::MAX, |d| {
                    let roll: f64 = schedule_rng.gen();
                    let command = if roll < 0.2 {
                        seq += 1;
                        Command::Inject {
                            text: format!("stimulus-{run}-{seq}"),
                        }
                    } else if roll < 0.3 {
                        Command::Pause
                    } else if roll < 0.32 {
                        Command::End
                    } else {
                        return;
                    };
                    if let (Command::Inject { text }, Ok(_)) =
                        (&command, d.apply_command(command.clone()))
                    {
                        injected.push(text.clone());
                    }
                })
                .await;
            match outcome {
                RunOutcome::Suspended(Phase::Paused) => {
                    // stimuli sent while paused must reach the next prompt
                    seq += 1;
                    let text = format!("stimulus-{run}-{seq}");
                    debate
                        .apply_command(Command::Inject { text: text.clone() })
                        .unwrap();
                    injected.push(text);
                    debate.apply_command(Command::Resume).unwrap();
                }
                RunOutcome::Ended => break,
                other => panic!("unexpected outcome {other:?}"),
            }
        }

        let state = debate.snapshot();
        assert!(state.turns.len() as u32 <= turns);
        for (i, t) in state.turns.iter().enumerate() {
            assert_eq!(t.index, i as u64);
            assert_eq!(t.speaker, state.config.personas[i % 2]);
        }
        assert!(debate.apply_command(Command::Resume).is_err());

        let requests = mock.requests();
        let consumed: Vec<(String, u64)> = state
            .events
            .iter()
            .filter_map(|e| match &e.kind {
                LogKind::StimulusConsumed { text, turn_index } => Some((text.clone(), *turn_index)),
                _ => None,
            })
            .collect();
        for text in &injected {
            let label = format!("{STIMULUS_LABEL} {text}");
            let carrying: Vec<&CompletionRequest> = requests
                .iter()
                .filter(|r| {
                    r.messages
                        .iter()
                        .any(|m| m.role == Role::User && m.content == label)
                })
                .collect();
            let pending = state
                .pending_stimuli
                .iter()
                .filter(|s| &s.text == text)
                .count();
            let logged: Vec<u64> = consumed
                .iter()
                .filter(|(t, _)| t == text)
                .map(|(_, i)| *i)
                .collect();
            assert_eq!(carrying.len() + pending, 1, "{text}");
            assert_eq!(logged.len(), carrying.len(), "{text}");
            if let Some(r) = carrying.first() {
                assert_eq!(r.tag.as_ref().unwrap().turn_index, logged[0]);
                assert!(logged[0] < state.turns.len() as u64);
            }
        }
    }
}

/// A completer that blocks until released, to hold a call in flight.
struct Gate {
    release: tokio::sync::Semaphore,
    entered: tokio::sync::Notify,
}

#[async_trait]
impl Completer for Gate {
    async fn complete(
        &self,
        request: &CompletionRequest,
    ) -> Result<CompletionResult, ProviderError> {
        self.entered.notify_one();
        self.release.acquire().await.unwrap().forget();
        Ok(CompletionResult {
            content: format!("reply {}", request.tag.as_ref().unwrap().turn_index),
            finish_reason: FinishReason::Stop,
            provider_latency: Duration::ZERO,
            attempt_count: 1,
        })
    }
}

#[tokio::test]
async fn pause_during_a_call_commits_that_turn_only() {
    let gate = Arc::new(Gate {
        release: tokio::sync::Semaphore::new(0),
        entered: tokio::sync::Notify::new(),
    });
    let debate = Arc::new(
        Debate::builder(reference_debate_config(10))
            .clock(fixed_clock())
            .build(&registry(), gate.clone())
            .unwrap(),
    );
    debate.apply_command(Command::Start).unwrap();
    debate.next_turn().await.unwrap();

    let d = debate.clone();
    let call = tokio::spawn(async move { d.next_turn().await });
    gate.entered.notified().await;
    assert!(matches!(
        debate.next_turn().await,
        Err(TurnError::TurnInProgress)
    ));
    debate.apply_command(Command::Pause).unwrap();
    gate.release.add_permits(1);
    let turn = call.await.unwrap().unwrap();
    assert_eq!(turn.index, 1);

    assert_eq!(debate.phase(), Phase::Paused);
    assert_eq!(debate.snapshot().turns.len(), 2);
    assert!(matches!(
        debate.next_turn().await,
        Err(TurnError::NotRunning(Phase::Paused))
    ));
    assert_eq!(
        debate.run(u64::MAX).await,
        RunOutcome::Suspended(Phase::Paused)
    );
    assert_eq!(debate.snapshot().turns.len(), 2);

    debate.apply_command(Command::Resume).unwrap();
    gate.release.add_permits(100);
    assert_eq!(debate.run(u64::MAX).await, RunOutcome::Ended);
    assert_eq!(debate.snapshot().turns.len(), 10);
}

#[tokio::test]
async fn end_during_a_call_stops_after_it() {
    let gate = Arc::new(Gate {
        release: tokio::sync::Semaphore::new(0),
        entered: tokio::sync::Notify::new(),
    });
    let debate = Arc::new(
        Debate::builder(reference_debate_config(10))
            .clock(fixed_clock())
            .build(&registry(), gate.clone())
            .unwrap(),
    );
    let d = debate.clone();
    let driver = tokio::spawn(async move { d.drive().await });
    gate.entered.notified().await;
    debate.apply_command(Command::End).unwrap();
    gate.release.add_permits(1);
    assert_eq!(driver.await.unwrap(), RunOutcome::Ended);
    assert_eq!(debate.snapshot().turns.len(), 2);
}

#[tokio::test]
async fn pacing_is_cut_short_by_pause() {
    let mut config = reference_debate_config(10);
    config.inter_turn_delay = Duration::from_secs(600);
    let (_, debate) = mock_debate(config, FaultPlan::Never);
    let debate = Arc::new(debate);
    let d = debate.clone();
    let driver = tokio::spawn(async move { d.run(u64::MAX).await });
    let mut rx = debate.watch_phase();
    rx.wait_for(|p| *p == Phase::Running).await.unwrap();
    tokio::time::sleep(Duration::from_millis(50)).await;
    debate.apply_command(Command::Pause).unwrap();
    let outcome = tokio::time::timeout(Duration::from_secs(5), driver)
        .await
        .expect("pause interrupts the delay")
        .unwrap();
    assert_eq!(outcome, RunOutcome::Suspended(Phase::Paused));
    assert_eq!(debate.snapshot().turns.len(), 1);
}

#[tokio::test]
async fn failure_leaves_the_completed_prefix_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let writer = Arc::new(TranscriptWriter::new(dir.path(), speakers()));
    // seven good calls, then every attempt rate limited
    let mut schedule = vec![false; 7];
    schedule.extend([true; 4]);
    let (mock, provider) = common::mock_provider(FaultPlan::scripted(schedule), 3);
    let debate = Debate::builder(reference_debate_config(30))
        .clock(fixed_clock())
        .observer(writer.clone())
        .build(&registry(), provider)
        .unwrap();
    assert_eq!(debate.run(u64::MAX).await, RunOutcome::Failed);
    assert_eq!(mock.call_count(), 11);

    let state = debate.snapshot();
    assert_eq!(state.turns.len(), 8);
    let files = writer.last_write().unwrap().unwrap();
    let doc = load_canonical(&files.canonical).unwrap();
    assert_eq!(doc.phase, Phase::Failed);
    assert_eq!(doc.turns, state.turns);
    assert!(doc.events.iter().any(
        |e| matches!(&e.kind, LogKind::Failure { message } if message.contains("rate limited"))
    ));
}

fn html_turns(html: &str) -> Vec<(u64, String, String)> {
    let re = Regex::new(
        r#"(?s)<section class="turn" data-index="(\d+)" data-speaker="([^"]*)">\s*<h2>.*?</h2>\s*<p>(.*?)</p>\s*</section>"#,
    )
    .unwrap();
    re.captures_iter(html)
        .map(|c| {
            (
                c[1].parse().unwrap(),
                html_escape::decode_html_entities(&c[2]).into_owned(),
                html_escape::decode_html_entities(&c[3]).into_owned(),
            )
        })
        .collect()
}

#[tokio::test]
async fn html_and_canonical_files_agree() {
    let dir = tempfile::tempdir().unwrap();
    let writer = Arc::new(TranscriptWriter::new(dir.path(), speakers()));
    let (_, provider) = common::mock_provider(FaultPlan::Never, 3);
    let debate = Debate::builder(reference_debate_config(60))
        .clock(fixed_clock())
        .observer(writer.clone())
        .build(&registry(), provider)
        .unwrap();
    let mut n = 0;
    debate
        .run_with_hook(u64::MAX, |d| {
            n += 1;
            if n % 7 == 0 {
                let _ = d.apply_command(Command::Inject {
                    text: format!("<script>alert('{n}')</script> & \"quotes\""),
                });
            }
        })
        .await;

    let files = writer.last_write().unwrap().unwrap();
    let name_re = Regex::new(&format!(r"^{FILE_PREFIX}\d{{8}}T\d{{6}}Z\.(html|json)$")).unwrap();
    for p in [&files.html, &files.canonical] {
        assert!(
            name_re.is_match(p.file_name().unwrap().to_str().unwrap()),
            "{p:?}"
        );
    }
    assert_eq!(files.html.file_stem(), files.canonical.file_stem());

    let doc = load_canonical(&files.canonical).unwrap();
    assert_eq!(doc.turns.len(), 60);
    assert_eq!(doc.phase, Phase::Ended);
    let html = std::fs::read_to_string(&files.html).unwrap();
    assert!(!html.contains("<script>"));
    let from_html = html_turns(&html);
    let from_json: Vec<(u64, String, String)> = doc
        .turns
        .iter()
        .map(|t| (t.index, t.speaker.to_string(), t.content.clone()))
        .collect();
    assert_eq!(from_html, from_json);

    let consumed = doc
        .events
        .iter()
        .filter(|e| matches!(e.kind, LogKind::StimulusConsumed { .. }))
        .count();
    assert!(consumed > 0);
    assert_eq!(html.matches("<aside class=\"stimulus\">").count(), consumed);
}

#[derive(Clone, Default)]
struct Capture(Arc<Mutex<Vec<u8>>>);

impl Write for Capture {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[tokio::test]
async fn api_key_never_reaches_logs_or_files() {
    const KEY: &str = "sk-live-SECRET-0123456789abcdef";
    let capture = Capture::default();
    let sink = capture.clone();
    let subscriber = tracing_subscriber::fmt()
        .with_max_level(tracing::Level::TRACE)
        .with_writer(move || sink.clone())
        .finish();
    let _guard = tracing::subscriber::set_default(subscriber);

    let hits = Arc::new(Mutex::new(0u32));
    let h = hits.clone();
    let router = Router::new().route(
        "/v1/chat/completions",
        post(move || {
            let h = h.clone();
            async move {
                let mut n = h.lock().unwrap();
                *n += 1;
                if *n == 2 {
                    return (
                        axum::http::StatusCode::TOO_MANY_REQUESTS,
                        Json(json!({"error": {"message": "slow down"}})),
                    );
                }
                (
                    axum::http::StatusCode::OK,
                    Json(json!({"choices": [{"message": {"content": "Stability first."}, "finish_reason": "stop"}]})),
                )
            }
        }),
    );
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, router).await.unwrap() });

    let key = resolve_api_key(
        &KeySource::default(),
        |var| (var == "OPENAI_API_KEY").then(|| KEY.to_owned()),
        None,
    )
    .await
    .unwrap();
    let transport = OpenAiTransport::new(&base, key, Duration::from_secs(5)).unwrap();
    tracing::debug!(?transport, "transport ready");
    let client = ChatClient::new(transport).with_policy(RetryPolicy::immediate(3));

    let dir = tempfile::tempdir().unwrap();
    let writer = Arc::new(TranscriptWriter::new(dir.path(), speakers()));
    let debate = Debate::builder(reference_debate_config(6))
        .clock(fixed_clock())
        .observer(writer.clone())
        .build(&registry(), Arc::new(client))
        .unwrap();
    assert_eq!(debate.run(u64::MAX).await, RunOutcome::Ended);
    assert_eq!(*hits.lock().unwrap(), 6);

    let logs = String::from_utf8(capture.0.lock().unwrap().clone()).unwrap();
    assert!(logs.contains("transient provider failure"), "{logs}");
    assert!(logs.contains("Secret(***)"));
    assert!(!logs.contains(KEY));
    assert!(!logs.contains("SECRET-0123"));
    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!text.contains(KEY));
    }
}

#[test]
fn reference_prompts_carry_the_context() {
    let config = reference::run_config().debate;
    let (_, debate) = mock_debate(config.clone(), FaultPlan::Never);
    for id in &config.personas {
        let prompt = debate.system_prompt(id).unwrap();
        for line in config
            .business_context
            .lines()
            .filter(|l| !l.trim().is_empty())
        {
            assert!(prompt.system_text.contains(line.trim()), "{line}");
        }
    }
}
