//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use colloquy_core::clock::SteppingClock;
use colloquy_core::orchestrator::{Debate, DebateConfig};
use colloquy_core::persona::PersonaRegistry;
use colloquy_core::provider::{ChatClient, Completer, FaultPlan, MockTransport, RetryPolicy};
use colloquy_core::{reference, Turn};
use rand::rngs::StdRng;
use rand::Rng;

pub fn registry() -> PersonaRegistry {
    let mut r = PersonaRegistry::new();
    r.insert(reference::anne());
    r.insert(reference::john());
    r
}

/// Reference debate with no pacing.
pub fn reference_debate_config(turns: u32) -> DebateConfig {
    let mut c = reference::run_config().debate;
    c.total_turns = turns;
    c.inter_turn_delay = Duration::ZERO;
    c
}

pub fn mock_provider(
    plan: FaultPlan,
    retry_limit: u32,
) -> (Arc<MockTransport>, Arc<dyn Completer>) {
    let mock = Arc::new(MockTransport::new().with_faults(plan));
    let client = ChatClient::new(mock.clone()).with_policy(RetryPolicy::immediate(retry_limit));
    (mock, Arc::new(client))
}

pub fn fixed_clock() -> Arc<SteppingClock> {
    Arc::new(SteppingClock::new(
        Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap(),
        chrono::Duration::milliseconds(250),
    ))
}

pub fn mock_debate(config: DebateConfig, plan: FaultPlan) -> (Arc<MockTransport>, Debate) {
    let retry = config.retry_limit;
    let (mock, provider) = mock_provider(plan, retry);
    let debate = Debate::builder(config)
        .clock(fixed_clock())
        .build(&registry(), provider)
        .unwrap();
    (mock, debate)
}

/// Character-level tokenizer: marks each char as word or separator, then
/// splits on separators. A hyphen is a word char only between two
/// alphanumerics.
pub fn brute_tokens(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut marked = String::new();
    for (i, &c) in chars.iter().enumerate() {
        let word = c.is_alphanumeric()
            || (c == '-'
                && i > 0
                && chars[i - 1].is_alphanumeric()
                && i + 1 < chars.len()
                && chars[i + 1].is_alphanumeric());
        if word {
            marked.extend(c.to_lowercase());
        } else {
            marked.push(' ');
        }
    }
    marked
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Non-overlapping whole-token occurrences via substring search over
/// space-padded token text.
pub fn brute_phrase_count(text: &str, phrase: &str) -> usize {
    let hay = format!(" {} ", brute_tokens(text).join(" "));
    let needle = format!(" {} ", brute_tokens(phrase).join(" "));
    let mut count = 0;
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        count += 1;
        // keep the trailing space so the next match can start on it
        from += pos + needle.len() - 1;
    }
    count
}

pub const VOCAB: &[&str] = &[
    "sustainability",
    "disruptive",
    "technologies",
    "AI",
    "ai",
    "said",
    "blockchain",
    "real-time",
    "real",
    "time",
    "data",
    "predictive",
    "analytics",
    "growth",
    "innovation",
    "historical",
    "stability",
    "security",
    "conservative",
    "financial",
    "approach",
    "Growth.",
    "AI,",
    "data!",
    "-",
    "--",
    "real-time-data",
    "Sustainability;",
];

pub fn random_text(rng: &mut StdRng, max_words: usize) -> String {
    let n = rng.gen_range(0..=max_words);
    let mut words = Vec::with_capacity(n);
    for _ in 0..n {
        words.push(VOCAB[rng.gen_range(0..VOCAB.len())]);
    }
    words.join(if rng.gen_bool(0.8) { " " } else { "  " })
}

pub fn synthetic_transcript(rng: &mut StdRng, speakers: [&str; 2], max_turns: usize) -> Vec<Turn> {
    let n = rng.gen_range(0..=max_turns);
    (0..n)
        .map(|i| Turn {
            index: i as u64,
            speaker: speakers[rng.gen_range(0..2)].into(),
            content: random_text(rng, 30),
            finish_reason: colloquy_core::provider::FinishReason::Stop,
            timestamp: Utc.timestamp_opt(1_700_000_000 + i as i64, 0).unwrap(),
            attempt_count: 1,
        })
        .collect()
}
