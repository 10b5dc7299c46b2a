//! Transcript files.
//!
//! Each run produces a pair of files sharing a UTC timestamp stem:
//! `GPTconversation_<YYYYMMDDTHHMMSSZ>.html` for reading and
//! `GPTconversation_<YYYYMMDDTHHMMSSZ>.json`, the lossless versioned record
//! the analysis tools load. Both are replaced atomically on every write.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::orchestrator::{
    DebateConfig, DebateObserver, DebateState, LogEntry, LogKind, Phase, Turn,
};
use crate::persona::PersonaId;

pub const SCHEMA_VERSION: u32 = 1;
pub const FILE_PREFIX: &str = "GPTconversation_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptDocument {
    pub schema_version: u32,
    pub debate_id: String,
    pub config: DebateConfig,
    pub model_id: String,
    /// Display names by persona id.
    pub speakers: BTreeMap<PersonaId, String>,
    pub phase: Phase,
    pub started_at: DateTime<Utc>,
    pub ended_at: Option<DateTime<Utc>>,
    pub turns: Vec<Turn>,
    pub events: Vec<LogEntry>,
}

impl TranscriptDocument {
    pub fn from_state(state: &DebateState, speakers: BTreeMap<PersonaId, String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            debate_id: state.id.clone(),
            model_id: state.config.decoding.model_id.clone(),
            config: state.config.clone(),
            speakers,
            phase: state.phase,
            started_at: state.started_at.unwrap_or(state.created_at),
            ended_at: state.ended_at,
            turns: state.turns.clone(),
            events: state.events.clone(),
        }
    }

    pub fn display_name<'a>(&'a self, id: &'a PersonaId) -> &'a str {
        self.speakers
            .get(id)
            .map(String::as_str)
            .unwrap_or(id.as_str())
    }

    /// Participants in speaking order.
    pub fn participants(&self) -> [PersonaId; 2] {
        self.config.personas.clone()
    }
}

#[derive(Debug, Error)]
pub enum PersistenceError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema version {found:?} is not supported (expected {expected})")]
    SchemaVersionMismatch { found: Option<u64>, expected: u32 },
    #[error("malformed transcript: {0}")]
    Parse(String),
}

/// `YYYYMMDDTHHMMSSZ` in UTC.
pub fn compact_timestamp(t: DateTime<Utc>) -> String {
    t.format("%Y%m%dT%H%M%SZ").to_string()
}

pub fn html_file_name(started_at: DateTime<Utc>) -> String {
    format!("{FILE_PREFIX}{}.html", compact_timestamp(started_at))
}

pub fn canonical_file_name(started_at: DateTime<Utc>) -> String {
    format!("{FILE_PREFIX}{}.json", compact_timestamp(started_at))
}

fn write_atomic(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf, PersistenceError> {
    std::fs::create_dir_all(dir)?;
    let target = dir.join(name);
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(&target).map_err(|e| e.error)?;
    Ok(target)
}

fn esc(text: &str) -> String {
    html_escape::encode_safe(text).into_owned()
}

pub fn render_html(doc: &TranscriptDocument) -> String {
    let mut out = String::new();
    let title = format!("Debate {}", doc.debate_id);
    let _ = write!(
        out,
        "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n<title>{}</title>\n</head>\n<body>\n",
        esc(&title)
    );
    let _ = write!(
        out,
        "<header class=\"run\">\n<h1>{}</h1>\n<dl>\n",
        esc(&title)
    );
    let ended = doc.ended_at.map(|t| t.to_rfc3339()).unwrap_or_default();
    for (k, v) in [
        ("Model", doc.model_id.clone()),
        ("Started", doc.started_at.to_rfc3339()),
        ("Ended", ended),
        ("Phase", doc.phase.to_string()),
        ("Turns", doc.turns.len().to_string()),
    ] {
        let _ = writeln!(out, "<dt>{k}</dt><dd>{}</dd>", esc(&v));
    }
    out.push_str("</dl>\n</header>\n<main>\n");

    // interjections are shown just before the turn whose prompt carried them
    let mut stimuli: BTreeMap<u64, Vec<&str>> = BTreeMap::new();
    for e in &doc.events {
        if let LogKind::StimulusConsumed { text, turn_index } = &e.kind {
            stimuli.entry(*turn_index).or_default().push(text);
        }
    }
    for turn in &doc.turns {
        for text in stimuli.get(&turn.index).into_iter().flatten() {
            let _ = writeln!(
                out,
                "<aside class=\"stimulus\"><strong>Human interjection:</strong> {}</aside>",
                esc(text)
            );
        }
        let _ = write!(
            out,
            "<section class=\"turn\" data-index=\"{}\" data-speaker=\"{}\">\n<h2>{} <span class=\"index\">#{}</span></h2>\n<p>{}</p>\n</section>\n",
            turn.index,
            esc(turn.speaker.as_str()),
            esc(doc.display_name(&turn.speaker)),
            turn.index,
            esc(&turn.content)
        );
    }
    out.push_str("</main>\n</body>\n</html>\n");
    out
}

pub fn write_html(doc: &TranscriptDocument, dir: &Path) -> Result<PathBuf, PersistenceError> {
    write_atomic(
        dir,
        &html_file_name(doc.started_at),
        render_html(doc).as_bytes(),
    )
}

pub fn write_canonical(doc: &TranscriptDocument, dir: &Path) -> Result<PathBuf, PersistenceError> {
    let json =
        serde_json::to_vec_pretty(doc).map_err(|e| PersistenceError::Parse(e.to_string()))?;
    write_atomic(dir, &canonical_file_name(doc.started_at), &json)
}

pub fn parse_canonical(text: &str) -> Result<TranscriptDocument, PersistenceError> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| PersistenceError::Parse(e.to_string()))?;
    let found = value.get("schema_version").and_then(Value::as_u64);
    if found != Some(u64::from(SCHEMA_VERSION)) {
        return Err(PersistenceError::SchemaVersionMismatch {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| PersistenceError::Parse(e.to_string()))
}

pub fn load_canonical(path: &Path) -> Result<TranscriptDocument, PersistenceError> {
    parse_canonical(&std::fs::read_to_string(path)?)
}

/// Paths of the two files belonging to one run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrittenFiles {
    pub html: PathBuf,
    pub canonical: PathBuf,
}

pub fn write_both(doc: &TranscriptDocument, dir: &Path) -> Result<WrittenFiles, PersistenceError> {
    Ok(WrittenFiles {
        canonical: write_canonical(doc, dir)?,
        html: write_html(doc, dir)?,
    })
}

/// Observer that rewrites the run's files after every completed turn and
/// phase change, so the canonical file always holds the completed prefix.
pub struct TranscriptWriter {
    dir: PathBuf,
    speakers: BTreeMap<PersonaId, String>,
    last: Mutex<Option<Result<WrittenFiles, String>>>,
}

impl TranscriptWriter {
    pub fn new(dir: impl Into<PathBuf>, speakers: BTreeMap<PersonaId, String>) -> Self {
        Self {
            dir: dir.into(),
            speakers,
            last: Mutex::new(None),
        }
    }

    /// Outcome of the most recent write.
    pub fn last_write(&self) -> Option<Result<WrittenFiles, String>> {
        self.last.lock().unwrap().clone()
    }

    fn flush(&self, state: &DebateState) {
        let doc = TranscriptDocument::from_state(state, self.speakers.clone());
        let outcome = write_both(&doc, &self.dir).map_err(|e| e.to_string());
        if let Err(e) = &outcome {
            tracing::error!(debate = %state.id, error = %e, "failed to write transcript");
        }
        *self.last.lock().unwrap() = Some(outcome);
    }
}

impl DebateObserver for TranscriptWriter {
    fn phase_changed(&self, state: &DebateState, _from: Phase, _to: Phase) {
        self.flush(state);
    }

    fn turn_completed(&self, state: &DebateState, _turn: &Turn) {
        self.flush(state);
    }
}

#[cfg(test)]
mod tests {
    use std::time::Duration;

    use chrono::TimeZone;
    use proptest::prelude::*;

    use super::*;
    use crate::orchestrator::Command;
    use crate::provider::FinishReason;

    fn at(s: i64) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap() + chrono::Duration::seconds(s)
    }

    fn doc(turns: Vec<Turn>) -> TranscriptDocument {
        let mut config = DebateConfig::new("anne".into(), "john".into(), "ctx", "q?");
        config.inter_turn_delay = Duration::ZERO;
        TranscriptDocument {
            schema_version: SCHEMA_VERSION,
            debate_id: "d1".into(),
            model_id: config.decoding.model_id.clone(),
            config,
            speakers: [
                ("anne".into(), "Anne".into()),
                ("john".into(), "John".into()),
            ]
            .into_iter()
            .collect(),
            phase: Phase::Ended,
            started_at: at(0),
            ended_at: Some(at(60)),
            turns,
            events: vec![],
        }
    }

    fn turn(i: u64, content: &str) -> Turn {
        Turn {
            index: i,
            speaker: if i.is_multiple_of(2) {
                "anne".into()
            } else {
                "john".into()
            },
            content: content.into(),
            finish_reason: FinishReason::Stop,
            timestamp: at(i as i64),
            attempt_count: 1,
        }
    }

    #[test]
    fn file_names() {
        assert_eq!(
            html_file_name(at(0)),
            "GPTconversation_20240301T120000Z.html"
        );
        assert_eq!(
            canonical_file_name(at(0)),
            "GPTconversation_20240301T120000Z.json"
        );
    }

    #[test]
    fn empty_transcript_html() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_html(&doc(vec![]), dir.path()).unwrap();
        assert_eq!(
            path.file_name().unwrap(),
            "GPTconversation_20240301T120000Z.html"
        );
        let html = std::fs::read_to_string(path).unwrap();
        assert!(html.contains("<dt>Turns</dt><dd>0</dd>"));
        assert!(!html.contains("class=\"turn\""));
        assert!(html.trim_end().ends_with("</html>"));
    }

    #[test]
    fn markup_is_escaped() {
        let html = render_html(&doc(vec![turn(0, "<script>alert(\"x\") & 'y'</script>")]));
        assert!(!html.contains("<script>"));
        assert!(html.contains(
            "&lt;script&gt;alert(&quot;x&quot;) &amp; &#x27;y&#x27;&lt;&#x2F;script&gt;"
        ));
    }

    #[test]
    fn stimuli_rendered_before_their_turn() {
        let mut d = doc(vec![turn(0, "a"), turn(1, "b")]);
        d.events.push(LogEntry {
            at_turn: 1,
            timestamp: at(1),
            kind: LogKind::StimulusConsumed {
                text: "rate hike".into(),
                turn_index: 1,
            },
        });
        let html = render_html(&d);
        let aside = html.find("rate hike").unwrap();
        let t1 = html.find("data-index=\"1\"").unwrap();
        let t0 = html.find("data-index=\"0\"").unwrap();
        assert!(t0 < aside && aside < t1);
    }

    #[test]
    fn unknown_schema_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_canonical(&doc(vec![]), dir.path()).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replace("\"schema_version\": 1", "\"schema_version\": 99");
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_canonical(&path),
            Err(PersistenceError::SchemaVersionMismatch {
                found: Some(99),
                expected: 1
            })
        ));
        assert!(matches!(
            parse_canonical("{}"),
            Err(PersistenceError::SchemaVersionMismatch { found: None, .. })
        ));
        assert!(matches!(
            parse_canonical("not json"),
            Err(PersistenceError::Parse(_))
        ));
        assert!(matches!(
            parse_canonical("{\"schema_version\": 1}"),
            Err(PersistenceError::Parse(_))
        ));
    }

    #[test]
    fn overwrite_leaves_no_temp_files() {
        let dir = tempfile::tempdir().unwrap();
        write_both(&doc(vec![turn(0, "a")]), dir.path()).unwrap();
        write_both(&doc(vec![turn(0, "a"), turn(1, "b")]), dir.path()).unwrap();
        let names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names.len(), 2, "{names:?}");
        let loaded =
            load_canonical(&dir.path().join("GPTconversation_20240301T120000Z.json")).unwrap();
        assert_eq!(loaded.turns.len(), 2);
    }

    fn arb_turn() -> impl Strategy<Value = Turn> {
        (
            0u64..1000,
            prop_oneof![Just("anne"), Just("john")],
            any::<String>(),
            prop_oneof![
                Just(FinishReason::Stop),
                Just(FinishReason::Length),
                Just(FinishReason::Error)
            ],
            0i64..4_000_000_000,
            0u32..1_000_000_000,
            0u32..5,
        )
            .prop_map(
                |(index, speaker, content, finish_reason, secs, nanos, attempt_count)| Turn {
                    index,
                    speaker: speaker.into(),
                    content,
                    finish_reason,
                    timestamp: Utc.timestamp_opt(secs, nanos).unwrap(),
                    attempt_count,
                },
            )
    }

    fn arb_doc() -> impl Strategy<Value = TranscriptDocument> {
        (
            prop::collection::vec(arb_turn(), 0..8),
            any::<String>(),
            (0.0f64..=2.0, 0.0f64..=2.0, 1u32..=4096),
            (any::<u64>(), 0u32..1_000_000_000),
            any::<String>(),
        )
            .prop_map(|(turns, text, (t, p, m), (secs, nanos), stim)| {
                let mut d = doc(turns);
                d.config.business_context = text;
                d.config.decoding.temperature = t;
                d.config.decoding.top_p = p;
                d.config.decoding.max_tokens = m;
                d.config.inter_turn_delay = Duration::new(secs % 1_000_000, nanos);
                d.events.push(LogEntry {
                    at_turn: 0,
                    timestamp: at(0),
                    kind: LogKind::Command {
                        command: Command::Inject { text: stim },
                        accepted: true,
                    },
                });
                d
            })
    }

    proptest! {
        #[test]
        fn canonical_round_trip(d in arb_doc()) {
            let json = serde_json::to_string_pretty(&d).unwrap();
            prop_assert_eq!(parse_canonical(&json).unwrap(), d);
        }
    }
}
