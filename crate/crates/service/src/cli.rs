//! Implementations behind the `colloquy` subcommands.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use anyhow::{bail, Context};
use colloquy_core::analysis::{KeywordFile, KeywordSet};
use colloquy_core::config::{LoadedRun, RunConfig};
use colloquy_core::orchestrator::{DebateObserver, DebateState};
use colloquy_core::persistence::{load_canonical, TranscriptWriter, WrittenFiles};
use colloquy_core::persona::{
    compile_system_prompt, directive_lines, load_persona_toml, BusinessContext, ValidationMode,
};
use colloquy_core::provider::Completer;
use colloquy_core::{reference, Command, Debate, PersonaId, PersonaRegistry, RunOutcome, Turn};

use crate::report::{analyze_document, AnalysisView};

/// The built-in reference run when `path` is `None`.
pub fn load_run(path: Option<&Path>, mode: ValidationMode) -> anyhow::Result<LoadedRun> {
    match path {
        Some(p) => RunConfig::load(p, mode).with_context(|| format!("loading {}", p.display())),
        None => {
            let mut registry = PersonaRegistry::new();
            registry.insert(reference::anne());
            registry.insert(reference::john());
            Ok(LoadedRun {
                config: reference::run_config(),
                registry,
                keyword_sets: reference::keyword_sets(),
            })
        }
    }
}

pub fn load_keywords(path: Option<&Path>) -> anyhow::Result<Vec<KeywordSet>> {
    match path {
        None => Ok(reference::keyword_sets()),
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(KeywordFile::from_toml_str(&text)
                .and_then(KeywordFile::into_sets)
                .with_context(|| format!("keywords file {}", p.display()))?)
        }
    }
}

/// Prints each turn as it lands.
struct Echo<W> {
    out: Mutex<W>,
    names: BTreeMap<PersonaId, String>,
}

impl<W: Write + Send> DebateObserver for Echo<W> {
    fn turn_completed(&self, _state: &DebateState, turn: &Turn) {
        let name = self
            .names
            .get(&turn.speaker)
            .map(String::as_str)
            .unwrap_or(turn.speaker.as_str());
        let mut out = self.out.lock().unwrap();
        let _ = writeln!(out, "[{}] {name}: {}\n", turn.index, turn.content);
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOverrides {
    pub turns: Option<u32>,
    pub delay: Option<Duration>,
}

#[derive(Debug)]
pub struct RunSummary {
    pub outcome: RunOutcome,
    pub files: Option<WrittenFiles>,
    pub analysis: AnalysisView,
}

/// Runs a debate to completion, writing transcripts to `output_dir` and
/// echoing turns to `echo`. An interrupt ends the debate at the next turn
/// boundary.
pub async fn run_headless<W: Write + Send + 'static>(
    run: LoadedRun,
    overrides: &RunOverrides,
    provider: Arc<dyn Completer>,
    output_dir: &Path,
    echo: W,
) -> anyhow::Result<RunSummary> {
    let mut config = run.config.debate;
    if let Some(t) = overrides.turns {
        config.total_turns = t;
    }
    if let Some(d) = overrides.delay {
        config.inter_turn_delay = d;
    }
    let mut names = BTreeMap::new();
    for p in &config.personas {
        if let Some(spec) = run.registry.get(p) {
            names.insert(p.clone(), spec.display_name.clone());
        }
    }
    let writer = Arc::new(TranscriptWriter::new(output_dir, names.clone()));
    let debate = Arc::new(
        Debate::builder(config)
            .observer(writer.clone())
            .observer(Arc::new(Echo {
                out: Mutex::new(echo),
                names,
            }))
            .build(&run.registry, provider)?,
    );

    let d = debate.clone();
    let interrupt = tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            tracing::warn!("interrupted, ending after the current turn");
            let _ = d.apply_command(Command::End);
        }
    });
    debate.apply_command(Command::Start)?;
    let outcome = debate.drive().await;
    interrupt.abort();

    let files = match writer.last_write() {
        Some(Ok(files)) => Some(files),
        Some(Err(e)) => bail!("writing transcript: {e}"),
        None => None,
    };
    let doc = debate.with_state(|s| {
        colloquy_core::persistence::TranscriptDocument::from_state(s, BTreeMap::new())
    });
    let analysis = analyze_document(
        &doc,
        &run.keyword_sets,
        crate::report::DEFAULT_EXCERPT_LIMIT,
    )?;
    Ok(RunSummary {
        outcome,
        files,
        analysis,
    })
}

/// Analysis of a canonical transcript file.
pub fn analyze_file(
    transcript: &Path,
    keywords: Option<&Path>,
    limit: usize,
) -> anyhow::Result<AnalysisView> {
    let doc =
        load_canonical(transcript).with_context(|| format!("loading {}", transcript.display()))?;
    Ok(analyze_document(&doc, &load_keywords(keywords)?, limit)?)
}

/// Validates a persona sheet and returns a human-readable report of what
/// its compiled prompt would contain.
pub fn validate_persona_file(path: &Path, mode: ValidationMode) -> anyhow::Result<String> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let validated =
        load_persona_toml(&text, mode).with_context(|| format!("{}", path.display()))?;
    let p = &validated.persona;
    let prompt = compile_system_prompt(p, &BusinessContext::new("(business context)"))?;
    let mut out = format!(
        "{} ({}): {} parameters, {} directives\n",
        p.display_name,
        p.id,
        p.parameters.len(),
        prompt.directive_count
    );
    for w in &validated.warnings {
        out.push_str(&format!("warning: {w:?}\n"));
    }
    for line in directive_lines(&prompt.system_text) {
        out.push_str(line);
        out.push('\n');
    }
    Ok(out)
}

pub fn default_output_dir() -> PathBuf {
    PathBuf::from("transcripts")
}
