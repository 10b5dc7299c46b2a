use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use colloquy_core::persona::ValidationMode;
use colloquy_core::RunOutcome;
use colloquy_service::cli::{self, RunOverrides};
use colloquy_service::provider::{build_provider, ProviderOptions};
use colloquy_service::{http, AppState};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "colloquy", version, about = "Two-persona LLM debate runner")]
struct Cli {
    #[command(subcommand)]
    command: Verb,
}

#[derive(Args)]
struct Backend {
    /// Use the deterministic offline backend.
    #[arg(long, env = "COLLOQUY_MOCK")]
    mock: bool,
    /// OpenAI-compatible endpoint, with or without the trailing /v1.
    #[arg(long, env = "OPENAI_BASE_URL")]
    base_url: Option<String>,
    /// Per-request timeout.
    #[arg(long, default_value = "60s", value_parser = humantime::parse_duration)]
    timeout: Duration,
    /// Accept persona sheets with unknown parameters (warned, not rejected).
    #[arg(long)]
    lenient: bool,
}

impl Backend {
    fn options(&self) -> ProviderOptions {
        ProviderOptions {
            mock: self.mock,
            base_url: self.base_url.clone(),
            timeout: self.timeout,
            ..ProviderOptions::default()
        }
    }

    fn mode(&self) -> ValidationMode {
        if self.lenient {
            ValidationMode::Lenient
        } else {
            ValidationMode::Strict
        }
    }
}

#[derive(Subcommand)]
enum Verb {
    /// Run one debate headless and write its transcripts.
    Run {
        /// Run config (TOML). Defaults to the built-in CFO debate.
        config: Option<PathBuf>,
        #[command(flatten)]
        backend: Backend,
        /// Override the turn budget.
        #[arg(long)]
        turns: Option<u32>,
        /// Override the pause between turns, e.g. `0s` or `15s`.
        #[arg(long, value_parser = humantime::parse_duration)]
        delay: Option<Duration>,
        #[arg(long, env = "COLLOQUY_OUTPUT_DIR", default_value = "transcripts")]
        output_dir: PathBuf,
    },
    /// Frequency analysis of a canonical transcript (.json).
    Analyze {
        transcript: PathBuf,
        /// Keyword file (TOML). Defaults to the built-in CFO keywords.
        #[arg(long)]
        keywords: Option<PathBuf>,
        /// Excerpts per persona.
        #[arg(long, default_value_t = 3)]
        limit: usize,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Check a persona sheet and show its compiled directives.
    ValidatePersona {
        file: PathBuf,
        #[arg(long)]
        lenient: bool,
    },
    /// Serve the HTTP API.
    Serve {
        /// Run config whose personas and keywords are loaded at start-up.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        backend: Backend,
        #[arg(long, env = "COLLOQUY_BIND", default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Each debate writes its files under `<dir>/<debate id>/`.
        #[arg(long, env = "COLLOQUY_OUTPUT_DIR")]
        output_dir: Option<PathBuf>,
    },
}

fn env(name: &str) -> Option<String> {
    std::env::var(name).ok()
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Verb::Run {
            config,
            backend,
            turns,
            delay,
            output_dir,
        } => {
            let run = cli::load_run(config.as_deref(), backend.mode())?;
            let provider = build_provider(&backend.options(), env).await?;
            let summary = cli::run_headless(
                run,
                &RunOverrides { turns, delay },
                provider,
                &output_dir,
                std::io::stdout(),
            )
            .await?;
            if let Some(files) = &summary.files {
                println!("HTML transcript:      {}", files.html.display());
                println!("Canonical transcript: {}", files.canonical.display());
            }
            println!("\n{}", summary.analysis.render_text());
            if summary.outcome == RunOutcome::Failed {
                anyhow::bail!("debate failed; the completed turns were saved");
            }
        }
        Verb::Analyze {
            transcript,
            keywords,
            limit,
            json,
        } => {
            let view = cli::analyze_file(&transcript, keywords.as_deref(), limit)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&view)?);
            } else {
                print!("{}", view.render_text());
            }
        }
        Verb::ValidatePersona { file, lenient } => {
            let mode = if lenient {
                ValidationMode::Lenient
            } else {
                ValidationMode::Strict
            };
            print!("{}", cli::validate_persona_file(&file, mode)?);
        }
        Verb::Serve {
            config,
            backend,
            bind,
            output_dir,
        } => {
            let run = cli::load_run(config.as_deref(), backend.mode())?;
            let provider = build_provider(&backend.options(), env).await?;
            let state = Arc::new(AppState::new(
                run.registry,
                run.keyword_sets,
                provider,
                output_dir,
            ));
            let listener = tokio::net::TcpListener::bind(bind)
                .await
                .with_context(|| format!("binding {bind}"))?;
            tracing::info!(%bind, "listening");
            axum::serve(listener, http::router(state))
                .with_graceful_shutdown(async {
                    let _ = tokio::signal::ctrl_c().await;
                })
                .await?;
        }
    }
    Ok(())
}
