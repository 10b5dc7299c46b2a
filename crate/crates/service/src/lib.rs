//! Operator front ends for the debate engine: an HTTP API with a
//! server-sent event stream, and the `colloquy` command line.

pub mod app;
pub mod cli;
pub mod events;
pub mod http;
pub mod provider;
pub mod report;

pub use app::{AppState, DebateHandle, ServiceError};
pub use events::{DebateEvent, EventKind, EventLog};
pub use report::{analyze_document, AnalysisView};
