//! Analysis payload shared by the HTTP API and `colloquy analyze`.

use colloquy_core::analysis::{
    extract_excerpts, frequency_analysis, AnalysisError, Excerpt, FrequencyReport, KeywordSet,
};
use colloquy_core::persistence::TranscriptDocument;
use serde::{Deserialize, Serialize};

pub const DEFAULT_EXCERPT_LIMIT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisView {
    pub debate_id: String,
    pub report: FrequencyReport,
    pub excerpts: Vec<Excerpt>,
}

/// Frequency report and excerpts for a transcript. Keyword sets for
/// personas that did not take part are ignored.
pub fn analyze_document(
    doc: &TranscriptDocument,
    keyword_sets: &[KeywordSet],
    excerpt_limit: usize,
) -> Result<AnalysisView, AnalysisError> {
    let participants = doc.participants();
    let sets: Vec<KeywordSet> = keyword_sets
        .iter()
        .filter(|s| participants.contains(s.persona()))
        .cloned()
        .collect();
    Ok(AnalysisView {
        debate_id: doc.debate_id.clone(),
        report: frequency_analysis(&participants, &doc.turns, &sets)?,
        excerpts: extract_excerpts(&doc.turns, &sets, excerpt_limit),
    })
}

impl AnalysisView {
    pub fn render_text(&self) -> String {
        let mut out = self.report.render_table();
        if !self.excerpts.is_empty() {
            out.push_str("\nExcerpts\n");
            for e in &self.excerpts {
                out.push_str(&format!(
                    "  [{} #{}] {}\n",
                    e.persona, e.turn_index, e.excerpt
                ));
            }
        }
        out
    }
}
