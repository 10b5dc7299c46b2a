//! Transcript statistics: turn balance, keyword frequencies and
//! keyword-anchored excerpts.
//!
//! Text is split into lowercase tokens made of alphanumeric characters.
//! A hyphen joins two tokens into one when it sits directly between
//! alphanumerics, so `real-time` is a single token. Keyword phrases are
//! tokenized the same way and match whole tokens only, left to right,
//! without overlap.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::orchestrator::Turn;
use crate::persona::PersonaId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub text: String,
    /// Byte range in the original text.
    pub span: Range<usize>,
}

pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut tokens = Vec::new();
    let mut start: Option<usize> = None;
    for (i, &(pos, c)) in chars.iter().enumerate() {
        let joins = c == '-'
            && start.is_some()
            && chars.get(i + 1).is_some_and(|(_, n)| n.is_alphanumeric());
        if c.is_alphanumeric() || joins {
            start.get_or_insert(pos);
        } else if let Some(s) = start.take() {
            tokens.push(Token {
                text: text[s..pos].to_lowercase(),
                span: s..pos,
            });
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: text[s..].to_lowercase(),
            span: s..text.len(),
        });
    }
    tokens
}

pub fn token_frequency(text: &str) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for t in tokenize(text) {
        *counts.entry(t.text).or_insert(0) += 1;
    }
    counts
}

/// Start positions (token indices) of non-overlapping matches of `phrase`.
fn phrase_matches(tokens: &[Token], phrase: &[String]) -> Vec<usize> {
    let mut hits = Vec::new();
    if phrase.is_empty() {
        return hits;
    }
    let mut i = 0;
    while i + phrase.len() <= tokens.len() {
        if tokens[i..i + phrase.len()]
            .iter()
            .zip(phrase)
            .all(|(t, p)| &t.text == p)
        {
            hits.push(i);
            i += phrase.len();
        } else {
            i += 1;
        }
    }
    hits
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("keyword set for {0} names a persona that is not in the transcript")]
    UnknownPersonaInKeywordSet(PersonaId),
    #[error("transcript has no turns")]
    EmptyTranscript,
    #[error("invalid keyword set: {0}")]
    InvalidKeywordSet(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeywordSet {
    persona: PersonaId,
    phrases: Vec<String>,
}

impl KeywordSet {
    /// Lowercases, trims and deduplicates `phrases`, keeping first occurrence order.
    pub fn new(
        persona: PersonaId,
        phrases: impl IntoIterator<Item = impl AsRef<str>>,
    ) -> Result<Self, AnalysisError> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for p in phrases {
            let p = p.as_ref().trim().to_lowercase();
            if tokenize(&p).is_empty() {
                return Err(AnalysisError::InvalidKeywordSet(format!(
                    "phrase {p:?} for {persona} has no words"
                )));
            }
            if seen.insert(p.clone()) {
                out.push(p);
            }
        }
        if out.is_empty() {
            return Err(AnalysisError::InvalidKeywordSet(format!(
                "no phrases for {persona}"
            )));
        }
        Ok(Self {
            persona,
            phrases: out,
        })
    }

    pub fn persona(&self) -> &PersonaId {
        &self.persona
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }
}

/// On-disk keyword file: `[[sets]] persona = "..." phrases = [...]`.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct KeywordFile {
    pub sets: Vec<RawKeywordSet>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct RawKeywordSet {
    pub persona: PersonaId,
    pub phrases: Vec<String>,
}

impl KeywordFile {
    pub fn from_toml_str(text: &str) -> Result<Self, AnalysisError> {
        toml::from_str(text).map_err(|e| AnalysisError::InvalidKeywordSet(e.to_string()))
    }

    pub fn into_sets(self) -> Result<Vec<KeywordSet>, AnalysisError> {
        self.sets
            .into_iter()
            .map(|s| KeywordSet::new(s.persona, s.phrases))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnCount {
    pub turn_index: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordCount {
    pub phrase: String,
    pub total: usize,
    /// Turns with at least one occurrence.
    pub per_turn: Vec<TurnCount>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonaFrequency {
    pub persona: PersonaId,
    pub turn_count: usize,
    /// Fraction of all turns; `None` for an empty transcript.
    pub balance: Option<f64>,
    pub keywords: Vec<KeywordCount>,
    pub keyword_total: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyReport {
    pub total_turns: usize,
    pub personas: Vec<PersonaFrequency>,
}

impl FrequencyReport {
    pub fn persona(&self, id: &PersonaId) -> Option<&PersonaFrequency> {
        self.personas.iter().find(|p| &p.persona == id)
    }

    pub fn count(&self, id: &PersonaId, phrase: &str) -> Option<usize> {
        self.persona(id)?
            .keywords
            .iter()
            .find(|k| k.phrase == phrase)
            .map(|k| k.total)
    }

    /// Plain-text table for terminals.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<12} {:>6} {:>8}", "Persona", "Turns", "Balance");
        for p in &self.personas {
            let balance = p
                .balance
                .map(|b| format!("{b:.3}"))
                .unwrap_or_else(|| "n/a".into());
            let _ = writeln!(
                out,
                "{:<12} {:>6} {:>8}",
                p.persona.as_str(),
                p.turn_count,
                balance
            );
        }
        for p in self.personas.iter().filter(|p| !p.keywords.is_empty()) {
            let _ = writeln!(
                out,
                "\nKeywords for {} (total {})",
                p.persona, p.keyword_total
            );
            for k in &p.keywords {
                let _ = writeln!(
                    out,
                    "  {:<36} {:>5}  in {} turn(s)",
                    k.phrase,
                    k.total,
                    k.per_turn.len()
                );
            }
        }
        out
    }
}

fn phrase_tokens(phrase: &str) -> Vec<String> {
    tokenize(phrase).into_iter().map(|t| t.text).collect()
}

/// Counts each persona's keyword phrases within that persona's own turns.
pub fn frequency_analysis(
    participants: &[PersonaId],
    turns: &[Turn],
    keyword_sets: &[KeywordSet],
) -> Result<FrequencyReport, AnalysisError> {
    for set in keyword_sets {
        if !participants.contains(&set.persona) {
            return Err(AnalysisError::UnknownPersonaInKeywordSet(
                set.persona.clone(),
            ));
        }
    }
    let mut order: Vec<PersonaId> = participants.to_vec();
    for t in turns {
        if !order.contains(&t.speaker) {
            order.push(t.speaker.clone());
        }
    }

    let total = turns.len();
    let tokenized: Vec<Vec<Token>> = turns.iter().map(|t| tokenize(&t.content)).collect();
    let personas = order
        .into_iter()
        .map(|persona| {
            let own: Vec<(u64, &[Token])> = turns
                .iter()
                .zip(&tokenized)
                .filter(|(t, _)| t.speaker == persona)
                .map(|(t, toks)| (t.index, toks.as_slice()))
                .collect();
            let keywords: Vec<KeywordCount> = keyword_sets
                .iter()
                .filter(|s| s.persona == persona)
                .flat_map(|s| s.phrases.iter())
                .map(|phrase| {
                    let needle = phrase_tokens(phrase);
                    let per_turn: Vec<TurnCount> = own
                        .iter()
                        .map(|(idx, toks)| TurnCount {
                            turn_index: *idx,
                            count: phrase_matches(toks, &needle).len(),
                        })
                        .filter(|c| c.count > 0)
                        .collect();
                    KeywordCount {
                        phrase: phrase.clone(),
                        total: per_turn.iter().map(|c| c.count).sum(),
                        per_turn,
                    }
                })
                .collect();
            PersonaFrequency {
                turn_count: own.len(),
                balance: (total > 0).then(|| own.len() as f64 / total as f64),
                keyword_total: keywords.iter().map(|k| k.total).sum(),
                keywords,
                persona,
            }
        })
        .collect();

    Ok(FrequencyReport {
        total_turns: total,
        personas,
    })
}

/// Fraction of turns spoken by each persona that spoke at least once.
pub fn turn_balance(turns: &[Turn]) -> Result<BTreeMap<PersonaId, f64>, AnalysisError> {
    if turns.is_empty() {
        return Err(AnalysisError::EmptyTranscript);
    }
    let mut counts: BTreeMap<PersonaId, usize> = BTreeMap::new();
    for t in turns {
        *counts.entry(t.speaker.clone()).or_insert(0) += 1;
    }
    let n = turns.len() as f64;
    Ok(counts.into_iter().map(|(p, c)| (p, c as f64 / n)).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Excerpt {
    pub persona: PersonaId,
    pub turn_index: u64,
    pub phrase: String,
    /// Turn text with the first match wrapped in `**`.
    pub excerpt: String,
}

/// Up to `limit` turns per keyword set whose speaker used one of the set's
/// phrases, in turn order.
pub fn extract_excerpts(turns: &[Turn], keyword_sets: &[KeywordSet], limit: usize) -> Vec<Excerpt> {
    let mut out = Vec::new();
    for set in keyword_sets {
        let needles: Vec<(&String, Vec<String>)> =
            set.phrases.iter().map(|p| (p, phrase_tokens(p))).collect();
        let mut taken = 0;
        for turn in turns.iter().filter(|t| t.speaker == set.persona) {
            if taken >= limit {
                break;
            }
            let tokens = tokenize(&turn.content);
            // earliest match in the turn; ties go to the longer phrase
            let best = needles
                .iter()
                .filter_map(|(phrase, needle)| {
                    phrase_matches(&tokens, needle).first().map(|&start| {
                        (
                            start,
                            std::cmp::Reverse(needle.len()),
                            *phrase,
                            needle.len(),
                        )
                    })
                })
                .min();
            if let Some((start, _, phrase, len)) = best {
                let from = tokens[start].span.start;
                let to = tokens[start + len - 1].span.end;
                let c = &turn.content;
                out.push(Excerpt {
                    persona: set.persona.clone(),
                    turn_index: turn.index,
                    phrase: phrase.clone(),
                    excerpt: format!("{}**{}**{}", &c[..from], &c[from..to], &c[to..]),
                });
                taken += 1;
            }
        }
    }
    out
}
