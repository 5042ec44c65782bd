//! Caption cleanup: repair common LLM artifacts, drop what cannot be saved.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub const DEFAULT_MARKERS: &[&str] = &["###", "Raw:", "Caption:"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefineAction {
    Kept,
    Fixed,
    Deleted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefineReason {
    Clean,
    Whitespace,
    Artifact,
    DuplicateSentence,
    ArtifactAndDuplicate,
    Blank,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefineOutcome {
    pub action: RefineAction,
    pub text: Option<String>,
    pub reason: RefineReason,
}

/// Collapses whitespace and folds case; the key used for duplicate checks.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Splits after `.`, `!` or `?` when followed by whitespace. Pieces are
/// trimmed and empty ones dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = iter.peek() {
                if next.is_whitespace() {
                    out.push(&text[start..i + c.len_utf8()]);
                    start = i + c.len_utf8();
                }
            }
        }
    }
    out.push(&text[start..]);
    out.into_iter().map(str::trim).filter(|s| !s.is_empty()).collect()
}

pub fn fix_caption(text: &str) -> RefineOutcome {
    fix_caption_with(text, DEFAULT_MARKERS)
}

pub fn fix_caption_with<S: AsRef<str>>(text: &str, markers: &[S]) -> RefineOutcome {
    let cut = markers.iter().filter_map(|m| text.find(m.as_ref())).min();
    let body = cut.map_or(text, |c| &text[..c]);
    let mut seen = HashSet::new();
    let mut dropped = 0;
    let mut kept = Vec::new();
    for s in split_sentences(body) {
        if seen.insert(normalize(s)) {
            kept.push(s);
        } else {
            dropped += 1;
        }
    }
    let fixed = kept.join(" ");
    if fixed.trim().is_empty() {
        return RefineOutcome { action: RefineAction::Deleted, text: None, reason: RefineReason::Blank };
    }
    if fixed == text {
        return RefineOutcome { action: RefineAction::Kept, text: Some(fixed), reason: RefineReason::Clean };
    }
    let reason = match (cut.is_some(), dropped > 0) {
        (true, true) => RefineReason::ArtifactAndDuplicate,
        (true, false) => RefineReason::Artifact,
        (false, true) => RefineReason::DuplicateSentence,
        (false, false) => RefineReason::Whitespace,
    };
    RefineOutcome { action: RefineAction::Fixed, text: Some(fixed), reason }
}

/// Indices of captions that repeat an earlier one after normalization.
pub fn dedupe_captions<S: AsRef<str>>(captions: &[S]) -> Vec<usize> {
    let mut seen = HashSet::new();
    captions.iter().enumerate().filter(|(_, c)| !seen.insert(normalize(c.as_ref()))).map(|(i, _)| i).collect()
}
