//! Label and prompt normalisation.

use alloc::string::String;
use alloc::vec::Vec;

/// Trims and collapses internal whitespace runs to a single space.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// Lowercase, trimmed, whitespace-collapsed form used for every object label.
pub fn normalize_label(label: &str) -> String {
    collapse_whitespace(&label.to_lowercase())
}

/// Normalises labels and drops empties and repeats, keeping first occurrence order.
pub fn dedup_labels<I, S>(labels: I) -> Vec<String>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut out: Vec<String> = Vec::new();
    for label in labels {
        let norm = normalize_label(label.as_ref());
        if !norm.is_empty() && !out.contains(&norm) {
            out.push(norm);
        }
    }
    out
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "on", "onto", "in", "into", "to", "of", "from", "and", "or", "it", "its",
    "is", "are", "be", "with", "at", "by", "for", "up", "then", "this", "that", "these", "those",
    "please", "there", "here", "over", "under", "inside", "out", "off",
];

/// Lowercased alphanumeric words of `text` with function words removed.
pub fn content_words(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out: Vec<String> = Vec::new();
    for word in lower.split(|c: char| !c.is_alphanumeric()) {
        if word.is_empty() || STOPWORDS.contains(&word) {
            continue;
        }
        let word = String::from(word);
        if !out.contains(&word) {
            out.push(word);
        }
    }
    out
}
