//! Answer decoding: regex extraction with fallbacks, and self-consistency
//! majority voting.

use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::normalize_answer;
use crate::error::{Error, Result};

/// Default extraction pattern; per-dataset patterns override it in config.
pub const DEFAULT_ANSWER_PATTERN: &str = r"The answer is\s*([^\n\.]+)";

fn number_pattern() -> &'static Regex {
    static NUM: OnceLock<Regex> = OnceLock::new();
    NUM.get_or_init(|| Regex::new(r"-?\d[\d,]*(?:\.\d+)?").unwrap())
}

/// Extract the task answer from a raw response.
///
/// Total by a fallback chain: the first capture of the *last* pattern match
/// (answers usually conclude a response), else the last numeric token, else
/// the trimmed response.
pub fn decode_regex(response: &str, pattern: &Regex) -> String {
    if let Some(caps) = pattern.captures_iter(response).last() {
        let text = caps
            .get(1)
            .map(|g| g.as_str())
            .unwrap_or_else(|| caps.get(0).unwrap().as_str());
        return text.trim().to_string();
    }
    if let Some(m) = number_pattern().find_iter(response).last() {
        return m.as_str().to_string();
    }
    response.trim().to_string()
}

/// Majority vote over normalized answers; ties go to the earliest sample.
/// Returns the raw text of the winning group's first occurrence.
pub fn decode_self_consistency(answers: &[String]) -> Result<String> {
    if answers.is_empty() {
        return Err(Error::validation("self-consistency needs at least one answer"));
    }
    // (normalized -> (count, first index)), scanned in sample order.
    let mut tallies: Vec<(String, usize, usize)> = Vec::new();
    for (idx, answer) in answers.iter().enumerate() {
        let norm = normalize_answer(answer);
        match tallies.iter_mut().find(|(n, _, _)| *n == norm) {
            Some((_, count, _)) => *count += 1,
            None => tallies.push((norm, 1, idx)),
        }
    }
    let (_, _, winner_first) = tallies
        .iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
        .unwrap();
    Ok(answers[*winner_first].clone())
}
