//! Dataset ingestion, canonical example types, and answer-correctness metrics.
//!
//! Datasets are UTF-8 files with one JSON object per line. Each record is a
//! flat object with keys `question`, `rationale` (optional for validation and
//! test splits), and `answer`. Ids are assigned in file order starting at 0,
//! so two loads of the same file always agree.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A training triplet: the unit being selected into prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub id: u32,
    pub question: String,
    pub rationale: String,
    pub answer: String,
}

/// A held-out example used to measure subset losses during selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationExample {
    pub id: u32,
    pub input: String,
    pub gold: String,
}

/// A test example used only for final evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestExample {
    pub id: u32,
    pub input: String,
    pub gold: String,
}

/// Which correctness metric a dataset is scored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    ExactMatch,
    CoverEm,
}

impl Metric {
    /// 1 if `prediction` is correct against `gold` under this metric.
    pub fn score(self, prediction: &str, gold: &str) -> bool {
        match self {
            Metric::ExactMatch => exact_match(prediction, gold),
            Metric::CoverEm => cover_em(prediction, gold),
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact-match" | "em" => Ok(Metric::ExactMatch),
            "cover-em" => Ok(Metric::CoverEm),
            other => Err(Error::Usage(format!(
                "unknown metric {other:?} (expected exact-match or cover-em)"
            ))),
        }
    }
}

#[derive(Deserialize)]
struct RawRecord {
    question: Option<String>,
    rationale: Option<String>,
    answer: Option<String>,
}

fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: RawRecord = serde_json::from_str(line)
            .map_err(|e| Error::data(path, idx + 1, format!("malformed record: {e}")))?;
        records.push(record);
    }
    Ok(records)
}

fn require_field(
    path: &Path,
    line: usize,
    name: &str,
    value: Option<String>,
) -> Result<String> {
    match value {
        Some(v) if !v.trim().is_empty() => Ok(v),
        Some(_) => Err(Error::data(path, line, format!("empty field {name:?}"))),
        None => Err(Error::data(path, line, format!("missing field {name:?}"))),
    }
}

/// Load the training pool. Ids are assigned 0..n-1 in file order.
pub fn load_exemplars(path: impl AsRef<Path>) -> Result<Vec<Exemplar>> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for (idx, record) in read_records(path)?.into_iter().enumerate() {
        let line = idx + 1;
        out.push(Exemplar {
            id: idx as u32,
            question: require_field(path, line, "question", record.question)?,
            rationale: record.rationale.unwrap_or_default(),
            answer: require_field(path, line, "answer", record.answer)?,
        });
    }
    Ok(out)
}

fn load_pairs(path: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (idx, record) in read_records(path)?.into_iter().enumerate() {
        let line = idx + 1;
        let input = require_field(path, line, "question", record.question)?;
        let gold = require_field(path, line, "answer", record.answer)?;
        out.push((input, gold));
    }
    Ok(out)
}

/// Load the validation split, capped to `m` examples.
///
/// By default the first `m` records are taken so repeated runs see the same
/// split; passing `sample_seed` draws a uniform sample of size `m` instead.
pub fn load_validation(
    path: impl AsRef<Path>,
    m: usize,
    sample_seed: Option<u64>,
) -> Result<Vec<ValidationExample>> {
    let path = path.as_ref();
    let pairs = load_pairs(path)?;
    if m == 0 {
        return Err(Error::validation("validation size m must be >= 1"));
    }
    if pairs.len() < m {
        return Err(Error::validation(format!(
            "validation file {} has {} records, need at least {m}",
            path.display(),
            pairs.len()
        )));
    }
    let chosen: Vec<(String, String)> = match sample_seed {
        None => pairs.into_iter().take(m).collect(),
        Some(seed) => {
            let picks = crate::seeded::sample_without_replacement(seed, pairs.len(), m);
            let mut sorted = picks;
            sorted.sort_unstable();
            sorted.into_iter().map(|i| pairs[i].clone()).collect()
        }
    };
    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(id, (input, gold))| ValidationExample {
            id: id as u32,
            input,
            gold,
        })
        .collect())
}

/// Load the test split in file order.
pub fn load_test(path: impl AsRef<Path>) -> Result<Vec<TestExample>> {
    let path = path.as_ref();
    Ok(load_pairs(path)?
        .into_iter()
        .enumerate()
        .map(|(id, (input, gold))| TestExample {
            id: id as u32,
            input,
            gold,
        })
        .collect())
}

/// Canonical answer normalization shared by both metrics.
///
/// Steps, in order: trim whitespace, lowercase, strip trailing punctuation
/// (`. , ; : ! ?`) and whitespace, remove commas sitting between two digits
/// (thousands separators). Sharing one normalization keeps the
/// exact-match ⇒ cover-EM implication intact.
pub fn normalize_answer(text: &str) -> String {
    let lowered = text.trim().to_lowercase();
    let stripped = lowered.trim_end_matches(|c: char| {
        c.is_whitespace() || matches!(c, '.' | ',' | ';' | ':' | '!' | '?')
    });

    let chars: Vec<char> = stripped.chars().collect();
    let mut out = String::with_capacity(chars.len());
    for (i, &c) in chars.iter().enumerate() {
        if c == ','
            && i > 0
            && i + 1 < chars.len()
            && chars[i - 1].is_ascii_digit()
            && chars[i + 1].is_ascii_digit()
        {
            continue;
        }
        out.push(c);
    }
    out
}

/// Exact match: 1 iff the normalized strings are identical.
pub fn exact_match(prediction: &str, gold: &str) -> bool {
    normalize_answer(prediction) == normalize_answer(gold)
}

fn is_token_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Cover-EM: 1 iff the normalized gold occurs in the normalized prediction
/// at token boundaries.
///
/// Boundary containment rather than raw substring keeps "14" from matching
/// gold "4" while still accepting "4 hours" against gold "4".
pub fn cover_em(prediction: &str, gold: &str) -> bool {
    let pred = normalize_answer(prediction);
    let gold = normalize_answer(gold);
    if gold.is_empty() {
        return pred.is_empty();
    }
    let pred_chars: Vec<char> = pred.chars().collect();
    let gold_chars: Vec<char> = gold.chars().collect();
    if gold_chars.len() > pred_chars.len() {
        return false;
    }
    for start in 0..=pred_chars.len() - gold_chars.len() {
        if pred_chars[start..start + gold_chars.len()] != gold_chars[..] {
            continue;
        }
        let left_ok = start == 0 || !is_token_char(pred_chars[start - 1]);
        let end = start + gold_chars.len();
        let right_ok = end == pred_chars.len() || !is_token_char(pred_chars[end]);
        if left_ok && right_ok {
            return true;
        }
    }
    false
}
