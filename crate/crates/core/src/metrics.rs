//! Text normalization, edit distance, WER and Differentiable Average Lagging.

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory as Gc};

use crate::error::{Error, Result};
use crate::stream::SessionResult;

/// Recorded in reports so WERs from different normalizers are not mixed.
pub const NORMALIZER_VERSION: &str = "simple-v1";

fn is_punct_or_symbol(c: char) -> bool {
    matches!(
        get_general_category(c),
        Gc::ConnectorPunctuation
            | Gc::DashPunctuation
            | Gc::OpenPunctuation
            | Gc::ClosePunctuation
            | Gc::InitialPunctuation
            | Gc::FinalPunctuation
            | Gc::OtherPunctuation
            | Gc::MathSymbol
            | Gc::CurrencySymbol
            | Gc::ModifierSymbol
            | Gc::OtherSymbol
    )
}

/// Lowercases, deletes punctuation and symbols, collapses whitespace.
pub fn normalize_text(s: &str) -> String {
    let lowered = s.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.chars() {
        if is_punct_or_symbol(c) {
            continue;
        }
        if c.is_whitespace() {
            pending_space = !out.is_empty();
            continue;
        }
        if pending_space {
            out.push(' ');
            pending_space = false;
        }
        out.push(c);
    }
    out
}

/// Levenshtein distance with unit costs.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn normalized_words(s: &str) -> Vec<String> {
    normalize_text(s)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Word error rate of `hyp` against `reference`, both normalized.
pub fn wer(reference: &str, hyp: &str) -> Result<f64> {
    let r = normalized_words(reference);
    if r.is_empty() {
        return Err(Error::UndefinedMetric(
            "reference is empty after normalization".into(),
        ));
    }
    let h = normalized_words(hyp);
    Ok(edit_distance(&r, &h) as f64 / r.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatencyMode {
    Unaware,
    Aware,
}

/// Per-token emission times for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    /// Emission time of each token in seconds from stream start.
    pub g: Vec<f64>,
    pub source_seconds: f64,
    pub mode: LatencyMode,
}

impl LatencyRecord {
    pub fn validate(&self) -> Result<()> {
        if self.g.is_empty() {
            return Err(Error::UndefinedMetric("no emitted tokens".into()));
        }
        if !(self.source_seconds.is_finite() && self.source_seconds > 0.0) {
            return Err(Error::Validation("source duration must be positive".into()));
        }
        if self.g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite emission time".into()));
        }
        if self.g.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Validation("emission times must be non-decreasing".into()));
        }
        Ok(())
    }
}

/// Differentiable Average Lagging.
///
/// With `d = source / N_t`, the adjusted times are `g'(1) = g(1)` and
/// `g'(t) = max(g(t), g'(t-1) + d)`; DAL is the mean of `g'(t) - (t-1) d`.
pub fn dal(record: &LatencyRecord) -> Result<f64> {
    record.validate()?;
    let n = record.g.len() as f64;
    let d = record.source_seconds / n;
    let mut prev = f64::NEG_INFINITY;
    let mut total = 0.0;
    for (t, &g) in record.g.iter().enumerate() {
        let adjusted = if t == 0 { g } else { g.max(prev + d) };
        total += adjusted - t as f64 * d;
        prev = adjusted;
    }
    Ok(total / n)
}

/// Per-word emission times of a finished session. Tokens are grouped into
/// words at whitespace-led tokens; a word is emitted with its last token and
/// contributes one entry per normalized word it yields.
pub fn build_latency_record(result: &SessionResult, mode: LatencyMode) -> LatencyRecord {
    let mut g = Vec::new();
    let mut text = String::new();
    let mut time = 0.0f64;
    let flush = |text: &mut String, time: f64, g: &mut Vec<f64>| {
        let n = normalized_words(text).len();
        g.extend(std::iter::repeat_n(time, n));
        text.clear();
    };
    for t in &result.committed {
        if t.text.starts_with(char::is_whitespace) && !text.is_empty() {
            flush(&mut text, time, &mut g);
        }
        text.push_str(&t.text);
        time = match mode {
            LatencyMode::Unaware => t.unaware_s,
            LatencyMode::Aware => t.aware_s,
        };
    }
    flush(&mut text, time, &mut g);
    LatencyRecord {
        g,
        source_seconds: result.stream_seconds,
        mode,
    }
}
