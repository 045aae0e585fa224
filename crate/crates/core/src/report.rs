//! Session reports and sweep tables.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{build_latency_record, dal, wer, LatencyMode, NORMALIZER_VERSION};
use crate::stream::{Policy, SessionConfig, SessionResult};

pub const REPORT_FORMAT: &str = "simulstream-report/1";

/// Metrics of one session. Metrics that are undefined for the session
/// (empty reference or no output) are absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub wer: Option<f64>,
    pub dal_unaware: Option<f64>,
    pub dal_aware: Option<f64>,
    pub reference_words: usize,
    pub output_words: usize,
}

pub fn session_metrics(result: &SessionResult, reference: &str) -> Result<SessionMetrics> {
    let optional = |r: Result<f64>| match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    };
    let unaware = build_latency_record(result, LatencyMode::Unaware);
    let aware = build_latency_record(result, LatencyMode::Aware);
    Ok(SessionMetrics {
        wer: optional(wer(reference, &result.transcript()))?,
        dal_unaware: optional(dal(&unaware))?,
        dal_aware: optional(dal(&aware))?,
        reference_words: crate::metrics::normalized_words(reference).len(),
        output_words: unaware.g.len(),
    })
}

/// Self-describing record of one session, written as one JSON line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub format: String,
    pub normalizer: String,
    pub model: String,
    pub source: String,
    pub config: SessionConfig,
    pub reference: String,
    pub transcript: String,
    pub metrics: SessionMetrics,
    pub session: SessionResult,
}

impl SessionReport {
    pub fn new(
        result: SessionResult,
        config: SessionConfig,
        model: &str,
        source: &str,
        reference: &str,
    ) -> Result<Self> {
        Ok(Self {
            format: REPORT_FORMAT.into(),
            normalizer: NORMALIZER_VERSION.into(),
            model: model.into(),
            source: source.into(),
            metrics: session_metrics(&result, reference)?,
            transcript: result.transcript(),
            reference: reference.into(),
            config,
            session: result,
        })
    }

    pub fn to_json_line(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)
            .map_err(|e| Error::Validation(format!("report serialization: {e}")))?;
        s.push('\n');
        Ok(s)
    }
}

/// Appends one report line, creating the file if needed.
pub fn append_report(path: impl AsRef<Path>, report: &SessionReport) -> Result<()> {
    let line = report.to_json_line()?;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    f.write_all(line.as_bytes())?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: Policy,
    pub chunk_len_s: f64,
    pub tdm: bool,
    pub metrics: SessionMetrics,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from("policy,chunk_len_s,tdm,wer,dal_unaware_s,dal_aware_s\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.3},{},{},{},{}\n",
            r.policy,
            r.chunk_len_s,
            r.tdm,
            cell(r.metrics.wer),
            cell(r.metrics.dal_unaware),
            cell(r.metrics.dal_aware),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScriptedModel, ScriptedModelConfig, ScriptedToken};
    use crate::stream::run_session;

    fn session() -> (SessionResult, String) {
        let mut cfg = ScriptedModelConfig::new(vec![
            ScriptedToken::new(" one", 0, 20),
            ScriptedToken::new(" two", 20, 40),
        ]);
        cfg.total_frames = Some(80);
        let m = ScriptedModel::new(cfg).unwrap();
        let r = run_session(&m, &SessionConfig::default(), 80).unwrap();
        (r, "one two".into())
    }

    #[test]
    fn report_line_round_trips() {
        let (r, reference) = session();
        let rep = SessionReport::new(r, SessionConfig::default(), "scripted", "mem", &reference).unwrap();
        assert_eq!(rep.metrics.wer, Some(0.0));
        let line = rep.to_json_line().unwrap();
        assert!(line.ends_with('\n') && !line[..line.len() - 1].contains('\n'));
        let back: SessionReport = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn undefined_metrics_are_absent() {
        let (r, _) = session();
        let m = session_metrics(&r, "").unwrap();
        assert_eq!(m.wer, None);
        assert!(m.dal_unaware.is_some());
    }

    #[test]
    fn csv_has_one_row_per_cell() {
        let (r, reference) = session();
        let metrics = session_metrics(&r, &reference).unwrap();
        let rows: Vec<CompareRow> = [0.5, 1.0]
            .iter()
            .map(|&c| CompareRow {
                policy: Policy::AttentionGuided,
                chunk_len_s: c,
                tdm: false,
                metrics: metrics.clone(),
            })
            .collect();
        let csv = compare_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("attention-guided,0.500,false,0.000000,"));
    }
}
