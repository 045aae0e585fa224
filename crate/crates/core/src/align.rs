//! Attention-guided stopping: alignment-head aggregation, median smoothing
//! and the argmax boundary rule.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EncoderFeatureSeq, HeadId, StreamingModel, TokenId};

pub const DEFAULT_L_THRESHOLD: usize = 12;
pub const DEFAULT_MEDIAN_WINDOW: usize = 7;
/// Half of a 448-token decoder text context.
pub const DEFAULT_MAX_TOKENS: usize = 224;

/// Aggregated attention of one token over the encoded frames.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentRow {
    pub values: Vec<f64>,
    pub token_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopPolicyConfig {
    pub l_threshold_frames: usize,
    pub median_window: usize,
    /// Heads summed before filtering. Left empty in a session config it is
    /// filled with the model's declared alignment heads.
    pub alignment_head_ids: BTreeSet<HeadId>,
}

impl Default for StopPolicyConfig {
    fn default() -> Self {
        Self {
            l_threshold_frames: DEFAULT_L_THRESHOLD,
            median_window: DEFAULT_MEDIAN_WINDOW,
            alignment_head_ids: BTreeSet::new(),
        }
    }
}

impl StopPolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.l_threshold_frames == 0 {
            return Err(Error::Config("l threshold must be >= 1 frame".into()));
        }
        if self.median_window == 0 || self.median_window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "median window must be a positive odd integer, got {}",
                self.median_window
            )));
        }
        Ok(())
    }
}

/// Median filter with reflect padding (the edge sample is not repeated).
/// Inputs shorter than the window come back unchanged.
pub fn median_filter(seq: &[f64], width: usize) -> Result<Vec<f64>> {
    if width == 0 || width.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "median window must be a positive odd integer, got {width}"
        )));
    }
    if seq.len() < width || width == 1 {
        return Ok(seq.to_vec());
    }
    let pad = width / 2;
    let n = seq.len() as isize;
    let reflect = |i: isize| -> f64 {
        let j = if i < 0 {
            -i
        } else if i >= n {
            2 * (n - 1) - i
        } else {
            i
        };
        seq[j as usize]
    };
    let mut window = vec![0.0f64; width];
    let mut out = Vec::with_capacity(seq.len());
    for k in 0..n {
        for (w, slot) in window.iter_mut().enumerate() {
            *slot = reflect(k - pad as isize + w as isize);
        }
        let (_, median, _) = window.select_nth_unstable_by(pad, f64::total_cmp);
        out.push(*median);
    }
    Ok(out)
}

/// Sums the configured alignment heads' rows and median-filters the result.
///
/// `heads` names the head behind each entry of `rows`.
pub fn aggregate_alignment(
    heads: &[HeadId],
    rows: &[Vec<f32>],
    config: &StopPolicyConfig,
    token_index: usize,
) -> Result<AlignmentRow> {
    if config.alignment_head_ids.is_empty() {
        return Err(Error::Config("alignment head set is empty".into()));
    }
    if heads.len() != rows.len() {
        return Err(Error::Validation(format!(
            "{} head ids for {} attention rows",
            heads.len(),
            rows.len()
        )));
    }
    let mut sum: Option<Vec<f64>> = None;
    for (id, row) in heads.iter().zip(rows) {
        if !config.alignment_head_ids.contains(id) {
            continue;
        }
        match &mut sum {
            None => sum = Some(row.iter().map(|&v| v as f64).collect()),
            Some(acc) => {
                if acc.len() != row.len() {
                    return Err(Error::Validation(format!(
                        "attention rows of lengths {} and {}",
                        acc.len(),
                        row.len()
                    )));
                }
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += v as f64;
                }
            }
        }
    }
    let sum = sum.ok_or_else(|| {
        Error::Config("none of the configured alignment heads are present".into())
    })?;
    Ok(AlignmentRow {
        values: median_filter(&sum, config.median_window)?,
        token_index,
    })
}

/// Position of the maximum over `row[..end]`; the lowest index wins ties.
pub fn content_argmax(row: &[f64], end: usize) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().take(end).skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// True when the most-attended content frame is closer than `l` frames to
/// the content end.
pub fn should_stop(row: &AlignmentRow, content_end_frame: usize, l: usize) -> bool {
    let end = content_end_frame.min(row.values.len());
    if end == 0 {
        return true;
    }
    content_end_frame - content_argmax(&row.values, end) < l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeOptions {
    /// When false the boundary rule is evaluated for diagnostics only.
    pub stop_rule: bool,
    pub max_tokens: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            stop_rule: true,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostic {
    pub token_id: TokenId,
    pub token_text: String,
    pub is_eos: bool,
    /// Most-attended content frame, relative to the window start. None for EOS.
    pub argmax_frame: Option<usize>,
    pub stop: bool,
}

#[derive(Debug, Clone)]
pub struct EmittedToken {
    pub id: TokenId,
    pub text: String,
    pub argmax_frame: usize,
}

#[derive(Debug, Clone, Default)]
pub struct DecodeOutcome {
    pub emitted: Vec<EmittedToken>,
    pub steps: Vec<StepDiagnostic>,
    /// The token that triggered the stop rule, not emitted.
    pub withheld: Option<EmittedToken>,
    pub hit_eos: bool,
    pub cap_reached: bool,
}

/// Greedy decoding over one window, halting at EOS, at the token cap, or
/// before the first token whose attention falls within `l` frames of the
/// content end.
pub fn attention_guided_decode<M: StreamingModel + ?Sized>(
    model: &M,
    features: &EncoderFeatureSeq,
    initial_context: &[TokenId],
    config: &StopPolicyConfig,
    options: DecodeOptions,
) -> Result<DecodeOutcome> {
    config.validate()?;
    let heads = model.alignment_heads();
    let mut context = initial_context.to_vec();
    let mut outcome = DecodeOutcome::default();
    loop {
        if outcome.emitted.len() >= options.max_tokens {
            outcome.cap_reached = true;
            break;
        }
        let out = model.decode_step(features, &context)?;
        if out.is_eos {
            outcome.steps.push(StepDiagnostic {
                token_id: out.token_id,
                token_text: out.token_text,
                is_eos: true,
                argmax_frame: None,
                stop: false,
            });
            outcome.hit_eos = true;
            break;
        }
        let row = aggregate_alignment(heads, &out.head_rows, config, outcome.emitted.len())?;
        let argmax = content_argmax(&row.values, features.content_len.min(row.values.len()));
        let stop = options.stop_rule
            && should_stop(&row, features.content_len, config.l_threshold_frames);
        outcome.steps.push(StepDiagnostic {
            token_id: out.token_id,
            token_text: out.token_text.clone(),
            is_eos: false,
            argmax_frame: Some(argmax),
            stop,
        });
        let token = EmittedToken {
            id: out.token_id,
            text: out.token_text,
            argmax_frame: argmax,
        };
        if stop {
            outcome.withheld = Some(token);
            break;
        }
        context.push(token.id);
        outcome.emitted.push(token);
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AudioSpan, ScriptedModel, ScriptedModelConfig, ScriptedToken};

    fn cfg_with(heads: &[HeadId]) -> StopPolicyConfig {
        StopPolicyConfig {
            alignment_head_ids: heads.iter().copied().collect(),
            ..Default::default()
        }
    }

    #[test]
    fn constant_vector_is_unchanged() {
        let v = vec![0.2; 10];
        assert_eq!(median_filter(&v, 7).unwrap(), v);
    }

    #[test]
    fn isolated_spike_is_removed() {
        let v = [0.0, 0.0, 0.0, 5.0, 0.0, 0.0, 0.0];
        assert_eq!(median_filter(&v, 7).unwrap()[3], 0.0);
    }

    #[test]
    fn short_input_is_returned_unchanged() {
        let v = [3.0, 1.0, 2.0];
        assert_eq!(median_filter(&v, 7).unwrap(), v.to_vec());
    }

    #[test]
    fn even_width_is_a_configuration_error() {
        assert!(matches!(median_filter(&[1.0; 10], 4), Err(Error::Config(_))));
    }

    #[test]
    fn reflect_padding_at_edges() {
        // window at 0 with width 3 sees [x1, x0, x1]
        let v = [5.0, 1.0, 9.0, 2.0];
        assert_eq!(median_filter(&v, 3).unwrap(), vec![1.0, 5.0, 2.0, 9.0]);
    }

    #[test]
    fn two_heads_sum_elementwise() {
        let heads = [HeadId::new(0, 0), HeadId::new(0, 1)];
        let rows = vec![vec![0.2f32, 0.8], vec![0.6, 0.4]];
        let agg = aggregate_alignment(&heads, &rows, &cfg_with(&heads), 0).unwrap();
        assert!((agg.values[0] - 0.8).abs() < 1e-6);
        assert!((agg.values[1] - 1.2).abs() < 1e-6);
    }

    #[test]
    fn unselected_heads_are_ignored() {
        let heads = [HeadId::new(0, 0), HeadId::new(0, 1)];
        let rows = vec![vec![0.2f32, 0.8], vec![0.6, 0.4]];
        let agg = aggregate_alignment(&heads, &rows, &cfg_with(&heads[..1]), 0).unwrap();
        assert!((agg.values[1] - 0.8).abs() < 1e-6);
    }

    #[test]
    fn empty_head_set_and_length_mismatch_are_errors() {
        let heads = [HeadId::new(0, 0), HeadId::new(0, 1)];
        let rows = vec![vec![0.5f32, 0.5], vec![1.0]];
        assert!(matches!(
            aggregate_alignment(&heads, &rows, &StopPolicyConfig::default(), 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            aggregate_alignment(&heads, &rows, &cfg_with(&heads), 0),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn softmax_rows_sum_to_head_count() {
        let heads = [HeadId::new(0, 0), HeadId::new(0, 1), HeadId::new(1, 0)];
        let rows = vec![vec![0.25f32; 4], vec![0.1, 0.2, 0.3, 0.4], vec![1.0, 0.0, 0.0, 0.0]];
        let agg = aggregate_alignment(&heads, &rows, &cfg_with(&heads), 0).unwrap();
        assert!((agg.values.iter().sum::<f64>() - 3.0).abs() < 1e-3);
    }

    fn row_peaking_at(n: usize, at: usize) -> AlignmentRow {
        let mut values = vec![0.0; n];
        values[at] = 1.0;
        AlignmentRow {
            values,
            token_index: 0,
        }
    }

    #[test]
    fn stop_rule_examples() {
        assert!(should_stop(&row_peaking_at(150, 95), 100, 12));
        assert!(!should_stop(&row_peaking_at(150, 50), 100, 12));
        assert!(!should_stop(&row_peaking_at(150, 88), 100, 12));
        assert!(should_stop(&row_peaking_at(150, 89), 100, 12));
    }

    #[test]
    fn argmax_ignores_padding_and_prefers_lowest_index() {
        let mut r = row_peaking_at(150, 120);
        r.values[10] = 0.5;
        r.values[20] = 0.5;
        assert_eq!(content_argmax(&r.values, 100), 10);
        assert!(!should_stop(&r, 100, 12));
    }

    fn scripted(tokens: Vec<ScriptedToken>, total: u64) -> ScriptedModel {
        let mut cfg = ScriptedModelConfig::new(tokens);
        cfg.total_frames = Some(total);
        ScriptedModel::new(cfg).unwrap()
    }

    #[test]
    fn tokens_well_before_the_boundary_are_all_emitted() {
        let m = scripted(
            vec![
                ScriptedToken::new(" a", 0, 15),
                ScriptedToken::new(" b", 15, 30),
                ScriptedToken::new(" c", 30, 45),
            ],
            100,
        );
        let f = m.encode(AudioSpan::new(0, 100), 1500).unwrap();
        let cfg = cfg_with(m.alignment_heads());
        let out = attention_guided_decode(&m, &f, &[], &cfg, DecodeOptions::default()).unwrap();
        assert_eq!(out.emitted.len(), 3);
        assert!(out.hit_eos && out.withheld.is_none());
        assert_eq!(out.steps.len(), 4);
    }

    #[test]
    fn token_at_the_final_content_frames_is_withheld() {
        let m = scripted(
            vec![
                ScriptedToken::new(" a", 0, 20),
                ScriptedToken::new(" b", 40, 50),
            ],
            60,
        );
        let f = m.encode(AudioSpan::new(0, 50), 1500).unwrap();
        let cfg = cfg_with(m.alignment_heads());
        let out = attention_guided_decode(&m, &f, &[], &cfg, DecodeOptions::default()).unwrap();
        assert_eq!(out.emitted.len(), 1);
        assert_eq!(out.withheld.as_ref().unwrap().text, " b");
        assert!(!out.hit_eos);
    }

    #[test]
    fn token_cap_is_flagged() {
        let m = scripted(
            vec![
                ScriptedToken::new(" a", 0, 15),
                ScriptedToken::new(" b", 15, 30),
            ],
            100,
        );
        let f = m.encode(AudioSpan::new(0, 100), 1500).unwrap();
        let cfg = cfg_with(m.alignment_heads());
        let opts = DecodeOptions {
            stop_rule: true,
            max_tokens: 1,
        };
        let out = attention_guided_decode(&m, &f, &[], &cfg, opts).unwrap();
        assert_eq!(out.emitted.len(), 1);
        assert!(out.cap_reached);
    }
}
