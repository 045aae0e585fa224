//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simulstream::corpus::{synthetic_tdm_dataset, CorpusConfig};
use simulstream::model::{DecodeStepOutput, EncoderFeatureSeq, HeadId};
use simulstream::tdm::{train_tdm, TdmExample, TdmTrainConfig, TdmWeights};
use simulstream::trace::{ChunkRecord, DecodeStepRecord, Trace, TraceMetadata};

/// Step-by-step integrate-and-fire simulator: (fire indices, residual).
pub fn if_simulate(alpha: &[f64], f: f64) -> (Vec<usize>, f64) {
    let mut integral = 0.0;
    let mut fires = Vec::new();
    let mut n = 0;
    while n < alpha.len() {
        integral += alpha[n];
        if integral >= f {
            fires.push(n);
            integral -= f;
        }
        n += 1;
    }
    (fires, integral)
}

/// Sort-per-window median with reflect padding that skips the edge sample.
pub fn naive_median(seq: &[f64], width: usize) -> Vec<f64> {
    if seq.len() < width {
        return seq.to_vec();
    }
    let half = (width / 2) as i64;
    let n = seq.len() as i64;
    (0..n)
        .map(|k| {
            let mut w: Vec<f64> = (k - half..=k + half)
                .map(|i| {
                    let mut j = i;
                    if j < 0 {
                        j = -j;
                    }
                    if j >= n {
                        j = 2 * n - 2 - j;
                    }
                    seq[j as usize]
                })
                .collect();
            w.sort_by(|a, b| a.partial_cmp(b).unwrap());
            w[w.len() / 2]
        })
        .collect()
}

/// DAL by direct evaluation of the recursion with 1-based token indices.
pub fn dal_direct(g: &[f64], source: f64) -> f64 {
    let nt = g.len();
    let d = source / nt as f64;
    let mut gp = vec![0.0; nt + 1];
    let mut sum = 0.0;
    for t in 1..=nt {
        gp[t] = if t == 1 { g[0] } else { f64::max(g[t - 1], gp[t - 1] + d) };
        sum += gp[t] - (t as f64 - 1.0) * d;
    }
    sum / nt as f64
}

/// Brute-force Local Agreement: after each hypothesis, the committed prefix
/// is the longest common prefix of the last `n` hypotheses whenever that
/// extends the previous commitment.
pub fn brute_force_agreement(hyps: &[Vec<u32>], n: usize) -> Vec<Vec<u32>> {
    let mut committed: Vec<u32> = Vec::new();
    let mut out = Vec::new();
    for i in 0..hyps.len() {
        if i + 1 >= n {
            let window = &hyps[i + 1 - n..=i];
            let mut len = 0;
            'outer: while let Some(&c) = window[0].get(len) {
                for h in window {
                    if h.get(len) != Some(&c) {
                        break 'outer;
                    }
                }
                len += 1;
            }
            let agreed = &window[0][..len];
            if len > committed.len() && agreed[..committed.len()] == committed[..] {
                committed = agreed.to_vec();
            }
        }
        out.push(committed.clone());
    }
    out
}

pub const TDM_EPOCHS: usize = 300;
pub const TDM_PEAK_LR: f64 = 0.3;

pub fn tdm_corpus() -> CorpusConfig {
    CorpusConfig {
        words: 40,
        ..CorpusConfig::default()
    }
}

pub fn tdm_dataset(seed: u64, utterances: usize) -> Vec<TdmExample> {
    let base = CorpusConfig {
        seed,
        ..tdm_corpus()
    };
    synthetic_tdm_dataset(&base, utterances, 25, 550, 1500).unwrap()
}

pub fn tdm_train_config() -> TdmTrainConfig {
    TdmTrainConfig {
        epochs: TDM_EPOCHS,
        warmup_epochs: 3,
        peak_learning_rate: TDM_PEAK_LR,
        ..TdmTrainConfig::default()
    }
}

/// Weights trained on the standard synthetic dataset.
pub fn trained_tdm() -> TdmWeights {
    let ds = tdm_dataset(1, 200);
    train_tdm(&ds, &tdm_train_config(), TdmWeights::zeros(8))
        .unwrap()
        .weights
}

fn softmax_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| (v / s) as f32).collect()
}

/// A random but valid trace.
pub fn random_trace(seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = rng.random_range(1..6);
    let heads: Vec<HeadId> = (0..rng.random_range(1..4))
        .map(|h| HeadId::new(rng.random_range(0..4), h))
        .collect();
    let mut vocabulary = vec!["<|endoftext|>".to_string()];
    for i in 0..rng.random_range(1..20) {
        vocabulary.push(format!(" w{i}é"));
    }
    let pad = rng.random_range(8..40);
    let total_frames = 200;
    let mut chunks = Vec::new();
    let mut end = 0u64;
    for _ in 0..rng.random_range(0..5) {
        end += rng.random_range(1..30);
        let len = rng.random_range(1..=pad.min(end as usize));
        let start = end - len as u64;
        let content: Vec<f32> = (0..len * dim).map(|_| rng.random_range(-3.0..3.0)).collect();
        let features = EncoderFeatureSeq::from_content(&content, dim, pad, 20.0, start).unwrap();
        let mut steps = Vec::new();
        for s in 0..rng.random_range(0..4) {
            let id = rng.random_range(0..vocabulary.len()) as u32;
            steps.push(DecodeStepRecord {
                context: (0..s).map(|_| rng.random_range(1..vocabulary.len()) as u32).collect(),
                output: DecodeStepOutput {
                    token_id: id,
                    token_text: vocabulary[id as usize].clone(),
                    head_rows: (0..heads.len()).map(|_| softmax_row(&mut rng, pad)).collect(),
                    is_eos: id == 0,
                },
            });
        }
        chunks.push(ChunkRecord {
            features,
            steps,
            word_count: rng.random_bool(0.5).then(|| rng.random_range(0..9)),
            processing_s: rng.random_bool(0.5).then(|| rng.random_range(0.0..2.0)),
        });
    }
    Trace {
        metadata: TraceMetadata {
            model_name: format!("random-{seed}"),
            dim,
            frame_duration_ms: 20.0,
            alignment_heads: heads,
            vocabulary,
            eos_id: 0,
            total_frames,
        },
        chunks,
        reference: "a reference ✓".into(),
    }
}
