//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simulstream::corpus::{scripted_config, CorpusConfig};
use simulstream::metrics::{build_latency_record, dal, wer, LatencyMode, LatencyRecord};
use simulstream::model::{AudioSpan, EncoderFeatureSeq, ScriptedModel, StreamingModel};
use simulstream::stream::{chunk_spans, run_session, LocalAgreementState, Policy, SessionConfig};
use simulstream::tdm::{
    if_scan, loss_grad, quantity_loss, signal, train_tdm, TdmWeights, DEFAULT_FIRE_THRESHOLD,
};
use simulstream::trace::Trace;
use simulstream::TraceError;

use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut mismatches = 0;
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let len = rng.random_range(0..200);
        let f = rng.random_range(0.05..3.0);
        let alpha: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
        let got = if_scan(&alpha, f);
        let (fires, residual) = if_simulate(&alpha, f);
        if got.fire_positions != fires || got.residual != residual || got.last_fire != fires.last().copied() {
            mismatches += 1;
        }
        let sum: f64 = alpha.iter().sum();
        let err = (sum - (f * fires.len() as f64 + got.residual)).abs();
        worst = worst.max(err / (len.max(1) as f64));
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && worst <= 1e-9 && within(elapsed, 1.0),
        format!("1000 instances, {mismatches} mismatches, worst conservation error {worst:.1e}/element, {elapsed:.2?}"),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut cases = 0;
    let mut mismatches = 0;
    for len in 1..=100 {
        for &width in &[1usize, 3, 5, 7] {
            for _ in 0..3 {
                let seq: Vec<f64> = (0..len)
                    .map(|_| {
                        if rng.random_bool(0.2) {
                            rng.random_range(0..3) as f64
                        } else {
                            rng.random_range(-1.0..1.0)
                        }
                    })
                    .collect();
                let got = simulstream::align::median_filter(&seq, width).unwrap();
                if got != naive_median(&seq, width) {
                    mismatches += 1;
                }
                cases += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        mismatches == 0 && within(elapsed, 1.0),
        format!("{cases} vectors, widths 1/3/5/7, {mismatches} mismatches, {elapsed:.2?}"),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst, mut negative, mut order) = (0.0f64, 0, 0);
    for _ in 0..1000 {
        let n = rng.random_range(1..60);
        let source = rng.random_range(0.5..30.0);
        let mut t = 0.0;
        let unaware: Vec<f64> = (0..n)
            .map(|_| {
                t += rng.random_range(0.0..1.5);
                t
            })
            .collect();
        let mut backlog = 0.0;
        let aware: Vec<f64> = unaware
            .iter()
            .map(|u| {
                backlog += rng.random_range(0.0..0.2);
                u + backlog
            })
            .collect();
        let rec = |g: Vec<f64>, mode| LatencyRecord {
            g,
            source_seconds: source,
            mode,
        };
        let du = dal(&rec(unaware.clone(), LatencyMode::Unaware)).unwrap();
        let da = dal(&rec(aware, LatencyMode::Aware)).unwrap();
        worst = worst.max((du - dal_direct(&unaware, source)).abs());
        if du < 0.0 || da < 0.0 {
            negative += 1;
        }
        if da < du {
            order += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-12 && negative == 0 && order == 0 && within(elapsed, 1.0),
        format!("1000 records, max |dal - direct| {worst:.1e}, {negative} negative, {order} aware<unaware, {elapsed:.2?}"),
    )
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst = 0.0f64;
    let h = 1e-5;
    for _ in 0..100 {
        let dim = rng.random_range(1..7);
        let len = rng.random_range(2..40);
        let content: Vec<f32> = (0..len * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        let feats = EncoderFeatureSeq::from_content(&content, dim, 64, 20.0, 0).unwrap();
        let weights = TdmWeights {
            w: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            b: rng.random_range(-1.0..1.0),
        };
        let sum: f64 = signal(&feats, &weights).unwrap().iter().sum();
        // keep away from the kink at zero error
        let mut count = rng.random_range(0..len as u32);
        if (sum - count as f64).abs() < 0.05 {
            count += 1;
        }
        let g = loss_grad(&feats, &weights, count).unwrap();
        let loss = |w: &TdmWeights| quantity_loss(&signal(&feats, w).unwrap(), count);
        let mut analytic = g.w.clone();
        analytic.push(g.b);
        let mut numeric = Vec::with_capacity(dim + 1);
        for k in 0..=dim {
            let mut plus = weights.clone();
            let mut minus = weights.clone();
            if k < dim {
                plus.w[k] += h;
                minus.w[k] -= h;
            } else {
                plus.b += h;
                minus.b -= h;
            }
            numeric.push((loss(&plus) - loss(&minus)) / (2.0 * h));
        }
        let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let norm = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|n| n * n).sum::<f64>().sqrt());
        worst = worst.max(diff / norm.max(1e-12));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && within(elapsed, 5.0),
        format!("100 instances, worst relative error {worst:.2e}, {elapsed:.2?}"),
    )
}

fn criterion_5(weights_out: &mut Option<TdmWeights>) -> Outcome {
    let start = Instant::now();
    let train = tdm_dataset(1, 200);
    let held = tdm_dataset(2, 200);
    let result = train_tdm(&train, &tdm_train_config(), TdmWeights::zeros(8)).unwrap();
    let first = result.epoch_rmse[0];
    let last = *result.epoch_rmse.last().unwrap();
    let matched = held
        .iter()
        .filter(|ex| {
            let a = signal(&ex.features, &result.weights).unwrap();
            if_scan(&a, DEFAULT_FIRE_THRESHOLD).fire_positions.len() as u32 == ex.word_count
        })
        .count();
    let frac = matched as f64 / held.len() as f64;
    let elapsed = start.elapsed();
    *weights_out = Some(result.weights);
    outcome(
        last < 0.25 * first && frac >= 0.95 && within(elapsed, 60.0),
        format!(
            "RMSE epoch 1 {first:.4} -> epoch {} {last:.5} ({:.2}%), held-out fire count match {matched}/200, {elapsed:.2?}",
            result.epoch_rmse.len(),
            100.0 * last / first
        ),
    )
}

/// Tokens each chunk should emit under the boundary rule, recomputed from
/// the raw head rows.
fn oracle_chunk(
    model: &ScriptedModel,
    window: AudioSpan,
    context: &[u32],
    l: usize,
) -> (Vec<String>, Option<String>) {
    let feats = model.encode(window, 1500).unwrap();
    let cl = feats.content_len;
    let mut ctx = context.to_vec();
    let mut emitted = Vec::new();
    loop {
        let out = model.decode_step(&feats, &ctx).unwrap();
        if out.is_eos {
            return (emitted, None);
        }
        let mut summed = vec![0.0f64; feats.n_frames];
        for row in &out.head_rows {
            for (s, &v) in summed.iter_mut().zip(row) {
                *s += v as f64;
            }
        }
        let filtered = naive_median(&summed, 7);
        let mut best = 0;
        for i in 1..cl {
            if filtered[i] > filtered[best] {
                best = i;
            }
        }
        if cl - best < l {
            return (emitted, Some(out.token_text));
        }
        ctx.push(out.token_id);
        emitted.push(out.token_text);
    }
}

fn criterion_6() -> Outcome {
    let mut chunks_checked = 0;
    let mut withheld_total = 0;
    let mut failures = Vec::new();
    let (mut sessions, mut exact) = (0, 0);
    for seed in 0..10u64 {
        let corpus = CorpusConfig {
            words: 30,
            min_word_frames: 8,
            max_word_frames: 20,
            seed,
            ..CorpusConfig::default()
        };
        let model = ScriptedModel::new(scripted_config(&corpus).unwrap()).unwrap();
        let frames = model.stream_frames().unwrap();
        for &chunk in &[0.5, 0.75, 1.0] {
            let cfg = SessionConfig {
                chunk_len_s: chunk,
                ..SessionConfig::default()
            };
            let r = run_session(&model, &cfg, frames).unwrap();
            for c in &r.chunks {
                let ctx: Vec<u32> = r
                    .committed
                    .iter()
                    .filter(|t| t.chunk_index < c.index && !t.flushed)
                    .map(|t| t.id)
                    .collect();
                let got: Vec<String> = r
                    .committed
                    .iter()
                    .filter(|t| t.chunk_index == c.index && !t.flushed)
                    .map(|t| t.text.clone())
                    .collect();
                let (want, withheld) = oracle_chunk(&model, c.window, &ctx, 12);
                if got != want || c.withheld != withheld {
                    failures.push(format!("seed {seed} chunk {chunk}s #{}", c.index));
                }
                if withheld.is_some() && r.committed.len() <= ctx.len() + got.len() {
                    failures.push(format!("seed {seed} chunk {chunk}s #{}: withheld slot never filled", c.index));
                }
                withheld_total += usize::from(withheld.is_some());
                chunks_checked += 1;
            }
            let last = r.chunks.last().unwrap();
            if let Some(w) = &last.withheld {
                let first_flushed = r.committed.iter().find(|t| t.flushed).map(|t| &t.text);
                if first_flushed != Some(w) {
                    failures.push(format!("seed {seed} chunk {chunk}s: withheld token not flushed"));
                }
            }
            sessions += 1;
            exact += usize::from(r.transcript() == model.reference().unwrap());
        }
    }
    outcome(
        failures.is_empty() && withheld_total > 0,
        format!(
            "{chunks_checked} chunks over {sessions} sessions, {withheld_total} withheld, {} mismatches, {exact}/{sessions} transcripts equal the reference{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn criterion_7(weights: &TdmWeights) -> Outcome {
    let start = Instant::now();
    let (mut strict, mut worse) = (0, 0);
    let (mut sum_with, mut sum_without) = (0.0, 0.0);
    for seed in 0..20u64 {
        let corpus = CorpusConfig {
            words: 40,
            min_word_frames: 20,
            max_word_frames: 70,
            seed: 7000 + seed,
            ..CorpusConfig::default()
        };
        let model = ScriptedModel::new(scripted_config(&corpus).unwrap()).unwrap();
        let frames = model.stream_frames().unwrap();
        let reference = model.reference().unwrap();
        let mut cfg = SessionConfig::default();
        let without = wer(&reference, &run_session(&model, &cfg, frames).unwrap().transcript()).unwrap();
        cfg.tdm = Some(weights.clone());
        let with = wer(&reference, &run_session(&model, &cfg, frames).unwrap().transcript()).unwrap();
        sum_with += with;
        sum_without += without;
        strict += usize::from(with < without);
        worse += usize::from(with > without);
    }
    let elapsed = start.elapsed();
    outcome(
        worse == 0 && strict >= 15 && within(elapsed, 120.0),
        format!(
            "20 corpora, mean WER {:.4} with TDM vs {:.4} without, {strict} strictly better, {worse} worse, {elapsed:.2?}",
            sum_with / 20.0,
            sum_without / 20.0
        ),
    )
}

fn criterion_8(weights: &TdmWeights) -> Outcome {
    let mut parts = Vec::new();
    let mut pass = true;
    for &chunk in &[0.5, 0.75, 1.0] {
        let (mut ok, mut total) = (0, 0);
        for seed in 0..20u64 {
            let corpus = CorpusConfig {
                seed: 8000 + seed,
                ..CorpusConfig::default()
            };
            let model = ScriptedModel::new(scripted_config(&corpus).unwrap()).unwrap();
            let frames = model.stream_frames().unwrap();
            let cfg = SessionConfig {
                chunk_len_s: chunk,
                tdm: Some(weights.clone()),
                ..SessionConfig::default()
            };
            let r = run_session(&model, &cfg, frames).unwrap();
            let spans = chunk_spans(frames, chunk, model.frame_duration_ms());
            for (i, t) in r.committed.iter().enumerate() {
                let end = model.config().tokens[i].end_frame;
                let k_end = spans.iter().position(|s| s.end_frame >= end).unwrap();
                let lag_chunks = t.chunk_index as i64 - k_end as i64 + 1;
                ok += usize::from((1..=2).contains(&lag_chunks));
                total += 1;
            }
        }
        let frac = ok as f64 / total as f64;
        pass &= frac >= 0.9;
        parts.push(format!("{chunk}s {:.1}%", 100.0 * frac));
    }
    outcome(
        pass,
        format!("tokens committed 1-2 chunks after the chunk holding their end: {}", parts.join(", ")),
    )
}

fn criterion_9(weights: &TdmWeights) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let mut lcp_mismatch = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..4);
        let base: Vec<u32> = (0..30).map(|_| rng.random_range(0..4)).collect();
        let hyps: Vec<Vec<u32>> = (0..rng.random_range(1..12))
            .map(|_| {
                let mut h = base[..rng.random_range(0..30)].to_vec();
                if rng.random_bool(0.4) && !h.is_empty() {
                    let k = rng.random_range(0..h.len());
                    h[k] = rng.random_range(0..4);
                }
                h
            })
            .collect();
        let expected = brute_force_agreement(&hyps, n);
        let mut la = LocalAgreementState::new(n);
        for (h, e) in hyps.iter().zip(&expected) {
            la.step(h.clone());
            if la.committed() != &e[..] {
                lcp_mismatch += 1;
                break;
            }
        }
    }
    let mut parts = Vec::new();
    let mut directional = true;
    for &chunk in &[0.5, 0.75, 1.0] {
        let (mut la_sum, mut ag_sum) = (0.0, 0.0);
        for seed in 0..20u64 {
            let corpus = CorpusConfig {
                seed: 9000 + seed,
                ..CorpusConfig::default()
            };
            let model = ScriptedModel::new(scripted_config(&corpus).unwrap()).unwrap();
            let frames = model.stream_frames().unwrap();
            let ag = SessionConfig {
                chunk_len_s: chunk,
                tdm: Some(weights.clone()),
                ..SessionConfig::default()
            };
            let la = SessionConfig {
                policy: Policy::LocalAgreement,
                chunk_len_s: chunk,
                ..SessionConfig::default()
            };
            let d = |cfg: &SessionConfig| {
                dal(&build_latency_record(&run_session(&model, cfg, frames).unwrap(), LatencyMode::Unaware)).unwrap()
            };
            ag_sum += d(&ag);
            la_sum += d(&la);
        }
        directional &= la_sum > ag_sum;
        parts.push(format!("{chunk}s LA {:.3}s vs AG {:.3}s", la_sum / 20.0, ag_sum / 20.0));
    }
    outcome(
        lcp_mismatch == 0 && directional,
        format!("LCP mismatches {lcp_mismatch}/1000; mean unaware DAL {}", parts.join(", ")),
    )
}

fn error_kind(e: &TraceError) -> &'static str {
    match e {
        TraceError::BadMagic => "bad-magic",
        TraceError::UnsupportedVersion { .. } => "version",
        TraceError::Truncated { .. } => "truncated",
        TraceError::Checksum { .. } => "checksum",
        TraceError::UnknownSection(_) => "unknown-section",
        TraceError::Malformed { .. } => "malformed",
        TraceError::TrailingData => "trailing",
        TraceError::Validation(_) => "validation",
    }
}

fn criterion_10() -> Outcome {
    let mut failures = 0;
    for seed in 0..100 {
        let t = random_trace(seed);
        let bytes = t.to_bytes();
        match Trace::from_bytes(&bytes) {
            Ok(back) => {
                if back != t || back.to_bytes() != bytes {
                    failures += 1;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let good = random_trace(7).to_bytes();
    let mut kinds = Vec::new();
    let mut corrupt = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = good.clone();
        f(&mut b);
        kinds.push(Trace::from_bytes(&b).err().map(|e| error_kind(&e)));
    };
    corrupt(&|b| b[0] ^= 0xFF);
    corrupt(&|b| b[8] = 9);
    corrupt(&|b| b.truncate(b.len() - 3));
    corrupt(&|b| {
        let i = 16 + 12 + 2;
        b[i] ^= 0x55;
    });
    corrupt(&|b| b.push(0));
    corrupt(&|b| {
        let payload = [1u8, 2, 3];
        b.extend_from_slice(b"XTRA");
        b.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        b.extend_from_slice(&payload);
        b.extend_from_slice(&crc32fast_hash(&payload).to_le_bytes());
        let count = u32::from_le_bytes(b[12..16].try_into().unwrap()) + 1;
        b[12..16].copy_from_slice(&count.to_le_bytes());
    });
    let expected = [
        Some("bad-magic"),
        Some("version"),
        Some("truncated"),
        Some("checksum"),
        Some("trailing"),
        Some("unknown-section"),
    ];
    outcome(
        failures == 0 && kinds == expected,
        format!("100 random traces, {failures} round-trip failures; corruptions -> {kinds:?}"),
    )
}

fn crc32fast_hash(data: &[u8]) -> u32 {
    // bitwise CRC-32 (IEEE), independent of the library's implementation
    let mut crc = 0xFFFF_FFFFu32;
    for &byte in data {
        crc ^= byte as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

fn main() {
    let mut weights = None;
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "IF oracle equivalence", criterion_1()),
        (2, "median-filter oracle", criterion_2()),
        (3, "DAL oracle", criterion_3()),
        (4, "gradient check", criterion_4()),
        (5, "TDM training sanity", criterion_5(&mut weights)),
    ];
    let weights = weights.expect("criterion 5 trains the detector");
    results.push((6, "stop-rule behavior", criterion_6()));
    results.push((7, "TDM ablation direction", criterion_7(&weights)));
    results.push((8, "latency within 1-2 chunks", criterion_8(&weights)));
    results.push((9, "Local Agreement baseline", criterion_9(&weights)));
    results.push((10, "trace round-trip", criterion_10()));
    let mut failed = 0;
    for (n, name, o) in &results {
        println!(
            "acceptance {n:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
