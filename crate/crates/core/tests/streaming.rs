mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;
use simulstream::align::{attention_guided_decode, DecodeOptions, StopPolicyConfig};
use simulstream::corpus::{scripted_config, CorpusConfig};
use simulstream::model::{
    AudioSpan, RecordingModel, ScriptedModel, StreamingModel, TraceReplayModel,
};
use simulstream::stream::{
    chunk_spans, run_session, Policy, SessionConfig, StreamSession, TimingMode,
};
use simulstream::tdm::TdmWeights;
use simulstream::trace::Trace;

fn weights() -> &'static TdmWeights {
    static W: OnceLock<TdmWeights> = OnceLock::new();
    W.get_or_init(common::trained_tdm)
}

fn model(seed: u64, words: usize, noise: f64) -> ScriptedModel {
    let corpus = CorpusConfig {
        words,
        seed,
        ..CorpusConfig::default()
    };
    let mut cfg = scripted_config(&corpus).unwrap();
    cfg.noise_level = noise;
    ScriptedModel::new(cfg).unwrap()
}

fn config(policy: Policy, chunk: f64, tdm: bool) -> SessionConfig {
    SessionConfig {
        policy,
        chunk_len_s: chunk,
        tdm: tdm.then(|| weights().clone()),
        ..SessionConfig::default()
    }
}

fn chunk_len() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![0.5, 0.75, 1.0])
}

fn policy() -> impl Strategy<Value = Policy> {
    prop::sample::select(vec![Policy::AttentionGuided, Policy::LocalAgreement])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn scripted_rows_are_deterministic_softmax(seed in 0u64..1000, end in 20u64..300, noise in 0.0f64..2.0) {
        let m = model(seed, 20, noise);
        let end = end.min(m.stream_frames().unwrap());
        let span = AudioSpan { start_frame: end / 3, end_frame: end };
        let f = m.encode(span, 400).unwrap();
        let a = m.decode_step(&f, &[]).unwrap();
        prop_assert_eq!(&a, &m.decode_step(&f, &[]).unwrap());
        prop_assert_eq!(&f, &m.encode(span, 400).unwrap());
        for row in &a.head_rows {
            prop_assert!(row.iter().all(|&v| v >= 0.0));
            let s: f64 = row.iter().map(|&v| v as f64).sum();
            prop_assert!((s - 1.0).abs() <= 1e-4);
        }
    }

    #[test]
    fn larger_l_emits_a_prefix(seed in 0u64..1000, end in 30u64..400, l1 in 1usize..30, dl in 0usize..30, noise in 0.0f64..1.5) {
        let m = model(seed, 20, noise);
        let end = end.min(m.stream_frames().unwrap());
        let f = m.encode(AudioSpan { start_frame: 0, end_frame: end }, 1500).unwrap();
        let heads: BTreeSet<_> = m.alignment_heads().iter().copied().collect();
        let run = |l| {
            let cfg = StopPolicyConfig { l_threshold_frames: l, alignment_head_ids: heads.clone(), ..StopPolicyConfig::default() };
            attention_guided_decode(&m, &f, &[], &cfg, DecodeOptions::default()).unwrap()
        };
        let small = run(l1);
        let large = run(l1 + dl);
        prop_assert!(large.emitted.len() <= small.emitted.len());
        for (a, b) in large.emitted.iter().zip(&small.emitted) {
            prop_assert_eq!(a.id, b.id);
        }
        for o in [&small, &large] {
            let stops: Vec<usize> = o.steps.iter().enumerate().filter(|(_, s)| s.stop).map(|(i, _)| i).collect();
            prop_assert!(stops.len() <= 1);
            if let Some(&i) = stops.first() {
                prop_assert_eq!(i, o.steps.len() - 1);
                prop_assert!(o.withheld.is_some());
            }
        }
    }

    #[test]
    fn commitments_only_grow(seed in 0u64..1000, chunk in chunk_len(), policy in policy(), noise in 0.0f64..1.5, tdm in any::<bool>()) {
        let m = model(seed, 30, noise);
        let frames = m.stream_frames().unwrap();
        let mut s = StreamSession::new(&m, config(policy, chunk, tdm)).unwrap();
        let mut prev: Vec<u32> = Vec::new();
        for span in chunk_spans(frames, chunk, m.frame_duration_ms()) {
            s.push_chunk(span).unwrap();
            let now: Vec<u32> = s.committed().iter().map(|t| t.id).collect();
            prop_assert!(now.starts_with(&prev));
            prev = now;
            let q = s.context_queue();
            prop_assert!(q.retained_seconds() <= s.config().context.max_context_s + 1e-9);
            if !s.deferred_tail().is_empty() {
                continue;
            }
            if policy == Policy::AttentionGuided {
                prop_assert_eq!(q.conditioning(), prev.clone());
            }
        }
        s.finish().unwrap();
        let fin: Vec<u32> = s.committed().iter().map(|t| t.id).collect();
        prop_assert!(fin.starts_with(&prev));
    }

    #[test]
    fn deferred_words_are_not_lost(seed in 0u64..1000, chunk in chunk_len(), noise in 0.0f64..1.0) {
        let m = model(seed, 30, noise);
        let r = run_session(&m, &config(Policy::AttentionGuided, chunk, true), m.stream_frames().unwrap()).unwrap();
        for d in &r.deferrals {
            let filled = r.committed.get(d.position);
            prop_assert!(filled.is_some(), "deferral at chunk {} position {} never filled", d.chunk_index, d.position);
            let t = filled.unwrap();
            prop_assert!(t.flushed || t.chunk_index > d.chunk_index);
        }
    }

    #[test]
    fn replay_reproduces_the_session(seed in 0u64..1000, chunk in chunk_len(), policy in policy(), noise in 0.0f64..1.0) {
        let m = model(seed, 25, noise);
        let frames = m.stream_frames().unwrap();
        let cfg = config(policy, chunk, policy == Policy::AttentionGuided);
        let recorder = RecordingModel::new(&m);
        let direct = run_session(&recorder, &cfg, frames).unwrap();
        let bytes = recorder.into_trace().unwrap().to_bytes();
        let replay = TraceReplayModel::new(Trace::from_bytes(&bytes).unwrap()).unwrap();
        let replayed = run_session(&replay, &cfg, frames).unwrap();
        prop_assert_eq!(direct.transcript(), replayed.transcript());
        prop_assert_eq!(direct.token_ids(), replayed.token_ids());
    }
}

#[test]
fn latency_within_two_chunks_at_one_second() {
    let chunk = 1.0;
    for seed in 0..20 {
        let m = model(500 + seed, 40, 0.0);
        let r = run_session(&m, &config(Policy::AttentionGuided, chunk, true), m.stream_frames().unwrap()).unwrap();
        assert_eq!(r.transcript(), m.reference().unwrap(), "seed {seed}");
        let frame_s = m.frame_duration_ms() as f64 / 1000.0;
        for (t, script) in r.committed.iter().zip(&m.config().tokens) {
            let end = script.end_frame as f64 * frame_s;
            assert!(
                t.unaware_s >= end - 1e-9 && t.unaware_s <= end + 2.0 * chunk + 1e-9,
                "seed {seed}: {:?} ends {end} committed {}",
                t.text,
                t.unaware_s
            );
        }
    }
}

#[test]
fn aware_times_follow_the_backlog() {
    let m = model(3, 30, 0.0);
    let mut cfg = config(Policy::AttentionGuided, 0.5, true);
    cfg.timing = TimingMode::Synthetic(Default::default());
    let r = run_session(&m, &cfg, m.stream_frames().unwrap()).unwrap();
    let mut ready = 0.0f64;
    for c in &r.chunks {
        ready = ready.max(c.end_s) + c.processing_s;
        assert!((c.ready_s - ready).abs() < 1e-9);
    }
    assert!(r.committed.iter().all(|t| t.aware_s >= t.unaware_s));
}

#[test]
fn stop_rule_disabled_passes_tokens_through() {
    let m = model(11, 20, 0.0);
    let f = m.encode(AudioSpan { start_frame: 0, end_frame: 200 }, 1500).unwrap();
    let heads: BTreeSet<_> = m.alignment_heads().iter().copied().collect();
    let cfg = StopPolicyConfig { alignment_head_ids: heads, ..StopPolicyConfig::default() };
    let off = DecodeOptions { stop_rule: false, ..DecodeOptions::default() };
    let o = attention_guided_decode(&m, &f, &[], &cfg, off).unwrap();
    assert!(o.withheld.is_none());
    assert!(o.hit_eos);
    let mut ctx = Vec::new();
    loop {
        let step = m.decode_step(&f, &ctx).unwrap();
        if step.is_eos {
            break;
        }
        ctx.push(step.token_id);
    }
    assert_eq!(o.emitted.iter().map(|t| t.id).collect::<Vec<_>>(), ctx);
}
