use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use simulstream::corpus::{random_spans, scripted_config, tdm_examples, CorpusConfig};
use simulstream::model::{
    AudioSpan, RecordingModel, ScriptedModel, ScriptedModelConfig, StreamingModel,
    TraceReplayModel,
};
use simulstream::report::{append_report, compare_csv, session_metrics, CompareRow, SessionReport};
use simulstream::stream::{run_session, Policy, SessionConfig, SessionResult, TimingMode};
use simulstream::tdm::{load_weights, save_weights, train_tdm, TdmExample, TdmTrainConfig, TdmWeights};
use simulstream::trace::{load_trace, save_trace, ChunkRecord, Trace, TraceMetadata};
use simulstream::Error;

use super::args::{CompareArgs, PolicyArg, RunArgs, SourceArgs, SynthArgs, TrainArgs};

pub const REPORT_DIR_ENV: &str = "SIMULSTREAM_REPORT_DIR";

fn scripted_from(source: &SourceArgs, seed: Option<u64>) -> Result<ScriptedModelConfig> {
    let mut cfg = if let Some(p) = &source.model {
        ScriptedModelConfig::load(p).with_context(|| format!("loading model {}", p.display()))?
    } else if let Some(p) = &source.corpus {
        let text = std::fs::read_to_string(p)
            .map_err(Error::from)
            .with_context(|| format!("reading corpus {}", p.display()))?;
        let mut corpus = CorpusConfig::from_toml_str(&text)?;
        if let Some(s) = seed {
            corpus.seed = s;
        }
        scripted_config(&corpus)?
    } else {
        return Err(Error::Config("synth needs --model or --corpus".into()).into());
    };
    if let Some(s) = seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(source: &SourceArgs) -> Result<(Box<dyn StreamingModel>, String)> {
    if let Some(p) = &source.trace {
        let trace = load_trace(p).with_context(|| format!("loading trace {}", p.display()))?;
        return Ok((Box::new(TraceReplayModel::new(trace)?), p.display().to_string()));
    }
    let path = source.model.as_ref().or(source.corpus.as_ref()).expect("clap enforces one source");
    let cfg = scripted_from(source, None)?;
    Ok((Box::new(ScriptedModel::new(cfg)?), path.display().to_string()))
}

fn stream_frames(model: &dyn StreamingModel) -> Result<u64> {
    model
        .stream_frames()
        .ok_or_else(|| Error::Validation("model does not know its stream length".into()).into())
}

/// Session configs for every requested cell, in table order.
fn cells(
    base: &SessionConfig,
    weights: Option<&TdmWeights>,
    chunk_lens: &[f64],
    policies: &[PolicyArg],
    ablation: bool,
) -> Vec<SessionConfig> {
    let mut out = Vec::new();
    for &p in policies {
        for &c in chunk_lens {
            let mut cfg = base.clone();
            cfg.policy = Policy::from(p);
            cfg.chunk_len_s = c;
            if cfg.policy == Policy::LocalAgreement {
                cfg.tdm = None;
            }
            out.push(cfg.clone());
            if ablation && cfg.policy == Policy::AttentionGuided {
                if cfg.tdm.is_some() {
                    cfg.tdm = None;
                } else if let Some(w) = weights {
                    cfg.tdm = Some(w.clone());
                } else {
                    continue;
                }
                out.push(cfg);
            }
        }
    }
    out
}

fn warn_without_tdm(config: &SessionConfig) {
    if config.policy == Policy::AttentionGuided && config.tdm.is_none() {
        eprintln!("note: truncation detection is off (no --tdm-weights given or --no-tdm set)");
    }
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let cfg = scripted_from(&args.source, args.seed)?;
    if let Some(p) = &args.write_model {
        std::fs::write(p, cfg.to_toml_string()?)
            .map_err(Error::from)
            .with_context(|| format!("writing {}", p.display()))?;
    }
    let model = ScriptedModel::new(cfg)?;
    let frames = stream_frames(&model)?;
    let resolved = args.session.resolve()?;
    let chunk_lens = args
        .chunk_lens
        .clone()
        .unwrap_or_else(|| vec![resolved.config.chunk_len_s]);
    let policies = args.policies.clone().unwrap_or_else(|| {
        vec![match resolved.config.policy {
            Policy::AttentionGuided => PolicyArg::AttentionGuided,
            Policy::LocalAgreement => PolicyArg::LocalAgreement,
        }]
    });
    let recorder = RecordingModel::new(&model);
    for cell in cells(
        &resolved.config,
        resolved.weights.as_ref(),
        &chunk_lens,
        &policies,
        args.with_ablation,
    ) {
        let mut cell = cell;
        let record_time = cell.timing != TimingMode::Unaware && cell.timing != TimingMode::Recorded;
        if cell.timing == TimingMode::Recorded {
            cell.timing = TimingMode::Unaware;
        }
        let result = run_session(&recorder, &cell, frames)?;
        if record_time {
            for c in &result.chunks {
                recorder.set_processing(c.window, c.processing_s);
            }
        }
    }
    save_trace(&recorder.into_trace()?, &args.out)
        .with_context(|| format!("writing trace {}", args.out.display()))?;
    if let Some(p) = &args.dataset_out {
        let spans = random_spans(frames, args.windows, args.min_window, args.max_window, model.config().rng_seed)?;
        write_dataset(&model, &spans, resolved.config.pad_to_frames, p)?;
    }
    Ok(())
}

fn write_dataset(model: &ScriptedModel, spans: &[AudioSpan], pad: usize, path: &Path) -> Result<()> {
    let mut spans = spans.to_vec();
    spans.sort_by_key(|s| (s.end_frame, s.start_frame));
    spans.dedup();
    let examples = tdm_examples(model, &spans, pad)?;
    let trace = Trace {
        metadata: TraceMetadata {
            model_name: model.name().to_string(),
            dim: model.feature_dim(),
            frame_duration_ms: model.frame_duration_ms(),
            alignment_heads: model.alignment_heads().to_vec(),
            vocabulary: model.vocabulary().entries().to_vec(),
            eos_id: model.vocabulary().eos(),
            total_frames: stream_frames(model)?,
        },
        chunks: examples
            .into_iter()
            .map(|ex| ChunkRecord {
                features: ex.features,
                steps: Vec::new(),
                word_count: Some(ex.word_count),
                processing_s: None,
            })
            .collect(),
        reference: model.reference().unwrap_or_default(),
    };
    save_trace(&trace, path).with_context(|| format!("writing dataset {}", path.display()))
}

fn report_path(explicit: Option<&PathBuf>) -> PathBuf {
    if let Some(p) = explicit {
        return p.clone();
    }
    let dir = std::env::var_os(REPORT_DIR_ENV).map_or_else(|| PathBuf::from("."), PathBuf::from);
    dir.join("report.jsonl")
}

fn summary_line(result: &SessionResult, reference: &str) -> Result<String> {
    let m = session_metrics(result, reference)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"));
    Ok(format!(
        "policy={} chunk={}s words={} wer={} dal_unaware={} dal_aware={}",
        result.policy,
        result.chunk_len_s,
        m.output_words,
        fmt(m.wer),
        fmt(m.dal_unaware),
        fmt(m.dal_aware)
    ))
}

pub fn run(args: &RunArgs) -> Result<()> {
    let (model, source) = load_model(&args.source)?;
    let resolved = args.session.resolve()?;
    warn_without_tdm(&resolved.config);
    let frames = stream_frames(model.as_ref())?;
    let result = run_session(model.as_ref(), &resolved.config, frames)?;
    let reference = model.reference().unwrap_or_default();
    println!("{}", result.transcript());
    eprintln!("{}", summary_line(&result, &reference)?);
    let config = resolved.config.resolved_for(model.as_ref())?;
    let report = SessionReport::new(result, config, model.name(), &source, &reference)?;
    let path = report_path(args.report.as_ref());
    append_report(&path, &report).with_context(|| format!("writing report {}", path.display()))?;
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut dataset = Vec::new();
    for p in &args.dataset {
        let trace = load_trace(p).with_context(|| format!("loading dataset {}", p.display()))?;
        dataset.extend(trace.chunks.into_iter().filter_map(|c| {
            c.word_count.map(|word_count| TdmExample {
                features: c.features,
                word_count,
            })
        }));
    }
    if dataset.is_empty() {
        return Err(Error::DegenerateInput("no labelled windows in the dataset".into()).into());
    }
    let d = TdmTrainConfig::default();
    let config = TdmTrainConfig {
        epochs: args.epochs.unwrap_or(d.epochs),
        warmup_epochs: args.warmup_epochs.unwrap_or(d.warmup_epochs),
        peak_learning_rate: args.lr.unwrap_or(d.peak_learning_rate),
        batch_frames: args.batch_frames.unwrap_or(d.batch_frames),
        rng_seed: args.seed.unwrap_or(d.rng_seed),
        ..d
    };
    let init = match &args.init {
        Some(p) => load_weights(p).with_context(|| format!("loading {}", p.display()))?,
        None => TdmWeights::zeros(dataset[0].features.dim),
    };
    let result = train_tdm(&dataset, &config, init)?;
    save_weights(&result.weights, &args.out)
        .with_context(|| format!("writing weights {}", args.out.display()))?;
    let mut log = String::from("epoch,rmse\n");
    for (i, r) in result.epoch_rmse.iter().enumerate() {
        log.push_str(&format!("{},{r:.9}\n", i + 1));
    }
    match &args.log {
        Some(p) => std::fs::write(p, log)
            .map_err(Error::from)
            .with_context(|| format!("writing {}", p.display()))?,
        None => eprint!("{log}"),
    }
    Ok(())
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let (model, _) = load_model(&args.source)?;
    let resolved = args.session.resolve()?;
    let frames = stream_frames(model.as_ref())?;
    let reference = model.reference().unwrap_or_default();
    let cells = cells(
        &resolved.config,
        resolved.weights.as_ref(),
        &args.chunk_lens,
        &args.policies,
        args.with_ablation,
    );
    let model = model.as_ref();
    let results: Vec<simulstream::Result<SessionResult>> = std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|cfg| s.spawn(move || run_session(model, cfg, frames)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("session thread panicked"))
            .collect()
    });
    let mut rows = Vec::with_capacity(cells.len());
    for (cfg, result) in cells.iter().zip(results) {
        let result = result?;
        rows.push(CompareRow {
            policy: cfg.policy,
            chunk_len_s: cfg.chunk_len_s,
            tdm: cfg.tdm.is_some(),
            metrics: session_metrics(&result, &reference)?,
        });
    }
    let table = compare_csv(&rows);
    match &args.out {
        Some(p) => std::fs::write(p, table)
            .map_err(Error::from)
            .with_context(|| format!("writing {}", p.display()))?,
        None => print!("{table}"),
    }
    Ok(())
}
