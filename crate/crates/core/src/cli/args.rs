use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use simulstream::model::HeadId;
use simulstream::stream::{CostModel, Policy, SessionConfig, TimingMode};
use simulstream::tdm::{load_weights, TdmWeights};
use simulstream::Error;

#[derive(Debug, Parser)]
#[command(name = "simulstream", version, about = "Streaming decoding engine and evaluation harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Record a deterministic trace from a scripted model.
    Synth(SynthArgs),
    /// Run one streaming session and append its report.
    Run(RunArgs),
    /// Train truncation-detector weights on labelled windows.
    TrainTdm(TrainArgs),
    /// Sweep policies and chunk lengths into a CSV table.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    AttentionGuided,
    LocalAgreement,
}

impl From<PolicyArg> for Policy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::AttentionGuided => Policy::AttentionGuided,
            PolicyArg::LocalAgreement => Policy::LocalAgreement,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimingArg {
    Unaware,
    Synthetic,
    Measured,
    Recorded,
}

/// Where the model comes from: a recorded trace, a scripted model file, or
/// a generated corpus.
#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct SourceArgs {
    /// Trace file to replay.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Scripted model config (TOML).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Corpus generator config (TOML).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SessionArgs {
    /// TOML file with session settings; flags override it.
    #[arg(long)]
    pub settings: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,
    /// Chunk length in seconds.
    #[arg(long)]
    pub chunk_len: Option<f64>,
    /// Stop when the attended frame is fewer than this many frames from the content end.
    #[arg(long)]
    pub l_threshold: Option<usize>,
    #[arg(long)]
    pub median_window: Option<usize>,
    #[arg(long)]
    pub fire_threshold: Option<f64>,
    /// Truncation-detector weights; detection is off without them.
    #[arg(long)]
    pub tdm_weights: Option<PathBuf>,
    /// Disable truncation detection even if weights are configured.
    #[arg(long)]
    pub no_tdm: bool,
    /// Local Agreement window.
    #[arg(long)]
    pub n: Option<usize>,
    /// Retained context audio in seconds.
    #[arg(long)]
    pub max_context: Option<f64>,
    #[arg(long, value_enum)]
    pub timing: Option<TimingArg>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    /// Alignment heads as `layer:head`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub heads: Option<Vec<String>>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    /// Override the scripted model seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub session: SessionArgs,
    /// Record sessions for each of these chunk lengths.
    #[arg(long, value_delimiter = ',')]
    pub chunk_lens: Option<Vec<f64>>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub policies: Option<Vec<PolicyArg>>,
    /// Also record every attention-guided session with detection disabled.
    #[arg(long)]
    pub with_ablation: bool,
    /// Write the scripted model config used.
    #[arg(long)]
    pub write_model: Option<PathBuf>,
    /// Write a labelled window dataset for `train-tdm`.
    #[arg(long)]
    pub dataset_out: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub windows: usize,
    #[arg(long, default_value_t = 25)]
    pub min_window: u64,
    #[arg(long, default_value_t = 550)]
    pub max_window: u64,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub session: SessionArgs,
    /// Report file (JSON lines, appended).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset files in the trace format; windows with word counts are used.
    #[arg(long, required = true, num_args = 1..)]
    pub dataset: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_frames: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Per-epoch loss log (CSV).
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub session: SessionArgs,
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 0.75, 1.0])]
    pub chunk_lens: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PolicyArg::AttentionGuided, PolicyArg::LocalAgreement])]
    pub policies: Vec<PolicyArg>,
    /// Add attention-guided rows with detection disabled.
    #[arg(long)]
    pub with_ablation: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SettingsFile {
    policy: Option<Policy>,
    chunk_len_s: Option<f64>,
    l_threshold: Option<usize>,
    median_window: Option<usize>,
    fire_threshold: Option<f64>,
    tdm_weights: Option<PathBuf>,
    no_tdm: Option<bool>,
    n: Option<usize>,
    buffer_trim_s: Option<f64>,
    max_context_s: Option<f64>,
    timing: Option<String>,
    cost: Option<CostModel>,
    max_tokens: Option<usize>,
    pad_to_frames: Option<usize>,
    alignment_heads: Option<Vec<HeadId>>,
}

fn parse_head(s: &str) -> Result<HeadId> {
    let (l, h) = s
        .split_once(':')
        .ok_or_else(|| Error::Config(format!("head `{s}` is not layer:head")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<u16>()
            .map_err(|_| Error::Config(format!("head `{s}` is not layer:head")))
    };
    Ok(HeadId::new(parse(l)?, parse(h)?))
}

fn timing_mode(name: &str, cost: CostModel) -> Result<TimingMode> {
    Ok(match name {
        "unaware" => TimingMode::Unaware,
        "synthetic" => TimingMode::Synthetic(cost),
        "measured" => TimingMode::Measured,
        "recorded" => TimingMode::Recorded,
        other => return Err(Error::Config(format!("unknown timing mode `{other}`")).into()),
    })
}

/// A resolved session config and the configured weights, kept even when
/// detection is disabled so sweeps can add ablation rows.
#[derive(Debug, Clone)]
pub struct ResolvedSession {
    pub config: SessionConfig,
    /// Weights to use when detection is enabled for a cell.
    pub weights: Option<TdmWeights>,
}

fn resolve_path(base: Option<&Path>, p: PathBuf) -> PathBuf {
    match base {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

impl SessionArgs {
    pub fn resolve(&self) -> Result<ResolvedSession> {
        let (file, base) = match &self.settings {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(Error::from)
                    .with_context(|| format!("reading settings {}", p.display()))?;
                let f: SettingsFile = toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("settings {}: {e}", p.display())))?;
                (f, p.parent().map(Path::to_path_buf))
            }
            None => (SettingsFile::default(), None),
        };
        let mut c = SessionConfig::default();
        if let Some(v) = self.policy.map(Policy::from).or(file.policy) {
            c.policy = v;
        }
        if let Some(v) = self.chunk_len.or(file.chunk_len_s) {
            c.chunk_len_s = v;
        }
        if let Some(v) = self.l_threshold.or(file.l_threshold) {
            c.stop.l_threshold_frames = v;
        }
        if let Some(v) = self.median_window.or(file.median_window) {
            c.stop.median_window = v;
        }
        if let Some(v) = self.fire_threshold.or(file.fire_threshold) {
            c.fire_threshold = v;
        }
        if let Some(v) = self.n.or(file.n) {
            c.local_agreement.n = v;
        }
        if let Some(v) = file.buffer_trim_s {
            c.local_agreement.buffer_trim_s = v;
        }
        if let Some(v) = self.max_context.or(file.max_context_s) {
            c.context.max_context_s = v;
        }
        if let Some(v) = self.max_tokens.or(file.max_tokens) {
            c.max_tokens_per_chunk = v;
        }
        if let Some(v) = file.pad_to_frames {
            c.pad_to_frames = v;
        }
        let cost = file.cost.unwrap_or_default();
        c.timing = match (self.timing, &file.timing) {
            (Some(t), _) => timing_mode(
                t.to_possible_value().expect("no skipped variants").get_name(),
                cost,
            )?,
            (None, Some(name)) => timing_mode(name, cost)?,
            (None, None) => TimingMode::Unaware,
        };
        let heads: Option<BTreeSet<HeadId>> = match (&self.heads, file.alignment_heads) {
            (Some(list), _) => Some(list.iter().map(|s| parse_head(s)).collect::<Result<_>>()?),
            (None, Some(list)) => Some(list.into_iter().collect()),
            (None, None) => None,
        };
        if let Some(h) = heads {
            c.stop.alignment_head_ids = h;
        }
        let weights_path = self
            .tdm_weights
            .clone()
            .or_else(|| file.tdm_weights.map(|p| resolve_path(base.as_deref(), p)));
        let weights = match weights_path {
            Some(p) => Some(
                load_weights(&p).with_context(|| format!("loading TDM weights {}", p.display()))?,
            ),
            None => None,
        };
        let disabled = self.no_tdm || file.no_tdm.unwrap_or(false);
        c.tdm = if disabled { None } else { weights.clone() };
        c.validate()?;
        Ok(ResolvedSession { config: c, weights })
    }
}
