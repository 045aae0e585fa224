//! Seeded synthetic scripts and TDM training sets.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AudioSpan, ScriptedModel, ScriptedModelConfig, ScriptedToken, StreamingModel};
use crate::tdm::TdmExample;

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
    "br", "ch", "dr", "fl", "gr", "pl", "sh", "st", "th", "tr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ea", "ou"];
const CODAS: &[&str] = &["", "", "n", "r", "s", "t", "l", "m", "nd", "st"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    pub words: usize,
    /// Inclusive range of frames per word.
    pub min_word_frames: u64,
    pub max_word_frames: u64,
    /// Probability that a word is split into two tokens.
    pub subword_prob: f64,
    pub lead_silence_frames: u64,
    pub tail_silence_frames: u64,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            words: 40,
            min_word_frames: 10,
            max_word_frames: 30,
            subword_prob: 0.3,
            lead_silence_frames: 5,
            tail_silence_frames: 5,
            seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.words == 0 {
            return Err(Error::Config("corpus needs at least one word".into()));
        }
        if self.min_word_frames < 2 || self.min_word_frames > self.max_word_frames {
            return Err(Error::Config(format!(
                "word frame range [{}, {}] is invalid",
                self.min_word_frames, self.max_word_frames
            )));
        }
        if !(0.0..=1.0).contains(&self.subword_prob) {
            return Err(Error::Config("subword_prob must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(format!("corpus config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn random_word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).expect("non-empty"));
        w.push_str(VOWELS.choose(rng).expect("non-empty"));
    }
    w.push_str(CODAS.choose(rng).expect("non-empty"));
    w
}

/// Contiguous words with random durations, some split into two tokens.
pub fn generate_script(config: &CorpusConfig) -> Result<Vec<ScriptedToken>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut tokens = Vec::new();
    let mut t = config.lead_silence_frames;
    for _ in 0..config.words {
        let word = random_word(&mut rng);
        let frames = rng.random_range(config.min_word_frames..=config.max_word_frames);
        let chars: Vec<char> = word.chars().collect();
        if chars.len() >= 4 && frames >= 8 && rng.random_bool(config.subword_prob) {
            let cut = rng.random_range(2..=chars.len() - 2);
            let split = (frames * cut as u64 / chars.len() as u64).clamp(4, frames - 4);
            let head: String = chars[..cut].iter().collect();
            let tail: String = chars[cut..].iter().collect();
            tokens.push(ScriptedToken::new(format!(" {head}"), t, t + split));
            tokens.push(ScriptedToken::new(tail, t + split, t + frames));
        } else {
            tokens.push(ScriptedToken::new(format!(" {word}"), t, t + frames));
        }
        t += frames;
    }
    Ok(tokens)
}

/// A scripted model over a generated script.
pub fn scripted_config(config: &CorpusConfig) -> Result<ScriptedModelConfig> {
    let tokens = generate_script(config)?;
    let end = tokens.last().map_or(0, |t| t.end_frame);
    let mut cfg = ScriptedModelConfig::new(tokens);
    cfg.total_frames = Some(end + config.tail_silence_frames.max(1));
    cfg.rng_seed = config.seed;
    Ok(cfg)
}

/// Feature windows labelled with the number of words that end inside them.
pub fn tdm_examples<M: StreamingModel + ?Sized>(
    model: &M,
    spans: &[AudioSpan],
    pad_to_frames: usize,
) -> Result<Vec<TdmExample>> {
    spans
        .iter()
        .map(|&span| {
            let word_count = model.window_word_count(span).ok_or_else(|| {
                Error::Validation(format!("model {} has no word boundaries", model.name()))
            })?;
            Ok(TdmExample {
                features: model.encode(span, pad_to_frames)?,
                word_count,
            })
        })
        .collect()
}

/// Random windows of `min_frames..=max_frames` frames within a stream.
pub fn random_spans(
    stream_frames: u64,
    count: usize,
    min_frames: u64,
    max_frames: u64,
    seed: u64,
) -> Result<Vec<AudioSpan>> {
    if min_frames < 2 || min_frames > max_frames || min_frames > stream_frames {
        return Err(Error::Config(format!(
            "window range [{min_frames}, {max_frames}] does not fit a stream of {stream_frames} frames"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let len = rng.random_range(min_frames..=max_frames.min(stream_frames));
            let start = rng.random_range(0..=stream_frames - len);
            AudioSpan::new(start, start + len)
        })
        .collect())
}

/// `utterances` scripted streams, each cut into one random window, as a
/// TDM training set.
pub fn synthetic_tdm_dataset(
    base: &CorpusConfig,
    utterances: usize,
    min_frames: u64,
    max_frames: u64,
    pad_to_frames: usize,
) -> Result<Vec<TdmExample>> {
    let mut out = Vec::with_capacity(utterances);
    for u in 0..utterances {
        let cfg = CorpusConfig {
            seed: base.seed.wrapping_mul(1_000_003).wrapping_add(u as u64),
            ..base.clone()
        };
        let model = ScriptedModel::new(scripted_config(&cfg)?)?;
        let frames = model.stream_frames().expect("scripted streams have a length");
        let span = random_spans(frames, 1, min_frames, max_frames, cfg.seed ^ 0x5EED)?;
        out.extend(tdm_examples(&model, &span, pad_to_frames)?);
    }
    Ok(out)
}
