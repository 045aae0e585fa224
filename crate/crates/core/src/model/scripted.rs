use std::collections::BTreeSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    uniform_rows, AudioSpan, DecodeStepOutput, EncoderFeatureSeq, HeadId, StreamingModel,
    TokenId, Vocabulary, DEFAULT_FRAME_MS, EOS_TEXT,
};
use crate::error::{Error, Result};

/// Feature layout produced by [`ScriptedModel::encode`].
pub const FEAT_WORD_END: usize = 0;
pub const FEAT_SPEECH: usize = 1;
pub const FEAT_TRANSITION: usize = 2;
pub const MIN_SCRIPTED_DIM: usize = 3;

/// A scripted token and the stream frames `[start_frame, end_frame)` it is
/// spoken over. A leading space marks the start of a new word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedToken {
    pub text: String,
    pub start_frame: u64,
    pub end_frame: u64,
}

impl ScriptedToken {
    pub fn new(text: impl Into<String>, start_frame: u64, end_frame: u64) -> Self {
        Self {
            text: text.into(),
            start_frame,
            end_frame,
        }
    }
}

fn default_sharpness() -> f64 {
    10.0
}
fn default_dim() -> usize {
    8
}
fn default_heads() -> usize {
    2
}
fn default_frame_ms() -> f32 {
    DEFAULT_FRAME_MS
}
fn default_min_attention_frames() -> usize {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedModelConfig {
    pub tokens: Vec<ScriptedToken>,
    #[serde(default = "default_sharpness")]
    pub attention_sharpness: f64,
    /// Std-dev of Gaussian noise added to every attention logit, padding included.
    #[serde(default)]
    pub noise_level: f64,
    /// Std-dev of Gaussian noise added to every content feature value.
    #[serde(default)]
    pub feature_noise: f64,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_heads")]
    pub head_count: usize,
    #[serde(default)]
    pub alignment_heads: Option<Vec<HeadId>>,
    #[serde(default = "default_frame_ms")]
    pub frame_duration_ms: f32,
    /// Stream length; defaults to one frame past the last token.
    #[serde(default)]
    pub total_frames: Option<u64>,
    /// Attention never concentrates on fewer frames than this.
    #[serde(default = "default_min_attention_frames")]
    pub min_attention_frames: usize,
}

impl ScriptedModelConfig {
    pub fn new(tokens: Vec<ScriptedToken>) -> Self {
        Self {
            tokens,
            attention_sharpness: default_sharpness(),
            noise_level: 0.0,
            feature_noise: 0.0,
            rng_seed: 0,
            dim: default_dim(),
            head_count: default_heads(),
            alignment_heads: None,
            frame_duration_ms: default_frame_ms(),
            total_frames: None,
            min_attention_frames: default_min_attention_frames(),
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self =
            toml::from_str(s).map_err(|e| Error::Config(format!("scripted model config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn total_frames(&self) -> u64 {
        self.total_frames
            .unwrap_or_else(|| self.tokens.last().map_or(1, |t| t.end_frame + 1))
    }

    pub fn heads(&self) -> Vec<HeadId> {
        self.alignment_heads.clone().unwrap_or_else(|| {
            (0..self.head_count)
                .map(|h| HeadId::new(0, h as u16))
                .collect()
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < MIN_SCRIPTED_DIM {
            return Err(Error::Validation(format!(
                "scripted model needs dim >= {MIN_SCRIPTED_DIM}, got {}",
                self.dim
            )));
        }
        if self.head_count == 0 {
            return Err(Error::Validation("head_count must be >= 1".into()));
        }
        if let Some(ids) = &self.alignment_heads {
            if ids.len() != self.head_count {
                return Err(Error::Validation(format!(
                    "{} alignment head ids for head_count {}",
                    ids.len(),
                    self.head_count
                )));
            }
            if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
                return Err(Error::Validation("duplicate alignment head id".into()));
            }
        }
        if !(self.attention_sharpness.is_finite() && self.attention_sharpness > 0.0) {
            return Err(Error::Validation("attention_sharpness must be positive".into()));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(Error::Validation("noise_level must be nonnegative".into()));
        }
        if !(self.feature_noise.is_finite() && self.feature_noise >= 0.0) {
            return Err(Error::Validation("feature_noise must be nonnegative".into()));
        }
        if !(self.frame_duration_ms.is_finite() && self.frame_duration_ms > 0.0) {
            return Err(Error::Validation("frame_duration_ms must be positive".into()));
        }
        if self.min_attention_frames == 0 {
            return Err(Error::Validation("min_attention_frames must be >= 1".into()));
        }
        let total = self.total_frames();
        let mut prev_end = 0u64;
        for (i, t) in self.tokens.iter().enumerate() {
            if t.text.trim().is_empty() || t.text == EOS_TEXT {
                return Err(Error::Validation(format!("token {i} has invalid text {:?}", t.text)));
            }
            if t.start_frame >= t.end_frame {
                return Err(Error::Validation(format!(
                    "token {i} ({:?}) has empty alignment [{}, {})",
                    t.text, t.start_frame, t.end_frame
                )));
            }
            if t.start_frame < prev_end {
                return Err(Error::Validation(format!(
                    "token {i} ({:?}) starts at frame {} before previous token ends at {prev_end}",
                    t.text, t.start_frame
                )));
            }
            if t.end_frame > total {
                return Err(Error::Validation(format!(
                    "token {i} ends at frame {} beyond stream length {total}",
                    t.end_frame
                )));
            }
            prev_end = t.end_frame;
        }
        Ok(())
    }
}

/// Deterministic synthetic encoder-decoder.
///
/// Encoded frames carry a word-end marker on the last frame of every word,
/// a speech-activity flag, and a transition marker on the final content frame
/// (where real encoders see the speech-to-padding edge). Decoding follows the
/// script: the token after a context of `k` tokens is script token `k`. A
/// token whose audio is cut by the window end is emitted as a corrupted
/// prefix of itself; a token whose audio has not started yields EOS.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    config: ScriptedModelConfig,
    heads: Vec<HeadId>,
    vocab: Vocabulary,
    token_ids: Vec<TokenId>,
    /// Accepted context ids per script slot (the token and its corruptions).
    slot_ids: Vec<Vec<TokenId>>,
    word_end_frames: Vec<u64>,
    total_frames: u64,
}

/// The text a token decodes to when only `visible_frac` of its audio is present.
pub fn corrupted_text(text: &str, visible_frac: f64) -> String {
    let word = text.trim_start();
    let lead = &text[..text.len() - word.len()];
    let chars: Vec<char> = word.chars().collect();
    if chars.len() < 2 {
        return format!("{lead}{word}{word}");
    }
    let k = ((visible_frac * chars.len() as f64).ceil() as usize).clamp(1, chars.len() - 1);
    let mut s = lead.to_string();
    s.extend(&chars[..k]);
    s
}

fn corruption_variants(text: &str) -> Vec<String> {
    let word = text.trim_start();
    let n = word.chars().count();
    if n < 2 {
        return vec![corrupted_text(text, 0.5)];
    }
    (1..n)
        .map(|k| corrupted_text(text, k as f64 / n as f64))
        .collect()
}

fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 fold
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

impl ScriptedModel {
    pub fn new(config: ScriptedModelConfig) -> Result<Self> {
        config.validate()?;
        let mut texts = BTreeSet::new();
        for t in &config.tokens {
            texts.insert(t.text.clone());
            texts.extend(corruption_variants(&t.text));
        }
        texts.remove(EOS_TEXT);
        let mut entries = Vec::with_capacity(texts.len() + 1);
        entries.push(EOS_TEXT.to_string());
        entries.extend(texts);
        let vocab = Vocabulary::new(entries, 0)?;
        let lookup = |s: &str| vocab.id(s).expect("vocabulary covers scripted texts");
        let token_ids = config.tokens.iter().map(|t| lookup(&t.text)).collect();
        let slot_ids = config
            .tokens
            .iter()
            .map(|t| {
                let mut ids: Vec<TokenId> = std::iter::once(lookup(&t.text))
                    .chain(corruption_variants(&t.text).iter().map(|v| lookup(v)))
                    .collect();
                ids.sort_unstable();
                ids.dedup();
                ids
            })
            .collect();

        let mut word_end_frames = Vec::new();
        for (i, t) in config.tokens.iter().enumerate() {
            let next_starts_word = config
                .tokens
                .get(i + 1)
                .is_none_or(|n| n.text.starts_with(char::is_whitespace));
            if next_starts_word {
                word_end_frames.push(t.end_frame - 1);
            }
        }
        Ok(Self {
            heads: config.heads(),
            total_frames: config.total_frames(),
            vocab,
            token_ids,
            slot_ids,
            word_end_frames,
            config,
        })
    }

    pub fn config(&self) -> &ScriptedModelConfig {
        &self.config
    }

    /// Last frame of each word, in stream frames.
    pub fn word_end_frames(&self) -> &[u64] {
        &self.word_end_frames
    }

    pub fn token_id(&self, index: usize) -> Option<TokenId> {
        self.token_ids.get(index).copied()
    }

    fn in_speech(&self, frame: u64) -> bool {
        let toks = &self.config.tokens;
        let i = toks.partition_point(|t| t.end_frame <= frame);
        toks.get(i).is_some_and(|t| t.start_frame <= frame)
    }

    fn attention_rows(
        &self,
        features: &EncoderFeatureSeq,
        token_index: usize,
        region: (usize, usize),
    ) -> Vec<Vec<f32>> {
        let (rs, re) = region;
        let width = re - rs;
        let center = (rs + re - 1) as f64 / 2.0;
        let sigma = (width as f64 / 4.0).max(1.0);
        let sharp = self.config.attention_sharpness;
        let n_frames = features.n_frames;
        let mut rows = Vec::with_capacity(self.heads.len());
        for h in 0..self.heads.len() {
            let mut logits = vec![0.0f64; n_frames];
            for (n, l) in logits.iter_mut().enumerate().take(re).skip(rs) {
                let d = n as f64 - center;
                *l = sharp - d * d / (2.0 * sigma * sigma);
            }
            if self.config.noise_level > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    self.config.rng_seed,
                    token_index as u64,
                    features.start_frame,
                    features.content_len as u64,
                    h as u64,
                ]));
                for l in logits.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *l += self.config.noise_level * z;
                }
            }
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            rows.push(exps.iter().map(|e| (e / total) as f32).collect());
        }
        rows
    }

    fn attended_region(&self, visible: (usize, usize), content_len: usize) -> (usize, usize) {
        let (vs, ve) = visible;
        let width = (ve - vs).max(self.config.min_attention_frames).min(content_len);
        let extra = width - (ve - vs).min(width);
        let mut rs = vs.saturating_sub(extra / 2);
        if rs + width > content_len {
            rs = content_len - width;
        }
        (rs, rs + width)
    }
}

impl StreamingModel for ScriptedModel {
    fn name(&self) -> &str {
        "scripted"
    }

    fn feature_dim(&self) -> usize {
        self.config.dim
    }

    fn frame_duration_ms(&self) -> f32 {
        self.config.frame_duration_ms
    }

    fn alignment_heads(&self) -> &[HeadId] {
        &self.heads
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, span: AudioSpan, pad_to_frames: usize) -> Result<EncoderFeatureSeq> {
        if span.is_empty() {
            return Err(Error::DegenerateInput("empty chunk".into()));
        }
        if span.end_frame > self.total_frames {
            return Err(Error::Validation(format!(
                "span ends at frame {} beyond stream length {}",
                span.end_frame, self.total_frames
            )));
        }
        let content_len = span.len() as usize;
        if content_len > pad_to_frames {
            return Err(Error::Capacity {
                content: content_len,
                capacity: pad_to_frames,
            });
        }
        let dim = self.config.dim;
        let mut content = vec![0.0f32; content_len * dim];
        for (n, row) in content.chunks_exact_mut(dim).enumerate() {
            let frame = span.start_frame + n as u64;
            let last = n + 1 == content_len;
            if last || self.word_end_frames.binary_search(&frame).is_ok() {
                row[FEAT_WORD_END] = 1.0;
            }
            if self.in_speech(frame) {
                row[FEAT_SPEECH] = 1.0;
            }
            if last {
                row[FEAT_TRANSITION] = 1.0;
            }
            if self.config.feature_noise > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[
                    self.config.rng_seed,
                    0xFEA7,
                    frame,
                ]));
                for v in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v += (self.config.feature_noise * z) as f32;
                }
            }
        }
        EncoderFeatureSeq::from_content(
            &content,
            dim,
            pad_to_frames,
            self.config.frame_duration_ms,
            span.start_frame,
        )
    }

    fn decode_step(
        &self,
        features: &EncoderFeatureSeq,
        context: &[TokenId],
    ) -> Result<DecodeStepOutput> {
        if features.dim != self.config.dim {
            return Err(Error::Validation(format!(
                "features have dim {}, model expects {}",
                features.dim, self.config.dim
            )));
        }
        for (i, id) in context.iter().enumerate() {
            match self.slot_ids.get(i) {
                Some(ok) if ok.binary_search(id).is_ok() => {}
                _ => {
                    return Err(Error::InvalidContext(format!(
                        "context token {i} (id {id}) does not follow the script"
                    )))
                }
            }
        }
        let eos = || DecodeStepOutput {
            token_id: self.vocab.eos(),
            token_text: EOS_TEXT.to_string(),
            head_rows: uniform_rows(features.n_frames, self.heads.len()),
            is_eos: true,
        };
        let index = context.len();
        let Some(tok) = self.config.tokens.get(index) else {
            return Ok(eos());
        };
        let w0 = features.start_frame;
        let w1 = w0 + features.content_len as u64;
        if tok.start_frame >= w1 {
            return Ok(eos());
        }
        let visible = if tok.end_frame <= w0 {
            (0, 1)
        } else {
            let vs = tok.start_frame.max(w0);
            let ve = tok.end_frame.min(w1);
            ((vs - w0) as usize, (ve - w0) as usize)
        };
        let truncated = tok.end_frame > w1;
        let text = if truncated {
            let seen = (w1 - tok.start_frame.max(w0)) as f64;
            corrupted_text(&tok.text, seen / (tok.end_frame - tok.start_frame) as f64)
        } else {
            tok.text.clone()
        };
        let token_id = self
            .vocab
            .id(&text)
            .expect("corruption variants are in the vocabulary");
        let region = self.attended_region(visible, features.content_len);
        Ok(DecodeStepOutput {
            token_id,
            token_text: text,
            head_rows: self.attention_rows(features, index, region),
            is_eos: false,
        })
    }

    fn stream_frames(&self) -> Option<u64> {
        Some(self.total_frames)
    }

    fn reference(&self) -> Option<String> {
        let s: String = self.config.tokens.iter().map(|t| t.text.as_str()).collect();
        Some(s.trim().to_string())
    }

    fn window_word_count(&self, span: AudioSpan) -> Option<u32> {
        if span.len() < 2 {
            return Some(0);
        }
        let lo = self.word_end_frames.partition_point(|&f| f < span.start_frame);
        let hi = self.word_end_frames.partition_point(|&f| f < span.end_frame - 1);
        Some((hi - lo) as u32)
    }
}
