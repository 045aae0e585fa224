//! The streamable encoder-decoder contract and its two implementations: a
//! deterministic scripted model and a trace-replay model.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod replay;
mod scripted;

pub use replay::{RecordingModel, TraceReplayModel};
pub use scripted::{
    corrupted_text, ScriptedModel, ScriptedModelConfig, ScriptedToken, FEAT_SPEECH, FEAT_TRANSITION,
    FEAT_WORD_END, MIN_SCRIPTED_DIM,
};

/// Frames in a fixed 30 s encoder input window at 20 ms per frame.
pub const ENCODER_PAD_FRAMES: usize = 1500;
pub const DEFAULT_FRAME_MS: f32 = 20.0;

pub type TokenId = u32;

/// A cross-attention head, addressed as (decoder layer, head index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HeadId {
    pub layer: u16,
    pub head: u16,
}

impl HeadId {
    pub const fn new(layer: u16, head: u16) -> Self {
        Self { layer, head }
    }
}

/// Half-open range of stream frames `[start_frame, end_frame)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AudioSpan {
    pub start_frame: u64,
    pub end_frame: u64,
}

impl AudioSpan {
    pub fn new(start_frame: u64, end_frame: u64) -> Self {
        Self {
            start_frame,
            end_frame,
        }
    }

    pub fn len(&self) -> u64 {
        self.end_frame.saturating_sub(self.start_frame)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Encoded audio for one decoder pass, padded to the model's input window.
///
/// `frames` is row-major `n_frames × dim`. Frames at and beyond
/// `content_len` are padding. `start_frame` is the stream position of
/// frame 0, so absolute frame `start_frame + k` is row `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderFeatureSeq {
    pub frames: Vec<f32>,
    pub n_frames: usize,
    pub dim: usize,
    pub content_len: usize,
    pub frame_duration_ms: f32,
    pub start_frame: u64,
}

impl EncoderFeatureSeq {
    /// Zero-pads `content` (row-major, `dim` columns) to `pad_to_frames`.
    pub fn from_content(
        content: &[f32],
        dim: usize,
        pad_to_frames: usize,
        frame_duration_ms: f32,
        start_frame: u64,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Validation("feature dimension must be >= 1".into()));
        }
        if !content.len().is_multiple_of(dim) {
            return Err(Error::Validation(format!(
                "content length {} is not a multiple of dim {dim}",
                content.len()
            )));
        }
        let content_len = content.len() / dim;
        if content_len == 0 {
            return Err(Error::DegenerateInput("empty chunk".into()));
        }
        if content_len > pad_to_frames {
            return Err(Error::Capacity {
                content: content_len,
                capacity: pad_to_frames,
            });
        }
        let mut frames = vec![0.0f32; pad_to_frames * dim];
        frames[..content.len()].copy_from_slice(content);
        let seq = Self {
            frames,
            n_frames: pad_to_frames,
            dim,
            content_len,
            frame_duration_ms,
            start_frame,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn frame(&self, n: usize) -> &[f32] {
        &self.frames[n * self.dim..(n + 1) * self.dim]
    }

    /// Stream span covered by real content.
    pub fn content_span(&self) -> AudioSpan {
        AudioSpan::new(self.start_frame, self.start_frame + self.content_len as u64)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 || self.dim == 0 {
            return Err(Error::Validation(format!(
                "feature matrix must be non-empty, got {}x{}",
                self.n_frames, self.dim
            )));
        }
        if self.frames.len() != self.n_frames * self.dim {
            return Err(Error::Validation(format!(
                "feature buffer holds {} values, expected {}",
                self.frames.len(),
                self.n_frames * self.dim
            )));
        }
        if self.content_len == 0 || self.content_len > self.n_frames {
            return Err(Error::Validation(format!(
                "content_len {} outside [1, {}]",
                self.content_len, self.n_frames
            )));
        }
        if !(self.frame_duration_ms.is_finite() && self.frame_duration_ms > 0.0) {
            return Err(Error::Validation("frame duration must be positive".into()));
        }
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite feature value".into()));
        }
        Ok(())
    }
}

/// One autoregressive decoder step: the next token and the attention rows of
/// the model's alignment heads, in the order of
/// [`StreamingModel::alignment_heads`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStepOutput {
    pub token_id: TokenId,
    pub token_text: String,
    pub head_rows: Vec<Vec<f32>>,
    pub is_eos: bool,
}

impl DecodeStepOutput {
    /// Checks the softmax-row invariants against the feature length and head count.
    pub fn validate(&self, n_frames: usize, head_count: usize) -> Result<()> {
        if self.head_rows.len() != head_count {
            return Err(Error::Validation(format!(
                "step carries {} head rows, model declares {head_count}",
                self.head_rows.len()
            )));
        }
        for (h, row) in self.head_rows.iter().enumerate() {
            if row.len() != n_frames {
                return Err(Error::Validation(format!(
                    "head row {h} has length {}, features have N_a = {n_frames}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Validation(format!(
                    "head row {h} has a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            if (sum - 1.0).abs() > 1e-4 {
                return Err(Error::Validation(format!(
                    "head row {h} sums to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }
}

/// Token table with an end-of-sequence entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    entries: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
}

pub const EOS_TEXT: &str = "<|endoftext|>";

impl Vocabulary {
    pub fn new(entries: Vec<String>, eos: TokenId) -> Result<Self> {
        if eos as usize >= entries.len() {
            return Err(Error::Validation(format!(
                "eos id {eos} outside vocabulary of {} entries",
                entries.len()
            )));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if index.insert(e.clone(), i as TokenId).is_some() {
                return Err(Error::Validation(format!("duplicate vocabulary entry {e:?}")));
            }
        }
        Ok(Self {
            entries,
            index,
            eos,
        })
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn id(&self, text: &str) -> Option<TokenId> {
        self.index.get(text).copied()
    }

    pub fn text(&self, id: TokenId) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// A streamable encoder-decoder model.
///
/// Implementations are immutable once built; all per-session state (the
/// decoder context) is passed in.
pub trait StreamingModel: Send + Sync {
    fn name(&self) -> &str;

    fn feature_dim(&self) -> usize;

    fn frame_duration_ms(&self) -> f32;

    fn alignment_heads(&self) -> &[HeadId];

    fn vocabulary(&self) -> &Vocabulary;

    /// Encodes the stream audio in `span`, padded to `pad_to_frames`.
    fn encode(&self, span: AudioSpan, pad_to_frames: usize) -> Result<EncoderFeatureSeq>;

    /// Produces the token following `context` given `features`.
    fn decode_step(
        &self,
        features: &EncoderFeatureSeq,
        context: &[TokenId],
    ) -> Result<DecodeStepOutput>;

    /// Length of the underlying stream, when the model knows it.
    fn stream_frames(&self) -> Option<u64> {
        None
    }

    /// Reference transcript, when the model knows it.
    fn reference(&self) -> Option<String> {
        None
    }

    /// Number of complete words whose final frame lies within the retained
    /// frames of `span` (all but its last frame). Only available for models
    /// with scripted word boundaries.
    fn window_word_count(&self, _span: AudioSpan) -> Option<u32> {
        None
    }

    /// Processing time recorded for `span`, for deterministic
    /// computation-aware timing on replayed runs.
    fn recorded_processing_s(&self, _span: AudioSpan) -> Option<f64> {
        None
    }
}

impl<M: StreamingModel + ?Sized> StreamingModel for &M {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn feature_dim(&self) -> usize {
        (**self).feature_dim()
    }
    fn frame_duration_ms(&self) -> f32 {
        (**self).frame_duration_ms()
    }
    fn alignment_heads(&self) -> &[HeadId] {
        (**self).alignment_heads()
    }
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }
    fn encode(&self, span: AudioSpan, pad_to_frames: usize) -> Result<EncoderFeatureSeq> {
        (**self).encode(span, pad_to_frames)
    }
    fn decode_step(
        &self,
        features: &EncoderFeatureSeq,
        context: &[TokenId],
    ) -> Result<DecodeStepOutput> {
        (**self).decode_step(features, context)
    }
    fn stream_frames(&self) -> Option<u64> {
        (**self).stream_frames()
    }
    fn reference(&self) -> Option<String> {
        (**self).reference()
    }
    fn window_word_count(&self, span: AudioSpan) -> Option<u32> {
        (**self).window_word_count(span)
    }
    fn recorded_processing_s(&self, span: AudioSpan) -> Option<f64> {
        (**self).recorded_processing_s(span)
    }
}

/// Uniform attention over all frames, used for EOS steps.
pub(crate) fn uniform_rows(n_frames: usize, head_count: usize) -> Vec<Vec<f32>> {
    let v = 1.0 / n_frames as f32;
    vec![vec![v; n_frames]; head_count]
}
