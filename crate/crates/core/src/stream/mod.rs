//! The streaming controller.
//!
//! Chunks arrive in order. Under the attention-guided policy each chunk is
//! decoded together with the retained context audio, conditioned on the
//! committed transcript, and cut off by the boundary rule. When the
//! truncation detector flags the chunk, the last word of the new output is
//! dropped and re-decoded once the next chunk arrives. The Local Agreement
//! baseline re-decodes its whole buffer every chunk and commits only what
//! consecutive hypotheses agree on.

mod context;
mod local_agreement;

use std::sync::mpsc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use context::{manage_context, ContextQueue, ContextQueueConfig, Segment};
pub use local_agreement::{longest_common_prefix, LocalAgreementState, DEFAULT_AGREEMENT_N};

use crate::align::{
    attention_guided_decode, DecodeOptions, DecodeOutcome, EmittedToken, StepDiagnostic,
    StopPolicyConfig, DEFAULT_MAX_TOKENS,
};
use crate::error::{Error, Result};
use crate::model::{AudioSpan, StreamingModel, TokenId, ENCODER_PAD_FRAMES};
use crate::tdm::{detect_truncation, signal, TdmWeights, DEFAULT_FIRE_THRESHOLD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    AttentionGuided,
    LocalAgreement,
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Policy::AttentionGuided => "attention-guided",
            Policy::LocalAgreement => "local-agreement",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalAgreementConfig {
    pub n: usize,
    /// Buffer length that triggers trimming at a chunk boundary.
    pub buffer_trim_s: f64,
}

impl Default for LocalAgreementConfig {
    fn default() -> Self {
        Self {
            n: DEFAULT_AGREEMENT_N,
            buffer_trim_s: 15.0,
        }
    }
}

/// Deterministic processing-time model for computation-aware latency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub encode_s: f64,
    pub decode_step_s: f64,
    pub tdm_s: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            encode_s: 0.05,
            decode_step_s: 0.01,
            tdm_s: 0.002,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TimingMode {
    /// No processing time; aware and unaware times coincide.
    Unaware,
    Synthetic(CostModel),
    /// Wall-clock processing time.
    Measured,
    /// Processing times stored in the replayed trace.
    Recorded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub policy: Policy,
    pub chunk_len_s: f64,
    pub stop: StopPolicyConfig,
    pub fire_threshold: f64,
    /// None disables truncation detection.
    pub tdm: Option<TdmWeights>,
    pub context: ContextQueueConfig,
    pub local_agreement: LocalAgreementConfig,
    pub max_tokens_per_chunk: usize,
    pub pad_to_frames: usize,
    pub timing: TimingMode,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            policy: Policy::AttentionGuided,
            chunk_len_s: 1.0,
            stop: StopPolicyConfig::default(),
            fire_threshold: DEFAULT_FIRE_THRESHOLD,
            tdm: None,
            context: ContextQueueConfig::default(),
            local_agreement: LocalAgreementConfig::default(),
            max_tokens_per_chunk: DEFAULT_MAX_TOKENS,
            pad_to_frames: ENCODER_PAD_FRAMES,
            timing: TimingMode::Unaware,
        }
    }
}

impl SessionConfig {
    /// Validates against `model` and fills an empty head set with the
    /// model's alignment heads.
    pub fn resolved_for<M: StreamingModel + ?Sized>(&self, model: &M) -> Result<Self> {
        self.validate()?;
        let mut config = self.clone();
        let declared = model.alignment_heads();
        if config.stop.alignment_head_ids.is_empty() {
            config.stop.alignment_head_ids = declared.iter().copied().collect();
        }
        if let Some(h) = config
            .stop
            .alignment_head_ids
            .iter()
            .find(|h| !declared.contains(h))
        {
            return Err(Error::Config(format!(
                "alignment head ({}, {}) is not provided by the model",
                h.layer, h.head
            )));
        }
        if config.stop.alignment_head_ids.is_empty() {
            return Err(Error::Config("model declares no alignment heads".into()));
        }
        if let Some(w) = &config.tdm {
            if w.dim() != model.feature_dim() {
                return Err(Error::Config(format!(
                    "TDM weights have dim {}, model features have {}",
                    w.dim(),
                    model.feature_dim()
                )));
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.chunk_len_s.is_finite() && self.chunk_len_s > 0.0) {
            return Err(Error::Config(format!(
                "chunk length must be positive, got {}",
                self.chunk_len_s
            )));
        }
        if !(self.fire_threshold.is_finite() && self.fire_threshold > 0.0) {
            return Err(Error::Config("fire threshold must be positive".into()));
        }
        if self.local_agreement.n == 0 {
            return Err(Error::Config("local agreement n must be >= 1".into()));
        }
        if self.local_agreement.buffer_trim_s.is_nan() || self.local_agreement.buffer_trim_s <= 0.0 {
            return Err(Error::Config("buffer trim length must be positive".into()));
        }
        if self.max_tokens_per_chunk == 0 || self.pad_to_frames == 0 {
            return Err(Error::Config("token cap and padded length must be positive".into()));
        }
        self.context.validate()?;
        self.stop.validate()?;
        if let Some(w) = &self.tdm {
            w.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommittedToken {
    pub id: TokenId,
    pub text: String,
    pub chunk_index: usize,
    /// Committed by the end-of-stream flush.
    pub flushed: bool,
    /// Stream time the token became available ignoring computation.
    pub unaware_s: f64,
    /// Stream time including the processing backlog.
    pub aware_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkDiagnostics {
    pub index: usize,
    pub chunk: AudioSpan,
    /// Encoded window, context audio included.
    pub window: AudioSpan,
    pub steps: Vec<StepDiagnostic>,
    pub withheld: Option<String>,
    pub truncation: Option<bool>,
    pub deferred: Vec<String>,
    pub committed: usize,
    pub cap_reached: bool,
    pub processing_s: f64,
    pub end_s: f64,
    pub ready_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deferral {
    pub chunk_index: usize,
    /// Transcript length when the word was dropped; re-decoding resumes here.
    pub position: usize,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub policy: Policy,
    pub chunk_len_s: f64,
    pub frame_duration_ms: f32,
    pub stream_seconds: f64,
    pub committed: Vec<CommittedToken>,
    pub chunks: Vec<ChunkDiagnostics>,
    pub flush: Option<ChunkDiagnostics>,
    pub deferrals: Vec<Deferral>,
}

impl SessionResult {
    pub fn transcript(&self) -> String {
        let s: String = self.committed.iter().map(|t| t.text.as_str()).collect();
        s.trim().to_string()
    }

    pub fn token_ids(&self) -> Vec<TokenId> {
        self.committed.iter().map(|t| t.id).collect()
    }
}

/// Chunk boundaries for a stream of `stream_frames` frames. Boundaries fall
/// on the frame nearest each multiple of the chunk length, so a 0.75 s chunk
/// at 20 ms alternates between 37 and 38 frames.
pub fn chunk_spans(stream_frames: u64, chunk_len_s: f64, frame_duration_ms: f32) -> Vec<AudioSpan> {
    let frame_s = frame_duration_ms as f64 / 1000.0;
    let mut spans = Vec::new();
    let mut start = 0u64;
    let mut k = 1u64;
    while start < stream_frames {
        let end = ((k as f64 * chunk_len_s / frame_s).round() as u64).clamp(start + 1, stream_frames);
        spans.push(AudioSpan::new(start, end));
        start = end;
        k += 1;
    }
    spans
}

/// Splits off the last word: the tokens from the last whitespace-led token
/// onward, or all of them if none is whitespace-led.
pub fn split_last_word(delta: &mut Vec<EmittedToken>) -> Vec<EmittedToken> {
    let at = delta
        .iter()
        .rposition(|t| t.text.starts_with(char::is_whitespace))
        .unwrap_or(0);
    delta.split_off(at)
}

#[derive(Debug)]
struct LaRuntime {
    state: LocalAgreementState,
    buffer_start: u64,
    prompt_len: usize,
    /// Estimated stream frame of each committed token.
    committed_frames: Vec<u64>,
    /// Decoded part of the latest hypothesis with frames.
    last_decoded: Vec<(EmittedToken, u64)>,
}

/// One streaming session over a model.
pub struct StreamSession<'m, M: StreamingModel + ?Sized> {
    model: &'m M,
    config: SessionConfig,
    frame_s: f64,
    max_chunk_frames: u64,
    queue: ContextQueue,
    la: Option<LaRuntime>,
    committed: Vec<CommittedToken>,
    deferred_tail: Vec<EmittedToken>,
    chunks: Vec<ChunkDiagnostics>,
    chunk_starts: Vec<u64>,
    deferrals: Vec<Deferral>,
    next_frame: u64,
    ready_s: f64,
    failed: bool,
    flush: Option<ChunkDiagnostics>,
    finished: bool,
}

impl<'m, M: StreamingModel + ?Sized> StreamSession<'m, M> {
    pub fn new(model: &'m M, config: SessionConfig) -> Result<Self> {
        let config = config.resolved_for(model)?;
        let frame_s = model.frame_duration_ms() as f64 / 1000.0;
        let max_chunk_frames = (config.chunk_len_s / frame_s).ceil().max(1.0) as u64;
        let la = (config.policy == Policy::LocalAgreement).then(|| LaRuntime {
            state: LocalAgreementState::new(config.local_agreement.n),
            buffer_start: 0,
            prompt_len: 0,
            committed_frames: Vec::new(),
            last_decoded: Vec::new(),
        });
        Ok(Self {
            model,
            queue: ContextQueue::new(frame_s),
            config,
            frame_s,
            max_chunk_frames,
            la,
            committed: Vec::new(),
            deferred_tail: Vec::new(),
            chunks: Vec::new(),
            chunk_starts: Vec::new(),
            deferrals: Vec::new(),
            next_frame: 0,
            ready_s: 0.0,
            failed: false,
            flush: None,
            finished: false,
        })
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn committed(&self) -> &[CommittedToken] {
        &self.committed
    }

    /// Tokens dropped by truncation handling in the latest chunk.
    pub fn deferred_tail(&self) -> &[EmittedToken] {
        &self.deferred_tail
    }

    pub fn context_queue(&self) -> &ContextQueue {
        &self.queue
    }

    pub fn chunks(&self) -> &[ChunkDiagnostics] {
        &self.chunks
    }

    /// Feeds the next chunk and returns the tokens it commits.
    pub fn push_chunk(&mut self, chunk: AudioSpan) -> Result<Vec<CommittedToken>> {
        if self.failed || self.finished {
            return Err(Error::SessionFailed);
        }
        if chunk.start_frame != self.next_frame || chunk.is_empty() {
            self.failed = true;
            return Err(Error::Validation(format!(
                "chunk [{}, {}) does not continue the stream at frame {}",
                chunk.start_frame, chunk.end_frame, self.next_frame
            )));
        }
        if chunk.len() > self.max_chunk_frames {
            self.failed = true;
            return Err(Error::Validation(format!(
                "chunk of {} frames exceeds the configured {} frames",
                chunk.len(),
                self.max_chunk_frames
            )));
        }
        let result = match self.config.policy {
            Policy::AttentionGuided => self.push_attention(chunk),
            Policy::LocalAgreement => self.push_local_agreement(chunk),
        };
        match result {
            Ok(delta) => {
                self.next_frame = chunk.end_frame;
                Ok(delta)
            }
            Err(e) => {
                self.failed = true;
                Err(e)
            }
        }
    }

    fn processing_time(&self, window: AudioSpan, steps: usize, tdm: bool, started: Instant) -> Result<f64> {
        Ok(match self.config.timing {
            TimingMode::Unaware => 0.0,
            TimingMode::Synthetic(c) => {
                c.encode_s + steps as f64 * c.decode_step_s + if tdm { c.tdm_s } else { 0.0 }
            }
            TimingMode::Measured => started.elapsed().as_secs_f64(),
            TimingMode::Recorded => self.model.recorded_processing_s(window).ok_or_else(|| {
                Error::Config(format!(
                    "no recorded processing time for window [{}, {})",
                    window.start_frame, window.end_frame
                ))
            })?,
        })
    }

    fn commit(
        &mut self,
        tokens: impl IntoIterator<Item = EmittedToken>,
        chunk_index: usize,
        flushed: bool,
        unaware_s: f64,
        aware_s: f64,
    ) -> Vec<CommittedToken> {
        let start = self.committed.len();
        self.committed.extend(tokens.into_iter().map(|t| CommittedToken {
            id: t.id,
            text: t.text,
            chunk_index,
            flushed,
            unaware_s,
            aware_s,
        }));
        self.committed[start..].to_vec()
    }

    fn conditioning(&self) -> Vec<TokenId> {
        let ctx = self.queue.conditioning();
        debug_assert_eq!(ctx.len(), self.committed.len());
        ctx
    }

    fn push_attention(&mut self, chunk: AudioSpan) -> Result<Vec<CommittedToken>> {
        let started = Instant::now();
        let mut start = self.queue.audio_start().unwrap_or(chunk.start_frame);
        if !self.deferred_tail.is_empty() {
            if let Some(prev) = self.chunks.last() {
                start = start.min(prev.chunk.start_frame);
            }
        }
        let start = start.max(chunk.end_frame.saturating_sub(self.config.pad_to_frames as u64));
        let window = AudioSpan::new(start, chunk.end_frame);
        let features = self.model.encode(window, self.config.pad_to_frames)?;
        let context = self.conditioning();
        let outcome = attention_guided_decode(
            self.model,
            &features,
            &context,
            &self.config.stop,
            DecodeOptions {
                stop_rule: true,
                max_tokens: self.config.max_tokens_per_chunk,
            },
        )?;
        let truncation = match &self.config.tdm {
            Some(w) => Some(detect_truncation(
                &signal(&features, w)?,
                self.config.fire_threshold,
            )),
            None => None,
        };
        let DecodeOutcome {
            mut emitted,
            steps,
            withheld,
            cap_reached,
            ..
        } = outcome;
        let deferred = if truncation == Some(true) {
            split_last_word(&mut emitted)
        } else {
            Vec::new()
        };
        let index = self.chunks.len();
        let processing_s = self.processing_time(window, steps.len(), truncation.is_some(), started)?;
        let end_s = chunk.end_frame as f64 * self.frame_s;
        let ready_s = end_s.max(self.ready_s) + processing_s;
        self.ready_s = ready_s;

        if !deferred.is_empty() {
            self.deferrals.push(Deferral {
                chunk_index: index,
                position: self.committed.len() + emitted.len(),
                tokens: deferred.iter().map(|t| t.text.clone()).collect(),
            });
        }
        let ids: Vec<TokenId> = emitted.iter().map(|t| t.id).collect();
        let delta = self.commit(emitted, index, false, end_s, ready_s);
        self.queue.push(Segment {
            span: chunk,
            tokens: ids,
        });
        manage_context(&mut self.queue, &self.config.context);
        self.chunks.push(ChunkDiagnostics {
            index,
            chunk,
            window,
            steps,
            withheld: withheld.map(|t| t.text),
            truncation,
            deferred: deferred.iter().map(|t| t.text.clone()).collect(),
            committed: delta.len(),
            cap_reached,
            processing_s,
            end_s,
            ready_s,
        });
        self.chunk_starts.push(chunk.start_frame);
        self.deferred_tail = deferred;
        Ok(delta)
    }

    fn la_trim(&mut self, chunk: AudioSpan) {
        let pad = self.config.pad_to_frames as u64;
        let trim_frames = (self.config.local_agreement.buffer_trim_s / self.frame_s).round() as u64;
        let la = self.la.as_mut().expect("local agreement runtime");
        let buffered = chunk.end_frame - la.buffer_start;
        let mut target = None;
        if buffered > trim_frames {
            // start of the last committed word
            let committed = la.state.committed();
            if let Some(j) = (la.prompt_len..committed.len())
                .rev()
                .find(|&j| self.committed[j].text.starts_with(char::is_whitespace))
            {
                target = Some(la.committed_frames[j]);
            }
        }
        if buffered > pad {
            let min_start = chunk.end_frame - pad;
            target = Some(target.map_or(min_start, |t| t.max(min_start)));
        }
        let Some(target) = target else {
            return;
        };
        let must_cover = buffered > pad;
        let boundary = if must_cover {
            self.chunk_starts
                .iter()
                .chain(std::iter::once(&chunk.start_frame))
                .copied()
                .find(|&b| b >= target)
        } else {
            self.chunk_starts
                .iter()
                .copied()
                .filter(|&b| b <= target && b > la.buffer_start)
                .max()
        };
        if let Some(b) = boundary {
            la.buffer_start = b;
            la.prompt_len = la.committed_frames.iter().take_while(|&&f| f < b).count();
        }
    }

    fn push_local_agreement(&mut self, chunk: AudioSpan) -> Result<Vec<CommittedToken>> {
        let started = Instant::now();
        self.la_trim(chunk);
        let la = self.la.as_ref().expect("local agreement runtime");
        let window = AudioSpan::new(la.buffer_start, chunk.end_frame);
        let prompt: Vec<TokenId> = la.state.committed()[..la.prompt_len].to_vec();
        let features = self.model.encode(window, self.config.pad_to_frames)?;
        let outcome = attention_guided_decode(
            self.model,
            &features,
            &prompt,
            &self.config.stop,
            DecodeOptions {
                stop_rule: false,
                max_tokens: self.config.max_tokens_per_chunk,
            },
        )?;
        let mut hypothesis = prompt.clone();
        hypothesis.extend(outcome.emitted.iter().map(|t| t.id));
        let decoded: Vec<(EmittedToken, u64)> = outcome
            .emitted
            .iter()
            .map(|t| (t.clone(), window.start_frame + t.argmax_frame as u64))
            .collect();

        let index = self.chunks.len();
        let processing_s = self.processing_time(window, outcome.steps.len(), false, started)?;
        let end_s = chunk.end_frame as f64 * self.frame_s;
        let ready_s = end_s.max(self.ready_s) + processing_s;
        self.ready_s = ready_s;

        let la = self.la.as_mut().expect("local agreement runtime");
        let first = la.state.committed().len();
        let delta_ids = la.state.step(hypothesis);
        let prompt_len = prompt.len();
        let new_tokens: Vec<EmittedToken> = (first..first + delta_ids.len())
            .map(|p| decoded[p - prompt_len].0.clone())
            .collect();
        la.committed_frames
            .extend((first..first + delta_ids.len()).map(|p| decoded[p - prompt_len].1));
        la.last_decoded = decoded;
        let delta = self.commit(new_tokens, index, false, end_s, ready_s);
        self.chunks.push(ChunkDiagnostics {
            index,
            chunk,
            window,
            steps: outcome.steps,
            withheld: None,
            truncation: None,
            deferred: Vec::new(),
            committed: delta.len(),
            cap_reached: outcome.cap_reached,
            processing_s,
            end_s,
            ready_s,
        });
        self.chunk_starts.push(chunk.start_frame);
        Ok(delta)
    }

    /// Ends the stream: tokens still held back by the boundary rule or by
    /// truncation handling are decoded once more over the final window and
    /// committed.
    pub fn finish(&mut self) -> Result<Vec<CommittedToken>> {
        if self.failed {
            return Err(Error::SessionFailed);
        }
        if self.finished {
            return Ok(Vec::new());
        }
        self.finished = true;
        let Some(last) = self.chunks.last().cloned() else {
            return Ok(Vec::new());
        };
        let end_s = last.end_s;
        match self.config.policy {
            Policy::AttentionGuided => {
                if last.withheld.is_none() && last.deferred.is_empty() && !last.cap_reached {
                    return Ok(Vec::new());
                }
                let started = Instant::now();
                let window = last.window;
                let result = (|| {
                    let features = self.model.encode(window, self.config.pad_to_frames)?;
                    attention_guided_decode(
                        self.model,
                        &features,
                        &self.conditioning(),
                        &self.config.stop,
                        DecodeOptions {
                            stop_rule: false,
                            max_tokens: self.config.max_tokens_per_chunk,
                        },
                    )
                })();
                let outcome = match result {
                    Ok(o) => o,
                    Err(e) => {
                        self.failed = true;
                        return Err(e);
                    }
                };
                let processing_s = match self.config.timing {
                    // the flush re-decodes a window whose recorded time belongs to the last chunk
                    TimingMode::Recorded => 0.0,
                    _ => self.processing_time(window, outcome.steps.len(), false, started)?,
                };
                let ready_s = end_s.max(self.ready_s) + processing_s;
                self.ready_s = ready_s;
                let flushed = outcome.emitted.len();
                let delta = self.commit(outcome.emitted, last.index, true, end_s, ready_s);
                self.deferred_tail.clear();
                self.flush = Some(ChunkDiagnostics {
                    index: last.index,
                    chunk: last.chunk,
                    window,
                    steps: outcome.steps,
                    withheld: None,
                    truncation: None,
                    deferred: Vec::new(),
                    committed: flushed,
                    cap_reached: outcome.cap_reached,
                    processing_s,
                    end_s,
                    ready_s,
                });
                Ok(delta)
            }
            Policy::LocalAgreement => {
                let la = self.la.as_mut().expect("local agreement runtime");
                let first = la.state.committed().len();
                let ids = la.state.flush();
                let prompt_len = la.prompt_len;
                let tokens: Vec<EmittedToken> = (first..first + ids.len())
                    .map(|p| la.last_decoded[p - prompt_len].0.clone())
                    .collect();
                la.committed_frames
                    .extend((first..first + ids.len()).map(|p| la.last_decoded[p - prompt_len].1));
                let ready_s = end_s.max(self.ready_s);
                Ok(self.commit(tokens, last.index, true, end_s, ready_s))
            }
        }
    }

    pub fn into_result(self) -> SessionResult {
        SessionResult {
            policy: self.config.policy,
            chunk_len_s: self.config.chunk_len_s,
            frame_duration_ms: self.model.frame_duration_ms(),
            stream_seconds: self.next_frame as f64 * self.frame_s,
            committed: self.committed,
            chunks: self.chunks,
            flush: self.flush,
            deferrals: self.deferrals,
        }
    }
}

/// Runs a whole stream of `stream_frames` frames through a session.
pub fn run_session<M: StreamingModel + ?Sized>(
    model: &M,
    config: &SessionConfig,
    stream_frames: u64,
) -> Result<SessionResult> {
    let mut session = StreamSession::new(model, config.clone())?;
    for span in chunk_spans(stream_frames, config.chunk_len_s, model.frame_duration_ms()) {
        session.push_chunk(span)?;
    }
    session.finish()?;
    Ok(session.into_result())
}

/// Runs a session fed by a producer thread through a bounded FIFO queue.
/// The producer blocks when `capacity` chunks are waiting.
pub fn run_session_threaded<M: StreamingModel + ?Sized>(
    model: &M,
    config: &SessionConfig,
    stream_frames: u64,
    capacity: usize,
) -> Result<SessionResult> {
    let spans = chunk_spans(stream_frames, config.chunk_len_s, model.frame_duration_ms());
    let (tx, rx) = mpsc::sync_channel::<AudioSpan>(capacity.max(1));
    std::thread::scope(|scope| {
        scope.spawn(move || {
            for span in spans {
                if tx.send(span).is_err() {
                    break;
                }
            }
        });
        let mut session = StreamSession::new(model, config.clone())?;
        for span in rx.iter() {
            session.push_chunk(span)?;
        }
        session.finish()?;
        Ok(session.into_result())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ScriptedModel, ScriptedModelConfig, ScriptedToken};

    fn tok(text: &str) -> EmittedToken {
        EmittedToken {
            id: 0,
            text: text.into(),
            argmax_frame: 0,
        }
    }

    #[test]
    fn last_word_split_follows_space_prefix() {
        let mut d = vec![tok(" the"), tok(" under"), tok("stand")];
        let tail = split_last_word(&mut d);
        assert_eq!(d.len(), 1);
        assert_eq!(tail.len(), 2);
        let mut d = vec![tok("ing"), tok("ly")];
        assert_eq!(split_last_word(&mut d).len(), 2);
        assert!(d.is_empty());
        let mut d: Vec<EmittedToken> = vec![];
        assert!(split_last_word(&mut d).is_empty());
    }

    #[test]
    fn chunk_spans_cover_stream() {
        let s = chunk_spans(120, 1.0, 20.0);
        assert_eq!(
            s,
            vec![AudioSpan::new(0, 50), AudioSpan::new(50, 100), AudioSpan::new(100, 120)]
        );
        let s = chunk_spans(150, 0.75, 20.0);
        let lens: Vec<u64> = s.iter().map(|a| a.len()).collect();
        assert_eq!(lens, vec![38, 37, 38, 37]);
    }

    fn model() -> ScriptedModel {
        let mut cfg = ScriptedModelConfig::new(vec![
            ScriptedToken::new(" the", 0, 20),
            ScriptedToken::new(" quick", 20, 45),
            ScriptedToken::new(" fox", 45, 80),
        ]);
        cfg.total_frames = Some(100);
        ScriptedModel::new(cfg).unwrap()
    }

    #[test]
    fn empty_delta_is_not_an_error() {
        let m = model();
        let mut s = StreamSession::new(&m, SessionConfig::default()).unwrap();
        // first chunk holds only the first token's tail end: it is at the boundary
        let d = s.push_chunk(AudioSpan::new(0, 15)).unwrap();
        assert!(d.is_empty());
        assert_eq!(s.chunks()[0].withheld.as_deref(), Some(" th"));
    }

    #[test]
    fn non_contiguous_chunk_fails_the_session() {
        let m = model();
        let mut s = StreamSession::new(&m, SessionConfig::default()).unwrap();
        s.push_chunk(AudioSpan::new(0, 50)).unwrap();
        assert!(s.push_chunk(AudioSpan::new(60, 100)).is_err());
        assert!(matches!(
            s.push_chunk(AudioSpan::new(50, 100)),
            Err(Error::SessionFailed)
        ));
    }

    #[test]
    fn unknown_head_is_a_configuration_error() {
        let m = model();
        let mut cfg = SessionConfig::default();
        cfg.stop.alignment_head_ids.insert(crate::model::HeadId::new(9, 9));
        assert!(matches!(StreamSession::new(&m, cfg), Err(Error::Config(_))));
    }

    #[test]
    fn threaded_feed_matches_direct_run() {
        let m = model();
        let cfg = SessionConfig::default();
        let a = run_session(&m, &cfg, 100).unwrap();
        let b = run_session_threaded(&m, &cfg, 100, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.transcript(), "the quick fox");
    }
}
