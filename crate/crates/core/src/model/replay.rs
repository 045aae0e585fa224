use std::collections::HashMap;
use std::sync::Mutex;

use super::{
    AudioSpan, DecodeStepOutput, EncoderFeatureSeq, HeadId, StreamingModel, TokenId, Vocabulary,
};
use crate::error::{Error, Result};
use crate::trace::{ChunkRecord, DecodeStepRecord, Trace, TraceMetadata};

/// Replays a recorded run. Lookups are keyed on the encoded window and the
/// full decoder context; anything not in the trace is a replay miss.
#[derive(Debug)]
pub struct TraceReplayModel {
    trace: Trace,
    vocab: Vocabulary,
    by_span: HashMap<AudioSpan, usize>,
    by_context: Vec<HashMap<Vec<TokenId>, usize>>,
}

impl TraceReplayModel {
    pub fn new(trace: Trace) -> Result<Self> {
        trace.validate()?;
        let vocab = Vocabulary::new(trace.metadata.vocabulary.clone(), trace.metadata.eos_id)?;
        let mut by_span = HashMap::new();
        let mut by_context = Vec::with_capacity(trace.chunks.len());
        for (i, c) in trace.chunks.iter().enumerate() {
            by_span.insert(c.span(), i);
            by_context.push(
                c.steps
                    .iter()
                    .enumerate()
                    .map(|(j, s)| (s.context.clone(), j))
                    .collect(),
            );
        }
        Ok(Self {
            trace,
            vocab,
            by_span,
            by_context,
        })
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    fn chunk(&self, span: AudioSpan) -> Option<(usize, &ChunkRecord)> {
        self.by_span.get(&span).map(|&i| (i, &self.trace.chunks[i]))
    }
}

impl StreamingModel for TraceReplayModel {
    fn name(&self) -> &str {
        &self.trace.metadata.model_name
    }

    fn feature_dim(&self) -> usize {
        self.trace.metadata.dim
    }

    fn frame_duration_ms(&self) -> f32 {
        self.trace.metadata.frame_duration_ms
    }

    fn alignment_heads(&self) -> &[HeadId] {
        &self.trace.metadata.alignment_heads
    }

    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, span: AudioSpan, pad_to_frames: usize) -> Result<EncoderFeatureSeq> {
        let (_, c) = self.chunk(span).ok_or_else(|| {
            Error::ReplayMiss(format!(
                "no recorded window [{}, {})",
                span.start_frame, span.end_frame
            ))
        })?;
        if c.features.n_frames != pad_to_frames {
            return Err(Error::ReplayMiss(format!(
                "window recorded with {} padded frames, requested {pad_to_frames}",
                c.features.n_frames
            )));
        }
        Ok(c.features.clone())
    }

    fn decode_step(
        &self,
        features: &EncoderFeatureSeq,
        context: &[TokenId],
    ) -> Result<DecodeStepOutput> {
        let span = features.content_span();
        let (ci, c) = self.chunk(span).ok_or_else(|| {
            Error::ReplayMiss(format!(
                "decode over unrecorded window [{}, {})",
                span.start_frame, span.end_frame
            ))
        })?;
        let step = self.by_context[ci].get(context).ok_or_else(|| {
            Error::ReplayMiss(format!(
                "context of {} tokens never decoded over window [{}, {})",
                context.len(),
                span.start_frame,
                span.end_frame
            ))
        })?;
        Ok(c.steps[*step].output.clone())
    }

    fn stream_frames(&self) -> Option<u64> {
        Some(self.trace.metadata.total_frames)
    }

    fn reference(&self) -> Option<String> {
        Some(self.trace.reference.clone())
    }

    fn window_word_count(&self, span: AudioSpan) -> Option<u32> {
        self.chunk(span).and_then(|(_, c)| c.word_count)
    }

    fn recorded_processing_s(&self, span: AudioSpan) -> Option<f64> {
        self.chunk(span).and_then(|(_, c)| c.processing_s)
    }
}

/// Wraps a model and records every encode and decode call into a [`Trace`].
#[derive(Debug)]
pub struct RecordingModel<M> {
    inner: M,
    recorded: Mutex<Recorded>,
}

#[derive(Debug, Default)]
struct Recorded {
    chunks: Vec<ChunkRecord>,
    index: HashMap<AudioSpan, usize>,
}

impl<M: StreamingModel> RecordingModel<M> {
    pub fn new(inner: M) -> Self {
        Self {
            inner,
            recorded: Mutex::new(Recorded::default()),
        }
    }

    pub fn inner(&self) -> &M {
        &self.inner
    }

    /// Attaches a processing time to an already recorded window.
    pub fn set_processing(&self, span: AudioSpan, seconds: f64) {
        let mut rec = self.recorded.lock().expect("recorder lock");
        if let Some(&i) = rec.index.get(&span) {
            rec.chunks[i].processing_s = Some(seconds);
        }
    }

    /// Builds the trace from everything recorded so far.
    pub fn into_trace(self) -> Result<Trace> {
        let rec = self.recorded.into_inner().expect("recorder lock");
        let mut chunks = rec.chunks;
        chunks.sort_by_key(|c| {
            let s = c.span();
            (s.end_frame, s.start_frame)
        });
        let trace = Trace {
            metadata: TraceMetadata {
                model_name: self.inner.name().to_string(),
                dim: self.inner.feature_dim(),
                frame_duration_ms: self.inner.frame_duration_ms(),
                alignment_heads: self.inner.alignment_heads().to_vec(),
                vocabulary: self.inner.vocabulary().entries().to_vec(),
                eos_id: self.inner.vocabulary().eos(),
                total_frames: self.inner.stream_frames().unwrap_or_else(|| {
                    chunks.iter().map(|c| c.span().end_frame).max().unwrap_or(0)
                }),
            },
            chunks,
            reference: self.inner.reference().unwrap_or_default(),
        };
        trace.validate()?;
        Ok(trace)
    }
}

impl<M: StreamingModel> StreamingModel for RecordingModel<M> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn frame_duration_ms(&self) -> f32 {
        self.inner.frame_duration_ms()
    }

    fn alignment_heads(&self) -> &[HeadId] {
        self.inner.alignment_heads()
    }

    fn vocabulary(&self) -> &Vocabulary {
        self.inner.vocabulary()
    }

    fn encode(&self, span: AudioSpan, pad_to_frames: usize) -> Result<EncoderFeatureSeq> {
        let features = self.inner.encode(span, pad_to_frames)?;
        let mut rec = self.recorded.lock().expect("recorder lock");
        if !rec.index.contains_key(&span) {
            let i = rec.chunks.len();
            rec.chunks.push(ChunkRecord {
                features: features.clone(),
                steps: Vec::new(),
                word_count: self.inner.window_word_count(span),
                processing_s: None,
            });
            rec.index.insert(span, i);
        }
        Ok(features)
    }

    fn decode_step(
        &self,
        features: &EncoderFeatureSeq,
        context: &[TokenId],
    ) -> Result<DecodeStepOutput> {
        let out = self.inner.decode_step(features, context)?;
        let mut rec = self.recorded.lock().expect("recorder lock");
        let span = features.content_span();
        let i = match rec.index.get(&span) {
            Some(&i) => i,
            None => {
                let i = rec.chunks.len();
                rec.chunks.push(ChunkRecord {
                    features: features.clone(),
                    steps: Vec::new(),
                    word_count: self.inner.window_word_count(span),
                    processing_s: None,
                });
                rec.index.insert(span, i);
                i
            }
        };
        let chunk = &mut rec.chunks[i];
        if !chunk.steps.iter().any(|s| s.context == context) {
            chunk.steps.push(DecodeStepRecord {
                context: context.to_vec(),
                output: out.clone(),
            });
        }
        Ok(out)
    }

    fn stream_frames(&self) -> Option<u64> {
        self.inner.stream_frames()
    }

    fn reference(&self) -> Option<String> {
        self.inner.reference()
    }

    fn window_word_count(&self, span: AudioSpan) -> Option<u32> {
        self.inner.window_word_count(span)
    }

    fn recorded_processing_s(&self, span: AudioSpan) -> Option<f64> {
        self.inner.recorded_processing_s(span)
    }
}
