use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AudioSpan, TokenId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextQueueConfig {
    pub max_context_s: f64,
}

impl Default for ContextQueueConfig {
    fn default() -> Self {
        Self { max_context_s: 10.0 }
    }
}

impl ContextQueueConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_context_s.is_finite() && self.max_context_s > 0.0) {
            return Err(Error::Config(format!(
                "max context must be positive, got {}",
                self.max_context_s
            )));
        }
        Ok(())
    }
}

/// A retained chunk of audio and the tokens committed while it was new.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub span: AudioSpan,
    pub tokens: Vec<TokenId>,
}

/// Retained audio segments in time order. Tokens of evicted segments stay
/// on as decoder conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextQueue {
    frame_s: f64,
    segments: VecDeque<Segment>,
    evicted_tokens: Vec<TokenId>,
}

impl ContextQueue {
    pub fn new(frame_s: f64) -> Self {
        Self {
            frame_s,
            segments: VecDeque::new(),
            evicted_tokens: Vec::new(),
        }
    }

    pub fn push(&mut self, segment: Segment) {
        self.segments.push_back(segment);
    }

    pub fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.segments.iter()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn retained_seconds(&self) -> f64 {
        self.segments.iter().map(|s| s.span.len()).sum::<u64>() as f64 * self.frame_s
    }

    /// First frame of retained audio.
    pub fn audio_start(&self) -> Option<u64> {
        self.segments.front().map(|s| s.span.start_frame)
    }

    pub fn evicted_tokens(&self) -> &[TokenId] {
        &self.evicted_tokens
    }

    /// Evicted text followed by the text of every retained segment.
    pub fn conditioning(&self) -> Vec<TokenId> {
        let mut ctx = self.evicted_tokens.clone();
        for s in &self.segments {
            ctx.extend_from_slice(&s.tokens);
        }
        ctx
    }
}

/// Evicts the oldest segments while more than `max_context_s` of audio is
/// retained and returns them.
pub fn manage_context(queue: &mut ContextQueue, config: &ContextQueueConfig) -> Vec<Segment> {
    let mut evicted = Vec::new();
    // tolerance keeps 0.5 s chunks at 20 ms from tripping on summation error
    while queue.retained_seconds() > config.max_context_s + 1e-9 {
        let Some(seg) = queue.segments.pop_front() else {
            break;
        };
        queue.evicted_tokens.extend_from_slice(&seg.tokens);
        evicted.push(seg);
    }
    evicted
}
