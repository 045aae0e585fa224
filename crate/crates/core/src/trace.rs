//! Recorded model runs and their binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! header   magic "SIMTRACE" | u16 version | u16 reserved (0) | u32 section count
//! section  [u8; 4] tag | u64 payload length | payload | u32 CRC-32 of payload
//! ```
//!
//! Sections appear as one `META`, zero or more `CHNK` (one per encoded
//! window, ordered by window end then start), and one `REFR`. Strings are
//! a `u32` byte length followed by UTF-8. Features and attention are `f32`. The full byte
//! layout of each payload is documented in `docs/trace-format.md`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result, TraceError};
use crate::model::{AudioSpan, DecodeStepOutput, EncoderFeatureSeq, HeadId, TokenId};

pub const TRACE_MAGIC: [u8; 8] = *b"SIMTRACE";
pub const TRACE_VERSION: u16 = 1;

const TAG_META: [u8; 4] = *b"META";
const TAG_CHUNK: [u8; 4] = *b"CHNK";
const TAG_REF: [u8; 4] = *b"REFR";

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMetadata {
    pub model_name: String,
    pub dim: usize,
    pub frame_duration_ms: f32,
    pub alignment_heads: Vec<HeadId>,
    pub vocabulary: Vec<String>,
    pub eos_id: TokenId,
    pub total_frames: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeStepRecord {
    pub context: Vec<TokenId>,
    pub output: DecodeStepOutput,
}

/// One encoded window and every decoder step taken over it.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkRecord {
    pub features: EncoderFeatureSeq,
    pub steps: Vec<DecodeStepRecord>,
    /// Complete words in the retained frames, when known.
    pub word_count: Option<u32>,
    pub processing_s: Option<f64>,
}

impl ChunkRecord {
    pub fn span(&self) -> AudioSpan {
        self.features.content_span()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub metadata: TraceMetadata,
    pub chunks: Vec<ChunkRecord>,
    pub reference: String,
}

impl Trace {
    /// Checks the cross-record invariants.
    pub fn validate(&self) -> std::result::Result<(), TraceError> {
        let meta = &self.metadata;
        let bad = |m: String| Err(TraceError::Validation(m));
        if meta.dim == 0 {
            return bad("metadata dim is zero".into());
        }
        if !(meta.frame_duration_ms.is_finite() && meta.frame_duration_ms > 0.0) {
            return bad("frame duration must be positive".into());
        }
        if meta.eos_id as usize >= meta.vocabulary.len() {
            return bad(format!("eos id {} outside vocabulary", meta.eos_id));
        }
        if meta.alignment_heads.iter().collect::<HashSet<_>>().len() != meta.alignment_heads.len()
        {
            return bad("duplicate alignment head id".into());
        }
        let mut prev: Option<AudioSpan> = None;
        for (ci, chunk) in self.chunks.iter().enumerate() {
            let f = &chunk.features;
            f.validate()
                .map_err(|e| TraceError::Validation(format!("chunk {ci}: {e}")))?;
            if f.dim != meta.dim {
                return bad(format!("chunk {ci} has dim {}, metadata says {}", f.dim, meta.dim));
            }
            if f.frame_duration_ms != meta.frame_duration_ms {
                return bad(format!("chunk {ci} frame duration differs from metadata"));
            }
            let span = chunk.span();
            if span.end_frame > meta.total_frames {
                return bad(format!("chunk {ci} extends past the stream end"));
            }
            if let Some(p) = prev {
                if (span.end_frame, span.start_frame) <= (p.end_frame, p.start_frame) {
                    return bad(format!(
                        "chunk {ci} [{}, {}) not ordered after [{}, {})",
                        span.start_frame, span.end_frame, p.start_frame, p.end_frame
                    ));
                }
            }
            prev = Some(span);
            if let Some(p) = chunk.processing_s {
                if !(p.is_finite() && p >= 0.0) {
                    return bad(format!("chunk {ci} has invalid processing time {p}"));
                }
            }
            let mut seen = HashSet::new();
            for (si, step) in chunk.steps.iter().enumerate() {
                step.output
                    .validate(f.n_frames, meta.alignment_heads.len())
                    .map_err(|e| TraceError::Validation(format!("chunk {ci} step {si}: {e}")))?;
                let id = step.output.token_id as usize;
                if id >= meta.vocabulary.len() || meta.vocabulary[id] != step.output.token_text {
                    return bad(format!("chunk {ci} step {si}: token not in vocabulary"));
                }
                if step.output.is_eos != (step.output.token_id == meta.eos_id) {
                    return bad(format!("chunk {ci} step {si}: eos flag disagrees with id"));
                }
                if step.context.iter().any(|&t| t as usize >= meta.vocabulary.len()) {
                    return bad(format!("chunk {ci} step {si}: context id outside vocabulary"));
                }
                if !seen.insert(step.context.as_slice()) {
                    return bad(format!("chunk {ci} step {si}: duplicate decoder context"));
                }
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<([u8; 4], Vec<u8>)> = Vec::with_capacity(self.chunks.len() + 2);
        sections.push((TAG_META, encode_meta(&self.metadata)));
        for c in &self.chunks {
            sections.push((TAG_CHUNK, encode_chunk(c)));
        }
        let mut r = Vec::new();
        put_str(&mut r, &self.reference);
        sections.push((TAG_REF, r));

        let mut out = Vec::new();
        out.extend_from_slice(&TRACE_MAGIC);
        out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (tag, payload) in sections {
            out.extend_from_slice(&tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
            out.extend_from_slice(&crc32fast::hash(&payload).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, TraceError> {
        let mut r = Reader::new(bytes, "header");
        let magic = r.take(8)?;
        if magic != TRACE_MAGIC {
            return Err(TraceError::BadMagic);
        }
        let version = r.u16()?;
        if version != TRACE_VERSION {
            return Err(TraceError::UnsupportedVersion {
                found: version,
                expected: TRACE_VERSION,
            });
        }
        let _reserved = r.u16()?;
        let n_sections = r.u32()? as usize;

        let mut metadata = None;
        let mut chunks = Vec::new();
        let mut reference = None;
        for _ in 0..n_sections {
            r.context = "section header";
            let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
            let len = r.u64()? as usize;
            r.context = "section payload";
            let payload = r.take(len)?;
            r.context = "section checksum";
            let stored = r.u32()?;
            let computed = crc32fast::hash(payload);
            let name = String::from_utf8_lossy(&tag).into_owned();
            if stored != computed {
                return Err(TraceError::Checksum {
                    section: name,
                    stored,
                    computed,
                });
            }
            let malformed = |reason: String| TraceError::Malformed {
                section: name.clone(),
                reason,
            };
            match tag {
                TAG_META => {
                    if metadata.is_some() {
                        return Err(malformed("duplicate META section".into()));
                    }
                    metadata = Some(decode_meta(payload)?);
                }
                TAG_CHUNK => {
                    let meta = metadata
                        .as_ref()
                        .ok_or_else(|| malformed("CHNK before META".into()))?;
                    chunks.push(decode_chunk(payload, meta)?);
                }
                TAG_REF => {
                    if reference.is_some() {
                        return Err(malformed("duplicate REFR section".into()));
                    }
                    let mut pr = Reader::new(payload, "REFR");
                    reference = Some(pr.string()?);
                    pr.finish()?;
                }
                other => return Err(TraceError::UnknownSection(other)),
            }
        }
        if !r.is_empty() {
            return Err(TraceError::TrailingData);
        }
        let metadata = metadata.ok_or(TraceError::Malformed {
            section: "META".into(),
            reason: "missing".into(),
        })?;
        let reference = reference.ok_or(TraceError::Malformed {
            section: "REFR".into(),
            reason: "missing".into(),
        })?;
        let trace = Trace {
            metadata,
            chunks,
            reference,
        };
        trace.validate()?;
        Ok(trace)
    }
}

pub fn save_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    trace.validate()?;
    fs::write(path, trace.to_bytes())?;
    Ok(())
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let bytes = fs::read(path)?;
    Trace::from_bytes(&bytes).map_err(Error::from)
}

fn put_u8(out: &mut Vec<u8>, v: u8) {
    out.push(v);
}
fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_f32(out: &mut Vec<u8>, v: f32) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn encode_meta(m: &TraceMetadata) -> Vec<u8> {
    let mut out = Vec::new();
    put_str(&mut out, &m.model_name);
    put_u32(&mut out, m.dim as u32);
    put_f32(&mut out, m.frame_duration_ms);
    put_u64(&mut out, m.total_frames);
    put_u32(&mut out, m.alignment_heads.len() as u32);
    for h in &m.alignment_heads {
        put_u16(&mut out, h.layer);
        put_u16(&mut out, h.head);
    }
    put_u32(&mut out, m.vocabulary.len() as u32);
    for v in &m.vocabulary {
        put_str(&mut out, v);
    }
    put_u32(&mut out, m.eos_id);
    out
}

fn encode_chunk(c: &ChunkRecord) -> Vec<u8> {
    let f = &c.features;
    let mut out = Vec::with_capacity(f.frames.len() * 4 + 64);
    put_u64(&mut out, f.start_frame);
    put_u32(&mut out, f.n_frames as u32);
    put_u32(&mut out, f.content_len as u32);
    put_u32(&mut out, f.dim as u32);
    put_f32(&mut out, f.frame_duration_ms);
    for &v in &f.frames {
        put_f32(&mut out, v);
    }
    match c.word_count {
        Some(w) => {
            put_u8(&mut out, 1);
            put_u32(&mut out, w);
        }
        None => {
            put_u8(&mut out, 0);
            put_u32(&mut out, 0);
        }
    }
    match c.processing_s {
        Some(p) => {
            put_u8(&mut out, 1);
            put_f64(&mut out, p);
        }
        None => {
            put_u8(&mut out, 0);
            put_f64(&mut out, 0.0);
        }
    }
    put_u32(&mut out, c.steps.len() as u32);
    for s in &c.steps {
        put_u32(&mut out, s.context.len() as u32);
        for &t in &s.context {
            put_u32(&mut out, t);
        }
        put_u32(&mut out, s.output.token_id);
        put_str(&mut out, &s.output.token_text);
        put_u8(&mut out, s.output.is_eos as u8);
        put_u32(&mut out, s.output.head_rows.len() as u32);
        let row_len = s.output.head_rows.first().map_or(0, Vec::len);
        put_u32(&mut out, row_len as u32);
        for row in &s.output.head_rows {
            for &v in row {
                put_f32(&mut out, v);
            }
        }
    }
    out
}

fn decode_meta(payload: &[u8]) -> std::result::Result<TraceMetadata, TraceError> {
    let mut r = Reader::new(payload, "META");
    let model_name = r.string()?;
    let dim = r.u32()? as usize;
    let frame_duration_ms = r.f32()?;
    let total_frames = r.u64()?;
    let n_heads = r.u32()? as usize;
    let mut alignment_heads = Vec::with_capacity(n_heads.min(1024));
    for _ in 0..n_heads {
        let layer = r.u16()?;
        let head = r.u16()?;
        alignment_heads.push(HeadId::new(layer, head));
    }
    let n_vocab = r.u32()? as usize;
    let mut vocabulary = Vec::with_capacity(n_vocab.min(1 << 16));
    for _ in 0..n_vocab {
        vocabulary.push(r.string()?);
    }
    let eos_id = r.u32()?;
    r.finish()?;
    Ok(TraceMetadata {
        model_name,
        dim,
        frame_duration_ms,
        alignment_heads,
        vocabulary,
        eos_id,
        total_frames,
    })
}

fn decode_chunk(
    payload: &[u8],
    meta: &TraceMetadata,
) -> std::result::Result<ChunkRecord, TraceError> {
    let mut r = Reader::new(payload, "CHNK");
    let start_frame = r.u64()?;
    let n_frames = r.u32()? as usize;
    let content_len = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let frame_duration_ms = r.f32()?;
    let n_values = n_frames
        .checked_mul(dim)
        .ok_or_else(|| r.malformed("feature matrix size overflows"))?;
    let frames = r.f32_vec(n_values)?;
    let has_wc = r.u8()?;
    let wc = r.u32()?;
    let has_proc = r.u8()?;
    let proc_s = r.f64()?;
    let n_steps = r.u32()? as usize;
    let mut steps = Vec::with_capacity(n_steps.min(4096));
    for _ in 0..n_steps {
        let ctx_len = r.u32()? as usize;
        let mut context = Vec::with_capacity(ctx_len.min(1 << 16));
        for _ in 0..ctx_len {
            context.push(r.u32()?);
        }
        let token_id = r.u32()?;
        let token_text = r.string()?;
        let is_eos = match r.u8()? {
            0 => false,
            1 => true,
            v => return Err(r.malformed(&format!("eos flag {v}"))),
        };
        let n_heads = r.u32()? as usize;
        let row_len = r.u32()? as usize;
        if n_heads != meta.alignment_heads.len() {
            return Err(TraceError::Validation(format!(
                "step has {n_heads} head rows, metadata declares {}",
                meta.alignment_heads.len()
            )));
        }
        if row_len != n_frames {
            return Err(TraceError::Validation(format!(
                "step head rows have length {row_len}, chunk has N_a = {n_frames}"
            )));
        }
        let mut head_rows = Vec::with_capacity(n_heads);
        for _ in 0..n_heads {
            head_rows.push(r.f32_vec(row_len)?);
        }
        steps.push(DecodeStepRecord {
            context,
            output: DecodeStepOutput {
                token_id,
                token_text,
                head_rows,
                is_eos,
            },
        });
    }
    r.finish()?;
    Ok(ChunkRecord {
        features: EncoderFeatureSeq {
            frames,
            n_frames,
            dim,
            content_len,
            frame_duration_ms,
            start_frame,
        },
        steps,
        word_count: (has_wc == 1).then_some(wc),
        processing_s: (has_proc == 1).then_some(proc_s),
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    context: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], context: &'static str) -> Self {
        Self {
            buf,
            pos: 0,
            context,
        }
    }

    fn malformed(&self, reason: &str) -> TraceError {
        TraceError::Malformed {
            section: self.context.to_string(),
            reason: reason.to_string(),
        }
    }

    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], TraceError> {
        if self.buf.len() - self.pos < n {
            return Err(TraceError::Truncated {
                context: self.context,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> std::result::Result<u8, TraceError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> std::result::Result<u16, TraceError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> std::result::Result<u32, TraceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, TraceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> std::result::Result<f32, TraceError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> std::result::Result<f64, TraceError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_vec(&mut self, n: usize) -> std::result::Result<Vec<f32>, TraceError> {
        let bytes = n
            .checked_mul(4)
            .ok_or_else(|| self.malformed("array size overflows"))?;
        let raw = self.take(bytes)?;
        Ok(raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> std::result::Result<String, TraceError> {
        let n = self.u32()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| self.malformed("invalid UTF-8"))
    }

    fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn finish(&self) -> std::result::Result<(), TraceError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(self.malformed("unconsumed payload bytes"))
        }
    }
}
