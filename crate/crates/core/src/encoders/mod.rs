//! Text encoder, audio encoder and the sliding-window span extractors.

mod audio;
mod span;
mod text;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use audio::AudioEncoder;
pub use span::{CellKind, SpanExtractor};
pub use text::TextEncoder;

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub size: usize,
    pub stride: usize,
}

impl WindowSpec {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        let w = WindowSpec { size, stride };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.stride == 0 {
            return Err(Error::Config(format!(
                "window size and stride must be >= 1 (got {}/{})",
                self.size, self.stride
            )));
        }
        Ok(())
    }
}

/// Half-open windows covering `0..length`.
///
/// Regular windows start every `stride` positions. If the last position is
/// left uncovered a final window ending at `length` is added; a sequence
/// shorter than `size` gets the single window `[0, length)`.
pub fn slide_windows(length: usize, spec: WindowSpec) -> Vec<(usize, usize)> {
    assert!(spec.size >= 1 && spec.stride >= 1, "invalid window spec");
    if length <= spec.size {
        return vec![(0, length)];
    }
    let count = (length - spec.size) / spec.stride + 1;
    let mut out: Vec<(usize, usize)> =
        (0..count).map(|i| (i * spec.stride, i * spec.stride + spec.size)).collect();
    if out.last().map(|w| w.1) != Some(length) {
        out.push((length - spec.size, length));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Shared representation width `D`.
    pub dim: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    pub max_positions: usize,
    pub audio_dim: usize,
    pub audio_hidden: usize,
    pub cell: CellKind,
    pub embedding_std: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            dim: 32,
            layers: 2,
            ffn_hidden: 64,
            max_positions: 64,
            audio_dim: 16,
            audio_hidden: 32,
            cell: CellKind::Lstm,
            embedding_std: 0.5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 || self.dim % 2 != 0 {
            return Err(Error::Config(format!("dim must be even and >= 2 (got {})", self.dim)));
        }
        if self.ffn_hidden == 0 || self.audio_hidden == 0 || self.audio_dim == 0 || self.max_positions < 2 {
            return Err(Error::Config("encoder widths must be positive".into()));
        }
        Ok(())
    }
}

/// Everything stage-1 pretraining trains: both encoders and both span
/// extractors. Parameter names are prefixed `text.`, `audio.`, `span_t.`,
/// `span_a.`.
#[derive(Debug, Clone)]
pub struct MctapModel {
    pub config: EncoderConfig,
    pub text: TextEncoder,
    pub audio: AudioEncoder,
    pub span_text: SpanExtractor,
    pub span_audio: SpanExtractor,
}

impl MctapModel {
    /// Binds to parameters in `store`, creating missing ones.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        config: &EncoderConfig,
        num_ids: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        Ok(MctapModel {
            config: config.clone(),
            text: TextEncoder::new(store, "text", config, num_ids, rng)?,
            audio: AudioEncoder::new(store, "audio", config, rng)?,
            span_text: SpanExtractor::new(store, "span_t", config.dim, config.dim, config.cell, rng)?,
            span_audio: SpanExtractor::new(store, "span_a", config.dim, config.dim, config.cell, rng)?,
        })
    }
}

/// Span vectors of one modality: one row per window.
pub fn spans(
    g: &mut Graph,
    store: &ParamStore,
    extractor: &SpanExtractor,
    seq: Var,
    spec: WindowSpec,
) -> Result<(Var, Vec<(usize, usize)>)> {
    let n = g.value(seq).rows();
    if n == 0 {
        return Err(Error::Data("empty input sequence".into()));
    }
    let windows = slide_windows(n, spec);
    let s = extractor.extract(g, store, seq, &windows)?;
    Ok((s, windows))
}
