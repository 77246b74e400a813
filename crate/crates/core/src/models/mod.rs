//! The four sequence models, their training loops and checkpoint files.
//!
//! Sequence models consume precomputed feature vectors held in a
//! [`SequenceData`] table. A [`Trainer`] owns one model, its optimizers and
//! its data-order rng; [`Predictor`] is the frozen inference view restored
//! from a [`Checkpoint`].

mod checkpoint;
mod nets;
mod train;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{Checkpoint, CheckpointKind, MAGIC, VERSION};
pub use nets::{ContextDiscriminator, FeedForward, Generator, MlpDiscriminator, FF_WINDOW};
pub use train::{StepLosses, TrainConfig, Trainer};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureSpec};
use crate::nn::{Activation, ParamSet};
use crate::tensor::Tape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    FeedForward,
    Rnn,
    RnnGan,
    ContextRnnGan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::FeedForward,
        ModelKind::Rnn,
        ModelKind::RnnGan,
        ModelKind::ContextRnnGan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::FeedForward => "ff",
            ModelKind::Rnn => "rnn",
            ModelKind::RnnGan => "rnn-gan",
            ModelKind::ContextRnnGan => "ctx-rnn-gan",
        }
    }

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn is_gan(self) -> bool {
        matches!(self, ModelKind::RnnGan | ModelKind::ContextRnnGan)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid("model", format!("unknown model `{s}` (ff|rnn|rnn-gan|ctx-rnn-gan)")))
    }
}

/// Layer widths used when a model is first initialized. Loading a
/// checkpoint recovers widths from the stored tensors instead.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub g_hidden: Vec<usize>,
    pub d_hidden: usize,
    pub mlp_hidden: usize,
    pub ff_hidden: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            g_hidden: vec![400, 400],
            d_hidden: 500,
            mlp_hidden: 512,
            ff_hidden: [1000, 1000],
        }
    }
}

/// Generator output activation for a feature pipeline: pixel features are
/// probabilities, learned features are unbounded.
pub fn output_activation(kind: FeatureKind) -> Activation {
    match kind {
        FeatureKind::Raw => Activation::Sigmoid,
        _ => Activation::Linear,
    }
}

/// Fixed-length sequences of feature vectors, stored compactly as `f32`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceData {
    width: usize,
    frames: usize,
    data: Vec<f32>,
}

impl SequenceData {
    pub fn new(width: usize, frames: usize) -> Result<Self> {
        if width == 0 || frames == 0 {
            return Err(Error::invalid(
                "sequence data",
                format!("width {width}, {frames} frames per sequence"),
            ));
        }
        Ok(Self {
            width,
            frames,
            data: Vec::new(),
        })
    }

    /// Builds a table from nested vectors; every sequence must have the same
    /// length and every vector the same width.
    pub fn from_vectors(seqs: &[Vec<Vec<f64>>]) -> Result<Self> {
        let first = seqs.first().ok_or(Error::EmptySequence("sequence data"))?;
        let width = first.first().ok_or(Error::EmptySequence("sequence data"))?.len();
        let mut out = Self::new(width, first.len())?;
        for s in seqs {
            out.push(s)?;
        }
        Ok(out)
    }

    pub fn push(&mut self, seq: &[Vec<f64>]) -> Result<()> {
        if seq.len() != self.frames {
            return Err(Error::shape("sequence data", &[seq.len()], &[self.frames]));
        }
        for v in seq {
            if v.len() != self.width {
                return Err(Error::shape("sequence data", &[v.len()], &[self.width]));
            }
        }
        self.data.extend(seq.iter().flatten().map(|&x| x as f32));
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Frames per sequence.
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.width * self.frames)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn frame(&self, seq: usize, t: usize) -> &[f32] {
        let start = (seq * self.frames + t) * self.width;
        &self.data[start..start + self.width]
    }

    /// Frame `t` of each listed sequence, row-major `[idx.len(), width]`.
    pub fn gather(&self, idx: &[usize], t: usize) -> Vec<f64> {
        idx.iter()
            .flat_map(|&i| self.frame(i, t).iter().map(|&v| f64::from(v)))
            .collect()
    }

    /// The first `n` frames of every sequence.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.frames {
            return Err(Error::invalid(
                "sequence data",
                format!("cannot keep {n} of {} frames", self.frames),
            ));
        }
        let mut out = Self::new(self.width, n)?;
        for s in 0..self.len() {
            for t in 0..n {
                out.data.extend_from_slice(self.frame(s, t));
            }
        }
        Ok(out)
    }
}

/// The generator half of any model.
#[derive(Clone, Debug, PartialEq)]
pub enum GeneratorNet {
    Recurrent(Generator),
    FeedForward(FeedForward),
}

impl GeneratorNet {
    pub fn load(kind: ModelKind, params: &ParamSet, act: Activation) -> Result<Self> {
        Ok(match kind {
            ModelKind::FeedForward => GeneratorNet::FeedForward(FeedForward::load(params, act)?),
            _ => GeneratorNet::Recurrent(Generator::load(params, act)?),
        })
    }

    pub fn width(&self) -> usize {
        match self {
            GeneratorNet::Recurrent(g) => g.width(),
            GeneratorNet::FeedForward(f) => f.width(),
        }
    }
}

/// Rows pushed through a generator per inference tape.
const PREDICT_CHUNK: usize = 256;

/// A frozen generator restored from a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub kind: ModelKind,
    pub spec: FeatureSpec,
    pub params: ParamSet,
    pub net: GeneratorNet,
}

impl Predictor {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let CheckpointKind::Model(kind) = ckpt.kind else {
            return Err(Error::invalid("predictor", "checkpoint holds features only"));
        };
        let params = ckpt.params_with_prefix("g.");
        let net = GeneratorNet::load(kind, &params, output_activation(ckpt.spec.kind))?;
        if net.width() != ckpt.spec.width {
            return Err(Error::shape("predictor", &[net.width()], &[ckpt.spec.width]));
        }
        Ok(Self {
            kind,
            spec: ckpt.spec,
            params,
            net,
        })
    }

    /// Prediction of the frame that follows each whole sequence.
    pub fn predict_next(&self, data: &SequenceData) -> Result<Vec<Vec<f64>>> {
        if data.width() != self.spec.width {
            return Err(Error::shape("predict", &[data.width()], &[self.spec.width]));
        }
        let t_len = data.frames();
        if matches!(self.net, GeneratorNet::FeedForward(_)) && t_len < FF_WINDOW {
            return Err(Error::invalid(
                "ff_predict",
                format!("expected {FF_WINDOW} input frames, got {t_len}"),
            ));
        }
        let all: Vec<usize> = (0..data.len()).collect();
        let mut out = Vec::with_capacity(data.len());
        for idx in all.chunks(PREDICT_CHUNK) {
            let mut tape = Tape::new();
            let b = self.params.bind(&mut tape, false);
            let xs = (0..t_len)
                .map(|t| tape.constant(&[idx.len(), data.width()], data.gather(idx, t)))
                .collect::<Result<Vec<_>>>()?;
            let y = match &self.net {
                GeneratorNet::Recurrent(g) => *g.forward(&mut tape, &b, &xs)?.last().expect("non-empty"),
                GeneratorNet::FeedForward(f) => f.forward(&mut tape, &b, &xs[t_len - FF_WINDOW..])?,
            };
            out.extend(tape.value(y).chunks(data.width()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}
