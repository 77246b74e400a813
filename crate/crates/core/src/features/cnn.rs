use rand::seq::SliceRandom;
use rand::Rng;

use super::stack_frames;
use crate::datagen::{Frame, Labels, SequenceProblem, LABELS};
use crate::error::{Error, Result};
use crate::nn::{Activation, CnnConfig, Dense, Mode, ParamSet, ShallowCnn};
use crate::objectives::{contrastive_tape, Adam, AdamConfig};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Var};

const TRUNK: &str = "cnn";
const SIAMESE_HEAD: &str = "siam.head";
/// Images pushed through the network per inference batch.
const CHUNK: usize = 128;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CnnTrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub dropout: f64,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        Self {
            steps: 600,
            batch: 32,
            lr: 1e-3,
            dropout: 0.5,
        }
    }
}

/// A label-trained shallow CNN whose unit-normalized penultimate activations
/// serve as features.
#[derive(Clone, Debug, PartialEq)]
pub struct CnnFeatures {
    pub params: ParamSet,
    pub net: ShallowCnn,
}

fn image_batch(tape: &mut Tape, frames: &[&Frame], extent: usize) -> Result<Var> {
    let rows = stack_frames(frames.iter().copied(), extent * extent)?;
    tape.constant(&[frames.len(), 1, extent, extent], rows)
}

impl CnnFeatures {
    pub fn load(params: ParamSet, extent: usize) -> Result<Self> {
        let net = ShallowCnn::load(&params, TRUNK, extent)?;
        Ok(Self { params, net })
    }

    pub fn width(&self) -> usize {
        self.net.cfg.penultimate
    }

    /// Unit-L2 penultimate activations, one row per frame.
    pub fn embed(&self, frames: &[&Frame]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(CHUNK) {
            let mut tape = Tape::new();
            let b = self.params.bind(&mut tape, false);
            let x = image_batch(&mut tape, chunk, self.net.cfg.extent)?;
            let pen = self.net.penultimate(&mut tape, &b, x)?;
            let z = tape.normalize_rows(pen);
            out.extend(tape.value(z).chunks(self.width()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    /// Raw label-head outputs, one row per frame.
    pub fn predict_labels(&self, frames: &[&Frame]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let x = image_batch(&mut tape, frames, self.net.cfg.extent)?;
        let (logits, _) = self
            .net
            .forward(&mut tape, &b, x, Mode::Eval, 0.0, &mut SeededRng::new(0))?;
        Ok(tape.value(logits).chunks(LABELS).map(<[f64]>::to_vec).collect())
    }
}

/// Summed squared error of the label head over one batch.
fn label_loss(
    model: &CnnFeatures,
    tape: &mut Tape,
    frames: &[&Frame],
    labels: &[&Labels],
    mode: Mode,
    dropout: f64,
    rng: &mut impl Rng,
) -> Result<(Var, crate::nn::Bound)> {
    let b = model.params.bind(tape, mode == Mode::Train);
    let x = image_batch(tape, frames, model.net.cfg.extent)?;
    let (logits, _) = model.net.forward(tape, &b, x, mode, dropout, rng)?;
    let target: Vec<f64> = labels.iter().flat_map(|l| l.iter().map(|&v| f64::from(v))).collect();
    let t = tape.constant(&[frames.len(), LABELS], target)?;
    let d = tape.sub(logits, t)?;
    let sq = tape.square(d);
    Ok((tape.sum(sq), b))
}

/// Summed squared label error of `model` over all of `images` (eval mode).
pub fn label_error(model: &CnnFeatures, images: &[Frame], labels: &[Labels]) -> Result<f64> {
    let mut total = 0.0;
    for (fs, ls) in images.chunks(CHUNK).zip(labels.chunks(CHUNK)) {
        let mut tape = Tape::new();
        let frames: Vec<&Frame> = fs.iter().collect();
        let labels: Vec<&Labels> = ls.iter().collect();
        let (loss, _) = label_loss(
            model,
            &mut tape,
            &frames,
            &labels,
            Mode::Eval,
            0.0,
            &mut SeededRng::new(0),
        )?;
        total += tape.scalar(loss);
    }
    Ok(total)
}

/// Trains the shallow CNN to regress the 16 quadrant counts of each image.
/// Returns the model and the per-step batch loss.
pub fn train_shallow_cnn(
    images: &[Frame],
    labels: &[Labels],
    cfg: &CnnTrainConfig,
    rng: &mut impl Rng,
) -> Result<(CnnFeatures, Vec<f64>)> {
    if images.len() != labels.len() {
        return Err(Error::invalid(
            "train_shallow_cnn",
            format!("{} images but {} label vectors", images.len(), labels.len()),
        ));
    }
    let first = images.first().ok_or(Error::EmptySequence("train_shallow_cnn"))?;
    let cnn_cfg = CnnConfig {
        extent: first.width(),
        ..CnnConfig::default()
    };
    let mut params = ParamSet::new();
    let net = ShallowCnn::new(&mut params, TRUNK, cnn_cfg, rng)?;
    let mut model = CnnFeatures { params, net };
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut cursor = order.len();
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch);
        while idx.len() < cfg.batch.min(images.len()) {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let frames: Vec<&Frame> = idx.iter().map(|&i| &images[i]).collect();
        let labs: Vec<&Labels> = idx.iter().map(|&i| &labels[i]).collect();
        let mut tape = Tape::new();
        let (loss, b) = label_loss(&model, &mut tape, &frames, &labs, Mode::Train, cfg.dropout, rng)?;
        tape.backward(loss)?;
        trace.push(tape.scalar(loss));
        model.params.zero_grads();
        model.params.accumulate_grads(&tape, &b)?;
        adam.step(&mut model.params)?;
    }
    Ok((model, trace))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiameseConfig {
    pub steps: usize,
    /// Pairs per batch; half positive, half negative.
    pub batch: usize,
    pub lr: f64,
    pub margin: f64,
    pub embed: usize,
}

impl Default for SiameseConfig {
    fn default() -> Self {
        Self {
            steps: 300,
            batch: 32,
            lr: 2e-4,
            margin: 1.0,
            embed: 128,
        }
    }
}

/// One shallow-CNN trunk plus a dense embedding head, applied to both
/// members of a pair with the same parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Siamese {
    pub params: ParamSet,
    pub trunk: ShallowCnn,
    pub head: Dense,
}

impl Siamese {
    pub fn load(params: ParamSet, extent: usize) -> Result<Self> {
        let trunk = ShallowCnn::load(&params, TRUNK, extent)?;
        let head = Dense::load(&params, SIAMESE_HEAD)?;
        Ok(Self { params, trunk, head })
    }

    pub fn width(&self) -> usize {
        self.head.out
    }

    fn embed_var(&self, tape: &mut Tape, b: &crate::nn::Bound, x: Var) -> Result<Var> {
        let pen = self.trunk.penultimate(tape, b, x)?;
        let e = self.head.forward(tape, b, pen, Activation::Linear)?;
        Ok(tape.normalize_rows(e))
    }

    /// Unit-L2 embeddings, one row per frame.
    pub fn embed(&self, frames: &[&Frame]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(frames.len());
        for chunk in frames.chunks(CHUNK) {
            let mut tape = Tape::new();
            let b = self.params.bind(&mut tape, false);
            let x = image_batch(&mut tape, chunk, self.trunk.cfg.extent)?;
            let z = self.embed_var(&mut tape, &b, x)?;
            out.extend(tape.value(z).chunks(self.width()).map(<[f64]>::to_vec));
        }
        Ok(out)
    }
}

/// Draws `batch` pairs of question frames: adjacent frames of one problem
/// (similar) alternating with frames of two different problems.
pub fn sample_pairs<'a>(
    problems: &'a [SequenceProblem],
    batch: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(&'a Frame, &'a Frame, bool)>> {
    if problems.len() < 2 {
        return Err(Error::invalid(
            "siamese",
            "need at least two problems for negative pairs",
        ));
    }
    let mut out = Vec::with_capacity(batch);
    for i in 0..batch {
        let p = rng.gen_range(0..problems.len());
        let q = &problems[p].question;
        if i % 2 == 0 {
            let t = rng.gen_range(0..q.len() - 1);
            out.push((&q[t], &q[t + 1], true));
        } else {
            let mut o = rng.gen_range(0..problems.len() - 1);
            if o >= p {
                o += 1;
            }
            let oq = &problems[o].question;
            out.push((&q[rng.gen_range(0..q.len())], &oq[rng.gen_range(0..oq.len())], false));
        }
    }
    Ok(out)
}

/// Fine-tunes a copy of `init` with a contrastive objective on frame pairs.
pub fn train_siamese(
    problems: &[SequenceProblem],
    init: &CnnFeatures,
    cfg: &SiameseConfig,
    rng: &mut impl Rng,
) -> Result<(Siamese, Vec<f64>)> {
    if problems.len() < 2 {
        return Err(Error::invalid(
            "siamese",
            "need at least two problems for negative pairs",
        ));
    }
    let mut params = init.params.clone();
    let head = Dense::new(&mut params, SIAMESE_HEAD, init.width(), cfg.embed, rng);
    let mut model = Siamese {
        params,
        trunk: init.net.clone(),
        head,
    };
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let extent = model.trunk.cfg.extent;
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let pairs = sample_pairs(problems, cfg.batch, rng)?;
        let left: Vec<&Frame> = pairs.iter().map(|p| p.0).collect();
        let right: Vec<&Frame> = pairs.iter().map(|p| p.1).collect();
        let similar: Vec<bool> = pairs.iter().map(|p| p.2).collect();
        let mut tape = Tape::new();
        let b = model.params.bind(&mut tape, true);
        let xl = image_batch(&mut tape, &left, extent)?;
        let xr = image_batch(&mut tape, &right, extent)?;
        let el = model.embed_var(&mut tape, &b, xl)?;
        let er = model.embed_var(&mut tape, &b, xr)?;
        let loss = contrastive_tape(&mut tape, el, er, &similar, cfg.margin)?;
        tape.backward(loss)?;
        trace.push(tape.scalar(loss));
        model.params.zero_grads();
        model.params.accumulate_grads(&tape, &b)?;
        adam.step(&mut model.params)?;
    }
    Ok((model, trace))
}
