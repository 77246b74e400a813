use rand::seq::SliceRandom;

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::nets::{ContextDiscriminator, FeedForward, Generator, MlpDiscriminator, FF_WINDOW};
use super::{output_activation, GeneratorNet, ModelConfig, ModelKind, Predictor, SequenceData};
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::nn::{Bound, ParamSet};
use crate::objectives::{d_loss_context_tape, g_loss_tape, lp_loss_tape, Adam, AdamConfig, GanLossWeights, LpNorm};
use crate::rng::SeededRng;
use crate::tensor::{Tape, Tensor, Var};

const G_INIT_STREAM: u64 = 1;
const D_INIT_STREAM: u64 = 2;
const DATA_STREAM: u64 = 3;
const META: &str = "meta.train";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Sequences per minibatch.
    pub batch: usize,
    pub epochs: usize,
    /// Hard cap on optimizer steps, applied after `epochs`.
    pub max_steps: Option<u64>,
    pub lr: f64,
    /// Loss weights; plain models use only `norm` and `lambda_p`.
    pub weights: GanLossWeights,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 16,
            epochs: 10,
            max_steps: None,
            lr: 2e-4,
            weights: GanLossWeights {
                lambda_adv: 0.05,
                lambda_p: 1.0,
                norm: LpNorm::L1,
            },
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    fn to_meta(&self) -> Tensor {
        Tensor::vector(vec![
            self.batch as f64,
            self.epochs as f64,
            self.max_steps.map_or(-1.0, |s| s as f64),
            self.lr,
            self.weights.lambda_adv,
            self.weights.lambda_p,
            f64::from(self.weights.norm.p()),
            (self.seed >> 32) as f64,
            (self.seed & 0xFFFF_FFFF) as f64,
        ])
    }

    fn from_meta(t: &Tensor) -> Result<Self> {
        let m = t.data();
        if m.len() != 9 {
            return Err(Error::CorruptCheckpoint(format!(
                "{META} has {} entries, expected 9",
                m.len()
            )));
        }
        Ok(Self {
            batch: m[0] as usize,
            epochs: m[1] as usize,
            max_steps: (m[2] >= 0.0).then_some(m[2] as u64),
            lr: m[3],
            weights: GanLossWeights::new(m[4], m[5], LpNorm::from_p(m[6] as u32)?)?,
            seed: ((m[7] as u64) << 32) | m[8] as u64,
            model: ModelConfig::default(),
        })
    }
}

/// Losses of one optimizer step; `d` is present for adversarial models.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub step: u64,
    pub d: Option<f64>,
    pub g: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum Disc {
    Context(ContextDiscriminator),
    Mlp(MlpDiscriminator),
}

/// One training run: model parameters, optimizers and data order.
#[derive(Clone, Debug)]
pub struct Trainer {
    kind: ModelKind,
    spec: FeatureSpec,
    cfg: TrainConfig,
    g_params: ParamSet,
    g_net: GeneratorNet,
    g_adam: Adam,
    d_params: ParamSet,
    disc: Option<Disc>,
    d_adam: Option<Adam>,
    feat: ParamSet,
    data_rng: SeededRng,
    /// Data rng state before the current epoch's shuffle.
    epoch_state: Vec<u8>,
    order: Vec<usize>,
    step: u64,
}

fn adam_cfg(lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        ..AdamConfig::default()
    }
}

fn check_finite(what: &'static str, value: f64, params: &ParamSet) -> std::result::Result<(), &'static str> {
    let grads_ok = params
        .iter()
        .all(|(_, t)| t.grad().is_none_or(|g| g.iter().all(|v| v.is_finite())));
    if value.is_finite() && grads_ok {
        Ok(())
    } else {
        Err(what)
    }
}

impl Trainer {
    /// Fresh run. `feat` carries the frozen feature-extractor parameters so
    /// they travel with the checkpoint; pass an empty set for fixed
    /// pipelines.
    pub fn new(kind: ModelKind, spec: FeatureSpec, cfg: TrainConfig, feat: ParamSet) -> Result<Self> {
        cfg.weights.validate()?;
        if cfg.batch == 0 {
            return Err(Error::invalid("train", "batch must be positive"));
        }
        let width = spec.width;
        let act = output_activation(spec.kind);
        let mut g_rng = SeededRng::stream(cfg.seed, G_INIT_STREAM);
        let mut g_params = ParamSet::new();
        let g_net = match kind {
            ModelKind::FeedForward => GeneratorNet::FeedForward(FeedForward::new(
                &mut g_params,
                width,
                cfg.model.ff_hidden,
                act,
                &mut g_rng,
            )),
            _ => GeneratorNet::Recurrent(Generator::new(
                &mut g_params,
                width,
                &cfg.model.g_hidden,
                act,
                &mut g_rng,
            )),
        };
        let mut d_rng = SeededRng::stream(cfg.seed, D_INIT_STREAM);
        let mut d_params = ParamSet::new();
        let disc = match kind {
            ModelKind::ContextRnnGan => Some(Disc::Context(ContextDiscriminator::new(
                &mut d_params,
                width,
                cfg.model.d_hidden,
                &mut d_rng,
            ))),
            ModelKind::RnnGan => Some(Disc::Mlp(MlpDiscriminator::new(
                &mut d_params,
                width,
                cfg.model.mlp_hidden,
                &mut d_rng,
            ))),
            _ => None,
        };
        let g_adam = Adam::new(adam_cfg(cfg.lr), &g_params);
        let d_adam = disc.as_ref().map(|_| Adam::new(adam_cfg(cfg.lr), &d_params));
        let data_rng = SeededRng::stream(cfg.seed, DATA_STREAM);
        Ok(Self {
            kind,
            spec,
            epoch_state: data_rng.state_bytes(),
            cfg,
            g_params,
            g_net,
            g_adam,
            d_params,
            disc,
            d_adam,
            feat,
            data_rng,
            order: Vec::new(),
            step: 0,
        })
    }

    /// Restores a run exactly as it was when `ckpt` was taken.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let CheckpointKind::Model(kind) = ckpt.kind else {
            return Err(Error::invalid("resume", "checkpoint holds features only"));
        };
        let cfg = TrainConfig::from_meta(ckpt.require(META)?)?;
        let act = output_activation(ckpt.spec.kind);
        let g_params = ckpt.params_with_prefix("g.");
        let g_net = GeneratorNet::load(kind, &g_params, act)?;
        let d_params = ckpt.params_with_prefix("d.");
        let disc = match kind {
            ModelKind::ContextRnnGan => Some(Disc::Context(ContextDiscriminator::load(&d_params)?)),
            ModelKind::RnnGan => Some(Disc::Mlp(MlpDiscriminator::load(&d_params)?)),
            _ => None,
        };
        let lookup = |prefix: &'static str| move |name: &str| ckpt.tensor(&format!("{prefix}{name}")).cloned();
        let g_adam = Adam::import(adam_cfg(cfg.lr), &g_params, lookup("adam.g."))?;
        let d_adam = match disc {
            Some(_) => Some(Adam::import(adam_cfg(cfg.lr), &d_params, lookup("adam.d."))?),
            None => None,
        };
        let data_rng = SeededRng::from_state_bytes(&ckpt.rng)?;
        Ok(Self {
            kind,
            spec: ckpt.spec,
            cfg,
            g_params,
            g_net,
            g_adam,
            d_params,
            disc,
            d_adam,
            feat: ckpt.feature_params(),
            epoch_state: ckpt.rng.clone(),
            data_rng,
            // rebuilt from `epoch_state` on the next step
            order: Vec::new(),
            step: ckpt.step,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn spec(&self) -> FeatureSpec {
        self.spec
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn generator_params(&self) -> &ParamSet {
        &self.g_params
    }

    pub fn discriminator_params(&self) -> &ParamSet {
        &self.d_params
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.cfg.batch) as u64
    }

    /// Optimizer steps a full run over `n` sequences takes.
    pub fn total_steps(&self, n: usize) -> u64 {
        let full = self.steps_per_epoch(n) * self.cfg.epochs as u64;
        self.cfg.max_steps.map_or(full, |m| m.min(full))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        fn push_params(ps: &ParamSet, prefix: &str, out: &mut Vec<(String, Tensor)>) {
            for (n, t) in ps.iter() {
                let t = Tensor::new(t.shape(), t.data().to_vec()).expect("parameter shape");
                out.push((format!("{prefix}{n}"), t));
            }
        }
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        push_params(&self.g_params, "", &mut tensors);
        push_params(&self.d_params, "", &mut tensors);
        push_params(&self.feat, "feat.", &mut tensors);
        for (n, t) in self.g_adam.export(&self.g_params) {
            tensors.push((format!("adam.g.{n}"), t));
        }
        if let Some(a) = &self.d_adam {
            for (n, t) in a.export(&self.d_params) {
                tensors.push((format!("adam.d.{n}"), t));
            }
        }
        tensors.push((META.to_string(), self.cfg.to_meta()));
        let mid_epoch = !self.order.is_empty() && !self.step.is_multiple_of(self.steps_per_epoch(self.order.len()));
        Checkpoint {
            kind: CheckpointKind::Model(self.kind),
            spec: self.spec,
            tensors,
            rng: if mid_epoch {
                self.epoch_state.clone()
            } else {
                self.data_rng.state_bytes()
            },
            step: self.step,
        }
    }

    pub fn predictor(&self) -> Predictor {
        Predictor {
            kind: self.kind,
            spec: self.spec,
            params: self.g_params.clone(),
            net: self.g_net.clone(),
        }
    }

    fn validate(&self, data: &SequenceData) -> Result<()> {
        if data.width() != self.spec.width {
            return Err(Error::shape("train", &[data.width()], &[self.spec.width]));
        }
        if data.is_empty() {
            return Err(Error::EmptySequence("train"));
        }
        let need = match self.kind {
            ModelKind::FeedForward => FF_WINDOW + 1,
            _ => 2,
        };
        if data.frames() < need {
            return Err(Error::invalid(
                "train",
                format!(
                    "{} needs sequences of at least {need} frames, got {}",
                    self.kind,
                    data.frames()
                ),
            ));
        }
        Ok(())
    }

    /// Indices of the next minibatch, reshuffling at epoch boundaries.
    fn next_batch(&mut self, n: usize) -> Vec<usize> {
        let spe = self.steps_per_epoch(n);
        let pos = (self.step % spe) as usize;
        if pos == 0 || self.order.len() != n {
            if pos == 0 {
                self.epoch_state = self.data_rng.state_bytes();
            } else {
                self.data_rng = SeededRng::from_state_bytes(&self.epoch_state).expect("own rng state");
            }
            self.order = (0..n).collect();
            self.order.shuffle(&mut self.data_rng);
        }
        let start = pos * self.cfg.batch;
        self.order[start..(start + self.cfg.batch).min(n)].to_vec()
    }

    fn frames(tape: &mut Tape, data: &SequenceData, idx: &[usize]) -> Result<Vec<Var>> {
        (0..data.frames())
            .map(|t| tape.constant(&[idx.len(), data.width()], data.gather(idx, t)))
            .collect()
    }

    fn non_finite(&self, what: &'static str) -> Error {
        Error::NonFinite {
            what,
            step: self.step,
            last_good: Box::new(self.checkpoint()),
        }
    }

    /// One minibatch: a discriminator step (adversarial models) followed by
    /// a generator step.
    pub fn step(&mut self, data: &SequenceData) -> Result<StepLosses> {
        self.validate(data)?;
        let before = (self.data_rng.clone(), self.epoch_state.clone(), self.order.clone());
        let idx = self.next_batch(data.len());
        let (d, g) = match self.update(data, &idx) {
            Ok(losses) => losses,
            Err(e) => {
                (self.data_rng, self.epoch_state, self.order) = before;
                return Err(match e {
                    // rebuilt so the saved data order is the restored one
                    Error::NonFinite { what, .. } => self.non_finite(what),
                    e => e,
                });
            }
        };
        self.step += 1;
        Ok(StepLosses { step: self.step, d, g })
    }

    fn update(&mut self, data: &SequenceData, idx: &[usize]) -> Result<(Option<f64>, f64)> {
        let mut saved = None;
        let mut d_loss = None;
        if self.disc.is_some() {
            let (mut ps, l) = self.d_gradients(data, idx)?;
            check_finite("discriminator", l, &ps).map_err(|w| self.non_finite(w))?;
            saved = Some((self.d_params.clone(), self.d_adam.clone()));
            self.d_adam.as_mut().expect("adversarial model").step(&mut ps)?;
            self.d_params = ps;
            d_loss = Some(l);
        }
        let (mut g_params, g_loss) = self.g_gradients(data, idx)?;
        if let Err(what) = check_finite("generator", g_loss, &g_params) {
            if let Some((ps, adam)) = saved {
                self.d_params = ps;
                self.d_adam = adam;
            }
            return Err(self.non_finite(what));
        }
        self.g_adam.step(&mut g_params)?;
        self.g_params = g_params;
        Ok((d_loss, g_loss))
    }

    /// Discriminator gradients on real frames and generator outputs computed
    /// without generator gradient. Returns a copy of the discriminator
    /// parameters holding the gradients, and the loss.
    fn d_gradients(&self, data: &SequenceData, idx: &[usize]) -> Result<(ParamSet, f64)> {
        let t_len = data.frames();
        let fakes: Vec<Vec<f64>> = {
            let mut tape = Tape::new();
            let gb = self.g_params.bind(&mut tape, false);
            let xs = Self::frames(&mut tape, data, idx)?;
            let ys = self.generate(&mut tape, &gb, &xs[..t_len - 1])?;
            ys.iter().map(|&y| tape.value(y).to_vec()).collect()
        };
        let mut tape = Tape::new();
        let db = self.d_params.bind(&mut tape, true);
        let xs = Self::frames(&mut tape, data, idx)?;
        let ys = fakes
            .into_iter()
            .map(|f| tape.constant(&[idx.len(), data.width()], f))
            .collect::<Result<Vec<_>>>()?;
        let (real, fake) = self.disc_scores(&mut tape, &db, &xs, &ys)?;
        let (loss, _) = d_loss_context_tape(&mut tape, &real, &fake)?;
        tape.backward(loss)?;
        let mut ps = self.d_params.clone();
        ps.zero_grads();
        ps.accumulate_grads(&tape, &db)?;
        Ok((ps, tape.scalar(loss)))
    }

    fn g_gradients(&self, data: &SequenceData, idx: &[usize]) -> Result<(ParamSet, f64)> {
        let t_len = data.frames();
        let mut tape = Tape::new();
        let gb = self.g_params.bind(&mut tape, true);
        let xs = Self::frames(&mut tape, data, idx)?;
        let loss = match self.g_net {
            GeneratorNet::FeedForward(_) => {
                let preds = self.generate(&mut tape, &gb, &xs[..t_len - 1])?;
                let targets = &xs[FF_WINDOW..];
                let lp = lp_loss_tape(&mut tape, &preds, targets, self.cfg.weights.norm)?;
                tape.scale(lp, self.cfg.weights.lambda_p)
            }
            GeneratorNet::Recurrent(_) => {
                let ys = self.generate(&mut tape, &gb, &xs[..t_len - 1])?;
                let fake = match (&self.disc, self.cfg.weights.lambda_adv > 0.0) {
                    (Some(_), true) => {
                        let db = self.d_params.bind(&mut tape, false);
                        self.disc_scores(&mut tape, &db, &xs, &ys)?.1
                    }
                    _ => Vec::new(),
                };
                let w = match self.disc {
                    Some(_) => self.cfg.weights,
                    None => GanLossWeights {
                        lambda_adv: 0.0,
                        ..self.cfg.weights
                    },
                };
                g_loss_tape(&mut tape, &fake, &ys, &xs[1..], &w)?
            }
        };
        tape.backward(loss)?;
        let mut ps = self.g_params.clone();
        ps.zero_grads();
        ps.accumulate_grads(&tape, &gb)?;
        Ok((ps, tape.scalar(loss)))
    }

    /// Generator predictions for `xs`. Recurrent models emit one output per
    /// input; the feed-forward model emits one per complete window.
    fn generate(&self, tape: &mut Tape, gb: &Bound, xs: &[Var]) -> Result<Vec<Var>> {
        match &self.g_net {
            GeneratorNet::Recurrent(g) => g.forward(tape, gb, xs),
            GeneratorNet::FeedForward(f) => xs.windows(FF_WINDOW).map(|w| f.forward(tape, gb, w)).collect(),
        }
    }

    /// Real and fake discriminator scores per timestep.
    fn disc_scores(&self, tape: &mut Tape, db: &Bound, xs: &[Var], ys: &[Var]) -> Result<(Vec<Var>, Vec<Var>)> {
        match self.disc.as_ref().expect("adversarial model") {
            Disc::Context(d) => d.branch_scores(tape, db, xs, ys),
            Disc::Mlp(d) => {
                let real = xs[1..=ys.len()]
                    .iter()
                    .map(|&x| d.score(tape, db, x))
                    .collect::<Result<Vec<_>>>()?;
                let fake = ys.iter().map(|&y| d.score(tape, db, y)).collect::<Result<Vec<_>>>()?;
                Ok((real, fake))
            }
        }
    }

    /// Runs until the configured number of steps, reporting each one.
    pub fn train(&mut self, data: &SequenceData, mut on_step: impl FnMut(&StepLosses)) -> Result<()> {
        self.validate(data)?;
        let total = self.total_steps(data.len());
        while self.step < total {
            let l = self.step(data)?;
            on_step(&l);
        }
        Ok(())
    }
}
