use rand::Rng;

use super::{dropout, init::uniform_fan, Activation, Bound, Dense, Mode, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Geometry of the three-stage convolutional feature network.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CnnConfig {
    /// Square input extent.
    pub extent: usize,
    pub channels: [usize; 3],
    pub kernels: [usize; 3],
    pub penultimate: usize,
    pub labels: usize,
}

impl Default for CnnConfig {
    fn default() -> Self {
        // 32 -conv5-> 28 -pool-> 14 -conv3-> 12 -pool-> 6 -conv3-> 4 -pool-> 2
        Self {
            extent: 32,
            channels: [8, 16, 32],
            kernels: [5, 3, 3],
            penultimate: 256,
            labels: 16,
        }
    }
}

impl CnnConfig {
    /// Width of the flattened output of the last pooling stage.
    pub fn flat_width(&self) -> Result<usize> {
        let mut e = self.extent;
        for &k in &self.kernels {
            if k > e {
                return Err(Error::invalid("cnn config", format!("kernel {k} exceeds extent {e}")));
            }
            e = e - k + 1;
            if !e.is_multiple_of(2) {
                return Err(Error::invalid("cnn config", format!("odd extent {e} before pooling")));
            }
            e /= 2;
        }
        Ok(self.channels[2] * e * e)
    }
}

/// Three conv → relu → 2×2 max-pool stages, a dense penultimate layer with
/// relu, dropout, and a linear label head.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShallowCnn {
    pub cfg: CnnConfig,
    pub conv: [(ParamId, ParamId); 3],
    pub fc: Dense,
    pub head: Dense,
}

impl ShallowCnn {
    pub fn new(params: &mut ParamSet, name: &str, cfg: CnnConfig, rng: &mut impl Rng) -> Result<Self> {
        let flat = cfg.flat_width()?;
        let mut conv = Vec::with_capacity(3);
        let mut inp = 1;
        for (i, (&f, &k)) in cfg.channels.iter().zip(&cfg.kernels).enumerate() {
            let kern = uniform_fan(&[f, inp, k, k], inp * k * k, f * k * k, rng);
            let kid = params.add(format!("{name}.conv{i}.k"), kern);
            let bid = params.add(format!("{name}.conv{i}.b"), Tensor::zeros(&[f]));
            conv.push((kid, bid));
            inp = f;
        }
        let fc = Dense::new(params, &format!("{name}.fc"), flat, cfg.penultimate, rng);
        let head = Dense::new(params, &format!("{name}.head"), cfg.penultimate, cfg.labels, rng);
        Ok(Self {
            cfg,
            conv: [conv[0], conv[1], conv[2]],
            fc,
            head,
        })
    }

    pub fn load(params: &ParamSet, name: &str, extent: usize) -> Result<Self> {
        let mut conv = Vec::with_capacity(3);
        let mut channels = [0; 3];
        let mut kernels = [0; 3];
        for i in 0..3 {
            let k = params.require(&format!("{name}.conv{i}.k"))?;
            let b = params.require(&format!("{name}.conv{i}.b"))?;
            let s = params.get(k).shape();
            if s.len() != 4 {
                return Err(Error::invalid("cnn load", format!("kernel shape {s:?}")));
            }
            channels[i] = s[0];
            kernels[i] = s[2];
            conv.push((k, b));
        }
        let fc = Dense::load(params, &format!("{name}.fc"))?;
        let head = Dense::load(params, &format!("{name}.head"))?;
        let cfg = CnnConfig {
            extent,
            channels,
            kernels,
            penultimate: fc.out,
            labels: head.out,
        };
        if cfg.flat_width()? != fc.inp {
            return Err(Error::shape("cnn load", &[cfg.flat_width()?], &[fc.inp]));
        }
        Ok(Self {
            cfg,
            conv: [conv[0], conv[1], conv[2]],
            fc,
            head,
        })
    }

    /// Returns `(label_logits, penultimate)` for a `[N, 1, E, E]` batch (or a
    /// single `[1, E, E]` image).
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        images: Var,
        mode: Mode,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Result<(Var, Var)> {
        let penult = self.penultimate(tape, bound, images)?;
        let dropped = dropout(tape, penult, dropout_rate, mode, rng)?;
        let logits = self.head.forward(tape, bound, dropped, Activation::Linear)?;
        Ok((logits, penult))
    }

    /// Deterministic trunk up to the penultimate activation.
    pub fn penultimate(&self, tape: &mut Tape, bound: &Bound, images: Var) -> Result<Var> {
        let shape = tape.shape(images).to_vec();
        let e = self.cfg.extent;
        let batch = match shape.as_slice() {
            [1, h, w] if *h == e && *w == e => None,
            [n, 1, h, w] if *h == e && *w == e => Some(*n),
            _ => return Err(Error::shape("shallow_cnn_forward", &shape, &[1, e, e])),
        };
        let mut x = images;
        for &(k, b) in &self.conv {
            let c = tape.conv2d(x, bound[k], bound[b])?;
            let r = tape.relu(c);
            x = tape.maxpool2d(r)?;
        }
        let flat = self.fc.inp;
        let x = match batch {
            Some(n) => tape.reshape(x, &[n, flat])?,
            None => tape.reshape(x, &[flat])?,
        };
        self.fc.forward(tape, bound, x, Activation::Relu)
    }
}
