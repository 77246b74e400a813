use rand::seq::SliceRandom;
use rand::Rng;

use super::stack_frames;
use crate::datagen::Frame;
use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, Dense, ParamSet};
use crate::objectives::{Adam, AdamConfig};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AutoencoderConfig {
    pub hidden: usize,
    pub code: usize,
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        Self {
            hidden: 256,
            code: 64,
            steps: 3000,
            batch: 32,
            lr: 1e-3,
        }
    }
}

/// Dense `E²→hidden→code` tanh encoder with a mirrored sigmoid decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    pub params: ParamSet,
    enc: [Dense; 2],
    dec: [Dense; 2],
}

const NAMES: [&str; 4] = ["ae.enc0", "ae.enc1", "ae.dec0", "ae.dec1"];

impl Autoencoder {
    pub fn new(pixels: usize, cfg: &AutoencoderConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let e0 = Dense::new(&mut params, NAMES[0], pixels, cfg.hidden, rng);
        let e1 = Dense::new(&mut params, NAMES[1], cfg.hidden, cfg.code, rng);
        let d0 = Dense::new(&mut params, NAMES[2], cfg.code, cfg.hidden, rng);
        let d1 = Dense::new(&mut params, NAMES[3], cfg.hidden, pixels, rng);
        Self {
            params,
            enc: [e0, e1],
            dec: [d0, d1],
        }
    }

    pub fn load(params: ParamSet) -> Result<Self> {
        let l = |i: usize| Dense::load(&params, NAMES[i]);
        let (e0, e1, d0, d1) = (l(0)?, l(1)?, l(2)?, l(3)?);
        Ok(Self {
            enc: [e0, e1],
            dec: [d0, d1],
            params,
        })
    }

    pub fn pixels(&self) -> usize {
        self.enc[0].inp
    }

    pub fn code_width(&self) -> usize {
        self.enc[1].out
    }

    fn encode_var(&self, tape: &mut Tape, b: &Bound, x: Var) -> Result<Var> {
        let h = self.enc[0].forward(tape, b, x, Activation::Tanh)?;
        self.enc[1].forward(tape, b, h, Activation::Tanh)
    }

    fn decode_var(&self, tape: &mut Tape, b: &Bound, z: Var) -> Result<Var> {
        let h = self.dec[0].forward(tape, b, z, Activation::Tanh)?;
        self.dec[1].forward(tape, b, h, Activation::Sigmoid)
    }

    /// Bottleneck codes for a batch of flattened images (`[N, E²]` rows).
    pub fn encode_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let n = rows.len() / self.pixels();
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let x = tape.constant(&[n, self.pixels()], rows.to_vec())?;
        let z = self.encode_var(&mut tape, &b, x)?;
        Ok(tape.value(z).to_vec())
    }

    /// Decoded pixel probabilities for a batch of codes.
    pub fn decode_rows(&self, codes: &[f64]) -> Result<Vec<f64>> {
        let n = codes.len() / self.code_width();
        let mut tape = Tape::new();
        let b = self.params.bind(&mut tape, false);
        let z = tape.constant(&[n, self.code_width()], codes.to_vec())?;
        let y = self.decode_var(&mut tape, &b, z)?;
        Ok(tape.value(y).to_vec())
    }

    /// Mean per-pixel squared reconstruction error.
    pub fn reconstruction_mse(&self, images: &[Frame]) -> Result<f64> {
        let rows = stack_frames(images.iter(), self.pixels())?;
        let rec = self.decode_rows(&self.encode_rows(&rows)?)?;
        let se: f64 = rows.iter().zip(&rec).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(se / rows.len() as f64)
    }
}

/// Trains on summed squared reconstruction error with Adam. Returns the
/// model and the per-step batch loss.
pub fn train_autoencoder(
    images: &[Frame],
    cfg: &AutoencoderConfig,
    rng: &mut impl Rng,
) -> Result<(Autoencoder, Vec<f64>)> {
    let first = images.first().ok_or(Error::EmptySequence("train_autoencoder"))?;
    let pixels = first.width() * first.height();
    let rows = stack_frames(images.iter(), pixels)?;
    let mut ae = Autoencoder::new(pixels, cfg, rng);
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &ae.params,
    );
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut cursor = order.len();
    let mut trace = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch * pixels);
        for _ in 0..cfg.batch.min(images.len()) {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            batch.extend_from_slice(&rows[i * pixels..(i + 1) * pixels]);
        }
        let n = batch.len() / pixels;
        let mut tape = Tape::new();
        let b = ae.params.bind(&mut tape, true);
        let x = tape.constant(&[n, pixels], batch)?;
        let z = ae.encode_var(&mut tape, &b, x)?;
        let y = ae.decode_var(&mut tape, &b, z)?;
        let d = tape.sub(y, x)?;
        let sq = tape.square(d);
        let loss = tape.sum(sq);
        tape.backward(loss)?;
        trace.push(tape.scalar(loss));
        ae.params.zero_grads();
        ae.params.accumulate_grads(&tape, &b)?;
        adam.step(&mut ae.params)?;
    }
    Ok((ae, trace))
}
