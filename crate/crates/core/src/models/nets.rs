use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Activation, Bound, Dense, Gru, ParamSet};
use crate::tensor::{Tape, Var};

/// Recurrent generator: `y_t = head(GRU(x_1..x_t))`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Generator {
    pub gru: Gru,
    pub head: Dense,
    pub out_act: Activation,
}

impl Generator {
    pub fn new(params: &mut ParamSet, width: usize, hidden: &[usize], out_act: Activation, rng: &mut impl Rng) -> Self {
        let gru = Gru::new(params, "g.gru", width, hidden, rng);
        let head = Dense::new(params, "g.head", gru.output_width(), width, rng);
        Self { gru, head, out_act }
    }

    pub fn load(params: &ParamSet, out_act: Activation) -> Result<Self> {
        let gru = Gru::load(params, "g.gru")?;
        let head = Dense::load(params, "g.head")?;
        if head.inp != gru.output_width() || head.out != gru.input_width() {
            return Err(Error::shape(
                "generator load",
                &[head.inp, head.out],
                &[gru.output_width(), gru.input_width()],
            ));
        }
        Ok(Self { gru, head, out_act })
    }

    pub fn width(&self) -> usize {
        self.head.out
    }

    /// One prediction per input; `y[t]` only sees `xs[..=t]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, xs: &[Var]) -> Result<Vec<Var>> {
        let hs = self.gru.sequence(tape, bound, xs)?;
        hs.into_iter()
            .map(|h| self.head.forward(tape, bound, h, self.out_act))
            .collect()
    }
}

/// Recurrent discriminator scoring a candidate against all preceding frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ContextDiscriminator {
    pub gru: Gru,
    pub readout: Dense,
}

impl ContextDiscriminator {
    pub fn new(params: &mut ParamSet, width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let gru = Gru::new(params, "d.gru", width, &[hidden], rng);
        let readout = Dense::new(params, "d.out", hidden, 1, rng);
        Self { gru, readout }
    }

    pub fn load(params: &ParamSet) -> Result<Self> {
        Ok(Self {
            gru: Gru::load(params, "d.gru")?,
            readout: Dense::load(params, "d.out")?,
        })
    }

    fn score(&self, tape: &mut Tape, bound: &Bound, states: &[Var]) -> Result<Var> {
        let top = *states.last().expect("gru has layers");
        self.readout.forward(tape, bound, top, Activation::Sigmoid)
    }

    /// Branching evaluation over one batch.
    ///
    /// `real` holds `x_1..x_T` and `fake` holds `y_1..y_k` with `k < T`.
    /// Returns `k` real and `k` fake scores: entry `t` scores `x_{t+2}` and
    /// `y_{t+1}` after the shared real prefix `x_1..x_{t+1}`.
    pub fn branch_scores(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        real: &[Var],
        fake: &[Var],
    ) -> Result<(Vec<Var>, Vec<Var>)> {
        let first = *real.first().ok_or(Error::EmptySequence("d_branch_eval"))?;
        if fake.len() >= real.len() {
            return Err(Error::invalid(
                "d_branch_eval",
                format!(
                    "{} fake frames need at least {} real frames",
                    fake.len(),
                    fake.len() + 1
                ),
            ));
        }
        let mut states = self.gru.zero_states(tape, first);
        let mut real_scores = Vec::with_capacity(fake.len());
        let mut fake_scores = Vec::with_capacity(fake.len());
        for (t, &x) in real.iter().take(fake.len() + 1).enumerate() {
            states = self.gru.step(tape, bound, x, &states)?;
            if t > 0 {
                real_scores.push(self.score(tape, bound, &states)?);
            }
            if let Some(&y) = fake.get(t) {
                let branch = self.gru.step(tape, bound, y, &states)?;
                fake_scores.push(self.score(tape, bound, &branch)?);
            }
        }
        Ok((real_scores, fake_scores))
    }

    /// Score of `candidate` following `context`, computed from scratch.
    pub fn score_after(&self, tape: &mut Tape, bound: &Bound, context: &[Var], candidate: Var) -> Result<Var> {
        let first = *context.first().ok_or(Error::EmptySequence("d_eval"))?;
        let mut states = self.gru.zero_states(tape, first);
        for &x in context {
            states = self.gru.step(tape, bound, x, &states)?;
        }
        states = self.gru.step(tape, bound, candidate, &states)?;
        self.score(tape, bound, &states)
    }
}

/// Context-free discriminator `D(y)`: dense relu layer then a sigmoid score.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MlpDiscriminator {
    pub hidden: Dense,
    pub readout: Dense,
}

impl MlpDiscriminator {
    pub fn new(params: &mut ParamSet, width: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            hidden: Dense::new(params, "d.h", width, hidden, rng),
            readout: Dense::new(params, "d.out", hidden, 1, rng),
        }
    }

    pub fn load(params: &ParamSet) -> Result<Self> {
        Ok(Self {
            hidden: Dense::load(params, "d.h")?,
            readout: Dense::load(params, "d.out")?,
        })
    }

    pub fn score(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let h = self.hidden.forward(tape, bound, x, Activation::Relu)?;
        self.readout.forward(tape, bound, h, Activation::Sigmoid)
    }
}

/// Number of frames the feed-forward baseline consumes.
pub const FF_WINDOW: usize = 4;

/// Two relu layers over the concatenation of the last four frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeedForward {
    pub layers: [Dense; 3],
    pub out_act: Activation,
}

impl FeedForward {
    pub fn new(
        params: &mut ParamSet,
        width: usize,
        hidden: [usize; 2],
        out_act: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            layers: [
                Dense::new(params, "g.ff0", FF_WINDOW * width, hidden[0], rng),
                Dense::new(params, "g.ff1", hidden[0], hidden[1], rng),
                Dense::new(params, "g.ff2", hidden[1], width, rng),
            ],
            out_act,
        }
    }

    pub fn load(params: &ParamSet, out_act: Activation) -> Result<Self> {
        Ok(Self {
            layers: [
                Dense::load(params, "g.ff0")?,
                Dense::load(params, "g.ff1")?,
                Dense::load(params, "g.ff2")?,
            ],
            out_act,
        })
    }

    pub fn width(&self) -> usize {
        self.layers[2].out
    }

    /// Predicts the frame after `window` (exactly four inputs).
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, window: &[Var]) -> Result<Var> {
        if window.len() != FF_WINDOW {
            return Err(Error::invalid(
                "ff_predict",
                format!("expected {FF_WINDOW} input frames, got {}", window.len()),
            ));
        }
        let x = tape.concat_cols(window)?;
        let h = self.layers[0].forward(tape, bound, x, Activation::Relu)?;
        let h = self.layers[1].forward(tape, bound, h, Activation::Relu)?;
        self.layers[2].forward(tape, bound, h, self.out_act)
    }
}
