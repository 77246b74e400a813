use rand::Rng;

use super::{init::uniform_fan, Bound, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// One GRU layer. Gates:
///
/// ```text
/// z  = σ(Wz·x + Uz·h + bz)
/// r  = σ(Wr·x + Ur·h + br)
/// h̃  = tanh(Wh·x + Uh·(r ⊙ h) + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GruLayer {
    pub wz: ParamId,
    pub wr: ParamId,
    pub wh: ParamId,
    pub uz: ParamId,
    pub ur: ParamId,
    pub uh: ParamId,
    pub bz: ParamId,
    pub br: ParamId,
    pub bh: ParamId,
    pub inp: usize,
    pub hidden: usize,
}

const GATES: [&str; 3] = ["z", "r", "h"];

impl GruLayer {
    pub fn new(params: &mut ParamSet, name: &str, inp: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for g in GATES {
            w.push(params.add(format!("{name}.w{g}"), uniform_fan(&[hidden, inp], inp, hidden, rng)));
        }
        for g in GATES {
            u.push(params.add(
                format!("{name}.u{g}"),
                uniform_fan(&[hidden, hidden], hidden, hidden, rng),
            ));
        }
        for g in GATES {
            b.push(params.add(format!("{name}.b{g}"), Tensor::zeros(&[hidden])));
        }
        Self {
            wz: w[0],
            wr: w[1],
            wh: w[2],
            uz: u[0],
            ur: u[1],
            uh: u[2],
            bz: b[0],
            br: b[1],
            bh: b[2],
            inp,
            hidden,
        }
    }

    pub fn load(params: &ParamSet, name: &str) -> Result<Self> {
        let id = |k: &str| params.require(&format!("{name}.{k}"));
        let wz = id("wz")?;
        let shape = params.get(wz).shape().to_vec();
        if shape.len() != 2 {
            return Err(Error::invalid("gru load", format!("{name}.wz has shape {shape:?}")));
        }
        let layer = Self {
            wz,
            wr: id("wr")?,
            wh: id("wh")?,
            uz: id("uz")?,
            ur: id("ur")?,
            uh: id("uh")?,
            bz: id("bz")?,
            br: id("br")?,
            bh: id("bh")?,
            inp: shape[1],
            hidden: shape[0],
        };
        for (p, want) in [
            (layer.wr, [layer.hidden, layer.inp]),
            (layer.wh, [layer.hidden, layer.inp]),
            (layer.uz, [layer.hidden, layer.hidden]),
            (layer.ur, [layer.hidden, layer.hidden]),
            (layer.uh, [layer.hidden, layer.hidden]),
        ] {
            if params.get(p).shape() != want {
                return Err(Error::shape("gru load", params.get(p).shape(), &want));
            }
        }
        Ok(layer)
    }

    /// Zero initial state matching the batch layout of `x`.
    pub fn zero_state(&self, tape: &mut Tape, x: Var) -> Var {
        let shape = match tape.shape(x) {
            [_] => vec![self.hidden],
            s => vec![s[0], self.hidden],
        };
        tape.input(Tensor::zeros(&shape))
    }

    pub fn step(&self, tape: &mut Tape, bound: &Bound, x: Var, h: Var) -> Result<Var> {
        let xw = *tape.shape(x).last().unwrap_or(&0);
        let hw = *tape.shape(h).last().unwrap_or(&0);
        if xw != self.inp || hw != self.hidden {
            return Err(Error::shape("gru_step", &[xw, hw], &[self.inp, self.hidden]));
        }
        let gate = |tape: &mut Tape, w: ParamId, u: ParamId, b: ParamId, hin: Var| -> Result<Var> {
            let a = tape.linear(x, bound[w], Some(bound[b]))?;
            let c = tape.linear(hin, bound[u], None)?;
            tape.add(a, c)
        };
        let az = gate(tape, self.wz, self.uz, self.bz, h)?;
        let z = tape.sigmoid(az);
        let ar = gate(tape, self.wr, self.ur, self.br, h)?;
        let r = tape.sigmoid(ar);
        let rh = tape.mul(r, h)?;
        let ah = gate(tape, self.wh, self.uh, self.bh, rh)?;
        let cand = tape.tanh(ah);
        let keep = tape.affine(z, -1.0, 1.0);
        let old = tape.mul(keep, h)?;
        let new = tape.mul(z, cand)?;
        tape.add(old, new)
    }
}

/// Stack of GRU layers; layer `l > 0` consumes layer `l - 1`'s hidden state
/// at the same timestep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gru {
    pub layers: Vec<GruLayer>,
}

impl Gru {
    pub fn new(params: &mut ParamSet, name: &str, inp: usize, hidden: &[usize], rng: &mut impl Rng) -> Self {
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = inp;
        for (i, &h) in hidden.iter().enumerate() {
            layers.push(GruLayer::new(params, &format!("{name}.l{i}"), width, h, rng));
            width = h;
        }
        Self { layers }
    }

    pub fn load(params: &ParamSet, name: &str) -> Result<Self> {
        let mut layers = Vec::new();
        while params.find(&format!("{name}.l{}.wz", layers.len())).is_some() {
            layers.push(GruLayer::load(params, &format!("{name}.l{}", layers.len()))?);
        }
        if layers.is_empty() {
            return Err(Error::MissingParameter(format!("{name}.l0.wz")));
        }
        for pair in layers.windows(2) {
            if pair[1].inp != pair[0].hidden {
                return Err(Error::shape("gru load", &[pair[0].hidden], &[pair[1].inp]));
            }
        }
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inp
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden)
    }

    pub fn zero_states(&self, tape: &mut Tape, x: Var) -> Vec<Var> {
        self.layers.iter().map(|l| l.zero_state(tape, x)).collect()
    }

    /// Advances every layer by one timestep; the top state is the last entry.
    pub fn step(&self, tape: &mut Tape, bound: &Bound, x: Var, states: &[Var]) -> Result<Vec<Var>> {
        let mut input = x;
        let mut next = Vec::with_capacity(self.layers.len());
        for (layer, &h) in self.layers.iter().zip(states) {
            input = layer.step(tape, bound, input, h)?;
            next.push(input);
        }
        Ok(next)
    }

    /// Top-layer hidden states for each input, starting from zero state.
    pub fn sequence(&self, tape: &mut Tape, bound: &Bound, xs: &[Var]) -> Result<Vec<Var>> {
        let first = *xs.first().ok_or(Error::EmptySequence("gru_sequence"))?;
        let mut states = self.zero_states(tape, first);
        let mut outs = Vec::with_capacity(xs.len());
        for &x in xs {
            states = self.step(tape, bound, x, &states)?;
            outs.push(*states.last().unwrap());
        }
        Ok(outs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn zeroed(ps: &mut ParamSet) {
        for t in ps.tensors_mut() {
            t.data_mut().fill(0.0);
        }
    }

    #[test]
    fn zero_parameters_halve_previous_state() {
        let mut ps = ParamSet::new();
        let layer = GruLayer::new(&mut ps, "g", 2, 1, &mut SeededRng::new(1));
        zeroed(&mut ps);
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape, false);
        let x = tape.leaf(&Tensor::vector(vec![0.3, -0.4]));
        let h = tape.leaf(&Tensor::vector(vec![0.8]));
        let out = layer.step(&mut tape, &b, x, h).unwrap();
        assert!((tape.value(out)[0] - 0.4).abs() < 1e-15);
        let h0 = layer.zero_state(&mut tape, x);
        let out = layer.step(&mut tape, &b, x, h0).unwrap();
        assert_eq!(tape.value(out), &[0.0]);
    }

    #[test]
    fn zero_parameters_sequence_stays_zero() {
        let mut ps = ParamSet::new();
        let gru = Gru::new(&mut ps, "g", 3, &[4, 2], &mut SeededRng::new(2));
        zeroed(&mut ps);
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape, false);
        let xs: Vec<Var> = (0..3)
            .map(|i| tape.leaf(&Tensor::vector(vec![i as f64, 1.0, -1.0])))
            .collect();
        for h in gru.sequence(&mut tape, &b, &xs).unwrap() {
            assert_eq!(tape.value(h), &[0.0, 0.0]);
        }
    }

    #[test]
    fn empty_sequence_is_an_error() {
        let mut ps = ParamSet::new();
        let gru = Gru::new(&mut ps, "g", 3, &[4], &mut SeededRng::new(2));
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape, false);
        assert!(matches!(gru.sequence(&mut tape, &b, &[]), Err(Error::EmptySequence(_))));
    }

    #[test]
    fn load_recovers_geometry() {
        let mut ps = ParamSet::new();
        let gru = Gru::new(&mut ps, "g", 5, &[7, 3], &mut SeededRng::new(2));
        assert_eq!(Gru::load(&ps, "g").unwrap(), gru);
    }
}
