use rand::Rng;

use super::{init::uniform_fan, Bound, ParamId, ParamSet};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Linear => x,
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Fully connected layer `act(W·x + b)` with `W: [out, in]`, `b: [out]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inp: usize,
    pub out: usize,
}

impl Dense {
    pub fn new(params: &mut ParamSet, name: &str, inp: usize, out: usize, rng: &mut impl Rng) -> Self {
        let w = params.add(format!("{name}.w"), uniform_fan(&[out, inp], inp, out, rng));
        let b = params.add(format!("{name}.b"), Tensor::zeros(&[out]));
        Self { w, b, inp, out }
    }

    /// Rebuilds the layer from tensors already present in `params`.
    pub fn load(params: &ParamSet, name: &str) -> Result<Self> {
        let w = params.require(&format!("{name}.w"))?;
        let b = params.require(&format!("{name}.b"))?;
        let shape = params.get(w).shape();
        if shape.len() != 2 || params.get(b).shape() != [shape[0]] {
            return Err(Error::shape("dense load", shape, params.get(b).shape()));
        }
        Ok(Self {
            w,
            b,
            inp: shape[1],
            out: shape[0],
        })
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var, act: Activation) -> Result<Var> {
        let width = *tape.shape(x).last().unwrap_or(&0);
        if width != self.inp {
            return Err(Error::shape("dense_forward", tape.shape(x), &[self.out, self.inp]));
        }
        let y = tape.linear(x, bound[self.w], Some(bound[self.b]))?;
        Ok(act.apply(tape, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn zero_weights_sigmoid_gives_half() {
        let mut ps = ParamSet::new();
        let d = Dense::new(&mut ps, "d", 3, 2, &mut SeededRng::new(0));
        ps.get_mut(d.w).data_mut().fill(0.0);
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape, false);
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0, 3.0]));
        let y = d.forward(&mut tape, &b, x, Activation::Sigmoid).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn identity_weights_pass_through() {
        let mut ps = ParamSet::new();
        let d = Dense::new(&mut ps, "d", 3, 3, &mut SeededRng::new(0));
        let eye = ps.get_mut(d.w).data_mut();
        eye.fill(0.0);
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape, false);
        let x = tape.leaf(&Tensor::vector(vec![0.1, -2.0, 3.5]));
        let y = d.forward(&mut tape, &b, x, Activation::Linear).unwrap();
        assert_eq!(tape.value(y), &[0.1, -2.0, 3.5]);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut ps = ParamSet::new();
        let d = Dense::new(&mut ps, "d", 3, 2, &mut SeededRng::new(0));
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape, false);
        let x = tape.leaf(&Tensor::vector(vec![1.0, 2.0]));
        assert!(d.forward(&mut tape, &b, x, Activation::Linear).is_err());
    }
}
