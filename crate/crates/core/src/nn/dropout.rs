use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
pub fn dropout(tape: &mut Tape, x: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid("dropout", format!("rate {rate} outside [0, 1)")));
    }
    if mode == Mode::Eval || rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = tape.shape(x).to_vec();
    let n = tape.value(x).len();
    let mask = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    let m = tape.constant(&shape, mask)?;
    tape.mul(x, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::tensor::Tensor;

    #[test]
    fn eval_and_zero_rate_are_identity() {
        let mut rng = SeededRng::new(0);
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0, -2.0, 3.0]));
        let y = dropout(&mut tape, x, 0.5, Mode::Eval, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let y = dropout(&mut tape, x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn rejects_rate_one() {
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![1.0]));
        assert!(dropout(&mut tape, x, 1.0, Mode::Train, &mut SeededRng::new(0)).is_err());
    }

    #[test]
    fn preserves_expectation() {
        let n = 100_000;
        let mut tape = Tape::new();
        let x = tape.leaf(&Tensor::vector(vec![0.7; n]));
        let y = dropout(&mut tape, x, 0.5, Mode::Train, &mut SeededRng::new(3)).unwrap();
        let mean = tape.value(y).iter().sum::<f64>() / n as f64;
        assert!((mean - 0.7).abs() <= 0.01 * 0.7, "mean {mean}");
    }
}
