use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Compares the tape gradient of scalar `f` at `x` with central differences.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1e-12, |analytic| + |numeric|)`.
pub fn grad_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(&x.clone().with_grad());
    let root = f(&mut tape, xv)?;
    tape.backward(root)?;
    let analytic = match tape.grad(xv) {
        Some(g) => g.to_vec(),
        None => vec![0.0; x.len()],
    };

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(probe);
        let r = f(&mut tape, v)?;
        Ok(tape.scalar(r))
    };

    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + eps;
        let up = eval(&probe)?;
        probe.data_mut()[i] = orig - eps;
        let down = eval(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-12);
        worst = worst.max(err);
    }
    Ok(worst)
}
