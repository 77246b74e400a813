use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Probability clamp applied before every BCE evaluation.
pub const BCE_EPS: f64 = 1e-7;

/// Exponent of the summed regression penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpNorm {
    L1,
    L2,
}

impl LpNorm {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(LpNorm::L1),
            2 => Ok(LpNorm::L2),
            _ => Err(Error::invalid("lp_loss", format!("p must be 1 or 2, got {p}"))),
        }
    }

    pub fn p(self) -> u32 {
        match self {
            LpNorm::L1 => 1,
            LpNorm::L2 => 2,
        }
    }
}

/// Generator objective weights: `lambda_adv * L_adv + lambda_p * L_p`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GanLossWeights {
    pub lambda_adv: f64,
    pub lambda_p: f64,
    pub norm: LpNorm,
}

impl GanLossWeights {
    pub fn new(lambda_adv: f64, lambda_p: f64, norm: LpNorm) -> Result<Self> {
        let w = Self {
            lambda_adv,
            lambda_p,
            norm,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda_adv >= 0.0 && self.lambda_p >= 0.0 && (self.lambda_adv > 0.0 || self.lambda_p > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(
                "gan weights",
                format!("lambda_adv={} lambda_p={}", self.lambda_adv, self.lambda_p),
            ))
        }
    }
}

/// Binary cross-entropy of one probability against a 0/1 target.
pub fn bce(y: f64, target: f64) -> f64 {
    let y = y.clamp(BCE_EPS, 1.0 - BCE_EPS);
    -(target * y.ln() + (1.0 - target) * (1.0 - y).ln())
}

/// One `bce(score, target)` summand.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BceTerm {
    pub score: f64,
    pub target: f64,
}

fn lengths_match(op: &'static str, a: usize, b: usize) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::shape(op, &[a], &[b]))
    }
}

/// Summed `|target - pred|^p` over timesteps and features.
pub fn lp_loss(preds: &[Vec<f64>], targets: &[Vec<f64>], norm: LpNorm) -> Result<f64> {
    lengths_match("lp_loss", preds.len(), targets.len())?;
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        lengths_match("lp_loss", p.len(), t.len())?;
        total += p
            .iter()
            .zip(t)
            .map(|(a, b)| match norm {
                LpNorm::L1 => (b - a).abs(),
                LpNorm::L2 => (b - a) * (b - a),
            })
            .sum::<f64>();
    }
    Ok(total)
}

/// The discriminator's per-sequence terms: for each prefix length `t`, the
/// true continuation scored against 1 and the generated one against 0.
pub fn d_loss_context_terms(real: &[f64], fake: &[f64]) -> Result<Vec<BceTerm>> {
    lengths_match("d_loss_context", real.len(), fake.len())?;
    Ok(real
        .iter()
        .zip(fake)
        .flat_map(|(&r, &f)| [BceTerm { score: r, target: 1.0 }, BceTerm { score: f, target: 0.0 }])
        .collect())
}

pub fn d_loss_context(real: &[f64], fake: &[f64]) -> Result<f64> {
    Ok(d_loss_context_terms(real, fake)?
        .iter()
        .map(|t| bce(t.score, t.target))
        .sum())
}

pub fn g_loss(fake: &[f64], preds: &[Vec<f64>], targets: &[Vec<f64>], w: &GanLossWeights) -> Result<f64> {
    lengths_match("g_loss", fake.len(), preds.len())?;
    let adv: f64 = fake.iter().map(|&s| bce(s, 1.0)).sum();
    Ok(w.lambda_adv * adv + w.lambda_p * lp_loss(preds, targets, w.norm)?)
}

/// `½d²` for similar pairs, `½·max(0, margin − d)²` otherwise, with
/// `d = ‖e1 − e2‖₂`.
pub fn contrastive(e1: &[f64], e2: &[f64], similar: bool, margin: f64) -> Result<f64> {
    lengths_match("contrastive", e1.len(), e2.len())?;
    if margin <= 0.0 {
        return Err(Error::invalid(
            "contrastive",
            format!("margin {margin} must be positive"),
        ));
    }
    let d2: f64 = e1.iter().zip(e2).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(if similar {
        0.5 * d2
    } else {
        let gap = (margin - d2.sqrt()).max(0.0);
        0.5 * gap * gap
    })
}

// ---- tape versions ---------------------------------------------------------

/// Sum of `bce(score, target)` over every element of `scores`.
pub fn bce_sum(tape: &mut Tape, scores: Var, target: f64) -> Var {
    let y = tape.clamp(scores, BCE_EPS, 1.0 - BCE_EPS);
    let p = if target >= 0.5 { y } else { tape.affine(y, -1.0, 1.0) };
    let l = tape.log(p);
    let s = tape.sum(l);
    tape.scale(s, -1.0)
}

pub fn lp_loss_tape(tape: &mut Tape, preds: &[Var], targets: &[Var], norm: LpNorm) -> Result<Var> {
    lengths_match("lp_loss", preds.len(), targets.len())?;
    let mut total: Option<Var> = None;
    for (&p, &t) in preds.iter().zip(targets) {
        if tape.shape(p) != tape.shape(t) {
            return Err(Error::shape("lp_loss", tape.shape(p), tape.shape(t)));
        }
        let d = tape.sub(t, p)?;
        let e = match norm {
            LpNorm::L1 => tape.abs(d),
            LpNorm::L2 => tape.square(d),
        };
        let s = tape.sum(e);
        total = Some(match total {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
    }
    total.ok_or(Error::EmptySequence("lp_loss"))
}

/// Batched discriminator loss. `real[t]` and `fake[t]` hold the scores of all
/// sequences for prefix length `t + 1`. Returns the summed loss and the number
/// of BCE terms per sequence.
pub fn d_loss_context_tape(tape: &mut Tape, real: &[Var], fake: &[Var]) -> Result<(Var, usize)> {
    lengths_match("d_loss_context", real.len(), fake.len())?;
    let mut total: Option<Var> = None;
    let mut terms = 0;
    for (&r, &f) in real.iter().zip(fake) {
        for (scores, target) in [(r, 1.0), (f, 0.0)] {
            let l = bce_sum(tape, scores, target);
            terms += 1;
            total = Some(match total {
                Some(acc) => tape.add(acc, l)?,
                None => l,
            });
        }
    }
    let total = total.ok_or(Error::EmptySequence("d_loss_context"))?;
    Ok((total, terms))
}

/// Batched generator loss; the adversarial branch is skipped entirely when
/// `lambda_adv` is zero.
pub fn g_loss_tape(tape: &mut Tape, fake: &[Var], preds: &[Var], targets: &[Var], w: &GanLossWeights) -> Result<Var> {
    let lp = lp_loss_tape(tape, preds, targets, w.norm)?;
    let lp = tape.scale(lp, w.lambda_p);
    if w.lambda_adv == 0.0 {
        return Ok(lp);
    }
    lengths_match("g_loss", fake.len(), preds.len())?;
    let mut adv: Option<Var> = None;
    for &f in fake {
        let l = bce_sum(tape, f, 1.0);
        adv = Some(match adv {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let adv = adv.ok_or(Error::EmptySequence("g_loss"))?;
    let adv = tape.scale(adv, w.lambda_adv);
    tape.add(adv, lp)
}

/// Batched contrastive loss over rows of `e1`/`e2` (`[B, D]`); `similar`
/// holds one flag per row. Returns the summed loss.
pub fn contrastive_tape(tape: &mut Tape, e1: Var, e2: Var, similar: &[bool], margin: f64) -> Result<Var> {
    let d = tape.sub(e1, e2)?;
    let sq = tape.square(d);
    let d2 = tape.sum_rows(sq)?;
    if tape.value(d2).len() != similar.len() {
        return Err(Error::shape("contrastive", &[tape.value(d2).len()], &[similar.len()]));
    }
    let pos_mask: Vec<f64> = similar.iter().map(|&s| if s { 0.5 } else { 0.0 }).collect();
    let neg_mask: Vec<f64> = similar.iter().map(|&s| if s { 0.0 } else { 0.5 }).collect();
    let n = similar.len();
    let pm = tape.constant(&[n], pos_mask)?;
    let nm = tape.constant(&[n], neg_mask)?;
    let pos = tape.mul(d2, pm)?;
    // tiny offset keeps sqrt differentiable at coincident pairs
    let shifted = tape.affine(d2, 1.0, 1e-12);
    let dist = tape.sqrt(shifted);
    let gap = tape.affine(dist, -1.0, margin);
    let hinge = tape.relu(gap);
    let hinge_sq = tape.square(hinge);
    let neg = tape.mul(hinge_sq, nm)?;
    let both = tape.add(pos, neg)?;
    Ok(tape.sum(both))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    #[test]
    fn bce_reference_points() {
        assert!((bce(0.5, 1.0) - LN2).abs() < 1e-15);
        assert!(bce(1.0 - BCE_EPS, 1.0) < 1e-6);
        assert!((bce(0.9, 0.0) - std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn lp_reference_points() {
        let preds = vec![vec![0.3; 1024]; 4];
        let targets: Vec<Vec<f64>> = preds.iter().map(|p| p.iter().map(|v| v + 0.1).collect()).collect();
        assert_eq!(lp_loss(&preds, &preds, LpNorm::L1).unwrap(), 0.0);
        assert!((lp_loss(&preds, &targets, LpNorm::L1).unwrap() - 409.6).abs() < 1e-9);
        assert!((lp_loss(&preds, &targets, LpNorm::L2).unwrap() - 40.96).abs() < 1e-9);
        assert!(lp_loss(&preds[..3], &targets, LpNorm::L1).is_err());
    }

    #[test]
    fn discriminator_loss_reference_points() {
        let perfect = d_loss_context(&[1.0 - BCE_EPS; 4], &[BCE_EPS; 4]).unwrap();
        assert!(perfect < 1e-5);
        let uninformed = d_loss_context(&[0.5; 4], &[0.5; 4]).unwrap();
        assert!((uninformed - 8.0 * LN2).abs() < 1e-12);
        let single = d_loss_context(&[0.8], &[0.3]).unwrap();
        assert!((single - (-(0.8f64).ln() - (0.7f64).ln())).abs() < 1e-12);
        assert!((single - 0.579_818_495_252_942).abs() < 1e-12);
        assert!(d_loss_context(&[0.5; 4], &[0.5; 3]).is_err());
    }

    #[test]
    fn term_count_is_twice_the_prefixes() {
        for t in 2..8 {
            let terms = d_loss_context_terms(&vec![0.4; t - 1], &vec![0.6; t - 1]).unwrap();
            assert_eq!(terms.len(), 2 * (t - 1));
        }
    }

    #[test]
    fn generator_loss_reference_points() {
        let w = GanLossWeights::new(0.05, 1.0, LpNorm::L1).unwrap();
        let x = vec![vec![0.2, 0.4]; 4];
        let fooled = g_loss(&[1.0 - BCE_EPS; 4], &x, &x, &w).unwrap();
        assert!(fooled < 1e-6);
        let half = g_loss(&[0.5; 4], &x, &x, &w).unwrap();
        assert!((half - 0.05 * 4.0 * LN2).abs() < 1e-12);
        assert!((half - 0.138_629_436_111_989).abs() < 1e-12);
        let y = vec![vec![0.7, 0.1]; 4];
        let plain = GanLossWeights::new(0.0, 1.0, LpNorm::L1).unwrap();
        assert_eq!(
            g_loss(&[0.3; 4], &x, &y, &plain).unwrap(),
            lp_loss(&x, &y, LpNorm::L1).unwrap()
        );
    }

    #[test]
    fn weights_validation() {
        assert!(GanLossWeights::new(0.0, 0.0, LpNorm::L1).is_err());
        assert!(GanLossWeights::new(-0.1, 1.0, LpNorm::L1).is_err());
        assert!(LpNorm::from_p(3).is_err());
    }

    #[test]
    fn contrastive_reference_points() {
        let a = [0.3, -0.2, 0.9];
        assert_eq!(contrastive(&a, &a, true, 1.0).unwrap(), 0.0);
        assert_eq!(contrastive(&[0.0, 0.0], &[3.0, 4.0], false, 1.0).unwrap(), 0.0);
        let v = contrastive(&[0.0, 0.0], &[0.4, 0.0], false, 1.0).unwrap();
        assert!((v - 0.18).abs() < 1e-12);
        assert!(contrastive(&[0.0], &[0.0, 1.0], true, 1.0).is_err());
    }

    #[test]
    fn tape_versions_agree_with_scalar_versions() {
        let mut tape = Tape::new();
        let real = tape.leaf(&Tensor::vector(vec![0.8, 0.6]));
        let fake = tape.leaf(&Tensor::vector(vec![0.3, 0.45]));
        let (l, terms) = d_loss_context_tape(&mut tape, &[real, real], &[fake, fake]).unwrap();
        assert_eq!(terms, 4);
        let scalar = 2.0
            * (d_loss_context(&[0.8, 0.8], &[0.3, 0.3]).unwrap() + d_loss_context(&[0.6, 0.6], &[0.45, 0.45]).unwrap())
            / 2.0;
        assert!((tape.scalar(l) - scalar).abs() < 1e-12);

        let e1 = tape.leaf(&Tensor::matrix(2, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap());
        let e2 = tape.leaf(&Tensor::matrix(2, 2, vec![0.4, 0.0, 1.0, 1.5]).unwrap());
        let c = contrastive_tape(&mut tape, e1, e2, &[false, true], 1.0).unwrap();
        let expect = contrastive(&[0.0, 0.0], &[0.4, 0.0], false, 1.0).unwrap()
            + contrastive(&[1.0, 1.0], &[1.0, 1.5], true, 1.0).unwrap();
        assert!((tape.scalar(c) - expect).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn bce_nonnegative_and_monotone(a in 1e-6f64..0.999_999, b in 1e-6f64..0.999_999) {
            prop_assert!(bce(a, 1.0) >= 0.0 && bce(a, 0.0) >= 0.0);
            prop_assume!((a - b).abs() > 1e-9);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assert!(bce(lo, 1.0) > bce(hi, 1.0));
            prop_assert!(bce(lo, 0.0) < bce(hi, 0.0));
        }

        #[test]
        fn contrastive_is_symmetric(
            a in proptest::collection::vec(-2.0f64..2.0, 4),
            b in proptest::collection::vec(-2.0f64..2.0, 4),
            similar: bool,
        ) {
            prop_assert_eq!(
                contrastive(&a, &b, similar, 1.0).unwrap(),
                contrastive(&b, &a, similar, 1.0).unwrap()
            );
        }
    }
}
