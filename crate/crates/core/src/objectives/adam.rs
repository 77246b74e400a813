use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over every tensor of one [`ParamSet`].
///
/// Moments are kept per tensor in set order; the step counter is shared.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Adam {
    pub fn new(cfg: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients stored on `params`. Tensors
    /// without a gradient are treated as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape("adam_step", &[params.len()], &[self.m.len()]));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, m), v) in params.tensors_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.len() != m.len() {
                return Err(Error::shape("adam_step", p.shape(), &[m.len()]));
            }
            let grad = p.grad().map(|g| g.to_vec());
            let data = p.data_mut();
            for i in 0..data.len() {
                let g = grad.as_ref().map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * g;
                v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                data[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Moment tensors named after `params` (`m.<name>`, `v.<name>`), for
    /// persistence.
    pub fn export(&self, params: &ParamSet) -> Vec<(String, Tensor)> {
        let mut out = Vec::with_capacity(2 * self.m.len() + 1);
        for ((name, p), (m, v)) in params.iter().zip(self.m.iter().zip(&self.v)) {
            out.push((
                format!("m.{name}"),
                Tensor::new(p.shape(), m.clone()).expect("moment shape"),
            ));
            out.push((
                format!("v.{name}"),
                Tensor::new(p.shape(), v.clone()).expect("moment shape"),
            ));
        }
        out.push(("t".to_string(), Tensor::vector(vec![self.t as f64])));
        out
    }

    pub fn import(cfg: AdamConfig, params: &ParamSet, lookup: impl Fn(&str) -> Option<Tensor>) -> Result<Self> {
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (name, p) in params.iter() {
            for (prefix, dst) in [("m", &mut m), ("v", &mut v)] {
                let key = format!("{prefix}.{name}");
                let t = lookup(&key).ok_or_else(|| Error::MissingParameter(key.clone()))?;
                if t.shape() != p.shape() {
                    return Err(Error::shape("adam import", t.shape(), p.shape()));
                }
                dst.push(t.into_data());
            }
        }
        let t = lookup("t").ok_or_else(|| Error::MissingParameter("t".into()))?;
        Ok(Self {
            cfg,
            m,
            v,
            t: t.value() as u64,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(value: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        ps.add("x", Tensor::vector(vec![value, -value]));
        ps
    }

    fn set_grad(ps: &mut ParamSet, g: &[f64]) {
        let t = ps.tensors_mut().next().unwrap();
        t.zero_grad();
        t.accumulate_grad(g).unwrap();
    }

    #[test]
    fn first_step_moves_by_lr_against_gradient_sign() {
        let mut ps = single(1.0);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.01,
                ..AdamConfig::default()
            },
            &ps,
        );
        set_grad(&mut ps, &[3.0, -0.002]);
        adam.step(&mut ps).unwrap();
        let d = ps.iter().next().unwrap().1.data().to_vec();
        assert!((d[0] - (1.0 - 0.01)).abs() < 1e-9);
        assert!((d[1] - (-1.0 + 0.01)).abs() < 1e-6);
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut ps = single(0.5);
        let mut adam = Adam::new(AdamConfig::default(), &ps);
        set_grad(&mut ps, &[0.0, 0.0]);
        adam.step(&mut ps).unwrap();
        assert_eq!(ps.iter().next().unwrap().1.data(), &[0.5, -0.5]);
    }

    #[test]
    fn two_constant_steps_match_unrolled_recurrence() {
        let (lr, b1, b2, eps) = (0.1, 0.9, 0.999, 1e-8);
        let mut ps = single(0.0);
        let mut adam = Adam::new(
            AdamConfig {
                lr,
                beta1: b1,
                beta2: b2,
                eps,
            },
            &ps,
        );
        for _ in 0..2 {
            set_grad(&mut ps, &[1.0, 1.0]);
            adam.step(&mut ps).unwrap();
        }
        // independent unrolling
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=2 {
            m = b1 * m + (1.0 - b1);
            v = b2 * v + (1.0 - b2);
            x -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let got = ps.iter().next().unwrap().1.data()[0];
        assert!((got - x).abs() < 1e-15);
        assert!((got + 0.2).abs() < 1e-6);
    }

    #[test]
    fn export_import_round_trip() {
        let mut ps = single(0.5);
        let mut adam = Adam::new(AdamConfig::default(), &ps);
        set_grad(&mut ps, &[0.3, 0.1]);
        adam.step(&mut ps).unwrap();
        let saved = adam.export(&ps);
        let back = Adam::import(AdamConfig::default(), &ps, |k| {
            saved.iter().find(|(n, _)| n == k).map(|(_, t)| t.clone())
        })
        .unwrap();
        assert_eq!(back, adam);
    }
}
