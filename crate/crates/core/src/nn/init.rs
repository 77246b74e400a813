use rand::Rng;

use crate::tensor::Tensor;

/// Weights drawn from U(-s, s) with `s = sqrt(6 / (fan_in + fan_out))`.
pub fn uniform_fan(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-s..s)).collect();
    Tensor::new(shape, data).expect("shape product matches data length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn deterministic_and_bounded() {
        let a = uniform_fan(&[30, 20], 20, 30, &mut SeededRng::new(5));
        let b = uniform_fan(&[30, 20], 20, 30, &mut SeededRng::new(5));
        assert_eq!(a, b);
        let s = (6.0f64 / 50.0).sqrt();
        assert!(a.data().iter().all(|w| w.abs() <= s));
    }

    #[test]
    fn sample_mean_near_zero() {
        let t = uniform_fan(&[100, 100], 100, 100, &mut SeededRng::new(11));
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        // U(-s, s) has standard deviation s / sqrt(3).
        let s = (6.0f64 / 200.0).sqrt();
        let stderr = s / 3f64.sqrt() / n.sqrt();
        assert!(mean.abs() <= 3.0 * stderr, "mean {mean} stderr {stderr}");
    }
}
