//! ε-differential privacy for returned client models: norm clipping to
//! Δ/2 followed by per-client Gamma noise whose sum across `n` clients is
//! Laplace(0, Δ/ε). The Laplace mean is fixed at 0.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{FoltrError, Result};
use crate::rankers::RankerParams;
use crate::scalar::Scalar;

/// Privacy budgets with their paired sensitivities, as used in the
/// reported experiments.
pub const EPSILON_SENSITIVITY_PAIRS: [(f64, f64); 4] = [(1.2, 3.0), (2.3, 3.0), (4.5, 5.0), (10.0, 5.0)];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpConfig {
    pub epsilon: f64,
    pub sensitivity: f64,
    pub num_clients: usize,
}

impl DpConfig {
    pub fn new(epsilon: f64, sensitivity: f64, num_clients: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(FoltrError::Config(format!("epsilon must be positive, got {epsilon}")));
        }
        if !(sensitivity > 0.0 && sensitivity.is_finite()) {
            return Err(FoltrError::Config(format!("sensitivity must be positive, got {sensitivity}")));
        }
        if num_clients == 0 {
            return Err(FoltrError::Config("num_clients must be at least 1".into()));
        }
        Ok(Self {
            epsilon,
            sensitivity,
            num_clients,
        })
    }

    /// Laplace scale λ = Δ/ε.
    pub fn scale(&self) -> f64 {
        self.sensitivity / self.epsilon
    }

    /// Gamma shape 1/n.
    pub fn shape(&self) -> f64 {
        1.0 / self.num_clients as f64
    }
}

/// θ · min(1, Δ / (2‖θ‖)). A zero vector is returned unchanged.
pub fn clip_weights<S: Scalar>(params: &RankerParams<S>, sensitivity: S) -> RankerParams<S> {
    let norm = params.norm();
    if norm == S::zero() {
        return params.clone();
    }
    let factor = S::one().min(sensitivity / (S::lit(2.0) * norm));
    if factor == S::one() {
        params.clone()
    } else {
        params.scaled(factor)
    }
}

/// Gamma(shape, scale) sampler. Shapes ≤ 1 use the Ahrens-Dieter GS
/// rejection method; larger shapes use Marsaglia-Tsang squeeze rejection.
pub fn sample_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    assert!(shape > 0.0 && scale > 0.0, "gamma parameters must be positive");
    if shape <= 1.0 {
        let b = (std::f64::consts::E + shape) / std::f64::consts::E;
        loop {
            let p = b * rng.random::<f64>();
            let u: f64 = rng.random();
            if p <= 1.0 {
                let x = p.powf(1.0 / shape);
                if u <= (-x).exp() {
                    return x * scale;
                }
            } else {
                let x = -((b - p) / shape).ln();
                if u <= x.powf(shape - 1.0) {
                    return x * scale;
                }
            }
        }
    } else {
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let z: f64 = StandardNormal.sample(rng);
            let v = (1.0 + c * z).powi(3);
            if v <= 0.0 {
                continue;
            }
            let u: f64 = rng.random();
            if u < 1.0 - 0.0331 * z.powi(4) || u.ln() < 0.5 * z * z + d * (1.0 - v + v.ln()) {
                return d * v * scale;
            }
        }
    }
}

/// Independent Gamma(1/n, λ) draws γ and γ′ for every coordinate.
pub fn gamma_noise_pair<R: Rng + ?Sized>(config: &DpConfig, dim: usize, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let (shape, scale) = (config.shape(), config.scale());
    let gamma = (0..dim).map(|_| sample_gamma(shape, scale, rng)).collect();
    let gamma_prime = (0..dim).map(|_| sample_gamma(shape, scale, rng)).collect();
    (gamma, gamma_prime)
}

/// One client's share of Laplace noise for a single coordinate.
pub fn noise_share<R: Rng + ?Sized>(config: &DpConfig, rng: &mut R) -> f64 {
    let (shape, scale) = (config.shape(), config.scale());
    sample_gamma(shape, scale, rng) - sample_gamma(shape, scale, rng)
}

/// Clip to Δ/2 and add γ − γ′ to every coordinate.
pub fn privatize_update<S: Scalar, R: Rng + ?Sized>(params: &RankerParams<S>, config: &DpConfig, rng: &mut R) -> RankerParams<S> {
    let mut clipped = clip_weights(params, S::lit(config.sensitivity));
    let (g, g_prime) = gamma_noise_pair(config, clipped.len(), rng);
    for ((v, a), b) in clipped.values_mut().iter_mut().zip(g).zip(g_prime) {
        *v = *v + S::lit(a - b);
    }
    clipped
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rankers::Architecture;
    use crate::seed::stream;

    fn params(v: &[f64]) -> RankerParams<f64> {
        RankerParams::from_values(Architecture::Linear { features: v.len() }, v.to_vec()).unwrap()
    }

    #[test]
    fn small_norm_untouched() {
        let p = params(&[0.3, 0.4]);
        assert_eq!(clip_weights(&p, 1.0), p);
    }

    #[test]
    fn norm_equal_to_sensitivity_halves() {
        let p = params(&[3.0, 4.0]);
        let c = clip_weights(&p, 5.0);
        assert!((c.norm() - 2.5).abs() < 1e-12);
        assert_eq!(c.values(), &[1.5, 2.0]);
    }

    #[test]
    fn zero_vector_passes_through() {
        let p = params(&[0.0, 0.0]);
        assert_eq!(clip_weights(&p, 1.0), p);
    }

    #[test]
    fn gamma_sampler_moments() {
        let mut rng = stream(5, &[]);
        for (shape, scale) in [(0.1, 2.0), (0.5, 1.0), (1.0, 1.5), (3.5, 0.5)] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| sample_gamma(shape, scale, &mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            let (m, v) = (shape * scale, shape * scale * scale);
            assert!((mean - m).abs() < 5.0 * (v / n as f64).sqrt(), "mean {mean} vs {m}");
            assert!((var - v).abs() / v < 0.05, "var {var} vs {v}");
        }
    }

    #[test]
    fn huge_epsilon_leaves_clipped_params() {
        let cfg = DpConfig::new(1e12, 1.0, 3).unwrap();
        let p = params(&[3.0, 4.0]);
        let out = privatize_update(&p, &cfg, &mut stream(1, &[]));
        let clipped = clip_weights(&p, 1.0);
        for (a, b) in out.values().iter().zip(clipped.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn noise_is_fresh_per_draw() {
        let cfg = DpConfig::new(1.2, 3.0, 10).unwrap();
        let p = params(&[0.1, 0.2, 0.3]);
        let mut rng = stream(9, &[]);
        assert_ne!(privatize_update(&p, &cfg, &mut rng), privatize_update(&p, &cfg, &mut rng));
    }

    #[test]
    fn config_validation() {
        assert!(DpConfig::new(0.0, 1.0, 1).is_err());
        assert!(DpConfig::new(1.0, -1.0, 1).is_err());
        assert!(DpConfig::new(1.0, 1.0, 0).is_err());
        assert!((DpConfig::new(2.0, 3.0, 4).unwrap().scale() - 1.5).abs() < 1e-15);
    }
}
