//! Federated OLTR with evolution strategies.
//!
//! Clients evaluate Gaussian perturbations `φ ± σz` of the server mean on
//! live queries and report a seed plus a (possibly privatized) metric. The
//! server regenerates each perturbation from its seed and ascends the
//! estimate `1/(Nσ²) Σ f̂ (θ_s − φ)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::clickmodels::{ClickModel, ClickVector};
use crate::error::{check_len, FoltrError, Result};
use crate::metrics::{max_rr, rank_by_scores};
use crate::rankers::{ModelDelta, RankerParams};
use crate::scalar::{pairwise_sum, Scalar};
use crate::seed::stream;

pub const DEFAULT_SIGMA: f64 = 0.05;
pub const DEFAULT_ES_LEARNING_RATE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct EsState<S> {
    pub mean: RankerParams<S>,
    pub sigma: S,
}

impl<S: Scalar> EsState<S> {
    pub fn new(mean: RankerParams<S>, sigma: S) -> Result<Self> {
        if !(sigma > S::zero()) || !sigma.is_finite() {
            return Err(FoltrError::Config(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { mean, sigma })
    }
}

/// Antithetic sign of a perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn factor<S: Scalar>(self) -> S {
        match self {
            Sign::Plus => S::one(),
            Sign::Minus => -S::one(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsMessage {
    pub seed: u64,
    pub metric: f64,
    pub sign: Sign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrivatizationSpec {
    p: f64,
    grid: Vec<f64>,
}

impl PrivatizationSpec {
    pub fn new(p: f64, grid: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 {
            return Err(FoltrError::Config("metric grid needs at least two values".into()));
        }
        for (i, a) in grid.iter().enumerate() {
            if !a.is_finite() || grid[..i].contains(a) {
                return Err(FoltrError::Config(format!("metric grid values must be finite and distinct, got {a}")));
            }
        }
        let n = grid.len() as f64;
        if !(p > 1.0 / n && p <= 1.0) {
            return Err(FoltrError::Domain(format!("p must lie in (1/{n}, 1], got {p}")));
        }
        Ok(Self { p, grid })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }
}

/// The eleven reciprocal-rank values reachable on a ten-result page:
/// `{0, 1/10, 1/9, ..., 1/2, 1}`.
pub fn maxrr_grid() -> Vec<f64> {
    std::iter::once(0.0)
        .chain((1..=10).rev().map(|r| 1.0 / r as f64))
        .collect()
}

/// `θ_s = φ + sign·σ·z`, with `z` drawn from a standard normal stream
/// seeded by `seed`.
pub fn sample_perturbed<S: Scalar>(state: &EsState<S>, seed: u64, sign: Sign) -> RankerParams<S> {
    let mut rng = stream(seed, &[]);
    let step = sign.factor::<S>() * state.sigma;
    let mut out = state.mean.clone();
    for v in out.values_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = *v + step * S::lit(z);
    }
    out
}

/// Returns `true_value` with probability `p`, otherwise one of the other
/// grid values chosen uniformly.
pub fn privatize<R: Rng + ?Sized>(spec: &PrivatizationSpec, true_value: f64, rng: &mut R) -> Result<f64> {
    let idx = spec
        .grid
        .iter()
        .position(|&g| g == true_value)
        .ok_or_else(|| FoltrError::Domain(format!("metric value {true_value} is not on the grid")))?;
    if rng.random::<f64>() < spec.p {
        return Ok(true_value);
    }
    let mut other = rng.random_range(0..spec.grid.len() - 1);
    if other >= idx {
        other += 1;
    }
    Ok(spec.grid[other])
}

/// `ln(p(n−1)/(1−p))`; `+∞` when `p = 1`.
pub fn epsilon_bound(p: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(FoltrError::Domain(format!("grid size must be at least 2, got {n}")));
    }
    let nf = n as f64;
    if !(p > 1.0 / nf && p <= 1.0) {
        return Err(FoltrError::Domain(format!("p must lie in (1/{n}, 1], got {p}")));
    }
    if p == 1.0 {
        return Ok(f64::INFINITY);
    }
    Ok((p * (nf - 1.0) / (1.0 - p)).ln())
}

/// `1/(Nσ²) Σ f̂_i (θ_{s_i} − φ)`, summed pairwise per coordinate.
pub fn es_server_gradient<S: Scalar>(messages: &[EsMessage], state: &EsState<S>) -> Result<ModelDelta<S>> {
    if messages.is_empty() {
        return Err(FoltrError::Empty("evolution strategy messages"));
    }
    let dim = state.mean.len();
    let mut terms = vec![Vec::with_capacity(messages.len()); dim];
    for msg in messages {
        let theta = sample_perturbed(state, msg.seed, msg.sign);
        let f = S::lit(msg.metric);
        for ((col, &t), &m) in terms.iter_mut().zip(theta.values()).zip(state.mean.values()) {
            col.push(f * (t - m));
        }
    }
    let denom = S::lit(messages.len() as f64) * state.sigma * state.sigma;
    let values = terms.iter().map(|col| pairwise_sum(col) / denom).collect();
    ModelDelta::from_values(state.mean.arch(), values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ServerOptimizer {
    /// Plain gradient ascent.
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl ServerOptimizer {
    pub fn sgd() -> Self {
        ServerOptimizer::Sgd {
            lr: DEFAULT_ES_LEARNING_RATE,
        }
    }

    pub fn adam(lr: f64) -> Self {
        ServerOptimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer with its running moment estimates.
#[derive(Debug, Clone)]
pub struct OptimizerState<S> {
    kind: ServerOptimizer,
    m: Vec<S>,
    v: Vec<S>,
    t: i32,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(kind: ServerOptimizer, dim: usize) -> Self {
        Self {
            kind,
            m: vec![S::zero(); dim],
            v: vec![S::zero(); dim],
            t: 0,
        }
    }

    /// Moves `params` along the ascent direction `grad`.
    pub fn step(&mut self, params: &RankerParams<S>, grad: &ModelDelta<S>) -> Result<RankerParams<S>> {
        params.check_same_shape(grad)?;
        match self.kind {
            ServerOptimizer::Sgd { lr } => params.apply_update(grad, S::lit(lr)),
            ServerOptimizer::Adam { lr, beta1, beta2, eps } => {
                check_len(self.m.len(), grad.len())?;
                self.t += 1;
                let (b1, b2) = (S::lit(beta1), S::lit(beta2));
                let c1 = S::one() - b1.powi(self.t);
                let c2 = S::one() - b2.powi(self.t);
                let mut out = params.clone();
                for (((p, &g), m), v) in out
                    .values_mut()
                    .iter_mut()
                    .zip(grad.values())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = b1 * *m + (S::one() - b1) * g;
                    *v = b2 * *v + (S::one() - b2) * g * g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *p = *p + S::lit(lr) * m_hat / (v_hat.sqrt() + S::lit(eps));
                }
                Ok(out)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct EsInteraction {
    /// Displayed candidate positions, best first.
    pub serp: Vec<usize>,
    pub clicks: ClickVector,
    pub max_rr: f64,
}

/// Shows the deterministic top-`serp_len` ranking of `params` and records
/// the simulated clicks.
pub fn es_interaction<S: Scalar, R: Rng + ?Sized>(
    params: &RankerParams<S>,
    candidates: &[&[S]],
    grades: &[u8],
    click_model: &ClickModel,
    serp_len: usize,
    rng: &mut R,
) -> Result<EsInteraction> {
    check_len(candidates.len(), grades.len())?;
    let scores = params.scores(candidates)?;
    let mut serp = rank_by_scores(&scores);
    serp.truncate(serp_len);
    let shown: Vec<u8> = serp.iter().map(|&d| grades[d]).collect();
    let clicks = click_model.simulate(&shown, rng)?;
    let rr = max_rr(&clicks);
    Ok(EsInteraction {
        serp,
        clicks,
        max_rr: rr,
    })
}
