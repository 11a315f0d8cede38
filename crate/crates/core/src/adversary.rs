//! Untargeted poisoning: flipped-click data poisoning, LIE, and Fang's
//! attacks against Krum-family and coordinate-wise order-statistic rules.
//!
//! The first `m` client ids are the colluding attackers. Model attacks run
//! after every client has produced its before-attack update and return the
//! `m` replacement updates; benign updates are only ever read.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::clickmodels::{CcmKind, CcmSpec};
use crate::error::{FoltrError, Result};
use crate::rankers::RankerParams;
use crate::robustagg::krum_select;
use crate::scalar::Scalar;

pub const DEFAULT_FANG_LAMBDA_INIT: f64 = 10.0;
pub const DEFAULT_FANG_LAMBDA_THRESHOLD: f64 = 1e-5;
pub const DEFAULT_FANG_RANGE_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttackKind {
    DataPoison,
    Lie,
    FangKrum,
    FangTrimmed,
}

impl AttackKind {
    pub const ALL: [AttackKind; 4] = [Self::DataPoison, Self::Lie, Self::FangKrum, Self::FangTrimmed];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::DataPoison => "data_poison",
            AttackKind::Lie => "lie",
            AttackKind::FangKrum => "fang_krum",
            AttackKind::FangTrimmed => "fang_trimmed",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn is_model_attack(self) -> bool {
        !matches!(self, AttackKind::DataPoison)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Knowledge {
    /// Only the colluders' own before-attack updates.
    Partial,
    /// Every client's before-attack update.
    Full,
}

impl Knowledge {
    pub fn name(self) -> &'static str {
        match self {
            Knowledge::Partial => "partial",
            Knowledge::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "partial" => Some(Knowledge::Partial),
            "full" => Some(Knowledge::Full),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub attacker_fraction: f64,
    pub knowledge: Knowledge,
    /// LIE shift; `None` uses [`lie_z_max`] for the run's client counts.
    pub lie_z: Option<f64>,
    pub fang_lambda_init: f64,
    pub fang_lambda_threshold: f64,
    pub fang_range_factor: f64,
}

impl AttackConfig {
    pub fn new(kind: AttackKind, attacker_fraction: f64) -> Result<Self> {
        let cfg = Self {
            kind,
            attacker_fraction,
            knowledge: Knowledge::Partial,
            lie_z: None,
            fang_lambda_init: DEFAULT_FANG_LAMBDA_INIT,
            fang_lambda_threshold: DEFAULT_FANG_LAMBDA_THRESHOLD,
            fang_range_factor: DEFAULT_FANG_RANGE_FACTOR,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.attacker_fraction) {
            return Err(FoltrError::Config(format!(
                "attacker fraction must lie in [0, 0.5), got {}",
                self.attacker_fraction
            )));
        }
        if !(self.fang_lambda_threshold > 0.0 && self.fang_lambda_init >= self.fang_lambda_threshold) {
            return Err(FoltrError::Config("fang lambda must satisfy 0 < threshold <= init".into()));
        }
        if !(self.fang_range_factor > 1.0) {
            return Err(FoltrError::Config("fang range factor must exceed 1".into()));
        }
        if let Some(z) = self.lie_z {
            if !z.is_finite() {
                return Err(FoltrError::Config("lie z must be finite".into()));
            }
        }
        Ok(())
    }

    /// `round(fraction · n)` malicious clients.
    pub fn num_attackers(&self, num_clients: usize) -> usize {
        (self.attacker_fraction * num_clients as f64).round() as usize
    }
}

/// The flipped-click model used by data-poisoning clients.
pub fn data_poison_click_spec(max_grade: u8) -> Result<CcmSpec> {
    CcmSpec::builtin(CcmKind::Poison, max_grade)
}

/// Largest LIE shift that keeps the crafted update inside the benign
/// majority: `Φ⁻¹((n − s)/n)` with `s = ⌊n/2 + 1⌋ − m`.
pub fn lie_z_max(num_clients: usize, num_attackers: usize) -> f64 {
    let n = num_clients as f64;
    let s = (num_clients / 2 + 1) as f64 - num_attackers as f64;
    let q = ((n - s) / n).clamp(1e-12, 1.0 - 1e-12);
    Normal::standard().inverse_cdf(q)
}

/// What a model attack may read: the before-attack global model, the
/// colluders' own updates and, under full knowledge, the remaining ones.
#[derive(Debug, Clone, Copy)]
pub struct AttackKnowledge<'a, S> {
    global: &'a RankerParams<S>,
    colluders: &'a [RankerParams<S>],
    others: Option<&'a [RankerParams<S>]>,
    num_clients: usize,
}

impl<'a, S: Scalar> AttackKnowledge<'a, S> {
    /// Splits `updates` into the first `m` colluders and the rest, exposing
    /// the rest only under full knowledge.
    pub fn new(
        knowledge: Knowledge,
        global: &'a RankerParams<S>,
        updates: &'a [RankerParams<S>],
        num_attackers: usize,
    ) -> Result<Self> {
        if num_attackers == 0 || num_attackers > updates.len() {
            return Err(FoltrError::Config(format!(
                "need between 1 and {} attackers, got {num_attackers}",
                updates.len()
            )));
        }
        for u in updates {
            global.check_same_shape(u)?;
        }
        let (colluders, rest) = updates.split_at(num_attackers);
        Ok(Self {
            global,
            colluders,
            others: matches!(knowledge, Knowledge::Full).then_some(rest),
            num_clients: updates.len(),
        })
    }

    pub fn global(&self) -> &RankerParams<S> {
        self.global
    }

    pub fn colluders(&self) -> &[RankerParams<S>] {
        self.colluders
    }

    pub fn num_attackers(&self) -> usize {
        self.colluders.len()
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    /// Every update the attacker is allowed to read.
    pub fn visible(&self) -> Vec<&RankerParams<S>> {
        self.colluders.iter().chain(self.others.unwrap_or(&[])).collect()
    }
}

fn coordinate_mean<S: Scalar>(updates: &[&RankerParams<S>]) -> Vec<S> {
    let dim = updates[0].len();
    let n = S::lit(updates.len() as f64);
    (0..dim)
        .map(|j| updates.iter().fold(S::zero(), |acc, u| acc + u.values()[j]) / n)
        .collect()
}

fn sign<S: Scalar>(x: S) -> S {
    if x > S::zero() {
        S::one()
    } else if x < S::zero() {
        -S::one()
    } else {
        S::zero()
    }
}

/// Reversed deviation `s = −sign(μ − θ_g)` over the visible updates.
pub fn reversed_direction<S: Scalar>(knowledge: &AttackKnowledge<'_, S>) -> Vec<S> {
    let mu = coordinate_mean(&knowledge.visible());
    mu.iter()
        .zip(knowledge.global.values())
        .map(|(&m, &g)| -sign(m - g))
        .collect()
}

/// `μ − zσ` per coordinate over the colluders' before-attack updates, with
/// σ the population standard deviation.
pub fn lie_attack<S: Scalar>(colluders: &[RankerParams<S>], z: S) -> Result<RankerParams<S>> {
    let first = colluders.first().ok_or(FoltrError::Empty("colluding updates"))?;
    for u in colluders {
        first.check_same_shape(u)?;
    }
    let refs: Vec<&RankerParams<S>> = colluders.iter().collect();
    let mu = coordinate_mean(&refs);
    let n = S::lit(colluders.len() as f64);
    let values = mu
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let var = colluders
                .iter()
                .fold(S::zero(), |acc, u| acc + (u.values()[j] - m) * (u.values()[j] - m))
                / n;
            m - z * var.sqrt()
        })
        .collect();
    RankerParams::from_values(first.arch(), values)
}

/// Outcome of the λ search against a Krum-style rule.
#[derive(Debug, Clone, PartialEq)]
pub struct FangKrumOutcome<S> {
    pub update: RankerParams<S>,
    pub lambda: f64,
    /// Whether the probe selected the crafted update for the returned λ.
    pub selected: bool,
}

/// Crafts `θ_g + λs`, halving λ from its initial value until `probe`
/// selects one of the `m` crafted copies or λ falls below the threshold.
///
/// The probe receives `n` candidate updates with the crafted copies in the
/// first `m` slots and returns the selected index. The remaining slots hold
/// the other clients' updates under full knowledge, or the colluders'
/// before-attack updates repeated cyclically under partial knowledge.
pub fn fang_krum_attack<S: Scalar>(
    knowledge: &AttackKnowledge<'_, S>,
    config: &AttackConfig,
    mut probe: impl FnMut(&[RankerParams<S>]) -> Result<usize>,
) -> Result<FangKrumOutcome<S>> {
    let m = knowledge.num_attackers();
    let n = knowledge.num_clients();
    let s = reversed_direction(knowledge);
    let fill: Vec<RankerParams<S>> = match knowledge.others {
        Some(others) => others.to_vec(),
        None => knowledge.colluders.iter().cycle().take(n - m).cloned().collect(),
    };
    let craft = |lambda: f64| -> Result<RankerParams<S>> {
        let l = S::lit(lambda);
        let values = knowledge
            .global
            .values()
            .iter()
            .zip(&s)
            .map(|(&g, &sj)| g + l * sj)
            .collect();
        RankerParams::from_values(knowledge.global.arch(), values)
    };
    let mut lambda = config.fang_lambda_init;
    while lambda >= config.fang_lambda_threshold {
        let crafted = craft(lambda)?;
        let mut candidates = vec![crafted.clone(); m];
        candidates.extend(fill.iter().cloned());
        if probe(&candidates)? < m {
            return Ok(FangKrumOutcome {
                update: crafted,
                lambda,
                selected: true,
            });
        }
        lambda /= 2.0;
    }
    let lambda = config.fang_lambda_threshold;
    Ok(FangKrumOutcome {
        update: craft(lambda)?,
        lambda,
        selected: false,
    })
}

/// Samples one value from the range beyond `base` on the side given by
/// `s`, scaled by the range factor `b`.
fn beyond<R: Rng + ?Sized>(base: f64, s: f64, b: f64, spread: f64, rng: &mut R) -> f64 {
    let (lo, hi) = if base == 0.0 {
        if s > 0.0 {
            (0.0, spread)
        } else {
            (-spread, 0.0)
        }
    } else if s > 0.0 {
        if base > 0.0 {
            (base, base * b)
        } else {
            (base, base / b)
        }
    } else if base > 0.0 {
        (base / b, base)
    } else {
        (base * b, base)
    };
    if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    }
}

/// Per-attacker updates for Trimmed Mean and Median: coordinate `j` is
/// drawn beyond the visible maximum when `s_j = 1` and beyond the visible
/// minimum when `s_j = −1`; coordinates with `s_j = 0` keep the visible mean.
pub fn fang_trimmed_attack<S: Scalar, R: Rng + ?Sized>(
    knowledge: &AttackKnowledge<'_, S>,
    config: &AttackConfig,
    rng: &mut R,
) -> Result<Vec<RankerParams<S>>> {
    let visible = knowledge.visible();
    let mu = coordinate_mean(&visible);
    let s = reversed_direction(knowledge);
    let dim = mu.len();
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for u in &visible {
        for (j, v) in u.values().iter().enumerate() {
            lo[j] = lo[j].min(v.as_f64());
            hi[j] = hi[j].max(v.as_f64());
        }
    }
    (0..knowledge.num_attackers())
        .map(|_| {
            let values = (0..dim)
                .map(|j| {
                    let sj = s[j].as_f64();
                    if sj == 0.0 {
                        return mu[j];
                    }
                    let base = if sj > 0.0 { hi[j] } else { lo[j] };
                    S::lit(beyond(base, sj, config.fang_range_factor, hi[j] - lo[j], rng))
                })
                .collect();
            RankerParams::from_values(knowledge.global.arch(), values)
        })
        .collect()
}

/// The `m` replacement updates for a model attack. `num_clients` is the
/// full participant count used for the default LIE shift.
pub fn craft_model_attack<S: Scalar, R: Rng + ?Sized>(
    config: &AttackConfig,
    knowledge: &AttackKnowledge<'_, S>,
    rng: &mut R,
) -> Result<Vec<RankerParams<S>>> {
    let m = knowledge.num_attackers();
    match config.kind {
        AttackKind::DataPoison => Ok(knowledge.colluders.to_vec()),
        AttackKind::Lie => {
            let z = config
                .lie_z
                .unwrap_or_else(|| lie_z_max(knowledge.num_clients(), m));
            let update = lie_attack(knowledge.colluders, S::lit(z))?;
            Ok(vec![update; m])
        }
        AttackKind::FangKrum => {
            let outcome = fang_krum_attack(knowledge, config, |c| krum_select(c, m))?;
            Ok(vec![outcome.update; m])
        }
        AttackKind::FangTrimmed => fang_trimmed_attack(knowledge, config, rng),
    }
}
