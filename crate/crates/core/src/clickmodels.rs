//! Simulated users: cascade click model (CCM) and position-based model (PBM).

use rand::Rng;

use crate::error::{FoltrError, Result};

/// Maximum number of documents shown on a result page.
pub const SERP_CAP: usize = 10;

pub type ClickVector = Vec<bool>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CcmKind {
    Perfect,
    Navigational,
    Informational,
    Poison,
}

impl CcmKind {
    pub const ALL: [CcmKind; 4] = [Self::Perfect, Self::Navigational, Self::Informational, Self::Poison];

    pub fn name(self) -> &'static str {
        match self {
            Self::Perfect => "perfect",
            Self::Navigational => "navigational",
            Self::Informational => "informational",
            Self::Poison => "poison",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

// Rows indexed by grade. Three-level sets use grades 0..=2, five-level 0..=4.
const CLICK_3: [[f64; 3]; 4] = [
    [0.0, 0.5, 1.0],
    [0.05, 0.5, 0.95],
    [0.4, 0.7, 0.9],
    [1.0, 0.5, 0.0],
];
const STOP_3: [[f64; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [0.2, 0.5, 0.9],
    [0.1, 0.3, 0.5],
    [0.0, 0.0, 0.0],
];
const CLICK_5: [[f64; 5]; 4] = [
    [0.0, 0.2, 0.4, 0.8, 1.0],
    [0.05, 0.3, 0.5, 0.7, 0.95],
    [0.4, 0.6, 0.7, 0.8, 0.9],
    [1.0, 0.8, 0.4, 0.2, 0.0],
];
const STOP_5: [[f64; 5]; 4] = [
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [0.2, 0.3, 0.5, 0.7, 0.9],
    [0.1, 0.2, 0.3, 0.4, 0.5],
    [0.0, 0.0, 0.0, 0.0, 0.0],
];

fn check_probs(what: &str, probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(FoltrError::Config(format!("{what}: probability table is empty")));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(FoltrError::Config(format!("{what}: probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Cascade click model parameters, indexed by relevance grade.
#[derive(Debug, Clone, PartialEq)]
pub struct CcmSpec {
    pub name: String,
    pub click_prob: Vec<f64>,
    pub stop_prob: Vec<f64>,
}

impl CcmSpec {
    pub fn new(name: impl Into<String>, click_prob: Vec<f64>, stop_prob: Vec<f64>) -> Result<Self> {
        let name = name.into();
        check_probs(&name, &click_prob)?;
        check_probs(&name, &stop_prob)?;
        if click_prob.len() != stop_prob.len() {
            return Err(FoltrError::Config(format!(
                "{name}: click and stop tables cover different grade scales"
            )));
        }
        Ok(Self {
            name,
            click_prob,
            stop_prob,
        })
    }

    /// Built-in instantiation for a three-level (`max_grade = 2`) or
    /// five-level (`max_grade = 4`) relevance scale.
    pub fn builtin(kind: CcmKind, max_grade: u8) -> Result<Self> {
        let row = kind as usize;
        let (click, stop) = match max_grade {
            2 => (CLICK_3[row].to_vec(), STOP_3[row].to_vec()),
            4 => (CLICK_5[row].to_vec(), STOP_5[row].to_vec()),
            g => {
                return Err(FoltrError::Config(format!(
                    "no built-in click table for grade scale 0..={g}"
                )))
            }
        };
        Self::new(kind.name(), click, stop)
    }

    pub fn max_grade(&self) -> usize {
        self.click_prob.len() - 1
    }
}

/// Position-based model: rank `k` (1-based) is examined with probability
/// `(1/k)^eta`, independently of other ranks.
#[derive(Debug, Clone, PartialEq)]
pub struct PbmSpec {
    pub eta: f64,
    pub click_prob: Vec<f64>,
}

impl PbmSpec {
    pub fn new(eta: f64, click_prob: Vec<f64>) -> Result<Self> {
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(FoltrError::Config(format!("pbm eta must be a finite value >= 0, got {eta}")));
        }
        check_probs("pbm", &click_prob)?;
        Ok(Self { eta, click_prob })
    }

    /// PBM with the perfect-user click probabilities of the given scale.
    pub fn with_perfect_clicks(eta: f64, max_grade: u8) -> Result<Self> {
        Self::new(eta, CcmSpec::builtin(CcmKind::Perfect, max_grade)?.click_prob)
    }

    pub fn examination(&self, rank: usize) -> f64 {
        (1.0 / rank as f64).powf(self.eta)
    }
}

fn lookup(table: &[f64], grade: u8) -> Result<f64> {
    table.get(usize::from(grade)).copied().ok_or_else(|| {
        FoltrError::Config(format!(
            "grade {grade} not covered by click table 0..={}",
            table.len().saturating_sub(1)
        ))
    })
}

fn check_serp(grades: &[u8]) -> Result<()> {
    if grades.len() > SERP_CAP {
        return Err(FoltrError::Config(format!(
            "SERP of {} documents exceeds the cap of {SERP_CAP}",
            grades.len()
        )));
    }
    Ok(())
}

/// CCM simulation driven by an explicit source of uniform draws. Draw order
/// per examined rank: one click draw, then one stop draw if clicked.
pub fn ccm_with_draws(spec: &CcmSpec, grades: &[u8], mut uniform: impl FnMut() -> f64) -> Result<ClickVector> {
    check_serp(grades)?;
    let probs = grades
        .iter()
        .map(|&g| Ok((lookup(&spec.click_prob, g)?, lookup(&spec.stop_prob, g)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut clicks = vec![false; grades.len()];
    for (rank, (p_click, p_stop)) in probs.into_iter().enumerate() {
        if uniform() < p_click {
            clicks[rank] = true;
            if uniform() < p_stop {
                break;
            }
        }
    }
    Ok(clicks)
}

pub fn simulate_ccm<R: Rng + ?Sized>(spec: &CcmSpec, grades: &[u8], rng: &mut R) -> Result<ClickVector> {
    ccm_with_draws(spec, grades, || rng.random::<f64>())
}

pub fn simulate_pbm<R: Rng + ?Sized>(spec: &PbmSpec, grades: &[u8], rng: &mut R) -> Result<ClickVector> {
    check_serp(grades)?;
    grades
        .iter()
        .enumerate()
        .map(|(i, &g)| {
            let p = spec.examination(i + 1) * lookup(&spec.click_prob, g)?;
            Ok(rng.random::<f64>() < p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClickModel {
    Ccm(CcmSpec),
    Pbm(PbmSpec),
}

impl ClickModel {
    pub fn simulate<R: Rng + ?Sized>(&self, grades: &[u8], rng: &mut R) -> Result<ClickVector> {
        match self {
            Self::Ccm(s) => simulate_ccm(s, grades, rng),
            Self::Pbm(s) => simulate_pbm(s, grades, rng),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Ccm(s) => s.name.clone(),
            Self::Pbm(s) => format!("pbm(eta={})", s.eta),
        }
    }

    /// Highest grade the model's tables cover.
    pub fn max_grade(&self) -> usize {
        match self {
            Self::Ccm(s) => s.max_grade(),
            Self::Pbm(s) => s.click_prob.len() - 1,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    #[test]
    fn perfect_top_grade_always_clicked_never_stops() {
        let spec = CcmSpec::builtin(CcmKind::Perfect, 4).unwrap();
        let mut rng = stream(1, &[]);
        for _ in 0..100 {
            assert_eq!(simulate_ccm(&spec, &[4, 4, 4], &mut rng).unwrap(), vec![true; 3]);
        }
    }

    #[test]
    fn empty_serp_gives_no_clicks() {
        let spec = CcmSpec::builtin(CcmKind::Navigational, 2).unwrap();
        assert!(simulate_ccm(&spec, &[], &mut stream(1, &[])).unwrap().is_empty());
        let pbm = PbmSpec::with_perfect_clicks(1.0, 2).unwrap();
        assert!(simulate_pbm(&pbm, &[], &mut stream(1, &[])).unwrap().is_empty());
    }

    #[test]
    fn poison_clicks_irrelevant_ignores_relevant() {
        let spec = CcmSpec::builtin(CcmKind::Poison, 4).unwrap();
        let mut rng = stream(2, &[]);
        for _ in 0..100 {
            assert_eq!(simulate_ccm(&spec, &[0, 4], &mut rng).unwrap(), vec![true, false]);
        }
    }

    #[test]
    fn poison_is_reversed_perfect_without_stops() {
        for g in [2u8, 4] {
            let perfect = CcmSpec::builtin(CcmKind::Perfect, g).unwrap();
            let poison = CcmSpec::builtin(CcmKind::Poison, g).unwrap();
            let reversed: Vec<f64> = perfect.click_prob.iter().rev().copied().collect();
            assert_eq!(poison.click_prob, reversed);
            assert!(poison.stop_prob.iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn out_of_scale_grade_is_a_config_error() {
        let spec = CcmSpec::builtin(CcmKind::Perfect, 2).unwrap();
        assert!(matches!(
            simulate_ccm(&spec, &[3], &mut stream(1, &[])),
            Err(FoltrError::Config(_))
        ));
        let pbm = PbmSpec::with_perfect_clicks(0.0, 2).unwrap();
        assert!(simulate_pbm(&pbm, &[0, 7], &mut stream(1, &[])).is_err());
        assert!(CcmSpec::builtin(CcmKind::Perfect, 3).is_err());
    }

    #[test]
    fn serp_cap_enforced() {
        let spec = CcmSpec::builtin(CcmKind::Perfect, 2).unwrap();
        assert!(simulate_ccm(&spec, &[0; 11], &mut stream(1, &[])).is_err());
    }

    #[test]
    fn pbm_without_decay_clicks_relevant_everywhere() {
        let pbm = PbmSpec::with_perfect_clicks(0.0, 4).unwrap();
        let mut rng = stream(3, &[]);
        for _ in 0..100 {
            assert_eq!(simulate_pbm(&pbm, &[4, 4], &mut rng).unwrap(), vec![true, true]);
        }
    }

    #[test]
    fn pbm_large_eta_suppresses_lower_ranks() {
        let pbm = PbmSpec::with_perfect_clicks(200.0, 4).unwrap();
        assert!(pbm.examination(2) < 1e-60);
        let mut rng = stream(4, &[]);
        for _ in 0..1000 {
            let c = simulate_pbm(&pbm, &[4, 4, 4], &mut rng).unwrap();
            assert!(c[0] && !c[1] && !c[2]);
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(CcmSpec::new("x", vec![1.2], vec![0.0]).is_err());
        assert!(CcmSpec::new("x", vec![0.2, 0.3], vec![0.0]).is_err());
        assert!(PbmSpec::new(-1.0, vec![0.5]).is_err());
    }
}
