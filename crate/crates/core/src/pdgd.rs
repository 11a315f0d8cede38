//! Pairwise Differentiable Gradient Descent.
//!
//! Result pages are sampled from a Plackett-Luce distribution over model
//! scores; clicks are turned into pairwise preferences, each reweighted by
//! the probability of the pair-swapped ranking to remove position bias.
//!
//! Document identifiers in this module are positions into the candidate
//! slice passed by the caller.

use rand::Rng;

use crate::clickmodels::{ClickModel, ClickVector};
use crate::error::{check_len, FoltrError, Result};
use crate::rankers::{ModelDelta, RankerParams};
use crate::scalar::{log_sum_exp, sigmoid, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub docs: Vec<usize>,
    /// Log-probability of drawing this prefix from the Plackett-Luce model.
    pub log_prob: f64,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreferencePair<S> {
    pub preferred: usize,
    pub other: usize,
    pub weight: S,
}

/// Samples `k` documents without replacement, each draw from the softmax of
/// the remaining documents' scores.
pub fn sample_from_scores<S: Scalar, R: Rng + ?Sized>(scores: &[S], k: usize, rng: &mut R) -> Result<RankedList> {
    if scores.is_empty() {
        return Err(FoltrError::Empty("candidate set"));
    }
    if k > scores.len() {
        return Err(FoltrError::Config(format!(
            "cannot rank {k} documents from {} candidates",
            scores.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(FoltrError::Domain("non-finite ranking score".into()));
    }
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut docs = Vec::with_capacity(k);
    let mut log_prob = S::zero();
    let mut weights = Vec::with_capacity(scores.len());
    for _ in 0..k {
        let max = remaining.iter().map(|&d| scores[d]).fold(S::neg_infinity(), S::max);
        weights.clear();
        weights.extend(remaining.iter().map(|&d| (scores[d] - max).exp()));
        let total = weights.iter().fold(S::zero(), |a, &w| a + w);
        let target = S::lit(rng.random::<f64>()) * total;
        let mut acc = S::zero();
        let mut pick = remaining.len() - 1;
        for (i, &w) in weights.iter().enumerate() {
            acc = acc + w;
            if target < acc {
                pick = i;
                break;
            }
        }
        let doc = remaining.remove(pick);
        log_prob = log_prob + (scores[doc] - max) - total.ln();
        docs.push(doc);
    }
    Ok(RankedList {
        docs,
        log_prob: log_prob.as_f64(),
    })
}

pub fn sample_serp<S: Scalar, R: Rng + ?Sized>(
    params: &RankerParams<S>,
    candidates: &[&[S]],
    k: usize,
    rng: &mut R,
) -> Result<RankedList> {
    let scores = params.scores(candidates)?;
    sample_from_scores(&scores, k, rng)
}

/// log P(R | D) for a ranked prefix, summing per-position log-softmax terms.
pub fn list_log_prob<S: Scalar>(scores: &[S], ranking: &[usize]) -> S {
    let mut placed = vec![false; scores.len()];
    let mut total = S::zero();
    let mut remaining = Vec::with_capacity(scores.len());
    for &d in ranking {
        remaining.clear();
        remaining.extend((0..scores.len()).filter(|&i| !placed[i]).map(|i| scores[i]));
        total = total + scores[d] - log_sum_exp(&remaining);
        placed[d] = true;
    }
    total
}

/// Pairs `(clicked, unclicked)` for every clicked document against every
/// unclicked document ranked above the last click or directly below it.
pub fn infer_preferences(list: &RankedList, clicks: &[bool]) -> Result<Vec<(usize, usize)>> {
    check_len(list.len(), clicks.len())?;
    let Some(last_click) = clicks.iter().rposition(|&c| c) else {
        return Ok(Vec::new());
    };
    let considered = (last_click + 2).min(clicks.len());
    let clicked: Vec<usize> = (0..=last_click).filter(|&i| clicks[i]).collect();
    let unclicked: Vec<usize> = (0..considered).filter(|&i| !clicks[i]).collect();
    Ok(clicked
        .iter()
        .flat_map(|&c| unclicked.iter().map(move |&u| (list.docs[c], list.docs[u])))
        .collect())
}

struct ListCache<S> {
    pos: Vec<Option<usize>>,
    exp: Vec<S>,
    unranked: S,
}

impl<S: Scalar> ListCache<S> {
    fn new(scores: &[S], ranking: &[usize]) -> Self {
        let max = scores.iter().copied().fold(S::neg_infinity(), S::max);
        let exp: Vec<S> = scores.iter().map(|&s| (s - max).exp()).collect();
        let mut pos = vec![None; scores.len()];
        for (i, &d) in ranking.iter().enumerate() {
            pos[d] = Some(i);
        }
        let unranked = (0..scores.len())
            .filter(|&d| pos[d].is_none())
            .fold(S::zero(), |a, d| a + exp[d]);
        Self { pos, exp, unranked }
    }

    /// log P(R*) - log P(R) where R* swaps `a` and `b` within `ranking`.
    /// Only the normalizers strictly after the upper position up to the
    /// lower position differ; all sums are of positive terms.
    fn swap_log_ratio(&self, ranking: &[usize], a: usize, b: usize) -> S {
        let (hi, lo) = {
            let (pa, pb) = (self.pos[a].expect("ranked"), self.pos[b].expect("ranked"));
            if pa < pb {
                (pa, pb)
            } else {
                (pb, pa)
            }
        };
        let x = self.exp[ranking[hi]];
        let y = self.exp[ranking[lo]];
        let tail = ranking[lo + 1..]
            .iter()
            .fold(self.unranked, |acc, &d| acc + self.exp[d]);
        let mut inner = S::zero();
        let mut ratio = S::zero();
        for i in (hi + 1..=lo).rev() {
            if i < lo {
                inner = inner + self.exp[ranking[i]];
            }
            let original = tail + y + inner;
            let swapped = tail + x + inner;
            ratio = ratio + (original.ln() - swapped.ln());
        }
        ratio
    }
}

/// σ(r), evaluated so that the values for `r` and `-r` sum to exactly 1.
fn rho_from_log_ratio<S: Scalar>(r: S) -> S {
    if r >= S::zero() {
        sigmoid(r)
    } else {
        S::one() - sigmoid(-r)
    }
}

fn check_ranked(list: &RankedList, docs: &[usize], n: usize) -> Result<()> {
    for &d in docs {
        if d >= n || !list.docs.contains(&d) {
            return Err(FoltrError::Domain(format!("document {d} is not on the ranked list")));
        }
    }
    Ok(())
}

/// ρ = P(R*) / (P(R) + P(R*)) from precomputed scores.
pub fn rho_from_scores<S: Scalar>(scores: &[S], list: &RankedList, preferred: usize, other: usize) -> Result<S> {
    check_ranked(list, &[preferred, other], scores.len())?;
    if preferred == other {
        return Err(FoltrError::Domain("preference pair needs two distinct documents".into()));
    }
    let cache = ListCache::new(scores, &list.docs);
    Ok(rho_from_log_ratio(cache.swap_log_ratio(&list.docs, preferred, other)))
}

pub fn pair_weight_rho<S: Scalar>(
    params: &RankerParams<S>,
    candidates: &[&[S]],
    list: &RankedList,
    preferred: usize,
    other: usize,
) -> Result<S> {
    let scores = params.scores(candidates)?;
    rho_from_scores(&scores, list, preferred, other)
}

/// Debiased pairwise preferences with their full gradient weights
/// `ρ · σ(f_k - f_l) · σ(f_l - f_k)`.
pub fn weighted_pairs<S: Scalar>(scores: &[S], list: &RankedList, clicks: &[bool]) -> Result<Vec<PreferencePair<S>>> {
    let pairs = infer_preferences(list, clicks)?;
    if pairs.is_empty() {
        return Ok(Vec::new());
    }
    let cache = ListCache::new(scores, &list.docs);
    Ok(pairs
        .into_iter()
        .map(|(k, l)| {
            let rho = rho_from_log_ratio(cache.swap_log_ratio(&list.docs, k, l));
            let diff = scores[k] - scores[l];
            PreferencePair {
                preferred: k,
                other: l,
                weight: rho * sigmoid(diff) * sigmoid(-diff),
            }
        })
        .collect())
}

/// Σ over inferred pairs of `w · (f'(d_k) - f'(d_l))`.
pub fn pdgd_gradient<S: Scalar>(
    params: &RankerParams<S>,
    candidates: &[&[S]],
    list: &RankedList,
    clicks: &[bool],
) -> Result<ModelDelta<S>> {
    let scores = params.scores(candidates)?;
    gradient_from_scores(params, candidates, &scores, list, clicks)
}

fn gradient_from_scores<S: Scalar>(
    params: &RankerParams<S>,
    candidates: &[&[S]],
    scores: &[S],
    list: &RankedList,
    clicks: &[bool],
) -> Result<ModelDelta<S>> {
    let mut grad = ModelDelta::zeros(params.arch());
    let pairs = weighted_pairs(scores, list, clicks)?;
    if pairs.is_empty() {
        return Ok(grad);
    }
    let mut coef = vec![S::zero(); candidates.len()];
    for p in &pairs {
        coef[p.preferred] = coef[p.preferred] + p.weight;
        coef[p.other] = coef[p.other] - p.weight;
    }
    for (d, &c) in coef.iter().enumerate() {
        if c != S::zero() {
            params.accumulate_gradient(candidates[d], c, grad.values_mut());
        }
    }
    Ok(grad)
}

#[derive(Debug, Clone)]
pub struct Interaction<S> {
    pub params: RankerParams<S>,
    pub gradient: ModelDelta<S>,
    pub serp: RankedList,
    pub clicks: ClickVector,
}

/// One online interaction: sample a page, simulate clicks against `grades`,
/// estimate the gradient and take an ascent step of size `lr`.
pub fn pdgd_interaction<S: Scalar, R: Rng + ?Sized>(
    params: &RankerParams<S>,
    candidates: &[&[S]],
    grades: &[u8],
    click_model: &ClickModel,
    lr: S,
    serp_len: usize,
    rng: &mut R,
) -> Result<Interaction<S>> {
    check_len(candidates.len(), grades.len())?;
    let scores = params.scores(candidates)?;
    let k = serp_len.min(candidates.len());
    let serp = sample_from_scores(&scores, k, rng)?;
    let shown: Vec<u8> = serp.docs.iter().map(|&d| grades[d]).collect();
    let clicks = click_model.simulate(&shown, rng)?;
    let gradient = gradient_from_scores(params, candidates, &scores, &serp, &clicks)?;
    let params = params.apply_update(&gradient, lr)?;
    Ok(Interaction {
        params,
        gradient,
        serp,
        clicks,
    })
}
