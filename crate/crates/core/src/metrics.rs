//! Ranking quality measures.
//!
//! DCG uses exponential gain `2^grade - 1` and discount `log2(rank + 1)`.
//! When the ideal DCG is zero, nDCG is defined as 0.

use std::io::Write;

use crate::clickmodels::ClickVector;
use crate::data::Query;
use crate::error::{FoltrError, Result};
use crate::rankers::RankerParams;
use crate::scalar::{pairwise_sum, Scalar};

pub const DEFAULT_ONLINE_GAMMA: f64 = 0.9995;
pub const DEFAULT_CUTOFF: usize = 10;

pub fn dcg_at_k(grades: &[u8], k: usize) -> f64 {
    grades
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| (2f64.powi(i32::from(g)) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// nDCG@k of a displayed ranking against the full candidate grade multiset.
pub fn ndcg_at_k(displayed: &[u8], candidates: &[u8], k: usize) -> f64 {
    let mut ideal = candidates.to_vec();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg = dcg_at_k(&ideal, k);
    if idcg == 0.0 {
        0.0
    } else {
        dcg_at_k(displayed, k) / idcg
    }
}

/// Reciprocal rank of the highest clicked result; 0 without clicks.
pub fn max_rr(clicks: &ClickVector) -> f64 {
    clicks
        .iter()
        .position(|&c| c)
        .map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Cumulative discounted online nDCG: step `t` (0-based) contributes
/// `value · gamma^t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineAccumulator {
    gamma: f64,
    t: u64,
    sum: f64,
}

impl OnlineAccumulator {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(FoltrError::Config(format!("online gamma must be in (0, 1], got {gamma}")));
        }
        Ok(Self { gamma, t: 0, sum: 0.0 })
    }

    pub fn step(&mut self, serp_ndcg: f64) {
        self.sum += serp_ndcg * self.gamma.powf(self.t as f64);
        self.t += 1;
    }

    pub fn extend(&mut self, values: &[f64]) {
        for &v in values {
            self.step(v);
        }
    }

    pub fn value(&self) -> f64 {
        self.sum
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

/// Metrics after one global round; round 0 describes the initial model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub round: usize,
    pub offline_ndcg: f64,
    pub online_cum_ndcg: f64,
    pub maxrr_mean: f64,
}

pub const TRACE_HEADER: &str = "round,offline_ndcg10,online_cum_ndcg10,maxrr_mean,rule,attack,seed";

/// Writes the trace CSV, header included. Floats use the shortest form
/// that parses back to the same value.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], rule: &str, attack: &str, seed: u64, mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    write_trace_rows(rows, rule, attack, seed, out)
}

/// Trace rows without the header, for appending several runs to one file.
pub fn write_trace_rows<W: Write>(rows: &[TraceRow], rule: &str, attack: &str, seed: u64, mut out: W) -> Result<()> {
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{rule},{attack},{seed}",
            r.round, r.offline_ndcg, r.online_cum_ndcg, r.maxrr_mean
        )?;
    }
    Ok(())
}

/// Deterministic ranking: descending score, ties by ascending position.
pub fn rank_by_scores<S: Scalar>(scores: &[S]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

pub fn query_ndcg<S: Scalar>(params: &RankerParams<S>, query: &Query<S>, k: usize) -> Result<f64> {
    let feats: Vec<&[S]> = query.docs.iter().map(|d| d.features.as_slice()).collect();
    let scores = params.scores(&feats)?;
    let order = rank_by_scores(&scores);
    let shown: Vec<u8> = order.iter().map(|&i| query.docs[i].relevance).collect();
    Ok(ndcg_at_k(&shown, &query.grades(), k))
}

/// Mean nDCG@k of the deterministic ranking over held-out queries.
pub fn offline_eval<S: Scalar>(params: &RankerParams<S>, queries: &[Query<S>], k: usize) -> Result<f64> {
    if queries.is_empty() {
        return Err(FoltrError::Empty("test queries"));
    }
    let per_query = queries
        .iter()
        .map(|q| query_ndcg(params, q, k))
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&per_query) / per_query.len() as f64)
}
