//! Byzantine-robust aggregation over flat parameter vectors.

use crate::error::{FoltrError, Result};
use crate::rankers::RankerParams;
use crate::scalar::{euclidean, pairwise_sum, Scalar};

fn check_uniform<S: Scalar>(updates: &[RankerParams<S>]) -> Result<()> {
    let first = updates.first().ok_or(FoltrError::Empty("update set"))?;
    for u in &updates[1..] {
        first.check_same_shape(u)?;
    }
    Ok(())
}

/// Krum distance scores and the neighbour sets behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct KrumScores<S> {
    pub scores: Vec<S>,
    pub neighbours: Vec<Vec<usize>>,
}

impl<S: Scalar> KrumScores<S> {
    /// Update indices ordered by ascending score, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[a]
                .partial_cmp(&self.scores[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        order
    }
}

/// For each update, the sum of Euclidean distances to its `n - m - 2`
/// nearest other updates.
pub fn krum_scores<S: Scalar>(updates: &[RankerParams<S>], m: usize) -> Result<KrumScores<S>> {
    check_uniform(updates)?;
    let n = updates.len();
    if n < m + 3 {
        return Err(FoltrError::Config(format!(
            "krum needs n >= m + 3, got n = {n}, m = {m}"
        )));
    }
    let keep = n - m - 2;
    let mut dist = vec![vec![S::zero(); n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = euclidean(updates[i].values(), updates[j].values());
            dist[i][j] = d;
            dist[j][i] = d;
        }
    }
    let mut scores = Vec::with_capacity(n);
    let mut neighbours = Vec::with_capacity(n);
    for (i, row) in dist.iter().enumerate() {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| {
            row[a]
                .partial_cmp(&row[b])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        others.truncate(keep);
        scores.push(others.iter().fold(S::zero(), |acc, &j| acc + row[j]));
        neighbours.push(others);
    }
    Ok(KrumScores { scores, neighbours })
}

/// Index of the update Krum selects (lowest score, ties to lowest index).
pub fn krum_select<S: Scalar>(updates: &[RankerParams<S>], m: usize) -> Result<usize> {
    Ok(krum_scores(updates, m)?.ranking()[0])
}

pub fn krum<S: Scalar>(updates: &[RankerParams<S>], m: usize) -> Result<RankerParams<S>> {
    Ok(updates[krum_select(updates, m)?].clone())
}

fn coordinatewise<S: Scalar>(updates: &[RankerParams<S>], mut reduce: impl FnMut(&mut Vec<S>) -> S) -> Result<RankerParams<S>> {
    check_uniform(updates)?;
    let arch = updates[0].arch();
    let dim = updates[0].len();
    let mut column = Vec::with_capacity(updates.len());
    let mut out = Vec::with_capacity(dim);
    for j in 0..dim {
        column.clear();
        column.extend(updates.iter().map(|u| u.values()[j]));
        out.push(reduce(&mut column));
    }
    RankerParams::from_values(arch, out)
}

/// Unweighted coordinate-wise mean.
pub fn mean<S: Scalar>(updates: &[RankerParams<S>]) -> Result<RankerParams<S>> {
    let n = S::lit(updates.len() as f64);
    coordinatewise(updates, |col| pairwise_sum(col) / n)
}

/// Mean of the `keep` lowest-scoring updates.
pub fn multi_krum<S: Scalar>(updates: &[RankerParams<S>], m: usize, keep: usize) -> Result<RankerParams<S>> {
    if keep == 0 || keep > updates.len() {
        return Err(FoltrError::Config(format!(
            "multi-krum keep count must be in 1..={}, got {keep}",
            updates.len()
        )));
    }
    let order = krum_scores(updates, m)?.ranking();
    let mut chosen = order[..keep].to_vec();
    chosen.sort_unstable();
    let selected: Vec<RankerParams<S>> = chosen.iter().map(|&i| updates[i].clone()).collect();
    mean(&selected)
}

fn sort_column<S: Scalar>(col: &mut [S]) {
    col.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
}

/// Per coordinate, drop the `beta` largest and `beta` smallest values and
/// average the rest.
pub fn trimmed_mean<S: Scalar>(updates: &[RankerParams<S>], beta: usize) -> Result<RankerParams<S>> {
    let n = updates.len();
    if n < 2 * beta + 1 {
        return Err(FoltrError::Config(format!(
            "trimmed mean needs n - 2*beta >= 1, got n = {n}, beta = {beta}"
        )));
    }
    let kept = S::lit((n - 2 * beta) as f64);
    coordinatewise(updates, |col| {
        sort_column(col);
        pairwise_sum(&col[beta..n - beta]) / kept
    })
}

/// Coordinate-wise median; even counts average the two middle values.
pub fn coord_median<S: Scalar>(updates: &[RankerParams<S>]) -> Result<RankerParams<S>> {
    let two = S::lit(2.0);
    coordinatewise(updates, |col| {
        sort_column(col);
        let mid = col.len() / 2;
        if col.len() % 2 == 0 {
            (col[mid - 1] + col[mid]) / two
        } else {
            col[mid]
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rankers::Architecture;

    fn scalars(values: &[f64]) -> Vec<RankerParams<f64>> {
        let arch = Architecture::Linear { features: 1 };
        values
            .iter()
            .map(|&v| RankerParams::from_values(arch, vec![v]).unwrap())
            .collect()
    }

    #[test]
    fn krum_hand_instance() {
        let u = scalars(&[0.0, 1.0, 2.0, 4.0, 100.0]);
        let s = krum_scores(&u, 1).unwrap();
        assert_eq!(s.scores, vec![3.0, 2.0, 3.0, 5.0, 194.0]);
        assert_eq!(krum_select(&u, 1).unwrap(), 1);
        assert_eq!(krum(&u, 1).unwrap().values(), &[1.0]);
    }

    #[test]
    fn krum_ties_pick_lowest_index() {
        let u = scalars(&[5.0, 5.0, 5.0, 5.0]);
        assert_eq!(krum_select(&u, 0).unwrap(), 0);
    }

    #[test]
    fn krum_requires_enough_updates() {
        let u = scalars(&[0.0, 1.0, 2.0, 3.0]);
        assert!(matches!(krum(&u, 2), Err(FoltrError::Config(_))));
        assert!(matches!(krum::<f64>(&[], 0), Err(FoltrError::Empty(_))));
    }

    #[test]
    fn multi_krum_cases() {
        let u = scalars(&[0.0, 1.0, 2.0, 4.0, 100.0]);
        assert_eq!(multi_krum(&u, 1, 4).unwrap().values(), &[1.75]);
        assert_eq!(multi_krum(&u, 1, 1).unwrap(), krum(&u, 1).unwrap());
        assert_eq!(multi_krum(&u, 1, 5).unwrap(), mean(&u).unwrap());
        assert!(multi_krum(&u, 1, 0).is_err());
        assert!(multi_krum(&u, 1, 6).is_err());
    }

    #[test]
    fn trimmed_mean_cases() {
        let u = scalars(&[1.0, 2.0, 3.0, 100.0]);
        assert_eq!(trimmed_mean(&u, 1).unwrap().values(), &[2.5]);
        assert_eq!(trimmed_mean(&u, 0).unwrap().values(), &[26.5]);
        assert_eq!(trimmed_mean(&scalars(&[7.0; 5]), 2).unwrap().values(), &[7.0]);
        assert!(trimmed_mean(&u, 2).is_err());
    }

    #[test]
    fn median_cases() {
        assert_eq!(coord_median(&scalars(&[3.0, 1.0, 2.0])).unwrap().values(), &[2.0]);
        assert_eq!(coord_median(&scalars(&[1.0, 2.0, 3.0, 100.0])).unwrap().values(), &[2.5]);
        assert_eq!(coord_median(&scalars(&[-4.0])).unwrap().values(), &[-4.0]);
        assert!(coord_median::<f64>(&[]).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = RankerParams::<f64>::zeros(Architecture::Linear { features: 1 });
        let b = RankerParams::<f64>::zeros(Architecture::Linear { features: 2 });
        assert!(matches!(coord_median(&[a, b]), Err(FoltrError::Shape { .. })));
    }
}
