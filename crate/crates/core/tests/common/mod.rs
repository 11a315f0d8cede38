//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use foltr::rankers::{Architecture, RankerParams};

pub fn params(v: &[f64]) -> RankerParams<f64> {
    RankerParams::from_values(Architecture::Linear { features: v.len() }, v.to_vec()).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]) * (a[i] - b[i]);
    }
    s.sqrt()
}

pub fn brute_krum_scores(ups: &[Vec<f64>], m: usize) -> Vec<f64> {
    let n = ups.len();
    (0..n)
        .map(|i| {
            let mut d: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| dist(&ups[i], &ups[j])).collect();
            d.sort_by(|a, b| a.partial_cmp(b).unwrap());
            d.iter().take(n - m - 2).sum()
        })
        .collect()
}

pub fn brute_krum_index(ups: &[Vec<f64>], m: usize) -> usize {
    let s = brute_krum_scores(ups, m);
    let mut best = 0;
    for i in 1..s.len() {
        if s[i] < s[best] {
            best = i;
        }
    }
    best
}

pub fn brute_multi_krum(ups: &[Vec<f64>], m: usize, keep: usize) -> Vec<f64> {
    let s = brute_krum_scores(ups, m);
    let mut idx: Vec<usize> = (0..ups.len()).collect();
    idx.sort_by(|&a, &b| s[a].partial_cmp(&s[b]).unwrap().then(a.cmp(&b)));
    let dim = ups[0].len();
    let mut out = vec![0.0; dim];
    for &i in &idx[..keep] {
        for j in 0..dim {
            out[j] += ups[i][j] / keep as f64;
        }
    }
    out
}

fn column(ups: &[Vec<f64>], j: usize) -> Vec<f64> {
    let mut c: Vec<f64> = ups.iter().map(|u| u[j]).collect();
    c.sort_by(|a, b| a.partial_cmp(b).unwrap());
    c
}

pub fn brute_trimmed(ups: &[Vec<f64>], beta: usize) -> Vec<f64> {
    (0..ups[0].len())
        .map(|j| {
            let c = column(ups, j);
            let kept = &c[beta..c.len() - beta];
            kept.iter().sum::<f64>() / kept.len() as f64
        })
        .collect()
}

pub fn brute_median(ups: &[Vec<f64>]) -> Vec<f64> {
    (0..ups[0].len())
        .map(|j| {
            let c = column(ups, j);
            let n = c.len();
            if n % 2 == 1 {
                c[n / 2]
            } else {
                (c[n / 2 - 1] + c[n / 2]) / 2.0
            }
        })
        .collect()
}

/// Probability of a ranked prefix as an explicit product of renormalized
/// softmax terms.
pub fn brute_list_prob(scores: &[f64], ranking: &[usize]) -> f64 {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut p = 1.0;
    for &d in ranking {
        let z: f64 = left.iter().map(|&i| scores[i].exp()).sum();
        p *= scores[d].exp() / z;
        left.retain(|&i| i != d);
    }
    p
}

pub fn brute_ndcg(shown: &[u8], all: &[u8], k: usize) -> f64 {
    let dcg = |g: &[u8]| -> f64 {
        let mut s = 0.0;
        for (i, &x) in g.iter().enumerate().take(k) {
            s += (2f64.powi(x as i32) - 1.0) / ((i + 2) as f64).ln() * std::f64::consts::LN_2;
        }
        s
    };
    let mut ideal = all.to_vec();
    ideal.sort_by(|a, b| b.cmp(a));
    let i = dcg(&ideal);
    if i == 0.0 {
        0.0
    } else {
        dcg(shown) / i
    }
}

pub fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}

/// Kolmogorov-Smirnov statistic of `sample` against `cdf`.
pub fn ks_statistic(sample: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    sample.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sample.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sample.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Every permutation of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}
