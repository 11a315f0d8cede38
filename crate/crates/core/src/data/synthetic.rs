use rand_distr::{Distribution, StandardNormal};

use super::{Dataset, DocumentFeatures, Query};
use crate::scalar::{dot, Scalar};
use crate::seed::{purpose, stream, StreamRng};

/// Shape of a seeded synthetic corpus whose grades come from a hidden
/// linear scorer, so a linear ranker can order every query perfectly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub train_queries: usize,
    pub test_queries: usize,
    pub docs_per_query: usize,
    pub features: usize,
    pub max_grade: u8,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_queries: 50,
            test_queries: 50,
            docs_per_query: 20,
            features: 5,
            max_grade: 4,
        }
    }
}

/// Within each query, documents are sorted by hidden score and the top
/// `round(n * 0.05 * (max_grade + 1 - g))` documents below the previous
/// bin receive grade `g`; the rest are grade 0. For 20 documents and five
/// grades this yields 1/2/3/4/10 documents at grades 4/3/2/1/0.
pub fn synthetic_linear<S: Scalar>(spec: &SyntheticSpec, seed: u64) -> Dataset<S> {
    let mut rng = stream(seed, &[purpose::DATASET]);
    let hidden: Vec<f64> = (0..spec.features).map(|_| StandardNormal.sample(&mut rng)).collect();
    let train = (0..spec.train_queries)
        .map(|i| make_query(format!("train{i}"), spec, &hidden, &mut rng))
        .collect();
    let test = (0..spec.test_queries)
        .map(|i| make_query(format!("test{i}"), spec, &hidden, &mut rng))
        .collect();
    Dataset {
        name: "synthetic-linear".into(),
        feature_dim: spec.features,
        max_grade: spec.max_grade,
        train,
        test,
    }
}

fn make_query<S: Scalar>(id: String, spec: &SyntheticSpec, hidden: &[f64], rng: &mut StreamRng) -> Query<S> {
    let n = spec.docs_per_query;
    let feats: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..spec.features).map(|_| StandardNormal.sample(&mut *rng)).collect())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| dot(hidden, &feats[b]).total_cmp(&dot(hidden, &feats[a])));

    let mut grades = vec![0u8; n];
    let mut next = 0;
    for g in (1..=spec.max_grade).rev() {
        let width = (n as f64 * 0.05 * f64::from(spec.max_grade + 1 - g)).round().max(1.0) as usize;
        for &d in order.iter().skip(next).take(width) {
            grades[d] = g;
        }
        next = (next + width).min(n);
    }

    Query {
        query_id: id,
        docs: feats
            .into_iter()
            .enumerate()
            .map(|(i, f)| DocumentFeatures {
                doc_index: i,
                features: f.into_iter().map(S::lit).collect(),
                relevance: grades[i],
            })
            .collect(),
    }
}
