mod common;

use common::*;
use foltr::adversary::{lie_attack, reversed_direction, AttackKnowledge, Knowledge};
use foltr::data::{parse_letor, write_letor, DocumentFeatures, ParseOptions, Query};
use foltr::federation::{aggregate, fedavg, AggregationRule, LocalUpdate};
use foltr::foltres::{epsilon_bound, maxrr_grid, privatize, PrivatizationSpec};
use foltr::metrics::ndcg_at_k;
use foltr::pdgd::{list_log_prob, rho_from_scores, sample_from_scores, RankedList};
use foltr::privacy::clip_weights;
use foltr::rankers::{Architecture, ModelDelta};
use foltr::seed::stream;
use proptest::prelude::*;

fn updates(dim: usize, max_n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, dim), 1..=max_n)
}

fn local(ups: &[Vec<f64>], weights: &[usize]) -> Vec<LocalUpdate<f64>> {
    ups.iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (u, &w))| LocalUpdate {
            client_id: i,
            params: params(u),
            n_c: w,
        })
        .collect()
}

fn delta(v: &[f64]) -> ModelDelta<f64> {
    ModelDelta::from_values(Architecture::Linear { features: v.len() }, v.to_vec()).unwrap()
}

const RULES: [AggregationRule; 5] = [
    AggregationRule::FedAvg,
    AggregationRule::Krum,
    AggregationRule::MultiKrum { keep: None },
    AggregationRule::TrimmedMean { beta: None },
    AggregationRule::Median,
];

proptest! {
    #[test]
    fn fedavg_of_identical_updates_is_identity(v in prop::collection::vec(-5.0f64..5.0, 1..6), n in 1usize..8, w in 1usize..20) {
        let ups = vec![v.clone(); n];
        let agg = fedavg(&local(&ups, &vec![w; n])).unwrap();
        for (a, b) in agg.values().iter().zip(&v) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn fedavg_is_convex_combination(ups in updates(3, 8), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = stream(seed, &[]);
        let w: Vec<usize> = ups.iter().map(|_| rng.random_range(1..50)).collect();
        let agg = fedavg(&local(&ups, &w)).unwrap();
        let total: usize = w.iter().sum();
        for j in 0..3 {
            let direct: f64 = ups.iter().zip(&w).map(|(u, &c)| u[j] * c as f64 / total as f64).sum();
            prop_assert!((agg.values()[j] - direct).abs() < 1e-10);
            let lo = ups.iter().map(|u| u[j]).fold(f64::INFINITY, f64::min);
            let hi = ups.iter().map(|u| u[j]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(agg.values()[j] >= lo - 1e-12 && agg.values()[j] <= hi + 1e-12);
        }
    }

    #[test]
    fn aggregation_is_permutation_invariant(ups in updates(3, 9), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = ups.len();
        let m = if n >= 4 { (n - 3) / 2 } else { 0 };
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(seed, &[]));
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| ups[i].clone()).collect();
        for rule in RULES {
            if matches!(rule, AggregationRule::Krum | AggregationRule::MultiKrum { .. }) && n < m + 3 {
                continue;
            }
            if matches!(rule, AggregationRule::TrimmedMean { .. }) && n <= 2 * m {
                continue;
            }
            let a = aggregate(rule, &local(&ups, &vec![1; n]), m).unwrap();
            let b = aggregate(rule, &local(&shuffled, &vec![1; n]), m).unwrap();
            if rule == AggregationRule::Krum {
                // Ties may select a different but equally scored update.
                let sa = brute_krum_scores(&ups, m);
                let best = sa.iter().cloned().fold(f64::INFINITY, f64::min);
                let hit = ups.iter().zip(&sa).any(|(u, &s)| u.as_slice() == b.values() && (s - best).abs() < 1e-9);
                prop_assert!(hit);
                continue;
            }
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() < 1e-12 * x.abs().max(1.0), "{} differs", rule.name());
            }
        }
    }

    #[test]
    fn privatized_metric_stays_on_grid(v in 0usize..11, p in 0.1f64..=1.0, seed in any::<u64>()) {
        prop_assume!(p > 1.0 / 11.0);
        let grid = maxrr_grid();
        let spec = PrivatizationSpec::new(p, grid.clone()).unwrap();
        let out = privatize(&spec, grid[v], &mut stream(seed, &[])).unwrap();
        prop_assert!(grid.contains(&out));
    }

    #[test]
    fn epsilon_increases_with_p(a in 0.1f64..0.999, b in 0.1f64..0.999, n in 2usize..20) {
        let lo = 1.0 / n as f64;
        prop_assume!(a > lo && b > lo && a < b);
        prop_assert!(epsilon_bound(a, n).unwrap() < epsilon_bound(b, n).unwrap());
    }

    #[test]
    fn clipping_bounds_norm_and_is_idempotent(v in prop::collection::vec(-100.0f64..100.0, 1..8), sens in 0.01f64..10.0) {
        let p = params(&v);
        let c = clip_weights(&p, sens);
        prop_assert!(c.norm() <= sens / 2.0 * (1.0 + 1e-12));
        let cc = clip_weights(&c, sens);
        for (a, b) in c.values().iter().zip(cc.values()) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
    }

    #[test]
    fn calibration_keeps_historical_norm(hf in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..6)) {
        let (h, f): (Vec<f64>, Vec<f64>) = hf.into_iter().unzip();
        let fresh = delta(&f);
        let out = foltr::unlearning::calibrate_update(&delta(&h), &fresh).unwrap();
        if fresh.norm() == 0.0 {
            prop_assert_eq!(out.norm(), 0.0);
        } else {
            prop_assert!((out.norm() - delta(&h).norm()).abs() < 1e-9);
        }
    }

    #[test]
    fn sampled_prefix_is_distinct_and_consistent(scores in prop::collection::vec(-5.0f64..5.0, 1..15), k in 1usize..15, seed in any::<u64>()) {
        let k = k.min(scores.len());
        let list = sample_from_scores(&scores, k, &mut stream(seed, &[])).unwrap();
        let mut seen = list.docs.clone();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), k);
        prop_assert!((list.log_prob - list_log_prob(&scores, &list.docs)).abs() < 1e-9);
    }

    #[test]
    fn ndcg_lies_in_unit_interval(g in prop::collection::vec(0u8..5, 1..20), k in 1usize..12, seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let mut shown = g.clone();
        shown.shuffle(&mut stream(seed, &[]));
        let v = ndcg_at_k(&shown, &g, k);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&v));
    }

    #[test]
    fn letor_round_trip(grades in prop::collection::vec(0u8..5, 1..10), feats in prop::collection::vec(-1e3f64..1e3, 30)) {
        let docs = grades
            .iter()
            .enumerate()
            .map(|(i, &g)| DocumentFeatures {
                doc_index: i,
                features: feats[(i * 3) % 27..(i * 3) % 27 + 3].to_vec(),
                relevance: g,
            })
            .collect();
        let q = vec![Query { query_id: "7".to_string(), docs }];
        let mut buf = Vec::new();
        write_letor(&q, &mut buf).unwrap();
        let back = parse_letor::<f64, _>(buf.as_slice(), ParseOptions { feature_dim: Some(3), max_grade: Some(4) }).unwrap();
        prop_assert_eq!(&back.train, &q);
    }

    #[test]
    fn lie_matches_direct_formula(ups in updates(4, 6), z in 0.0f64..3.0) {
        let ps: Vec<_> = ups.iter().map(|u| params(u)).collect();
        let out = lie_attack(&ps, z).unwrap();
        let n = ups.len() as f64;
        for j in 0..4 {
            let mu = ups.iter().map(|u| u[j]).sum::<f64>() / n;
            let var = ups.iter().map(|u| (u[j] - mu).powi(2)).sum::<f64>() / n;
            prop_assert!((out.values()[j] - (mu - z * var.sqrt())).abs() < 1e-9);
        }
    }

    #[test]
    fn reversed_direction_is_a_sign(ups in updates(4, 6), g in prop::collection::vec(-10.0f64..10.0, 4)) {
        let ps: Vec<_> = ups.iter().map(|u| params(u)).collect();
        let global = params(&g);
        let k = AttackKnowledge::new(Knowledge::Full, &global, &ps, 1).unwrap();
        for s in reversed_direction(&k) {
            prop_assert!(s == -1.0 || s == 0.0 || s == 1.0);
        }
    }

    #[test]
    fn rho_is_symmetric_in_pair_and_complementary_under_swap(scores in prop::collection::vec(-4.0f64..4.0, 2..10), seed in any::<u64>(), a in 0usize..10, b in 0usize..10) {
        let n = scores.len();
        let (a, b) = (a % n, b % n);
        prop_assume!(a != b);
        let list = sample_from_scores(&scores, n, &mut stream(seed, &[])).unwrap();
        let mut docs = list.docs.clone();
        let pa = docs.iter().position(|&d| d == a).unwrap();
        let pb = docs.iter().position(|&d| d == b).unwrap();
        docs.swap(pa, pb);
        let swapped = RankedList { log_prob: list_log_prob(&scores, &docs), docs };
        let r = rho_from_scores(&scores, &list, a, b).unwrap();
        let r_swapped = rho_from_scores(&scores, &swapped, a, b).unwrap();
        prop_assert_eq!(r + r_swapped, 1.0);
        prop_assert_eq!(r, rho_from_scores(&scores, &list, b, a).unwrap());
        prop_assert!((0.0..=1.0).contains(&r));
    }
}
