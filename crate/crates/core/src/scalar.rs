//! Scalar abstraction shared by every numeric module.
//!
//! Model parameters, feature vectors and aggregation arithmetic are generic
//! over [`Scalar`], implemented for `f32` and `f64`. Simulation constants
//! (click probabilities, privacy budgets) stay in `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` constant into this scalar type.
    #[inline]
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 constant must be representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar must convert to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

const PAIRWISE_BLOCK: usize = 8;

/// Pairwise (cascade) summation. The reduction tree depends only on the
/// slice length, so the result is reproducible for a given input order.
pub fn pairwise_sum<S: Scalar>(values: &[S]) -> S {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().fold(S::zero(), |acc, &v| acc + v);
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).fold(S::zero(), |acc, (&x, &y)| acc + x * y)
}

pub fn l2_norm<S: Scalar>(a: &[S]) -> S {
    a.iter().fold(S::zero(), |acc, &x| acc + x * x).sqrt()
}

pub fn euclidean<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .fold(S::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y))
        .sqrt()
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

/// `log(sum(exp(values)))` with the maximum subtracted first.
pub fn log_sum_exp<S: Scalar>(values: &[S]) -> S {
    let max = values.iter().copied().fold(S::neg_infinity(), S::max);
    if max == S::neg_infinity() {
        return max;
    }
    let total = values.iter().fold(S::zero(), |acc, &v| acc + (v - max).exp());
    max + total.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_integers() {
        let values: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(pairwise_sum(&values), 5050.0);
        assert_eq!(pairwise_sum::<f64>(&[]), 0.0);
    }

    #[test]
    fn sigmoid_is_symmetric_and_finite_at_extremes() {
        for x in [-800.0, -3.0, 0.0, 2.5, 800.0f64] {
            let s = sigmoid(x);
            assert!(s.is_finite());
            assert!((s + sigmoid(-x) - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_sum_exp_handles_large_inputs() {
        let v = [1000.0f64, 1000.0];
        assert!((log_sum_exp(&v) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp::<f64>(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn f32_path_compiles_and_agrees() {
        let a = [3.0f32, 4.0];
        assert_eq!(l2_norm(&a), 5.0);
        assert_eq!(f32::lit(0.5), 0.5);
    }
}
