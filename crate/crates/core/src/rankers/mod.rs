//! Linear and one-hidden-layer scoring models over flat parameter vectors.
//!
//! MLP layout (row-major, `F` features, `H` hidden units):
//!
//! | offset            | length | contents                        |
//! |-------------------|--------|---------------------------------|
//! | 0                 | H*F    | input weights, row `j` = unit j |
//! | H*F               | H      | hidden biases                   |
//! | H*F + H           | H      | output weights                  |
//! | H*F + 2H          | 1      | output bias                     |
//!
//! Hidden units use the logistic sigmoid; the output is linear.

mod checkpoint;

pub use checkpoint::{read_checkpoint, read_checkpoint_file, write_checkpoint, write_checkpoint_file, Checkpoint, CheckpointKind};

use rand::Rng;

use crate::error::{check_len, FoltrError, Result};
use crate::scalar::{dot, l2_norm, sigmoid, Scalar};

pub const DEFAULT_HIDDEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    Linear { features: usize },
    Mlp { features: usize, hidden: usize },
}

impl Architecture {
    pub fn param_len(&self) -> usize {
        match *self {
            Self::Linear { features } => features,
            Self::Mlp { features, hidden } => hidden * features + 2 * hidden + 1,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match *self {
            Self::Linear { features } | Self::Mlp { features, .. } => features,
        }
    }
}

macro_rules! flat_vector {
    ($name:ident) => {
        impl<S: Scalar> $name<S> {
            pub fn zeros(arch: Architecture) -> Self {
                Self {
                    arch,
                    values: vec![S::zero(); arch.param_len()],
                }
            }

            pub fn from_values(arch: Architecture, values: Vec<S>) -> Result<Self> {
                check_len(arch.param_len(), values.len())?;
                Ok(Self { arch, values })
            }

            pub fn arch(&self) -> Architecture {
                self.arch
            }

            pub fn values(&self) -> &[S] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [S] {
                &mut self.values
            }

            pub fn into_values(self) -> Vec<S> {
                self.values
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn norm(&self) -> S {
                l2_norm(&self.values)
            }

            pub fn scaled(&self, factor: S) -> Self {
                Self {
                    arch: self.arch,
                    values: self.values.iter().map(|&v| v * factor).collect(),
                }
            }

            pub fn check_same_shape<T>(&self, other: &T) -> Result<()>
            where
                T: HasArch,
            {
                if self.arch != other.architecture() {
                    return Err(FoltrError::Shape {
                        expected: self.arch.param_len(),
                        found: other.architecture().param_len(),
                    });
                }
                Ok(())
            }
        }

        impl<S: Scalar> HasArch for $name<S> {
            fn architecture(&self) -> Architecture {
                self.arch
            }
        }
    };
}

pub trait HasArch {
    fn architecture(&self) -> Architecture;
}

/// Model parameters θ.
#[derive(Debug, Clone, PartialEq)]
pub struct RankerParams<S> {
    arch: Architecture,
    values: Vec<S>,
}

/// A difference of parameter vectors, or a gradient with the same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelDelta<S> {
    arch: Architecture,
    values: Vec<S>,
}

flat_vector!(RankerParams);
flat_vector!(ModelDelta);

impl<S: Scalar> RankerParams<S> {
    /// Initial model: zeros for the linear ranker, seeded Xavier-uniform
    /// weights (zero biases) for the MLP.
    pub fn init<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        match arch {
            Architecture::Linear { .. } => Self::zeros(arch),
            Architecture::Mlp { features, hidden } => {
                let mut p = Self::zeros(arch);
                let limit_in = (6.0 / (features + hidden) as f64).sqrt();
                let limit_out = (6.0 / (hidden + 1) as f64).sqrt();
                let (w1, rest) = p.values.split_at_mut(hidden * features);
                for w in w1 {
                    *w = S::lit(rng.random_range(-limit_in..=limit_in));
                }
                for w in &mut rest[hidden..2 * hidden] {
                    *w = S::lit(rng.random_range(-limit_out..=limit_out));
                }
                p
            }
        }
    }

    fn check_features(&self, x: &[S]) -> Result<()> {
        check_len(self.arch.feature_dim(), x.len())
    }

    /// Model score for one document.
    pub fn score(&self, x: &[S]) -> Result<S> {
        self.check_features(x)?;
        Ok(self.score_unchecked(x))
    }

    pub(crate) fn score_unchecked(&self, x: &[S]) -> S {
        match self.arch {
            Architecture::Linear { .. } => dot(&self.values, x),
            Architecture::Mlp { features, hidden } => {
                let (w1, rest) = self.values.split_at(hidden * features);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut out = b2[0];
                for j in 0..hidden {
                    let h = sigmoid(dot(&w1[j * features..(j + 1) * features], x) + b1[j]);
                    out = out + w2[j] * h;
                }
                out
            }
        }
    }

    /// Scores a batch of documents.
    pub fn scores(&self, docs: &[&[S]]) -> Result<Vec<S>> {
        docs.iter().map(|x| self.score(x)).collect()
    }

    /// ∂score/∂θ at one document.
    pub fn score_gradient(&self, x: &[S]) -> Result<ModelDelta<S>> {
        self.check_features(x)?;
        let mut grad = ModelDelta::zeros(self.arch);
        self.accumulate_gradient(x, S::one(), &mut grad.values);
        Ok(grad)
    }

    /// Adds `coef * ∂score/∂θ` at `x` into `acc`.
    pub(crate) fn accumulate_gradient(&self, x: &[S], coef: S, acc: &mut [S]) {
        match self.arch {
            Architecture::Linear { .. } => {
                for (a, &xi) in acc.iter_mut().zip(x) {
                    *a = *a + coef * xi;
                }
            }
            Architecture::Mlp { features, hidden } => {
                let (w1, rest) = self.values.split_at(hidden * features);
                let (b1, rest) = rest.split_at(hidden);
                let w2 = &rest[..hidden];
                let (g_w1, g_rest) = acc.split_at_mut(hidden * features);
                let (g_b1, g_rest) = g_rest.split_at_mut(hidden);
                let (g_w2, g_b2) = g_rest.split_at_mut(hidden);
                for j in 0..hidden {
                    let h = sigmoid(dot(&w1[j * features..(j + 1) * features], x) + b1[j]);
                    let back = coef * w2[j] * h * (S::one() - h);
                    for (g, &xi) in g_w1[j * features..(j + 1) * features].iter_mut().zip(x) {
                        *g = *g + back * xi;
                    }
                    g_b1[j] = g_b1[j] + back;
                    g_w2[j] = g_w2[j] + coef * h;
                }
                g_b2[0] = g_b2[0] + coef;
            }
        }
    }

    /// θ + lr·delta.
    pub fn apply_update(&self, delta: &ModelDelta<S>, lr: S) -> Result<Self> {
        self.check_same_shape(delta)?;
        Ok(Self {
            arch: self.arch,
            values: self
                .values
                .iter()
                .zip(&delta.values)
                .map(|(&t, &d)| t + lr * d)
                .collect(),
        })
    }

    /// `self - base` as an update vector.
    pub fn delta_from(&self, base: &Self) -> Result<ModelDelta<S>> {
        self.check_same_shape(base)?;
        Ok(ModelDelta {
            arch: self.arch,
            values: self.values.iter().zip(&base.values).map(|(&a, &b)| a - b).collect(),
        })
    }
}

impl<S: Scalar> ModelDelta<S> {
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            arch: self.arch,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| a + b).collect(),
        })
    }

    pub fn neg(&self) -> Self {
        self.scaled(-S::one())
    }

    pub fn as_params(&self) -> RankerParams<S> {
        RankerParams {
            arch: self.arch,
            values: self.values.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::stream;

    const LIN2: Architecture = Architecture::Linear { features: 2 };

    #[test]
    fn linear_scores() {
        let zero = RankerParams::<f64>::zeros(LIN2);
        assert_eq!(zero.score(&[3.0, 5.0]).unwrap(), 0.0);
        let p = RankerParams::from_values(LIN2, vec![1.0, 0.0]).unwrap();
        assert_eq!(p.score(&[3.0, 5.0]).unwrap(), 3.0);
        assert!(p.score(&[1.0]).is_err());
    }

    #[test]
    fn linear_gradient_is_features() {
        let p = RankerParams::from_values(LIN2, vec![0.3, -2.0]).unwrap();
        assert_eq!(p.score_gradient(&[3.0, 5.0]).unwrap().values(), &[3.0, 5.0]);
        assert_eq!(p.score_gradient(&[0.0, 0.0]).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn mlp_zero_output_weights_score_zero() {
        let arch = Architecture::Mlp { features: 3, hidden: 4 };
        let mut p = RankerParams::<f64>::init(arch, &mut stream(1, &[]));
        let n = arch.param_len();
        for v in &mut p.values_mut()[n - 5..] {
            *v = 0.0;
        }
        assert_eq!(p.score(&[1.0, -2.0, 7.0]).unwrap(), 0.0);
    }

    #[test]
    fn mlp_layout_length() {
        let arch = Architecture::Mlp { features: 46, hidden: 64 };
        assert_eq!(arch.param_len(), 46 * 64 + 64 + 64 + 1);
    }

    #[test]
    fn apply_update_arithmetic() {
        let one = Architecture::Linear { features: 1 };
        let p = RankerParams::<f64>::from_values(one, vec![1.0]).unwrap();
        let d = ModelDelta::from_values(one, vec![2.0]).unwrap();
        assert_eq!(p.apply_update(&d, 0.0).unwrap(), p);
        assert!((p.apply_update(&d, 0.1).unwrap().values()[0] - 1.2).abs() < 1e-15);
        let back = p.apply_update(&d, 0.1).unwrap().apply_update(&d.neg(), 0.1).unwrap();
        assert!((back.values()[0] - 1.0).abs() < 1e-12);
        let wrong = ModelDelta::<f64>::zeros(LIN2);
        assert!(p.apply_update(&wrong, 1.0).is_err());
    }

    #[test]
    fn xavier_init_is_seeded_and_bounded() {
        let arch = Architecture::Mlp { features: 5, hidden: 64 };
        let a = RankerParams::<f64>::init(arch, &mut stream(4, &[]));
        let b = RankerParams::<f64>::init(arch, &mut stream(4, &[]));
        assert_eq!(a, b);
        let limit = (6.0f64 / 69.0).sqrt();
        assert!(a.values()[..320].iter().all(|w| w.abs() <= limit));
        assert!(a.values()[320..384].iter().all(|&b| b == 0.0));
        assert_eq!(RankerParams::<f64>::init(LIN2, &mut stream(4, &[])), RankerParams::zeros(LIN2));
    }
}
