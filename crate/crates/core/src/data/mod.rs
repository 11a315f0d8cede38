//! In-memory learning-to-rank corpus and federated partitioning.

mod letor;
mod partition;
mod plan_file;
mod synthetic;

pub use letor::{parse_letor, read_letor_file, write_letor, ParseOptions};
pub use partition::{
    partition_intent_skew, partition_label_skew, partition_quantity_skew, ClientPlan,
    DocSelection, IntentRelabelTable, PartitionPlan, QueryView, SamplingDomain,
};
pub use plan_file::{read_plan, write_plan};
pub use synthetic::{synthetic_linear, SyntheticSpec};

use crate::error::{FoltrError, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct DocumentFeatures<S> {
    /// Position within the query's candidate list.
    pub doc_index: usize,
    pub features: Vec<S>,
    pub relevance: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query<S> {
    pub query_id: String,
    pub docs: Vec<DocumentFeatures<S>>,
}

impl<S> Query<S> {
    pub fn grades(&self) -> Vec<u8> {
        self.docs.iter().map(|d| d.relevance).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<S> {
    pub name: String,
    pub feature_dim: usize,
    pub max_grade: u8,
    pub train: Vec<Query<S>>,
    pub test: Vec<Query<S>>,
}

impl<S: Scalar> Dataset<S> {
    /// Builds a dataset from already parsed splits, checking that both
    /// splits agree with the declared feature dimension and grade scale.
    pub fn new(
        name: impl Into<String>,
        feature_dim: usize,
        max_grade: u8,
        train: Vec<Query<S>>,
        test: Vec<Query<S>>,
    ) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            feature_dim,
            max_grade,
            train,
            test,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        for q in self.train.iter().chain(&self.test) {
            if q.docs.is_empty() {
                return Err(FoltrError::Schema(format!("query {} has no documents", q.query_id)));
            }
            for (i, d) in q.docs.iter().enumerate() {
                if d.doc_index != i {
                    return Err(FoltrError::Schema(format!(
                        "query {}: doc_index {} at position {i}",
                        q.query_id, d.doc_index
                    )));
                }
                if d.features.len() != self.feature_dim {
                    return Err(FoltrError::Schema(format!(
                        "query {}: document {i} has {} features, dataset declares {}",
                        q.query_id,
                        d.features.len(),
                        self.feature_dim
                    )));
                }
                if d.relevance > self.max_grade {
                    return Err(FoltrError::Schema(format!(
                        "query {}: grade {} exceeds scale maximum {}",
                        q.query_id, d.relevance, self.max_grade
                    )));
                }
            }
        }
        Ok(())
    }

    /// Merges separately parsed train and test files. Feature vectors are
    /// widened to the larger dimension (absent ids are zero) and the grade
    /// scale is the larger of the two.
    pub fn from_splits(name: impl Into<String>, train: Dataset<S>, test: Dataset<S>) -> Result<Self> {
        let dim = train.feature_dim.max(test.feature_dim);
        let grade = train.max_grade.max(test.max_grade);
        let widen = |mut qs: Vec<Query<S>>| {
            for q in &mut qs {
                for d in &mut q.docs {
                    d.features.resize(dim, S::zero());
                }
            }
            qs
        };
        Self::new(name, dim, grade, widen(train.train), widen(test.train))
    }

    pub fn num_grades(&self) -> usize {
        usize::from(self.max_grade) + 1
    }
}
