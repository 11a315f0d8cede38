//! Federated online learning to rank simulation.
//!
//! Rankers learn from simulated clicks with PDGD or evolution strategies,
//! federated across clients with FedAvg, FedProx or Byzantine-robust
//! aggregation. The crate also covers differential privacy, poisoning
//! attacks and client unlearning.
//!
//! Numeric code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix it to `f64`.

// `!(x > 0.0)` also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod clickmodels;
pub mod data;
pub mod error;
pub mod federation;
pub mod foltres;
pub mod metrics;
pub mod pdgd;
pub mod privacy;
pub mod rankers;
pub mod robustagg;
pub mod scalar;
pub mod seed;
pub mod unlearning;

pub use error::{FoltrError, Result};
pub use scalar::Scalar;

pub type Params = rankers::RankerParams<f64>;
pub type Delta = rankers::ModelDelta<f64>;
pub type Corpus = data::Dataset<f64>;
pub type QueryRecord = data::Query<f64>;
pub type Update = federation::LocalUpdate<f64>;
pub type RunOutput = federation::RunResult<f64>;
pub type EsModel = foltres::EsState<f64>;
pub type SnapshotLog = unlearning::UpdateSnapshotLog<f64>;
