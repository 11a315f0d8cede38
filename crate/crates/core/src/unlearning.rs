//! Client unlearning by calibrated replay of historical updates.
//!
//! During the original run every client's update `ΔM_{i,t} = θ_{i,t} − θ_t`
//! is stored at rounds `1, 1+Δt, 1+2Δt, ...`. To forget client `c*`, the
//! remaining clients replay those rounds from the same initial model, each
//! running `n′` fresh local steps and rescaling the fresh direction to the
//! stored magnitude before weighted averaging.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{FoltrError, Result};
use crate::federation::{
    client_models, client_round_steps, fedavg, prepare, run_experiment, ClientContext, ExperimentSpec, LocalUpdate,
    Optimizer, PoisonedClient, TraceRow,
};
use crate::data::{Dataset, PartitionPlan};
use crate::metrics::offline_eval;
use crate::rankers::{read_checkpoint_file, write_checkpoint_file, Checkpoint, ModelDelta, RankerParams};
use crate::scalar::Scalar;
use crate::seed::{purpose, stream};

pub const DEFAULT_LOCAL_STEPS: usize = 3;
pub const DEFAULT_SNAPSHOT_INTERVAL: usize = 10;
pub const DEFAULT_POISON_Z: f64 = 2.0;

/// Stored per-client update deltas at the snapshot rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateSnapshotLog<S> {
    interval: usize,
    total_rounds: usize,
    entries: BTreeMap<usize, BTreeMap<usize, ModelDelta<S>>>,
}

impl<S: Scalar> UpdateSnapshotLog<S> {
    pub fn new(interval: usize, total_rounds: usize) -> Result<Self> {
        if interval == 0 {
            return Err(FoltrError::Config("snapshot interval must be at least 1".into()));
        }
        Ok(Self {
            interval,
            total_rounds,
            entries: BTreeMap::new(),
        })
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn total_rounds(&self) -> usize {
        self.total_rounds
    }

    /// Snapshot rounds `1, 1+Δt, ...` up to `T`; `⌈T/Δt⌉` of them.
    pub fn schedule(&self) -> Vec<usize> {
        (1..=self.total_rounds).step_by(self.interval).collect()
    }

    pub fn is_snapshot_round(&self, round: usize) -> bool {
        round >= 1 && round <= self.total_rounds && (round - 1).is_multiple_of(self.interval)
    }

    pub fn record(&mut self, client: usize, round: usize, delta: ModelDelta<S>) -> Result<()> {
        if !self.is_snapshot_round(round) {
            return Err(FoltrError::Config(format!("round {round} is not a snapshot round")));
        }
        let per_client = self.entries.entry(client).or_default();
        if per_client.keys().next_back().is_some_and(|&last| last >= round) {
            return Err(FoltrError::Config(format!(
                "snapshots for client {client} must be recorded in increasing round order"
            )));
        }
        per_client.insert(round, delta);
        Ok(())
    }

    pub fn get(&self, client: usize, round: usize) -> Result<&ModelDelta<S>> {
        self.entries
            .get(&client)
            .and_then(|m| m.get(&round))
            .ok_or(FoltrError::MissingSnapshot { client, round })
    }

    pub fn clients(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn snapshot_count(&self, client: usize) -> usize {
        self.entries.get(&client).map_or(0, BTreeMap::len)
    }

    /// Writes `<dir>/client_<id>/round_<t>.delta` for every entry.
    pub fn persist(&self, dir: &Path) -> Result<()> {
        for (client, rounds) in &self.entries {
            for (round, delta) in rounds {
                let path = dir.join(format!("client_{client}")).join(format!("round_{round}.delta"));
                write_checkpoint_file(&Checkpoint::Delta(delta.clone()), &path)?;
            }
        }
        Ok(())
    }

    /// Reads the snapshots of `clients` for every scheduled round.
    pub fn load(dir: &Path, interval: usize, total_rounds: usize, clients: &[usize]) -> Result<Self> {
        let mut log = Self::new(interval, total_rounds)?;
        for &client in clients {
            for round in log.schedule() {
                let path = dir.join(format!("client_{client}")).join(format!("round_{round}.delta"));
                if !path.exists() {
                    return Err(FoltrError::MissingSnapshot { client, round });
                }
                let delta = read_checkpoint_file(&path)?.into_delta()?;
                log.record(client, round, delta)?;
            }
        }
        Ok(log)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnlearnConfig {
    pub client: usize,
    pub local_steps: usize,
    pub snapshot_interval: usize,
    pub poison_z: f64,
}

impl UnlearnConfig {
    pub fn new(client: usize) -> Self {
        Self {
            client,
            local_steps: DEFAULT_LOCAL_STEPS,
            snapshot_interval: DEFAULT_SNAPSHOT_INTERVAL,
            poison_z: DEFAULT_POISON_Z,
        }
    }

    pub fn validate(&self, local_interactions: usize) -> Result<()> {
        if self.local_steps == 0 || self.snapshot_interval == 0 {
            return Err(FoltrError::Config("local_steps and snapshot_interval must be at least 1".into()));
        }
        if self.local_steps >= local_interactions {
            log::warn!(
                "unlearning uses {} local steps, not fewer than the original {local_interactions}",
                self.local_steps
            );
        }
        if !(self.poison_z >= 0.0 && self.poison_z.is_finite()) {
            return Err(FoltrError::Config("poison z must be nonnegative".into()));
        }
        Ok(())
    }
}

/// `‖historical‖ · fresh / ‖fresh‖`. A zero fresh update carries no
/// direction and yields a zero delta.
pub fn calibrate_update<S: Scalar>(historical: &ModelDelta<S>, fresh: &ModelDelta<S>) -> Result<ModelDelta<S>> {
    historical.check_same_shape(fresh)?;
    let fresh_norm = fresh.norm();
    if fresh_norm == S::zero() {
        log::warn!("fresh update is zero; calibrated update set to zero");
        return Ok(ModelDelta::zeros(fresh.arch()));
    }
    Ok(fresh.scaled(historical.norm() / fresh_norm))
}

/// `ΔM^mal = −z·ΔM^local − (z+1)·M_g`, so that `M_g + ΔM^mal = −z·M^local`.
pub fn poison_eval_update<S: Scalar>(
    local_delta: &ModelDelta<S>,
    global: &RankerParams<S>,
    z: S,
) -> Result<ModelDelta<S>> {
    global.check_same_shape(local_delta)?;
    let values = local_delta
        .values()
        .iter()
        .zip(global.values())
        .map(|(&d, &g)| -z * d - (z + S::one()) * g)
        .collect();
    ModelDelta::from_values(global.arch(), values)
}

#[derive(Debug, Clone)]
pub struct UnlearnResult<S> {
    pub params: RankerParams<S>,
    /// Row `k` follows the `k`-th replayed snapshot round; online columns
    /// are zero since no users are served during replay.
    pub trace: Vec<TraceRow>,
    pub local_interactions: u64,
    pub rounds: usize,
}

/// Replays the stored rounds without `config.client`, starting from the
/// same initial model as the original run described by `spec`.
pub fn run_unlearning<S: Scalar>(
    spec: &ExperimentSpec,
    dataset: &Dataset<S>,
    plan: &PartitionPlan,
    log: &UpdateSnapshotLog<S>,
    config: &UnlearnConfig,
) -> Result<UnlearnResult<S>> {
    spec.validate(dataset, plan)?;
    config.validate(spec.round.local_interactions)?;
    if spec.optimizer != Optimizer::Pdgd {
        return Err(FoltrError::Config("unlearning replays fpdgd updates".into()));
    }
    let (plan, mut global) = prepare(spec, dataset, plan)?;
    let all = spec.participants();
    let models = client_models(spec, dataset, &all)?;
    let remaining: Vec<(usize, &_)> = all
        .iter()
        .copied()
        .zip(&models)
        .filter(|&(c, _)| c != config.client)
        .collect();
    let schedule = log.schedule();
    let mut trace = vec![TraceRow {
        round: 0,
        offline_ndcg: offline_eval(&global, &dataset.test, spec.cutoff)?,
        online_cum_ndcg: 0.0,
        maxrr_mean: 0.0,
    }];
    let mut local_interactions = 0u64;
    for (k, &t) in schedule.iter().enumerate() {
        let updates = remaining
            .iter()
            .map(|&(c, model)| {
                let ctx = ClientContext {
                    client_id: c,
                    dataset,
                    plan: &plan.clients[c],
                    relabel: plan.relabel.as_ref(),
                    click_model: model,
                    config: &spec.round,
                };
                let mut rng = stream(spec.master_seed, &[purpose::UNLEARN, spec.repetition, t as u64, c as u64]);
                let (fresh, _) = client_round_steps(&global, &ctx, config.local_steps, &mut rng)?;
                let calibrated = calibrate_update(log.get(c, t)?, &fresh.params.delta_from(&global)?)?;
                Ok(LocalUpdate {
                    client_id: c,
                    params: global.apply_update(&calibrated, S::one())?,
                    n_c: fresh.n_c,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        local_interactions += updates.iter().map(|u| u.n_c as u64).sum::<u64>();
        global = fedavg(&updates)?;
        trace.push(TraceRow {
            round: k + 1,
            offline_ndcg: offline_eval(&global, &dataset.test, spec.cutoff)?,
            online_cum_ndcg: 0.0,
            maxrr_mean: 0.0,
        });
    }
    let expected = (remaining.len() * config.local_steps * schedule.len()) as u64;
    assert_eq!(local_interactions, expected, "unlearning interaction bookkeeping");
    Ok(UnlearnResult {
        params: global,
        trace,
        local_interactions,
        rounds: schedule.len(),
    })
}

/// One configuration of the unlearning comparison.
#[derive(Debug, Clone)]
pub struct BenchmarkEntry {
    pub name: &'static str,
    pub final_ndcg: f64,
    pub local_interactions: u64,
    pub trace: Vec<TraceRow>,
}

#[derive(Debug, Clone)]
pub struct UnlearnReport {
    /// Poisoned, honest, retrained-without and unlearned, in that order.
    pub entries: Vec<BenchmarkEntry>,
    /// `|unlearned − retrained|` final offline nDCG.
    pub gap: f64,
    /// Retraining interactions divided by unlearning interactions.
    pub savings: f64,
}

pub const REPORT_HEADER: &str = "configuration,final_offline_ndcg10,local_updates";

impl UnlearnReport {
    pub fn entry(&self, name: &str) -> Option<&BenchmarkEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(out, "{},{},{}", e.name, e.final_ndcg, e.local_interactions);
        }
        out
    }
}

fn final_ndcg(trace: &[TraceRow]) -> f64 {
    trace.last().map_or(0.0, |r| r.offline_ndcg)
}

/// Runs the poisoned (`9H-1M`), honest (`10H-0M`) and retrained
/// (`9H-0M`) federations plus the unlearning replay under shared seeds.
/// Names follow the ten-client setting regardless of the client count.
pub fn unlearning_benchmark<S: Scalar>(
    base: &ExperimentSpec,
    dataset: &Dataset<S>,
    plan: &PartitionPlan,
    config: &UnlearnConfig,
    snapshot_dir: Option<&Path>,
) -> Result<UnlearnReport> {
    let mut poisoned = base.clone();
    poisoned.poisoned_client = Some(PoisonedClient {
        client: config.client,
        z: config.poison_z,
    });
    poisoned.snapshot_interval = Some(config.snapshot_interval);
    let run_poisoned = run_experiment(&poisoned, dataset, plan)?;
    let log = run_poisoned
        .snapshots
        .as_ref()
        .expect("snapshot interval is set");
    if let Some(dir) = snapshot_dir {
        log.persist(dir)?;
    }

    let mut honest = base.clone();
    honest.poisoned_client = None;
    honest.snapshot_interval = None;
    let run_honest = run_experiment(&honest, dataset, plan)?;

    let mut retrain = honest.clone();
    retrain.excluded_clients.push(config.client);
    let run_retrain = run_experiment(&retrain, dataset, plan)?;

    let unlearned = run_unlearning(&poisoned, dataset, plan, log, config)?;

    let entries = vec![
        BenchmarkEntry {
            name: "9H-1M",
            final_ndcg: final_ndcg(&run_poisoned.trace),
            local_interactions: run_poisoned.local_interactions,
            trace: run_poisoned.trace,
        },
        BenchmarkEntry {
            name: "10H-0M",
            final_ndcg: final_ndcg(&run_honest.trace),
            local_interactions: run_honest.local_interactions,
            trace: run_honest.trace,
        },
        BenchmarkEntry {
            name: "9H-0M",
            final_ndcg: final_ndcg(&run_retrain.trace),
            local_interactions: run_retrain.local_interactions,
            trace: run_retrain.trace,
        },
        BenchmarkEntry {
            name: "unlearned",
            final_ndcg: final_ndcg(&unlearned.trace),
            local_interactions: unlearned.local_interactions,
            trace: unlearned.trace,
        },
    ];
    let gap = (entries[3].final_ndcg - entries[2].final_ndcg).abs();
    let savings = entries[2].local_interactions as f64 / entries[3].local_interactions as f64;
    Ok(UnlearnReport { entries, gap, savings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rankers::Architecture;

    const LIN2: Architecture = Architecture::Linear { features: 2 };

    fn delta(v: &[f64]) -> ModelDelta<f64> {
        ModelDelta::from_values(LIN2, v.to_vec()).unwrap()
    }

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate_update(&delta(&[3.0, 0.0]), &delta(&[0.0, 5.0])).unwrap().values(), &[0.0, 3.0]);
        let h = delta(&[1.5, -2.0]);
        let out = calibrate_update(&h, &h.scaled(2.0)).unwrap();
        for (a, b) in out.values().iter().zip(h.values()) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(calibrate_update(&h, &delta(&[0.0, 0.0])).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn poison_update_identity() {
        let g = RankerParams::from_values(LIN2, vec![0.5, -1.0]).unwrap();
        let d = delta(&[0.25, 0.75]);
        let mal = poison_eval_update(&d, &g, 2.0).unwrap();
        let lhs = g.apply_update(&mal, 1.0).unwrap();
        let local = g.apply_update(&d, 1.0).unwrap();
        for (a, b) in lhs.values().iter().zip(local.values()) {
            assert!((a + 2.0 * b).abs() < 1e-12);
        }
        let zero = RankerParams::zeros(LIN2);
        assert_eq!(poison_eval_update(&d, &zero, 2.0).unwrap().values(), &[-0.5, -1.5]);
    }

    #[test]
    fn schedule_counts() {
        let log = UpdateSnapshotLog::<f64>::new(10, 2000).unwrap();
        assert_eq!(log.schedule().len(), 200);
        assert_eq!(UpdateSnapshotLog::<f64>::new(7, 20).unwrap().schedule(), vec![1, 8, 15]);
        assert_eq!(UpdateSnapshotLog::<f64>::new(20, 20).unwrap().schedule(), vec![1]);
        assert!(log.is_snapshot_round(11));
        assert!(!log.is_snapshot_round(10));
    }

    #[test]
    fn log_lookup_and_order() {
        let mut log = UpdateSnapshotLog::new(5, 12).unwrap();
        log.record(3, 1, delta(&[1.0, 0.0])).unwrap();
        log.record(3, 6, delta(&[2.0, 0.0])).unwrap();
        assert!(log.record(3, 6, delta(&[2.0, 0.0])).is_err());
        assert!(log.record(3, 2, delta(&[2.0, 0.0])).is_err());
        assert!(matches!(log.get(3, 11), Err(FoltrError::MissingSnapshot { client: 3, round: 11 })));
        assert_eq!(log.snapshot_count(3), 2);
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = UpdateSnapshotLog::new(2, 3).unwrap();
        for c in [0, 4] {
            log.record(c, 1, delta(&[c as f64, 0.1])).unwrap();
            log.record(c, 3, delta(&[0.3, -(c as f64)])).unwrap();
        }
        log.persist(dir.path()).unwrap();
        assert!(dir.path().join("client_4").join("round_3.delta").exists());
        let back = UpdateSnapshotLog::load(dir.path(), 2, 3, &[0, 4]).unwrap();
        assert_eq!(back, log);
        assert!(matches!(
            UpdateSnapshotLog::<f64>::load(dir.path(), 2, 3, &[1]),
            Err(FoltrError::MissingSnapshot { client: 1, round: 1 })
        ));
    }
}
