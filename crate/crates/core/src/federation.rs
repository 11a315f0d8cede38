//! Round orchestration for federated OLTR.
//!
//! Every round the server broadcasts the global model, all participating
//! clients train locally in parallel, and the returned models are
//! optionally noised, replaced by attackers, and aggregated. Each client
//! round draws from its own stream addressed by
//! `[CLIENT, repetition, round, client]`, so results do not depend on the
//! worker count.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;

use crate::adversary::{craft_model_attack, data_poison_click_spec, AttackConfig, AttackKind, AttackKnowledge};
use crate::clickmodels::{ClickModel, SERP_CAP};
use crate::data::{ClientPlan, Dataset, IntentRelabelTable, PartitionPlan};
use crate::error::{FoltrError, Result};
use crate::foltres::{
    es_interaction, es_server_gradient, privatize, sample_perturbed, EsMessage, EsState, OptimizerState,
    PrivatizationSpec, ServerOptimizer, Sign, DEFAULT_SIGMA,
};
pub use crate::metrics::TraceRow;
use crate::metrics::{ndcg_at_k, offline_eval, OnlineAccumulator, DEFAULT_CUTOFF, DEFAULT_ONLINE_GAMMA};
use crate::pdgd::pdgd_interaction;
use crate::privacy::{privatize_update, DpConfig};
use crate::rankers::{Architecture, ModelDelta, RankerParams};
use crate::robustagg::{coord_median, krum, multi_krum, trimmed_mean};
use crate::scalar::{pairwise_sum, Scalar};
use crate::seed::{derive_seed, purpose, stream, StreamRng};
use crate::unlearning::{poison_eval_update, UpdateSnapshotLog};

pub const DEFAULT_PDGD_LEARNING_RATE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalUpdate<S> {
    pub client_id: usize,
    pub params: RankerParams<S>,
    pub n_c: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationRule {
    FedAvg,
    Krum,
    /// Mean of the `keep` best-scored updates; `None` keeps `n − m`.
    MultiKrum { keep: Option<usize> },
    /// Drops `beta` values per side; `None` uses `m`.
    TrimmedMean { beta: Option<usize> },
    Median,
}

impl AggregationRule {
    pub fn name(&self) -> &'static str {
        match self {
            AggregationRule::FedAvg => "fedavg",
            AggregationRule::Krum => "krum",
            AggregationRule::MultiKrum { .. } => "multi_krum",
            AggregationRule::TrimmedMean { .. } => "trimmed_mean",
            AggregationRule::Median => "median",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "fedavg" => Some(AggregationRule::FedAvg),
            "krum" => Some(AggregationRule::Krum),
            "multi_krum" => Some(AggregationRule::MultiKrum { keep: None }),
            "trimmed_mean" => Some(AggregationRule::TrimmedMean { beta: None }),
            "median" => Some(AggregationRule::Median),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FedProxConfig {
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataShareConfig {
    pub alpha: f64,
    /// Central PDGD interactions on the shared set before round 1.
    pub warmup_interactions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig {
    pub num_clients: usize,
    pub local_interactions: usize,
    pub global_rounds: usize,
    pub learning_rate: f64,
    pub rule: AggregationRule,
    pub fedprox: Option<FedProxConfig>,
    pub data_share: Option<DataShareConfig>,
    pub serp_len: usize,
}

impl RoundConfig {
    pub fn new(num_clients: usize, local_interactions: usize, global_rounds: usize) -> Self {
        Self {
            num_clients,
            local_interactions,
            global_rounds,
            learning_rate: DEFAULT_PDGD_LEARNING_RATE,
            rule: AggregationRule::FedAvg,
            fedprox: None,
            data_share: None,
            serp_len: SERP_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(FoltrError::Config("num_clients must be at least 1".into()));
        }
        if self.local_interactions == 0 {
            return Err(FoltrError::Config("local_interactions must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(FoltrError::Config("learning_rate must be positive".into()));
        }
        if self.serp_len == 0 || self.serp_len > SERP_CAP {
            return Err(FoltrError::Config(format!("serp_len must lie in 1..={SERP_CAP}")));
        }
        if let Some(p) = self.fedprox {
            if !(p.mu >= 0.0 && p.mu.is_finite()) {
                return Err(FoltrError::Config("fedprox mu must be nonnegative".into()));
            }
        }
        if let Some(d) = self.data_share {
            if !(0.0..=1.0).contains(&d.alpha) {
                return Err(FoltrError::Config(format!("data share alpha must lie in [0, 1], got {}", d.alpha)));
            }
        }
        Ok(())
    }
}

/// `Σ (n_c / Σn) θ_c`, coordinate-wise with pairwise summation.
pub fn fedavg<S: Scalar>(updates: &[LocalUpdate<S>]) -> Result<RankerParams<S>> {
    let first = updates.first().ok_or(FoltrError::Empty("local updates"))?;
    for u in updates {
        first.params.check_same_shape(&u.params)?;
        if u.n_c == 0 {
            return Err(FoltrError::Config(format!("client {} reported zero interactions", u.client_id)));
        }
    }
    let total = S::lit(updates.iter().map(|u| u.n_c as f64).sum());
    let weights: Vec<S> = updates.iter().map(|u| S::lit(u.n_c as f64) / total).collect();
    let mut column = vec![S::zero(); updates.len()];
    let values = (0..first.params.len())
        .map(|j| {
            for ((c, u), &w) in column.iter_mut().zip(updates).zip(&weights) {
                *c = w * u.params.values()[j];
            }
            pairwise_sum(&column)
        })
        .collect();
    RankerParams::from_values(first.params.arch(), values)
}

/// Applies `rule` with `m` assumed attackers.
pub fn aggregate<S: Scalar>(rule: AggregationRule, updates: &[LocalUpdate<S>], m: usize) -> Result<RankerParams<S>> {
    let params = || updates.iter().map(|u| u.params.clone()).collect::<Vec<_>>();
    match rule {
        AggregationRule::FedAvg => fedavg(updates),
        AggregationRule::Krum => krum(&params(), m),
        AggregationRule::MultiKrum { keep } => {
            let keep = keep.unwrap_or(updates.len().saturating_sub(m).max(1));
            multi_krum(&params(), m, keep)
        }
        AggregationRule::TrimmedMean { beta } => trimmed_mean(&params(), beta.unwrap_or(m)),
        AggregationRule::Median => coord_median(&params()),
    }
}

/// `θ + lr·(Δ − μ(θ − θ_global))`.
pub fn fedprox_local_step<S: Scalar>(
    params: &RankerParams<S>,
    global: &RankerParams<S>,
    pdgd_delta: &ModelDelta<S>,
    lr: S,
    mu: S,
) -> Result<RankerParams<S>> {
    params.check_same_shape(global)?;
    params.check_same_shape(pdgd_delta)?;
    let values = params
        .values()
        .iter()
        .zip(global.values())
        .zip(pdgd_delta.values())
        .map(|((&t, &g), &d)| t + lr * (d - mu * (t - g)))
        .collect();
    RankerParams::from_values(params.arch(), values)
}

/// Draws `⌈α·|train|⌉` distinct training queries, ascending.
pub fn data_share_warmup<S, R: Rng + ?Sized>(dataset: &Dataset<S>, alpha: f64, rng: &mut R) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(FoltrError::Config(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let n = dataset.train.len();
    let k = ((alpha * n as f64).ceil() as usize).min(n);
    let mut shared = sample(rng, n, k).into_vec();
    shared.sort_unstable();
    Ok(shared)
}

/// Central PDGD pre-training over the shared queries.
pub fn warm_start<S: Scalar, R: Rng + ?Sized>(
    params: &RankerParams<S>,
    dataset: &Dataset<S>,
    shared: &[usize],
    click_model: &ClickModel,
    interactions: usize,
    config: &RoundConfig,
    rng: &mut R,
) -> Result<RankerParams<S>> {
    if shared.is_empty() {
        return Ok(params.clone());
    }
    let mut theta = params.clone();
    for _ in 0..interactions {
        let q = &dataset.train[shared[rng.random_range(0..shared.len())]];
        let candidates: Vec<&[S]> = q.docs.iter().map(|d| d.features.as_slice()).collect();
        let grades = q.grades();
        let step = pdgd_interaction(
            &theta,
            &candidates,
            &grades,
            click_model,
            S::lit(config.learning_rate),
            config.serp_len,
            rng,
        )?;
        theta = step.params;
    }
    Ok(theta)
}

/// Per-interaction statistics feeding the online metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionRecord {
    pub serp_ndcg: f64,
    pub max_rr: f64,
}

/// Everything a client needs for one round of local training.
#[derive(Debug, Clone, Copy)]
pub struct ClientContext<'a, S> {
    pub client_id: usize,
    pub dataset: &'a Dataset<S>,
    pub plan: &'a ClientPlan,
    pub relabel: Option<&'a IntentRelabelTable>,
    pub click_model: &'a ClickModel,
    pub config: &'a RoundConfig,
}

impl<S: Scalar> ClientContext<'_, S> {
    pub fn interactions(&self) -> usize {
        self.plan.queries_per_round.unwrap_or(self.config.local_interactions)
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<&[S]>, Vec<u8>) {
        let (q, selection) = self.plan.sample(self.dataset.train.len(), rng);
        let query = &self.dataset.train[q];
        let docs = selection.resolve(query.docs.len());
        let candidates = docs.iter().map(|&d| query.docs[d].features.as_slice()).collect();
        let grades = docs
            .iter()
            .map(|&d| match (self.relabel, self.plan.intent) {
                (Some(table), Some(intent)) => table.grade(q, intent, d),
                _ => query.docs[d].relevance,
            })
            .collect();
        (candidates, grades)
    }
}

/// Runs the client's local PDGD interactions starting from `global`.
pub fn client_round<S: Scalar, R: Rng + ?Sized>(
    global: &RankerParams<S>,
    ctx: &ClientContext<'_, S>,
    rng: &mut R,
) -> Result<(LocalUpdate<S>, Vec<InteractionRecord>)> {
    client_round_steps(global, ctx, ctx.interactions(), rng)
}

/// As [`client_round`] with an explicit interaction count.
pub fn client_round_steps<S: Scalar, R: Rng + ?Sized>(
    global: &RankerParams<S>,
    ctx: &ClientContext<'_, S>,
    steps: usize,
    rng: &mut R,
) -> Result<(LocalUpdate<S>, Vec<InteractionRecord>)> {
    if steps == 0 {
        return Err(FoltrError::Config("a client round needs at least one interaction".into()));
    }
    let lr = S::lit(ctx.config.learning_rate);
    let mut theta = global.clone();
    let mut records = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (candidates, grades) = ctx.draw(rng);
        let step = pdgd_interaction(&theta, &candidates, &grades, ctx.click_model, lr, ctx.config.serp_len, rng)?;
        let shown: Vec<u8> = step.serp.docs.iter().map(|&d| grades[d]).collect();
        records.push(InteractionRecord {
            serp_ndcg: ndcg_at_k(&shown, &grades, DEFAULT_CUTOFF),
            max_rr: crate::metrics::max_rr(&step.clicks),
        });
        theta = match ctx.config.fedprox {
            Some(p) => fedprox_local_step(&theta, global, &step.gradient, lr, S::lit(p.mu))?,
            None => step.params,
        };
    }
    Ok((
        LocalUpdate {
            client_id: ctx.client_id,
            params: theta,
            n_c: steps,
        },
        records,
    ))
}

/// Evolution-strategy settings for the federated ES optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct EsConfig {
    pub sigma: f64,
    pub server: ServerOptimizer,
    pub privatization: Option<PrivatizationSpec>,
}

impl Default for EsConfig {
    fn default() -> Self {
        Self {
            sigma: DEFAULT_SIGMA,
            server: ServerOptimizer::sgd(),
            privatization: None,
        }
    }
}

/// One ES client round. Interactions alternate between the `+` and `−`
/// antithetic perturbations of a shared seed; each sign yields one message
/// whose metric is the mean of its per-interaction (privatized) MaxRR.
pub fn es_client_round<S: Scalar, R: Rng + ?Sized>(
    state: &EsState<S>,
    ctx: &ClientContext<'_, S>,
    es: &EsConfig,
    seed: u64,
    rng: &mut R,
) -> Result<(Vec<EsMessage>, Vec<InteractionRecord>)> {
    let steps = ctx.interactions();
    let perturbed = [
        sample_perturbed(state, seed, Sign::Plus),
        sample_perturbed(state, seed, Sign::Minus),
    ];
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    let mut records = Vec::with_capacity(steps);
    for i in 0..steps {
        let side = i % 2;
        let (candidates, grades) = ctx.draw(rng);
        let out = es_interaction(&perturbed[side], &candidates, &grades, ctx.click_model, ctx.config.serp_len, rng)?;
        let shown: Vec<u8> = out.serp.iter().map(|&d| grades[d]).collect();
        records.push(InteractionRecord {
            serp_ndcg: ndcg_at_k(&shown, &grades, DEFAULT_CUTOFF),
            max_rr: out.max_rr,
        });
        let reported = match &es.privatization {
            Some(spec) => privatize(spec, out.max_rr, rng)?,
            None => out.max_rr,
        };
        sums[side] += reported;
        counts[side] += 1;
    }
    let messages = [Sign::Plus, Sign::Minus]
        .into_iter()
        .zip(sums.iter().zip(&counts))
        .filter(|(_, (_, &c))| c > 0)
        .map(|(sign, (&s, &c))| EsMessage {
            seed,
            metric: s / c as f64,
            sign,
        })
        .collect();
    Ok((messages, records))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Pdgd,
    Es(EsConfig),
}

impl Optimizer {
    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Pdgd => "fpdgd",
            Optimizer::Es(_) => "foltres",
        }
    }
}

/// The unlearning evaluation harness: client `client` submits
/// `θ_g + ΔM^mal` with poisoning strength `z`. `z = 0` disables poisoning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoisonedClient {
    pub client: usize,
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub arch: Architecture,
    pub optimizer: Optimizer,
    pub round: RoundConfig,
    /// One click model shared by all clients, or one per client.
    pub click_models: Vec<ClickModel>,
    pub attack: Option<AttackConfig>,
    /// Attacker count assumed by robust rules; defaults to the attack's.
    pub assumed_attackers: Option<usize>,
    pub privacy: Option<DpConfig>,
    pub poisoned_client: Option<PoisonedClient>,
    /// Client ids that sit out every round.
    pub excluded_clients: Vec<usize>,
    /// Record update snapshots every `Δt` rounds, starting at round 1.
    pub snapshot_interval: Option<usize>,
    pub cutoff: usize,
    pub online_gamma: f64,
    pub master_seed: u64,
    pub repetition: u64,
}

impl ExperimentSpec {
    pub fn new(arch: Architecture, round: RoundConfig, click_model: ClickModel, master_seed: u64) -> Self {
        Self {
            arch,
            optimizer: Optimizer::Pdgd,
            round,
            click_models: vec![click_model],
            attack: None,
            assumed_attackers: None,
            privacy: None,
            poisoned_client: None,
            excluded_clients: Vec::new(),
            snapshot_interval: None,
            cutoff: DEFAULT_CUTOFF,
            online_gamma: DEFAULT_ONLINE_GAMMA,
            master_seed,
            repetition: 0,
        }
    }

    /// Participating client ids in ascending order.
    pub fn participants(&self) -> Vec<usize> {
        (0..self.round.num_clients)
            .filter(|c| !self.excluded_clients.contains(c))
            .collect()
    }

    pub fn num_attackers(&self) -> usize {
        self.attack
            .as_ref()
            .map_or(0, |a| a.num_attackers(self.participants().len()))
    }

    pub fn robust_m(&self) -> usize {
        self.assumed_attackers.unwrap_or_else(|| self.num_attackers())
    }

    pub fn click_model(&self, client: usize) -> &ClickModel {
        if self.click_models.len() == 1 {
            &self.click_models[0]
        } else {
            &self.click_models[client]
        }
    }

    pub fn validate<S: Scalar>(&self, dataset: &Dataset<S>, plan: &PartitionPlan) -> Result<()> {
        self.round.validate()?;
        if self.arch.feature_dim() != dataset.feature_dim {
            return Err(FoltrError::Config(format!(
                "ranker expects {} features, dataset has {}",
                self.arch.feature_dim(),
                dataset.feature_dim
            )));
        }
        if plan.num_clients() != self.round.num_clients {
            return Err(FoltrError::Config(format!(
                "partition has {} clients, federation expects {}",
                plan.num_clients(),
                self.round.num_clients
            )));
        }
        plan.validate(dataset)?;
        if dataset.test.is_empty() {
            return Err(FoltrError::Empty("test queries"));
        }
        match self.click_models.len() {
            1 => {}
            n if n == self.round.num_clients => {}
            n => {
                return Err(FoltrError::Config(format!(
                    "expected 1 or {} click models, got {n}",
                    self.round.num_clients
                )))
            }
        }
        for cm in &self.click_models {
            if cm.max_grade() < usize::from(dataset.max_grade) {
                return Err(FoltrError::Config(format!(
                    "click model {} covers grades up to {}, dataset uses {}",
                    cm.name(),
                    cm.max_grade(),
                    dataset.max_grade
                )));
            }
        }
        let participants = self.participants();
        if participants.is_empty() {
            return Err(FoltrError::Config("every client is excluded".into()));
        }
        if let Some(a) = &self.attack {
            a.validate()?;
            if a.kind.is_model_attack() && self.num_attackers() == 0 {
                log::warn!("attack {} configured with zero attackers", a.kind.name());
            }
            if a.kind == AttackKind::FangKrum
                && !matches!(self.round.rule, AggregationRule::Krum | AggregationRule::MultiKrum { .. })
            {
                log::warn!("fang_krum attack targets Krum but the rule is {}", self.round.rule.name());
            }
            if a.kind == AttackKind::FangTrimmed
                && !matches!(self.round.rule, AggregationRule::TrimmedMean { .. } | AggregationRule::Median)
            {
                log::warn!("fang_trimmed attack targets trimmed mean but the rule is {}", self.round.rule.name());
            }
        }
        if let Some(p) = &self.poisoned_client {
            if !participants.contains(&p.client) {
                return Err(FoltrError::Config(format!("poisoned client {} does not participate", p.client)));
            }
            if !(p.z >= 0.0 && p.z.is_finite()) {
                return Err(FoltrError::Config("poison z must be nonnegative".into()));
            }
        }
        if self.snapshot_interval == Some(0) {
            return Err(FoltrError::Config("snapshot interval must be at least 1".into()));
        }
        OnlineAccumulator::new(self.online_gamma)?;
        if let Optimizer::Es(es) = &self.optimizer {
            if self.round.rule != AggregationRule::FedAvg {
                return Err(FoltrError::Config("the ES optimizer aggregates messages, not models; use fedavg".into()));
            }
            if self.attack.is_some_and(|a| a.kind.is_model_attack()) {
                return Err(FoltrError::Config("model poisoning attacks need the fpdgd optimizer".into()));
            }
            if self.privacy.is_some() {
                return Err(FoltrError::Config(
                    "model noising does not apply to the ES optimizer; use metric privatization".into(),
                ));
            }
            if self.poisoned_client.is_some() || self.snapshot_interval.is_some() {
                return Err(FoltrError::Config("unlearning harness needs the fpdgd optimizer".into()));
            }
            if self.round.fedprox.is_some() {
                return Err(FoltrError::Config("fedprox needs the fpdgd optimizer".into()));
            }
            if !(es.sigma > 0.0) {
                return Err(FoltrError::Config("ES sigma must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct RunResult<S> {
    pub trace: Vec<TraceRow>,
    pub final_params: RankerParams<S>,
    pub snapshots: Option<UpdateSnapshotLog<S>>,
    /// Total local interactions across all clients and rounds.
    pub local_interactions: u64,
}

fn client_stream(spec: &ExperimentSpec, round: usize, client: usize) -> StreamRng {
    stream(
        spec.master_seed,
        &[purpose::CLIENT, spec.repetition, round as u64, client as u64],
    )
}

/// The initial global model for a repetition.
pub fn initial_params<S: Scalar>(spec: &ExperimentSpec) -> RankerParams<S> {
    RankerParams::init(spec.arch, &mut stream(spec.master_seed, &[purpose::INIT, spec.repetition]))
}

/// The plan after data sharing and the warm-started initial model.
pub fn prepare<S: Scalar>(
    spec: &ExperimentSpec,
    dataset: &Dataset<S>,
    plan: &PartitionPlan,
) -> Result<(PartitionPlan, RankerParams<S>)> {
    let mut plan = plan.clone();
    let mut global = initial_params(spec);
    if let Some(share) = spec.round.data_share {
        let mut rng = stream(spec.master_seed, &[purpose::WARMUP, spec.repetition, 0]);
        let shared = data_share_warmup(dataset, share.alpha, &mut rng)?;
        plan = plan.with_shared_queries(dataset, &shared);
        let mut rng = stream(spec.master_seed, &[purpose::WARMUP, spec.repetition, 1]);
        global = warm_start(
            &global,
            dataset,
            &shared,
            &spec.click_models[0],
            share.warmup_interactions,
            &spec.round,
            &mut rng,
        )?;
    }
    Ok((plan, global))
}

struct Metrics {
    online: OnlineAccumulator,
    trace: Vec<TraceRow>,
    cutoff: usize,
}

impl Metrics {
    fn new<S: Scalar>(spec: &ExperimentSpec, global: &RankerParams<S>, dataset: &Dataset<S>) -> Result<Self> {
        let mut m = Self {
            online: OnlineAccumulator::new(spec.online_gamma)?,
            trace: Vec::with_capacity(spec.round.global_rounds + 1),
            cutoff: spec.cutoff,
        };
        m.trace.push(TraceRow {
            round: 0,
            offline_ndcg: offline_eval(global, &dataset.test, spec.cutoff)?,
            online_cum_ndcg: 0.0,
            maxrr_mean: 0.0,
        });
        Ok(m)
    }

    fn record<S: Scalar>(
        &mut self,
        round: usize,
        global: &RankerParams<S>,
        dataset: &Dataset<S>,
        records: &[Vec<InteractionRecord>],
    ) -> Result<()> {
        let mut rr = Vec::new();
        for r in records.iter().flatten() {
            self.online.step(r.serp_ndcg);
            rr.push(r.max_rr);
        }
        let maxrr_mean = if rr.is_empty() {
            0.0
        } else {
            pairwise_sum(&rr) / rr.len() as f64
        };
        self.trace.push(TraceRow {
            round,
            offline_ndcg: offline_eval(global, &dataset.test, self.cutoff)?,
            online_cum_ndcg: self.online.value(),
            maxrr_mean,
        });
        Ok(())
    }
}

/// Runs `T` global rounds and returns the per-round metric trace, with
/// row 0 describing the initial model.
pub fn run_experiment<S: Scalar>(
    spec: &ExperimentSpec,
    dataset: &Dataset<S>,
    plan: &PartitionPlan,
) -> Result<RunResult<S>> {
    spec.validate(dataset, plan)?;
    match &spec.optimizer {
        Optimizer::Pdgd => run_pdgd(spec, dataset, plan),
        Optimizer::Es(es) => run_es(spec, es, dataset, plan),
    }
}

pub(crate) fn client_models<S: Scalar>(
    spec: &ExperimentSpec,
    dataset: &Dataset<S>,
    participants: &[usize],
) -> Result<Vec<ClickModel>> {
    let poisoned = match spec.attack {
        Some(a) if a.kind == AttackKind::DataPoison => a.num_attackers(participants.len()),
        _ => 0,
    };
    let poison = if poisoned > 0 {
        Some(ClickModel::Ccm(data_poison_click_spec(dataset.max_grade)?))
    } else {
        None
    };
    Ok(participants
        .iter()
        .enumerate()
        .map(|(slot, &c)| match &poison {
            Some(p) if slot < poisoned => p.clone(),
            _ => spec.click_model(c).clone(),
        })
        .collect())
}

fn run_pdgd<S: Scalar>(spec: &ExperimentSpec, dataset: &Dataset<S>, plan: &PartitionPlan) -> Result<RunResult<S>> {
    let (plan, mut global) = prepare(spec, dataset, plan)?;
    let participants = spec.participants();
    let models = client_models(spec, dataset, &participants)?;
    let m_attack = spec.num_attackers();
    let m_robust = spec.robust_m();
    let mut metrics = Metrics::new(spec, &global, dataset)?;
    let mut snapshots = spec
        .snapshot_interval
        .map(|dt| UpdateSnapshotLog::new(dt, spec.round.global_rounds))
        .transpose()?;
    let mut local_interactions = 0u64;

    for round in 1..=spec.round.global_rounds {
        let results: Vec<(LocalUpdate<S>, Vec<InteractionRecord>)> = participants
            .par_iter()
            .zip(models.par_iter())
            .map(|(&c, model)| {
                let ctx = ClientContext {
                    client_id: c,
                    dataset,
                    plan: &plan.clients[c],
                    relabel: plan.relabel.as_ref(),
                    click_model: model,
                    config: &spec.round,
                };
                let (mut update, records) = client_round(&global, &ctx, &mut client_stream(spec, round, c))?;
                if let Some(dp) = &spec.privacy {
                    let mut rng = stream(
                        spec.master_seed,
                        &[purpose::PRIVACY, spec.repetition, round as u64, c as u64],
                    );
                    update.params = privatize_update(&update.params, dp, &mut rng);
                }
                Ok((update, records))
            })
            .collect::<Result<_>>()?;
        let (mut updates, records): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        local_interactions += updates.iter().map(|u| u.n_c as u64).sum::<u64>();

        if let Some(p) = spec.poisoned_client.filter(|p| p.z != 0.0) {
            let u = updates
                .iter_mut()
                .find(|u| u.client_id == p.client)
                .expect("poisoned client participates");
            let delta = u.params.delta_from(&global)?;
            let mal = poison_eval_update(&delta, &global, S::lit(p.z))?;
            u.params = global.apply_update(&mal, S::one())?;
        }

        if let Some(attack) = spec.attack.filter(|a| a.kind.is_model_attack() && m_attack > 0) {
            let before: Vec<RankerParams<S>> = updates.iter().map(|u| u.params.clone()).collect();
            let knowledge = AttackKnowledge::new(attack.knowledge, &global, &before, m_attack)?;
            let mut rng = stream(spec.master_seed, &[purpose::ATTACK, spec.repetition, round as u64]);
            let crafted = craft_model_attack(&attack, &knowledge, &mut rng)?;
            for (u, c) in updates.iter_mut().zip(crafted) {
                u.params = c;
            }
        }

        if let Some(log) = snapshots.as_mut() {
            if log.is_snapshot_round(round) {
                for u in &updates {
                    log.record(u.client_id, round, u.params.delta_from(&global)?)?;
                }
            }
        }

        global = aggregate(spec.round.rule, &updates, m_robust)?;
        metrics.record(round, &global, dataset, &records)?;
    }

    Ok(RunResult {
        trace: metrics.trace,
        final_params: global,
        snapshots,
        local_interactions,
    })
}

fn run_es<S: Scalar>(
    spec: &ExperimentSpec,
    es: &EsConfig,
    dataset: &Dataset<S>,
    plan: &PartitionPlan,
) -> Result<RunResult<S>> {
    let (plan, mean) = prepare(spec, dataset, plan)?;
    let participants = spec.participants();
    let models = client_models(spec, dataset, &participants)?;
    let mut state = EsState::new(mean, S::lit(es.sigma))?;
    let mut optimizer = OptimizerState::new(es.server, state.mean.len());
    let mut metrics = Metrics::new(spec, &state.mean, dataset)?;
    let mut local_interactions = 0u64;

    for round in 1..=spec.round.global_rounds {
        let results: Vec<(Vec<EsMessage>, Vec<InteractionRecord>)> = participants
            .par_iter()
            .zip(models.par_iter())
            .map(|(&c, model)| {
                let ctx = ClientContext {
                    client_id: c,
                    dataset,
                    plan: &plan.clients[c],
                    relabel: plan.relabel.as_ref(),
                    click_model: model,
                    config: &spec.round,
                };
                let seed = derive_seed(
                    spec.master_seed,
                    &[purpose::ES_SEED, spec.repetition, round as u64, c as u64],
                );
                es_client_round(&state, &ctx, es, seed, &mut client_stream(spec, round, c))
            })
            .collect::<Result<_>>()?;
        let (messages, records): (Vec<_>, Vec<_>) = results.into_iter().unzip();
        let messages: Vec<EsMessage> = messages.into_iter().flatten().collect();
        local_interactions += records.iter().map(|r| r.len() as u64).sum::<u64>();
        let grad = es_server_gradient(&messages, &state)?;
        state.mean = optimizer.step(&state.mean, &grad)?;
        metrics.record(round, &state.mean, dataset, &records)?;
    }

    Ok(RunResult {
        trace: metrics.trace,
        final_params: state.mean,
        snapshots: None,
        local_interactions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clickmodels::{CcmKind, CcmSpec};
    use crate::data::{partition_quantity_skew, synthetic_linear, SyntheticSpec};

    fn lin(v: &[f64]) -> RankerParams<f64> {
        RankerParams::from_values(Architecture::Linear { features: v.len() }, v.to_vec()).unwrap()
    }

    fn upd(id: usize, v: &[f64], n_c: usize) -> LocalUpdate<f64> {
        LocalUpdate {
            client_id: id,
            params: lin(v),
            n_c,
        }
    }

    fn perfect(max_grade: u8) -> ClickModel {
        ClickModel::Ccm(CcmSpec::builtin(CcmKind::Perfect, max_grade).unwrap())
    }

    fn small() -> Dataset<f64> {
        synthetic_linear(
            &SyntheticSpec {
                train_queries: 10,
                test_queries: 5,
                ..SyntheticSpec::default()
            },
            3,
        )
    }

    #[test]
    fn fedavg_examples() {
        assert_eq!(fedavg(&[upd(0, &[0.0], 1), upd(1, &[2.0], 1)]).unwrap().values(), &[1.0]);
        assert_eq!(fedavg(&[upd(0, &[0.7, -3.0], 4)]).unwrap().values(), &[0.7, -3.0]);
        assert_eq!(fedavg(&[upd(0, &[0.0], 1), upd(1, &[4.0], 3)]).unwrap().values(), &[3.0]);
        assert!(fedavg::<f64>(&[]).is_err());
        assert!(fedavg(&[upd(0, &[0.0], 1), upd(1, &[1.0, 2.0], 1)]).is_err());
    }

    #[test]
    fn fedprox_cases() {
        let theta = lin(&[1.0, 2.0]);
        let global = lin(&[0.0, 0.0]);
        let d = ModelDelta::from_values(theta.arch(), vec![0.5, -0.5]).unwrap();
        let plain = theta.apply_update(&d, 0.1).unwrap();
        assert_eq!(fedprox_local_step(&theta, &global, &d, 0.1, 0.0).unwrap(), plain);
        assert_eq!(fedprox_local_step(&global, &global, &d, 0.1, 5.0).unwrap(), global.apply_update(&d, 0.1).unwrap());
        let zero = ModelDelta::zeros(theta.arch());
        let pulled = fedprox_local_step(&theta, &global, &zero, 0.1, 5.0).unwrap();
        assert!(pulled.norm() < theta.norm());
    }

    #[test]
    fn shared_set_size() {
        let ds = small();
        let mut rng = stream(1, &[]);
        assert_eq!(data_share_warmup(&ds, 0.1, &mut rng).unwrap().len(), 1);
        assert_eq!(data_share_warmup(&ds, 0.25, &mut rng).unwrap().len(), 3);
        assert_eq!(data_share_warmup(&ds, 1.0, &mut rng).unwrap(), (0..10).collect::<Vec<_>>());
        assert!(data_share_warmup(&ds, 0.0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn client_round_counts_and_replays() {
        let ds = small();
        let cfg = RoundConfig::new(1, 4, 1);
        let plan = partition_quantity_skew(1, &[9]).unwrap();
        let cm = perfect(ds.max_grade);
        let ctx = ClientContext {
            client_id: 0,
            dataset: &ds,
            plan: &plan.clients[0],
            relabel: None,
            click_model: &cm,
            config: &cfg,
        };
        let g = RankerParams::zeros(Architecture::Linear { features: 5 });
        let (a, recs) = client_round(&g, &ctx, &mut stream(5, &[])).unwrap();
        let (b, _) = client_round(&g, &ctx, &mut stream(5, &[])).unwrap();
        assert_eq!(a.n_c, 9);
        assert_eq!(recs.len(), 9);
        assert_eq!(a, b);
    }

    #[test]
    fn no_clicks_leave_params() {
        let ds = small();
        let cfg = RoundConfig::new(1, 6, 1);
        let plan = PartitionPlan::iid(1).unwrap();
        let silent = ClickModel::Ccm(CcmSpec::new("silent", vec![0.0; 5], vec![0.0; 5]).unwrap());
        let ctx = ClientContext {
            client_id: 0,
            dataset: &ds,
            plan: &plan.clients[0],
            relabel: None,
            click_model: &silent,
            config: &cfg,
        };
        let g = lin(&[0.1, 0.2, 0.3, 0.4, 0.5]);
        let (u, _) = client_round(&g, &ctx, &mut stream(2, &[])).unwrap();
        assert_eq!(u.params, g);
        assert_eq!(u.n_c, 6);
    }

    #[test]
    fn zero_rounds_yield_initial_row() {
        let ds = small();
        let spec = ExperimentSpec::new(
            Architecture::Linear { features: 5 },
            RoundConfig::new(2, 3, 0),
            perfect(ds.max_grade),
            1,
        );
        let out = run_experiment(&spec, &ds, &PartitionPlan::iid(2).unwrap()).unwrap();
        assert_eq!(out.trace.len(), 1);
        assert_eq!(out.trace[0].round, 0);
        assert_eq!(out.local_interactions, 0);
    }

    #[test]
    fn runs_are_reproducible() {
        let ds = small();
        let mut spec = ExperimentSpec::new(
            Architecture::Linear { features: 5 },
            RoundConfig::new(3, 3, 4),
            perfect(ds.max_grade),
            9,
        );
        let plan = PartitionPlan::iid(3).unwrap();
        let a = run_experiment(&spec, &ds, &plan).unwrap();
        let b = run_experiment(&spec, &ds, &plan).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.local_interactions, 36);
        spec.optimizer = Optimizer::Es(EsConfig::default());
        let c = run_experiment(&spec, &ds, &plan).unwrap();
        let d = run_experiment(&spec, &ds, &plan).unwrap();
        assert_eq!(c.trace, d.trace);
    }

    #[test]
    fn es_rejects_model_rules() {
        let ds = small();
        let mut spec = ExperimentSpec::new(
            Architecture::Linear { features: 5 },
            RoundConfig::new(3, 3, 1),
            perfect(ds.max_grade),
            9,
        );
        spec.optimizer = Optimizer::Es(EsConfig::default());
        spec.round.rule = AggregationRule::Krum;
        assert!(run_experiment(&spec, &ds, &PartitionPlan::iid(3).unwrap()).is_err());
    }
}
