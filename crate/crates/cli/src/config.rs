//! TOML experiment configuration and its translation into library types.
//!
//! The schema is documented in `docs/config.md`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use foltr::adversary::{
    AttackConfig, AttackKind, Knowledge, DEFAULT_FANG_LAMBDA_INIT, DEFAULT_FANG_LAMBDA_THRESHOLD,
    DEFAULT_FANG_RANGE_FACTOR,
};
use foltr::clickmodels::{CcmKind, CcmSpec, ClickModel, PbmSpec};
use foltr::data::{
    partition_intent_skew, partition_label_skew, partition_quantity_skew, read_letor_file, read_plan,
    synthetic_linear, Dataset, ParseOptions, PartitionPlan, SyntheticSpec,
};
use foltr::federation::{
    AggregationRule, DataShareConfig, EsConfig, ExperimentSpec, FedProxConfig, Optimizer, RoundConfig,
    DEFAULT_PDGD_LEARNING_RATE,
};
use foltr::foltres::{
    maxrr_grid, PrivatizationSpec, ServerOptimizer, DEFAULT_ES_LEARNING_RATE, DEFAULT_SIGMA,
};
use foltr::metrics::DEFAULT_ONLINE_GAMMA;
use foltr::privacy::DpConfig;
use foltr::rankers::{Architecture, DEFAULT_HIDDEN};
use foltr::seed::{purpose, stream};
use foltr::unlearning::{UnlearnConfig, DEFAULT_LOCAL_STEPS, DEFAULT_POISON_Z, DEFAULT_SNAPSHOT_INTERVAL};
use serde::{Deserialize, Serialize};

/// Environment variable that relative dataset and plan paths resolve against.
pub const DATA_ROOT_ENV: &str = "FOLTR_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "one")]
    pub repetitions: usize,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub ranker: RankerConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub federation: FederationConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub clicks: ClicksConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub privacy: Option<PrivacyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unlearning: Option<UnlearningSection>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synthetic {
        #[serde(default = "defaults::train_queries")]
        train_queries: usize,
        #[serde(default = "defaults::test_queries")]
        test_queries: usize,
        #[serde(default = "defaults::docs_per_query")]
        docs_per_query: usize,
        #[serde(default = "defaults::features")]
        features: usize,
        #[serde(default = "defaults::max_grade")]
        max_grade: u8,
        /// Generator seed; the master seed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
    Letor {
        train: PathBuf,
        test: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        feature_dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_grade: Option<u8>,
    },
}

mod defaults {
    use foltr::data::SyntheticSpec;

    pub fn train_queries() -> usize {
        SyntheticSpec::default().train_queries
    }
    pub fn test_queries() -> usize {
        SyntheticSpec::default().test_queries
    }
    pub fn docs_per_query() -> usize {
        SyntheticSpec::default().docs_per_query
    }
    pub fn features() -> usize {
        SyntheticSpec::default().features
    }
    pub fn max_grade() -> u8 {
        SyntheticSpec::default().max_grade
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankerKind {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankerConfig {
    pub kind: RankerKind,
    pub hidden: usize,
}

impl Default for RankerConfig {
    fn default() -> Self {
        Self {
            kind: RankerKind::Linear,
            hidden: DEFAULT_HIDDEN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Fpdgd,
    Foltres,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// PDGD step size.
    pub learning_rate: f64,
    /// ES perturbation scale.
    pub sigma: f64,
    pub server: ServerKind,
    pub server_learning_rate: f64,
    /// Metric privatization probability `p` over the MaxRR grid.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub privatization_p: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Fpdgd,
            learning_rate: DEFAULT_PDGD_LEARNING_RATE,
            sigma: DEFAULT_SIGMA,
            server: ServerKind::Sgd,
            server_learning_rate: DEFAULT_ES_LEARNING_RATE,
            privatization_p: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub clients: usize,
    pub local_interactions: usize,
    pub rounds: usize,
    pub serp_len: usize,
    pub rule: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub multi_krum_keep: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trim_beta: Option<usize>,
    /// Attacker count assumed by robust rules; the attack's count when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub assumed_attackers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fedprox_mu: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_share_alpha: Option<f64>,
    pub warmup_interactions: usize,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 10,
            local_interactions: 5,
            rounds: 100,
            serp_len: 10,
            rule: "fedavg".into(),
            multi_krum_keep: None,
            trim_beta: None,
            assumed_attackers: None,
            fedprox_mu: None,
            data_share_alpha: None,
            warmup_interactions: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PartitionConfig {
    #[default]
    Iid,
    LabelSkew {
        labels_per_client: usize,
    },
    QuantitySkew {
        queries_per_round: Vec<usize>,
    },
    IntentSkew {
        intents: usize,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClicksConfig {
    /// Click model shared by every client.
    pub model: String,
    /// One click model per client, overriding `model`.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub per_client: Vec<String>,
}

impl Default for ClicksConfig {
    fn default() -> Self {
        Self {
            model: "informational".into(),
            per_client: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub online_gamma: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            online_gamma: DEFAULT_ONLINE_GAMMA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    pub sensitivity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    pub kind: String,
    pub fraction: f64,
    #[serde(default = "partial")]
    pub knowledge: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lie_z: Option<f64>,
    #[serde(default = "fang_init")]
    pub fang_lambda_init: f64,
    #[serde(default = "fang_threshold")]
    pub fang_lambda_threshold: f64,
    #[serde(default = "fang_range")]
    pub fang_range_factor: f64,
}

fn partial() -> String {
    Knowledge::Partial.name().into()
}
fn fang_init() -> f64 {
    DEFAULT_FANG_LAMBDA_INIT
}
fn fang_threshold() -> f64 {
    DEFAULT_FANG_LAMBDA_THRESHOLD
}
fn fang_range() -> f64 {
    DEFAULT_FANG_RANGE_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnlearningSection {
    pub client: usize,
    #[serde(default = "local_steps")]
    pub local_steps: usize,
    #[serde(default = "snapshot_interval")]
    pub snapshot_interval: usize,
    #[serde(default = "poison_z")]
    pub poison_z: f64,
    /// Write the snapshot log under `<out>/snapshots`.
    #[serde(default)]
    pub persist_snapshots: bool,
}

fn local_steps() -> usize {
    DEFAULT_LOCAL_STEPS
}
fn snapshot_interval() -> usize {
    DEFAULT_SNAPSHOT_INTERVAL
}
fn poison_z() -> f64 {
    DEFAULT_POISON_Z
}

/// Everything needed to execute one repetition.
pub struct Prepared {
    pub spec: ExperimentSpec,
    pub plan: PartitionPlan,
}

impl ExperimentConfig {
    /// Reads a config, applies command-line overrides and resolves it.
    pub fn load(path: &Path, seed: Option<u64>, repetitions: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: Self = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let Some(s) = seed {
            cfg.master_seed = s;
        }
        if let Some(r) = repetitions {
            cfg.repetitions = r;
        }
        let base = match std::env::var_os(DATA_ROOT_ENV) {
            Some(root) => PathBuf::from(root),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        cfg.resolve(&base)?;
        Ok(cfg)
    }

    /// Makes paths absolute and pins seeds so the serialized config replays
    /// without its original location or environment.
    fn resolve(&mut self, base: &Path) -> Result<()> {
        let absolute = |p: &mut PathBuf| -> Result<()> {
            if p.is_relative() {
                *p = base.join(&*p);
            }
            *p = std::path::absolute(&*p).with_context(|| format!("resolving {}", p.display()))?;
            Ok(())
        };
        match &mut self.dataset {
            DatasetConfig::Synthetic { seed, .. } => {
                seed.get_or_insert(self.master_seed);
            }
            DatasetConfig::Letor { train, test, .. } => {
                absolute(train)?;
                absolute(test)?;
            }
        }
        if let PartitionConfig::File { path } = &mut self.partition {
            absolute(path)?;
        }
        Ok(())
    }

    pub fn to_lock(&self) -> Result<String> {
        Ok(format!(
            "# resolved configuration; replay with --config config.lock\n{}",
            toml::to_string(self).context("serializing config.lock")?
        ))
    }

    /// Seed of repetition `r`: `master_seed + r`.
    pub fn repetition_seed(&self, r: usize) -> u64 {
        self.master_seed.wrapping_add(r as u64)
    }

    pub fn load_dataset(&self) -> Result<Dataset<f64>> {
        match &self.dataset {
            DatasetConfig::Synthetic {
                train_queries,
                test_queries,
                docs_per_query,
                features,
                max_grade,
                seed,
            } => {
                let spec = SyntheticSpec {
                    train_queries: *train_queries,
                    test_queries: *test_queries,
                    docs_per_query: *docs_per_query,
                    features: *features,
                    max_grade: *max_grade,
                };
                if spec.train_queries == 0 || spec.docs_per_query == 0 || spec.features == 0 {
                    bail!("dataset: train_queries, docs_per_query and features must be at least 1");
                }
                Ok(synthetic_linear(&spec, seed.unwrap_or(self.master_seed)))
            }
            DatasetConfig::Letor {
                train,
                test,
                feature_dim,
                max_grade,
            } => {
                let options = ParseOptions {
                    feature_dim: *feature_dim,
                    max_grade: *max_grade,
                };
                let read = |p: &PathBuf, field: &str| {
                    read_letor_file::<f64>(p, options).with_context(|| format!("dataset.{field}: {}", p.display()))
                };
                let ds = Dataset::from_splits("letor", read(train, "train")?, read(test, "test")?)
                    .context("dataset")?;
                Ok(ds)
            }
        }
    }

    pub fn architecture(&self, dataset: &Dataset<f64>) -> Architecture {
        match self.ranker.kind {
            RankerKind::Linear => Architecture::Linear {
                features: dataset.feature_dim,
            },
            RankerKind::Mlp => Architecture::Mlp {
                features: dataset.feature_dim,
                hidden: self.ranker.hidden,
            },
        }
    }

    pub fn partition(&self, dataset: &Dataset<f64>, seed: u64) -> Result<PartitionPlan> {
        let n = self.federation.clients;
        let mut rng = stream(seed, &[purpose::PARTITION]);
        let plan = match &self.partition {
            PartitionConfig::Iid => PartitionPlan::iid(n),
            PartitionConfig::LabelSkew { labels_per_client } => {
                partition_label_skew(dataset, n, *labels_per_client, &mut rng)
            }
            PartitionConfig::QuantitySkew { queries_per_round } => partition_quantity_skew(n, queries_per_round),
            PartitionConfig::IntentSkew { intents } => {
                if *intents != n {
                    bail!("partition.intents: {intents} intents need federation.clients = {intents}, got {n}");
                }
                partition_intent_skew(dataset, *intents, &mut rng).map(|(plan, _)| plan)
            }
            PartitionConfig::File { path } => {
                let file = std::fs::File::open(path).with_context(|| format!("partition.path: {}", path.display()))?;
                read_plan(std::io::BufReader::new(file))
            }
        };
        plan.context("partition")
    }

    fn rule(&self) -> Result<AggregationRule> {
        let f = &self.federation;
        Ok(match AggregationRule::from_name(&f.rule) {
            Some(AggregationRule::MultiKrum { .. }) => AggregationRule::MultiKrum { keep: f.multi_krum_keep },
            Some(AggregationRule::TrimmedMean { .. }) => AggregationRule::TrimmedMean { beta: f.trim_beta },
            Some(rule) => rule,
            None => bail!(
                "federation.rule: unknown rule {:?}; expected fedavg, krum, multi_krum, trimmed_mean or median",
                f.rule
            ),
        })
    }

    fn click_models(&self, max_grade: u8) -> Result<Vec<ClickModel>> {
        if self.clicks.per_client.is_empty() {
            return Ok(vec![parse_click_model(&self.clicks.model, max_grade).context("clicks.model")?]);
        }
        self.clicks
            .per_client
            .iter()
            .enumerate()
            .map(|(i, s)| parse_click_model(s, max_grade).with_context(|| format!("clicks.per_client[{i}]")))
            .collect()
    }

    fn optimizer(&self) -> Result<Optimizer> {
        let o = &self.optimizer;
        Ok(match o.kind {
            OptimizerKind::Fpdgd => Optimizer::Pdgd,
            OptimizerKind::Foltres => {
                let server = match o.server {
                    ServerKind::Sgd => ServerOptimizer::Sgd {
                        lr: o.server_learning_rate,
                    },
                    ServerKind::Adam => ServerOptimizer::adam(o.server_learning_rate),
                };
                let privatization = o
                    .privatization_p
                    .map(|p| PrivatizationSpec::new(p, maxrr_grid()))
                    .transpose()
                    .context("optimizer.privatization_p")?;
                Optimizer::Es(EsConfig {
                    sigma: o.sigma,
                    server,
                    privatization,
                })
            }
        })
    }

    fn attack(&self) -> Result<Option<AttackConfig>> {
        let Some(a) = &self.attack else {
            return Ok(None);
        };
        let kind = AttackKind::from_name(&a.kind).with_context(|| {
            format!(
                "attack.kind: unknown attack {:?}; expected data_poison, lie, fang_krum or fang_trimmed",
                a.kind
            )
        })?;
        let knowledge = Knowledge::from_name(&a.knowledge)
            .with_context(|| format!("attack.knowledge: expected partial or full, got {:?}", a.knowledge))?;
        let cfg = AttackConfig {
            kind,
            attacker_fraction: a.fraction,
            knowledge,
            lie_z: a.lie_z,
            fang_lambda_init: a.fang_lambda_init,
            fang_lambda_threshold: a.fang_lambda_threshold,
            fang_range_factor: a.fang_range_factor,
        };
        cfg.validate().context("attack")?;
        Ok(Some(cfg))
    }

    pub fn unlearn_config(&self) -> Result<Option<UnlearnConfig>> {
        let Some(u) = &self.unlearning else {
            return Ok(None);
        };
        let cfg = UnlearnConfig {
            client: u.client,
            local_steps: u.local_steps,
            snapshot_interval: u.snapshot_interval,
            poison_z: u.poison_z,
        };
        cfg.validate(self.federation.local_interactions).context("unlearning")?;
        if u.client >= self.federation.clients {
            bail!("unlearning.client: {} is not below federation.clients = {}", u.client, self.federation.clients);
        }
        Ok(Some(cfg))
    }

    /// Library spec and partition for repetition `r`.
    pub fn prepare(&self, dataset: &Dataset<f64>, r: usize) -> Result<Prepared> {
        let seed = self.repetition_seed(r);
        let f = &self.federation;
        let mut round = RoundConfig::new(f.clients, f.local_interactions, f.rounds);
        round.learning_rate = self.optimizer.learning_rate;
        round.rule = self.rule()?;
        round.serp_len = f.serp_len;
        round.fedprox = f.fedprox_mu.map(|mu| FedProxConfig { mu });
        round.data_share = f.data_share_alpha.map(|alpha| DataShareConfig {
            alpha,
            warmup_interactions: f.warmup_interactions,
        });
        round.validate().context("federation")?;

        let models = self.click_models(dataset.max_grade)?;
        let mut spec = ExperimentSpec::new(self.architecture(dataset), round, models[0].clone(), seed);
        spec.click_models = models;
        spec.optimizer = self.optimizer()?;
        spec.attack = self.attack()?;
        spec.assumed_attackers = f.assumed_attackers;
        spec.online_gamma = self.metrics.online_gamma;
        spec.privacy = self
            .privacy
            .as_ref()
            .map(|p| DpConfig::new(p.epsilon, p.sensitivity, f.clients))
            .transpose()
            .context("privacy")?;
        let plan = self.partition(dataset, seed)?;
        spec.validate(dataset, &plan).context("experiment")?;
        Ok(Prepared { spec, plan })
    }

    pub fn validate(&self) -> Result<Dataset<f64>> {
        if self.repetitions == 0 {
            bail!("repetitions: must be at least 1");
        }
        let dataset = self.load_dataset()?;
        self.prepare(&dataset, 0)?;
        self.unlearn_config()?;
        Ok(dataset)
    }
}

/// `perfect`, `navigational`, `informational`, `poison`, or `pbm:<eta>`
/// (PBM with perfect-user click probabilities).
pub fn parse_click_model(text: &str, max_grade: u8) -> Result<ClickModel> {
    if let Some(eta) = text.strip_prefix("pbm:") {
        let eta: f64 = eta.trim().parse().with_context(|| format!("invalid pbm eta in {text:?}"))?;
        return Ok(ClickModel::Pbm(PbmSpec::with_perfect_clicks(eta, max_grade)?));
    }
    let kind = CcmKind::from_name(text).with_context(|| {
        format!("unknown click model {text:?}; expected perfect, navigational, informational, poison or pbm:<eta>")
    })?;
    Ok(ClickModel::Ccm(CcmSpec::builtin(kind, max_grade)?))
}
