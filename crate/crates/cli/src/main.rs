//! `foltr`: run federated online learning-to-rank simulations from a TOML
//! config and write CSV traces.

mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use foltr::data::{read_letor_file, write_plan, Dataset, ParseOptions};
use foltr::federation::{run_experiment, RunResult};
use foltr::metrics::{offline_eval, write_trace_rows, DEFAULT_CUTOFF, TRACE_HEADER};
use foltr::rankers::{read_checkpoint_file, write_checkpoint_file, Checkpoint};
use foltr::unlearning::unlearning_benchmark;

use config::{ExperimentConfig, Prepared};

const FINAL_HEADER: &str =
    "repetition,seed,rule,attack,final_offline_ndcg10,final_online_cum_ndcg10,final_maxrr_mean,local_interactions";
const UNLEARN_FINAL_HEADER: &str = "repetition,seed,configuration,final_offline_ndcg10,local_updates";
const UNLEARN_SUMMARY_HEADER: &str = "repetition,seed,gap,savings";

#[derive(Parser)]
#[command(name = "foltr", version, about = "Federated online learning-to-rank simulator")]
struct Cli {
    /// Worker threads; 0 uses one per core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured federation.
    Simulate(RunArgs),
    /// Run the configured attack next to the honest federation.
    Attack(RunArgs),
    /// Run the poisoned, honest, retrained and unlearned federations.
    Unlearn(RunArgs),
    /// Materialize the configured partition plan as `plan.txt`.
    Partition(RunArgs),
    /// Score a checkpoint on a test set.
    Evaluate(EvalArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `repetitions`.
    #[arg(long)]
    repetitions: Option<usize>,
    /// Validate the config and exit without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// LETOR test file.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    test: Option<PathBuf>,
    /// Use the test split of this config's dataset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Also write `evaluate.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(&a, false),
        Command::Attack(a) => simulate(&a, true),
        Command::Unlearn(a) => unlearn(&a),
        Command::Partition(a) => partition(&a),
        Command::Evaluate(a) => evaluate(&a),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Needs {
    Nothing,
    Attack,
    Unlearning,
}

/// Loads and validates; `None` after a successful dry run.
fn setup(args: &RunArgs, needs: Needs) -> Result<Option<(ExperimentConfig, Dataset<f64>)>> {
    let cfg = ExperimentConfig::load(&args.config, args.seed, args.repetitions)?;
    let dataset = cfg.validate()?;
    match needs {
        Needs::Attack if cfg.attack.is_none() => bail!("attack: the attack subcommand needs an [attack] section"),
        Needs::Unlearning if cfg.unlearning.is_none() => {
            bail!("unlearning: the unlearn subcommand needs an [unlearning] section")
        }
        _ => {}
    }
    if args.dry_run {
        println!(
            "config ok: {} train / {} test queries, {} clients, {} rounds, {} repetition(s)",
            dataset.train.len(),
            dataset.test.len(),
            cfg.federation.clients,
            cfg.federation.rounds,
            cfg.repetitions
        );
        return Ok(None);
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    std::fs::write(args.out.join("config.lock"), cfg.to_lock()?)?;
    Ok(Some((cfg, dataset)))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn simulate(args: &RunArgs, with_baseline: bool) -> Result<()> {
    let needs = if with_baseline { Needs::Attack } else { Needs::Nothing };
    let Some((cfg, dataset)) = setup(args, needs)? else {
        return Ok(());
    };
    let mut trace = create(&args.out.join("trace.csv"))?;
    let mut finals = create(&args.out.join("final.csv"))?;
    writeln!(trace, "{TRACE_HEADER}")?;
    writeln!(finals, "{FINAL_HEADER}")?;
    let models = args.out.join("models");
    for r in 0..cfg.repetitions {
        let Prepared { spec, plan } = cfg.prepare(&dataset, r)?;
        let mut runs = vec![spec.clone()];
        if with_baseline {
            let mut honest = spec;
            honest.attack = None;
            runs.insert(0, honest);
        }
        for spec in &runs {
            let result: RunResult<f64> = run_experiment(spec, &dataset, &plan)?;
            let rule = spec.round.rule.name();
            let attack = spec.attack.as_ref().map_or("none", |a| a.kind.name());
            let seed = spec.master_seed;
            write_trace_rows(&result.trace, rule, attack, seed, &mut trace)?;
            let last = result.trace.last().expect("trace holds the initial row");
            writeln!(
                finals,
                "{r},{seed},{rule},{attack},{},{},{},{}",
                last.offline_ndcg, last.online_cum_ndcg, last.maxrr_mean, result.local_interactions
            )?;
            let name = if spec.attack.is_some() || !with_baseline {
                format!("rep{r}.ckpt")
            } else {
                format!("rep{r}_honest.ckpt")
            };
            write_checkpoint_file(&Checkpoint::Params(result.final_params), &models.join(name))?;
            log::info!("repetition {r} ({attack}): final offline nDCG@10 {}", last.offline_ndcg);
        }
    }
    trace.flush()?;
    finals.flush()?;
    Ok(())
}

fn unlearn(args: &RunArgs) -> Result<()> {
    let Some((cfg, dataset)) = setup(args, Needs::Unlearning)? else {
        return Ok(());
    };
    let ucfg = cfg.unlearn_config()?.expect("checked by setup");
    let persist = cfg.unlearning.as_ref().is_some_and(|u| u.persist_snapshots);
    let mut trace = create(&args.out.join("trace.csv"))?;
    let mut finals = create(&args.out.join("final.csv"))?;
    let mut summary = create(&args.out.join("unlearn_summary.csv"))?;
    writeln!(trace, "{TRACE_HEADER}")?;
    writeln!(finals, "{UNLEARN_FINAL_HEADER}")?;
    writeln!(summary, "{UNLEARN_SUMMARY_HEADER}")?;
    for r in 0..cfg.repetitions {
        let Prepared { spec, plan } = cfg.prepare(&dataset, r)?;
        let dir = args.out.join("snapshots").join(format!("rep{r}"));
        let report = unlearning_benchmark(&spec, &dataset, &plan, &ucfg, persist.then_some(dir.as_path()))?;
        let seed = spec.master_seed;
        for e in &report.entries {
            write_trace_rows(&e.trace, spec.round.rule.name(), e.name, seed, &mut trace)?;
            writeln!(finals, "{r},{seed},{},{},{}", e.name, e.final_ndcg, e.local_interactions)?;
        }
        writeln!(summary, "{r},{seed},{},{}", report.gap, report.savings)?;
    }
    trace.flush()?;
    finals.flush()?;
    summary.flush()?;
    Ok(())
}

fn partition(args: &RunArgs) -> Result<()> {
    let Some((cfg, dataset)) = setup(args, Needs::Nothing)? else {
        return Ok(());
    };
    let plan = cfg.partition(&dataset, cfg.repetition_seed(0))?;
    let mut out = create(&args.out.join("plan.txt"))?;
    write_plan(&plan, &mut out)?;
    out.flush()?;
    Ok(())
}

fn evaluate(args: &EvalArgs) -> Result<()> {
    let params = read_checkpoint_file::<f64>(&args.checkpoint)
        .with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))?
        .into_params()?;
    let queries = match (&args.test, &args.config) {
        (Some(path), _) => {
            let options = ParseOptions {
                feature_dim: Some(params.arch().feature_dim()),
                max_grade: None,
            };
            read_letor_file::<f64>(path, options)
                .with_context(|| format!("reading test set {}", path.display()))?
                .train
        }
        (None, Some(path)) => ExperimentConfig::load(path, None, None)?.load_dataset()?.test,
        (None, None) => bail!("evaluate needs --test or --config"),
    };
    if queries.is_empty() {
        bail!("test set has no queries");
    }
    let ndcg = offline_eval(&params, &queries, DEFAULT_CUTOFF)?;
    println!("offline_ndcg10 = {ndcg}");
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let mut out = create(&dir.join("evaluate.csv"))?;
        writeln!(out, "checkpoint,queries,offline_ndcg10")?;
        writeln!(out, "{},{},{ndcg}", args.checkpoint.display(), queries.len())?;
        out.flush()?;
    }
    Ok(())
}
