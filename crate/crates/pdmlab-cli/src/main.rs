//! `pdmlab` command-line front end.
//!
//! Every subcommand takes `--config <default|desk|path>`, `--seed`, `--out`
//! and repeated `--set key=value` overrides. Exit codes: 0 success, 2 usage
//! or config error, 1 runtime failure.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use pdmlab::baseline::{greedy_policy, q_learning, PolicyTable, N_ACTIONS, N_LEVELS};
use pdmlab::dae::train_dae;
use pdmlab::harness::{
    ablation_csv, evaluate_policy, extract_policy_table, reports_json, run_ablation, sweep, sweep_csv, train_pipeline,
    AblationSpec, ConstantPolicy, FleetPolicy, LearnedPolicy, Pipeline, RunConfig, TablePolicy, Variant,
};
use pdmlab::numerics::Standardizer;
use pdmlab::plantsim::{generate_dataset, infer_fleet_config, read_csv, write_csv, MaintenanceAction, Record, N_SENSORS, SENSOR_NAMES};
use pdmlab::Error;

#[derive(Parser)]
#[command(name = "pdmlab", version, about = "Predictive-maintenance policy lab")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// `default`, `desk`, or a `key = value` config file.
    #[arg(long, default_value = "default")]
    config: String,
    /// Reseeds dataset, DAE, initializations, PPO and Q-learning.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `run.output_dir`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args)]
struct DataArgs {
    /// Train on this dataset CSV instead of generating one.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic dataset (dataset.csv).
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Train the denoising autoencoder alone (params/dae.bin, dae_history.csv).
    TrainDae {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Train the full pipeline (params/, metrics_ppo.csv).
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate a policy on fresh fleets (eval_report.json).
    Eval {
        #[command(flatten)]
        common: Common,
        /// `learned`, a constant action name (e.g. `do_nothing`), or `table:<path>`.
        #[arg(long, default_value = "learned")]
        policy: String,
    },
    /// Tabular Q-learning baseline (q_table.csv, baseline_policy.txt, baseline_report.json).
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Module ablations against the full model (ablation_summary.csv).
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        no_fno: bool,
        #[arg(long)]
        no_dae: bool,
        #[arg(long)]
        no_gnn: bool,
        #[arg(long)]
        no_ppo: bool,
        /// All four ablations.
        #[arg(long)]
        all: bool,
    },
    /// Grid search (sweep_summary.csv).
    Sweep {
        #[command(flatten)]
        common: Common,
        /// `key=v1|v2|...`; repeatable, one per axis.
        #[arg(long = "grid", value_name = "KEY=V1|V2")]
        grid: Vec<String>,
    },
    /// Per-wear-level table of the trained policy (policy_table.txt).
    PolicyTable {
        #[command(flatten)]
        common: Common,
    },
    /// Print the resolved configuration with every key.
    Config {
        #[command(flatten)]
        common: Common,
    },
}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    Error::Config(msg.into()).into()
}

fn split_kv(s: &str) -> Result<(&str, &str)> {
    s.split_once('=')
        .map(|(k, v)| (k.trim(), v.trim()))
        .ok_or_else(|| config_error(format!("expected key=value, got `{}`", s)))
}

fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match RunConfig::preset(&common.config) {
        Some(c) => c,
        None => {
            let text = fs::read_to_string(&common.config)
                .map_err(|e| config_error(format!("cannot read config `{}`: {}", common.config, e)))?;
            RunConfig::from_text(&text)?
        }
    };
    if let Some(s) = common.seed {
        cfg = cfg.with_seed(s);
    }
    for kv in &common.sets {
        let (k, v) = split_kv(kv)?;
        cfg.set(k, v)?;
    }
    if let Some(out) = &common.out {
        cfg.run.output_dir = out.to_string_lossy().into_owned();
    }
    cfg.validate()?;
    Ok(cfg)
}

struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    fn new(cfg: &RunConfig) -> Self {
        Self { dir: PathBuf::from(&cfg.run.output_dir) }
    }

    fn params(&self) -> PathBuf {
        self.dir.join("params")
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let path = self.dir.join(name);
        fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }

    fn config(&self, cfg: &RunConfig) -> Result<()> {
        self.write("run_config.txt", &cfg.to_text()).map(|_| ())
    }
}

/// Reads `--data` (adopting its fleet shape) or generates from the config.
fn dataset(cfg: &mut RunConfig, data: &DataArgs) -> Result<Vec<Record>> {
    match &data.data {
        Some(path) => {
            let records = read_csv(path).with_context(|| format!("reading {}", path.display()))?;
            let shape = infer_fleet_config(&records)?;
            cfg.fleet.devices = shape.devices;
            cfg.fleet.groups = shape.groups;
            cfg.fleet.steps = shape.steps;
            cfg.validate()?;
            Ok(records)
        }
        None => Ok(generate_dataset(&cfg.fleet)),
    }
}

fn history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,mse\n");
    for (i, m) in history.iter().enumerate() {
        let _ = writeln!(s, "{},{:.12e}", i + 1, m);
    }
    s
}

fn load_pipeline(out: &Outputs) -> Result<Pipeline> {
    let dir = out.params();
    Pipeline::load(&dir).with_context(|| format!("loading trained pipeline from {} (run `train` first)", dir.display()))
}

fn cmd_gen(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let out = Outputs::new(&cfg);
    let records = generate_dataset(&cfg.fleet);
    fs::create_dir_all(&out.dir)?;
    let path = out.dir.join("dataset.csv");
    write_csv(&records, &path)?;
    out.config(&cfg)?;
    println!("wrote {} rows to {}", records.len(), path.display());
    Ok(())
}

fn cmd_train_dae(common: &Common, data: &DataArgs) -> Result<()> {
    let mut cfg = resolve(common)?;
    let records = dataset(&mut cfg, data)?;
    let norm = Standardizer::fit(records.iter().map(|r| &r.sensors[..]), N_SENSORS)?;
    let rows: Vec<Vec<f64>> = records.iter().map(|r| norm.apply(&r.sensors)).collect();
    let (params, history) = train_dae(&rows, &cfg.dae)?;
    let out = Outputs::new(&cfg);
    fs::create_dir_all(out.params())?;
    params.save(&out.params().join("dae.bin"))?;
    fs::write(out.params().join("normalization.txt"), norm.to_text(Some(&SENSOR_NAMES)))?;
    out.write("dae_history.csv", &history_csv(&history))?;
    out.config(&cfg)?;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("dae: {} epochs, denoising mse {:.6} -> {:.6}", history.len(), first, last);
    }
    Ok(())
}

fn cmd_train(common: &Common, data: &DataArgs) -> Result<()> {
    let mut cfg = resolve(common)?;
    let records = dataset(&mut cfg, data)?;
    let art = train_pipeline(&cfg, &records, Variant::Full)?;
    let out = Outputs::new(&cfg);
    art.pipeline.save(&out.params())?;
    out.write("metrics_ppo.csv", &art.metrics.to_csv(cfg.run.record_timing))?;
    if !art.dae_history.is_empty() {
        out.write("dae_history.csv", &history_csv(&art.dae_history))?;
    }
    out.config(&cfg)?;
    let kl = art.metrics.kl();
    println!(
        "trained on {} transitions ({} skipped); final approx KL {:.5}",
        art.experience_len,
        art.skipped_transitions,
        kl.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_eval(common: &Common, policy: &str) -> Result<()> {
    let cfg = resolve(common)?;
    let out = Outputs::new(&cfg);
    let pipeline;
    let boxed: Box<dyn FleetPolicy> = if policy == "learned" {
        pipeline = load_pipeline(&out)?;
        Box::new(LearnedPolicy { label: "learned".into(), pipeline: &pipeline })
    } else if let Some(path) = policy.strip_prefix("table:") {
        let table = PolicyTable::load(Path::new(path)).with_context(|| format!("reading policy table {}", path))?;
        Box::new(TablePolicy { label: format!("table:{}", path), table })
    } else {
        let action = MaintenanceAction::from_name(policy)
            .map_err(|_| config_error(format!("unknown policy `{}` (learned, an action name, or table:<path>)", policy)))?;
        Box::new(ConstantPolicy(action))
    };
    let e = &cfg.eval;
    let report = evaluate_policy(boxed.as_ref(), &cfg.fleet, e.horizon, &e.seeds, cfg.ppo.gamma, cfg.run.record_timing)?;
    let path = out.write("eval_report.json", &report.to_json()?)?;
    out.config(&cfg)?;
    println!("{}: average cost per step {:.4} ({})", report.policy, report.average_cost, path.display());
    Ok(())
}

fn cmd_baseline(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let q = q_learning(&cfg.fleet, &cfg.qlearn)?;
    let table = greedy_policy(&q)?;
    let policy = TablePolicy { label: "q_learning".into(), table: table.clone() };
    let e = &cfg.eval;
    let report = evaluate_policy(&policy, &cfg.fleet, e.horizon, &e.seeds, cfg.ppo.gamma, cfg.run.record_timing)?;
    let mut csv = String::from("level");
    for a in MaintenanceAction::ALL {
        let _ = write!(csv, ",{}", a.name());
    }
    csv.push('\n');
    for s in 0..N_LEVELS {
        let _ = write!(csv, "Wear_{}", s);
        for a in 0..N_ACTIONS {
            let _ = write!(csv, ",{:.12e}", q.get(s, a));
        }
        csv.push('\n');
    }
    let out = Outputs::new(&cfg);
    out.write("q_table.csv", &csv)?;
    out.write("baseline_policy.txt", &table.to_text())?;
    out.write("baseline_report.json", &report.to_json()?)?;
    out.config(&cfg)?;
    print!("{}", table.to_text());
    println!("q_learning: average cost per step {:.4}", report.average_cost);
    Ok(())
}

fn cmd_ablate(common: &Common, spec: AblationSpec) -> Result<()> {
    let cfg = resolve(common)?;
    let reports = run_ablation(&spec, &cfg)?;
    let out = Outputs::new(&cfg);
    let csv = ablation_csv(&reports);
    out.write("ablation_summary.csv", &csv)?;
    out.write("ablation_reports.json", &reports_json(&reports)?)?;
    out.config(&cfg)?;
    print!("{}", csv);
    Ok(())
}

fn parse_grid(args: &[String]) -> Result<Vec<(String, Vec<String>)>> {
    args.iter()
        .map(|g| {
            let (k, vs) = split_kv(g)?;
            Ok((k.to_string(), vs.split('|').map(|v| v.trim().to_string()).collect()))
        })
        .collect()
}

fn cmd_sweep(common: &Common, grid: &[String]) -> Result<()> {
    let cfg = resolve(common)?;
    let grid = parse_grid(grid)?;
    let results = sweep(&grid, &cfg)?;
    let out = Outputs::new(&cfg);
    let csv = sweep_csv(&results);
    let reports: Vec<_> = results.iter().map(|r| r.report.clone()).collect();
    out.write("sweep_summary.csv", &csv)?;
    out.write("sweep_reports.json", &reports_json(&reports)?)?;
    out.config(&cfg)?;
    print!("{}", csv);
    Ok(())
}

fn cmd_policy_table(common: &Common) -> Result<()> {
    let cfg = resolve(common)?;
    let out = Outputs::new(&cfg);
    let pipeline = load_pipeline(&out)?;
    let e = &cfg.eval;
    let (table, counts) = extract_policy_table(&pipeline, &cfg.fleet, e.table_samples, e.table_max_steps, cfg.run.seed)?;
    out.write("policy_table.txt", &table.to_text())?;
    out.config(&cfg)?;
    for (line, n) in table.to_text().lines().zip(&counts) {
        println!("{} ({} samples)", line, n);
    }
    println!("monotone: {}", table.is_monotone());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Gen { common } => cmd_gen(&common),
        Cmd::TrainDae { common, data } => cmd_train_dae(&common, &data),
        Cmd::Train { common, data } => cmd_train(&common, &data),
        Cmd::Eval { common, policy } => cmd_eval(&common, &policy),
        Cmd::Baseline { common } => cmd_baseline(&common),
        Cmd::Ablate { common, no_fno, no_dae, no_gnn, no_ppo, all } => {
            let spec = if all { AblationSpec::all() } else { AblationSpec { no_fno, no_dae, no_gnn, no_ppo } };
            cmd_ablate(&common, spec)
        }
        Cmd::Sweep { common, grid } => cmd_sweep(&common, &grid),
        Cmd::PolicyTable { common } => cmd_policy_table(&common),
        Cmd::Config { common } => {
            print!("{}", resolve(&common)?.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            let config = e.chain().any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::Config(_))));
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
