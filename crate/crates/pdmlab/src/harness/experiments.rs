use std::fmt::Write as _;

use rayon::prelude::*;

use super::eval::{evaluate_policy, EvalReport, LearnedPolicy, TablePolicy};
use super::pipeline::train_pipeline;
use super::RunConfig;
use crate::baseline::{greedy_policy, q_learning};
use crate::error::{Error, Result};
use crate::plantsim::{generate_dataset, Record};

/// One module substitution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    /// Features are the spectral amplitudes only.
    NoFno,
    /// The FNO reads z-scored raw sensors instead of latents.
    NoDae,
    /// The state is the device's own normalized features.
    NoGnn,
    /// The tabular Q-learning policy replaces the learned one.
    NoPpo,
}

impl Variant {
    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoFno => "no_fno",
            Variant::NoDae => "no_dae",
            Variant::NoGnn => "no_gnn",
            Variant::NoPpo => "no_ppo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AblationSpec {
    pub no_fno: bool,
    pub no_dae: bool,
    pub no_gnn: bool,
    pub no_ppo: bool,
}

impl AblationSpec {
    pub fn all() -> Self {
        Self { no_fno: true, no_dae: true, no_gnn: true, no_ppo: true }
    }

    /// The full model first, then each flagged variant.
    pub fn variants(&self) -> Vec<Variant> {
        let mut v = vec![Variant::Full];
        for (on, var) in [
            (self.no_fno, Variant::NoFno),
            (self.no_dae, Variant::NoDae),
            (self.no_gnn, Variant::NoGnn),
            (self.no_ppo, Variant::NoPpo),
        ] {
            if on {
                v.push(var);
            }
        }
        v
    }
}

/// Trains (or, for no-PPO, learns the tabular baseline) and evaluates one
/// variant on the given dataset with the config's evaluation seeds.
pub fn run_variant(cfg: &RunConfig, records: &[Record], variant: Variant) -> Result<EvalReport> {
    let e = &cfg.eval;
    let mut report = if variant == Variant::NoPpo {
        let table = greedy_policy(&q_learning(&cfg.fleet, &cfg.qlearn)?)?;
        let policy = TablePolicy { label: String::new(), table };
        evaluate_policy(&policy, &cfg.fleet, e.horizon, &e.seeds, cfg.ppo.gamma, cfg.run.record_timing)?
    } else {
        let art = train_pipeline(cfg, records, variant)?;
        let policy = LearnedPolicy { label: String::new(), pipeline: &art.pipeline };
        evaluate_policy(&policy, &cfg.fleet, e.horizon, &e.seeds, cfg.ppo.gamma, cfg.run.record_timing)?
    };
    report.policy = variant.label().to_string();
    Ok(report)
}

/// Full model plus each flagged variant, all on one dataset and one seed list.
pub fn run_ablation(spec: &AblationSpec, base: &RunConfig) -> Result<Vec<EvalReport>> {
    base.validate()?;
    let records = generate_dataset(&base.fleet);
    spec.variants().par_iter().map(|&v| run_variant(base, &records, v)).collect()
}

/// `variant,average_cost,discounted_return,failures,relative_to_full`.
pub fn ablation_csv(reports: &[EvalReport]) -> String {
    let full = reports.iter().find(|r| r.policy == Variant::Full.label()).map(|r| r.average_cost);
    let mut s = String::from("variant,average_cost,discounted_return,failures,relative_to_full\n");
    for r in reports {
        let rel = full.map_or(f64::NAN, |f| r.average_cost / f);
        let _ = writeln!(s, "{},{:.6},{:.6},{},{:.6}", r.policy, r.average_cost, r.discounted_return, r.failures, rel);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    /// `(key, value)` per grid axis, in grid order.
    pub assignment: Vec<(String, String)>,
    pub report: EvalReport,
}

/// Cartesian grid over config keys. Every key and value is checked before
/// any run; results come back sorted by average cost (ties keep grid order).
pub fn sweep(grid: &[(String, Vec<String>)], base: &RunConfig) -> Result<Vec<SweepResult>> {
    base.validate()?;
    if grid.is_empty() {
        return Ok(Vec::new());
    }
    for (k, values) in grid {
        if !RunConfig::is_known_key(k) {
            return Err(Error::Config(format!("unknown sweep key `{}`", k)));
        }
        if values.is_empty() {
            return Err(Error::Config(format!("sweep key `{}` has no values", k)));
        }
    }
    let mut cells: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, values) in grid {
        cells = cells
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((k.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let configs: Vec<RunConfig> = cells
        .iter()
        .map(|cell| {
            let mut c = base.clone();
            for (k, v) in cell {
                c.set(k, v)?;
            }
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<_>>()?;
    let mut results: Vec<SweepResult> = cells
        .into_par_iter()
        .zip(configs.into_par_iter())
        .map(|(assignment, cfg)| {
            let records = generate_dataset(&cfg.fleet);
            let mut report = run_variant(&cfg, &records, Variant::Full)?;
            report.policy = assignment.iter().map(|(k, v)| format!("{}={}", k, v)).collect::<Vec<_>>().join(";");
            Ok(SweepResult { assignment, report })
        })
        .collect::<Result<_>>()?;
    results.sort_by(|a, b| a.report.average_cost.total_cmp(&b.report.average_cost));
    Ok(results)
}

/// `rank,<axis keys…>,average_cost,discounted_return,failures`.
pub fn sweep_csv(results: &[SweepResult]) -> String {
    let mut s = String::from("rank");
    if let Some(first) = results.first() {
        for (k, _) in &first.assignment {
            s.push(',');
            s.push_str(k);
        }
    }
    s.push_str(",average_cost,discounted_return,failures\n");
    for (i, r) in results.iter().enumerate() {
        let _ = write!(s, "{}", i + 1);
        for (_, v) in &r.assignment {
            // list values contain commas
            let _ = write!(s, ",\"{}\"", v);
        }
        let _ = writeln!(s, ",{:.6},{:.6},{}", r.report.average_cost, r.report.discounted_return, r.report.failures);
    }
    s
}
