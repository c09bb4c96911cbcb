//! Simulation benchmarks: generate, censor, fit, summarize, score.

pub mod censoring;
pub mod generators;
pub mod metrics;
pub mod residuals;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aft::ParamAft;
use crate::error::{Error, Result};
use crate::gibbs::{fit, FitConfig};
use crate::hte::{allocate, differential_effect, ite_draws, AllocationRule, Scale};
use crate::rng::{substream, Stream};
use crate::stats::{mean, quantile};

pub use censoring::{apply_censoring, CensoringLevel, CensoringTargets};
pub use generators::{
    gen_friedman_scenario, gen_null_aft, gen_null_cox, CoxParams, NullAftParams, SimDataset,
};
pub use metrics::{
    cross_validation_score, fold_assignment, score_replication, CvScore, KaplanMeier, KmCensoring,
    MetricRow,
};
pub use residuals::{gen_residuals, ResidualFamily};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    AftLinearNull,
    CoxNull,
    FriedmanHte,
    /// A random function, covariates and arms frozen across replications;
    /// only residuals and censoring are redrawn.
    FixedRegression,
}

impl ScenarioKind {
    pub fn is_null(self) -> bool {
        matches!(self, ScenarioKind::AftLinearNull | ScenarioKind::CoxNull)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FriedmanParams {
    pub p: usize,
    pub residual_variance: f64,
    /// Seed of the frozen function for `fixed-regression`.
    pub function_seed: u64,
}

impl Default for FriedmanParams {
    fn default() -> Self {
        FriedmanParams {
            p: 20,
            residual_variance: 0.25,
            function_seed: 2024,
        }
    }
}

/// One benchmark configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimScenario {
    pub name: String,
    pub kind: ScenarioKind,
    pub n: usize,
    pub family: ResidualFamily,
    pub censoring: CensoringLevel,
    pub seed: u64,
    pub targets: CensoringTargets,
    pub null_aft: NullAftParams,
    pub cox: CoxParams,
    pub friedman: FriedmanParams,
}

impl Default for SimScenario {
    fn default() -> Self {
        SimScenario {
            name: String::new(),
            kind: ScenarioKind::AftLinearNull,
            n: 200,
            family: ResidualFamily::Normal,
            censoring: CensoringLevel::None,
            seed: 1,
            targets: CensoringTargets::default(),
            null_aft: NullAftParams::default(),
            cox: CoxParams::default(),
            friedman: FriedmanParams::default(),
        }
    }
}

impl SimScenario {
    pub fn label(&self) -> String {
        if self.name.is_empty() {
            format!(
                "{:?}/{}/{}/{}",
                self.kind,
                self.n,
                self.family.label(),
                self.censoring.label()
            )
        } else {
            self.name.clone()
        }
    }

    /// Dataset for replication `rep`, before and after censoring.
    pub fn generate(&self, rep: usize) -> Result<SimDataset> {
        if self.n < 2 {
            return Err(Error::Config("scenario n must be >= 2".into()));
        }
        let r = rep as u64;
        let mut rng = substream(self.seed, r, Stream::Simulation);
        let ds = match self.kind {
            ScenarioKind::AftLinearNull => gen_null_aft(&self.null_aft, self.family, self.n, &mut rng)?,
            ScenarioKind::CoxNull => gen_null_cox(&self.cox, self.n, &mut rng)?,
            ScenarioKind::FriedmanHte => {
                gen_friedman_scenario(
                    self.friedman.p,
                    self.n,
                    self.family,
                    self.friedman.residual_variance,
                    &mut rng,
                )?
                .1
            }
            ScenarioKind::FixedRegression => {
                let mut frozen = substream(self.friedman.function_seed, 0, Stream::Simulation);
                let f = generators::gen_friedman_function(self.friedman.p, &mut frozen);
                let (x, arm) = generators::friedman_covariates(self.friedman.p, self.n, &mut frozen);
                generators::friedman_dataset(
                    &f,
                    x,
                    arm,
                    self.family,
                    self.friedman.residual_variance,
                    &mut rng,
                )?
            }
        };
        let mut crng = substream(self.seed, r, Stream::Censoring);
        apply_censoring(&ds, self.censoring, &self.targets, &mut crng)
    }
}

/// Scores of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub n: usize,
    pub family: ResidualFamily,
    pub censoring: CensoringLevel,
    pub rep: usize,
    pub censored_fraction: f64,
    pub np_aft: MetricRow,
    /// Linear log-normal AFT with interactions; absent when its fit failed.
    pub param_aft: Option<MetricRow>,
}

/// Seed for the sampler in replication `rep`.
pub fn replication_seed(scenario_seed: u64, rep: usize) -> u64 {
    scenario_seed.wrapping_mul(1_000_003).wrapping_add(rep as u64)
}

fn param_aft_metrics(ds: &SimDataset) -> Option<MetricRow> {
    let fitted = match ParamAft::fit(&ds.data, true) {
        Ok(f) => f,
        Err(e) => {
            log::warn!("parametric AFT baseline failed: {e}");
            return None;
        }
    };
    let n = ds.data.n();
    let est: Vec<f64> = (0..n).map(|i| fitted.ite(ds.data.x.row(i))).collect();
    let iv: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let se = fitted.ite_se(ds.data.x.row(i));
            (est[i] - 1.959_963_984_540_054 * se, est[i] + 1.959_963_984_540_054 * se)
        })
        .collect();
    let alloc: Vec<bool> = est.iter().map(|&t| t > 0.0).collect();
    score_replication(&ds.true_theta, &est, &iv, &alloc, None).ok()
}

/// Generate, censor, fit and score one replication.
pub fn run_replication(scenario: &SimScenario, rep: usize, config: &FitConfig) -> Result<ReplicationRow> {
    let ds = scenario.generate(rep)?;
    let cfg = FitConfig {
        seed: replication_seed(scenario.seed, rep),
        ..config.clone()
    };
    let draws = fit(&ds.data, &cfg)?;
    let ite = ite_draws(&draws, Scale::Log)?;
    let dte = differential_effect(&ite);
    let iv = ite.intervals();
    let est: Vec<f64> = iv.iter().map(|t| t.0).collect();
    let bands: Vec<(f64, f64)> = iv.iter().map(|t| (t.1, t.2)).collect();
    let alloc = allocate(&ite, AllocationRule::Misclassification);
    let np_aft = score_replication(&ds.true_theta, &est, &bands, &alloc, Some(&dte))?;
    Ok(ReplicationRow {
        scenario: scenario.label(),
        kind: scenario.kind,
        n: scenario.n,
        family: scenario.family,
        censoring: scenario.censoring,
        rep,
        censored_fraction: 1.0 - ds.data.n_events() as f64 / ds.data.n() as f64,
        np_aft,
        param_aft: param_aft_metrics(&ds),
    })
}

/// Aggregate over replications of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub kind: ScenarioKind,
    pub n: usize,
    pub family: ResidualFamily,
    pub censoring: CensoringLevel,
    pub reps: usize,
    /// Mean over replications of the percentage with `D* > 0.95`.
    pub mean_pct_strong: f64,
    /// Mean over replications of the percentage with `D* > 0.8`.
    pub mean_pct_mild: f64,
    pub mean_rmse: f64,
    pub median_rmse: f64,
    pub mean_mcprop: f64,
    pub mean_coverage: f64,
    pub mean_censored: f64,
}

fn summarize_rows(s: &SimScenario, rows: &[ReplicationRow]) -> ScenarioSummary {
    let col = |f: &dyn Fn(&ReplicationRow) -> f64| rows.iter().map(f).collect::<Vec<f64>>();
    let rmse = col(&|r| r.np_aft.rmse);
    ScenarioSummary {
        scenario: s.label(),
        kind: s.kind,
        n: s.n,
        family: s.family,
        censoring: s.censoring,
        reps: rows.len(),
        mean_pct_strong: 100.0 * mean(&col(&|r| r.np_aft.frac_strong)),
        mean_pct_mild: 100.0 * mean(&col(&|r| r.np_aft.frac_mild)),
        mean_rmse: mean(&rmse),
        median_rmse: quantile(&rmse, 0.5),
        mean_mcprop: mean(&col(&|r| r.np_aft.mcprop)),
        mean_coverage: mean(&col(&|r| r.np_aft.coverage)),
        mean_censored: mean(&col(&|r| r.censored_fraction)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<ReplicationRow>,
    pub summaries: Vec<ScenarioSummary>,
    pub table: String,
}

/// Run every scenario for `reps` replications. Replications run in
/// parallel; results are ordered by scenario, then replication.
pub fn run_benchmark(scenarios: &[SimScenario], reps: usize, config: &FitConfig) -> Result<BenchmarkReport> {
    if reps == 0 {
        return Err(Error::Config("reps must be >= 1".into()));
    }
    config.validate()?;
    let jobs: Vec<(usize, usize)> = (0..scenarios.len())
        .flat_map(|s| (0..reps).map(move |r| (s, r)))
        .collect();
    let results: Vec<Result<ReplicationRow>> = jobs
        .par_iter()
        .map(|&(s, r)| run_replication(&scenarios[s], r, config))
        .collect();
    let rows: Vec<ReplicationRow> = results.into_iter().collect::<Result<_>>()?;
    let summaries: Vec<ScenarioSummary> = scenarios
        .iter()
        .enumerate()
        .map(|(k, s)| summarize_rows(s, &rows[k * reps..(k + 1) * reps]))
        .collect();
    let table = format_table(&summaries);
    Ok(BenchmarkReport {
        rows,
        summaries,
        table,
    })
}

fn null_column(s: &ScenarioSummary) -> Option<&'static str> {
    match s.kind {
        ScenarioKind::CoxNull => Some("Cox-PH"),
        ScenarioKind::AftLinearNull => Some(s.family.label()),
        _ => None,
    }
}

/// Null scenarios as an n × censoring grid of SE/ME percentages per residual
/// family, followed by a plain listing of every scenario's metrics.
pub fn format_table(summaries: &[ScenarioSummary]) -> String {
    let mut out = String::new();
    let columns = ["Normal", "Gumbel", "Std-Gamma", "T-mixture", "Cox-PH"];
    let nulls: Vec<&ScenarioSummary> = summaries.iter().filter(|s| s.kind.is_null()).collect();
    if !nulls.is_empty() {
        let _ = writeln!(out, "Average percentage of patients with strong (SE) and mild (ME) evidence");
        let mut header = format!("{:>6} {:>9}", "n", "Censoring");
        for c in columns {
            let _ = write!(header, " | {:^15}", c);
        }
        let _ = writeln!(out, "{header}");
        let mut sub = format!("{:>6} {:>9}", "", "");
        for _ in columns {
            let _ = write!(sub, " | {:>7} {:>7}", "SE", "ME");
        }
        let _ = writeln!(out, "{sub}");
        let mut ns: Vec<usize> = nulls.iter().map(|s| s.n).collect();
        ns.sort_unstable();
        ns.dedup();
        for n in ns {
            for level in CensoringLevel::ALL {
                let cells: Vec<Option<&&ScenarioSummary>> = columns
                    .iter()
                    .map(|c| {
                        nulls
                            .iter()
                            .find(|s| s.n == n && s.censoring == level && null_column(s) == Some(*c))
                    })
                    .collect();
                if cells.iter().all(|c| c.is_none()) {
                    continue;
                }
                let mut line = format!("{:>6} {:>9}", n, level.label());
                for c in cells {
                    match c {
                        Some(s) => {
                            let _ = write!(line, " | {:>7.3} {:>7.3}", s.mean_pct_strong, s.mean_pct_mild);
                        }
                        None => {
                            let _ = write!(line, " | {:>7} {:>7}", "-", "-");
                        }
                    }
                }
                let _ = writeln!(out, "{line}");
            }
        }
        let _ = writeln!(out);
    }
    let _ = writeln!(
        out,
        "{:<40} {:>5} {:>9} {:>9} {:>9} {:>9} {:>8} {:>8}",
        "scenario", "reps", "RMSE", "medRMSE", "MCprop", "coverage", "SE%", "ME%"
    );
    for s in summaries {
        let _ = writeln!(
            out,
            "{:<40} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>8.3} {:>8.3}",
            s.scenario,
            s.reps,
            s.mean_rmse,
            s.median_rmse,
            s.mean_mcprop,
            s.mean_coverage,
            s.mean_pct_strong,
            s.mean_pct_mild
        );
    }
    out
}

/// Replication rows as CSV.
pub fn rows_to_csv(rows: &[ReplicationRow]) -> String {
    let mut out = String::from(
        "scenario,kind,n,family,censoring,rep,censored_fraction,rmse,mcprop,coverage,pct_strong,pct_mild,param_rmse,param_mcprop,param_coverage\n",
    );
    for r in rows {
        let (pr, pm, pc) = r
            .param_aft
            .map_or((String::new(), String::new(), String::new()), |p| {
                (p.rmse.to_string(), p.mcprop.to_string(), p.coverage.to_string())
            });
        let _ = writeln!(
            out,
            "{},{:?},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.kind,
            r.n,
            r.family.label(),
            r.censoring.label(),
            r.rep,
            r.censored_fraction,
            r.np_aft.rmse,
            r.np_aft.mcprop,
            r.np_aft.coverage,
            100.0 * r.np_aft.frac_strong,
            100.0 * r.np_aft.frac_mild,
            pr,
            pm,
            pc
        );
    }
    out
}
