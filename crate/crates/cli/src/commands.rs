//! One function per subcommand. Each returns the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use npaft::aft::fit_intercept_lognormal_aft;
use npaft::cdp::{calibrate_scale, Calibration, CdpHyper};
use npaft::data::{parse_dataset, CovariateSchema, EncodedDataset};
use npaft::forest::MoveKind;
use npaft::gibbs::io::{write_draws, DRAWS_FILE, FORESTS_FILE};
use npaft::gibbs::{fit_with_extra, FitConfig, PosteriorDraws};
use npaft::hte::{
    ite_draws, partial_dependence, summarize as hte_summarize, survival_curve, virtual_twins_rank,
    HteSummary, RankedCoefficient, Scale, SummaryOptions, SurvivalCurve,
};
use npaft::rng::{substream, Stream};
use npaft::sim::{cross_validation_score, fold_assignment, rows_to_csv, run_benchmark, KmCensoring, SimScenario};
use npaft::stats::mean;

use crate::config::{decode, int, load_table, parse_floats, resolve_seed, set_opt, set_path};
use crate::error::{CliError, CliResult};
use crate::manifest::{read_input, InputDigest, RunManifest};
use crate::output::{Csv, OutDir};
use crate::{CalibrateArgs, CrossvalArgs, DataArgs, FitArgs, PdpArgs, SamplerFlags, SimulateArgs, SummarizeArgs, SurvcurveArgs};

pub const SUMMARY_FORMAT: &str = "npaft-summary";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const CV_FILE: &str = "cv.csv";

fn json<T: Serialize>(v: &T) -> CliResult<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| CliError::Config(e.to_string()))
}

fn utf8(bytes: Vec<u8>, path: &Path) -> CliResult<String> {
    String::from_utf8(bytes).map_err(|_| CliError::Config(format!("{} is not UTF-8", path.display())))
}

/// Load and encode a dataset, returning the digests of both files.
pub fn load_data(a: &DataArgs) -> CliResult<(EncodedDataset, Vec<InputDigest>)> {
    let (sbytes, sdig) = read_input("schema", &a.schema)?;
    let schema = CovariateSchema::from_toml_str(&utf8(sbytes, &a.schema)?)?;
    let (dbytes, ddig) = read_input("data", &a.data)?;
    let data = parse_dataset(&utf8(dbytes, &a.data)?, &schema)?;
    Ok((data, vec![ddig, sdig]))
}

/// Read a draw directory, hashing the files actually parsed.
pub fn load_draws(dir: &Path) -> CliResult<(PosteriorDraws, Vec<InputDigest>)> {
    let mut digests = vec![read_input("draws", &dir.join(DRAWS_FILE))?.1];
    if dir.join(FORESTS_FILE).exists() {
        digests.push(read_input("forests", &dir.join(FORESTS_FILE))?.1);
    }
    Ok((npaft::gibbs::io::read_draws(dir)?, digests))
}

fn apply_sampler_flags(t: &mut Table, f: &SamplerFlags) -> CliResult<()> {
    set_opt(t, &["iterations"], f.iterations.map(int))?;
    set_opt(t, &["burn_in"], f.burn_in.map(int))?;
    set_opt(t, &["thin"], f.thin.map(int))?;
    set_opt(t, &["chains"], f.chains.map(int))?;
    set_opt(t, &["prior", "num_trees"], f.trees.map(int))?;
    set_opt(t, &["calibration_draws"], f.calibration_draws.map(int))
}

/// Fit config from file plus flags. Returns the seed, config and digest.
fn fit_config(
    path: Option<&Path>,
    flags: &SamplerFlags,
    extra: impl FnOnce(&mut Table) -> CliResult<()>,
) -> CliResult<(u64, FitConfig, Option<InputDigest>)> {
    let (mut table, digest) = load_table(path)?;
    let seed = resolve_seed(&mut table, flags.seed)?;
    apply_sampler_flags(&mut table, flags)?;
    extra(&mut table)?;
    let config: FitConfig = decode(table, "fit config")?;
    config.validate()?;
    Ok((seed, config, digest))
}

pub fn diagnostics_csv(draws: &PosteriorDraws) -> String {
    let mut header = vec!["chain", "sweeps", "truncation_hits", "truncation_rate"];
    let names: Vec<String> = MoveKind::ALL
        .iter()
        .flat_map(|k| {
            let k = format!("{k:?}").to_lowercase();
            [format!("{k}_proposed"), format!("{k}_accepted")]
        })
        .collect();
    header.extend(names.iter().map(String::as_str));
    let mut csv = Csv::new(&header);
    for d in &draws.diagnostics {
        let mut fields: Vec<String> = vec![
            d.chain.to_string(),
            d.sweeps.to_string(),
            d.truncation_hits.to_string(),
            d.truncation_rate().to_string(),
        ];
        for k in 0..MoveKind::ALL.len() {
            fields.push(d.moves.proposed[k].to_string());
            fields.push(d.moves.accepted[k].to_string());
        }
        let refs: Vec<&dyn std::fmt::Display> = fields.iter().map(|f| f as _).collect();
        csv.row(&refs);
    }
    csv.finish()
}

pub fn fit(a: &FitArgs) -> CliResult<PathBuf> {
    let (data, mut inputs) = load_data(&a.input)?;
    let retain = a.retain_forests;
    let (seed, config, digest) = fit_config(a.config.as_deref(), &a.flags, |t| {
        if retain {
            set_path(t, &["retain_forests"], Value::Boolean(true))?;
        }
        Ok(())
    })?;
    inputs.extend(digest);
    let mut man = RunManifest::new("fit", Some(seed), json(&config)?);
    man.inputs = inputs;
    let mut out = OutDir::create(&a.out, man)?;

    let draws = npaft::gibbs::fit(&data, &config)?;
    let stale = out.dir.join(FORESTS_FILE);
    if draws.checkpoints.is_none() && stale.exists() {
        fs::remove_file(&stale).map_err(|e| CliError::io(&stale, e))?;
    }
    write_draws(&out.dir, &draws)?;
    out.record(DRAWS_FILE);
    if draws.checkpoints.is_some() {
        out.record(FORESTS_FILE);
    }
    out.write(DIAGNOSTICS_FILE, diagnostics_csv(&draws))?;
    out.finish()
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryDocument {
    pub format: String,
    pub version: u32,
    pub options: SummaryOptions,
    pub summary: HteSummary,
    pub ranking: Option<Vec<RankedCoefficient>>,
}

fn survival_rows(csv: &mut Csv, arm: u8, c: &SurvivalCurve) {
    for k in 0..c.times.len() {
        csv.row(&[&arm, &c.times[k], &c.mean[k], &c.lower[k], &c.upper[k]]);
    }
}

pub fn summarize(a: &SummarizeArgs) -> CliResult<PathBuf> {
    let (draws, mut inputs) = load_draws(&a.draws)?;
    let (mut table, digest) = load_table(a.options.as_deref())?;
    inputs.extend(digest);
    set_opt(&mut table, &["grid_points"], a.grid_points.map(int))?;
    set_opt(&mut table, &["bandwidth"], a.bandwidth)?;
    set_opt(&mut table, &["profile"], a.profile.map(int))?;
    if let Some(e) = &a.epsilons {
        set_path(&mut table, &["epsilons"], Value::Array(parse_floats(e)?.into_iter().map(Value::Float).collect()))?;
    }
    let options: SummaryOptions = decode(table, "summary options")?;

    let ranking = match (&a.data, &a.schema) {
        (Some(data), Some(schema)) => {
            let (ds, digests) = load_data(&DataArgs {
                data: data.clone(),
                schema: schema.clone(),
            })?;
            inputs.extend(digests);
            if ds.n() != draws.n {
                return Err(npaft::Error::LengthMismatch(format!(
                    "data has {} rows, the draws {}",
                    ds.n(),
                    draws.n
                ))
                .into());
            }
            Some(virtual_twins_rank(&ite_draws(&draws, Scale::Log)?, &ds)?)
        }
        _ => None,
    };

    let mut man = RunManifest::new("summarize", Some(draws.config.seed), json(&options)?);
    man.inputs = inputs;
    let mut out = OutDir::create(&a.out, man)?;
    let summary = hte_summarize(&draws, &options)?;

    let mut ite = Csv::new(&["row", "mean", "lower", "upper", "ratio_mean", "d", "d_star", "evidence", "p_hat"]);
    for (i, iv) in summary.ite.iter().enumerate() {
        let ev = format!("{:?}", summary.differential.evidence[i]).to_lowercase();
        ite.row(&[
            &i,
            &iv.mean,
            &iv.lower,
            &iv.upper,
            &iv.ratio_mean,
            &summary.differential.d[i],
            &summary.differential.d_star[i],
            &ev,
            &summary.benefit.p_hat[i],
        ]);
    }
    out.write("ite.csv", ite.finish())?;

    let mut q = Csv::new(&["epsilon", "mean", "lower", "upper"]);
    for s in &summary.benefit.q_eps {
        q.row(&[&s.epsilon, &s.mean, &s.lower, &s.upper]);
    }
    out.write("benefit.csv", q.finish())?;

    if let Some(e) = &summary.effect_distribution {
        let mut cdf = Csv::new(&["t", "cdf", "lower", "upper"]);
        let mut dens = Csv::new(&["t", "density"]);
        for k in 0..e.grid.len() {
            cdf.row(&[&e.grid[k], &e.cdf[k], &e.cdf_lower[k], &e.cdf_upper[k]]);
            dens.row(&[&e.grid[k], &e.density[k]]);
        }
        out.write("effect_cdf.csv", cdf.finish())?;
        out.write("effect_density.csv", dens.finish())?;
    }

    let mut surv = Csv::new(&["arm", "time", "mean", "lower", "upper"]);
    survival_rows(&mut surv, 0, &summary.survival_control);
    survival_rows(&mut surv, 1, &summary.survival_treated);
    out.write("survival.csv", surv.finish())?;

    if let Some(r) = &ranking {
        let mut csv = Csv::new(&["rank", "covariate", "coefficient"]);
        for (k, c) in r.iter().enumerate() {
            csv.row(&[&(k + 1), &c.name, &c.coefficient]);
        }
        out.write("ranking.csv", csv.finish())?;
    }

    let doc = SummaryDocument {
        format: SUMMARY_FORMAT.into(),
        version: 1,
        options,
        summary,
        ranking,
    };
    let text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Config(e.to_string()))?;
    out.write(SUMMARY_FILE, text + "\n")?;
    out.finish()
}

/// Log-spaced times covering `m ± 3σ` over every draw.
fn default_times(draws: &PosteriorDraws, m: &[f64], points: usize) -> Vec<f64> {
    let sigma = draws.draws.iter().map(|d| d.sigma).fold(0.0, f64::max);
    let tau = draws
        .draws
        .iter()
        .flat_map(|d| d.tau.iter().zip(&d.pi).filter(|(_, &p)| p > 1e-6).map(|(t, _)| t.abs()))
        .fold(0.0, f64::max);
    let lo = m.iter().cloned().fold(f64::INFINITY, f64::min) - tau - 3.0 * sigma;
    let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + tau + 3.0 * sigma;
    let points = points.max(2);
    (0..points)
        .map(|k| (lo + (hi - lo) * k as f64 / (points - 1) as f64).exp())
        .collect()
}

pub fn survcurve(a: &SurvcurveArgs) -> CliResult<PathBuf> {
    let (draws, inputs) = load_draws(&a.draws)?;
    let (m0, m1, profile) = match (&a.covariates, a.row) {
        (Some(c), _) => {
            let x = parse_floats(c)?;
            (draws.predict_m(false, &x)?, draws.predict_m(true, &x)?, json(&x)?)
        }
        (None, row) => {
            let r = row.unwrap_or(0);
            if r >= draws.n {
                return Err(npaft::Error::InvalidArgument(format!("row {r} out of range (n = {})", draws.n)).into());
            }
            (
                draws.draws.iter().map(|d| d.m0[r]).collect(),
                draws.draws.iter().map(|d| d.m1[r]).collect(),
                json(&r)?,
            )
        }
    };
    let times = match &a.times {
        Some(t) => parse_floats(t)?,
        None => {
            let both: Vec<f64> = m0.iter().chain(&m1).cloned().collect();
            default_times(&draws, &both, a.time_points)
        }
    };
    let control = survival_curve(&draws, &m0, &times)?;
    let treated = survival_curve(&draws, &m1, &times)?;

    let config = serde_json::json!({ "profile": profile, "times": times });
    let mut man = RunManifest::new("survcurve", Some(draws.config.seed), config);
    man.inputs = inputs;
    let mut out = OutDir::create(&a.out, man)?;
    let mut csv = Csv::new(&["arm", "time", "mean", "lower", "upper"]);
    survival_rows(&mut csv, 0, &control);
    survival_rows(&mut csv, 1, &treated);
    out.write("survival.csv", csv.finish())?;
    out.finish()
}

pub fn pdp(a: &PdpArgs) -> CliResult<PathBuf> {
    let (draws, mut inputs) = load_draws(&a.draws)?;
    let (data, digests) = load_data(&a.input)?;
    inputs.extend(digests);
    let names = data.schema.encoded_names();
    let l = names.iter().position(|n| *n == a.covariate).ok_or_else(|| {
        npaft::Error::InvalidArgument(format!("unknown covariate `{}`; encoded names are {names:?}", a.covariate))
    })?;
    let grid = match &a.grid {
        Some(g) => parse_floats(g)?,
        None => {
            let col = data.x.column(l);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let k = a.grid_points.max(2);
            if hi > lo {
                (0..k).map(|j| lo + (hi - lo) * j as f64 / (k - 1) as f64).collect()
            } else {
                vec![lo]
            }
        }
    };
    let pd = partial_dependence(&draws, &data.x, l, &grid)?;

    let config = serde_json::json!({ "covariate": a.covariate, "grid": grid });
    let mut man = RunManifest::new("pdp", Some(draws.config.seed), config);
    man.inputs = inputs;
    let mut out = OutDir::create(&a.out, man)?;
    let mut csv = Csv::new(&["z", "mean", "lower", "upper", "extrapolated"]);
    for k in 0..pd.grid.len() {
        csv.row(&[&pd.grid[k], &pd.mean[k], &pd.lower[k], &pd.upper[k], &pd.extrapolated[k]]);
    }
    out.write("pdp.csv", csv.finish())?;
    out.finish()
}

/// `simulate` configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub fit: FitConfig,
    pub scenarios: Vec<SimScenario>,
}

fn default_reps() -> usize {
    1
}

pub fn simulate(a: &SimulateArgs) -> CliResult<PathBuf> {
    let (mut table, digest) = load_table(Some(&a.config))?;
    let seed = resolve_seed(&mut table, a.seed)?;
    set_opt(&mut table, &["reps"], a.reps.map(int))?;
    // scenarios without their own seed inherit the run seed
    if let Some(Value::Array(list)) = table.get_mut("scenarios") {
        for s in list.iter_mut().filter_map(Value::as_table_mut) {
            s.entry("seed").or_insert(Value::Integer(seed as i64));
        }
    }
    let cfg: SimulateConfig = decode(table, "simulate config")?;
    if cfg.scenarios.is_empty() {
        return Err(CliError::Config("no [[scenarios]] given".into()));
    }
    let mut man = RunManifest::new("simulate", Some(seed), json(&cfg)?);
    man.inputs.extend(digest);
    let mut out = OutDir::create(&a.out, man)?;

    let report = run_benchmark(&cfg.scenarios, cfg.reps, &cfg.fit)?;
    out.write("replications.csv", rows_to_csv(&report.rows))?;
    let mut s = Csv::new(&[
        "scenario",
        "reps",
        "mean_pct_strong",
        "mean_pct_mild",
        "mean_rmse",
        "median_rmse",
        "mean_mcprop",
        "mean_coverage",
        "mean_censored",
    ]);
    for r in &report.summaries {
        s.row(&[
            &r.scenario,
            &r.reps,
            &r.mean_pct_strong,
            &r.mean_pct_mild,
            &r.mean_rmse,
            &r.median_rmse,
            &r.mean_mcprop,
            &r.mean_coverage,
            &r.mean_censored,
        ]);
    }
    out.write("summary.csv", s.finish())?;
    out.write("table.txt", &report.table)?;
    out.finish()
}

/// One hyperparameter setting of a cross-validation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSetting {
    pub q: f64,
    pub k: f64,
    pub trees: usize,
}

/// q ∈ {0.25, 0.5, 0.9, 0.99} × k ∈ {1, 2, 3} × J ∈ {50, 200, 400}, q outermost.
pub fn full_grid() -> Vec<CvSetting> {
    let mut out = Vec::with_capacity(36);
    for q in [0.25, 0.5, 0.9, 0.99] {
        for k in [1.0, 2.0, 3.0] {
            for trees in [50, 200, 400] {
                out.push(CvSetting { q, k, trees });
            }
        }
    }
    out
}

/// Posterior-mean prediction at the test rows from a fit on the training rows.
pub fn cv_predict(
    train: &EncodedDataset,
    test: &npaft::data::Matrix,
    config: &FitConfig,
) -> npaft::Result<Vec<f64>> {
    let draws = fit_with_extra(train, config, Some(test))?;
    Ok((0..test.nrows())
        .map(|r| mean(&draws.extra.iter().map(|e| e[r]).collect::<Vec<_>>()))
        .collect())
}

pub fn crossval(a: &CrossvalArgs) -> CliResult<PathBuf> {
    if a.folds < 2 {
        return Err(CliError::Config(format!("need at least 2 folds, got {}", a.folds)));
    }
    let (data, mut inputs) = load_data(&a.input)?;
    let (seed, base, digest) = fit_config(a.config.as_deref(), &a.flags, |_| Ok(()))?;
    inputs.extend(digest);
    let settings = if a.full_grid {
        full_grid()
    } else {
        vec![CvSetting {
            q: base.hyper.q,
            k: base.prior.k,
            trees: base.prior.num_trees,
        }]
    };
    let config = serde_json::json!({ "fit": json(&base)?, "folds": a.folds, "settings": json(&settings)? });
    let mut man = RunManifest::new("crossval", Some(seed), config);
    man.inputs = inputs;
    let mut out = OutDir::create(&a.out, man)?;

    let folds = fold_assignment(data.n(), a.folds, seed);
    let mut csv = Csv::new(&["setting", "q", "k", "trees", "fold", "score"]);
    for (s, set) in settings.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.hyper.q = set.q;
        cfg.prior.k = set.k;
        cfg.prior.num_trees = set.trees;
        cfg.validate()?;
        log::info!("setting {}/{}: q={} k={} J={}", s + 1, settings.len(), set.q, set.k, set.trees);
        let score = cross_validation_score(&data, &folds, a.folds, &KmCensoring, |train, test| {
            cv_predict(train, test, &cfg)
        })?;
        for (f, v) in score.folds.iter().enumerate() {
            csv.row(&[&(s + 1), &set.q, &set.k, &set.trees, &(f + 1), v]);
        }
        csv.row(&[&(s + 1), &set.q, &set.k, &set.trees, &"mean", &score.mean]);
    }
    out.write(CV_FILE, csv.finish())?;
    out.finish()
}

/// Contents of `calibration.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub sigma_w_hat: f64,
    pub hyper: CdpHyper,
    pub calibration: Calibration,
}

pub fn calibrate(a: &CalibrateArgs) -> CliResult<PathBuf> {
    let flags = SamplerFlags {
        seed: a.seed,
        calibration_draws: a.calibration_draws,
        ..SamplerFlags::default()
    };
    let (seed, config, digest) = fit_config(a.config.as_deref(), &flags, |_| Ok(()))?;
    let mut inputs: Vec<InputDigest> = digest.into_iter().collect();
    let sigma_w_hat = match (a.sigma_w, &a.data, &a.schema) {
        (Some(s), _, _) => s,
        (None, Some(d), Some(s)) => {
            let (data, digests) = load_data(&DataArgs {
                data: d.clone(),
                schema: s.clone(),
            })?;
            inputs.extend(digests);
            fit_intercept_lognormal_aft(&data)?.sigma_aft
        }
        _ => return Err(CliError::Config("give --sigma-w or --data with --schema".into())),
    };
    let mut rng = substream(seed, 0, Stream::Calibration);
    let calibration = calibrate_scale(sigma_w_hat, &config.hyper, config.calibration_draws, &mut rng)?;
    let report = CalibrationReport {
        sigma_w_hat,
        hyper: CdpHyper {
            sigma_tau_sq: calibration.sigma_tau_sq,
            ..config.hyper
        },
        calibration,
    };

    let cfg = serde_json::json!({ "hyper": json(&config.hyper)?, "calibration_draws": config.calibration_draws });
    let mut man = RunManifest::new("calibrate", Some(seed), cfg);
    man.inputs = inputs;
    let mut out = OutDir::create(&a.out, man)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
    out.write("calibration.json", text + "\n")?;
    out.finish()
}
