//! The full Gibbs sampler over the forest and the residual mixture.
//!
//! Each sweep runs, in order: a backfitting pass over the trees on
//! `log y^c - τ_S`, the label, stick, location and mass/scale updates of the
//! mixture, and imputation of censored log-times. Post-burn-in, thinned
//! sweeps are stored with both arms' fits for every row.

pub mod io;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aft::{fit_intercept_lognormal_aft, transform_responses, ResponseTransform};
use crate::cdp::{
    calibrate_scale, impute_censored, update_cluster_labels, update_cluster_locations,
    update_mass_and_scale, update_stick_weights, Calibration, CdpHyper, CdpState,
};
use crate::data::{EncodedDataset, Matrix};
use crate::error::{Error, Result};
use crate::forest::{forest_predict, Forest, ForestPrior, MoveProbs, MoveStats, Tree};
use crate::grid::{SplitGrids, DEFAULT_MAX_SPLIT_POINTS};
use crate::rng::{substream, Stream};

/// Sampler configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub chains: usize,
    pub hyper: CdpHyper,
    pub prior: ForestPrior,
    pub move_probs: MoveProbs,
    /// Keep every retained forest so new covariate vectors can be scored.
    pub retain_forests: bool,
    pub calibration_draws: usize,
    pub max_split_points: usize,
    /// Record the per-iteration step order of chain 0.
    pub record_trace: bool,
    /// Warn when the stored fits would exceed this many megabytes.
    pub memory_budget_mb: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 7000,
            burn_in: 2000,
            thin: 1,
            seed: 0,
            chains: 1,
            hyper: CdpHyper::default(),
            prior: ForestPrior::default(),
            move_probs: MoveProbs::default(),
            retain_forests: false,
            calibration_draws: 1_000_000,
            max_split_points: DEFAULT_MAX_SPLIT_POINTS,
            record_trace: false,
            memory_budget_mb: 4096.0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.iterations <= self.burn_in {
            return Err(Error::Config(format!(
                "iterations ({}) must exceed burn_in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.thin == 0 {
            return Err(Error::Config("thin must be >= 1".into()));
        }
        if self.chains == 0 {
            return Err(Error::Config("chains must be >= 1".into()));
        }
        if self.calibration_draws == 0 || self.max_split_points == 0 {
            return Err(Error::Config(
                "calibration_draws and max_split_points must be positive".into(),
            ));
        }
        self.hyper.validate()?;
        self.prior.validate()?;
        self.move_probs.validate()?;
        Ok(())
    }

    /// Retained draws per chain.
    pub fn draws_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }

    fn is_retained(&self, iteration: usize) -> bool {
        iteration > self.burn_in && (iteration - self.burn_in).is_multiple_of(self.thin)
    }
}

/// Sweep steps, in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Step {
    Backfit,
    Labels,
    Sticks,
    Locations,
    MassScale,
    Impute,
}

/// One retained sweep. Fits are on the original log-time scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    pub iteration: usize,
    pub m0: Vec<f64>,
    pub m1: Vec<f64>,
    pub pi: Vec<f64>,
    pub tau: Vec<f64>,
    pub sigma: f64,
    pub mass: f64,
    pub occupied: usize,
    pub max_index: usize,
}

/// Per-chain sampler diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub moves: MoveStats,
    pub sweeps: usize,
    /// Sweeps whose highest occupied cluster index equalled `H`.
    pub truncation_hits: usize,
}

impl ChainDiagnostics {
    pub fn truncation_rate(&self) -> f64 {
        self.truncation_hits as f64 / self.sweeps.max(1) as f64
    }
}

/// Everything retained from a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub config: FitConfig,
    pub transform: ResponseTransform,
    pub calibration: Calibration,
    /// Hyperparameters after calibration.
    pub hyper: CdpHyper,
    /// Forest prior after setting `ζ = 4 σ̂_AFT`.
    pub prior: ForestPrior,
    pub n: usize,
    /// Encoded covariate count.
    pub p: usize,
    pub draws: Vec<Draw>,
    pub diagnostics: Vec<ChainDiagnostics>,
    /// Retained forests (leaf values on the transformed scale), aligned
    /// with `draws`.
    #[serde(skip)]
    pub checkpoints: Option<Vec<Vec<Tree>>>,
    /// Fits at extra design rows, aligned with `draws`.
    #[serde(skip)]
    pub extra: Vec<Vec<f64>>,
    #[serde(skip)]
    pub trace: Vec<(usize, Step)>,
}

impl PosteriorDraws {
    pub fn num_draws(&self) -> usize {
        self.draws.len()
    }

    pub fn mu_aft(&self) -> f64 {
        self.transform.mu_aft
    }

    /// Pooled acceptance counts over chains.
    pub fn move_stats(&self) -> MoveStats {
        let mut s = MoveStats::default();
        for d in &self.diagnostics {
            s.merge(&d.moves);
        }
        s
    }

    /// Per-draw `m(a, x)` on the original scale from the retained forests.
    pub fn predict_m(&self, a: bool, x: &[f64]) -> Result<Vec<f64>> {
        let forests = self.checkpoints.as_ref().ok_or(Error::CheckpointsAbsent)?;
        if x.len() != self.p {
            return Err(Error::LengthMismatch(format!(
                "covariate vector has {} entries, the fit used {}",
                x.len(),
                self.p
            )));
        }
        let mut u = Vec::with_capacity(x.len() + 1);
        u.push(if a { 1.0 } else { 0.0 });
        u.extend_from_slice(x);
        Ok(forests
            .iter()
            .map(|trees| forest_predict(trees, &u) + self.transform.mu_aft)
            .collect())
    }

    /// `m(1, x_i) - m(0, x_i)` for draw `d`.
    pub fn theta_row(&self, d: usize) -> Vec<f64> {
        let dr = &self.draws[d];
        dr.m1.iter().zip(&dr.m0).map(|(a, b)| a - b).collect()
    }
}

/// Fit the model to `data`.
pub fn fit(data: &EncodedDataset, config: &FitConfig) -> Result<PosteriorDraws> {
    fit_with_extra(data, config, None)
}

/// Fit the model and also record, for every retained draw, the fits at the
/// rows of `extra` (a design matrix whose column 0 is the arm).
pub fn fit_with_extra(
    data: &EncodedDataset,
    config: &FitConfig,
    extra: Option<&Matrix>,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if let Some(e) = extra {
        if e.ncols() != data.p_enc() + 1 {
            return Err(Error::LengthMismatch(format!(
                "extra design has {} columns, expected {}",
                e.ncols(),
                data.p_enc() + 1
            )));
        }
    }
    let transform = fit_intercept_lognormal_aft(data)?;
    let tr = transform_responses(data, &transform)?;

    let mut cal_rng = substream(config.seed, 0, Stream::Calibration);
    let calibration = calibrate_scale(
        transform.sigma_aft,
        &config.hyper,
        config.calibration_draws,
        &mut cal_rng,
    )?;
    let hyper = CdpHyper {
        sigma_tau_sq: calibration.sigma_tau_sq,
        ..config.hyper
    };
    let prior = ForestPrior {
        zeta: transform.zeta(),
        ..config.prior
    };

    let n = data.n();
    let per_chain = config.draws_per_chain();
    let bytes = (config.chains * per_chain) as f64
        * (2 * n + 2 * hyper.h + extra.map_or(0, |e| e.nrows())) as f64
        * 8.0;
    if bytes / 1e6 > config.memory_budget_mb {
        log::warn!(
            "stored draws need about {:.0} MB, above the {:.0} MB budget",
            bytes / 1e6,
            config.memory_budget_mb
        );
    }

    let design = tr.predictors();
    let grids = SplitGrids::from_design(&design, config.max_split_points);
    let setup = ChainSetup {
        config,
        hyper,
        prior,
        grids: &grids,
        design: &design,
        log_y: tr.log_y(),
        delta: &tr.delta,
        arm: &tr.arm,
        x: &tr.x,
        mu_aft: transform.mu_aft,
        sigma_w: transform.sigma_aft,
        extra,
    };
    let outputs: Vec<Result<ChainOutput>> = (0..config.chains)
        .into_par_iter()
        .map(|c| run_chain(&setup, c))
        .collect();

    let mut draws = Vec::with_capacity(config.chains * per_chain);
    let mut diagnostics = Vec::new();
    let mut checkpoints = config.retain_forests.then(Vec::new);
    let mut extra_fits = Vec::new();
    let mut trace = Vec::new();
    for out in outputs {
        let out = out?;
        draws.extend(out.draws);
        diagnostics.push(out.diagnostics);
        if let (Some(all), Some(mine)) = (checkpoints.as_mut(), out.forests) {
            all.extend(mine);
        }
        extra_fits.extend(out.extra);
        if trace.is_empty() {
            trace = out.trace;
        }
    }
    for d in &diagnostics {
        if d.truncation_rate() > 0.01 {
            log::warn!(
                "chain {}: highest occupied cluster equalled H in {:.1}% of sweeps; consider a larger H",
                d.chain,
                100.0 * d.truncation_rate()
            );
        }
    }
    Ok(PosteriorDraws {
        config: config.clone(),
        transform,
        calibration,
        hyper,
        prior,
        n,
        p: data.p_enc(),
        draws,
        diagnostics,
        checkpoints,
        extra: extra_fits,
        trace,
    })
}

struct ChainSetup<'a> {
    config: &'a FitConfig,
    hyper: CdpHyper,
    prior: ForestPrior,
    grids: &'a SplitGrids,
    design: &'a Matrix,
    log_y: Vec<f64>,
    delta: &'a [bool],
    arm: &'a [bool],
    x: &'a Matrix,
    mu_aft: f64,
    sigma_w: f64,
    extra: Option<&'a Matrix>,
}

struct ChainOutput {
    draws: Vec<Draw>,
    diagnostics: ChainDiagnostics,
    forests: Option<Vec<Vec<Tree>>>,
    extra: Vec<Vec<f64>>,
    trace: Vec<(usize, Step)>,
}

fn check_finite(iteration: usize, quantity: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            iteration,
            quantity: quantity.to_string(),
        })
    }
}

fn run_chain(s: &ChainSetup<'_>, chain: usize) -> Result<ChainOutput> {
    let cfg = s.config;
    let c = chain as u64;
    let mut rng_tree = substream(cfg.seed, c, Stream::TreeMoves);
    let mut rng_labels = substream(cfg.seed, c, Stream::Labels);
    let mut rng_sticks = substream(cfg.seed, c, Stream::Sticks);
    let mut rng_loc = substream(cfg.seed, c, Stream::Locations);
    let mut rng_scale = substream(cfg.seed, c, Stream::MassScale);
    let mut rng_impute = substream(cfg.seed, c, Stream::Imputation);
    let mut rng_init = substream(cfg.seed, c, Stream::Init);

    let n = s.log_y.len();
    let h = s.hyper.h;
    let mut forest = Forest::new(s.prior.num_trees, n, 0.0);
    let mut state = CdpState::initial(n, &s.hyper, s.sigma_w);
    // start censored rows just above their bounds
    let mut y_c: Vec<f64> = s
        .log_y
        .iter()
        .zip(s.delta)
        .map(|(&y, &d)| if d { y } else { y + rng_init.random::<f64>() * s.sigma_w })
        .collect();

    let mut diag = ChainDiagnostics {
        chain,
        ..Default::default()
    };
    let per_chain = cfg.draws_per_chain();
    let mut draws = Vec::with_capacity(per_chain);
    let mut forests = cfg.retain_forests.then(|| Vec::with_capacity(per_chain));
    let mut extra = Vec::new();
    let mut trace = Vec::new();
    let record = cfg.record_trace && chain == 0;
    let mut responses = vec![0.0; n];
    let mut residuals = vec![0.0; n];

    for it in 1..=cfg.iterations {
        // 1. trees on log y^c - τ_S
        for i in 0..n {
            responses[i] = y_c[i] - state.tau[state.labels[i]];
        }
        forest.backfit_sweep(
            &responses,
            state.sigma(),
            &s.prior,
            s.grids,
            s.design,
            &cfg.move_probs,
            &mut rng_tree,
            &mut diag.moves,
        );
        check_finite(it, "forest fit", forest.fitted())?;
        if record {
            trace.push((it, Step::Backfit));
        }

        let m = forest.fitted();
        for i in 0..n {
            residuals[i] = y_c[i] - m[i];
        }
        // 2. labels
        update_cluster_labels(&mut state, &residuals, &mut rng_labels);
        if record {
            trace.push((it, Step::Labels));
        }
        // 3. sticks
        update_stick_weights(&mut state, &mut rng_sticks);
        check_finite(it, "mixture weights", &state.pi)?;
        if record {
            trace.push((it, Step::Sticks));
        }
        // 4. atoms
        update_cluster_locations(&mut state, &residuals, s.hyper.sigma_tau_sq, &mut rng_loc);
        check_finite(it, "cluster locations", &state.tau)?;
        if record {
            trace.push((it, Step::Locations));
        }
        // 5. mass and scale
        update_mass_and_scale(&mut state, &residuals, &s.hyper, &mut rng_scale);
        if !(state.mass.is_finite() && state.mass > 0.0) {
            return Err(Error::NonFinite {
                iteration: it,
                quantity: "mass parameter".into(),
            });
        }
        if !(state.sigma_sq.is_finite() && state.sigma_sq > 0.0) {
            return Err(Error::NonFinite {
                iteration: it,
                quantity: "residual variance".into(),
            });
        }
        if record {
            trace.push((it, Step::MassScale));
        }
        // 6. censored rows
        y_c = impute_censored(&state, m, &s.log_y, s.delta, &mut rng_impute);
        check_finite(it, "imputed responses", &y_c)?;
        if record {
            trace.push((it, Step::Impute));
        }

        diag.sweeps += 1;
        let max_index = state.max_occupied_index();
        if max_index == h {
            diag.truncation_hits += 1;
        }

        if cfg.is_retained(it) {
            let trees = forest.trees();
            let mut m0 = vec![0.0; n];
            let mut m1 = vec![0.0; n];
            let mut u = Vec::with_capacity(s.x.ncols() + 1);
            for i in 0..n {
                let cf = !s.arm[i];
                u.clear();
                u.push(if cf { 1.0 } else { 0.0 });
                u.extend_from_slice(s.x.row(i));
                let counter = forest_predict(trees, &u) + s.mu_aft;
                let fact = m[i] + s.mu_aft;
                if s.arm[i] {
                    m1[i] = fact;
                    m0[i] = counter;
                } else {
                    m0[i] = fact;
                    m1[i] = counter;
                }
            }
            draws.push(Draw {
                chain,
                iteration: it,
                m0,
                m1,
                pi: state.pi.clone(),
                tau: state.tau.clone(),
                sigma: state.sigma(),
                mass: state.mass,
                occupied: state.occupied(),
                max_index,
            });
            if let Some(f) = forests.as_mut() {
                f.push(forest.snapshot());
            }
            if let Some(e) = s.extra {
                extra.push(
                    (0..e.nrows())
                        .map(|r| forest_predict(trees, e.row(r)) + s.mu_aft)
                        .collect(),
                );
            }
        }
    }
    Ok(ChainOutput {
        draws,
        diagnostics: diag,
        forests,
        extra,
        trace,
    })
}
