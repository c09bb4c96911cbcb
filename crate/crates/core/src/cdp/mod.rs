//! Centered Dirichlet-process mixture for the residual distribution.
//!
//! The residual density is `(1/σ) Σ_h π_h φ((w - τ_h)/σ)` with truncated
//! stick-breaking weights and atoms recentered so that `Σ_h π_h τ_h = 0`.
//! Updates follow the blocked Gibbs scheme: labels, sticks, locations, then
//! mass and scale. Censored log-times are imputed from truncated normals.

pub mod truncnorm;

use rand::Rng;
use rand_distr::{Beta, ChiSquared, Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{norm_pdf, quantile_sorted};

pub use truncnorm::{truncated_normal_lower, truncated_normal_lower_cdf};

/// Upper clamp on stick fractions before `log(1 - V_h)`.
pub const STICK_CLAMP: f64 = 1.0 - 1e-12;

/// Hyperparameters of the residual mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdpHyper {
    /// Gamma shape for the mass parameter.
    pub psi1: f64,
    /// Gamma rate for the mass parameter.
    pub psi2: f64,
    /// Degrees of freedom of the scaled inverse chi-square prior on σ².
    pub nu: f64,
    /// Calibration quantile.
    pub q: f64,
    /// Truncation level.
    pub h: usize,
    /// Base-measure variance σ_τ² (equal to κ); set by calibration.
    pub sigma_tau_sq: f64,
}

impl Default for CdpHyper {
    fn default() -> Self {
        CdpHyper {
            psi1: 2.0,
            psi2: 0.1,
            nu: 3.0,
            q: 0.5,
            h: 50,
            sigma_tau_sq: 1.0,
        }
    }
}

impl CdpHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.psi1 > 0.0 && self.psi2 > 0.0 && self.nu > 0.0 && self.sigma_tau_sq > 0.0) {
            return Err(Error::Config(
                "psi1, psi2, nu and sigma_tau_sq must be positive".into(),
            ));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::Config(format!("q must lie in (0, 1), got {}", self.q)));
        }
        if self.h < 2 {
            return Err(Error::Config("truncation level H must be >= 2".into()));
        }
        Ok(())
    }

    /// κ, tied to the base-measure variance.
    pub fn kappa(&self) -> f64 {
        self.sigma_tau_sq
    }

    /// Prior mean and variance of the mass parameter.
    pub fn mass_prior_moments(&self) -> (f64, f64) {
        (self.psi1 / self.psi2, self.psi1 / (self.psi2 * self.psi2))
    }
}

/// Truncated stick-breaking mixture state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdpState {
    pub v: Vec<f64>,
    pub pi: Vec<f64>,
    pub tau_star: Vec<f64>,
    pub mu_gstar: f64,
    pub tau: Vec<f64>,
    pub mass: f64,
    pub sigma_sq: f64,
    pub labels: Vec<usize>,
    pub counts: Vec<usize>,
}

/// Stick-breaking weights from fractions with `v[H-1] = 1`. The last weight
/// is the remainder, so the left-to-right sum is exactly one.
pub fn stick_weights(v: &[f64]) -> Vec<f64> {
    let h = v.len();
    let mut pi = vec![0.0; h];
    let mut remaining = 1.0;
    let mut acc = 0.0;
    for k in 0..h.saturating_sub(1) {
        let mut p = v[k] * remaining;
        if acc + p > 1.0 {
            p = complement(acc);
        }
        pi[k] = p;
        remaining *= 1.0 - v[k];
        acc += p;
    }
    if h > 0 {
        pi[h - 1] = complement(acc);
    }
    pi
}

/// `x >= 0` with `acc + x == 1` in floating point. `1 - acc` is exact when
/// `acc >= 0.5`; otherwise it is off by at most a few ulps.
fn complement(acc: f64) -> f64 {
    let mut x = (1.0 - acc).max(0.0);
    while acc + x > 1.0 && x > 0.0 {
        x = x.next_down();
    }
    while acc + x < 1.0 {
        x = x.next_up();
    }
    x
}

impl CdpState {
    /// Starting state: every row in cluster 1, raw atoms at 0, stick
    /// fractions at the prior mean `1/(1+M)`, `M = ψ1/ψ2`, `σ² = σ̂_W²/2`.
    pub fn initial(n: usize, hyper: &CdpHyper, sigma_w_hat: f64) -> Self {
        let h = hyper.h;
        let mass = hyper.psi1 / hyper.psi2;
        let mut v = vec![1.0 / (1.0 + mass); h];
        v[h - 1] = 1.0;
        let pi = stick_weights(&v);
        let mut counts = vec![0; h];
        counts[0] = n;
        CdpState {
            v,
            pi,
            tau_star: vec![0.0; h],
            mu_gstar: 0.0,
            tau: vec![0.0; h],
            mass,
            sigma_sq: 0.5 * sigma_w_hat * sigma_w_hat,
            labels: vec![0; n],
            counts,
        }
    }

    /// State with given weights/atoms, recentered; labels all in cluster 1.
    pub fn from_components(pi: Vec<f64>, tau_star: Vec<f64>, sigma_sq: f64, mass: f64, n: usize) -> Self {
        let h = pi.len();
        assert_eq!(tau_star.len(), h);
        // recover fractions for consistency with the stick representation
        let mut v = vec![0.0; h];
        let mut remaining = 1.0;
        for k in 0..h {
            v[k] = if remaining > 0.0 { (pi[k] / remaining).min(1.0) } else { 1.0 };
            remaining -= pi[k];
        }
        v[h - 1] = 1.0;
        let mut counts = vec![0; h];
        if h > 0 {
            counts[0] = n;
        }
        let mut s = CdpState {
            v,
            pi,
            tau_star,
            mu_gstar: 0.0,
            tau: vec![0.0; h],
            mass,
            sigma_sq,
            labels: vec![0; n],
            counts,
        };
        s.recenter();
        s
    }

    pub fn h(&self) -> usize {
        self.pi.len()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma_sq.sqrt()
    }

    /// `μ_G* = Σ π_h τ_h*`, `τ_h = τ_h* - μ_G*`.
    pub fn recenter(&mut self) {
        self.mu_gstar = self.pi.iter().zip(&self.tau_star).map(|(p, t)| p * t).sum();
        for (t, ts) in self.tau.iter_mut().zip(&self.tau_star) {
            *t = ts - self.mu_gstar;
        }
    }

    /// `Σ π_h τ_h`, zero up to rounding.
    pub fn weighted_mean(&self) -> f64 {
        self.pi.iter().zip(&self.tau).map(|(p, t)| p * t).sum()
    }

    pub fn weight_sum(&self) -> f64 {
        self.pi.iter().sum()
    }

    pub fn retabulate(&mut self) {
        self.counts = vec![0; self.h()];
        for &s in &self.labels {
            self.counts[s] += 1;
        }
    }

    /// Number of clusters with at least one member.
    pub fn occupied(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// One-based index of the highest occupied cluster.
    pub fn max_occupied_index(&self) -> usize {
        self.counts.iter().rposition(|&c| c > 0).map_or(0, |k| k + 1)
    }

    /// Residual variance `σ² + Σ π_h τ_h²` implied by the current state.
    pub fn residual_variance(&self) -> f64 {
        self.sigma_sq + self.pi.iter().zip(&self.tau).map(|(p, t)| p * t * t).sum::<f64>()
    }
}

/// Calibration outcome.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub sigma_tau_sq: f64,
    /// Empirical q-quantile of the variance factor.
    pub factor_quantile: f64,
    pub discarded: usize,
    pub draws: usize,
}

/// One draw of the approximate variance factor
/// `ν/χ²_ν + N(1, 2/(M+1))`, `M ~ Gamma(ψ1, ψ2)`.
pub fn variance_factor_draw<R: Rng + ?Sized>(hyper: &CdpHyper, rng: &mut R) -> f64 {
    let mass = Gamma::new(hyper.psi1, 1.0 / hyper.psi2).unwrap().sample(rng);
    let chi = ChiSquared::new(hyper.nu).unwrap().sample(rng);
    let z: f64 = StandardNormal.sample(rng);
    hyper.nu / chi + 1.0 + (2.0 / (mass + 1.0)).sqrt() * z
}

/// Choose `σ_τ² = κ` so the approximate prior puts probability `q` on
/// `{Var(W | G, σ) <= σ̂_W²}`.
pub fn calibrate_scale<R: Rng + ?Sized>(
    sigma_w_hat: f64,
    hyper: &CdpHyper,
    mc_draws: usize,
    rng: &mut R,
) -> Result<Calibration> {
    if !(sigma_w_hat > 0.0) {
        return Err(Error::Calibration(format!(
            "rough residual sd must be positive, got {sigma_w_hat}"
        )));
    }
    if mc_draws == 0 {
        return Err(Error::Calibration("mc_draws must be positive".into()));
    }
    let mut factors: Vec<f64> = (0..mc_draws).map(|_| variance_factor_draw(hyper, rng)).collect();
    let before = factors.len();
    factors.retain(|&f| f > 0.0);
    let discarded = before - factors.len();
    if discarded > 0 {
        log::warn!("calibration discarded {discarded} nonpositive variance-factor draws");
    }
    if discarded * 10 > before {
        return Err(Error::Calibration(format!(
            "{discarded} of {before} variance-factor draws were nonpositive"
        )));
    }
    factors.sort_by(f64::total_cmp);
    let fq = quantile_sorted(&factors, hyper.q);
    Ok(Calibration {
        sigma_tau_sq: sigma_w_hat * sigma_w_hat / fq,
        factor_quantile: fq,
        discarded,
        draws: before,
    })
}

/// `P(S_i = h) ∝ π_h φ((r_i - τ_h)/σ)`, sampled in log space.
pub fn update_cluster_labels<R: Rng + ?Sized>(state: &mut CdpState, residuals: &[f64], rng: &mut R) {
    let h = state.h();
    let inv2s2 = 0.5 / state.sigma_sq;
    let log_pi: Vec<f64> = state.pi.iter().map(|p| p.ln()).collect();
    let mut logp = vec![0.0; h];
    state.labels.resize(residuals.len(), 0);
    for (i, &r) in residuals.iter().enumerate() {
        let mut max = f64::NEG_INFINITY;
        for k in 0..h {
            let d = r - state.tau[k];
            logp[k] = log_pi[k] - d * d * inv2s2;
            max = max.max(logp[k]);
        }
        let mut total = 0.0;
        for lp in logp.iter_mut() {
            *lp = (*lp - max).exp();
            total += *lp;
        }
        let u = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = h - 1;
        for (k, w) in logp.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = k;
                break;
            }
        }
        // never land on a zero-weight component through rounding
        while logp[chosen] == 0.0 && chosen > 0 {
            chosen -= 1;
        }
        state.labels[i] = chosen;
    }
    state.retabulate();
}

/// `V_h ~ Beta(1 + n_h, M + Σ_{k>h} n_k)`, `V_H = 1`.
pub fn update_stick_weights<R: Rng + ?Sized>(state: &mut CdpState, rng: &mut R) {
    let h = state.h();
    let mut tail = 0usize;
    let mut tails = vec![0usize; h];
    for k in (0..h).rev() {
        tails[k] = tail;
        tail += state.counts[k];
    }
    for k in 0..h - 1 {
        let a = 1.0 + state.counts[k] as f64;
        let b = state.mass + tails[k] as f64;
        state.v[k] = Beta::new(a, b).unwrap().sample(rng);
    }
    state.v[h - 1] = 1.0;
    state.pi = stick_weights(&state.v);
}

/// Conjugate draw of the raw atoms followed by recentering.
pub fn update_cluster_locations<R: Rng + ?Sized>(
    state: &mut CdpState,
    residuals: &[f64],
    sigma_tau_sq: f64,
    rng: &mut R,
) {
    let h = state.h();
    let mut sums = vec![0.0; h];
    for (&s, &r) in state.labels.iter().zip(residuals) {
        sums[s] += r;
    }
    for k in 0..h {
        let denom = state.counts[k] as f64 * sigma_tau_sq + state.sigma_sq;
        let mean = sigma_tau_sq * sums[k] / denom;
        let var = sigma_tau_sq * state.sigma_sq / denom;
        state.tau_star[k] = Normal::new(mean, var.sqrt()).unwrap().sample(rng);
    }
    state.recenter();
}

/// Gamma `(shape, rate)` of the mass-parameter full conditional.
pub fn mass_posterior_params(state: &CdpState, hyper: &CdpHyper) -> (f64, f64) {
    let h = state.h();
    let log_sum: f64 = state.v[..h - 1]
        .iter()
        .map(|&v| (1.0 - v.min(STICK_CLAMP)).ln())
        .sum();
    (hyper.psi1 + (h - 1) as f64, hyper.psi2 - log_sum)
}

/// Inverse-gamma `(shape, scale)` of the σ² full conditional.
pub fn scale_posterior_params(state: &CdpState, residuals: &[f64], hyper: &CdpHyper) -> (f64, f64) {
    let ss: f64 = state
        .labels
        .iter()
        .zip(residuals)
        .map(|(&s, &r)| (r - state.tau[s]) * (r - state.tau[s]))
        .sum();
    let n = residuals.len() as f64;
    (0.5 * (hyper.nu + n), 0.5 * (ss + hyper.kappa() * hyper.nu))
}

pub fn update_mass_and_scale<R: Rng + ?Sized>(
    state: &mut CdpState,
    residuals: &[f64],
    hyper: &CdpHyper,
    rng: &mut R,
) {
    let (shape, rate) = mass_posterior_params(state, hyper);
    state.mass = Gamma::new(shape, 1.0 / rate).unwrap().sample(rng);
    let (a, b) = scale_posterior_params(state, residuals, hyper);
    let g: f64 = Gamma::new(a, 1.0 / b).unwrap().sample(rng);
    state.sigma_sq = 1.0 / g;
}

/// Complete-data log responses: observed values for events, truncated
/// normal draws above the censoring point otherwise.
pub fn impute_censored<R: Rng + ?Sized>(
    state: &CdpState,
    m_values: &[f64],
    log_y_tr: &[f64],
    delta: &[bool],
    rng: &mut R,
) -> Vec<f64> {
    let sd = state.sigma();
    (0..log_y_tr.len())
        .map(|i| {
            if delta[i] {
                log_y_tr[i]
            } else {
                let mean = m_values[i] + state.tau[state.labels[i]];
                truncated_normal_lower(mean, sd, log_y_tr[i], rng)
            }
        })
        .collect()
}

/// `(1/σ) Σ_h π_h φ((w - τ_h)/σ)`.
pub fn residual_density(w: f64, state: &CdpState) -> f64 {
    let s = state.sigma();
    state
        .pi
        .iter()
        .zip(&state.tau)
        .map(|(p, t)| p * norm_pdf((w - t) / s))
        .sum::<f64>()
        / s
}

/// Draw truncated stick-breaking weights and raw atoms from the prior.
pub fn sample_prior_mixture<R: Rng + ?Sized>(
    mass: f64,
    h: usize,
    sigma_tau_sq: f64,
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let beta = Beta::new(1.0, mass).unwrap();
    let mut v: Vec<f64> = (0..h).map(|_| beta.sample(rng)).collect();
    v[h - 1] = 1.0;
    let pi = stick_weights(&v);
    let sd = sigma_tau_sq.sqrt();
    let tau_star = (0..h)
        .map(|_| sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect();
    (pi, tau_star)
}
