//! Posterior summaries of heterogeneous treatment effects.
//!
//! All summaries are functions of the per-draw effect matrix
//! `θ_d(x_i) = m_d(1, x_i) - m_d(0, x_i)` on the log-time scale, plus the
//! mixture snapshots for survival curves and the retained forests for
//! partial dependence.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EncodedDataset;
use crate::error::{Error, Result};
use crate::forest::forest_predict;
use crate::gibbs::PosteriorDraws;
use crate::stats::{mean, norm_pdf, norm_sf, quantile_sorted, var_sample};

/// Lower and upper probabilities of the equal-tailed 95% band.
pub const BAND: (f64, f64) = (0.025, 0.975);
pub const STRONG: f64 = 0.95;
pub const MILD: f64 = 0.8;
pub const DEFAULT_EPSILONS: [f64; 3] = [0.0, 0.1, 0.25];

fn band(values: &mut [f64]) -> (f64, f64) {
    values.sort_by(f64::total_cmp);
    (quantile_sorted(values, BAND.0), quantile_sorted(values, BAND.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Log,
    Ratio,
}

/// Treatment-effect draws, `theta[d][i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IteDraws {
    pub scale: Scale,
    pub theta: Vec<Vec<f64>>,
}

impl IteDraws {
    pub fn new(theta: Vec<Vec<f64>>) -> Result<Self> {
        let n = theta.first().map_or(0, Vec::len);
        if theta.is_empty() || n == 0 {
            return Err(Error::InvalidArgument("need at least one draw and one patient".into()));
        }
        if theta.iter().any(|r| r.len() != n) {
            return Err(Error::LengthMismatch("effect draws have unequal lengths".into()));
        }
        Ok(IteDraws {
            scale: Scale::Log,
            theta,
        })
    }

    pub fn num_draws(&self) -> usize {
        self.theta.len()
    }

    pub fn n(&self) -> usize {
        self.theta[0].len()
    }

    /// Draws of patient `i`.
    pub fn patient(&self, i: usize) -> Vec<f64> {
        self.theta.iter().map(|r| r[i]).collect()
    }

    pub fn posterior_mean(&self) -> Vec<f64> {
        (0..self.n()).map(|i| mean(&self.patient(i))).collect()
    }

    /// Pointwise posterior mean and equal-tailed band per patient.
    pub fn intervals(&self) -> Vec<(f64, f64, f64)> {
        (0..self.n())
            .map(|i| {
                let mut v = self.patient(i);
                let m = mean(&v);
                let (lo, hi) = band(&mut v);
                (m, lo, hi)
            })
            .collect()
    }

    /// Elementwise `exp`, giving ratios of expected survival times.
    pub fn to_ratio(&self) -> IteDraws {
        IteDraws {
            scale: Scale::Ratio,
            theta: self
                .theta
                .iter()
                .map(|r| r.iter().map(|v| v.exp()).collect())
                .collect(),
        }
    }
}

/// Effect draws from a fit.
pub fn ite_draws(draws: &PosteriorDraws, scale: Scale) -> Result<IteDraws> {
    let ite = IteDraws::new((0..draws.num_draws()).map(|d| draws.theta_row(d)).collect())?;
    Ok(match scale {
        Scale::Log => ite,
        Scale::Ratio => ite.to_ratio(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evidence {
    None,
    Mild,
    Strong,
}

/// Differential-effect probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DteSummary {
    pub d: Vec<f64>,
    pub d_star: Vec<f64>,
    pub evidence: Vec<Evidence>,
    /// Fraction of patients with `D* > 0.95`.
    pub frac_strong: f64,
    /// Fraction of patients with `D* > 0.8`.
    pub frac_mild: f64,
}

pub fn fold_probability(d: f64) -> f64 {
    (1.0 - 2.0 * d).max(2.0 * d - 1.0)
}

/// `D_i` = fraction of draws with `θ(x_i) >= θ̄`, `θ̄` the per-draw mean
/// over patients.
pub fn differential_effect(ite: &IteDraws) -> DteSummary {
    let n = ite.n();
    let mut counts = vec![0usize; n];
    for row in &ite.theta {
        // keep θ̄ inside [min, max] so exact homogeneity survives rounding
        let (lo, hi) = row
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let bar = mean(row).clamp(lo, hi);
        for (c, &t) in counts.iter_mut().zip(row) {
            if t >= bar {
                *c += 1;
            }
        }
    }
    let nd = ite.num_draws() as f64;
    let d: Vec<f64> = counts.iter().map(|&c| c as f64 / nd).collect();
    let d_star: Vec<f64> = d.iter().map(|&v| fold_probability(v)).collect();
    let evidence: Vec<Evidence> = d_star
        .iter()
        .map(|&s| {
            if s > STRONG {
                Evidence::Strong
            } else if s > MILD {
                Evidence::Mild
            } else {
                Evidence::None
            }
        })
        .collect();
    let frac = |thr: f64| d_star.iter().filter(|&&s| s > thr).count() as f64 / n as f64;
    DteSummary {
        frac_strong: frac(STRONG),
        frac_mild: frac(MILD),
        d,
        d_star,
        evidence,
    }
}

/// Estimated distribution of effects across patients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectDistribution {
    pub grid: Vec<f64>,
    pub cdf: Vec<f64>,
    pub cdf_lower: Vec<f64>,
    pub cdf_upper: Vec<f64>,
    pub density: Vec<f64>,
    pub bandwidth: f64,
}

/// `0.9 min(σ̂, IQR̂/1.34) n^(-1/5)` with `σ̂`, `IQR̂` the posterior means of
/// the across-patient sd and interquartile range.
pub fn default_bandwidth(ite: &IteDraws) -> f64 {
    let n = ite.n();
    let mut sds = Vec::with_capacity(ite.num_draws());
    let mut iqrs = Vec::with_capacity(ite.num_draws());
    for row in &ite.theta {
        let mut s = row.clone();
        s.sort_by(f64::total_cmp);
        iqrs.push(quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25));
        sds.push(if n > 1 { var_sample(row).sqrt() } else { 0.0 });
    }
    0.9 * mean(&sds).min(mean(&iqrs) / 1.34) * (n as f64).powf(-0.2)
}

pub fn effect_distribution(
    ite: &IteDraws,
    grid: &[f64],
    bandwidth: Option<f64>,
) -> Result<EffectDistribution> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("grid must be strictly increasing".into()));
    }
    let lambda = bandwidth.unwrap_or_else(|| default_bandwidth(ite));
    if !(lambda > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "kernel bandwidth must be positive, got {lambda}"
        )));
    }
    let n = ite.n() as f64;
    let sorted: Vec<Vec<f64>> = ite
        .theta
        .iter()
        .map(|r| {
            let mut s = r.clone();
            s.sort_by(f64::total_cmp);
            s
        })
        .collect();
    let per_point: Vec<(f64, f64, f64, f64)> = grid
        .par_iter()
        .map(|&t| {
            let mut hs: Vec<f64> = sorted
                .iter()
                .map(|s| s.partition_point(|&v| v <= t) as f64 / n)
                .collect();
            let cdf = mean(&hs);
            let (lo, hi) = band(&mut hs);
            let dens = ite
                .theta
                .iter()
                .map(|r| r.iter().map(|&v| norm_pdf((t - v) / lambda)).sum::<f64>())
                .sum::<f64>()
                / (lambda * n * ite.num_draws() as f64);
            (cdf, lo, hi, dens)
        })
        .collect();
    Ok(EffectDistribution {
        grid: grid.to_vec(),
        cdf: per_point.iter().map(|p| p.0).collect(),
        cdf_lower: per_point.iter().map(|p| p.1).collect(),
        cdf_upper: per_point.iter().map(|p| p.2).collect(),
        density: per_point.iter().map(|p| p.3).collect(),
        bandwidth: lambda,
    })
}

/// Evenly spaced grid covering all draws with a margin of `pad` on each side.
pub fn span_grid(ite: &IteDraws, points: usize, pad: f64) -> Vec<f64> {
    let (lo, hi) = ite
        .theta
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = (lo - pad, hi + pad);
    let hi = if hi > lo { hi } else { lo + 1.0 };
    (0..points)
        .map(|k| lo + (hi - lo) * k as f64 / (points - 1).max(1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QSummary {
    pub epsilon: f64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitBand {
    pub label: String,
    pub count: usize,
    pub percent: f64,
}

/// Proportion benefiting and per-patient probabilities of benefit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenefitSummary {
    /// Per-draw `Q` at `ε = 0`.
    pub q_draws: Vec<f64>,
    pub q: QSummary,
    pub q_eps: Vec<QSummary>,
    pub p_hat: Vec<f64>,
    pub bands: Vec<BenefitBand>,
}

impl BenefitSummary {
    /// Average of `p̂_i`, computed from the same integer counts as `q.mean`
    /// so the two agree exactly.
    pub fn mean_p_hat(&self) -> f64 {
        let nd = self.q_draws.len() as f64;
        let total: f64 = self.p_hat.iter().map(|p| (p * nd).round()).sum();
        total / (self.p_hat.len() as f64 * nd)
    }
}

fn q_summary(ite: &IteDraws, eps: f64) -> (QSummary, Vec<f64>) {
    let n = ite.n();
    let counts: Vec<usize> = ite
        .theta
        .iter()
        .map(|r| r.iter().filter(|&&t| t > eps).count())
        .collect();
    let total: usize = counts.iter().sum();
    let mut qs: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    let draws = qs.clone();
    let (lower, upper) = band(&mut qs);
    (
        QSummary {
            epsilon: eps,
            mean: total as f64 / (n * ite.num_draws()) as f64,
            lower,
            upper,
        },
        draws,
    )
}

/// Table-style bands for `p̂`: (0.99,1], (0.95,0.99], (0.75,0.95],
/// (0.25,0.75], [0,0.25].
pub fn benefit_bands(p_hat: &[f64]) -> Vec<BenefitBand> {
    let labels = ["(0.99,1]", "(0.95,0.99]", "(0.75,0.95]", "(0.25,0.75]", "[0,0.25]"];
    let mut counts = [0usize; 5];
    for &p in p_hat {
        let k = if p > 0.99 {
            0
        } else if p > 0.95 {
            1
        } else if p > 0.75 {
            2
        } else if p > 0.25 {
            3
        } else {
            4
        };
        counts[k] += 1;
    }
    let n = p_hat.len().max(1) as f64;
    labels
        .iter()
        .zip(counts)
        .map(|(l, c)| BenefitBand {
            label: l.to_string(),
            count: c,
            percent: 100.0 * c as f64 / n,
        })
        .collect()
}

pub fn proportion_benefiting(ite: &IteDraws, epsilons: &[f64]) -> BenefitSummary {
    let (q, q_draws) = q_summary(ite, 0.0);
    let q_eps = epsilons.iter().map(|&e| q_summary(ite, e).0).collect();
    let nd = ite.num_draws() as f64;
    let p_hat: Vec<f64> = (0..ite.n())
        .map(|i| ite.theta.iter().filter(|r| r[i] > 0.0).count() as f64 / nd)
        .collect();
    let bands = benefit_bands(&p_hat);
    BenefitSummary {
        q_draws,
        q,
        q_eps,
        p_hat,
        bands,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocationRule {
    Misclassification,
    Weighted,
}

/// Recommended arm per patient (`true` = treatment). Ties go to control.
pub fn allocate(ite: &IteDraws, rule: AllocationRule) -> Vec<bool> {
    let nd = ite.num_draws() as f64;
    (0..ite.n())
        .map(|i| match rule {
            AllocationRule::Misclassification => {
                ite.theta.iter().filter(|r| r[i] > 0.0).count() as f64 / nd > 0.5
            }
            AllocationRule::Weighted => {
                let (mut pos, mut neg) = (0.0, 0.0);
                for r in &ite.theta {
                    if r[i] > 0.0 {
                        pos += r[i];
                    } else {
                        neg -= r[i];
                    }
                }
                pos / nd > neg / nd
            }
        })
        .collect()
}

/// Posterior survival curve at one covariate profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalCurve {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// `S_d(t) = Σ_h π_h (1 - Φ((log t - m_d - τ_h)/σ))` for one draw.
pub fn survival_draw(times: &[f64], m: f64, pi: &[f64], tau: &[f64], sigma: f64) -> Vec<f64> {
    times
        .iter()
        .map(|&t| {
            let lt = t.ln();
            pi.iter()
                .zip(tau)
                .map(|(p, tk)| p * norm_sf((lt - m - tk) / sigma))
                .sum::<f64>()
                .min(1.0)
        })
        .collect()
}

/// Survival curve given per-draw `m(a, x)` on the original scale.
pub fn survival_curve(draws: &PosteriorDraws, m: &[f64], times: &[f64]) -> Result<SurvivalCurve> {
    if m.len() != draws.num_draws() {
        return Err(Error::LengthMismatch(format!(
            "{} fit values for {} draws",
            m.len(),
            draws.num_draws()
        )));
    }
    if times.iter().any(|&t| !(t > 0.0)) || times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("times must be positive and increasing".into()));
    }
    let curves: Vec<Vec<f64>> = draws
        .draws
        .iter()
        .zip(m)
        .map(|(d, &mv)| survival_draw(times, mv, &d.pi, &d.tau, d.sigma))
        .collect();
    let mut out = SurvivalCurve {
        times: times.to_vec(),
        mean: Vec::with_capacity(times.len()),
        lower: Vec::with_capacity(times.len()),
        upper: Vec::with_capacity(times.len()),
    };
    for k in 0..times.len() {
        let mut v: Vec<f64> = curves.iter().map(|c| c[k]).collect();
        out.mean.push(mean(&v));
        let (lo, hi) = band(&mut v);
        out.lower.push(lo);
        out.upper.push(hi);
    }
    Ok(out)
}

/// Partial dependence of the effect on one encoded covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialDependence {
    pub covariate: usize,
    pub grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Grid points outside the observed covariate range.
    pub extrapolated: Vec<bool>,
    /// `per_draw[d][k]` = `ρ_d(z_k)`.
    #[serde(skip)]
    pub per_draw: Vec<Vec<f64>>,
}

/// `ρ_d(z) = n⁻¹ Σ_i θ_d(z, x_{i,-l})`, evaluated from the retained forests.
pub fn partial_dependence(
    draws: &PosteriorDraws,
    x: &crate::data::Matrix,
    l: usize,
    grid: &[f64],
) -> Result<PartialDependence> {
    let forests = draws.checkpoints.as_ref().ok_or(Error::CheckpointsAbsent)?;
    if x.ncols() != draws.p {
        return Err(Error::LengthMismatch(format!(
            "covariate matrix has {} columns, the fit used {}",
            x.ncols(),
            draws.p
        )));
    }
    if l >= x.ncols() {
        return Err(Error::InvalidArgument(format!(
            "covariate index {l} out of range (p = {})",
            x.ncols()
        )));
    }
    let n = x.nrows();
    let col = x.column(l);
    let (lo, hi) = col
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let extrapolated: Vec<bool> = grid.iter().map(|&z| z < lo || z > hi).collect();
    if extrapolated.iter().any(|&e| e) {
        log::warn!("partial dependence grid extends outside the observed range of covariate {l}");
    }
    let per_draw: Vec<Vec<f64>> = forests
        .par_iter()
        .map(|trees| {
            let mut u = vec![0.0; x.ncols() + 1];
            grid.iter()
                .map(|&z| {
                    let mut total = 0.0;
                    for i in 0..n {
                        u[1..].copy_from_slice(x.row(i));
                        u[1 + l] = z;
                        u[0] = 1.0;
                        let f1 = forest_predict(trees, &u);
                        u[0] = 0.0;
                        let f0 = forest_predict(trees, &u);
                        total += f1 - f0;
                    }
                    total / n as f64
                })
                .collect()
        })
        .collect();
    let mut out = PartialDependence {
        covariate: l,
        grid: grid.to_vec(),
        mean: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        extrapolated,
        per_draw,
    };
    for k in 0..grid.len() {
        let mut v: Vec<f64> = out.per_draw.iter().map(|r| r[k]).collect();
        out.mean.push(mean(&v));
        let (a, b) = band(&mut v);
        out.lower.push(a);
        out.upper.push(b);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCoefficient {
    pub name: String,
    pub coefficient: f64,
}

/// Weighted least squares of `θ̂_i` on standardized covariates with weights
/// `1 / Var(θ(x_i))`; coefficients sorted by absolute value.
pub fn virtual_twins_rank(ite: &IteDraws, data: &EncodedDataset) -> Result<Vec<RankedCoefficient>> {
    let theta_hat = ite.posterior_mean();
    let weights: Vec<f64> = (0..ite.n())
        .map(|i| {
            let v = if ite.num_draws() > 1 { var_sample(&ite.patient(i)) } else { 1.0 };
            1.0 / v.max(1e-12)
        })
        .collect();
    let names = data.schema.encoded_names();
    weighted_ranking(&theta_hat, &weights, &data.x, &names)
}

/// The regression behind [`virtual_twins_rank`].
pub fn weighted_ranking(
    response: &[f64],
    weights: &[f64],
    x: &crate::data::Matrix,
    names: &[String],
) -> Result<Vec<RankedCoefficient>> {
    let (n, p) = (x.nrows(), x.ncols());
    if response.len() != n || weights.len() != n || names.len() != p {
        return Err(Error::LengthMismatch("ranking inputs disagree in size".into()));
    }
    if n < p + 1 {
        return Err(Error::InvalidArgument(format!(
            "need at least {} patients for {p} covariates",
            p + 1
        )));
    }
    let mut constant = Vec::new();
    let mut z = DMatrix::<f64>::zeros(n, p + 1);
    for j in 0..p {
        let c = x.column(j);
        let m = mean(&c);
        let sd = var_sample(&c).sqrt();
        if !(sd > 0.0) {
            constant.push(names[j].clone());
            continue;
        }
        for i in 0..n {
            z[(i, j + 1)] = (c[i] - m) / sd;
        }
    }
    if !constant.is_empty() {
        return Err(Error::SingularDesign(constant));
    }
    for i in 0..n {
        z[(i, 0)] = 1.0;
    }
    let sw: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();
    let zw = DMatrix::from_fn(n, p + 1, |i, j| z[(i, j)] * sw[i]);
    let yw = DVector::from_fn(n, |i, _| response[i] * sw[i]);
    let qr = zw.clone().qr();
    let r = qr.r();
    let scale = (0..=p).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    let bad: Vec<String> = (1..=p)
        .filter(|&j| r[(j, j)].abs() <= 1e-10 * scale)
        .map(|j| names[j - 1].clone())
        .collect();
    if !bad.is_empty() {
        return Err(Error::SingularDesign(bad));
    }
    let qty = qr.q().transpose() * yw;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign(names.to_vec()))?;
    let mut out: Vec<RankedCoefficient> = (0..p)
        .map(|j| RankedCoefficient {
            name: names[j].clone(),
            coefficient: beta[j + 1],
        })
        .collect();
    out.sort_by(|a, b| b.coefficient.abs().total_cmp(&a.coefficient.abs()));
    Ok(out)
}

/// Options for [`summarize`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SummaryOptions {
    pub grid_points: usize,
    pub bandwidth: Option<f64>,
    pub epsilons: Vec<f64>,
    /// Training row whose survival curves are reported.
    pub profile: usize,
    pub time_points: usize,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions {
            grid_points: 200,
            bandwidth: None,
            epsilons: DEFAULT_EPSILONS.to_vec(),
            profile: 0,
            time_points: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IteInterval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub ratio_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityChecks {
    pub q_mean_equals_mean_p_hat: bool,
    pub d_star_identity: bool,
    pub survival_monotone: bool,
    pub survival_limits: bool,
}

impl IdentityChecks {
    pub fn all(&self) -> bool {
        self.q_mean_equals_mean_p_hat
            && self.d_star_identity
            && self.survival_monotone
            && self.survival_limits
    }
}

/// Every summary reported for one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HteSummary {
    pub n: usize,
    pub num_draws: usize,
    pub pct_strong: f64,
    pub pct_mild: f64,
    pub differential: DteSummary,
    pub ite: Vec<IteInterval>,
    pub benefit: BenefitSummary,
    pub allocation_misclassification: Vec<bool>,
    pub allocation_weighted: Vec<bool>,
    pub effect_distribution: Option<EffectDistribution>,
    /// Why the effect distribution was omitted, when it was.
    pub effect_distribution_note: Option<String>,
    pub survival_profile: usize,
    pub survival_control: SurvivalCurve,
    pub survival_treated: SurvivalCurve,
    pub checks: IdentityChecks,
}

/// Time grid spanning the fitted medians of a profile, on a log scale.
fn time_grid(m: &[f64], sigma: f64, points: usize) -> Vec<f64> {
    let lo = m.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * sigma;
    let hi = m.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * sigma;
    let hi = if hi > lo { hi } else { lo + 1.0 };
    (0..points)
        .map(|k| (lo + (hi - lo) * k as f64 / (points - 1).max(1) as f64).exp())
        .collect()
}

/// Compute all summaries and verify the algebraic identities among them.
pub fn summarize(draws: &PosteriorDraws, opts: &SummaryOptions) -> Result<HteSummary> {
    let ite = ite_draws(draws, Scale::Log)?;
    if opts.profile >= ite.n() {
        return Err(Error::InvalidArgument(format!(
            "profile row {} out of range (n = {})",
            opts.profile,
            ite.n()
        )));
    }
    let differential = differential_effect(&ite);
    let ratio = ite.to_ratio();
    let ite_iv: Vec<IteInterval> = ite
        .intervals()
        .into_iter()
        .enumerate()
        .map(|(i, (m, lo, hi))| IteInterval {
            mean: m,
            lower: lo,
            upper: hi,
            ratio_mean: mean(&ratio.patient(i)),
        })
        .collect();
    let benefit = proportion_benefiting(&ite, &opts.epsilons);
    let grid = span_grid(&ite, opts.grid_points.max(2), 0.1);
    let (effect, note) = match effect_distribution(&ite, &grid, opts.bandwidth) {
        Ok(e) => (Some(e), None),
        Err(Error::InvalidArgument(msg)) if opts.bandwidth.is_none() => {
            log::warn!("effect density omitted: {msg}");
            (None, Some(msg))
        }
        Err(e) => return Err(e),
    };

    let p = opts.profile;
    let m0: Vec<f64> = draws.draws.iter().map(|d| d.m0[p]).collect();
    let m1: Vec<f64> = draws.draws.iter().map(|d| d.m1[p]).collect();
    let sigma_max = draws.draws.iter().map(|d| d.sigma).fold(0.0, f64::max);
    let both: Vec<f64> = m0.iter().chain(&m1).cloned().collect();
    let times = time_grid(&both, sigma_max, opts.time_points.max(2));
    let survival_control = survival_curve(draws, &m0, &times)?;
    let survival_treated = survival_curve(draws, &m1, &times)?;

    let mut monotone = true;
    let mut limits = true;
    for (d, (&a, &b)) in draws.draws.iter().zip(m0.iter().zip(&m1)) {
        for m in [a, b] {
            let s = survival_draw(&times, m, &d.pi, &d.tau, d.sigma);
            monotone &= s.windows(2).all(|w| w[1] <= w[0]);
            let ends = survival_draw(&[f64::MIN_POSITIVE, f64::MAX], m, &d.pi, &d.tau, d.sigma);
            limits &= (ends[0] - 1.0).abs() < 1e-10 && ends[1].abs() < 1e-10;
        }
    }
    let checks = IdentityChecks {
        q_mean_equals_mean_p_hat: benefit.q.mean == benefit.mean_p_hat(),
        d_star_identity: differential
            .d
            .iter()
            .zip(&differential.d_star)
            .all(|(d, s)| (s - (2.0 * d - 1.0).abs()).abs() < 1e-15),
        survival_monotone: monotone,
        survival_limits: limits,
    };
    if !checks.all() {
        return Err(Error::Numeric(format!("summary identity check failed: {checks:?}")));
    }
    Ok(HteSummary {
        n: ite.n(),
        num_draws: ite.num_draws(),
        pct_strong: 100.0 * differential.frac_strong,
        pct_mild: 100.0 * differential.frac_mild,
        allocation_misclassification: allocate(&ite, AllocationRule::Misclassification),
        allocation_weighted: allocate(&ite, AllocationRule::Weighted),
        differential,
        ite: ite_iv,
        benefit,
        effect_distribution: effect,
        effect_distribution_note: note,
        survival_profile: p,
        survival_control,
        survival_treated,
        checks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Matrix;
    use crate::rng::seeded;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn toy() -> IteDraws {
        IteDraws::new(vec![
            vec![1.0, -1.0],
            vec![0.5, 0.7],
            vec![2.0, 0.0],
            vec![-0.2, 0.4],
        ])
        .unwrap()
    }

    #[test]
    fn ratio_scale() {
        let ite = IteDraws::new(vec![vec![0.0, 2f64.ln()]]).unwrap();
        let r = ite.to_ratio();
        assert_eq!(r.theta[0][0], 1.0);
        assert_relative_eq!(r.theta[0][1], 2.0, epsilon = 1e-15);
        let mut rng = seeded(1);
        let rand: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random::<f64>() - 0.5).collect()).collect();
        let ite = IteDraws::new(rand.clone()).unwrap().to_ratio();
        for (a, b) in ite.theta.iter().flatten().zip(rand.iter().flatten()) {
            assert!((a - b.exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn differential_effect_by_hand() {
        // draw means: 0, 0.6, 1, 0.1
        // patient 1: 1>=0, 0.5<0.6, 2>=1, -0.2<0.1 → 2/4
        // patient 2: -1<0, 0.7>=0.6, 0<1, 0.4>=0.1 → 2/4
        let s = differential_effect(&toy());
        assert_eq!(s.d, vec![0.5, 0.5]);
        assert_eq!(s.d_star, vec![0.0, 0.0]);
        assert_relative_eq!(fold_probability(0.975), 0.95, epsilon = 1e-15);
        let homo = IteDraws::new(vec![vec![0.3, 0.3, 0.3], vec![0.1, 0.1, 0.1]]).unwrap();
        let s = differential_effect(&homo);
        assert!(s.d.iter().all(|&d| d == 1.0));
        assert_eq!(s.frac_strong, 1.0);
    }

    #[test]
    fn d_star_identity_and_classes() {
        let mut rng = seeded(2);
        let th: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..9).map(|i| i as f64 * 0.1 + rng.random::<f64>()).collect())
            .collect();
        let s = differential_effect(&IteDraws::new(th).unwrap());
        for i in 0..9 {
            assert!((s.d_star[i] - (2.0 * s.d[i] - 1.0).abs()).abs() < 1e-15);
            let strong = s.d[i] < 0.025 || s.d[i] > 0.975;
            assert_eq!(s.evidence[i] == Evidence::Strong, strong);
        }
    }

    #[test]
    fn effect_cdf_by_hand() {
        let ite = IteDraws::new(vec![vec![0.0, 1.0], vec![0.5, 2.0], vec![1.0, 3.0]]).unwrap();
        let grid = [-1.0, 0.25, 1.0, 2.5, 4.0];
        let e = effect_distribution(&ite, &grid, Some(0.3)).unwrap();
        // patient 1 draws {0, .5, 1}, patient 2 draws {1, 2, 3}
        let expect = [0.0, 0.5 * (1.0 / 3.0), 0.5 * (1.0 + 1.0 / 3.0), 0.5 * (1.0 + 2.0 / 3.0), 1.0];
        for (a, b) in e.cdf.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-15);
        }
        assert!(effect_distribution(&ite, &grid, Some(0.0)).is_err());
        assert!(effect_distribution(&ite, &[1.0, 1.0], Some(0.3)).is_err());
    }

    #[test]
    fn point_mass_effects() {
        let ite = IteDraws::new(vec![vec![0.7; 4]; 3]).unwrap();
        let e = effect_distribution(&ite, &[0.5, 0.7, 0.9], Some(0.1)).unwrap();
        assert_eq!(e.cdf, vec![0.0, 1.0, 1.0]);
        assert_relative_eq!(e.density[1], norm_pdf(0.0) / 0.1, epsilon = 1e-12);
        assert_relative_eq!(e.density[0], e.density[2], epsilon = 1e-12);
        assert_eq!(default_bandwidth(&ite), 0.0);
        assert!(effect_distribution(&ite, &[0.0, 1.0], None).is_err());
    }

    #[test]
    fn silverman_bandwidth() {
        let ite = IteDraws::new(vec![vec![0.0, 1.0, 2.0, 3.0, 4.0]]).unwrap();
        let sd = 2.5f64.sqrt();
        let iqr = 2.0;
        assert_relative_eq!(
            default_bandwidth(&ite),
            0.9 * sd.min(iqr / 1.34) * 5f64.powf(-0.2),
            epsilon = 1e-15
        );
    }

    #[test]
    fn benefit_identities() {
        let s = proportion_benefiting(&toy(), &DEFAULT_EPSILONS);
        // positives: draw1 1, draw2 2, draw3 1, draw4 1 → Q mean 5/8
        assert_eq!(s.q_draws, vec![0.5, 1.0, 0.5, 0.5]);
        assert_eq!(s.q.mean, 5.0 / 8.0);
        assert_eq!(s.p_hat, vec![0.75, 0.5]);
        assert_eq!(s.mean_p_hat(), s.q.mean);
        let big = proportion_benefiting(&toy(), &[10.0]);
        assert_eq!(big.q_eps[0].mean, 0.0);
        let pos = proportion_benefiting(&IteDraws::new(vec![vec![0.1, 0.2]; 3]).unwrap(), &[]);
        assert_eq!(pos.q.mean, 1.0);
        assert_eq!(pos.bands[0].percent, 100.0);
        assert_eq!(pos.bands.iter().map(|b| b.percent).sum::<f64>(), 100.0);
    }

    #[test]
    fn allocation_rules() {
        // p̂ = 0.25 but the positive draw is large
        let ite = IteDraws::new(vec![vec![5.0], vec![-0.1], vec![-0.1], vec![-0.1]]).unwrap();
        assert_eq!(allocate(&ite, AllocationRule::Misclassification), vec![false]);
        assert_eq!(allocate(&ite, AllocationRule::Weighted), vec![true]);
        let sym = IteDraws::new(vec![vec![1.0], vec![-1.0]]).unwrap();
        assert_eq!(allocate(&sym, AllocationRule::Weighted), vec![false]);
        assert_eq!(allocate(&sym, AllocationRule::Misclassification), vec![false]);
        let sure = IteDraws::new(vec![vec![0.2]; 3]).unwrap();
        assert_eq!(allocate(&sure, AllocationRule::Misclassification), vec![true]);
    }

    #[test]
    fn survival_single_component_is_lognormal() {
        let times = [1e-300, 0.1, 1.0, 3.0, 20.0, 1e300];
        let (m, s) = (0.4, 0.8);
        let got = survival_draw(&times, m, &[1.0], &[0.0], s);
        for (k, &t) in times.iter().enumerate() {
            let z = (t.ln() - m) / s;
            let exact = 0.5 * statrs::function::erf::erfc(z / std::f64::consts::SQRT_2);
            assert!((got[k] - exact).abs() < 1e-10);
        }
        assert!((got[0] - 1.0).abs() < 1e-10 && got[5] < 1e-10);
        let mix = survival_draw(&times, 0.0, &[0.3, 0.7], &[-1.4, 0.6], 0.5);
        assert!(mix.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn ranking_matches_normal_equations() {
        let mut rng = seeded(5);
        let n = 40;
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let x = Matrix::from_rows(&rows);
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] - r[2] + 0.1 * rng.random::<f64>()).collect();
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let got = weighted_ranking(&y, &vec![1.0; n], &x, &names).unwrap();

        // oracle: standardize, then solve (ZᵀZ) b = Zᵀy
        let mut z = DMatrix::<f64>::zeros(n, 4);
        for i in 0..n {
            z[(i, 0)] = 1.0;
        }
        for j in 0..3 {
            let c = x.column(j);
            let (m, s) = (mean(&c), var_sample(&c).sqrt());
            for i in 0..n {
                z[(i, j + 1)] = (c[i] - m) / s;
            }
        }
        let b = (z.transpose() * &z)
            .try_inverse()
            .unwrap()
            * z.transpose()
            * DVector::from_vec(y.clone());
        for rc in &got {
            let j = names.iter().position(|s| *s == rc.name).unwrap();
            assert!((rc.coefficient - b[j + 1]).abs() < 1e-10);
        }
        assert_eq!(got[0].name, "a");
    }

    #[test]
    fn ranking_exact_linear_and_constant() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, ((i * 3) % 7) as f64]).collect();
        let x = Matrix::from_rows(&rows);
        let names = vec!["x1".to_string(), "x2".to_string()];
        let y: Vec<f64> = rows.iter().map(|r| 2.0 * r[0]).collect();
        let got = weighted_ranking(&y, &[1.0; 10], &x, &names).unwrap();
        let sd = var_sample(&x.column(0)).sqrt();
        assert_eq!(got[0].name, "x1");
        assert_relative_eq!(got[0].coefficient, 2.0 * sd, epsilon = 1e-10);
        assert!(got[1].coefficient.abs() < 1e-10);
        let flat = weighted_ranking(&[0.4; 10], &[1.0; 10], &x, &names).unwrap();
        assert!(flat.iter().all(|c| c.coefficient.abs() < 1e-12));
        let dup = Matrix::from_rows(&rows.iter().map(|r| vec![r[0], 2.0 * r[0]]).collect::<Vec<_>>());
        assert!(matches!(
            weighted_ranking(&y, &[1.0; 10], &dup, &names),
            Err(Error::SingularDesign(_))
        ));
    }

    #[test]
    fn location_shift_equivariance() {
        let base = toy();
        let c = 0.37;
        let shifted = IteDraws::new(
            base.theta.iter().map(|r| r.iter().map(|v| v + c).collect()).collect(),
        )
        .unwrap();
        assert_eq!(differential_effect(&base).d, differential_effect(&shifted).d);
        let grid = [-0.5, 0.3, 1.1];
        let g2: Vec<f64> = grid.iter().map(|t| t + c).collect();
        let a = effect_distribution(&base, &grid, Some(0.2)).unwrap();
        let b = effect_distribution(&shifted, &g2, Some(0.2)).unwrap();
        for k in 0..3 {
            assert_eq!(a.cdf[k], b.cdf[k]);
            assert_relative_eq!(a.density[k], b.density[k], epsilon = 1e-12);
        }
    }
}
