//! Parametric log-normal AFT fits with right censoring.
//!
//! The intercept-only fit anchors the response transformation and every
//! prior calibration downstream; the linear fit (optionally with
//! treatment-covariate interactions) is the parametric baseline used in
//! benchmarks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{EncodedDataset, Matrix};
use crate::error::{Error, Result};
use crate::stats::{norm_hazard, norm_logsf};

const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-10;
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Location/scale of the intercept-only log-normal AFT fit (log-time units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResponseTransform {
    pub mu_aft: f64,
    pub sigma_aft: f64,
}

impl ResponseTransform {
    /// Node-value scale `ζ = 4 σ̂_AFT`.
    pub fn zeta(&self) -> f64 {
        4.0 * self.sigma_aft
    }
}

/// Maximum-likelihood fit of `log y = Xβ + σ ε`, `ε ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LognormalFit {
    pub coef: Vec<f64>,
    pub sigma: f64,
    /// Inverse observed information for `(β, log σ)`.
    pub covariance: DMatrix<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
    pub clamped: bool,
}

struct Eval {
    loglik: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn evaluate(x: &Matrix, log_y: &[f64], delta: &[bool], theta: &DVector<f64>) -> Eval {
    let p = x.ncols();
    let eta = theta[p];
    let sigma = eta.exp();
    let mut loglik = 0.0;
    let mut grad = DVector::zeros(p + 1);
    let mut hess = DMatrix::zeros(p + 1, p + 1);
    for i in 0..x.nrows() {
        let row = x.row(i);
        let lin: f64 = row.iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
        let z = (log_y[i] - lin) / sigma;
        // derivatives of the row contribution w.r.t. β (scaled by x/σ) and η
        let (gb, ge, hbb, hbe, hee) = if delta[i] {
            loglik += -eta - 0.5 * z * z;
            (z, -1.0 + z * z, -1.0, -2.0 * z, -2.0 * z * z)
        } else {
            loglik += norm_logsf(z);
            let lam = norm_hazard(z);
            let dlam = lam * (lam - z);
            (lam, lam * z, -dlam, -(dlam * z + lam), -z * (dlam * z + lam))
        };
        for a in 0..p {
            grad[a] += gb * row[a] / sigma;
            for b in 0..=a {
                hess[(a, b)] += hbb * row[a] * row[b] / (sigma * sigma);
            }
            hess[(a, p)] += hbe * row[a] / sigma;
        }
        grad[p] += ge;
        hess[(p, p)] += hee;
    }
    for a in 0..p {
        for b in 0..a {
            hess[(b, a)] = hess[(a, b)];
        }
        hess[(p, a)] = hess[(a, p)];
    }
    Eval { loglik, grad, hess }
}

fn loglik_only(x: &Matrix, log_y: &[f64], delta: &[bool], theta: &DVector<f64>) -> f64 {
    let p = x.ncols();
    let eta = theta[p];
    let sigma = eta.exp();
    (0..x.nrows())
        .map(|i| {
            let lin: f64 = x.row(i).iter().zip(theta.iter()).map(|(a, b)| a * b).sum();
            let z = (log_y[i] - lin) / sigma;
            if delta[i] {
                -eta - 0.5 * z * z
            } else {
                norm_logsf(z)
            }
        })
        .sum()
}

/// Damped Newton ascent on `(β, log σ)`.
pub fn fit_lognormal(x: &Matrix, log_y: &[f64], delta: &[bool]) -> Result<LognormalFit> {
    let n = x.nrows();
    let p = x.ncols();
    if log_y.len() != n || delta.len() != n {
        return Err(Error::LengthMismatch("design, responses and events".into()));
    }
    let events: Vec<usize> = (0..n).filter(|&i| delta[i]).collect();
    if events.is_empty() {
        return Err(Error::LikelihoodUnbounded(
            "all observations are censored".into(),
        ));
    }

    // start from least squares on the uncensored rows
    let xe = DMatrix::from_fn(events.len(), p, |r, c| x.get(events[r], c));
    let ye = DVector::from_iterator(events.len(), events.iter().map(|&i| log_y[i]));
    let beta0 = xe
        .clone()
        .svd(true, true)
        .solve(&ye, 1e-12)
        .map_err(|e| Error::Numeric(e.to_string()))?;
    let resid = &ye - &xe * &beta0;
    let sd0 = (resid.norm_squared() / events.len() as f64).sqrt();
    let censored = events.len() < n;

    if sd0 < SIGMA_FLOOR && !censored {
        log::warn!("zero residual variance; scale clamped at {SIGMA_FLOOR:e}");
        let mut covariance = DMatrix::zeros(p + 1, p + 1);
        covariance.fill_diagonal(0.0);
        return Ok(LognormalFit {
            coef: beta0.iter().copied().collect(),
            sigma: SIGMA_FLOOR,
            covariance,
            log_likelihood: f64::INFINITY,
            iterations: 0,
            clamped: true,
        });
    }

    let mut theta = DVector::zeros(p + 1);
    theta.rows_mut(0, p).copy_from(&beta0);
    theta[p] = sd0.max(1e-3).ln();

    let mut ev = evaluate(x, log_y, delta, &theta);
    for iter in 0..MAX_ITER {
        let gnorm = ev.grad.norm();
        if gnorm < GRAD_TOL {
            return finish(theta, ev, iter, p);
        }
        if theta[p] < SIGMA_FLOOR.ln() {
            log::warn!("scale estimate collapsed; clamped at {SIGMA_FLOOR:e}");
            theta[p] = SIGMA_FLOOR.ln();
            let ev = evaluate(x, log_y, delta, &theta);
            let mut fit = finish(theta, ev, iter, p)?;
            fit.clamped = true;
            return Ok(fit);
        }
        let neg_h = -&ev.hess;
        let mut damping = 0.0;
        let step = loop {
            let mut m = neg_h.clone();
            for d in 0..=p {
                m[(d, d)] += damping;
            }
            if let Some(ch) = m.cholesky() {
                break ch.solve(&ev.grad);
            }
            damping = if damping == 0.0 { 1e-6 * (1.0 + neg_h.norm()) } else { damping * 10.0 };
            if !damping.is_finite() {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    grad_norm: gnorm,
                });
            }
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &theta + &step * t;
            let ll = loglik_only(x, log_y, delta, &cand);
            if ll.is_finite() && ll >= ev.loglik - 1e-12 * ev.loglik.abs().max(1.0) {
                theta = cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // no ascent possible at machine precision
            if gnorm < 1e-6 {
                return finish(theta, ev, iter, p);
            }
            return Err(Error::NonConvergence {
                iterations: iter,
                grad_norm: gnorm,
            });
        }
        ev = evaluate(x, log_y, delta, &theta);
    }
    if ev.grad.norm() < GRAD_TOL {
        return finish(theta, ev, MAX_ITER, p);
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITER,
        grad_norm: ev.grad.norm(),
    })
}

fn finish(theta: DVector<f64>, ev: Eval, iterations: usize, p: usize) -> Result<LognormalFit> {
    let covariance = (-&ev.hess)
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(p + 1, p + 1, f64::NAN));
    Ok(LognormalFit {
        coef: theta.rows(0, p).iter().copied().collect(),
        sigma: theta[p].exp(),
        covariance,
        log_likelihood: ev.loglik,
        iterations,
        clamped: false,
    })
}

/// Intercept-only log-normal AFT fit giving `(μ̂_AFT, σ̂_AFT)`.
pub fn fit_intercept_lognormal_aft(data: &EncodedDataset) -> Result<ResponseTransform> {
    let n = data.n();
    let ones = Matrix::new(n, 1, vec![1.0; n]);
    let fit = fit_lognormal(&ones, &data.log_y(), &data.delta)?;
    Ok(ResponseTransform {
        mu_aft: fit.coef[0],
        sigma_aft: fit.sigma.max(SIGMA_FLOOR),
    })
}

/// `y_i^tr = y_i exp(-μ̂_AFT)`; events unchanged.
pub fn transform_responses(data: &EncodedDataset, t: &ResponseTransform) -> Result<EncodedDataset> {
    let scale = (-t.mu_aft).exp();
    let y: Vec<f64> = data.y.iter().map(|v| v * scale).collect();
    if let Some(i) = y.iter().position(|v| !v.is_finite() || *v <= 0.0) {
        return Err(Error::Numeric(format!(
            "transformed response overflowed at row {}",
            i + 1
        )));
    }
    Ok(EncodedDataset {
        y,
        ..data.clone()
    })
}

/// Linear log-normal AFT baseline, optionally with treatment-covariate
/// interactions. Design columns: intercept, arm, covariates, then
/// `arm * covariate` when interactions are on.
#[derive(Debug, Clone)]
pub struct ParamAft {
    pub interactions: bool,
    pub fit: LognormalFit,
    p: usize,
}

impl ParamAft {
    pub fn design(arm: &[bool], x: &Matrix, interactions: bool) -> Matrix {
        let n = x.nrows();
        let p = x.ncols();
        let width = 2 + p + if interactions { p } else { 0 };
        let mut data = Vec::with_capacity(n * width);
        for i in 0..n {
            let a = if arm[i] { 1.0 } else { 0.0 };
            data.push(1.0);
            data.push(a);
            data.extend_from_slice(x.row(i));
            if interactions {
                data.extend(x.row(i).iter().map(|v| a * v));
            }
        }
        Matrix::new(n, width, data)
    }

    pub fn fit(data: &EncodedDataset, interactions: bool) -> Result<Self> {
        let design = Self::design(&data.arm, &data.x, interactions);
        let fit = fit_lognormal(&design, &data.log_y(), &data.delta)?;
        Ok(ParamAft {
            interactions,
            fit,
            p: data.p_enc(),
        })
    }

    /// Contrast vector `c` with `θ(x) = cᵀβ`.
    fn contrast(&self, x: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.fit.coef.len()];
        c[1] = 1.0;
        if self.interactions {
            c[2 + self.p..2 + 2 * self.p].copy_from_slice(x);
        }
        c
    }

    /// Estimated treatment effect at `x` on the log-time scale.
    pub fn ite(&self, x: &[f64]) -> f64 {
        self.contrast(x)
            .iter()
            .zip(&self.fit.coef)
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Standard error of [`ParamAft::ite`] by the delta method.
    pub fn ite_se(&self, x: &[f64]) -> f64 {
        let c = DVector::from_vec(self.contrast(x));
        let k = c.len();
        let cov = self.fit.covariance.view((0, 0), (k, k));
        (c.transpose() * cov * &c)[(0, 0)].sqrt()
    }

    /// Predicted mean log time for arm `a` at covariates `x`.
    pub fn predict(&self, a: bool, x: &[f64]) -> f64 {
        let av = if a { 1.0 } else { 0.0 };
        let mut row = vec![1.0, av];
        row.extend_from_slice(x);
        if self.interactions {
            row.extend(x.iter().map(|v| av * v));
        }
        row.iter().zip(&self.fit.coef).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn dataset(y: Vec<f64>, delta: Vec<bool>) -> EncodedDataset {
        let n = y.len();
        EncodedDataset::from_continuous(y, delta, vec![false; n], Matrix::new(n, 0, vec![]))
            .unwrap()
    }

    #[test]
    fn closed_form_without_censoring() {
        let d = dataset(vec![1.0, 2f64.exp()], vec![true, true]);
        let t = fit_intercept_lognormal_aft(&d).unwrap();
        assert_relative_eq!(t.mu_aft, 1.0, epsilon = 1e-10);
        assert_relative_eq!(t.sigma_aft, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn degenerate_variance_is_clamped() {
        let d = dataset(vec![1.0, 1.0, 1.0], vec![true; 3]);
        let t = fit_intercept_lognormal_aft(&d).unwrap();
        assert_eq!(t.mu_aft, 0.0);
        assert_eq!(t.sigma_aft, SIGMA_FLOOR);
    }

    #[test]
    fn all_censored_is_unbounded() {
        let d = dataset(vec![1.0, 2.0], vec![false, false]);
        assert!(matches!(
            fit_intercept_lognormal_aft(&d),
            Err(Error::LikelihoodUnbounded(_))
        ));
    }

    // censored log-normal log-likelihood written out independently
    fn brute_loglik(log_y: &[f64], delta: &[bool], mu: f64, sigma: f64) -> f64 {
        log_y
            .iter()
            .zip(delta)
            .map(|(&l, &d)| {
                let z = (l - mu) / sigma;
                if d {
                    -sigma.ln() - 0.5 * z * z
                } else {
                    (0.5 * statrs::function::erf::erfc(z / 2f64.sqrt())).ln()
                }
            })
            .sum()
    }

    #[test]
    fn matches_grid_search_with_censoring() {
        let mut rng = crate::rng::seeded(11);
        let log_y: Vec<f64> = (0..20).map(|_| 0.5 + rng.random::<f64>() * 2.0).collect();
        let delta: Vec<bool> = (0..20).map(|i| i % 3 != 0).collect();
        let d = dataset(log_y.iter().map(|v| v.exp()).collect(), delta.clone());
        let t = fit_intercept_lognormal_aft(&d).unwrap();

        // zooming grid search
        let (mut mu_lo, mut mu_hi, mut s_lo, mut s_hi) = (-2.0, 4.0, 0.05, 4.0);
        let mut best = (0.0, 0.0);
        for _ in 0..8 {
            let mut best_ll = f64::NEG_INFINITY;
            for a in 0..=100 {
                let mu = mu_lo + (mu_hi - mu_lo) * a as f64 / 100.0;
                for b in 0..=100 {
                    let s = s_lo + (s_hi - s_lo) * b as f64 / 100.0;
                    let ll = brute_loglik(&log_y, &delta, mu, s);
                    if ll > best_ll {
                        best_ll = ll;
                        best = (mu, s);
                    }
                }
            }
            let (wm, ws) = ((mu_hi - mu_lo) / 10.0, (s_hi - s_lo) / 10.0);
            mu_lo = best.0 - wm;
            mu_hi = best.0 + wm;
            s_lo = (best.1 - ws).max(1e-3);
            s_hi = best.1 + ws;
        }
        assert!((t.mu_aft - best.0).abs() < 1e-3, "{} vs {}", t.mu_aft, best.0);
        assert!((t.sigma_aft - best.1).abs() < 1e-3, "{} vs {}", t.sigma_aft, best.1);
    }

    #[test]
    fn transform_examples() {
        let d = dataset(vec![2f64.exp(), 3.0], vec![true, false]);
        let tr = ResponseTransform {
            mu_aft: 2.0,
            sigma_aft: 1.0,
        };
        let out = transform_responses(&d, &tr).unwrap();
        assert_relative_eq!(out.y[0], 1.0, epsilon = 1e-15);
        assert_eq!(out.delta, d.delta);

        let id = transform_responses(
            &d,
            &ResponseTransform {
                mu_aft: 0.0,
                sigma_aft: 1.0,
            },
        )
        .unwrap();
        assert_eq!(id.y, d.y);

        let d2 = dataset(vec![2.0, 4.0], vec![true, true]);
        let out = transform_responses(
            &d2,
            &ResponseTransform {
                mu_aft: 2f64.ln(),
                sigma_aft: 1.0,
            },
        )
        .unwrap();
        assert_relative_eq!(out.y[0], 1.0, epsilon = 1e-14);
        assert_relative_eq!(out.y[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn linear_fit_without_censoring_is_ols() {
        let mut rng = crate::rng::seeded(3);
        let n = 60;
        let x = Matrix::new(n, 1, (0..n).map(|_| rng.random::<f64>()).collect());
        let arm: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let log_y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.4 * (arm[i] as u8 as f64) - 0.7 * x.get(i, 0) + 0.3 * rng.random::<f64>())
            .collect();
        let d = EncodedDataset::from_continuous(
            log_y.iter().map(|v| v.exp()).collect(),
            vec![true; n],
            arm.clone(),
            x.clone(),
        )
        .unwrap();
        let fit = ParamAft::fit(&d, false).unwrap();
        let design = ParamAft::design(&arm, &x, false);
        let xm = DMatrix::from_fn(n, 3, |r, c| design.get(r, c));
        let yv = DVector::from_vec(log_y);
        let ols = (xm.transpose() * &xm).try_inverse().unwrap() * xm.transpose() * yv;
        for k in 0..3 {
            assert_relative_eq!(fit.fit.coef[k], ols[k], epsilon = 1e-8);
        }
    }
}
