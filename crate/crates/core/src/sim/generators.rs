//! Synthetic survival datasets with known treatment effects.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::residuals::{gen_residuals, ResidualFamily};
use crate::data::{ColumnKind, ColumnSpec, CovariateSchema, EncodedDataset, Matrix};
use crate::error::{Error, Result};

/// A generated dataset together with the truth used to score fits.
#[derive(Debug, Clone)]
pub struct SimDataset {
    /// Uncensored until [`super::censoring::apply_censoring`] is applied.
    pub data: EncodedDataset,
    /// Latent failure times.
    pub times: Vec<f64>,
    pub true_theta: Vec<f64>,
}

/// Coefficients of the linear null models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NullAftParams {
    pub beta0: f64,
    pub beta1: f64,
    /// Coefficients of the standard-normal covariates.
    pub beta_continuous: Vec<f64>,
    /// Coefficients of the Bernoulli(1/2) covariates.
    pub beta_binary: Vec<f64>,
    pub residual_variance: f64,
}

impl Default for NullAftParams {
    fn default() -> Self {
        NullAftParams {
            beta0: 1.5,
            beta1: 0.3,
            beta_continuous: vec![0.2, -0.15, 0.1],
            beta_binary: vec![0.25, -0.2],
            residual_variance: 0.64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoxParams {
    pub beta0: f64,
    pub beta1: f64,
    pub beta_continuous: Vec<f64>,
    pub beta_binary: Vec<f64>,
    /// Weibull baseline shape.
    pub shape: f64,
    /// Weibull baseline scale.
    pub scale: f64,
}

impl Default for CoxParams {
    fn default() -> Self {
        CoxParams {
            beta0: 0.0,
            beta1: -0.45,
            beta_continuous: vec![0.3, -0.2, 0.15],
            beta_binary: vec![0.35, -0.3],
            shape: 1.5,
            scale: 4.0,
        }
    }
}

fn null_schema(pc: usize, pb: usize) -> CovariateSchema {
    let mut cols: Vec<ColumnSpec> = (1..=pc)
        .map(|k| ColumnSpec {
            name: format!("x{k}"),
            kind: ColumnKind::Continuous,
        })
        .collect();
    cols.extend((1..=pb).map(|k| ColumnSpec {
        name: format!("b{k}"),
        kind: ColumnKind::Binary,
    }));
    CovariateSchema::new(cols).expect("generated names are unique")
}

/// Covariates (standard normal then Bernoulli(1/2)) and arms with
/// `P(A = 1) = 1/2`.
fn null_covariates<R: Rng + ?Sized>(pc: usize, pb: usize, n: usize, rng: &mut R) -> (Matrix, Vec<bool>) {
    let mut x = Matrix::zeros(n, pc + pb);
    let mut arm = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..pc {
            x.set(i, j, StandardNormal.sample(rng));
        }
        for j in 0..pb {
            x.set(i, pc + j, if rng.random::<bool>() { 1.0 } else { 0.0 });
        }
        arm.push(rng.random::<bool>());
    }
    (x, arm)
}

fn linear_predictor(x: &[f64], arm: bool, b0: f64, b1: f64, bc: &[f64], bb: &[f64]) -> f64 {
    let mut eta = b0 + if arm { b1 } else { 0.0 };
    for (k, b) in bc.iter().chain(bb).enumerate() {
        eta += b * x[k];
    }
    eta
}

/// `log T = β0 + β1 A + Σ β_k x_k + W`; the true effect is `β1` for
/// everyone.
pub fn gen_null_aft<R: Rng + ?Sized>(
    params: &NullAftParams,
    family: ResidualFamily,
    n: usize,
    rng: &mut R,
) -> Result<SimDataset> {
    let (pc, pb) = (params.beta_continuous.len(), params.beta_binary.len());
    let (x, arm) = null_covariates(pc, pb, n, rng);
    let w = gen_residuals(family, params.residual_variance, n, rng);
    let times: Vec<f64> = (0..n)
        .map(|i| {
            let eta = linear_predictor(
                x.row(i),
                arm[i],
                params.beta0,
                params.beta1,
                &params.beta_continuous,
                &params.beta_binary,
            );
            (eta + w[i]).exp()
        })
        .collect();
    let data = EncodedDataset::new(times.clone(), vec![true; n], arm, x, null_schema(pc, pb))?;
    Ok(SimDataset {
        data,
        times,
        true_theta: vec![params.beta1; n],
    })
}

/// Proportional hazards with Weibull baseline:
/// `T = scale · (-log U / exp(η))^(1/shape)`. On the log-time scale the
/// effect is the constant `-β1 / shape`.
pub fn gen_null_cox<R: Rng + ?Sized>(params: &CoxParams, n: usize, rng: &mut R) -> Result<SimDataset> {
    if !(params.shape > 0.0 && params.scale > 0.0) {
        return Err(Error::Config("Weibull shape and scale must be positive".into()));
    }
    let (pc, pb) = (params.beta_continuous.len(), params.beta_binary.len());
    let (x, arm) = null_covariates(pc, pb, n, rng);
    let times: Vec<f64> = (0..n)
        .map(|i| {
            let eta = linear_predictor(
                x.row(i),
                arm[i],
                params.beta0,
                params.beta1,
                &params.beta_continuous,
                &params.beta_binary,
            );
            let u: f64 = 1.0 - rng.random::<f64>();
            params.scale * (-u.ln() / eta.exp()).powf(1.0 / params.shape)
        })
        .collect();
    let data = EncodedDataset::new(times.clone(), vec![true; n], arm, x, null_schema(pc, pb))?;
    Ok(SimDataset {
        data,
        times,
        true_theta: vec![-params.beta1 / params.shape; n],
    })
}

/// One Gaussian-bump term `a · exp(-½ (z-μ)ᵀ V (z-μ))` on a subset of
/// covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpTerm {
    pub coef: f64,
    pub vars: Vec<usize>,
    pub mu: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl BumpTerm {
    pub fn g(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = self.vars.iter().zip(&self.mu).map(|(&j, m)| x[j] - m).collect();
        let k = d.len();
        let mut q = 0.0;
        for a in 0..k {
            for b in 0..k {
                q += d[a] * self.v[(a, b)] * d[b];
            }
        }
        (-0.5 * q).exp()
    }
}

/// Random regression function `F_0(x) + A θ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FriedmanFunction {
    pub p: usize,
    pub base: Vec<BumpTerm>,
    pub effect: Vec<BumpTerm>,
}

impl FriedmanFunction {
    pub fn f0(&self, x: &[f64]) -> f64 {
        self.base.iter().map(|t| t.coef * t.g(x)).sum()
    }

    pub fn theta(&self, x: &[f64]) -> f64 {
        self.effect.iter().map(|t| t.coef * t.g(x)).sum()
    }

    pub fn m(&self, arm: bool, x: &[f64]) -> f64 {
        self.f0(x) + if arm { self.theta(x) } else { 0.0 }
    }
}

/// Haar-distributed orthogonal matrix: QR of a standard normal matrix with
/// the signs of `diag(R)` folded into `Q`.
pub fn haar_orthogonal<R: Rng + ?Sized>(k: usize, rng: &mut R) -> DMatrix<f64> {
    let z = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(rng));
    let qr = z.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..k {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

fn bump<R: Rng + ?Sized>(coef: f64, p: usize, rng: &mut R) -> BumpTerm {
    // r ~ Exponential with mean 2
    let r: f64 = Exp::new(0.5).unwrap().sample(rng);
    let size = ((r + 1.5).floor() as usize).clamp(1, 10).min(p);
    let mut idx: Vec<usize> = (0..p).collect();
    idx.shuffle(rng);
    idx.truncate(size);
    let mu: Vec<f64> = (0..size).map(|_| StandardNormal.sample(rng)).collect();
    let u = haar_orthogonal(size, rng);
    let sd = Uniform::new(0.1, 2.0).unwrap();
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(size, |_, _| {
        let s: f64 = sd.sample(rng);
        s * s
    }));
    let v = &u * d * u.transpose();
    BumpTerm {
        coef,
        vars: idx,
        mu,
        v,
    }
}

/// Draw a random function: ten base terms with `a ~ U(-1, 1)` and five
/// effect terms with `a ~ U(-0.2, 0.3)`.
pub fn gen_friedman_function<R: Rng + ?Sized>(p: usize, rng: &mut R) -> FriedmanFunction {
    let a1 = Uniform::new(-1.0, 1.0).unwrap();
    let a2 = Uniform::new(-0.2, 0.3).unwrap();
    let base = (0..10)
        .map(|_| {
            let c = a1.sample(rng);
            bump(c, p, rng)
        })
        .collect();
    let effect = (0..5)
        .map(|_| {
            let c = a2.sample(rng);
            bump(c, p, rng)
        })
        .collect();
    FriedmanFunction { p, base, effect }
}

/// Standard normal covariates and fair-coin arms.
pub fn friedman_covariates<R: Rng + ?Sized>(p: usize, n: usize, rng: &mut R) -> (Matrix, Vec<bool>) {
    let mut x = Matrix::zeros(n, p);
    let mut arm = Vec::with_capacity(n);
    for i in 0..n {
        for j in 0..p {
            x.set(i, j, StandardNormal.sample(rng));
        }
        arm.push(rng.random::<bool>());
    }
    (x, arm)
}

/// Responses `log T = m(A, x) + W` for given covariates and arms.
pub fn friedman_dataset<R: Rng + ?Sized>(
    f: &FriedmanFunction,
    x: Matrix,
    arm: Vec<bool>,
    family: ResidualFamily,
    residual_variance: f64,
    rng: &mut R,
) -> Result<SimDataset> {
    let n = x.nrows();
    let w = gen_residuals(family, residual_variance, n, rng);
    let times: Vec<f64> = (0..n).map(|i| (f.m(arm[i], x.row(i)) + w[i]).exp()).collect();
    let true_theta = (0..n).map(|i| f.theta(x.row(i))).collect();
    let data = EncodedDataset::from_continuous(times.clone(), vec![true; n], arm, x)?;
    Ok(SimDataset {
        data,
        times,
        true_theta,
    })
}

/// New random function and a fresh sample of `n` rows from it.
pub fn gen_friedman_scenario<R: Rng + ?Sized>(
    p: usize,
    n: usize,
    family: ResidualFamily,
    residual_variance: f64,
    rng: &mut R,
) -> Result<(FriedmanFunction, SimDataset)> {
    let f = gen_friedman_function(p, rng);
    let (x, arm) = friedman_covariates(p, n, rng);
    let ds = friedman_dataset(&f, x, arm, family, residual_variance, rng)?;
    Ok((f, ds))
}
