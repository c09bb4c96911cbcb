//! Scoring of effect estimates and the weighted cross-validation criterion.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{EncodedDataset, Matrix};
use crate::error::{Error, Result};
use crate::hte::DteSummary;
use crate::rng::{substream, Stream};

/// Floor applied to censoring-survival weights.
pub const WEIGHT_FLOOR: f64 = 1e-3;

/// Scores for one replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub rmse: f64,
    pub mcprop: f64,
    pub coverage: f64,
    pub frac_strong: f64,
    pub frac_mild: f64,
}

/// RMSE, misclassification proportion and interval coverage against the
/// true effects. `allocation[i]` is `true` when treatment is recommended.
pub fn score_replication(
    true_theta: &[f64],
    theta_hat: &[f64],
    intervals: &[(f64, f64)],
    allocation: &[bool],
    dte: Option<&DteSummary>,
) -> Result<MetricRow> {
    let n = true_theta.len();
    if theta_hat.len() != n || intervals.len() != n || allocation.len() != n {
        return Err(Error::LengthMismatch(format!(
            "truth has {n} rows; estimates {}, intervals {}, allocations {}",
            theta_hat.len(),
            intervals.len(),
            allocation.len()
        )));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("nothing to score".into()));
    }
    let nf = n as f64;
    let rmse = (true_theta
        .iter()
        .zip(theta_hat)
        .map(|(t, h)| (h - t) * (h - t))
        .sum::<f64>()
        / nf)
        .sqrt();
    let mis = true_theta
        .iter()
        .zip(allocation)
        .filter(|(&t, &r)| (t <= 0.0 && r) || (t > 0.0 && !r))
        .count();
    let covered = true_theta
        .iter()
        .zip(intervals)
        .filter(|(&t, &(lo, hi))| lo <= t && t <= hi)
        .count();
    Ok(MetricRow {
        rmse,
        mcprop: mis as f64 / nf,
        coverage: covered as f64 / nf,
        frac_strong: dte.map_or(0.0, |d| d.frac_strong),
        frac_mild: dte.map_or(0.0, |d| d.frac_mild),
    })
}

/// Right-continuous Kaplan–Meier step function.
#[derive(Debug, Clone, PartialEq)]
pub struct KaplanMeier {
    /// Distinct event times.
    pub times: Vec<f64>,
    /// Survival just after each time.
    pub surv: Vec<f64>,
}

impl KaplanMeier {
    /// Estimate from `(time, event)` pairs. At tied times, rows with
    /// `event = false` remain in the risk set.
    pub fn fit(time: &[f64], event: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..time.len()).collect();
        order.sort_by(|&a, &b| time[a].total_cmp(&time[b]));
        let mut at_risk = time.len();
        let mut s = 1.0;
        let mut times = Vec::new();
        let mut surv = Vec::new();
        let mut k = 0;
        while k < order.len() {
            let t = time[order[k]];
            let mut d = 0;
            let mut m = 0;
            while k + m < order.len() && time[order[k + m]] == t {
                if event[order[k + m]] {
                    d += 1;
                }
                m += 1;
            }
            if d > 0 {
                s *= 1.0 - d as f64 / at_risk as f64;
                times.push(t);
                surv.push(s);
            }
            at_risk -= m;
            k += m;
        }
        KaplanMeier { times, surv }
    }

    /// `S(t)`.
    pub fn at(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.surv[k - 1]
        }
    }

    /// `S(t-)`.
    pub fn left_limit(&self, t: f64) -> f64 {
        let k = self.times.partition_point(|&s| s < t);
        if k == 0 {
            1.0
        } else {
            self.surv[k - 1]
        }
    }
}

/// Estimator of `V(Y_i | A_i, x_i)`, the censoring survival at each row's
/// own time.
pub trait CensoringWeights {
    fn survival(&self, data: &EncodedDataset) -> Vec<f64>;
}

/// Covariate-free Kaplan–Meier censoring survival, evaluated at `Y_i-`.
#[derive(Debug, Clone, Copy, Default)]
pub struct KmCensoring;

impl CensoringWeights for KmCensoring {
    fn survival(&self, data: &EncodedDataset) -> Vec<f64> {
        let cens: Vec<bool> = data.delta.iter().map(|d| !d).collect();
        let km = KaplanMeier::fit(&data.y, &cens);
        data.y.iter().map(|&t| km.left_limit(t)).collect()
    }
}

/// `δ_i / V̂_i` with the floor applied to `V̂_i`.
pub fn ipcw_weights(data: &EncodedDataset, est: &dyn CensoringWeights) -> Vec<f64> {
    let v = est.survival(data);
    let mut floored = 0;
    let w = data
        .delta
        .iter()
        .zip(&v)
        .map(|(&d, &s)| {
            if !d {
                0.0
            } else if s < WEIGHT_FLOOR {
                floored += 1;
                1.0 / WEIGHT_FLOOR
            } else {
                1.0 / s
            }
        })
        .collect();
    if floored > 0 {
        log::warn!("{floored} censoring weights clamped at the {WEIGHT_FLOOR} floor");
    }
    w
}

/// Per-fold and mean cross-validation scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvScore {
    pub folds: Vec<f64>,
    pub mean: f64,
}

/// Random fold labels `0..k`, balanced in size.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut substream(seed, 0, Stream::Folds));
    let mut fold = vec![0; n];
    for (pos, &i) in idx.iter().enumerate() {
        fold[i] = pos % k;
    }
    fold
}

/// `CV_k = n_k⁻¹ Σ_{i ∈ D_k} (δ_i / V̂_i) |log Y_i - m̂_{-k}(A_i, x_i)|`.
///
/// `predict(train, test_design)` fits on `train` and returns predicted
/// log-times at the rows of `test_design` (column 0 is the arm).
pub fn cross_validation_score<F>(
    data: &EncodedDataset,
    folds: &[usize],
    k: usize,
    weights: &dyn CensoringWeights,
    mut predict: F,
) -> Result<CvScore>
where
    F: FnMut(&EncodedDataset, &Matrix) -> Result<Vec<f64>>,
{
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    if folds.len() != data.n() {
        return Err(Error::LengthMismatch("fold labels do not match the data".into()));
    }
    let w = ipcw_weights(data, weights);
    let log_y = data.log_y();
    let mut scores = Vec::with_capacity(k);
    for f in 0..k {
        let test: Vec<usize> = (0..data.n()).filter(|&i| folds[i] == f).collect();
        let train: Vec<usize> = (0..data.n()).filter(|&i| folds[i] != f).collect();
        if test.is_empty() {
            return Err(Error::Fold {
                fold: f + 1,
                reason: "fold is empty".into(),
            });
        }
        if train.iter().all(|&i| !data.delta[i]) {
            return Err(Error::Fold {
                fold: f + 1,
                reason: "training part has no events".into(),
            });
        }
        let train_data = data.subset(&train)?;
        let test_design = crate::data::predictor_matrix(
            &test.iter().map(|&i| data.arm[i]).collect::<Vec<_>>(),
            &Matrix::from_rows(&test.iter().map(|&i| data.x.row(i).to_vec()).collect::<Vec<_>>()),
        );
        let pred = predict(&train_data, &test_design).map_err(|e| Error::Fold {
            fold: f + 1,
            reason: e.to_string(),
        })?;
        if pred.len() != test.len() {
            return Err(Error::LengthMismatch("prediction count differs from fold size".into()));
        }
        let total: f64 = test
            .iter()
            .zip(&pred)
            .map(|(&i, p)| w[i] * (log_y[i] - p).abs())
            .sum();
        scores.push(total / test.len() as f64);
    }
    let mean = scores.iter().sum::<f64>() / k as f64;
    Ok(CvScore { folds: scores, mean })
}
