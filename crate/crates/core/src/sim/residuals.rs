//! Mean-zero residual laws with matched variance.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Gumbel, Normal, StudentT};
use serde::{Deserialize, Serialize};

/// Euler–Mascheroni constant.
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
/// Shape of the standardized gamma family.
pub const GAMMA_SHAPE: f64 = 2.0;
/// Degrees of freedom of each t component.
pub const T_DF: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResidualFamily {
    Normal,
    Gumbel,
    StdGamma,
    TMixture,
}

impl ResidualFamily {
    pub const ALL: [ResidualFamily; 4] = [
        ResidualFamily::Normal,
        ResidualFamily::Gumbel,
        ResidualFamily::StdGamma,
        ResidualFamily::TMixture,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ResidualFamily::Normal => "Normal",
            ResidualFamily::Gumbel => "Gumbel",
            ResidualFamily::StdGamma => "Std-Gamma",
            ResidualFamily::TMixture => "T-mixture",
        }
    }
}

/// `n` i.i.d. mean-zero draws with variance `variance`.
///
/// Gumbel: scale `√(6v)/π`, shifted by `-γ·scale`. Gamma: shape 2, scale
/// `√(v/2)`, shifted by its mean. t-mixture: weights (1/4, 1/2, 1/4) at
/// locations `(-√v, 0, √v)`, each `t_3` scaled by `√(v/6)`.
pub fn gen_residuals<R: Rng + ?Sized>(
    family: ResidualFamily,
    variance: f64,
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let sd = variance.sqrt();
    match family {
        ResidualFamily::Normal => {
            let d = Normal::new(0.0, sd).unwrap();
            (0..n).map(|_| d.sample(rng)).collect()
        }
        ResidualFamily::Gumbel => {
            let beta = (6.0 * variance).sqrt() / std::f64::consts::PI;
            let d = Gumbel::new(-EULER_GAMMA * beta, beta).unwrap();
            (0..n).map(|_| d.sample(rng)).collect()
        }
        ResidualFamily::StdGamma => {
            let scale = (variance / GAMMA_SHAPE).sqrt();
            let d = Gamma::new(GAMMA_SHAPE, scale).unwrap();
            let shift = GAMMA_SHAPE * scale;
            (0..n).map(|_| d.sample(rng) - shift).collect()
        }
        ResidualFamily::TMixture => {
            let t = StudentT::new(T_DF).unwrap();
            let scale = (variance * (T_DF - 2.0) / (2.0 * T_DF)).sqrt();
            (0..n)
                .map(|_| {
                    let u: f64 = rng.random();
                    let loc = if u < 0.25 {
                        -sd
                    } else if u < 0.75 {
                        0.0
                    } else {
                        sd
                    };
                    loc + scale * t.sample(rng)
                })
                .collect()
        }
    }
}

/// Analytic variance of [`gen_residuals`]'s t-mixture for a given target.
pub fn t_mixture_variance(variance: f64) -> f64 {
    let scale_sq = variance * (T_DF - 2.0) / (2.0 * T_DF);
    scale_sq * T_DF / (T_DF - 2.0) + 0.5 * variance
}
