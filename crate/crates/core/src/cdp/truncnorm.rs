//! Normal draws truncated to `(lower, ∞)`.

use rand::Rng;

use crate::stats::{norm_cdf, norm_isf, norm_ppf, norm_sf};

/// Standardized bound above which the exponential-proposal tail sampler
/// replaces inverse-CDF sampling.
pub const TAIL_SWITCH: f64 = 5.0;

/// Draw `Z | Z > a` for `Z ~ N(0, 1)`.
pub fn std_truncated_lower<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    if a > TAIL_SWITCH {
        return tail_rejection(a, rng);
    }
    let u: f64 = rng.random();
    let z = if a < 0.0 {
        let lo = norm_cdf(a);
        norm_ppf(lo + u * (1.0 - lo))
    } else {
        // work in the upper tail to keep precision
        let s = norm_sf(a);
        norm_isf((1.0 - u) * s)
    };
    // guard against rounding at the boundary
    if z.is_finite() && z > a {
        z
    } else {
        a + f64::EPSILON * a.abs().max(1.0)
    }
}

// Exponential proposal with optimal rate; acceptance probability tends to
// one as `a` grows.
fn tail_rejection<R: Rng + ?Sized>(a: f64, rng: &mut R) -> f64 {
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    loop {
        let u1: f64 = rng.random();
        let z = a - (1.0 - u1).ln() / lambda;
        let u2: f64 = rng.random();
        if u2 <= (-0.5 * (z - lambda) * (z - lambda)).exp() {
            return z;
        }
    }
}

/// Draw `X | X > lower` for `X ~ N(mean, sd²)`.
pub fn truncated_normal_lower<R: Rng + ?Sized>(mean: f64, sd: f64, lower: f64, rng: &mut R) -> f64 {
    mean + sd * std_truncated_lower((lower - mean) / sd, rng)
}

/// Mean of `X | X > lower`.
pub fn truncated_normal_lower_mean(mean: f64, sd: f64, lower: f64) -> f64 {
    let a = (lower - mean) / sd;
    mean + sd * crate::stats::norm_hazard(a)
}

/// CDF of `X | X > lower` at `x`.
pub fn truncated_normal_lower_cdf(mean: f64, sd: f64, lower: f64, x: f64) -> f64 {
    if x <= lower {
        return 0.0;
    }
    let a = (lower - mean) / sd;
    let z = (x - mean) / sd;
    // 1 - S(z)/S(a), via log tails for large bounds
    let log_ratio = crate::stats::norm_logsf(z) - crate::stats::norm_logsf(a);
    -log_ratio.exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn draws_exceed_bound() {
        let mut rng = seeded(2);
        for &a in &[-3.0, 0.0, 2.0, 4.9, 5.1, 12.0, 40.0] {
            for _ in 0..2000 {
                let z = std_truncated_lower(a, &mut rng);
                assert!(z > a && z.is_finite(), "a={a} z={z}");
            }
        }
    }

    #[test]
    fn mean_two_sd_above() {
        let mut rng = seeded(9);
        let (m, s) = (1.0, 0.5);
        let lower = m + 2.0 * s;
        let n = 100_000;
        let avg: f64 = (0..n)
            .map(|_| truncated_normal_lower(m, s, lower, &mut rng))
            .sum::<f64>()
            / n as f64;
        let exact = truncated_normal_lower_mean(m, s, lower);
        assert!(((avg - exact) / exact).abs() < 0.01, "{avg} vs {exact}");
    }

    #[test]
    fn cdf_limits() {
        assert_eq!(truncated_normal_lower_cdf(0.0, 1.0, 1.0, 1.0), 0.0);
        assert!((truncated_normal_lower_cdf(0.0, 1.0, 1.0, 50.0) - 1.0).abs() < 1e-12);
        let asym = 1.0 - (-0.5 * (30.5f64 * 30.5 - 900.0)).exp() * 30.0 / 30.5;
        assert!((truncated_normal_lower_cdf(0.0, 1.0, 30.0, 30.5) - asym).abs() < 1e-3);
    }
}
