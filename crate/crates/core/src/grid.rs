//! Candidate split points for tree rules.

use serde::{Deserialize, Serialize};

use crate::data::Matrix;

pub const DEFAULT_MAX_SPLIT_POINTS: usize = 100;

/// Cut values at evenly spaced empirical quantiles of `column`.
///
/// Columns taking only the values 0 and 1 get the single cut 0.5; constant
/// columns get no cuts. Each cut sits halfway between two adjacent distinct
/// observed values, so it separates at least one pair of observations.
pub fn split_point_grid(column: &[f64], max_points: usize) -> Vec<f64> {
    assert!(max_points >= 1, "max_points must be at least 1");
    let mut v: Vec<f64> = column.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() || v[0] == v[v.len() - 1] {
        return Vec::new();
    }
    if v.iter().all(|&x| x == 0.0 || x == 1.0) {
        return vec![0.5];
    }
    let n = v.len();
    // positions j (1..n) where v[j-1] < v[j]
    let boundaries: Vec<usize> = (1..n).filter(|&j| v[j - 1] < v[j]).collect();
    let mut cuts: Vec<f64> = if boundaries.len() <= max_points {
        boundaries.iter().map(|&j| 0.5 * (v[j - 1] + v[j])).collect()
    } else {
        let mut out = Vec::with_capacity(max_points);
        for k in 1..=max_points {
            let target = ((k * n) as f64 / (max_points + 1) as f64).round() as usize;
            let target = target.clamp(1, n - 1);
            // first distinct-value boundary at or after the target position
            let b = match boundaries.binary_search(&target) {
                Ok(p) => boundaries[p],
                Err(p) if p < boundaries.len() => boundaries[p],
                Err(_) => boundaries[boundaries.len() - 1],
            };
            out.push(0.5 * (v[b - 1] + v[b]));
        }
        out
    };
    cuts.dedup();
    cuts
}

/// Per-column cut grids for the tree predictor matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitGrids {
    pub cuts: Vec<Vec<f64>>,
}

impl SplitGrids {
    pub fn from_design(u: &Matrix, max_points: usize) -> Self {
        SplitGrids {
            cuts: (0..u.ncols())
                .map(|j| split_point_grid(&u.column(j), max_points))
                .collect(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cuts.len()
    }

    pub fn num_cuts(&self, var: usize) -> usize {
        self.cuts[var].len()
    }

    pub fn cut(&self, var: usize, idx: usize) -> f64 {
        self.cuts[var][idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn binary_and_constant() {
        assert_eq!(split_point_grid(&[0.0, 0.0, 1.0, 1.0], 100), vec![0.5]);
        assert!(split_point_grid(&[3.0, 3.0, 3.0], 100).is_empty());
    }

    #[test]
    fn percentiles_of_one_to_thousand() {
        let col: Vec<f64> = (1..=1000).map(f64::from).collect();
        let cuts = split_point_grid(&col, 100);
        assert_eq!(cuts.len(), 100);
        for (k, c) in cuts.iter().enumerate() {
            // direct quantile: fraction of the column at or below the cut
            let frac = col.iter().filter(|&&x| x <= *c).count() as f64 / 1000.0;
            let target = (k + 1) as f64 / 101.0;
            assert!((frac - target).abs() <= 0.001, "cut {k}: {frac} vs {target}");
        }
        let gaps: Vec<f64> = cuts.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|g| (9.0..=11.0).contains(g)));
    }

    #[test]
    fn few_distinct_values_give_midpoints() {
        assert_eq!(split_point_grid(&[1.0, 3.0, 3.0, 2.0], 100), vec![1.5, 2.5]);
    }

    proptest! {
        #[test]
        fn every_cut_separates_observations(
            col in prop::collection::vec(-50i32..50, 2..300),
            max_points in 1usize..40,
        ) {
            let col: Vec<f64> = col.into_iter().map(|v| v as f64 / 3.0).collect();
            let cuts = split_point_grid(&col, max_points);
            prop_assert!(cuts.len() <= max_points);
            prop_assert!(cuts.windows(2).all(|w| w[0] < w[1]));
            for c in cuts {
                prop_assert!(col.iter().any(|&x| x <= c) && col.iter().any(|&x| x > c));
            }
        }
    }
}
