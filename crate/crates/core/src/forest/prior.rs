use serde::{Deserialize, Serialize};

use super::tree::{NodeId, NodeKind, Tree};
use crate::error::{Error, Result};
use crate::grid::SplitGrids;
use crate::stats::LN_SQRT_2PI;

/// Sum-of-trees prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestPrior {
    /// Split-probability base.
    pub alpha: f64,
    /// Depth penalty.
    pub beta: f64,
    pub num_trees: usize,
    /// Shrinkage.
    pub k: f64,
    /// Node-value scale, `4 σ̂_AFT`.
    pub zeta: f64,
}

impl Default for ForestPrior {
    fn default() -> Self {
        ForestPrior {
            alpha: 0.95,
            beta: 2.0,
            num_trees: 200,
            k: 2.0,
            zeta: 4.0,
        }
    }
}

impl ForestPrior {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.num_trees == 0 {
            return Err(Error::Config("num_trees must be >= 1".into()));
        }
        if !(self.k > 0.0) || !(self.zeta > 0.0) {
            return Err(Error::Config("k and zeta must be positive".into()));
        }
        Ok(())
    }

    /// Prior variance of a leaf value, `ζ² / (4 J k²)`.
    pub fn leaf_variance(&self) -> f64 {
        self.zeta * self.zeta / (4.0 * self.num_trees as f64 * self.k * self.k)
    }
}

/// Probability that a node at `depth` splits: `α (1 + d)^(-β)`.
pub fn split_prob(depth: usize, prior: &ForestPrior) -> f64 {
    prior.alpha * (1.0 + depth as f64).powf(-prior.beta)
}

/// Sufficient statistics of the residuals in one leaf.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LeafStats {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
}

impl LeafStats {
    pub fn from_rows(rows: &[u32], residuals: &[f64]) -> Self {
        let mut s = LeafStats::default();
        for &r in rows {
            let v = residuals[r as usize];
            s.sum += v;
            s.sum_sq += v * v;
        }
        s.n = rows.len();
        s
    }
}

/// `log ∫ Π N(r_i; μ, σ²) N(μ; 0, σ_μ²) dμ` in closed form.
pub fn leaf_log_marginal(stats: &LeafStats, sigma: f64, leaf_var: f64) -> f64 {
    let n = stats.n as f64;
    let s2 = sigma * sigma;
    let denom = s2 + n * leaf_var;
    -n * (LN_SQRT_2PI + sigma.ln()) - 0.5 * (denom / s2).ln() - stats.sum_sq / (2.0 * s2)
        + leaf_var * stats.sum * stats.sum / (2.0 * s2 * denom)
}

/// Conjugate posterior `(mean, variance)` of a leaf value.
pub fn leaf_posterior(stats: &LeafStats, sigma: f64, leaf_var: f64) -> (f64, f64) {
    let s2 = sigma * sigma;
    let denom = stats.n as f64 * leaf_var + s2;
    (leaf_var * stats.sum / denom, leaf_var * s2 / denom)
}

/// Half-open range `[lo, hi)` of grid indices available for `var` at `id`
/// given the rules of its ancestors.
pub fn available_range(tree: &Tree, id: NodeId, var: usize, grids: &SplitGrids) -> (usize, usize) {
    let mut lo = 0;
    let mut hi = grids.num_cuts(var);
    let mut child = id;
    while let Some(parent) = tree.node(child).parent {
        if let NodeKind::Internal {
            var: v,
            cut_idx,
            left,
            ..
        } = tree.node(parent).kind
        {
            if v == var {
                if child == left {
                    hi = hi.min(cut_idx);
                } else {
                    lo = lo.max(cut_idx + 1);
                }
            }
        }
        child = parent;
    }
    (lo, hi.max(lo))
}

pub fn num_available_cuts(tree: &Tree, id: NodeId, var: usize, grids: &SplitGrids) -> usize {
    let (lo, hi) = available_range(tree, id, var, grids);
    hi - lo
}

/// Variables with at least one legal cut at `id`.
pub fn available_vars(tree: &Tree, id: NodeId, grids: &SplitGrids) -> Vec<usize> {
    (0..grids.num_vars())
        .filter(|&v| num_available_cuts(tree, id, v, grids) > 0)
        .collect()
}

/// Log prior probability of the tree structure (rules included, leaf
/// values excluded). Returns `-inf` if some rule is outside the range its
/// ancestors allow.
pub fn tree_log_prior(tree: &Tree, grids: &SplitGrids, prior: &ForestPrior) -> f64 {
    let mut lp = 0.0;
    for id in tree.ids() {
        let node = tree.node(id);
        let p = split_prob(node.depth, prior);
        match node.kind {
            NodeKind::Leaf { .. } => {
                if !available_vars(tree, id, grids).is_empty() {
                    lp += (1.0 - p).ln();
                }
            }
            NodeKind::Internal { var, cut_idx, .. } => {
                let (lo, hi) = available_range(tree, id, var, grids);
                if cut_idx < lo || cut_idx >= hi {
                    return f64::NEG_INFINITY;
                }
                let nv = available_vars(tree, id, grids).len();
                lp += p.ln() - (nv as f64).ln() - ((hi - lo) as f64).ln();
            }
        }
    }
    lp
}
