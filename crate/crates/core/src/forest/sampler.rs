use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::moves::{apply_proposal, propose_tree_move, MoveKind, MoveProbs};
use super::prior::{
    leaf_log_marginal, leaf_posterior, tree_log_prior, ForestPrior, LeafStats,
};
use super::tree::{NodeId, Tree};
use crate::data::Matrix;
use crate::grid::SplitGrids;

/// Proposal/acceptance counts per move type.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MoveStats {
    pub proposed: [u64; 4],
    pub accepted: [u64; 4],
}

impl MoveStats {
    pub fn record(&mut self, kind: MoveKind, accepted: bool) {
        self.proposed[kind.index()] += 1;
        if accepted {
            self.accepted[kind.index()] += 1;
        }
    }

    pub fn rate(&self, kind: MoveKind) -> f64 {
        let p = self.proposed[kind.index()];
        if p == 0 {
            f64::NAN
        } else {
            self.accepted[kind.index()] as f64 / p as f64
        }
    }

    pub fn merge(&mut self, other: &MoveStats) {
        for k in 0..4 {
            self.proposed[k] += other.proposed[k];
            self.accepted[k] += other.accepted[k];
        }
    }
}

/// Result of one Metropolis-Hastings tree update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhOutcome {
    pub kind: MoveKind,
    /// Whether the drawn move type had a legal, non-empty-leaf instance.
    pub proposed: bool,
    pub accepted: bool,
    pub log_accept_ratio: f64,
}

fn subtree_log_marginal(
    tree: &Tree,
    root: NodeId,
    residuals: &[f64],
    sigma: f64,
    leaf_var: f64,
) -> f64 {
    tree.subtree_leaves(root)
        .into_iter()
        .map(|l| leaf_log_marginal(&LeafStats::from_rows(tree.rows(l), residuals), sigma, leaf_var))
        .sum()
}

/// Log acceptance ratio for moving from `tree` to `candidate`, where only
/// the subtree under `root` differs. With `residuals = None` the likelihood
/// is flat and the chain targets the tree prior.
pub fn log_acceptance(
    tree: &Tree,
    candidate: &Tree,
    root: NodeId,
    log_proposal_ratio: f64,
    likelihood: Option<(&[f64], f64)>,
    prior: &ForestPrior,
    grids: &SplitGrids,
) -> f64 {
    let prior_ratio = tree_log_prior(candidate, grids, prior) - tree_log_prior(tree, grids, prior);
    if prior_ratio == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let lik_ratio = match likelihood {
        Some((r, sigma)) => {
            let v = prior.leaf_variance();
            subtree_log_marginal(candidate, root, r, sigma, v)
                - subtree_log_marginal(tree, root, r, sigma, v)
        }
        None => 0.0,
    };
    prior_ratio + lik_ratio + log_proposal_ratio
}

fn mh_step<R: Rng + ?Sized>(
    tree: &mut Tree,
    likelihood: Option<(&[f64], f64)>,
    prior: &ForestPrior,
    grids: &SplitGrids,
    design: &Matrix,
    probs: &MoveProbs,
    rng: &mut R,
) -> MhOutcome {
    let draw = propose_tree_move(tree, rng, grids, probs);
    let rejected = MhOutcome {
        kind: draw.kind,
        proposed: false,
        accepted: false,
        log_accept_ratio: f64::NEG_INFINITY,
    };
    let Some(proposal) = draw.proposal else {
        return rejected;
    };
    let Some((candidate, root)) = apply_proposal(tree, &proposal, grids, design) else {
        return rejected;
    };
    let log_ratio = log_acceptance(
        tree,
        &candidate,
        root,
        draw.log_proposal_ratio,
        likelihood,
        prior,
        grids,
    );
    let accepted = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
    if accepted {
        *tree = candidate;
    }
    MhOutcome {
        kind: draw.kind,
        proposed: true,
        accepted,
        log_accept_ratio: log_ratio,
    }
}

/// One MH update of the tree structure against `partial_residuals`, with
/// leaf values integrated out. Leaf values are stale afterwards and must be
/// redrawn with [`draw_leaf_values`].
#[allow(clippy::too_many_arguments)]
pub fn mh_update_tree<R: Rng + ?Sized>(
    tree: &mut Tree,
    partial_residuals: &[f64],
    sigma: f64,
    prior: &ForestPrior,
    grids: &SplitGrids,
    design: &Matrix,
    probs: &MoveProbs,
    rng: &mut R,
) -> MhOutcome {
    mh_step(
        tree,
        Some((partial_residuals, sigma)),
        prior,
        grids,
        design,
        probs,
        rng,
    )
}

/// MH update under the tree prior alone (flat likelihood), restricted to
/// trees without empty leaves.
pub fn mh_update_tree_prior_only<R: Rng + ?Sized>(
    tree: &mut Tree,
    prior: &ForestPrior,
    grids: &SplitGrids,
    design: &Matrix,
    probs: &MoveProbs,
    rng: &mut R,
) -> MhOutcome {
    mh_step(tree, None, prior, grids, design, probs, rng)
}

/// Draw every leaf value from its conjugate normal posterior.
pub fn draw_leaf_values<R: Rng + ?Sized>(
    tree: &mut Tree,
    partial_residuals: &[f64],
    sigma: f64,
    prior: &ForestPrior,
    rng: &mut R,
) {
    let v = prior.leaf_variance();
    for leaf in tree.leaves() {
        let stats = LeafStats::from_rows(tree.rows(leaf), partial_residuals);
        let (mean, var) = leaf_posterior(&stats, sigma, v);
        let z: f64 = StandardNormal.sample(rng);
        tree.set_leaf_value(leaf, mean + var.sqrt() * z);
    }
}

/// Sum of `J` trees with cached per-tree and total fits over the training
/// rows.
#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
    fits: Vec<Vec<f64>>,
    total: Vec<f64>,
}

impl Forest {
    /// `J` root-only trees with value `init / J` each.
    pub fn new(num_trees: usize, n: usize, init: f64) -> Self {
        let v = init / num_trees as f64;
        Forest {
            trees: (0..num_trees).map(|_| Tree::stump(v, n)).collect(),
            fits: vec![vec![v; n]; num_trees],
            total: vec![init; n],
        }
    }

    /// Forest from explicit trees; rows are routed through `design`.
    pub fn from_trees(mut trees: Vec<Tree>, design: &Matrix) -> Self {
        let n = design.nrows();
        for t in &mut trees {
            t.attach_rows(design);
        }
        let fits: Vec<Vec<f64>> = trees.iter().map(|t| tree_fit(t, n)).collect();
        let mut total = vec![0.0; n];
        for f in &fits {
            for (a, b) in total.iter_mut().zip(f) {
                *a += b;
            }
        }
        Forest { trees, fits, total }
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    /// Cached `m(A_i, x_i)` for the training rows.
    pub fn fitted(&self) -> &[f64] {
        &self.total
    }

    pub fn tree_fits(&self, j: usize) -> &[f64] {
        &self.fits[j]
    }

    pub fn predict(&self, u: &[f64]) -> f64 {
        forest_predict(&self.trees, u)
    }

    /// Largest gap between the cached totals and a fresh per-tree sum.
    pub fn cache_error(&self) -> f64 {
        let n = self.total.len();
        let mut fresh = vec![0.0; n];
        for t in &self.trees {
            for (a, b) in fresh.iter_mut().zip(tree_fit(t, n)) {
                *a += b;
            }
        }
        fresh
            .iter()
            .zip(&self.total)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Recompute the cached totals from the per-tree fits.
    pub fn refresh(&mut self) {
        let n = self.total.len();
        self.total = vec![0.0; n];
        for f in &self.fits {
            for (a, b) in self.total.iter_mut().zip(f) {
                *a += b;
            }
        }
    }

    /// Trees stripped of row bookkeeping, for checkpointing.
    pub fn snapshot(&self) -> Vec<Tree> {
        self.trees.iter().map(Tree::without_rows).collect()
    }

    /// One Bayesian backfitting pass: for each tree, form the partial
    /// residual, update the structure by MH, redraw leaf values and fold
    /// the new fit back into the running total.
    #[allow(clippy::too_many_arguments)]
    pub fn backfit_sweep<R: Rng + ?Sized>(
        &mut self,
        responses: &[f64],
        sigma: f64,
        prior: &ForestPrior,
        grids: &SplitGrids,
        design: &Matrix,
        probs: &MoveProbs,
        rng: &mut R,
        stats: &mut MoveStats,
    ) {
        let n = responses.len();
        let mut residual = vec![0.0; n];
        for j in 0..self.trees.len() {
            for i in 0..n {
                residual[i] = responses[i] - (self.total[i] - self.fits[j][i]);
            }
            let out = mh_update_tree(
                &mut self.trees[j],
                &residual,
                sigma,
                prior,
                grids,
                design,
                probs,
                rng,
            );
            stats.record(out.kind, out.accepted);
            draw_leaf_values(&mut self.trees[j], &residual, sigma, prior, rng);
            let new_fit = tree_fit(&self.trees[j], n);
            for i in 0..n {
                self.total[i] += new_fit[i] - self.fits[j][i];
            }
            self.fits[j] = new_fit;
        }
        self.refresh();
    }
}

/// Per-row fit of a tree from its leaf row lists.
fn tree_fit(tree: &Tree, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for leaf in tree.leaves() {
        let v = tree.leaf_value(leaf);
        for &r in tree.rows(leaf) {
            out[r as usize] = v;
        }
    }
    out
}

/// `Σ_j g(u; T_j, B_j)`.
pub fn forest_predict(trees: &[Tree], u: &[f64]) -> f64 {
    trees.iter().map(|t| t.predict(u)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::tree::ROOT;
    use crate::rng::seeded;

    #[test]
    fn constant_forest() {
        let trees: Vec<Tree> = (0..7).map(|_| Tree::stump(0.5, 0)).collect();
        assert_eq!(forest_predict(&trees, &[1.0]), 3.5);
        let zeros: Vec<Tree> = (0..7).map(|_| Tree::stump(0.0, 0)).collect();
        assert_eq!(forest_predict(&zeros, &[1.0]), 0.0);
    }

    #[test]
    fn identical_proposal_is_accepted() {
        let design = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
        let grids = SplitGrids::from_design(&design, 100);
        let t = Tree::stump(0.0, 3);
        let r = [0.1, 0.2, 0.3];
        let lr = log_acceptance(&t, &t.clone(), ROOT, 0.0, Some((&r, 1.0)), &ForestPrior::default(), &grids);
        assert_eq!(lr, 0.0);
    }

    #[test]
    fn single_tree_sweep_keeps_cache() {
        let n = 30;
        let design = Matrix::from_rows(&(0..n).map(|i| vec![i as f64]).collect::<Vec<_>>());
        let grids = SplitGrids::from_design(&design, 100);
        let prior = ForestPrior {
            num_trees: 1,
            zeta: 2.0,
            ..Default::default()
        };
        let y: Vec<f64> = (0..n).map(|i| if i < 15 { -1.0 } else { 1.0 }).collect();
        let mut forest = Forest::new(1, n, 0.0);
        let mut rng = seeded(4);
        let mut stats = MoveStats::default();
        for _ in 0..50 {
            forest.backfit_sweep(&y, 0.3, &prior, &grids, &design, &MoveProbs::default(), &mut rng, &mut stats);
            assert!(forest.cache_error() < 1e-10);
            let t = &forest.trees()[0];
            assert!(!t.has_empty_leaf());
            for i in 0..n {
                assert_eq!(forest.fitted()[i], t.predict(design.row(i)));
            }
        }
    }
}
