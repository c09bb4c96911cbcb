//! GROW / PRUNE / CHANGE / SWAP proposals for a single tree.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::prior::{available_range, available_vars};
use super::tree::{NodeId, Tree, ROOT};
use crate::data::Matrix;
use crate::grid::SplitGrids;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MoveKind {
    Grow,
    Prune,
    Change,
    Swap,
}

impl MoveKind {
    pub const ALL: [MoveKind; 4] = [MoveKind::Grow, MoveKind::Prune, MoveKind::Change, MoveKind::Swap];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Mixture weights over move types.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MoveProbs {
    pub grow: f64,
    pub prune: f64,
    pub change: f64,
    pub swap: f64,
}

impl Default for MoveProbs {
    fn default() -> Self {
        MoveProbs {
            grow: 0.25,
            prune: 0.25,
            change: 0.40,
            swap: 0.10,
        }
    }
}

impl MoveProbs {
    pub fn validate(&self) -> crate::error::Result<()> {
        let all = [self.grow, self.prune, self.change, self.swap];
        if all.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || all.iter().sum::<f64>() <= 0.0 {
            return Err(crate::error::Error::Config(
                "move probabilities must be nonnegative with a positive sum".into(),
            ));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> MoveKind {
        let total = self.grow + self.prune + self.change + self.swap;
        let u = rng.random::<f64>() * total;
        if u < self.grow {
            MoveKind::Grow
        } else if u < self.grow + self.prune {
            MoveKind::Prune
        } else if u < self.grow + self.prune + self.change {
            MoveKind::Change
        } else {
            MoveKind::Swap
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Proposal {
    Grow {
        leaf: NodeId,
        var: usize,
        cut_idx: usize,
    },
    Prune {
        node: NodeId,
    },
    Change {
        node: NodeId,
        var: usize,
        cut_idx: usize,
    },
    Swap {
        parent: NodeId,
        child: NodeId,
    },
}

/// A drawn move: `proposal` is `None` when the drawn type has no legal
/// instance in the current tree (a no-op draw).
#[derive(Debug, Clone, Copy)]
pub struct MoveDraw {
    pub kind: MoveKind,
    pub proposal: Option<Proposal>,
    /// `log q(T' -> T) - log q(T -> T')`.
    pub log_proposal_ratio: f64,
}

fn pick<R: Rng + ?Sized, T: Copy>(rng: &mut R, items: &[T]) -> T {
    items[rng.random_range(0..items.len())]
}

/// Draw one tree move. Leaves and internal nodes are chosen uniformly, the
/// variable uniformly among those with a legal cut, and the cut uniformly
/// within the range the ancestors allow.
pub fn propose_tree_move<R: Rng + ?Sized>(
    tree: &Tree,
    rng: &mut R,
    grids: &SplitGrids,
    probs: &MoveProbs,
) -> MoveDraw {
    let kind = probs.draw(rng);
    let noop = MoveDraw {
        kind,
        proposal: None,
        log_proposal_ratio: 0.0,
    };
    match kind {
        MoveKind::Grow => {
            let leaves = tree.leaves();
            let leaf = pick(rng, &leaves);
            let vars = available_vars(tree, leaf, grids);
            if vars.is_empty() {
                return noop;
            }
            let var = pick(rng, &vars);
            let (lo, hi) = available_range(tree, leaf, var, grids);
            let cut_idx = rng.random_range(lo..hi);
            let prunable_now = tree.prunable();
            let parent_was_prunable = tree
                .node(leaf)
                .parent
                .is_some_and(|p| prunable_now.contains(&p));
            let prunable_after = prunable_now.len() + 1 - parent_was_prunable as usize;
            let forward = -(leaves.len() as f64).ln()
                - (vars.len() as f64).ln()
                - ((hi - lo) as f64).ln()
                + probs.grow.ln();
            let reverse = probs.prune.ln() - (prunable_after as f64).ln();
            MoveDraw {
                kind,
                proposal: Some(Proposal::Grow { leaf, var, cut_idx }),
                log_proposal_ratio: reverse - forward,
            }
        }
        MoveKind::Prune => {
            let prunable = tree.prunable();
            if prunable.is_empty() {
                return noop;
            }
            let node = pick(rng, &prunable);
            let (var, _, _) = tree.rule(node).unwrap();
            // the reverse GROW sees the pruned node as a leaf with the same
            // ancestors, so its variable and cut counts are unchanged
            let vars = available_vars(tree, node, grids).len();
            let (lo, hi) = available_range(tree, node, var, grids);
            let leaves_after = tree.num_leaves() - 1;
            let forward = probs.prune.ln() - (prunable.len() as f64).ln();
            let reverse = probs.grow.ln()
                - (leaves_after as f64).ln()
                - (vars as f64).ln()
                - ((hi - lo) as f64).ln();
            MoveDraw {
                kind,
                proposal: Some(Proposal::Prune { node }),
                log_proposal_ratio: reverse - forward,
            }
        }
        MoveKind::Change => {
            let internals = tree.internals();
            if internals.is_empty() {
                return noop;
            }
            let node = pick(rng, &internals);
            let vars = available_vars(tree, node, grids);
            let var = pick(rng, &vars);
            let (lo, hi) = available_range(tree, node, var, grids);
            let cut_idx = rng.random_range(lo..hi);
            let (old_var, _, _) = tree.rule(node).unwrap();
            let (olo, ohi) = available_range(tree, node, old_var, grids);
            MoveDraw {
                kind,
                proposal: Some(Proposal::Change { node, var, cut_idx }),
                log_proposal_ratio: ((hi - lo) as f64).ln() - ((ohi - olo) as f64).ln(),
            }
        }
        MoveKind::Swap => {
            let pairs = swappable_pairs(tree);
            if pairs.is_empty() {
                return noop;
            }
            let (parent, child) = pick(rng, &pairs);
            MoveDraw {
                kind,
                proposal: Some(Proposal::Swap { parent, child }),
                log_proposal_ratio: 0.0,
            }
        }
    }
}

/// `(parent, child)` pairs where both are internal.
pub fn swappable_pairs(tree: &Tree) -> Vec<(NodeId, NodeId)> {
    let mut out = Vec::new();
    for p in tree.internals() {
        let (l, r) = tree.children(p).unwrap();
        for c in [l, r] {
            if !tree.node(c).is_leaf() {
                out.push((p, c));
            }
        }
    }
    out
}

/// Apply a proposal to a copy of `tree`, re-routing training rows.
///
/// Returns the new tree and the root of the modified subtree, or `None`
/// when the result would have a leaf with no training rows.
pub fn apply_proposal(
    tree: &Tree,
    proposal: &Proposal,
    grids: &SplitGrids,
    design: &Matrix,
) -> Option<(Tree, NodeId)> {
    let mut t = tree.clone();
    let root = match *proposal {
        Proposal::Grow { leaf, var, cut_idx } => {
            let rows = t.take_rows(leaf);
            let cut = grids.cut(var, cut_idx);
            let (l, r) = t.split_leaf(leaf, var, cut_idx, cut);
            let (left, right): (Vec<u32>, Vec<u32>) = rows
                .into_iter()
                .partition(|&row| design.get(row as usize, var) <= cut);
            if left.is_empty() || right.is_empty() {
                return None;
            }
            t.set_rows(l, left);
            t.set_rows(r, right);
            leaf
        }
        Proposal::Prune { node } => {
            t.collapse(node, 0.0);
            node
        }
        Proposal::Change { node, var, cut_idx } => {
            t.set_rule(node, var, cut_idx, grids.cut(var, cut_idx));
            t.reroute(node, design);
            if t.subtree_leaves(node).iter().any(|&l| t.rows(l).is_empty()) {
                return None;
            }
            node
        }
        Proposal::Swap { parent, child } => {
            let (pv, pi, pc) = t.rule(parent).unwrap();
            let (cv, ci, cc) = t.rule(child).unwrap();
            let (l, r) = t.children(parent).unwrap();
            let other = if child == l { r } else { l };
            let other_same = t.rule(other).is_some_and(|(v, i, _)| v == cv && i == ci);
            t.set_rule(parent, cv, ci, cc);
            t.set_rule(child, pv, pi, pc);
            if other_same {
                t.set_rule(other, pv, pi, pc);
            }
            t.reroute(parent, design);
            if t.subtree_leaves(parent).iter().any(|&l| t.rows(l).is_empty()) {
                return None;
            }
            parent
        }
    };
    Some((t, root))
}

/// Convenience for tests and diagnostics: GROW at a fixed leaf/rule.
pub fn grow_at(
    tree: &Tree,
    leaf: NodeId,
    var: usize,
    cut_idx: usize,
    grids: &SplitGrids,
    design: &Matrix,
) -> Option<Tree> {
    apply_proposal(tree, &Proposal::Grow { leaf, var, cut_idx }, grids, design).map(|(t, _)| t)
}

pub fn is_root_only(tree: &Tree) -> bool {
    tree.node(ROOT).is_leaf()
}
