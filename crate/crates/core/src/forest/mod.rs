//! Sum-of-trees regression with the BART prior and its backfitting MCMC.

pub mod moves;
pub mod prior;
pub mod sampler;
pub mod tree;

pub use moves::{apply_proposal, propose_tree_move, MoveDraw, MoveKind, MoveProbs, Proposal};
pub use prior::{leaf_log_marginal, leaf_posterior, split_prob, tree_log_prior, ForestPrior, LeafStats};
pub use sampler::{
    draw_leaf_values, forest_predict, mh_update_tree, mh_update_tree_prior_only, Forest, MhOutcome,
    MoveStats,
};
pub use tree::{Node, NodeId, NodeKind, Tree, ROOT};
