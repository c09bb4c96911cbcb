use serde::{Deserialize, Serialize};

use crate::data::Matrix;

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NodeKind {
    Leaf {
        value: f64,
    },
    Internal {
        var: usize,
        /// Index into the split grid of `var`.
        cut_idx: usize,
        cut: f64,
        left: NodeId,
        right: NodeId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub parent: Option<NodeId>,
    pub depth: usize,
    pub kind: NodeKind,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        matches!(self.kind, NodeKind::Leaf { .. })
    }
}

/// Binary regression tree stored in an arena.
///
/// Freed slots are recycled, so two trees with the same logical structure
/// may differ in node numbering; equality compares structure from the root.
/// `rows` holds, for each leaf, the training rows routed to it (empty for
/// internal nodes and for trees used only for prediction).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Option<Node>>,
    free: Vec<NodeId>,
    #[serde(skip)]
    rows: Vec<Vec<u32>>,
}

pub const ROOT: NodeId = 0;

impl Tree {
    /// Root-only tree holding all `n` training rows.
    pub fn stump(value: f64, n: usize) -> Self {
        Tree {
            nodes: vec![Some(Node {
                parent: None,
                depth: 0,
                kind: NodeKind::Leaf { value },
            })],
            free: Vec::new(),
            rows: vec![(0..n as u32).collect()],
        }
    }

    pub fn node(&self, id: NodeId) -> &Node {
        self.nodes[id].as_ref().expect("live node")
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut Node {
        self.nodes[id].as_mut().expect("live node")
    }

    pub fn rows(&self, id: NodeId) -> &[u32] {
        &self.rows[id]
    }

    pub(crate) fn set_rows(&mut self, id: NodeId, rows: Vec<u32>) {
        self.rows[id] = rows;
    }

    pub(crate) fn take_rows(&mut self, id: NodeId) -> Vec<u32> {
        std::mem::take(&mut self.rows[id])
    }

    pub fn ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.as_ref().map(|_| i))
    }

    pub fn leaves(&self) -> Vec<NodeId> {
        self.ids().filter(|&i| self.node(i).is_leaf()).collect()
    }

    pub fn internals(&self) -> Vec<NodeId> {
        self.ids().filter(|&i| !self.node(i).is_leaf()).collect()
    }

    pub fn num_leaves(&self) -> usize {
        self.ids().filter(|&i| self.node(i).is_leaf()).count()
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        match self.node(id).kind {
            NodeKind::Internal { left, right, .. } => Some((left, right)),
            NodeKind::Leaf { .. } => None,
        }
    }

    /// Internal nodes whose children are both leaves.
    pub fn prunable(&self) -> Vec<NodeId> {
        self.internals()
            .into_iter()
            .filter(|&i| {
                let (l, r) = self.children(i).unwrap();
                self.node(l).is_leaf() && self.node(r).is_leaf()
            })
            .collect()
    }

    /// Leaves in the subtree rooted at `id`, left to right.
    pub fn subtree_leaves(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = Vec::new();
        let mut stack = vec![id];
        while let Some(k) = stack.pop() {
            match self.node(k).kind {
                NodeKind::Leaf { .. } => out.push(k),
                NodeKind::Internal { left, right, .. } => {
                    stack.push(right);
                    stack.push(left);
                }
            }
        }
        out
    }

    pub fn max_depth(&self) -> usize {
        self.ids().map(|i| self.node(i).depth).max().unwrap_or(0)
    }

    fn alloc(&mut self, node: Node) -> NodeId {
        if let Some(id) = self.free.pop() {
            self.nodes[id] = Some(node);
            self.rows[id] = Vec::new();
            id
        } else {
            self.nodes.push(Some(node));
            self.rows.push(Vec::new());
            self.nodes.len() - 1
        }
    }

    /// Turn leaf `id` into an internal node with two fresh leaves; returns
    /// `(left, right)`.
    pub fn split_leaf(
        &mut self,
        id: NodeId,
        var: usize,
        cut_idx: usize,
        cut: f64,
    ) -> (NodeId, NodeId) {
        let depth = self.node(id).depth;
        let value = match self.node(id).kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Internal { .. } => panic!("split_leaf on internal node"),
        };
        let child = Node {
            parent: Some(id),
            depth: depth + 1,
            kind: NodeKind::Leaf { value },
        };
        let left = self.alloc(child);
        let right = self.alloc(child);
        self.node_mut(id).kind = NodeKind::Internal {
            var,
            cut_idx,
            cut,
            left,
            right,
        };
        (left, right)
    }

    /// Collapse an internal node whose children are leaves.
    pub fn collapse(&mut self, id: NodeId, value: f64) {
        let (l, r) = self.children(id).expect("collapse on leaf");
        assert!(self.node(l).is_leaf() && self.node(r).is_leaf());
        let mut rows = self.take_rows(l);
        rows.extend(self.take_rows(r));
        rows.sort_unstable();
        self.nodes[l] = None;
        self.nodes[r] = None;
        self.free.push(r);
        self.free.push(l);
        self.node_mut(id).kind = NodeKind::Leaf { value };
        self.rows[id] = rows;
    }

    pub fn set_rule(&mut self, id: NodeId, new_var: usize, new_idx: usize, new_cut: f64) {
        if let NodeKind::Internal {
            var, cut_idx, cut, ..
        } = &mut self.node_mut(id).kind
        {
            *var = new_var;
            *cut_idx = new_idx;
            *cut = new_cut;
        } else {
            panic!("set_rule on leaf");
        }
    }

    pub fn rule(&self, id: NodeId) -> Option<(usize, usize, f64)> {
        match self.node(id).kind {
            NodeKind::Internal {
                var, cut_idx, cut, ..
            } => Some((var, cut_idx, cut)),
            NodeKind::Leaf { .. } => None,
        }
    }

    pub fn leaf_value(&self, id: NodeId) -> f64 {
        match self.node(id).kind {
            NodeKind::Leaf { value } => value,
            NodeKind::Internal { .. } => panic!("leaf_value on internal node"),
        }
    }

    pub fn set_leaf_value(&mut self, id: NodeId, v: f64) {
        if let NodeKind::Leaf { value } = &mut self.node_mut(id).kind {
            *value = v;
        } else {
            panic!("set_leaf_value on internal node");
        }
    }

    /// Leaf reached by `u`: go left iff `u[var] <= cut`.
    pub fn find_leaf(&self, u: &[f64]) -> NodeId {
        self.find_leaf_from(ROOT, u)
    }

    pub fn find_leaf_from(&self, start: NodeId, u: &[f64]) -> NodeId {
        let mut id = start;
        loop {
            match self.node(id).kind {
                NodeKind::Leaf { .. } => return id,
                NodeKind::Internal {
                    var,
                    cut,
                    left,
                    right,
                    ..
                } => id = if u[var] <= cut { left } else { right },
            }
        }
    }

    pub fn predict(&self, u: &[f64]) -> f64 {
        self.leaf_value(self.find_leaf(u))
    }

    /// Re-route the rows currently under `id` through its subtree,
    /// refreshing the row lists of every leaf below it.
    pub(crate) fn reroute(&mut self, id: NodeId, design: &Matrix) {
        let mut rows: Vec<u32> = Vec::new();
        let mut stack = vec![id];
        while let Some(k) = stack.pop() {
            rows.extend(self.take_rows(k));
            if let Some((l, r)) = self.children(k) {
                stack.push(l);
                stack.push(r);
            }
        }
        rows.sort_unstable();
        for r in rows {
            let leaf = self.find_leaf_from(id, design.row(r as usize));
            self.rows[leaf].push(r);
        }
    }

    /// Route every design row from the root (used after deserialization or
    /// for trees built by hand).
    pub fn attach_rows(&mut self, design: &Matrix) {
        self.rows = vec![Vec::new(); self.nodes.len()];
        for r in 0..design.nrows() {
            let leaf = self.find_leaf(design.row(r));
            self.rows[leaf].push(r as u32);
        }
    }

    pub fn has_empty_leaf(&self) -> bool {
        self.leaves().iter().any(|&l| self.rows[l].is_empty())
    }

    /// Drop per-row bookkeeping, keeping only what prediction needs.
    pub fn without_rows(&self) -> Tree {
        Tree {
            nodes: self.nodes.clone(),
            free: self.free.clone(),
            rows: Vec::new(),
        }
    }

    fn structure_eq(&self, a: NodeId, other: &Tree, b: NodeId) -> bool {
        let (na, nb) = (self.node(a), other.node(b));
        if na.depth != nb.depth {
            return false;
        }
        match (na.kind, nb.kind) {
            (NodeKind::Leaf { value: x }, NodeKind::Leaf { value: y }) => x == y,
            (
                NodeKind::Internal {
                    var: v1,
                    cut_idx: c1,
                    left: l1,
                    right: r1,
                    ..
                },
                NodeKind::Internal {
                    var: v2,
                    cut_idx: c2,
                    left: l2,
                    right: r2,
                    ..
                },
            ) => {
                v1 == v2
                    && c1 == c2
                    && self.structure_eq(l1, other, l2)
                    && self.structure_eq(r1, other, r2)
            }
            _ => false,
        }
    }
}

impl PartialEq for Tree {
    fn eq(&self, other: &Self) -> bool {
        self.structure_eq(ROOT, other, ROOT)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stump_predicts_constant() {
        let t = Tree::stump(0.7, 3);
        assert_eq!(t.predict(&[1.0, -4.0]), 0.7);
        assert_eq!(t.predict(&[]), 0.7);
    }

    #[test]
    fn depth_one_rule() {
        let mut t = Tree::stump(0.0, 0);
        let (l, r) = t.split_leaf(ROOT, 0, 0, 0.0);
        t.set_leaf_value(l, -1.0);
        t.set_leaf_value(r, 1.0);
        assert_eq!(t.predict(&[-2.0]), -1.0);
        assert_eq!(t.predict(&[0.0]), -1.0);
        assert_eq!(t.predict(&[0.5]), 1.0);
    }

    #[test]
    fn depth_three_paths() {
        // root: u0 <= 0 ; left: u1 <= 1 ; right: u1 <= -1 ; left-left: u0 <= -5
        let mut t = Tree::stump(0.0, 0);
        let (l, r) = t.split_leaf(ROOT, 0, 0, 0.0);
        let (ll, lr) = t.split_leaf(l, 1, 0, 1.0);
        let (rl, rr) = t.split_leaf(r, 1, 0, -1.0);
        let (lll, llr) = t.split_leaf(ll, 0, 0, -5.0);
        for (id, v) in [(lll, 1.0), (llr, 2.0), (lr, 3.0), (rl, 4.0), (rr, 5.0)] {
            t.set_leaf_value(id, v);
        }
        let probes = [
            ([-6.0, 0.0], 1.0),
            ([-5.0, 1.0], 1.0),
            ([-4.0, 0.5], 2.0),
            ([-1.0, 1.5], 3.0),
            ([0.0, 9.0], 3.0),
            ([0.1, -1.0], 4.0),
            ([3.0, -2.0], 4.0),
            ([3.0, 0.0], 5.0),
        ];
        for (u, want) in probes {
            assert_eq!(t.predict(&u), want, "probe {u:?}");
        }
        assert_eq!(t.max_depth(), 3);
        assert_eq!(t.num_leaves(), 5);
    }

    #[test]
    fn split_then_collapse_restores_structure() {
        let design = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]);
        let mut t = Tree::stump(0.3, 3);
        let orig = t.clone();
        t.split_leaf(ROOT, 0, 0, 0.5);
        t.reroute(ROOT, &design);
        assert_eq!(t.rows(1), &[0]);
        assert_eq!(t.rows(2), &[1, 2]);
        t.collapse(ROOT, 0.3);
        assert_eq!(t, orig);
        assert_eq!(t.rows(ROOT), &[0, 1, 2]);
    }
}
