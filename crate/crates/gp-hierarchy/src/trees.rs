//! Binary contraction trees built from a collapse map.
//!
//! Each Duhamel column becomes an internal vertex, each root particle a root
//! vertex, and each factor of the initial product a leaf. A column's two
//! children are the next column contracting onto the same row (the "minus"
//! child, continuing the row) and the first column contracting onto its
//! fresh row (the "plus" child). The tree containing the last column is
//! distinguished; the last column's two leaf children are the distinguished
//! leaves.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::boardgame::CollapseMap;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("tree {0} is a bare edge with no internal vertices")]
    BareEdge(usize),
    #[error("tree index {0} is not in 1..={1}")]
    TreeOutOfRange(usize, usize),
}

/// A child slot of an internal vertex, identified globally: `Internal(c)`
/// is the vertex of column `c` (1-based), `Leaf(i)` the leaf of particle `i`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Child {
    Internal(usize),
    Leaf(usize),
}

/// The forest of `k` binary trees encoding the contraction structure of a
/// collapse map.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeForest {
    map: CollapseMap,
    /// Child of root `j` (index `j-1`).
    root_children: Vec<Child>,
    /// Per column `c` (index `c-1`): the same-row ("minus") child.
    child_minus: Vec<Child>,
    /// Per column `c` (index `c-1`): the fresh-row ("plus") child.
    child_plus: Vec<Child>,
    /// Tree index (1-based) of each internal vertex, per column.
    internal_tree: Vec<usize>,
    /// Tree index (1-based) of each leaf `u_i` (index `i-1`).
    leaf_tree: Vec<usize>,
    /// Tree containing the last column's vertex.
    distinguished_tree: usize,
}

impl TreeForest {
    pub fn map(&self) -> &CollapseMap {
        &self.map
    }

    pub fn k(&self) -> usize {
        self.map.k()
    }

    pub fn r(&self) -> usize {
        self.map.r()
    }

    pub fn distinguished_tree(&self) -> usize {
        self.distinguished_tree
    }

    pub fn root_child(&self, j: usize) -> Child {
        self.root_children[j - 1]
    }

    /// Whether tree `j` is a single root-to-leaf edge.
    pub fn is_bare_edge(&self, j: usize) -> bool {
        matches!(self.root_children[j - 1], Child::Leaf(_))
    }

    /// The same-row and fresh-row children of the vertex at column `c`.
    pub fn children(&self, c: usize) -> (Child, Child) {
        (self.child_minus[c - 1], self.child_plus[c - 1])
    }

    pub fn internal_tree(&self, c: usize) -> usize {
        self.internal_tree[c - 1]
    }

    pub fn leaf_tree(&self, i: usize) -> usize {
        self.leaf_tree[i - 1]
    }

    /// Columns of the internal vertices of tree `j`, in increasing order.
    pub fn internal_columns(&self, j: usize) -> Vec<usize> {
        (1..=self.r()).filter(|&c| self.internal_tree[c - 1] == j).collect()
    }

    /// Global indices of the leaves of tree `j`, in increasing order.
    pub fn leaves(&self, j: usize) -> Vec<usize> {
        (1..=self.k() + self.r()).filter(|&i| self.leaf_tree[i - 1] == j).collect()
    }

    /// The two distinguished leaves: the leaf children of the last column.
    pub fn distinguished_leaves(&self) -> (usize, usize) {
        let (k, r) = (self.k(), self.r());
        (self.map.row(r), k + r)
    }
}

/// Builds the forest for a collapse map (echelon form not required).
pub fn build_forest(m: &CollapseMap) -> TreeForest {
    let (k, r) = (m.k(), m.r());

    let root_children: Vec<Child> = (1..=k)
        .map(|j| match (1..=r).find(|&c| m.row(c) == j) {
            Some(c) => Child::Internal(c),
            None => Child::Leaf(j),
        })
        .collect();

    let mut child_minus = Vec::with_capacity(r);
    let mut child_plus = Vec::with_capacity(r);
    for c in 1..=r {
        let minus = match (c + 1..=r).find(|&c2| m.row(c2) == m.row(c)) {
            Some(c2) => Child::Internal(c2),
            None => Child::Leaf(m.row(c)),
        };
        let plus = match (c + 1..=r).find(|&c2| m.row(c2) == k + c) {
            Some(c2) => Child::Internal(c2),
            None => Child::Leaf(k + c),
        };
        child_minus.push(minus);
        child_plus.push(plus);
    }

    let mut internal_tree = vec![0usize; r];
    for c in 1..=r {
        let row = m.row(c);
        internal_tree[c - 1] = if let Some(c2) = (1..c).rev().find(|&c2| m.row(c2) == row) {
            internal_tree[c2 - 1]
        } else if row <= k {
            row
        } else {
            internal_tree[row - k - 1]
        };
    }

    let mut leaf_tree = vec![0usize; k + r];
    for j in 1..=k {
        if let Child::Leaf(i) = root_children[j - 1] {
            leaf_tree[i - 1] = j;
        }
    }
    for c in 1..=r {
        for child in [child_minus[c - 1], child_plus[c - 1]] {
            if let Child::Leaf(i) = child {
                leaf_tree[i - 1] = internal_tree[c - 1];
            }
        }
    }
    debug_assert!(leaf_tree.iter().all(|&j| j >= 1));

    let distinguished_tree = internal_tree[r - 1];
    TreeForest {
        map: m.clone(),
        root_children,
        child_minus,
        child_plus,
        internal_tree,
        leaf_tree,
        distinguished_tree,
    }
}

/// The per-tree relabeling of one tree of a forest.
///
/// Internal vertices get labels `1..=m_j` in column order and leaves get
/// labels `m_j+1..=2m_j+1` in order of their global particle index. `sigma`
/// is the tree's own depth-`m_j` collapse map (`sigma[b-2] = sigma_j(b)` for
/// `b` in `2..=m_j+1`), and the kappa maps give each internal label its
/// same-row (minus) and fresh-row (plus) child label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeLabeling {
    pub tree: usize,
    /// Global Duhamel depth of the source map; leaves bind to `t_r`.
    pub r: usize,
    pub m: usize,
    pub distinguished: bool,
    pub sigma: Vec<usize>,
    pub kappa_minus: Vec<usize>,
    pub kappa_plus: Vec<usize>,
    /// Global time column bound to each internal label (index `alpha-1`).
    pub time_binding: Vec<usize>,
    /// Global particle index of each leaf label (index `label - m - 1`).
    pub leaf_particles: Vec<usize>,
    /// Leaf labels of the two distinguished leaves, if this tree is
    /// distinguished.
    pub distinguished_leaf_labels: Option<(usize, usize)>,
}

impl TreeLabeling {
    pub fn is_internal(&self, label: usize) -> bool {
        (1..=self.m).contains(&label)
    }

    pub fn kappa(&self, alpha: usize) -> (usize, usize) {
        (self.kappa_minus[alpha - 1], self.kappa_plus[alpha - 1])
    }

    /// Iterates `kappa_plus` starting from label 1, `q` times.
    pub fn kappa_plus_iterate(&self, q: usize) -> usize {
        let mut label = 1;
        for _ in 0..q {
            assert!(self.is_internal(label), "kappa_plus iterate left the internal vertices");
            label = self.kappa_plus[label - 1];
        }
        label
    }
}

/// Extracts the labeling of tree `j`; errors on a bare-edge tree.
pub fn extract_labeling(f: &TreeForest, j: usize) -> Result<TreeLabeling, TreeError> {
    if j < 1 || j > f.k() {
        return Err(TreeError::TreeOutOfRange(j, f.k()));
    }
    let cols = f.internal_columns(j);
    if cols.is_empty() {
        return Err(TreeError::BareEdge(j));
    }
    let m = cols.len();
    let k = f.k();
    let local_of_col = |c: usize| cols.iter().position(|&x| x == c).map(|p| p + 1);

    let sigma: Vec<usize> = cols
        .iter()
        .map(|&c| {
            let row = f.map().row(c);
            if row <= k {
                debug_assert_eq!(row, j);
                1
            } else {
                local_of_col(row - k).expect("attachment column lies in the same tree") + 1
            }
        })
        .collect();

    let leaf_particles = f.leaves(j);
    let leaf_label = |i: usize| {
        m + 1 + leaf_particles.iter().position(|&x| x == i).expect("leaf lies in the tree")
    };
    let child_label = |child: Child| match child {
        Child::Internal(c) => local_of_col(c).expect("child column lies in the same tree"),
        Child::Leaf(i) => leaf_label(i),
    };

    let mut kappa_minus = Vec::with_capacity(m);
    let mut kappa_plus = Vec::with_capacity(m);
    for &c in &cols {
        let (minus, plus) = f.children(c);
        kappa_minus.push(child_label(minus));
        kappa_plus.push(child_label(plus));
    }

    let distinguished = f.distinguished_tree() == j;
    let distinguished_leaf_labels = distinguished.then(|| {
        let (a, b) = f.distinguished_leaves();
        (leaf_label(a), leaf_label(b))
    });

    Ok(TreeLabeling {
        tree: j,
        r: f.r(),
        m,
        distinguished,
        sigma,
        kappa_minus,
        kappa_plus,
        time_binding: cols,
        leaf_particles,
        distinguished_leaf_labels,
    })
}

/// Internal-vertex count `d_alpha` and regular-leaf count `b_alpha` of the
/// subtree rooted at internal label `alpha`.
pub fn subtree_stats(l: &TreeLabeling, alpha: usize) -> (usize, usize) {
    assert!(l.is_internal(alpha), "label {alpha} is not internal");
    let distinguished: Vec<usize> = match l.distinguished_leaf_labels {
        Some((a, b)) => vec![a, b],
        None => vec![],
    };
    let mut d = 0;
    let mut b = 0;
    let mut stack = vec![alpha];
    while let Some(label) = stack.pop() {
        if l.is_internal(label) {
            d += 1;
            let (lo, hi) = l.kappa(label);
            stack.push(lo);
            stack.push(hi);
        } else if !distinguished.contains(&label) {
            b += 1;
        }
    }
    (d, b)
}

/// Rebuilds the global collapse map from the labelings of all non-bare
/// trees of a forest; inverse of `build_forest` + `extract_labeling`.
pub fn reassemble_map(k: usize, r: usize, labelings: &[TreeLabeling]) -> CollapseMap {
    let mut rho = vec![0usize; r];
    for l in labelings {
        for (idx, &c) in l.time_binding.iter().enumerate() {
            let local_row = l.sigma[idx];
            rho[c - 1] = if local_row == 1 { l.tree } else { k + l.time_binding[local_row - 2] };
        }
    }
    CollapseMap::new(k, rho).expect("reassembled map is valid")
}
