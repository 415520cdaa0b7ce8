//! Tree topology of order-3 core tensors.
//!
//! Node 0 is the root `A(i, j, a_1)`. Every other node `s` carries its parent
//! bond `a_s` on leg 0 and two further legs, each a child bond, an open
//! bexciton index, or a size-1 dummy. Bond `s` is named after its child node.

mod checkpoint;
pub mod state;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};
pub use state::TtnState;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Leg {
    Ket,
    Bra,
    Bond(usize),
    Bex(usize),
    Dummy,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub parent: Option<usize>,
    pub legs: [Leg; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopologyKind {
    Train,
    Balanced,
    Explicit,
}

/// Child slot of an explicitly specified node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChildSpec {
    Node(usize),
    Bex(usize),
    Dummy,
}

/// Explicit tree: `nodes[i]` lists the two children of node `i`; node 0
/// hangs below the root.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplicitTree {
    pub nodes: Vec<[ChildSpec; 2]>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeTopology {
    pub kind: TopologyKind,
    pub dim: usize,
    pub depths: Vec<usize>,
    pub nodes: Vec<Node>,
    heights: Vec<usize>,
}

enum Abs {
    Node(Box<[Abs; 2]>),
    Bex(usize),
    Dummy,
}

fn pair(a: Abs, b: Abs) -> Abs {
    Abs::Node(Box::new([a, b]))
}

fn train_abs(k: usize) -> Abs {
    if k == 1 {
        return pair(Abs::Bex(0), Abs::Dummy);
    }
    let mut tail = pair(Abs::Bex(k - 2), Abs::Bex(k - 1));
    for j in (0..k - 2).rev() {
        tail = pair(Abs::Bex(j), tail);
    }
    tail
}

fn balanced_abs(k: usize) -> Abs {
    if k == 1 {
        return pair(Abs::Bex(0), Abs::Dummy);
    }
    let mut units: Vec<Abs> = (0..k / 2).map(|j| pair(Abs::Bex(2 * j), Abs::Bex(2 * j + 1))).collect();
    if k % 2 == 1 {
        units.push(Abs::Bex(k - 1));
    }
    fn build(mut units: Vec<Abs>) -> Abs {
        if units.len() == 1 {
            return units.pop().unwrap();
        }
        let right = units.split_off(units.len().div_ceil(2));
        pair(build(units), build(right))
    }
    build(units)
}

impl TreeTopology {
    pub fn train(dim: usize, depths: &[usize]) -> Result<Self> {
        Self::from_abs(TopologyKind::Train, dim, depths, (!depths.is_empty()).then(|| train_abs(depths.len())))
    }

    pub fn balanced(dim: usize, depths: &[usize]) -> Result<Self> {
        Self::from_abs(TopologyKind::Balanced, dim, depths, (!depths.is_empty()).then(|| balanced_abs(depths.len())))
    }

    pub fn explicit(dim: usize, depths: &[usize], tree: &ExplicitTree) -> Result<Self> {
        let k = depths.len();
        if tree.nodes.is_empty() {
            if k == 0 {
                return Self::from_abs(TopologyKind::Explicit, dim, depths, None);
            }
            return Err(Error::Invalid("explicit tree has no nodes".into()));
        }
        let mut node_seen = vec![false; tree.nodes.len()];
        let mut bex_seen = vec![false; k];
        node_seen[0] = true;
        for children in &tree.nodes {
            for c in children {
                match *c {
                    ChildSpec::Node(i) => {
                        if i >= tree.nodes.len() || node_seen[i] {
                            return Err(Error::Invalid(format!("explicit tree: node {i} is missing, repeated or cyclic")));
                        }
                        node_seen[i] = true;
                    }
                    ChildSpec::Bex(b) => {
                        if b >= k || bex_seen[b] {
                            return Err(Error::Invalid(format!("explicit tree: bexciton {b} out of range or duplicated")));
                        }
                        bex_seen[b] = true;
                    }
                    ChildSpec::Dummy => {}
                }
            }
        }
        if let Some(b) = bex_seen.iter().position(|s| !s) {
            return Err(Error::Invalid(format!("explicit tree: bexciton {b} not placed")));
        }
        if node_seen.iter().any(|s| !s) {
            return Err(Error::Invalid("explicit tree is disconnected".into()));
        }
        fn conv(tree: &ExplicitTree, i: usize, depth: usize) -> Result<Abs> {
            if depth > tree.nodes.len() {
                return Err(Error::Invalid("explicit tree is cyclic".into()));
            }
            let mut ch = Vec::with_capacity(2);
            for c in &tree.nodes[i] {
                ch.push(match *c {
                    ChildSpec::Node(j) => conv(tree, j, depth + 1)?,
                    ChildSpec::Bex(b) => Abs::Bex(b),
                    ChildSpec::Dummy => Abs::Dummy,
                });
            }
            let b = ch.pop().unwrap();
            let a = ch.pop().unwrap();
            Ok(pair(a, b))
        }
        let abs = conv(tree, 0, 0)?;
        Self::from_abs(TopologyKind::Explicit, dim, depths, Some(abs))
    }

    fn from_abs(kind: TopologyKind, dim: usize, depths: &[usize], top: Option<Abs>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("system dimension must be positive".into()));
        }
        if let Some(n) = depths.iter().find(|&&n| n < 2) {
            return Err(Error::Invalid(format!("depth {n} < 2")));
        }
        let mut nodes = vec![Node { parent: None, legs: [Leg::Ket, Leg::Bra, Leg::Dummy] }];
        let mut heights = vec![0];
        if let Some(top) = top {
            nodes[0].legs[2] = Leg::Bond(1);
            let mut queue: VecDeque<(Abs, usize)> = VecDeque::new();
            queue.push_back((top, 0));
            while let Some((abs, parent)) = queue.pop_front() {
                let Abs::Node(children) = abs else { unreachable!() };
                let id = nodes.len();
                nodes.push(Node { parent: Some(parent), legs: [Leg::Bond(id), Leg::Dummy, Leg::Dummy] });
                heights.push(heights[parent] + 1);
                let [a, b] = *children;
                for (slot, c) in [a, b].into_iter().enumerate() {
                    let leg = match c {
                        Abs::Bex(k) => Leg::Bex(k),
                        Abs::Dummy => Leg::Dummy,
                        n @ Abs::Node(_) => {
                            let child_id = id + queue.len() + 1;
                            queue.push_back((n, id));
                            Leg::Bond(child_id)
                        }
                    };
                    nodes[id].legs[slot + 1] = leg;
                }
            }
        }
        let topo = Self { kind, dim, depths: depths.to_vec(), nodes, heights };
        topo.check()?;
        Ok(topo)
    }

    fn check(&self) -> Result<()> {
        // bond ids must match the BFS ids assigned when the children were queued
        for (s, n) in self.nodes.iter().enumerate() {
            for leg in n.legs {
                if let Leg::Bond(c) = leg {
                    if c != s && (c >= self.nodes.len() || self.nodes[c].parent != Some(s)) {
                        return Err(Error::Invalid(format!("inconsistent bond {c} at node {s}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of bexcitons.
    pub fn k(&self) -> usize {
        self.depths.len()
    }

    /// Number of core tensors including the root.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn height(&self, s: usize) -> usize {
        self.heights[s]
    }

    pub fn parent(&self, s: usize) -> Option<usize> {
        self.nodes[s].parent
    }

    /// Leg slot of node `s` inside its parent.
    pub fn slot_in_parent(&self, s: usize) -> Option<(usize, usize)> {
        let p = self.nodes[s].parent?;
        let slot = self.nodes[p].legs.iter().position(|l| *l == Leg::Bond(s)).unwrap();
        Some((p, slot))
    }

    /// (slot, child) pairs below node `s`.
    pub fn children(&self, s: usize) -> Vec<(usize, usize)> {
        let first = if s == 0 { 2 } else { 1 };
        (first..3)
            .filter_map(|slot| match self.nodes[s].legs[slot] {
                Leg::Bond(c) => Some((slot, c)),
                _ => None,
            })
            .collect()
    }

    /// Slots of `s` that point away from the root.
    pub fn below_slots(&self, s: usize) -> &'static [usize] {
        if s == 0 {
            &[2]
        } else {
            &[1, 2]
        }
    }

    pub fn leg_dim(&self, leg: Leg, ranks: &[usize]) -> usize {
        match leg {
            Leg::Ket | Leg::Bra => self.dim,
            Leg::Bond(c) => ranks[c],
            Leg::Bex(k) => self.depths[k],
            Leg::Dummy => 1,
        }
    }

    pub fn dims(&self, s: usize, ranks: &[usize]) -> [usize; 3] {
        let l = &self.nodes[s].legs;
        [self.leg_dim(l[0], ranks), self.leg_dim(l[1], ranks), self.leg_dim(l[2], ranks)]
    }

    /// Is `n` inside the subtree hanging from bond `b`?
    pub fn in_subtree(&self, b: usize, mut n: usize) -> bool {
        loop {
            if n == b {
                return true;
            }
            match self.nodes[n].parent {
                Some(p) => n = p,
                None => return false,
            }
        }
    }

    /// Depth-first round trip from the root visiting children in slot order.
    pub fn dfs_path(&self) -> Vec<usize> {
        fn walk(t: &TreeTopology, s: usize, out: &mut Vec<usize>) {
            out.push(s);
            for (_, c) in t.children(s) {
                walk(t, c, out);
                out.push(s);
            }
        }
        let mut out = vec![];
        walk(self, 0, &mut out);
        out
    }

    /// Product of open dimensions below bond `s`.
    fn open_below(&self, s: usize) -> usize {
        let mut p = 1usize;
        for slot in 1..3 {
            p = p.saturating_mul(match self.nodes[s].legs[slot] {
                Leg::Bond(c) => self.open_below(c),
                leg => self.leg_dim(leg, &[]),
            });
        }
        p
    }

    /// Largest useful rank of bond `s`.
    pub fn capacity(&self, s: usize) -> usize {
        let below = self.open_below(s);
        let total = self
            .depths
            .iter()
            .fold(self.dim.saturating_mul(self.dim), |a, &n| a.saturating_mul(n));
        let above = total.checked_div(below).unwrap_or(0);
        below.min(above)
    }

    /// Clamp requested ranks (indexed by bond, entry 0 ignored) so that every
    /// core can be semi-unitary and no bond exceeds what its neighbours span.
    pub fn clamp_ranks(&self, requested: &[usize]) -> Vec<usize> {
        let n = self.len();
        let mut r = vec![0; n];
        for s in 1..n {
            r[s] = requested.get(s).copied().unwrap_or(1).max(1).min(self.capacity(s));
        }
        loop {
            let mut changed = false;
            for s in (1..n).rev() {
                let d = self.dims(s, &r);
                let lim = d[1] * d[2];
                if r[s] > lim {
                    r[s] = lim;
                    changed = true;
                }
            }
            for s in 1..n {
                let (p, slot) = self.slot_in_parent(s).unwrap();
                let d = self.dims(p, &r);
                let other: usize = (0..3).filter(|&i| i != slot).map(|i| d[i]).product();
                if r[s] > other {
                    r[s] = other;
                    changed = true;
                }
            }
            if !changed {
                return r;
            }
        }
    }

    pub fn uniform_ranks(&self, rank: usize) -> Vec<usize> {
        self.clamp_ranks(&vec![rank; self.len()])
    }

    pub fn full_ranks(&self) -> Vec<usize> {
        self.uniform_ranks(usize::MAX)
    }

    /// Fail if `ranks` violates the clamping rules.
    pub fn validate_ranks(&self, ranks: &[usize]) -> Result<()> {
        if ranks.len() != self.len() {
            return Err(Error::Invalid(format!("expected {} rank entries, got {}", self.len(), ranks.len())));
        }
        let clamped = self.clamp_ranks(ranks);
        for s in 1..self.len() {
            if ranks[s] == 0 || ranks[s] != clamped[s] {
                return Err(Error::Rank { bond: s, rank: ranks[s], capacity: clamped[s].min(self.capacity(s)) });
            }
        }
        Ok(())
    }

    /// Total number of core tensor elements.
    pub fn size_of(&self, ranks: &[usize]) -> usize {
        (0..self.len()).map(|s| self.dims(s, ranks).iter().product::<usize>()).sum()
    }

    /// Node and slot holding bexciton `k`.
    pub fn bex_location(&self, k: usize) -> Option<(usize, usize)> {
        self.nodes
            .iter()
            .enumerate()
            .find_map(|(s, n)| n.legs.iter().position(|l| *l == Leg::Bex(k)).map(|slot| (s, slot)))
    }

    /// SHA-256 over the structural description.
    pub fn hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(format!("{}|{:?}|", self.dim, self.depths).as_bytes());
        for n in &self.nodes {
            h.update(format!("{:?}{:?};", n.parent, n.legs).as_bytes());
        }
        h.finalize().into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_k4_matches_chain() {
        let t = TreeTopology::train(2, &[3; 4]).unwrap();
        assert_eq!(t.len(), 4);
        assert_eq!(t.nodes[1].legs, [Leg::Bond(1), Leg::Bex(0), Leg::Bond(2)]);
        assert_eq!(t.nodes[2].legs, [Leg::Bond(2), Leg::Bex(1), Leg::Bond(3)]);
        assert_eq!(t.nodes[3].legs, [Leg::Bond(3), Leg::Bex(2), Leg::Bex(3)]);
        assert_eq!(t.dfs_path(), vec![0, 1, 2, 3, 2, 1, 0]);
    }

    #[test]
    fn balanced_k4_is_appendix_tree() {
        let t = TreeTopology::balanced(2, &[3; 4]).unwrap();
        assert_eq!(t.nodes[0].legs, [Leg::Ket, Leg::Bra, Leg::Bond(1)]);
        assert_eq!(t.nodes[1].legs, [Leg::Bond(1), Leg::Bond(2), Leg::Bond(3)]);
        assert_eq!(t.nodes[2].legs, [Leg::Bond(2), Leg::Bex(0), Leg::Bex(1)]);
        assert_eq!(t.nodes[3].legs, [Leg::Bond(3), Leg::Bex(2), Leg::Bex(3)]);
        assert_eq!(t.dfs_path(), vec![0, 1, 2, 1, 3, 1, 0]);
    }

    #[test]
    fn degenerate_trees() {
        let t = TreeTopology::balanced(2, &[4]).unwrap();
        assert_eq!(t.len(), 1 + 1);
        assert_eq!(t.nodes[1].legs, [Leg::Bond(1), Leg::Bex(0), Leg::Dummy]);
        assert_eq!(t.dfs_path(), vec![0, 1, 0]);
        let t2 = TreeTopology::train(2, &[4, 4]).unwrap();
        assert_eq!(t2.nodes[1].legs, [Leg::Bond(1), Leg::Bex(0), Leg::Bex(1)]);
        let t0 = TreeTopology::train(2, &[]).unwrap();
        assert_eq!(t0.len(), 1);
        assert_eq!(t0.dfs_path(), vec![0]);
    }

    #[test]
    fn heights_monotone_and_bexcitons_unique() {
        for k in 1..=21 {
            for t in [TreeTopology::train(2, &vec![2; k]).unwrap(), TreeTopology::balanced(2, &vec![2; k]).unwrap()] {
                assert_eq!(t.len(), if k == 1 { 2 } else { k });
                for s in 1..t.len() {
                    assert!(t.height(s) >= t.height(s - 1));
                    assert_eq!(t.nodes[s].legs[0], Leg::Bond(s));
                }
                for b in 0..k {
                    assert!(t.bex_location(b).is_some());
                }
                let path = t.dfs_path();
                assert_eq!(path.len(), 2 * t.len() - 1);
            }
        }
    }

    #[test]
    fn table2_sizes() {
        let t = TreeTopology::balanced(2, &[20; 20]).unwrap();
        for (r, paper) in [(40, 0.7), (60, 2.2), (80, 4.9)] {
            let nominal = t.size_of(&vec![r; t.len()]) as f64 / 1e6;
            assert!((nominal - paper).abs() / paper < 0.1, "R={r}: {nominal}");
            // bond 1 can carry at most M² = 4 states
            let effective = t.size_of(&t.uniform_ranks(r)) as f64 / 1e6;
            assert!(effective < nominal);
        }
    }

    #[test]
    fn rank_clamping() {
        let t = TreeTopology::train(2, &[3; 3]).unwrap();
        let full = t.full_ranks();
        assert_eq!(full, vec![0, 4, 9]);
        assert!(t.validate_ranks(&full).is_ok());
        assert!(t.validate_ranks(&[0, 5, 9]).is_err());
        assert_eq!(t.uniform_ranks(1), vec![0, 1, 1]);
    }

    #[test]
    fn explicit_round_trip() {
        let tree = ExplicitTree {
            nodes: vec![[ChildSpec::Node(1), ChildSpec::Node(2)], [ChildSpec::Bex(0), ChildSpec::Bex(1)], [ChildSpec::Bex(2), ChildSpec::Bex(3)]],
        };
        let e = TreeTopology::explicit(2, &[3; 4], &tree).unwrap();
        let b = TreeTopology::balanced(2, &[3; 4]).unwrap();
        assert_eq!(e.nodes, b.nodes);
        let bad = ExplicitTree { nodes: vec![[ChildSpec::Bex(0), ChildSpec::Bex(0)]] };
        assert!(TreeTopology::explicit(2, &[3; 2], &bad).is_err());
        let missing = ExplicitTree { nodes: vec![[ChildSpec::Bex(0), ChildSpec::Dummy]] };
        assert!(TreeTopology::explicit(2, &[3; 2], &missing).is_err());
        let cyclic = ExplicitTree { nodes: vec![[ChildSpec::Node(1), ChildSpec::Bex(0)], [ChildSpec::Node(1), ChildSpec::Bex(1)]] };
        assert!(TreeTopology::explicit(2, &[3; 2], &cyclic).is_err());
    }
}
