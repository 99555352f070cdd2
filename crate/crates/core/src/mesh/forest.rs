//! Element genealogy: the bisection forest behind a mesh.
//!
//! Elements are stored with their vertices in generation order (Maubach's
//! ordering).  The refinement edge of an element at level `l` in dimension
//! `n` runs between local vertices `0` and `k` with `k = n - (l mod n)`.
//! Bisecting at the edge midpoint `z` yields the children
//!
//! ```text
//! child a: (x0, .., x[k-1], z, x[k+1], .., xn)
//! child b: (x1, .., x[k],   z, x[k+1], .., xn)
//! ```
//!
//! both at level `l + 1`, with `z` sitting at local index `k` in both.
//! For meshes whose roots are Kuhn simplices sharing cell diagonals this
//! ordering makes compatible-patch bisection terminate.
//!
//! Slots are never reused within an adaptation pass; freed and dead slots
//! are dropped by [`Forest::compact`] afterwards.

pub(crate) const NO_PARENT: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    /// A leaf: part of the current mesh.
    Live,
    /// An interior node: has been bisected, kept for coarsening.
    Inner,
    /// Removed by coarsening; dropped at the next compaction.
    Free,
}

#[derive(Debug, Clone)]
pub(crate) struct Forest {
    dim: usize,
    /// Vertex tuples in generation order, stride dim + 1.
    verts: Vec<usize>,
    level: Vec<u32>,
    parent: Vec<u32>,
    state: Vec<Slot>,
    uid: Vec<u64>,
    next_uid: u64,
}

impl Forest {
    pub fn new(dim: usize) -> Self {
        debug_assert!(dim == 2 || dim == 3);
        Forest {
            dim,
            verts: Vec::new(),
            level: Vec::new(),
            parent: Vec::new(),
            state: Vec::new(),
            uid: Vec::new(),
            next_uid: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.level.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn push_root(&mut self, verts: &[usize]) -> u32 {
        debug_assert_eq!(verts.len(), self.dim + 1);
        let slot = self.len() as u32;
        self.verts.extend_from_slice(verts);
        self.level.push(0);
        self.parent.push(NO_PARENT);
        self.state.push(Slot::Live);
        self.uid.push(self.next_uid);
        self.next_uid += 1;
        slot
    }

    pub fn verts(&self, slot: u32) -> &[usize] {
        let nv = self.dim + 1;
        let s = slot as usize;
        &self.verts[s * nv..(s + 1) * nv]
    }

    pub fn level(&self, slot: u32) -> u32 {
        self.level[slot as usize]
    }

    pub fn parent(&self, slot: u32) -> u32 {
        self.parent[slot as usize]
    }

    pub fn is_live(&self, slot: u32) -> bool {
        self.state[slot as usize] == Slot::Live
    }

    pub fn uid(&self, slot: u32) -> u64 {
        self.uid[slot as usize]
    }

    /// Local index of the refinement-edge endpoint paired with vertex 0.
    pub fn edge_k(dim: usize, level: u32) -> usize {
        dim - (level as usize % dim)
    }

    /// Refinement edge of a live element, as a node pair.
    pub fn refinement_edge(&self, slot: u32) -> (usize, usize) {
        let k = Self::edge_k(self.dim, self.level(slot));
        let v = self.verts(slot);
        (v[0], v[k])
    }

    /// Local index at which the bisection vertex sits inside a child; only
    /// meaningful for slots with a parent.
    pub fn bisection_vertex(&self, slot: u32) -> Option<usize> {
        let p = self.parent(slot);
        if p == NO_PARENT {
            return None;
        }
        let k = Self::edge_k(self.dim, self.level(p));
        Some(self.verts(slot)[k])
    }

    /// Splits a live element at node `z` (the midpoint of its refinement
    /// edge); returns the two child slots.
    pub fn bisect(&mut self, slot: u32, z: usize) -> [u32; 2] {
        debug_assert!(self.is_live(slot));
        let nv = self.dim + 1;
        let level = self.level(slot);
        let k = Self::edge_k(self.dim, level);

        let mut child_a = [0usize; 4];
        let mut child_b = [0usize; 4];
        {
            let pv = self.verts(slot);
            child_a[..nv].copy_from_slice(pv);
            child_a[k] = z;
            for i in 0..k {
                child_b[i] = pv[i + 1];
            }
            child_b[k] = z;
            for i in (k + 1)..nv {
                child_b[i] = pv[i];
            }
        }

        self.state[slot as usize] = Slot::Inner;
        let mut out = [0u32; 2];
        for (w, child) in [child_a, child_b].iter().enumerate() {
            let s = self.len() as u32;
            self.verts.extend_from_slice(&child[..nv]);
            self.level.push(level + 1);
            self.parent.push(slot);
            self.state.push(Slot::Live);
            self.uid.push(self.next_uid);
            self.next_uid += 1;
            out[w] = s;
        }
        out
    }

    /// Undoes a bisection: frees the two children and revives the parent.
    pub fn merge(&mut self, parent: u32, children: [u32; 2]) {
        debug_assert_eq!(self.state[parent as usize], Slot::Inner);
        for c in children {
            debug_assert!(self.is_live(c));
            debug_assert_eq!(self.parent(c), parent);
            self.state[c as usize] = Slot::Free;
        }
        self.state[parent as usize] = Slot::Live;
    }

    /// Live slots in ascending order.
    pub fn live_slots(&self) -> Vec<u32> {
        (0..self.len() as u32).filter(|&s| self.is_live(s)).collect()
    }

    #[cfg(test)]
    pub fn live_count(&self) -> usize {
        self.state.iter().filter(|&&s| s == Slot::Live).count()
    }

    /// Drops freed slots and applies a node relabeling, keeping slot order.
    pub fn compact(&self, node_map: &[usize]) -> Forest {
        let nv = self.dim + 1;
        let mut slot_map = vec![u32::MAX; self.len()];
        let mut out = Forest::new(self.dim);
        out.next_uid = self.next_uid;
        for s in 0..self.len() {
            if self.state[s] == Slot::Free {
                continue;
            }
            slot_map[s] = out.len() as u32;
            for &v in &self.verts[s * nv..(s + 1) * nv] {
                out.verts.push(node_map[v]);
            }
            out.level.push(self.level[s]);
            out.parent.push(self.parent[s]);
            out.state.push(self.state[s]);
            out.uid.push(self.uid[s]);
        }
        for p in out.parent.iter_mut() {
            if *p != NO_PARENT {
                *p = slot_map[*p as usize];
                debug_assert_ne!(*p, u32::MAX, "parent of a kept slot was freed");
            }
        }
        out
    }

    /// Applies a node relabeling in place (test support).
    #[cfg(test)]
    pub fn relabel_nodes(&mut self, f: impl Fn(usize) -> usize) {
        for v in self.verts.iter_mut() {
            *v = f(*v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bisection_ordering_matches_newest_vertex_rule_in_2d() {
        let mut f = Forest::new(2);
        let root = f.push_root(&[10, 11, 12]);
        // Level 0: refinement edge is (v0, v2).
        assert_eq!(f.refinement_edge(root), (10, 12));
        let kids = f.bisect(root, 99);
        assert_eq!(f.verts(kids[0]), &[10, 11, 99]);
        assert_eq!(f.verts(kids[1]), &[11, 12, 99]);
        // Level 1: refinement edge is (v0, v1), the old outer edges.
        assert_eq!(f.refinement_edge(kids[0]), (10, 11));
        assert_eq!(f.refinement_edge(kids[1]), (11, 12));
        // The bisection vertex is recoverable from either child.
        assert_eq!(f.bisection_vertex(kids[0]), Some(99));
        assert_eq!(f.bisection_vertex(kids[1]), Some(99));
        assert_eq!(f.bisection_vertex(root), None);
    }

    #[test]
    fn bisection_ordering_in_3d_cycles_edges() {
        let mut f = Forest::new(3);
        let root = f.push_root(&[0, 1, 2, 3]);
        assert_eq!(f.refinement_edge(root), (0, 3));
        let kids = f.bisect(root, 9);
        assert_eq!(f.verts(kids[0]), &[0, 1, 2, 9]);
        assert_eq!(f.verts(kids[1]), &[1, 2, 3, 9]);
        // Level 1 uses k = 2.
        assert_eq!(f.refinement_edge(kids[0]), (0, 2));
        assert_eq!(f.refinement_edge(kids[1]), (1, 3));
        let gk = f.bisect(kids[0], 8);
        // Level 2 uses k = 1.
        assert_eq!(f.refinement_edge(gk[0]), (0, 1));
    }

    #[test]
    fn merge_restores_parent() {
        let mut f = Forest::new(2);
        let root = f.push_root(&[0, 1, 2]);
        let kids = f.bisect(root, 3);
        assert_eq!(f.live_count(), 2);
        f.merge(root, kids);
        assert_eq!(f.live_count(), 1);
        assert!(f.is_live(root));
        let compacted = f.compact(&(0..4).collect::<Vec<_>>());
        assert_eq!(compacted.len(), 1);
        assert_eq!(compacted.verts(0), &[0, 1, 2]);
    }
}
