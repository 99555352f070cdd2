//! Local mesh adaptation: marking, bisection with closure, coarsening.
//!
//! Refinement works on compatible patches: an element is bisected only
//! together with every element sharing its refinement edge, which keeps the
//! mesh conforming at every intermediate step.  Elements whose refinement
//! edge disagrees are recursively brought up to speed first.  Coarsening is
//! the exact inverse: all sibling pairs around a bisection vertex are merged
//! at once, and only when every element touching that vertex participates.

use super::forest::{Forest, NO_PARENT};
use super::{ElementIndicator, SimplicialMesh};
use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap};

/// Controls for one adaptation pass.
///
/// `growth_rate` bounds the element-count ratio of one pass: refinement
/// stops issuing new marks once the count would exceed `growth_rate * n`
/// (conformity closure may still overshoot slightly), and coarsening stops
/// before the count falls below `n * min(growth_rate, 1 / growth_rate)`.
/// A growth rate below one therefore disables refinement for the pass and
/// lets the mesh shrink.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptConfig {
    /// Keeps fully solid regions refined; zero coarsens everything that is
    /// not an interface, one ranks solid interiors as high as interfaces.
    pub solid_bias: f64,
    /// Target element-count ratio per pass (> 0).
    pub growth_rate: f64,
    /// Fraction of elements (highest indicator first) marked for bisection.
    pub refine_fraction: f64,
    /// Fraction of elements (lowest indicator first) marked for merging.
    pub coarsen_fraction: f64,
    /// Coarsening never produces elements below this level.
    pub min_level: u32,
    /// Marking skips elements at or above this level (closure may exceed it).
    pub max_level: u32,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            solid_bias: 0.2,
            growth_rate: 1.3,
            refine_fraction: 0.25,
            coarsen_fraction: 0.25,
            min_level: 0,
            // Four bisection levels quarter the element diameter, which
            // resolves the projected interface band; deeper levels keep
            // sharpening the smoothed-density peaks instead, so every
            // remesh would tighten the size constraint it is measured by
            // and the design would never settle.
            max_level: 4,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.solid_bias) {
            return Err(Error::InvalidParameter(format!(
                "solid_bias must lie in [0, 1], got {}",
                self.solid_bias
            )));
        }
        if !(self.growth_rate > 0.0) || !self.growth_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "growth_rate must be positive, got {}",
                self.growth_rate
            )));
        }
        for (name, f) in [("refine_fraction", self.refine_fraction), ("coarsen_fraction", self.coarsen_fraction)] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidParameter(format!("{name} must lie in [0, 1], got {f}")));
            }
        }
        if self.refine_fraction + self.coarsen_fraction > 1.0 + 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "refine_fraction + coarsen_fraction must not exceed 1, got {} + {}",
                self.refine_fraction, self.coarsen_fraction
            )));
        }
        if self.min_level > self.max_level {
            return Err(Error::InvalidParameter(format!(
                "min_level {} exceeds max_level {}",
                self.min_level, self.max_level
            )));
        }
        Ok(())
    }
}

/// Mutable state threaded through one adaptation pass.
struct Workspace {
    nodes: Vec<[f64; 3]>,
    /// Node -> live forest slots containing it.
    node_elems: Vec<Vec<u32>>,
    /// Midpoints created during this pass, keyed by (min, max) node pair.
    edge_midpoint: HashMap<(usize, usize), usize>,
    live: usize,
    /// Remaining bisection budget; exhaustion means a closure runaway.
    fuel: usize,
}

impl Workspace {
    fn new(mesh: &SimplicialMesh) -> Self {
        let forest = &mesh.forest;
        let mut node_elems: Vec<Vec<u32>> = vec![Vec::new(); mesh.nodes.len()];
        for &slot in &mesh.live {
            for &v in forest.verts(slot) {
                node_elems[v].push(slot);
            }
        }
        Workspace {
            nodes: mesh.nodes.clone(),
            node_elems,
            edge_midpoint: HashMap::new(),
            live: mesh.live.len(),
            fuel: 64 * mesh.live.len() + 65536,
        }
    }

    fn midpoint(&mut self, a: usize, b: usize) -> usize {
        let key = (a.min(b), a.max(b));
        if let Some(&z) = self.edge_midpoint.get(&key) {
            return z;
        }
        let pa = self.nodes[a];
        let pb = self.nodes[b];
        let z = self.nodes.len();
        self.nodes.push([
            0.5 * (pa[0] + pb[0]),
            0.5 * (pa[1] + pb[1]),
            0.5 * (pa[2] + pb[2]),
        ]);
        self.node_elems.push(Vec::new());
        self.edge_midpoint.insert(key, z);
        z
    }

    /// Live elements having both `a` and `b` as vertices, ascending.
    fn elements_with_edge(&self, forest: &Forest, a: usize, b: usize) -> Vec<u32> {
        let mut out: Vec<u32> = self.node_elems[a]
            .iter()
            .copied()
            .filter(|&s| forest.verts(s).contains(&b))
            .collect();
        out.sort_unstable();
        out
    }

    fn incidence_remove(&mut self, forest: &Forest, slot: u32) {
        for &v in forest.verts(slot) {
            let list = &mut self.node_elems[v];
            if let Some(pos) = list.iter().position(|&s| s == slot) {
                list.swap_remove(pos);
            }
        }
    }

    fn incidence_add(&mut self, forest: &Forest, slot: u32) {
        for &v in forest.verts(slot) {
            self.node_elems[v].push(slot);
        }
    }
}

fn edge_key(e: (usize, usize)) -> (usize, usize) {
    (e.0.min(e.1), e.0.max(e.1))
}

/// Bisects `target`, first recursively bisecting any element that shares
/// `target`'s refinement edge under a different refinement edge of its own.
/// All sharers of an edge are always bisected together.
fn make_compatible_and_bisect(forest: &mut Forest, ws: &mut Workspace, target: u32) -> Result<()> {
    let mut stack = vec![target];
    while let Some(&top) = stack.last() {
        if !forest.is_live(top) {
            stack.pop();
            continue;
        }
        let edge = edge_key(forest.refinement_edge(top));
        let sharers = ws.elements_with_edge(forest, edge.0, edge.1);
        debug_assert!(sharers.contains(&top));
        let incompatible: Vec<u32> = sharers
            .iter()
            .copied()
            .filter(|&s| edge_key(forest.refinement_edge(s)) != edge)
            .collect();
        if incompatible.is_empty() {
            if ws.fuel < sharers.len() {
                return Err(Error::MeshInvariant(
                    "bisection closure exceeded its budget; initial mesh tagging is incompatible"
                        .into(),
                ));
            }
            ws.fuel -= sharers.len();
            let z = ws.midpoint(edge.0, edge.1);
            for s in sharers {
                ws.incidence_remove(forest, s);
                let kids = forest.bisect(s, z);
                for k in kids {
                    ws.incidence_add(forest, k);
                }
                ws.live += 1;
            }
            stack.pop();
        } else {
            if ws.fuel < incompatible.len() {
                return Err(Error::MeshInvariant(
                    "bisection compatibility recursion exceeded its budget".into(),
                ));
            }
            ws.fuel -= incompatible.len();
            stack.extend(incompatible);
        }
    }
    Ok(())
}

/// Facet key with sorted nodes; the unused entry stays at usize::MAX in 2D.
fn facet_keys(dim: usize, verts: &[usize]) -> Vec<[usize; 3]> {
    let nv = dim + 1;
    let mut out = Vec::with_capacity(nv);
    for skip in 0..nv {
        let mut f = [usize::MAX; 3];
        let mut w = 0;
        for (i, &v) in verts.iter().enumerate() {
            if i != skip {
                f[w] = v;
                w += 1;
            }
        }
        f[..dim].sort_unstable();
        out.push(f);
    }
    out
}

/// Bisects elements until facet neighbors differ by at most one level.
fn enforce_grading(forest: &mut Forest, ws: &mut Workspace) -> Result<()> {
    let dim = forest.dim();
    for _pass in 0..64 {
        let mut entries: Vec<([usize; 3], u32)> = Vec::new();
        for slot in 0..forest.len() as u32 {
            if !forest.is_live(slot) {
                continue;
            }
            for key in facet_keys(dim, forest.verts(slot)) {
                entries.push((key, slot));
            }
        }
        entries.sort_unstable();

        let mut violators: Vec<u32> = Vec::new();
        let mut i = 0;
        while i < entries.len() {
            let mut j = i + 1;
            while j < entries.len() && entries[j].0 == entries[i].0 {
                j += 1;
            }
            if j - i == 2 {
                let (a, b) = (entries[i].1, entries[i + 1].1);
                let (la, lb) = (forest.level(a), forest.level(b));
                if la + 1 < lb {
                    violators.push(a);
                } else if lb + 1 < la {
                    violators.push(b);
                }
            }
            i = j;
        }
        if violators.is_empty() {
            return Ok(());
        }
        violators.sort_unstable();
        violators.dedup();
        for v in violators {
            if forest.is_live(v) {
                make_compatible_and_bisect(forest, ws, v)?;
            }
        }
    }
    Err(Error::MeshInvariant("level grading did not stabilize".into()))
}

/// Merges marked sibling pairs grouped by bisection vertex.  A group is
/// merged only if every live element touching the vertex is a marked child
/// of that bisection, the merge respects `min_level`, the level grading
/// survives, and the count stays above `lower_cap`.
fn coarsen(
    forest: &mut Forest,
    ws: &mut Workspace,
    marked: &[bool],
    min_level: u32,
    lower_cap: usize,
) {
    let dim = forest.dim();
    // Bisection vertex -> candidate children, deterministic order.
    let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for (slot, &is_marked) in marked.iter().enumerate() {
        let slot = slot as u32;
        if !is_marked || !forest.is_live(slot) {
            continue;
        }
        if forest.parent(slot) == NO_PARENT || forest.level(slot) <= min_level {
            continue;
        }
        if let Some(z) = forest.bisection_vertex(slot) {
            groups.entry(z).or_default().push(slot);
        }
    }

    'groups: for (&z, _candidates) in &groups {
        let incident = ws.node_elems[z].clone();
        if incident.is_empty() {
            continue;
        }
        // Every element around z must be a marked child of the z-bisection.
        for &e in &incident {
            if !marked[e as usize]
                || forest.parent(e) == NO_PARENT
                || forest.level(e) <= min_level
                || forest.bisection_vertex(e) != Some(z)
            {
                continue 'groups;
            }
        }
        let mut by_parent: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
        for &e in &incident {
            by_parent.entry(forest.parent(e)).or_default().push(e);
        }
        if by_parent.values().any(|kids| kids.len() != 2) {
            continue 'groups;
        }
        if ws.live - by_parent.len() < lower_cap {
            continue 'groups;
        }
        // Grading: neighbors of each restored parent may be at most one
        // level finer.  Whole-facet sharers are exactly the post-merge
        // neighbors (facets split by z face other members of this group).
        for (&p, _) in &by_parent {
            let plevel = forest.level(p);
            let pverts: Vec<usize> = forest.verts(p).to_vec();
            for key in facet_keys(dim, &pverts) {
                for &other in &ws.node_elems[key[0]] {
                    let overts = forest.verts(other);
                    if key[..dim].iter().all(|n| overts.contains(n))
                        && forest.level(other) > plevel + 1
                    {
                        continue 'groups;
                    }
                }
            }
        }
        for (&p, kids) in &by_parent {
            ws.incidence_remove(forest, kids[0]);
            ws.incidence_remove(forest, kids[1]);
            forest.merge(p, [kids[0], kids[1]]);
            ws.incidence_add(forest, p);
            ws.live -= 1;
        }
    }
}

/// Drops nodes not referenced by any live element and renumbers the rest in
/// ascending order.  Interior (dead) elements only ever reference nodes
/// their live descendants also reference, so the relabeling covers them.
fn compact_nodes(forest: &Forest, nodes: &[[f64; 3]]) -> (Vec<[f64; 3]>, Vec<usize>) {
    let mut used = vec![false; nodes.len()];
    for slot in 0..forest.len() as u32 {
        if forest.is_live(slot) {
            for &v in forest.verts(slot) {
                used[v] = true;
            }
        }
    }
    let mut map = vec![usize::MAX; nodes.len()];
    let mut out = Vec::new();
    for (old, &keep) in used.iter().enumerate() {
        if keep {
            map[old] = out.len();
            out.push(nodes[old]);
        }
    }
    (out, map)
}

impl SimplicialMesh {
    /// One adaptation pass: bisect the top `refine_fraction` of elements by
    /// indicator, merge the bottom `coarsen_fraction`, keep the mesh
    /// conforming and level-graded, and respect the growth-rate bounds.
    pub fn adapt(&self, indicator: &ElementIndicator, cfg: &AdaptConfig) -> Result<SimplicialMesh> {
        cfg.validate()?;
        indicator.check_bound_to(self)?;

        let n0 = self.element_count();
        let vals = indicator.values();
        let mut forest = self.forest.clone();
        let mut ws = Workspace::new(self);

        // Ties break toward low indices for refinement and high indices for
        // coarsening so the two mark sets stay disjoint.
        let mut refine_order: Vec<u32> = (0..n0 as u32).collect();
        refine_order.sort_by(|&a, &b| {
            vals[b as usize]
                .partial_cmp(&vals[a as usize])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let mut coarsen_order: Vec<u32> = (0..n0 as u32).collect();
        coarsen_order.sort_by(|&a, &b| {
            vals[a as usize]
                .partial_cmp(&vals[b as usize])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.cmp(&a))
        });

        let n_refine = ((cfg.refine_fraction * n0 as f64).round() as usize).min(n0);
        let n_coarsen = ((cfg.coarsen_fraction * n0 as f64).round() as usize).min(n0);
        let upper = if cfg.growth_rate >= 1.0 {
            (n0 as f64 * cfg.growth_rate).floor() as usize
        } else {
            n0
        };
        let lower = (n0 as f64 * cfg.growth_rate.min(1.0 / cfg.growth_rate)).floor() as usize;

        for &idx in refine_order.iter().take(n_refine) {
            let slot = self.live[idx as usize];
            if !forest.is_live(slot) || forest.level(slot) >= cfg.max_level {
                continue;
            }
            if ws.live + 1 > upper {
                break;
            }
            make_compatible_and_bisect(&mut forest, &mut ws, slot)?;
        }
        enforce_grading(&mut forest, &mut ws)?;

        let mut marked = vec![false; forest.len()];
        for &idx in coarsen_order.iter().take(n_coarsen) {
            let slot = self.live[idx as usize];
            if forest.is_live(slot) {
                marked[slot as usize] = true;
            }
        }
        coarsen(&mut forest, &mut ws, &marked, cfg.min_level, lower);

        let (nodes, map) = compact_nodes(&forest, &ws.nodes);
        let forest = forest.compact(&map);
        SimplicialMesh::from_parts(self.dim, nodes, self.domain, forest)
    }

    /// Bisects every element `levels` times; element count scales by
    /// `2^levels`.  Used to build uniform reference meshes.
    pub fn refine_uniform(&self, levels: u32) -> Result<SimplicialMesh> {
        let mut forest = self.forest.clone();
        let mut ws = Workspace::new(self);
        ws.fuel = ws.fuel.max((self.element_count() << (levels as usize + 2)) + 65536);
        for _ in 0..levels {
            let snapshot = forest.live_slots();
            for slot in snapshot {
                if forest.is_live(slot) {
                    make_compatible_and_bisect(&mut forest, &mut ws, slot)?;
                }
            }
        }
        let (nodes, map) = compact_nodes(&forest, &ws.nodes);
        let forest = forest.compact(&map);
        SimplicialMesh::from_parts(self.dim, nodes, self.domain, forest)
    }

    /// Verifies the structural invariants: positive volumes summing to the
    /// domain volume, conforming facets (checked on construction), and
    /// level grading across interior facets.
    pub fn check_invariants(&self) -> Result<()> {
        let vol: f64 = self.elem_volume.iter().sum();
        let rel = (vol - self.domain.volume()).abs() / self.domain.volume();
        if rel > 1e-10 {
            return Err(Error::MeshInvariant(format!(
                "mesh volume {vol} differs from domain volume {} (rel {rel:e})",
                self.domain.volume()
            )));
        }
        let nv = self.dim + 1;
        let mut entries: Vec<([usize; 3], u32)> = Vec::new();
        for e in 0..self.element_count() {
            let verts = &self.elem_verts[e * nv..(e + 1) * nv];
            for key in facet_keys(self.dim, verts) {
                entries.push((key, e as u32));
            }
        }
        entries.sort_unstable();
        let mut i = 0;
        while i < entries.len() {
            let mut j = i + 1;
            while j < entries.len() && entries[j].0 == entries[i].0 {
                j += 1;
            }
            match j - i {
                1 => {} // boundary; tagged during construction
                2 => {
                    let la = self.element_level(entries[i].1 as usize);
                    let lb = self.element_level(entries[i + 1].1 as usize);
                    if la.abs_diff(lb) > 1 {
                        return Err(Error::MeshInvariant(format!(
                            "levels {la} and {lb} meet across facet {:?}",
                            &entries[i].0[..self.dim]
                        )));
                    }
                }
                n => {
                    return Err(Error::MeshInvariant(format!(
                        "facet {:?} shared by {n} elements",
                        &entries[i].0[..self.dim]
                    )))
                }
            }
            i = j;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::DomainBox;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn unit_mesh_2d(cells: usize) -> SimplicialMesh {
        let domain = DomainBox::rect([0.0, 0.0], [1.0, 1.0]).unwrap();
        SimplicialMesh::build_structured(domain, &[cells, cells]).unwrap()
    }

    fn unit_mesh_3d(cells: usize) -> SimplicialMesh {
        let domain = DomainBox::cuboid([0.0; 3], [1.0; 3]).unwrap();
        SimplicialMesh::build_structured(domain, &[cells, cells, cells]).unwrap()
    }

    fn uniform_config(refine: f64, coarsen: f64) -> AdaptConfig {
        AdaptConfig {
            solid_bias: 0.0,
            growth_rate: 8.0,
            refine_fraction: refine,
            coarsen_fraction: coarsen,
            min_level: 0,
            max_level: 30,
        }
    }

    #[test]
    fn uniform_marking_doubles_the_mesh() {
        for mesh in [unit_mesh_2d(3), unit_mesh_3d(2)] {
            let n0 = mesh.element_count();
            let ind = ElementIndicator::new(vec![1.0; n0], &mesh).unwrap();
            let fine = mesh.adapt(&ind, &uniform_config(1.0, 0.0)).unwrap();
            assert_eq!(fine.element_count(), 2 * n0);
            fine.check_invariants().unwrap();
            assert!(fine.version() > mesh.version());
            for e in 0..fine.element_count() {
                assert_eq!(fine.element_level(e), 1);
                assert!(fine.element_parent(e).is_some());
            }
        }
    }

    #[test]
    fn refine_uniform_matches_adapt_with_full_marking() {
        let mesh = unit_mesh_2d(2);
        let fine = mesh.refine_uniform(3).unwrap();
        assert_eq!(fine.element_count(), mesh.element_count() << 3);
        fine.check_invariants().unwrap();
        assert_eq!(fine.max_element_level(), 3);
    }

    #[test]
    fn local_refinement_stays_conforming_and_graded() {
        // Chase a corner: refine only elements touching the origin.
        let mut mesh = unit_mesh_2d(4);
        for _ in 0..6 {
            let vals: Vec<f64> = (0..mesh.element_count())
                .map(|e| {
                    let verts = mesh.element(e);
                    let near = verts.iter().any(|&v| {
                        let p = mesh.node_position(v);
                        p[0].abs() < 1e-12 && p[1].abs() < 1e-12
                    });
                    if near {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let ind = ElementIndicator::new(vals, &mesh).unwrap();
            let cfg = AdaptConfig {
                refine_fraction: 0.05,
                coarsen_fraction: 0.0,
                growth_rate: 2.0,
                ..AdaptConfig::default()
            };
            mesh = mesh.adapt(&ind, &cfg).unwrap();
            mesh.check_invariants().unwrap();
        }
        assert!(mesh.max_element_level() >= 4);
        assert_relative_eq!(mesh.total_volume(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn local_refinement_3d_stays_conforming() {
        let mut mesh = unit_mesh_3d(2);
        for _ in 0..5 {
            let vals: Vec<f64> = (0..mesh.element_count())
                .map(|e| {
                    let verts = mesh.element(e);
                    let near = verts.iter().any(|&v| {
                        let p = mesh.node_position(v);
                        p.iter().take(3).map(|c| c * c).sum::<f64>() < 1e-24
                    });
                    if near {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let ind = ElementIndicator::new(vals, &mesh).unwrap();
            let cfg = AdaptConfig {
                refine_fraction: 0.04,
                coarsen_fraction: 0.0,
                growth_rate: 2.0,
                ..AdaptConfig::default()
            };
            mesh = mesh.adapt(&ind, &cfg).unwrap();
            mesh.check_invariants().unwrap();
        }
        assert!(mesh.max_element_level() >= 3);
    }

    #[test]
    fn full_coarsening_undoes_uniform_refinement() {
        for base in [unit_mesh_2d(3), unit_mesh_3d(2)] {
            let n0 = base.element_count();
            let fine = base.refine_uniform(1).unwrap();
            assert_eq!(fine.element_count(), 2 * n0);
            let ind = ElementIndicator::new(vec![0.0; fine.element_count()], &fine).unwrap();
            let cfg = AdaptConfig {
                refine_fraction: 0.0,
                coarsen_fraction: 1.0,
                growth_rate: 8.0,
                ..AdaptConfig::default()
            };
            let coarse = fine.adapt(&ind, &cfg).unwrap();
            assert_eq!(coarse.element_count(), n0);
            coarse.check_invariants().unwrap();
            assert_eq!(coarse.max_element_level(), 0);
            assert_eq!(coarse.node_count(), base.node_count());
        }
    }

    #[test]
    fn coarsening_respects_min_level() {
        let base = unit_mesh_2d(2);
        let fine = base.refine_uniform(2).unwrap();
        let ind = ElementIndicator::new(vec![0.0; fine.element_count()], &fine).unwrap();
        let cfg = AdaptConfig {
            refine_fraction: 0.0,
            coarsen_fraction: 1.0,
            growth_rate: 16.0,
            min_level: 1,
            ..AdaptConfig::default()
        };
        let coarse = fine.adapt(&ind, &cfg).unwrap();
        coarse.check_invariants().unwrap();
        assert!(coarse.element_count() >= base.element_count() * 2);
        for e in 0..coarse.element_count() {
            assert!(coarse.element_level(e) >= 1);
        }
    }

    #[test]
    fn zero_indicator_never_grows_the_mesh() {
        let mesh = unit_mesh_2d(4);
        let ind = ElementIndicator::new(vec![0.0; mesh.element_count()], &mesh).unwrap();
        let cfg = AdaptConfig { coarsen_fraction: 1.0, refine_fraction: 0.0, ..AdaptConfig::default() };
        let out = mesh.adapt(&ind, &cfg).unwrap();
        assert!(out.element_count() <= mesh.element_count());
        out.check_invariants().unwrap();
    }

    #[test]
    fn growth_rate_bounds_hold_over_random_passes() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for dim in [2usize, 3] {
            let mut mesh = if dim == 2 { unit_mesh_2d(5) } else { unit_mesh_3d(2) };
            for _round in 0..6 {
                let n0 = mesh.element_count();
                let vals: Vec<f64> = (0..n0).map(|_| rng.gen::<f64>()).collect();
                let ind = ElementIndicator::new(vals, &mesh).unwrap();
                let cfg = AdaptConfig {
                    growth_rate: 1.3,
                    refine_fraction: 0.3,
                    coarsen_fraction: 0.3,
                    ..AdaptConfig::default()
                };
                mesh = mesh.adapt(&ind, &cfg).unwrap();
                mesh.check_invariants().unwrap();
                let n1 = mesh.element_count();
                assert!(
                    n1 as f64 <= 1.3 * 1.2 * n0 as f64,
                    "dim {dim}: growth {} -> {} exceeds budget",
                    n0,
                    n1
                );
                assert!(
                    n1 as f64 >= (n0 as f64 / 1.3).floor(),
                    "dim {dim}: shrink {} -> {} below budget",
                    n0,
                    n1
                );
            }
        }
    }

    #[test]
    fn adapt_rejects_stale_indicator_and_bad_config() {
        let mesh = unit_mesh_2d(2);
        let other = unit_mesh_2d(2);
        let ind = ElementIndicator::new(vec![0.0; other.element_count()], &other).unwrap();
        assert!(mesh.adapt(&ind, &AdaptConfig::default()).is_err());

        let ind = ElementIndicator::new(vec![0.0; mesh.element_count()], &mesh).unwrap();
        let bad = AdaptConfig { refine_fraction: 0.7, coarsen_fraction: 0.7, ..AdaptConfig::default() };
        assert!(mesh.adapt(&ind, &bad).is_err());
        let bad = AdaptConfig { growth_rate: 0.0, ..AdaptConfig::default() };
        assert!(mesh.adapt(&ind, &bad).is_err());
    }

    #[test]
    fn adaptation_is_deterministic() {
        let run = || {
            let mut mesh = unit_mesh_2d(4);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
            for _ in 0..4 {
                let vals: Vec<f64> = (0..mesh.element_count()).map(|_| rng.gen()).collect();
                let ind = ElementIndicator::new(vals, &mesh).unwrap();
                mesh = mesh.adapt(&ind, &AdaptConfig::default()).unwrap();
            }
            (
                mesh.element_count(),
                mesh.node_count(),
                mesh.nodes().to_vec(),
                (0..mesh.element_count()).flat_map(|e| mesh.element(e).to_vec()).collect::<Vec<_>>(),
            )
        };
        let a = run();
        let b = run();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
        assert_eq!(a.3, b.3);
    }
}
