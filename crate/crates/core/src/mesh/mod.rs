//! Conforming simplicial meshes over box domains, with local adaptation.
//!
//! Meshes are built by Kuhn subdivision of a structured grid (two triangles
//! per cell in 2D, six tetrahedra per cell in 3D) and refined by edge
//! bisection in the Maubach vertex ordering, the n-dimensional form of
//! newest-vertex bisection.  Every element remembers its generation order,
//! level and parent, which is what makes local coarsening possible: two
//! sibling leaves can be merged back into their parent when the bisection
//! vertex between them is no longer needed by any other element.
//!
//! Invariants maintained across every adaptation pass:
//!
//! * the mesh is conforming: each interior facet is shared by exactly two
//!   elements, each boundary facet by one and it lies on a box face;
//! * levels of facet neighbors differ by at most one;
//! * all elements have positive volume in their public vertex order;
//! * total volume equals the domain volume.

mod adapt;
mod forest;
mod transfer;

pub use adapt::AdaptConfig;
pub use transfer::transfer_field;

use crate::error::{Error, Result};
use crate::field::NodalField;
use forest::{Forest, NO_PARENT};
use std::sync::atomic::{AtomicU64, Ordering};

/// Relative tolerance for matching nodes to box faces.
const FACE_TOL_REL: f64 = 1e-9;

/// Relative tolerance below which an element counts as degenerate.
const DEGENERATE_VOL_REL: f64 = 1e-14;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Axis-aligned box domain in 2 or 3 dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainBox {
    lo: [f64; 3],
    hi: [f64; 3],
    dim: usize,
}

impl DomainBox {
    /// 2D rectangle `[lo, hi]`; the z extent is unused.
    pub fn rect(lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        DomainBox::checked([lo[0], lo[1], 0.0], [hi[0], hi[1], 0.0], 2)
    }

    /// 3D cuboid `[lo, hi]`.
    pub fn cuboid(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        DomainBox::checked(lo, hi, 3)
    }

    fn checked(lo: [f64; 3], hi: [f64; 3], dim: usize) -> Result<Self> {
        for a in 0..dim {
            if !(hi[a] - lo[a] > 0.0) || !lo[a].is_finite() || !hi[a].is_finite() {
                return Err(Error::InvalidDomain(format!(
                    "axis {a} has empty or non-finite extent [{}, {}]",
                    lo[a], hi[a]
                )));
            }
        }
        Ok(DomainBox { lo, hi, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self) -> [f64; 3] {
        self.lo
    }

    pub fn hi(&self) -> [f64; 3] {
        self.hi
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.extent(a)).product()
    }

    /// Diagonal length; the length scale for "outside the mesh" tolerances.
    pub fn diameter(&self) -> f64 {
        (0..self.dim).map(|a| self.extent(a).powi(2)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, p: [f64; 3], tol: f64) -> bool {
        (0..self.dim).all(|a| p[a] >= self.lo[a] - tol && p[a] <= self.hi[a] + tol)
    }
}

/// Identifies one of the (2 * dim) box faces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BoundaryTag {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl BoundaryTag {
    pub const ALL: [BoundaryTag; 6] = [
        BoundaryTag::XMin,
        BoundaryTag::XMax,
        BoundaryTag::YMin,
        BoundaryTag::YMax,
        BoundaryTag::ZMin,
        BoundaryTag::ZMax,
    ];

    pub fn axis(self) -> usize {
        match self {
            BoundaryTag::XMin | BoundaryTag::XMax => 0,
            BoundaryTag::YMin | BoundaryTag::YMax => 1,
            BoundaryTag::ZMin | BoundaryTag::ZMax => 2,
        }
    }

    pub fn is_min(self) -> bool {
        matches!(self, BoundaryTag::XMin | BoundaryTag::YMin | BoundaryTag::ZMin)
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryTag::XMin => "xmin",
            BoundaryTag::XMax => "xmax",
            BoundaryTag::YMin => "ymin",
            BoundaryTag::YMax => "ymax",
            BoundaryTag::ZMin => "zmin",
            BoundaryTag::ZMax => "zmax",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        BoundaryTag::ALL.into_iter().find(|t| t.name() == s)
    }

    /// Coordinate of the face plane within `domain`.
    pub fn plane(self, domain: &DomainBox) -> f64 {
        if self.is_min() {
            domain.lo[self.axis()]
        } else {
            domain.hi[self.axis()]
        }
    }
}

/// Per-element scalar used to drive adaptation, bound to a mesh version.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementIndicator {
    values: Vec<f64>,
    mesh_version: u64,
}

impl ElementIndicator {
    pub fn new(values: Vec<f64>, mesh: &SimplicialMesh) -> Result<Self> {
        if values.len() != mesh.element_count() {
            return Err(Error::InvalidField(format!(
                "indicator has {} values but mesh has {} elements",
                values.len(),
                mesh.element_count()
            )));
        }
        Ok(ElementIndicator { values, mesh_version: mesh.version() })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mesh_version(&self) -> u64 {
        self.mesh_version
    }

    pub fn check_bound_to(&self, mesh: &SimplicialMesh) -> Result<()> {
        if self.mesh_version != mesh.version() {
            return Err(Error::StaleField { bound: self.mesh_version, current: mesh.version() });
        }
        Ok(())
    }
}

/// A conforming simplicial mesh of a box domain.
///
/// Node coordinates always carry three components; the z component is zero
/// in 2D.  Element vertex tuples exposed through [`Self::element`] are
/// orientation-corrected so the signed volume is positive.
#[derive(Debug, Clone)]
pub struct SimplicialMesh {
    dim: usize,
    nodes: Vec<[f64; 3]>,
    domain: DomainBox,
    forest: Forest,
    /// Forest slots of the current leaves, ascending.
    live: Vec<u32>,
    /// Public vertex tuples, stride dim + 1, positively oriented.
    elem_verts: Vec<usize>,
    elem_volume: Vec<f64>,
    /// Boundary facet nodes, stride dim, sorted within each facet.
    boundary_nodes: Vec<usize>,
    boundary_tag: Vec<BoundaryTag>,
    /// Owning element (public index) of each boundary facet.
    boundary_owner: Vec<usize>,
    version: u64,
}

impl SimplicialMesh {
    /// Builds the Kuhn triangulation of a structured grid over `domain`.
    ///
    /// `cells` gives the cell count per axis and must match the domain
    /// dimension.  Every cell is split along the same diagonal direction,
    /// which is what makes later bisection closures terminate.
    pub fn build_structured(domain: DomainBox, cells: &[usize]) -> Result<Self> {
        let dim = domain.dim();
        if cells.len() != dim {
            return Err(Error::InvalidDomain(format!(
                "domain is {}-dimensional but {} cell counts were given",
                dim,
                cells.len()
            )));
        }
        if cells.iter().any(|&c| c == 0) {
            return Err(Error::InvalidDomain("cell counts must be positive".into()));
        }

        let n = [cells[0] + 1, cells.get(1).copied().unwrap_or(0) + 1, if dim == 3 { cells[2] + 1 } else { 1 }];
        let node_index = |i: usize, j: usize, k: usize| i + n[0] * (j + n[1] * k);

        let mut nodes = Vec::with_capacity(n[0] * n[1] * n[2]);
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let f = |idx: usize, count: usize, axis: usize| {
                        // Endpoint-exact linear spacing.
                        if idx == count - 1 {
                            domain.hi[axis]
                        } else {
                            domain.lo[axis] + domain.extent(axis) * (idx as f64) / ((count - 1) as f64)
                        }
                    };
                    let x = f(i, n[0], 0);
                    let y = f(j, n[1], 1);
                    let z = if dim == 3 { f(k, n[2], 2) } else { 0.0 };
                    nodes.push([x, y, z]);
                }
            }
        }

        let mut forest = Forest::new(dim);
        if dim == 2 {
            for j in 0..cells[1] {
                for i in 0..cells[0] {
                    let v00 = node_index(i, j, 0);
                    let v10 = node_index(i + 1, j, 0);
                    let v01 = node_index(i, j + 1, 0);
                    let v11 = node_index(i + 1, j + 1, 0);
                    // Both triangles run from the low corner to the high
                    // corner, sharing the cell diagonal as refinement edge.
                    forest.push_root(&[v00, v10, v11]);
                    forest.push_root(&[v00, v01, v11]);
                }
            }
        } else {
            const PERMS: [[usize; 3]; 6] =
                [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            for k in 0..cells[2] {
                for j in 0..cells[1] {
                    for i in 0..cells[0] {
                        let corner = [i, j, k];
                        for perm in PERMS {
                            let mut c = corner;
                            let mut verts = [0usize; 4];
                            verts[0] = node_index(c[0], c[1], c[2]);
                            for (step, &axis) in perm.iter().enumerate() {
                                c[axis] += 1;
                                verts[step + 1] = node_index(c[0], c[1], c[2]);
                            }
                            forest.push_root(&verts);
                        }
                    }
                }
            }
        }

        SimplicialMesh::from_parts(dim, nodes, domain, forest)
    }

    /// Assembles the public view from a forest; shared by construction and
    /// adaptation.  Verifies conformity and tags boundary facets.
    pub(crate) fn from_parts(
        dim: usize,
        nodes: Vec<[f64; 3]>,
        domain: DomainBox,
        forest: Forest,
    ) -> Result<Self> {
        let live = forest.live_slots();
        if live.is_empty() {
            return Err(Error::MeshInvariant("mesh has no live elements".into()));
        }

        let nv = dim + 1;
        let mut elem_verts = Vec::with_capacity(live.len() * nv);
        let mut elem_volume = Vec::with_capacity(live.len());
        let min_vol = DEGENERATE_VOL_REL * domain.volume() / live.len() as f64;
        for &slot in &live {
            let mut v: [usize; 4] = [0; 4];
            v[..nv].copy_from_slice(forest.verts(slot));
            let mut vol = signed_volume(dim, &nodes, &v[..nv]);
            if vol < 0.0 {
                v.swap(nv - 2, nv - 1);
                vol = -vol;
            }
            if !(vol > min_vol) {
                return Err(Error::MeshInvariant(format!(
                    "element with vertices {:?} is degenerate (volume {vol:e})",
                    &v[..nv]
                )));
            }
            elem_verts.extend_from_slice(&v[..nv]);
            elem_volume.push(vol);
        }

        let mut mesh = SimplicialMesh {
            dim,
            nodes,
            domain,
            forest,
            live,
            elem_verts,
            elem_volume,
            boundary_nodes: Vec::new(),
            boundary_tag: Vec::new(),
            boundary_owner: Vec::new(),
            version: fresh_version(),
        };
        mesh.extract_boundary()?;
        Ok(mesh)
    }

    /// Finds all once-shared facets, checks they lie on box faces and tags
    /// them.  A once-shared facet away from the boundary means a hanging
    /// node, so this doubles as a conformity check.
    fn extract_boundary(&mut self) -> Result<()> {
        use std::collections::HashMap;

        let dim = self.dim;
        let nv = dim + 1;
        let mut counts: HashMap<[usize; 3], u32> = HashMap::with_capacity(self.live.len() * nv);
        let facet_of = |verts: &[usize], skip: usize| {
            let mut f = [usize::MAX; 3];
            let mut w = 0;
            for (i, &v) in verts.iter().enumerate() {
                if i != skip {
                    f[w] = v;
                    w += 1;
                }
            }
            f[..dim].sort_unstable();
            f
        };

        for e in 0..self.live.len() {
            let verts = &self.elem_verts[e * nv..(e + 1) * nv];
            for skip in 0..nv {
                *counts.entry(facet_of(verts, skip)).or_insert(0) += 1;
            }
        }

        self.boundary_nodes.clear();
        self.boundary_tag.clear();
        self.boundary_owner.clear();
        for e in 0..self.live.len() {
            let verts = &self.elem_verts[e * nv..(e + 1) * nv];
            for skip in 0..nv {
                let f = facet_of(verts, skip);
                match counts.get(&f) {
                    Some(1) => {
                        let tag = self.classify_face(&f[..dim]).ok_or_else(|| {
                            Error::MeshInvariant(format!(
                                "facet {:?} is unshared but lies on no box face (hanging node?)",
                                &f[..dim]
                            ))
                        })?;
                        self.boundary_nodes.extend_from_slice(&f[..dim]);
                        self.boundary_tag.push(tag);
                        self.boundary_owner.push(e);
                    }
                    Some(2) => {}
                    other => {
                        return Err(Error::MeshInvariant(format!(
                            "facet {:?} is shared by {:?} elements",
                            &f[..dim],
                            other
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    fn classify_face(&self, facet: &[usize]) -> Option<BoundaryTag> {
        for tag in &BoundaryTag::ALL[..2 * self.dim] {
            let axis = tag.axis();
            let plane = tag.plane(&self.domain);
            let tol = FACE_TOL_REL * self.domain.extent(axis);
            if facet.iter().all(|&nid| (self.nodes[nid][axis] - plane).abs() <= tol) {
                return Some(*tag);
            }
        }
        None
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn domain(&self) -> &DomainBox {
        &self.domain
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_position(&self, node: usize) -> [f64; 3] {
        self.nodes[node]
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn element_count(&self) -> usize {
        self.live.len()
    }

    /// Positively oriented vertex tuple of element `e` (dim + 1 nodes).
    pub fn element(&self, e: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.elem_verts[e * nv..(e + 1) * nv]
    }

    pub fn element_volume(&self, e: usize) -> f64 {
        self.elem_volume[e]
    }

    pub fn element_level(&self, e: usize) -> u32 {
        self.forest.level(self.live[e])
    }

    /// Stable identifier of element `e`; survives adaptation of other parts
    /// of the mesh but not of the element itself.
    pub fn element_uid(&self, e: usize) -> u64 {
        self.forest.uid(self.live[e])
    }

    /// Stable identifier of the parent element, if this element was created
    /// by bisection.
    pub fn element_parent(&self, e: usize) -> Option<u64> {
        let p = self.forest.parent(self.live[e]);
        if p == NO_PARENT {
            None
        } else {
            Some(self.forest.uid(p))
        }
    }

    /// Longest edge of element `e`.
    pub fn element_diameter(&self, e: usize) -> f64 {
        let verts = self.element(e);
        let mut best = 0.0f64;
        for i in 0..verts.len() {
            for j in (i + 1)..verts.len() {
                let a = self.nodes[verts[i]];
                let b = self.nodes[verts[j]];
                let d2 = (0..self.dim).map(|ax| (a[ax] - b[ax]).powi(2)).sum::<f64>();
                best = best.max(d2);
            }
        }
        best.sqrt()
    }

    pub fn min_element_diameter(&self) -> f64 {
        (0..self.element_count())
            .map(|e| self.element_diameter(e))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_element_level(&self) -> u32 {
        (0..self.element_count()).map(|e| self.element_level(e)).max().unwrap_or(0)
    }

    pub fn total_volume(&self) -> f64 {
        self.elem_volume.iter().sum()
    }

    pub fn boundary_facet_count(&self) -> usize {
        self.boundary_tag.len()
    }

    /// Nodes (sorted, dim of them), tag and owning element of facet `f`.
    pub fn boundary_facet(&self, f: usize) -> (&[usize], BoundaryTag, usize) {
        let d = self.dim;
        (&self.boundary_nodes[f * d..(f + 1) * d], self.boundary_tag[f], self.boundary_owner[f])
    }

    /// Length (2D) or area (3D) of boundary facet `f`.
    pub fn boundary_facet_measure(&self, f: usize) -> f64 {
        let d = self.dim;
        let n = &self.boundary_nodes[f * d..(f + 1) * d];
        let a = self.nodes[n[0]];
        let b = self.nodes[n[1]];
        if d == 2 {
            ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt()
        } else {
            let c = self.nodes[n[2]];
            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
            let cx = u[1] * v[2] - u[2] * v[1];
            let cy = u[2] * v[0] - u[0] * v[2];
            let cz = u[0] * v[1] - u[1] * v[0];
            0.5 * (cx * cx + cy * cy + cz * cz).sqrt()
        }
    }

    /// Centroid of boundary facet `f`.
    pub fn boundary_facet_centroid(&self, f: usize) -> [f64; 3] {
        let d = self.dim;
        let n = &self.boundary_nodes[f * d..(f + 1) * d];
        let mut c = [0.0; 3];
        for &nid in n {
            for a in 0..3 {
                c[a] += self.nodes[nid][a];
            }
        }
        for a in &mut c {
            *a /= d as f64;
        }
        c
    }

    /// Nodal share of the surrounding element volumes (the diagonal of the
    /// lumped mass matrix).  Sums to the domain volume.
    pub fn lumped_node_volumes(&self) -> Vec<f64> {
        let nv = self.dim + 1;
        let mut m = vec![0.0; self.nodes.len()];
        for e in 0..self.element_count() {
            let share = self.elem_volume[e] / nv as f64;
            for &v in self.element(e) {
                m[v] += share;
            }
        }
        m
    }

    /// Per-element mean of a nodal field.
    pub fn element_means(&self, field: &NodalField) -> Result<Vec<f64>> {
        field.check_bound_to(self)?;
        let nv = self.dim + 1;
        let vals = field.values();
        Ok((0..self.element_count())
            .map(|e| self.element(e).iter().map(|&v| vals[v]).sum::<f64>() / nv as f64)
            .collect())
    }

    /// Refinement indicator from a density field: element densities near
    /// one half (material interfaces) score highest, fully void regions
    /// score zero, and `solid_bias` keeps fully solid regions from being
    /// coarsened away.  Values are rescaled to [0, 1] by the maximum the
    /// formula can attain over densities in [0, 1].
    pub fn error_indicator(&self, rho: &NodalField, solid_bias: f64) -> Result<ElementIndicator> {
        if !(0.0..=1.0).contains(&solid_bias) {
            return Err(Error::InvalidParameter(format!(
                "solid_bias must lie in [0, 1], got {solid_bias}"
            )));
        }
        let means = self.element_means(rho)?;
        // Peak of rho * (1 - rho + a) over [0, 1] sits at rho = (1 + a) / 2.
        let peak = (1.0 + solid_bias).powi(2) / 4.0;
        let values = means
            .into_iter()
            .map(|m| {
                let m = m.clamp(0.0, 1.0);
                (m * (1.0 - m + solid_bias) / peak).clamp(0.0, 1.0)
            })
            .collect();
        ElementIndicator::new(values, self)
    }
}

/// Signed volume of a simplex given in `verts` order.
pub(crate) fn signed_volume(dim: usize, nodes: &[[f64; 3]], verts: &[usize]) -> f64 {
    let a = nodes[verts[0]];
    if dim == 2 {
        let b = nodes[verts[1]];
        let c = nodes[verts[2]];
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
    } else {
        let b = nodes[verts[1]];
        let c = nodes[verts[2]];
        let d = nodes[verts[3]];
        let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
        let w = [d[0] - a[0], d[1] - a[1], d[2] - a[2]];
        (u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
            + u[2] * (v[0] * w[1] - v[1] * w[0]))
            / 6.0
    }
}
