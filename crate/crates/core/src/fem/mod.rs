//! Piecewise-linear finite elements on simplicial meshes.
//!
//! Two assemblies live here: density-interpolated linear elasticity (plane
//! stress in 2D, full isotropic elasticity in 3D) and the scalar
//! reaction-diffusion operator used by the smoothing filter.  Both produce
//! symmetric positive definite systems in compressed row form.
//!
//! The element modulus interpolates as E(d) = E0 * (floor + (1 - floor) *
//! d^penalty) from the element-average density d, which keeps the operator
//! definite in void regions.

mod sparse;

pub use sparse::{solve_spd, CsrMatrix};

use crate::error::{Error, Result};
use crate::field::NodalField;
use crate::mesh::{BoundaryTag, SimplicialMesh};

/// Selects boundary facets, either a whole box face or the part of one
/// inside an axis-aligned sub-box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Face(BoundaryTag),
    FaceBox { face: BoundaryTag, lo: [f64; 3], hi: [f64; 3] },
}

impl Region {
    /// Whether boundary facet `f` of `mesh` belongs to this region.  A
    /// facet qualifies when its tag matches and every node lies inside the
    /// sub-box (with a sliver of tolerance for roundoff).
    fn matches(&self, mesh: &SimplicialMesh, f: usize) -> bool {
        let (nodes, tag, _) = mesh.boundary_facet(f);
        match *self {
            Region::Face(t) => tag == t,
            Region::FaceBox { face, lo, hi } => {
                if tag != face {
                    return false;
                }
                let tol = 1e-12 * mesh.domain().diameter();
                nodes.iter().all(|&n| {
                    let p = mesh.node_position(n);
                    (0..3).all(|a| p[a] >= lo[a] - tol && p[a] <= hi[a] + tol)
                })
            }
        }
    }
}

/// Prescribed displacement component on a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DirichletValue {
    Constant(f64),
    /// g(x) = base + grad . x; lets tests prescribe exact affine fields.
    Affine { base: f64, grad: [f64; 3] },
}

impl DirichletValue {
    fn eval(&self, p: [f64; 3]) -> f64 {
        match *self {
            DirichletValue::Constant(c) => c,
            DirichletValue::Affine { base, grad } => {
                base + grad[0] * p[0] + grad[1] * p[1] + grad[2] * p[2]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirichletBc {
    pub region: Region,
    /// Which displacement axes the value applies to.
    pub axes: [bool; 3],
    pub value: DirichletValue,
}

/// Surface traction on a region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TractionValue {
    Constant([f64; 3]),
    /// t(x) = scale * axis x (x - center); a tangential twisting load.
    Twist { center: [f64; 3], axis: [f64; 3], scale: f64 },
}

impl TractionValue {
    fn eval(&self, p: [f64; 3]) -> [f64; 3] {
        match *self {
            TractionValue::Constant(t) => t,
            TractionValue::Twist { center, axis, scale } => {
                let r = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                [
                    scale * (axis[1] * r[2] - axis[2] * r[1]),
                    scale * (axis[2] * r[0] - axis[0] * r[2]),
                    scale * (axis[0] * r[1] - axis[1] * r[0]),
                ]
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TractionBc {
    pub region: Region,
    pub value: TractionValue,
}

/// Material, interpolation, and boundary conditions for one elasticity
/// solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ElasticityProblem {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    /// Density exponent; 1 is the convex relaxation, 3 the usual penalty.
    pub simp_penalty: f64,
    /// Relative modulus kept in void so the operator stays definite.
    pub rho_min: f64,
    pub dirichlet: Vec<DirichletBc>,
    pub loads: Vec<TractionBc>,
}

impl ElasticityProblem {
    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "youngs_modulus must be positive, got {}",
                self.youngs_modulus
            )));
        }
        if !(self.poisson_ratio > 0.0 && self.poisson_ratio < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "poisson_ratio must lie in (0, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        if !(self.simp_penalty >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "simp_penalty must be at least 1, got {}",
                self.simp_penalty
            )));
        }
        if !(self.rho_min > 0.0 && self.rho_min <= 0.1) {
            return Err(Error::InvalidParameter(format!(
                "rho_min must lie in (0, 0.1], got {}",
                self.rho_min
            )));
        }
        if self.dirichlet.is_empty() {
            return Err(Error::InvalidParameter(
                "at least one displacement constraint is required".into(),
            ));
        }
        Ok(())
    }

    /// Relative modulus at element density `d`, in (0, 1].
    pub fn modulus_factor(&self, d: f64) -> f64 {
        self.rho_min + (1.0 - self.rho_min) * d.powf(self.simp_penalty)
    }

    /// d/dd of `modulus_factor`.
    pub fn modulus_factor_deriv(&self, d: f64) -> f64 {
        (1.0 - self.rho_min) * self.simp_penalty * d.powf(self.simp_penalty - 1.0)
    }
}

/// Maps (node, axis) to the equation index; constrained equations keep
/// their slot with an identity row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    pub dofs_per_node: usize,
}

impl DofMap {
    pub fn index(&self, node: usize, axis: usize) -> usize {
        node * self.dofs_per_node + axis
    }
}

/// Assembled symmetric system ready to solve.
#[derive(Debug, Clone)]
pub struct SparseSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_map: DofMap,
    /// True where the equation is a Dirichlet identity row.
    pub constrained: Vec<bool>,
}

impl SparseSystem {
    pub fn solve(&self, tol: f64) -> Result<Vec<f64>> {
        solve_spd(&self.matrix, &self.rhs, tol, None)
    }

    pub fn solve_warm(&self, tol: f64, guess: Option<&[f64]>) -> Result<Vec<f64>> {
        solve_spd(&self.matrix, &self.rhs, tol, guess)
    }
}

/// Shape-function gradients of a simplex; row `i` is the gradient of the
/// barycentric basis function of vertex `i`.
fn shape_gradients(mesh: &SimplicialMesh, e: usize) -> [[f64; 3]; 4] {
    let dim = mesh.dimension();
    let verts = mesh.element(e);
    let p0 = mesh.node_position(verts[0]);
    let mut m = [[0.0f64; 3]; 3];
    for i in 1..=dim {
        let p = mesh.node_position(verts[i]);
        for a in 0..dim {
            m[i - 1][a] = p[a] - p0[a];
        }
    }
    let mut inv = [[0.0f64; 3]; 3];
    if dim == 2 {
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        inv[0][0] = m[1][1] / det;
        inv[0][1] = -m[0][1] / det;
        inv[1][0] = -m[1][0] / det;
        inv[1][1] = m[0][0] / det;
    } else {
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        inv[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) / det;
        inv[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) / det;
        inv[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) / det;
        inv[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) / det;
        inv[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) / det;
        inv[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) / det;
        inv[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) / det;
        inv[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) / det;
        inv[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) / det;
    }
    // With edge rows m, positions satisfy x - p0 = m^T (lambda_1..lambda_d),
    // so gradient of lambda_i is column i-1 of the inverse.  Vertex 0
    // balances the rest because barycentrics sum to one.
    let mut g = [[0.0f64; 3]; 4];
    for i in 1..=dim {
        for a in 0..dim {
            g[i][a] = inv[a][i - 1];
            g[0][a] -= inv[a][i - 1];
        }
    }
    g
}

/// Plane-stress (2D) or isotropic (3D) Lame-style coefficients such that
/// k[(a,i),(b,j)] = V (lam ga_i gb_j + mu ga_j gb_i + mu delta_ij ga.gb).
fn lame_pair(dim: usize, e_mod: f64, nu: f64) -> (f64, f64) {
    let mu = e_mod / (2.0 * (1.0 + nu));
    let lam = if dim == 2 {
        e_mod * nu / (1.0 - nu * nu)
    } else {
        e_mod * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    };
    (lam, mu)
}

/// Dense element stiffness at unit relative modulus, (dim+1)*dim square.
fn element_stiffness(
    mesh: &SimplicialMesh,
    e: usize,
    e_mod: f64,
    nu: f64,
    out: &mut [[f64; 12]; 12],
) {
    let dim = mesh.dimension();
    let nv = dim + 1;
    let g = shape_gradients(mesh, e);
    let vol = mesh.element_volume(e);
    let (lam, mu) = lame_pair(dim, e_mod, nu);
    for a in 0..nv {
        for b in 0..nv {
            let gdot: f64 = (0..dim).map(|k| g[a][k] * g[b][k]).sum();
            for i in 0..dim {
                for j in 0..dim {
                    let mut v = lam * g[a][i] * g[b][j] + mu * g[a][j] * g[b][i];
                    if i == j {
                        v += mu * gdot;
                    }
                    out[a * dim + i][b * dim + j] = vol * v;
                }
            }
        }
    }
}

fn worker_count() -> usize {
    std::env::var("LAMINA_WORKERS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&w| w >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(8)
        })
}

/// Runs `work` over contiguous element chunks and concatenates the partial
/// triplet lists in chunk order, so the combined stream never depends on
/// thread scheduling.
fn assemble_triplets<F>(element_count: usize, workers: usize, work: F) -> Vec<(u32, u32, f64)>
where
    F: Fn(std::ops::Range<usize>, &mut Vec<(u32, u32, f64)>) + Sync,
{
    let workers = workers.clamp(1, element_count.max(1));
    if workers == 1 {
        let mut t = Vec::new();
        work(0..element_count, &mut t);
        return t;
    }
    let chunk = element_count.div_ceil(workers);
    let mut parts: Vec<Vec<(u32, u32, f64)>> = Vec::with_capacity(workers);
    std::thread::scope(|scope| {
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let lo = w * chunk;
            let hi = ((w + 1) * chunk).min(element_count);
            let work = &work;
            handles.push(scope.spawn(move || {
                let mut t = Vec::new();
                if lo < hi {
                    work(lo..hi, &mut t);
                }
                t
            }));
        }
        for h in handles {
            parts.push(h.join().expect("assembly worker panicked"));
        }
    });
    let total = parts.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    for p in parts {
        out.extend(p);
    }
    out
}

/// Constrained displacement components and their prescribed values.
fn resolve_dirichlet(
    mesh: &SimplicialMesh,
    problem: &ElasticityProblem,
) -> (Vec<bool>, Vec<f64>) {
    let dim = mesh.dimension();
    let n_dof = mesh.node_count() * dim;
    let mut constrained = vec![false; n_dof];
    let mut value = vec![0.0; n_dof];
    for bc in &problem.dirichlet {
        for f in 0..mesh.boundary_facet_count() {
            if !bc.region.matches(mesh, f) {
                continue;
            }
            let (nodes, _, _) = mesh.boundary_facet(f);
            for &n in nodes {
                let g = bc.value.eval(mesh.node_position(n));
                for axis in 0..dim {
                    if bc.axes[axis] {
                        constrained[n * dim + axis] = true;
                        value[n * dim + axis] = g;
                    }
                }
            }
        }
    }
    (constrained, value)
}

/// Nodal force vector from the surface tractions, integrated with the
/// consistent facet mass matrix (exact for affine tractions).
fn traction_rhs(mesh: &SimplicialMesh, problem: &ElasticityProblem) -> Vec<f64> {
    let dim = mesh.dimension();
    let mut rhs = vec![0.0; mesh.node_count() * dim];
    for load in &problem.loads {
        for f in 0..mesh.boundary_facet_count() {
            if !load.region.matches(mesh, f) {
                continue;
            }
            let (nodes, _, _) = mesh.boundary_facet(f);
            let measure = mesh.boundary_facet_measure(f);
            let nn = nodes.len();
            // Facet mass: measure * (1 + delta_ij) / (nn * (nn + 1)).
            let scale = measure / (nn * (nn + 1)) as f64;
            let t: Vec<[f64; 3]> =
                nodes.iter().map(|&n| load.value.eval(mesh.node_position(n))).collect();
            for (i, &n) in nodes.iter().enumerate() {
                for axis in 0..dim {
                    let mut s = 0.0;
                    for (j, tj) in t.iter().enumerate() {
                        let w = if i == j { 2.0 } else { 1.0 };
                        s += w * tj[axis];
                    }
                    rhs[n * dim + axis] += scale * s;
                }
            }
        }
    }
    rhs
}

/// Assembles the density-interpolated elasticity system with Dirichlet
/// conditions folded in symmetrically: constrained equations become
/// identity rows and their coupling moves to the right-hand side.
pub fn assemble_elasticity(
    mesh: &SimplicialMesh,
    rho: &NodalField,
    problem: &ElasticityProblem,
) -> Result<SparseSystem> {
    problem.validate()?;
    rho.check_bound_to(mesh)?;
    for &v in rho.values() {
        if !(-1e-12..=1.0 + 1e-12).contains(&v) {
            return Err(Error::InvalidField(format!("density value {v} outside [0, 1]")));
        }
    }
    let dim = mesh.dimension();
    let n_dof = mesh.node_count() * dim;
    let (constrained, prescribed) = resolve_dirichlet(mesh, problem);
    let n_constrained = constrained.iter().filter(|&&c| c).count();
    if n_constrained < dim * (dim + 1) / 2 {
        return Err(Error::Assembly(format!(
            "{n_constrained} constrained components cannot remove {} rigid modes",
            dim * (dim + 1) / 2
        )));
    }

    let mut rhs = traction_rhs(mesh, problem);
    let means = mesh.element_means(rho)?;

    let constrained_ref = &constrained;
    let means_ref = &means;
    let mut triplets = assemble_triplets(mesh.element_count(), worker_count(), |range, out| {
        let mut k = [[0.0f64; 12]; 12];
        for e in range {
            element_stiffness(mesh, e, problem.youngs_modulus, problem.poisson_ratio, &mut k);
            let factor = problem.modulus_factor(means_ref[e]);
            let verts = mesh.element(e);
            for (a, &na) in verts.iter().enumerate() {
                for i in 0..dim {
                    let row = na * dim + i;
                    if constrained_ref[row] {
                        continue;
                    }
                    for (b, &nb) in verts.iter().enumerate() {
                        for j in 0..dim {
                            let col = nb * dim + j;
                            let v = factor * k[a * dim + i][b * dim + j];
                            if !constrained_ref[col] {
                                out.push((row as u32, col as u32, v));
                            }
                        }
                    }
                }
            }
        }
    });

    // Coupling between free and constrained components: accumulate
    // K_fc * g_c onto the right-hand side in element order.
    {
        let mut k = [[0.0f64; 12]; 12];
        for e in 0..mesh.element_count() {
            let verts = mesh.element(e);
            let any = verts
                .iter()
                .any(|&n| (0..dim).any(|i| constrained[n * dim + i]));
            if !any {
                continue;
            }
            element_stiffness(mesh, e, problem.youngs_modulus, problem.poisson_ratio, &mut k);
            let factor = problem.modulus_factor(means[e]);
            for (a, &na) in verts.iter().enumerate() {
                for i in 0..dim {
                    let row = na * dim + i;
                    if constrained[row] {
                        continue;
                    }
                    for (b, &nb) in verts.iter().enumerate() {
                        for j in 0..dim {
                            let col = nb * dim + j;
                            if constrained[col] && prescribed[col] != 0.0 {
                                rhs[row] -=
                                    factor * k[a * dim + i][b * dim + j] * prescribed[col];
                            }
                        }
                    }
                }
            }
        }
    }

    for (dof, &c) in constrained.iter().enumerate() {
        if c {
            triplets.push((dof as u32, dof as u32, 1.0));
            rhs[dof] = prescribed[dof];
        }
    }
    let matrix = CsrMatrix::from_triplets(n_dof, &mut triplets);
    Ok(SparseSystem { matrix, rhs, dof_map: DofMap { dofs_per_node: dim }, constrained })
}

/// Assembles the reaction-diffusion pair (A, M) with A = r^2 K + M, where K
/// is the scalar stiffness and M the consistent mass matrix.  Natural
/// boundary conditions; no constraints.  The right-hand side for smoothing
/// an input field g is M g.
pub fn assemble_helmholtz(mesh: &SimplicialMesh, radius: f64) -> Result<(CsrMatrix, CsrMatrix)> {
    if !(radius >= 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "filter radius must be non-negative, got {radius}"
        )));
    }
    let dim = mesh.dimension();
    let nv = dim + 1;
    let n = mesh.node_count();
    let r2 = radius * radius;
    let workers = worker_count();

    let a_triplets = assemble_triplets(mesh.element_count(), workers, |range, out| {
        for e in range {
            let g = shape_gradients(mesh, e);
            let vol = mesh.element_volume(e);
            let mass = vol / ((nv * (nv + 1)) as f64);
            let verts = mesh.element(e);
            for (a, &na) in verts.iter().enumerate() {
                for (b, &nb) in verts.iter().enumerate() {
                    let gdot: f64 = (0..dim).map(|k| g[a][k] * g[b][k]).sum();
                    let m = mass * if a == b { 2.0 } else { 1.0 };
                    out.push((na as u32, nb as u32, r2 * vol * gdot + m));
                }
            }
        }
    });
    let m_triplets = assemble_triplets(mesh.element_count(), workers, |range, out| {
        for e in range {
            let vol = mesh.element_volume(e);
            let mass = vol / ((nv * (nv + 1)) as f64);
            let verts = mesh.element(e);
            for (a, &na) in verts.iter().enumerate() {
                for (b, &nb) in verts.iter().enumerate() {
                    let m = mass * if a == b { 2.0 } else { 1.0 };
                    out.push((na as u32, nb as u32, m));
                }
            }
        }
    });
    let mut a_triplets = a_triplets;
    let mut m_triplets = m_triplets;
    Ok((CsrMatrix::from_triplets(n, &mut a_triplets), CsrMatrix::from_triplets(n, &mut m_triplets)))
}

/// Compliance F = (1/2) u^T K(rho) u together with the per-element strain
/// energies at unit relative modulus, which sensitivities reuse.
pub fn compliance_and_strain_energy(
    mesh: &SimplicialMesh,
    rho: &NodalField,
    problem: &ElasticityProblem,
    u: &[f64],
) -> Result<(f64, Vec<f64>)> {
    rho.check_bound_to(mesh)?;
    let dim = mesh.dimension();
    if u.len() != mesh.node_count() * dim {
        return Err(Error::InvalidField(format!(
            "displacement vector has {} entries for {} components",
            u.len(),
            mesh.node_count() * dim
        )));
    }
    let means = mesh.element_means(rho)?;
    let nv = dim + 1;
    let mut k = [[0.0f64; 12]; 12];
    let mut unit_energy = Vec::with_capacity(mesh.element_count());
    let mut total = 0.0;
    for e in 0..mesh.element_count() {
        element_stiffness(mesh, e, problem.youngs_modulus, problem.poisson_ratio, &mut k);
        let verts = mesh.element(e);
        let mut ue = [0.0f64; 12];
        for (a, &n) in verts.iter().enumerate() {
            for i in 0..dim {
                ue[a * dim + i] = u[n * dim + i];
            }
        }
        let nd = nv * dim;
        let mut w = 0.0;
        for r in 0..nd {
            let mut s = 0.0;
            for c in 0..nd {
                s += k[r][c] * ue[c];
            }
            w += ue[r] * s;
        }
        let w = 0.5 * w;
        unit_energy.push(w);
        total += problem.modulus_factor(means[e]) * w;
    }
    Ok((total, unit_energy))
}
