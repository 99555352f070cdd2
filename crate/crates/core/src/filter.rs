//! Length-scale smoothing of nodal fields by a screened diffusion solve.
//!
//! Smoothing a field `g` means solving `(r^2 K + M) x = M g` on the current
//! mesh, where `K` and `M` are the scalar stiffness and mass matrices and
//! `r` is the smoothing radius.  The solve uses natural boundary conditions,
//! so mass is conserved and constants pass through unchanged.  The radius is
//! tied to a physical feature diameter in one of two ways: a disc or rod of
//! diameter `d` is resolved by `r = d / (2 * sqrt(3))`, while oversize
//! detection uses `r = d / (2 ln(1 / (1 - threshold)))` so the smoothed
//! response of a member of diameter `d` peaks exactly at the threshold.
//!
//! [`FilterOperator`] caches the assembled matrices for one (mesh version,
//! radius) pair.  It refuses fields bound to any other mesh version, and it
//! must be rebuilt after the mesh adapts.

use crate::error::{Error, Result};
use crate::fem::{assemble_helmholtz, solve_spd, CsrMatrix};
use crate::field::NodalField;
use crate::mesh::SimplicialMesh;

/// Default relative residual tolerance for smoothing solves.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-8;

/// Converts a physical feature diameter to the smoothing radius that
/// resolves it: `r = d / (2 * sqrt(3))`.
pub fn radius_from_diameter(diameter: f64) -> Result<f64> {
    if !(diameter > 0.0) || !diameter.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "feature diameter must be positive and finite, got {diameter}"
        )));
    }
    Ok(diameter / (2.0 * 3.0_f64.sqrt()))
}

/// Converts a maximum feature diameter to the detection radius at which a
/// solid strip of exactly that width peaks at `level`.
///
/// The screened-diffusion response of an infinite solid strip of width `d`
/// reaches `1 - exp(-d / (2 r))` at its centerline, so the radius
/// `r = d / (2 ln(1 / (1 - level)))` puts the centerline response of a
/// member of width `d` exactly at `level`.  Calibrating `level` to the
/// detector's onset makes the detector fire precisely for members wider
/// than `d`.
pub fn detection_radius_from_diameter(diameter: f64, level: f64) -> Result<f64> {
    if !(diameter > 0.0) || !diameter.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "feature diameter must be positive and finite, got {diameter}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "detection level must lie in (0, 1), got {level}"
        )));
    }
    Ok(diameter / (-2.0 * (1.0 - level).ln()))
}

/// Target feature-size band for a design: the smallest member diameter the
/// design must resolve and the largest diameter it may contain.
///
/// Radii are derived on demand and never stored, so the two diameters remain
/// the single source of truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureSizeSpec {
    /// Smallest allowed member diameter (controls the design smoothing radius).
    pub min_diameter: f64,
    /// Largest allowed member diameter (controls the detection smoothing radius).
    pub max_diameter: f64,
}

impl FeatureSizeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_diameter > 0.0) || !self.min_diameter.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "minimum feature diameter must be positive and finite, got {}",
                self.min_diameter
            )));
        }
        if !(self.max_diameter > self.min_diameter) || !self.max_diameter.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "maximum feature diameter must exceed the minimum ({} <= {})",
                self.max_diameter, self.min_diameter
            )));
        }
        Ok(())
    }

    /// Smoothing radius that resolves the minimum diameter.
    pub fn min_radius(&self) -> f64 {
        self.min_diameter / (2.0 * 3.0_f64.sqrt())
    }

    /// Detection radius at which a member of the maximum diameter peaks
    /// exactly at `level` after smoothing.
    pub fn detection_radius(&self, level: f64) -> Result<f64> {
        detection_radius_from_diameter(self.max_diameter, level)
    }
}

/// A smoothing operator assembled for one mesh version and radius.
///
/// Holds the system matrix `A = r^2 K + M` and the mass matrix `M`.  All
/// applications are solves against `A`, warm-started from the input field,
/// so fields that already satisfy the equation (constants, and any field at
/// radius zero) pass through exactly.
#[derive(Debug, Clone)]
pub struct FilterOperator {
    system: CsrMatrix,
    mass: CsrMatrix,
    radius: f64,
    mesh_version: u64,
    solve_tol: f64,
}

impl FilterOperator {
    /// Assembles the operator on `mesh` for the given radius.
    pub fn new(mesh: &SimplicialMesh, radius: f64) -> Result<Self> {
        let (system, mass) = assemble_helmholtz(mesh, radius)?;
        Ok(FilterOperator {
            system,
            mass,
            radius,
            mesh_version: mesh.version(),
            solve_tol: DEFAULT_SOLVE_TOL,
        })
    }

    /// Replaces the default solve tolerance used by [`Self::apply`].
    pub fn with_solve_tol(mut self, tol: f64) -> Result<Self> {
        if !(tol > 0.0) || !tol.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "solve tolerance must be positive and finite, got {tol}"
            )));
        }
        self.solve_tol = tol;
        Ok(self)
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn mesh_version(&self) -> u64 {
        self.mesh_version
    }

    /// True when the operator was assembled on `mesh`'s current version.
    pub fn is_current_for(&self, mesh: &SimplicialMesh) -> bool {
        self.mesh_version == mesh.version()
    }

    /// Mass matrix of the mesh the operator was assembled on.
    pub fn mass(&self) -> &CsrMatrix {
        &self.mass
    }

    fn check_version(&self, field_version: u64) -> Result<()> {
        if field_version != self.mesh_version {
            return Err(Error::StaleField { bound: field_version, current: self.mesh_version });
        }
        Ok(())
    }

    /// Smooths `input` at the operator's default tolerance.
    pub fn apply(&self, input: &NodalField) -> Result<NodalField> {
        self.apply_with_tol(input, self.solve_tol)
    }

    /// Smooths `input`, solving to the given relative residual tolerance.
    pub fn apply_with_tol(&self, input: &NodalField, tol: f64) -> Result<NodalField> {
        self.check_version(input.mesh_version())?;
        if input.len() != self.system.n() {
            return Err(Error::InvalidField(format!(
                "field has {} values but the operator was assembled over {} nodes",
                input.len(),
                self.system.n()
            )));
        }
        let rhs = self.mass.mul_vec_alloc(input.values());
        let x = solve_spd(&self.system, &rhs, tol, Some(input.values()))?;
        Ok(NodalField::with_version(x, self.mesh_version))
    }

    /// Adjoint of [`Self::apply`] in the volume-weighted inner product
    /// `<f, g> = f' M g`.  The smoothing map is self-adjoint there, so this
    /// is the same solve; it exists so call sites can state which geometry
    /// they mean.
    pub fn apply_adjoint(&self, input: &NodalField) -> Result<NodalField> {
        self.apply(input)
    }

    /// Plain matrix transpose of the nodal map, `v -> M (A \ v)`.
    ///
    /// Chain rules over raw nodal coefficients need the Euclidean transpose
    /// of the smoothing matrix `A \ M`, not the mass-weighted adjoint.  Both
    /// `A` and `M` are symmetric, so the transpose is the two factors in the
    /// reverse order.
    pub(crate) fn apply_transpose(&self, v: &[f64], tol: f64) -> Result<Vec<f64>> {
        if v.len() != self.system.n() {
            return Err(Error::InvalidField(format!(
                "vector has {} values but the operator was assembled over {} nodes",
                v.len(),
                self.system.n()
            )));
        }
        let t = solve_spd(&self.system, v, tol, None)?;
        Ok(self.mass.mul_vec_alloc(&t))
    }
}
