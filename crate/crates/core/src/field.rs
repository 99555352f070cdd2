//! Nodal scalar fields bound to a mesh version.
//!
//! Every field remembers the mesh version it was computed on.  Operations
//! that combine a field with a mesh check the binding and fail with
//! [`Error::StaleField`] instead of silently mixing resolutions.

use crate::error::{Error, Result};
use crate::mesh::SimplicialMesh;

/// A scalar value per mesh node, with optional hard bounds.
///
/// Bounds are enforced on transfer between meshes (interpolation may
/// otherwise overshoot at re-entrant features) and are available to
/// consumers that need to clamp derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    values: Vec<f64>,
    mesh_version: u64,
    bounds: Option<(f64, f64)>,
}

impl NodalField {
    /// Wraps raw nodal values for the given mesh.
    pub fn new(values: Vec<f64>, mesh: &SimplicialMesh) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::InvalidField(format!(
                "field has {} values but mesh has {} nodes",
                values.len(),
                mesh.node_count()
            )));
        }
        Ok(NodalField { values, mesh_version: mesh.version(), bounds: None })
    }

    /// Constant field over all nodes of `mesh`.
    pub fn constant(value: f64, mesh: &SimplicialMesh) -> Self {
        NodalField {
            values: vec![value; mesh.node_count()],
            mesh_version: mesh.version(),
            bounds: None,
        }
    }

    /// Attaches hard bounds, clamping current values to them.
    pub fn with_bounds(mut self, lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi);
        for v in &mut self.values {
            *v = v.clamp(lo, hi);
        }
        self.bounds = Some((lo, hi));
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mesh_version(&self) -> u64 {
        self.mesh_version
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        self.bounds
    }

    /// Fails unless the field is bound to `mesh`'s current version.
    pub fn check_bound_to(&self, mesh: &SimplicialMesh) -> Result<()> {
        if self.mesh_version != mesh.version() {
            return Err(Error::StaleField { bound: self.mesh_version, current: mesh.version() });
        }
        if self.values.len() != mesh.node_count() {
            return Err(Error::InvalidField(format!(
                "field has {} values but mesh has {} nodes",
                self.values.len(),
                mesh.node_count()
            )));
        }
        Ok(())
    }

    /// Wraps values already known to match a given mesh version.
    ///
    /// Crate-internal: callers must have sized `values` against the mesh
    /// that owns `mesh_version`.  No bounds are attached.
    pub(crate) fn with_version(values: Vec<f64>, mesh_version: u64) -> Self {
        NodalField { values, mesh_version, bounds: None }
    }

    /// A field with the same binding and bounds but new values.
    pub fn same_shape(&self, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), self.values.len());
        let mut out = NodalField { values, mesh_version: self.mesh_version, bounds: self.bounds };
        if let Some((lo, hi)) = self.bounds {
            for v in &mut out.values {
                *v = v.clamp(lo, hi);
            }
        }
        out
    }
}
