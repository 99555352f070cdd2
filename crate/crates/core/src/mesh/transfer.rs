//! Nodal field transfer between meshes over the same domain.
//!
//! Each target node is located in the source mesh through a uniform bin
//! grid, then the value is interpolated with barycentric weights.  Points
//! that fall marginally outside every candidate element (roundoff at facets)
//! are accepted as long as the violation, scaled by the element diameter,
//! stays below a fixed fraction of the domain diameter.

use super::SimplicialMesh;
use crate::error::{Error, Result};
use crate::field::NodalField;

/// Relative slack for accepting a point as inside an element.
const LOCATE_TOL_REL: f64 = 1e-10;

struct BinGrid {
    lo: [f64; 3],
    inv_cell: [f64; 3],
    dims: [usize; 3],
    bins: Vec<Vec<u32>>,
}

impl BinGrid {
    fn build(mesh: &SimplicialMesh) -> Self {
        let dim = mesh.dimension();
        let per_axis = ((mesh.element_count() as f64 / 2.0).powf(1.0 / dim as f64).ceil()
            as usize)
            .clamp(1, 64);
        let mut lo = [0.0; 3];
        let mut inv_cell = [0.0; 3];
        let mut dims = [1usize; 3];
        for a in 0..dim {
            lo[a] = mesh.domain().lo()[a];
            dims[a] = per_axis;
            inv_cell[a] = per_axis as f64 / mesh.domain().extent(a);
        }
        let mut bins = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for e in 0..mesh.element_count() {
            let mut bb_lo = [usize::MAX; 3];
            let mut bb_hi = [0usize; 3];
            for a in 0..3 {
                if a >= dim {
                    bb_lo[a] = 0;
                    bb_hi[a] = 0;
                }
            }
            for &v in mesh.element(e) {
                let p = mesh.node_position(v);
                for a in 0..dim {
                    let c = (((p[a] - lo[a]) * inv_cell[a]).floor() as isize)
                        .clamp(0, dims[a] as isize - 1) as usize;
                    bb_lo[a] = bb_lo[a].min(c);
                    bb_hi[a] = bb_hi[a].max(c);
                }
            }
            for k in bb_lo[2]..=bb_hi[2] {
                for j in bb_lo[1]..=bb_hi[1] {
                    for i in bb_lo[0]..=bb_hi[0] {
                        bins[(k * dims[1] + j) * dims[0] + i].push(e as u32);
                    }
                }
            }
        }
        BinGrid { lo, inv_cell, dims, bins }
    }

    fn candidates(&self, dim: usize, p: [f64; 3]) -> &[u32] {
        let mut idx = [0usize; 3];
        for a in 0..dim {
            idx[a] = (((p[a] - self.lo[a]) * self.inv_cell[a]).floor() as isize)
                .clamp(0, self.dims[a] as isize - 1) as usize;
        }
        &self.bins[(idx[2] * self.dims[1] + idx[1]) * self.dims[0] + idx[0]]
    }
}

/// Barycentric coordinates of `p` in element `e`; entry 0 belongs to the
/// first vertex.  Weights sum to one but may be negative outside.
fn barycentric(mesh: &SimplicialMesh, e: usize, p: [f64; 3]) -> [f64; 4] {
    let dim = mesh.dimension();
    let verts = mesh.element(e);
    let p0 = mesh.node_position(verts[0]);
    let mut mat = [[0.0f64; 3]; 3];
    let mut rhs = [0.0f64; 3];
    for a in 0..dim {
        rhs[a] = p[a] - p0[a];
        for (i, &v) in verts.iter().enumerate().skip(1) {
            mat[a][i - 1] = mesh.node_position(v)[a] - p0[a];
        }
    }
    // Gaussian elimination with partial pivoting on the tiny system.
    let mut lambda = [0.0f64; 3];
    let n = dim;
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if mat[r][col].abs() > mat[piv][col].abs() {
                piv = r;
            }
        }
        mat.swap(col, piv);
        rhs.swap(col, piv);
        let d = mat[col][col];
        for r in col + 1..n {
            let f = mat[r][col] / d;
            for c in col..n {
                mat[r][c] -= f * mat[col][c];
            }
            rhs[r] -= f * rhs[col];
        }
    }
    for col in (0..n).rev() {
        let mut s = rhs[col];
        for c in col + 1..n {
            s -= mat[col][c] * lambda[c];
        }
        lambda[col] = s / mat[col][col];
    }
    let mut w = [0.0f64; 4];
    let mut sum = 0.0;
    for i in 0..n {
        w[i + 1] = lambda[i];
        sum += lambda[i];
    }
    w[0] = 1.0 - sum;
    w
}

/// Interpolates `field` (bound to `source`) onto the nodes of `target`.
/// Meshes sharing a version are identical, so values are copied verbatim.
/// Declared bounds are clamped and carried over.
pub fn transfer_field(
    field: &NodalField,
    source: &SimplicialMesh,
    target: &SimplicialMesh,
) -> Result<NodalField> {
    field.check_bound_to(source)?;
    if source.version() == target.version() {
        let out = NodalField::new(field.values().to_vec(), target)?;
        return Ok(match field.bounds() {
            Some((lo, hi)) => out.with_bounds(lo, hi),
            None => out,
        });
    }

    let grid = BinGrid::build(source);
    let tol = LOCATE_TOL_REL * source.domain().diameter();
    let src = field.values();
    let mut values = Vec::with_capacity(target.node_count());

    for n in 0..target.node_count() {
        let p = target.node_position(n);
        let mut best: Option<(f64, usize, [f64; 4])> = None;
        let consider = |e: usize, best: &mut Option<(f64, usize, [f64; 4])>| {
            let w = barycentric(source, e, p);
            let nv = source.dimension() + 1;
            let worst = w[..nv].iter().cloned().fold(f64::INFINITY, f64::min);
            let violation = (-worst).max(0.0) * source.element_diameter(e);
            if best.map_or(true, |(bv, _, _)| violation < bv) {
                *best = Some((violation, e, w));
            }
        };
        for &e in grid.candidates(target.dimension(), p) {
            consider(e as usize, &mut best);
            if let Some((v, _, _)) = best {
                if v == 0.0 {
                    break;
                }
            }
        }
        let needs_fallback = best.map_or(true, |(v, _, _)| v > tol);
        if needs_fallback {
            // Roundoff can push a node just outside its bin's elements;
            // scan everything before declaring the point lost.
            for e in 0..source.element_count() {
                consider(e, &mut best);
            }
        }
        match best {
            Some((violation, e, w)) if violation <= tol => {
                let verts = source.element(e);
                let f0 = src[verts[0]];
                let mut val = f0;
                for (i, &v) in verts.iter().enumerate().skip(1) {
                    val += w[i] * (src[v] - f0);
                }
                values.push(val);
            }
            _ => {
                return Err(Error::TransferFailure { x: p[0], y: p[1], z: p[2] });
            }
        }
    }

    let out = NodalField::new(values, target)?;
    Ok(match field.bounds() {
        Some((lo, hi)) => out.with_bounds(lo, hi),
        None => out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{AdaptConfig, DomainBox, ElementIndicator};
    use rand::{Rng, SeedableRng};

    fn mesh_2d(cells: usize) -> SimplicialMesh {
        let domain = DomainBox::rect([0.0, 0.0], [2.0, 1.0]).unwrap();
        SimplicialMesh::build_structured(domain, &[2 * cells, cells]).unwrap()
    }

    fn randomly_adapted(mesh: &SimplicialMesh, seed: u64, rounds: usize) -> SimplicialMesh {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut out = mesh.clone();
        for _ in 0..rounds {
            let vals: Vec<f64> = (0..out.element_count()).map(|_| rng.gen()).collect();
            let ind = ElementIndicator::new(vals, &out).unwrap();
            out = out.adapt(&ind, &AdaptConfig::default()).unwrap();
        }
        out
    }

    #[test]
    fn linear_fields_transfer_exactly() {
        let source = mesh_2d(4);
        let f = |p: [f64; 3]| 2.0 * p[0] - 3.0 * p[1] + 0.25;
        let vals: Vec<f64> = (0..source.node_count()).map(|n| f(source.node_position(n))).collect();
        let field = NodalField::new(vals, &source).unwrap();

        let target = randomly_adapted(&source, 11, 3);
        let moved = transfer_field(&field, &source, &target).unwrap();
        for n in 0..target.node_count() {
            let want = f(target.node_position(n));
            assert!(
                (moved.values()[n] - want).abs() <= 1e-12,
                "node {n}: {} vs {}",
                moved.values()[n],
                want
            );
        }
    }

    #[test]
    fn linear_fields_transfer_exactly_3d() {
        let domain = DomainBox::cuboid([0.0; 3], [1.0, 1.0, 1.0]).unwrap();
        let source = SimplicialMesh::build_structured(domain, &[2, 2, 2]).unwrap();
        let f = |p: [f64; 3]| 0.5 * p[0] + 1.5 * p[1] - 0.75 * p[2] + 1.0;
        let vals: Vec<f64> = (0..source.node_count()).map(|n| f(source.node_position(n))).collect();
        let field = NodalField::new(vals, &source).unwrap();

        let target = randomly_adapted(&source, 5, 2);
        let moved = transfer_field(&field, &source, &target).unwrap();
        for n in 0..target.node_count() {
            let want = f(target.node_position(n));
            assert!((moved.values()[n] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn same_mesh_transfer_is_exact_copy() {
        let mesh = mesh_2d(3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let vals: Vec<f64> = (0..mesh.node_count()).map(|_| rng.gen()).collect();
        let field = NodalField::new(vals.clone(), &mesh).unwrap();
        let moved = transfer_field(&field, &mesh, &mesh).unwrap();
        assert_eq!(moved.values(), vals.as_slice());
        assert_eq!(moved.mesh_version(), mesh.version());
    }

    #[test]
    fn constants_survive_any_adaptation_exactly() {
        let source = mesh_2d(3);
        let field = NodalField::constant(0.7, &source);
        let target = randomly_adapted(&source, 23, 4);
        let moved = transfer_field(&field, &source, &target).unwrap();
        for &v in moved.values() {
            assert_eq!(v, 0.7);
        }
    }

    #[test]
    fn bounds_are_carried_and_enforced() {
        let source = mesh_2d(2);
        let vals: Vec<f64> = (0..source.node_count()).map(|n| n as f64 * 0.01).collect();
        let field = NodalField::new(vals, &source).unwrap().with_bounds(0.0, 1.0);
        let target = randomly_adapted(&source, 9, 2);
        let moved = transfer_field(&field, &source, &target).unwrap();
        assert_eq!(moved.bounds(), Some((0.0, 1.0)));
        for &v in moved.values() {
            assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn points_outside_the_source_domain_fail() {
        let source = mesh_2d(2);
        let big = DomainBox::rect([0.0, 0.0], [4.0, 2.0]).unwrap();
        let target = SimplicialMesh::build_structured(big, &[4, 2]).unwrap();
        let field = NodalField::constant(1.0, &source);
        let err = transfer_field(&field, &source, &target).unwrap_err();
        assert!(matches!(err, Error::TransferFailure { .. }));
    }

    #[test]
    fn stale_field_is_rejected() {
        let source = mesh_2d(2);
        let other = mesh_2d(2);
        let field = NodalField::constant(0.5, &other);
        assert!(transfer_field(&field, &source, &source).is_err());
    }
}
