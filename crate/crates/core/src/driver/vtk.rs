//! Legacy-text mesh snapshots.
//!
//! The writer emits an ASCII unstructured grid with the five design fields
//! as point data (`phi`, `phi_tilde`, `rho`, `rho_tilde`, `rho_bar`) and
//! the refinement indicator as cell data (`w`).  Floats print in Rust's
//! shortest round-trip form, so identical inputs produce identical bytes.
//! The reader is deliberately minimal: enough to summarize our own files
//! and any plain scalar-field grid of a single element type.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::{ElementIndicator, SimplicialMesh};
use crate::objectives::DesignState;

/// Writes one snapshot.  Every field must be bound to `mesh`.
pub fn export_vtk(
    path: impl AsRef<Path>,
    mesh: &SimplicialMesh,
    state: &DesignState,
    indicator: &ElementIndicator,
) -> Result<()> {
    let path = path.as_ref();
    state.phi.check_bound_to(mesh)?;
    state.phi_tilde.check_bound_to(mesh)?;
    state.rho.check_bound_to(mesh)?;
    state.rho_tilde.check_bound_to(mesh)?;
    state.rho_bar.check_bound_to(mesh)?;
    indicator.check_bound_to(mesh)?;

    let n = mesh.node_count();
    let m = mesh.element_count();
    let verts = mesh.dimension() + 1;
    let cell_type = if mesh.dimension() == 2 { 5 } else { 10 };

    let mut s = String::new();
    s.push_str("# vtk DataFile Version 3.0\n");
    s.push_str("design snapshot\n");
    s.push_str("ASCII\n");
    s.push_str("DATASET UNSTRUCTURED_GRID\n");

    let _ = writeln!(s, "POINTS {n} double");
    for i in 0..n {
        let p = mesh.node_position(i);
        let _ = writeln!(s, "{} {} {}", p[0], p[1], p[2]);
    }

    let _ = writeln!(s, "CELLS {m} {}", m * (verts + 1));
    for e in 0..m {
        let _ = write!(s, "{verts}");
        for &v in mesh.element(e) {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }

    let _ = writeln!(s, "CELL_TYPES {m}");
    for _ in 0..m {
        let _ = writeln!(s, "{cell_type}");
    }

    let _ = writeln!(s, "POINT_DATA {n}");
    let point_arrays: [(&str, &[f64]); 5] = [
        ("phi", state.phi.values()),
        ("phi_tilde", state.phi_tilde.values()),
        ("rho", state.rho.values()),
        ("rho_tilde", state.rho_tilde.values()),
        ("rho_bar", state.rho_bar.values()),
    ];
    for (name, values) in point_arrays {
        let _ = writeln!(s, "SCALARS {name} double 1");
        s.push_str("LOOKUP_TABLE default\n");
        for v in values {
            let _ = writeln!(s, "{v}");
        }
    }

    let _ = writeln!(s, "CELL_DATA {m}");
    s.push_str("SCALARS w double 1\n");
    s.push_str("LOOKUP_TABLE default\n");
    for v in indicator.values() {
        let _ = writeln!(s, "{v}");
    }

    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// What a snapshot contains, gathered without storing the bulk data.
#[derive(Debug, Clone, PartialEq)]
pub struct VtkSummary {
    pub points: usize,
    pub cells: usize,
    /// The single element type id in the file (5 triangle, 10 tetrahedron).
    pub cell_type: u32,
    pub point_arrays: Vec<String>,
    pub cell_arrays: Vec<String>,
    pub bounds_lo: [f64; 3],
    pub bounds_hi: [f64; 3],
}

impl VtkSummary {
    /// Spatial dimension implied by the element type.
    pub fn dimension(&self) -> Option<usize> {
        match self.cell_type {
            5 => Some(2),
            10 => Some(3),
            _ => None,
        }
    }
}

struct Tokens<'a> {
    iter: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, what: &str) -> Result<&'a str> {
        self.iter
            .next()
            .ok_or_else(|| Error::Format(format!("unexpected end of file, expected {what}")))
    }

    fn next_usize(&mut self, what: &str) -> Result<usize> {
        let t = self.next(what)?;
        t.parse()
            .map_err(|_| Error::Format(format!("expected {what} to be an integer, got '{t}'")))
    }

    fn next_f64(&mut self, what: &str) -> Result<f64> {
        let t = self.next(what)?;
        t.parse()
            .map_err(|_| Error::Format(format!("expected {what} to be a number, got '{t}'")))
    }
}

/// Reads just enough of a legacy-text unstructured grid to describe it.
pub fn read_vtk_summary(path: impl AsRef<Path>) -> Result<VtkSummary> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;

    let mut head = text.splitn(4, '\n');
    let header = head.next().unwrap_or("").trim_end();
    if !header.starts_with("# vtk DataFile") {
        return Err(Error::Format(format!(
            "not a legacy-text grid file: first line is '{header}'"
        )));
    }
    let _title = head.next().unwrap_or("");
    let encoding = head.next().unwrap_or("").trim();
    if encoding != "ASCII" {
        return Err(Error::Format(format!("only ASCII encoding is supported, got '{encoding}'")));
    }
    let rest = head.next().unwrap_or("");
    let mut tok = Tokens { iter: rest.split_ascii_whitespace() };

    let kw = tok.next("DATASET")?;
    if kw != "DATASET" {
        return Err(Error::Format(format!("expected DATASET, got '{kw}'")));
    }
    let kind = tok.next("dataset kind")?;
    if kind != "UNSTRUCTURED_GRID" {
        return Err(Error::Format(format!(
            "only UNSTRUCTURED_GRID datasets are supported, got '{kind}'"
        )));
    }

    let mut points = 0usize;
    let mut cells = 0usize;
    let mut cell_type = 0u32;
    let mut point_arrays = Vec::new();
    let mut cell_arrays = Vec::new();
    let mut bounds_lo = [f64::INFINITY; 3];
    let mut bounds_hi = [f64::NEG_INFINITY; 3];
    // Which section the latest SCALARS keyword belongs to; None until a
    // POINT_DATA or CELL_DATA header has been seen.
    let mut in_cell_data: Option<bool> = None;

    while let Some(word) = tok.iter.next() {
        match word {
            "POINTS" => {
                points = tok.next_usize("point count")?;
                let _dtype = tok.next("point component type")?;
                for _ in 0..points {
                    for axis in 0..3 {
                        let v = tok.next_f64("point coordinate")?;
                        bounds_lo[axis] = bounds_lo[axis].min(v);
                        bounds_hi[axis] = bounds_hi[axis].max(v);
                    }
                }
            }
            "CELLS" => {
                cells = tok.next_usize("cell count")?;
                let total = tok.next_usize("cell index total")?;
                for _ in 0..total {
                    tok.next_usize("cell index")?;
                }
            }
            "CELL_TYPES" => {
                let count = tok.next_usize("cell type count")?;
                for i in 0..count {
                    let t = tok.next_usize("cell type")? as u32;
                    if i == 0 {
                        cell_type = t;
                    } else if t != cell_type {
                        return Err(Error::Format(format!(
                            "mixed cell types {cell_type} and {t}; expected a single type"
                        )));
                    }
                }
            }
            "POINT_DATA" => {
                let _ = tok.next_usize("point data count")?;
                in_cell_data = Some(false);
            }
            "CELL_DATA" => {
                let _ = tok.next_usize("cell data count")?;
                in_cell_data = Some(true);
            }
            "SCALARS" => {
                let name = tok.next("array name")?.to_string();
                let _dtype = tok.next("array component type")?;
                let section = in_cell_data.ok_or_else(|| {
                    Error::Format(format!(
                        "array '{name}' appears before any POINT_DATA or CELL_DATA header"
                    ))
                })?;
                let count = if section { cells } else { points };
                if section {
                    cell_arrays.push(name);
                } else {
                    point_arrays.push(name);
                }
                // Optional component count, then the lookup-table line.
                let next = tok.next("LOOKUP_TABLE")?;
                let next = if next == "LOOKUP_TABLE" {
                    next
                } else {
                    next.parse::<usize>().map_err(|_| {
                        Error::Format(format!("expected component count or LOOKUP_TABLE, got '{next}'"))
                    })?;
                    tok.next("LOOKUP_TABLE")?
                };
                if next != "LOOKUP_TABLE" {
                    return Err(Error::Format(format!("expected LOOKUP_TABLE, got '{next}'")));
                }
                let _table = tok.next("lookup table name")?;
                for _ in 0..count {
                    tok.next_f64("scalar value")?;
                }
            }
            other => {
                return Err(Error::Format(format!("unsupported section '{other}'")));
            }
        }
    }

    if points == 0 || cells == 0 {
        return Err(Error::Format("file defines no points or no cells".into()));
    }
    Ok(VtkSummary { points, cells, cell_type, point_arrays, cell_arrays, bounds_lo, bounds_hi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::NodalField;
    use crate::filter::FilterOperator;
    use crate::mesh::{DomainBox, SimplicialMesh};
    use crate::objectives::{forward, PipelineParams};

    fn snapshot_pieces() -> (SimplicialMesh, DesignState, ElementIndicator) {
        let domain = DomainBox::rect([0.0, 0.0], [2.0, 1.0]).unwrap();
        let mesh = SimplicialMesh::build_structured(domain, &[8, 4]).unwrap();
        let design = FilterOperator::new(&mesh, 0.05).unwrap();
        let detect = FilterOperator::new(&mesh, 0.1).unwrap();
        let values: Vec<f64> =
            (0..mesh.node_count()).map(|i| (i as f64 * 0.37).sin() * 0.8).collect();
        let phi = NodalField::new(values, &mesh).unwrap().with_bounds(-1.0, 1.0);
        let params =
            PipelineParams { sharpness: 4.0, sharpness_geometric: 32.0, solve_tol: 1e-10 };
        let state = forward(&mesh, &design, &detect, &phi, &params).unwrap();
        let indicator = mesh.error_indicator(&state.rho, 0.2).unwrap();
        (mesh, state, indicator)
    }

    #[test]
    fn snapshot_round_trips_counts_and_array_names() {
        let (mesh, state, ind) = snapshot_pieces();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("snap.vtk");
        export_vtk(&path, &mesh, &state, &ind).unwrap();

        let summary = read_vtk_summary(&path).unwrap();
        assert_eq!(summary.points, mesh.node_count());
        assert_eq!(summary.cells, mesh.element_count());
        assert_eq!(summary.cell_type, 5);
        assert_eq!(summary.dimension(), Some(2));
        assert_eq!(
            summary.point_arrays,
            vec!["phi", "phi_tilde", "rho", "rho_tilde", "rho_bar"]
        );
        assert_eq!(summary.cell_arrays, vec!["w"]);
        assert!((summary.bounds_lo[0] - 0.0).abs() < 1e-15);
        assert!((summary.bounds_hi[0] - 2.0).abs() < 1e-15);
        assert!((summary.bounds_hi[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_produce_identical_bytes() {
        let (mesh, state, ind) = snapshot_pieces();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.vtk");
        let b = dir.path().join("b.vtk");
        export_vtk(&a, &mesh, &state, &ind).unwrap();
        export_vtk(&b, &mesh, &state, &ind).unwrap();
        let bytes_a = std::fs::read(&a).unwrap();
        let bytes_b = std::fs::read(&b).unwrap();
        assert_eq!(bytes_a, bytes_b);
        assert!(!bytes_a.is_empty());
    }

    #[test]
    fn unwritable_path_reports_the_path() {
        let (mesh, state, ind) = snapshot_pieces();
        let path = Path::new("/nonexistent-dir/snap.vtk");
        let err = export_vtk(path, &mesh, &state, &ind).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("/nonexistent-dir/snap.vtk"), "{err}");
    }

    #[test]
    fn stale_fields_are_rejected() {
        let (mesh, state, _) = snapshot_pieces();
        let finer = mesh.refine_uniform(1).unwrap();
        let ind = finer
            .error_indicator(&NodalField::constant(0.5, &finer), 0.2)
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = export_vtk(dir.path().join("x.vtk"), &finer, &state, &ind).unwrap_err();
        assert!(matches!(err, Error::StaleField { .. }));
    }

    #[test]
    fn reader_rejects_foreign_headers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.vtk");
        std::fs::write(&path, "hello\nworld\n").unwrap();
        let err = read_vtk_summary(&path).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");

        std::fs::write(
            &path,
            "# vtk DataFile Version 3.0\nt\nBINARY\nDATASET UNSTRUCTURED_GRID\n",
        )
        .unwrap();
        let err = read_vtk_summary(&path).unwrap_err();
        assert!(err.to_string().contains("ASCII"), "{err}");
    }

    #[test]
    fn reader_handles_a_handwritten_tet_file() {
        let text = "\
# vtk DataFile Version 3.0
tiny
ASCII
DATASET UNSTRUCTURED_GRID
POINTS 4 double
0 0 0
1 0 0
0 1 0
0 0 1
CELLS 1 5
4 0 1 2 3
CELL_TYPES 1
10
POINT_DATA 4
SCALARS temp double 1
LOOKUP_TABLE default
0 1 2 3
";
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tet.vtk");
        std::fs::write(&path, text).unwrap();
        let summary = read_vtk_summary(&path).unwrap();
        assert_eq!(summary.points, 4);
        assert_eq!(summary.cells, 1);
        assert_eq!(summary.cell_type, 10);
        assert_eq!(summary.dimension(), Some(3));
        assert_eq!(summary.point_arrays, vec!["temp"]);
        assert!(summary.cell_arrays.is_empty());
    }
}
