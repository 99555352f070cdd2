//! Built-in load cases.
//!
//! Each case is an idealized rendition of a familiar benchmark: the domain
//! is a box, supports clamp whole faces, and loads act on faces or on
//! grid-aligned bands of a face.  Loads are normalized so the total applied
//! force (or torque, for the twist case) is exactly one on the initial
//! mesh; band edges snap to mesh nodes so the normalization is exact and
//! survives later refinement of the loaded facets.

use crate::error::{Error, Result};
use crate::fem::{
    DirichletBc, DirichletValue, ElasticityProblem, Region, TractionBc, TractionValue,
};
use crate::mesh::{BoundaryTag, SimplicialMesh};

use super::config::{ProblemKind, RunConfig};

/// Mesh plus boundary conditions; the interpolation exponent is a
/// placeholder that the run loop overwrites from its schedule each
/// iteration.
pub(crate) struct ProblemSetup {
    pub mesh: SimplicialMesh,
    pub problem: ElasticityProblem,
}

/// Cells per axis: `resolution` along the longest extent, other axes
/// scaled by extent and rounded, never below one.
pub(crate) fn structured_cells(cfg: &RunConfig) -> Vec<usize> {
    let domain = cfg.problem.domain();
    let longest = (0..domain.dim()).map(|a| domain.extent(a)).fold(0.0f64, f64::max);
    (0..domain.dim())
        .map(|a| {
            let c = (cfg.resolution as f64 * domain.extent(a) / longest).round() as usize;
            c.max(1)
        })
        .collect()
}

/// A band of whole boundary facets on `face`, spanning `[lo_frac, hi_frac]`
/// of the domain extent along `axis` after snapping both edges to the
/// structured grid.  Snapping keeps every selected facet fully inside the
/// band, so the band measure is exact and refinement cannot change it.
fn snapped_band(
    cfg: &RunConfig,
    cells: &[usize],
    face: BoundaryTag,
    axis: usize,
    lo_frac: f64,
    hi_frac: f64,
) -> (Region, f64) {
    let domain = cfg.problem.domain();
    let n = cells[axis];
    let lo_cell = (lo_frac * n as f64).round() as usize;
    let hi_cell = ((hi_frac * n as f64).round() as usize).max(lo_cell + 1).min(n);
    let h = domain.extent(axis) / n as f64;
    let lo_coord = domain.lo()[axis] + lo_cell as f64 * h;
    let hi_coord = domain.lo()[axis] + hi_cell as f64 * h;
    let mut lo = [f64::NEG_INFINITY; 3];
    let mut hi = [f64::INFINITY; 3];
    lo[axis] = lo_coord;
    hi[axis] = hi_coord;
    let measure = hi_coord - lo_coord;
    (Region::FaceBox { face, lo, hi }, measure)
}

pub(crate) fn build_setup(cfg: &RunConfig) -> Result<ProblemSetup> {
    let cells = structured_cells(cfg);
    let mesh = SimplicialMesh::build_structured(cfg.problem.domain(), &cells)?;

    let clamp = |face: BoundaryTag, axes: [bool; 3]| DirichletBc {
        region: Region::Face(face),
        axes,
        value: DirichletValue::Constant(0.0),
    };

    let (dirichlet, loads) = match cfg.problem {
        ProblemKind::Cantilever2d => {
            // Downward unit load on a short mid-height band of the right
            // edge; nominal band is the middle 12% of the edge.
            let (region, measure) =
                snapped_band(cfg, &cells, BoundaryTag::XMax, 1, 0.44, 0.56);
            (
                vec![clamp(BoundaryTag::XMin, [true, true, false])],
                vec![TractionBc {
                    region,
                    value: TractionValue::Constant([0.0, -1.0 / measure, 0.0]),
                }],
            )
        }
        ProblemKind::ShearedBeam => {
            // Unit tangential load spread along the whole top edge.
            let len = cfg.problem.domain().extent(0);
            (
                vec![clamp(BoundaryTag::YMin, [true, true, false])],
                vec![TractionBc {
                    region: Region::Face(BoundaryTag::YMax),
                    value: TractionValue::Constant([1.0 / len, 0.0, 0.0]),
                }],
            )
        }
        ProblemKind::TwistedBall => {
            // Unit torque about the center of the right face.  For a unit
            // square face the polar second moment about its center is 1/6,
            // so scale 6 makes the integrated torque exactly one.
            let domain = cfg.problem.domain();
            let hi = domain.hi();
            let center = [
                hi[0],
                0.5 * (domain.lo()[1] + hi[1]),
                0.5 * (domain.lo()[2] + hi[2]),
            ];
            (
                vec![clamp(BoundaryTag::XMin, [true, true, true])],
                vec![TractionBc {
                    region: Region::Face(BoundaryTag::XMax),
                    value: TractionValue::Twist { center, axis: [1.0, 0.0, 0.0], scale: 6.0 },
                }],
            )
        }
        ProblemKind::MultiCube => {
            // Two downward side loads of one half each, so the directions
            // of the internal load paths differ while the total stays one.
            let area = {
                let d = cfg.problem.domain();
                d.extent(1) * d.extent(2)
            };
            (
                vec![clamp(BoundaryTag::ZMin, [true, true, true])],
                vec![
                    TractionBc {
                        region: Region::Face(BoundaryTag::XMax),
                        value: TractionValue::Constant([0.0, 0.0, -0.5 / area]),
                    },
                    TractionBc {
                        region: Region::Face(BoundaryTag::YMax),
                        value: TractionValue::Constant([0.0, 0.0, -0.5 / area]),
                    },
                ],
            )
        }
    };

    let problem = ElasticityProblem {
        youngs_modulus: cfg.youngs_modulus,
        poisson_ratio: cfg.poisson_ratio,
        simp_penalty: 1.0,
        rho_min: cfg.rho_min,
        dirichlet,
        loads,
    };
    if problem.loads.is_empty() {
        return Err(Error::Assembly("problem defines no loads".into()));
    }
    Ok(ProblemSetup { mesh, problem })
}
