//! Strip-pattern diagnostic for the size detector.
//!
//! A synthetic near-binary design of four parallel solid strips, with
//! widths 4, 2, 1, and 0.5 times the minimum feature diameter, is smoothed
//! at several detection diameters, and the detector is swept over several
//! threshold and bandwidth pairs.  An isolated strip of half-width `a`
//! smoothed at radius `r` peaks at `1 - exp(-a / r)`, which calibrates
//! what each combination should report: wide strips keep their core above
//! the threshold and get flagged, strips at or below the minimum feature
//! size fall well under it and stay clear.
//!
//! The strips run far apart (seven diameters edge to edge) so each one
//! behaves as isolated even at the largest detection radius.

use crate::error::Result;
use crate::field::NodalField;
use crate::filter::{detection_radius_from_diameter, FilterOperator};
use crate::mesh::{DomainBox, SimplicialMesh};
use crate::projection::detector;

use super::config::RunConfig;

/// Ratios of the detection diameter to the minimum feature diameter the
/// diagnostic sweeps.
pub const DETECTION_RATIOS: [f64; 3] = [1.5, 2.0, 4.0];

/// Detector threshold and bandwidth pairs the diagnostic sweeps, from
/// near-binary to very soft.
pub const DETECTOR_SETTINGS: [(f64, f64); 3] = [(0.97, 0.015), (0.90, 0.05), (0.75, 0.2)];

/// Response level at which each case's smoothing radius is calibrated:
/// the onset of the optimizer's default detector (threshold 0.90 minus
/// bandwidth 0.05), so a strip exactly at the detection diameter peaks
/// right where flagging begins.  One smoothed field per detection diameter
/// is shared by every `DETECTOR_SETTINGS` row, so the rows stay
/// comparable: they differ only in how the detector reads the same field.
pub const REFERENCE_LEVEL: f64 = 0.85;

/// Strip widths as multiples of the minimum feature diameter.
pub const STRIP_WIDTH_RATIOS: [f64; 4] = [4.0, 2.0, 1.0, 0.5];

/// Where the strips sit, in absolute coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct StripGeometry {
    /// Absolute strip widths, widest first.
    pub widths: [f64; 4],
    /// Inclusive x-intervals of the strips.
    pub intervals: [(f64, f64); 4],
    /// Domain length and height.
    pub length: f64,
    pub height: f64,
}

/// Fraction of each strip the detector flags at one threshold setting.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRow {
    pub threshold: f64,
    pub bandwidth: f64,
    /// Volume fraction of each strip where the detector is strictly
    /// positive, in `STRIP_WIDTH_RATIOS` order.
    pub coverage: [f64; 4],
}

/// Results for one detection diameter.
#[derive(Debug, Clone)]
pub struct StripCase {
    /// Detection diameter and the smoothing radius it maps to.
    pub diameter: f64,
    pub radius: f64,
    /// Peak smoothed density inside each strip.
    pub peaks: [f64; 4],
    /// Closed-form peak an isolated strip of that width would reach.
    pub expected_isolated: [f64; 4],
    pub coverage: Vec<CoverageRow>,
    /// The smoothed field itself, for export or further inspection.
    pub rho_bar: NodalField,
}

/// Everything the diagnostic produced.
#[derive(Debug, Clone)]
pub struct StripReport {
    pub geometry: StripGeometry,
    pub mesh: SimplicialMesh,
    /// The synthetic near-binary strip pattern.
    pub rho_tilde: NodalField,
    /// One case per entry of `DETECTION_RATIOS`.
    pub cases: Vec<StripCase>,
}

// Layout in units of the minimum feature diameter: outer margins and the
// gaps between strips.  Gaps of seven diameters keep cross-talk between
// strip peaks below one percent at the largest detection radius.
const MARGIN: f64 = 5.0;
const GAP: f64 = 7.0;
// Cells per minimum feature diameter.  Every strip edge sits at a multiple
// of half a diameter, so an even cell count per diameter puts every edge
// exactly on a node line; the node-hat taper then spreads half a cell past
// each edge and the half-open membership below cancels it, keeping the
// effective smoothed width equal to the nominal width to first order.
const CELLS_PER_DIAMETER: usize = 24;

fn layout(min_diameter: f64) -> StripGeometry {
    let mut intervals = [(0.0, 0.0); 4];
    let mut widths = [0.0; 4];
    let mut cursor = MARGIN;
    for (i, ratio) in STRIP_WIDTH_RATIOS.iter().enumerate() {
        let w = ratio * min_diameter;
        let start = cursor * min_diameter;
        intervals[i] = (start, start + w);
        widths[i] = w;
        cursor += ratio + GAP;
    }
    let length = (cursor - GAP + MARGIN) * min_diameter;
    StripGeometry { widths, intervals, length, height: min_diameter }
}

/// Runs the sweep.  Uses `feature.min_diameter` and `solver.tolerance`
/// from the config; everything else about the diagnostic is fixed so
/// reports from different runs are comparable.
pub fn diagnostic_strips(cfg: &RunConfig) -> Result<StripReport> {
    cfg.validate()?;
    let geometry = layout(cfg.min_diameter);

    let h = cfg.min_diameter / CELLS_PER_DIAMETER as f64;
    let nx = (geometry.length / h).round() as usize;
    let ny = CELLS_PER_DIAMETER;
    let domain = DomainBox::rect([0.0, 0.0], [geometry.length, geometry.height])?;
    let mesh = SimplicialMesh::build_structured(domain, &[nx, ny])?;

    // Half-open membership: the node on a strip's left edge belongs to it,
    // the node on its right edge does not.
    let intervals = geometry.intervals;
    let eps = 1e-9 * cfg.min_diameter;
    let in_strip =
        move |x: f64| -> Option<usize> { intervals.iter().position(|&(lo, hi)| x >= lo - eps && x < hi - eps) };

    let pattern: Vec<f64> = (0..mesh.node_count())
        .map(|i| if in_strip(mesh.node_position(i)[0]).is_some() { 1.0 } else { 0.0 })
        .collect();
    let rho_tilde = NodalField::new(pattern, &mesh)?.with_bounds(0.0, 1.0);

    let volumes = mesh.lumped_node_volumes();
    let mut strip_volume = [0.0f64; 4];
    for i in 0..mesh.node_count() {
        if let Some(s) = in_strip(mesh.node_position(i)[0]) {
            strip_volume[s] += volumes[i];
        }
    }

    let mut cases = Vec::new();
    for ratio in DETECTION_RATIOS {
        let diameter = ratio * cfg.min_diameter;
        let radius = detection_radius_from_diameter(diameter, REFERENCE_LEVEL)?;
        let filter = FilterOperator::new(&mesh, radius)?.with_solve_tol(cfg.solve_tol)?;
        let rho_bar = filter.apply(&rho_tilde)?;

        let mut peaks = [0.0f64; 4];
        for i in 0..mesh.node_count() {
            if let Some(s) = in_strip(mesh.node_position(i)[0]) {
                peaks[s] = peaks[s].max(rho_bar.values()[i]);
            }
        }

        let mut expected_isolated = [0.0f64; 4];
        for (e, w) in expected_isolated.iter_mut().zip(geometry.widths) {
            *e = 1.0 - (-0.5 * w / radius).exp();
        }

        let mut coverage = Vec::new();
        for (threshold, bandwidth) in DETECTOR_SETTINGS {
            let mut flagged = [0.0f64; 4];
            for i in 0..mesh.node_count() {
                if let Some(s) = in_strip(mesh.node_position(i)[0]) {
                    if detector(rho_bar.values()[i] - threshold, bandwidth) > 0.0 {
                        flagged[s] += volumes[i];
                    }
                }
            }
            let mut row = [0.0f64; 4];
            for s in 0..4 {
                row[s] = flagged[s] / strip_volume[s];
            }
            coverage.push(CoverageRow { threshold, bandwidth, coverage: row });
        }

        cases.push(StripCase { diameter, radius, peaks, expected_isolated, coverage, rho_bar });
    }

    Ok(StripReport { geometry, mesh, rho_tilde, cases })
}

impl StripReport {
    /// Plain-text summary, one block per detection diameter.
    pub fn render_table(&self) -> String {
        use std::fmt::Write as _;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "strip widths (absolute): {:.6} {:.6} {:.6} {:.6}",
            self.geometry.widths[0],
            self.geometry.widths[1],
            self.geometry.widths[2],
            self.geometry.widths[3]
        );
        for case in &self.cases {
            let _ = writeln!(
                s,
                "\ndetection diameter {:.6} (smoothing radius {:.6})",
                case.diameter, case.radius
            );
            let _ = writeln!(
                s,
                "  peak smoothed density:    {:.4} {:.4} {:.4} {:.4}",
                case.peaks[0], case.peaks[1], case.peaks[2], case.peaks[3]
            );
            let _ = writeln!(
                s,
                "  isolated-strip reference: {:.4} {:.4} {:.4} {:.4}",
                case.expected_isolated[0],
                case.expected_isolated[1],
                case.expected_isolated[2],
                case.expected_isolated[3]
            );
            for row in &case.coverage {
                let _ = writeln!(
                    s,
                    "  coverage at threshold {:.2} bandwidth {:.3}: {:.3} {:.3} {:.3} {:.3}",
                    row.threshold,
                    row.bandwidth,
                    row.coverage[0],
                    row.coverage[1],
                    row.coverage[2],
                    row.coverage[3]
                );
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::config::ProblemKind;

    fn report() -> StripReport {
        let mut cfg = RunConfig::defaults(ProblemKind::Cantilever2d);
        cfg.min_diameter = 0.05;
        cfg.max_diameter = 0.1;
        diagnostic_strips(&cfg).unwrap()
    }

    #[test]
    fn peaks_match_the_isolated_strip_reference() {
        let report = report();
        for case in &report.cases {
            for (peak, expected) in case.peaks.iter().zip(case.expected_isolated) {
                let rel = (peak - expected).abs() / expected;
                assert!(
                    rel < 0.03,
                    "diameter {}: peak {peak} vs isolated reference {expected}",
                    case.diameter
                );
            }
        }
    }

    #[test]
    fn peaks_decrease_as_the_detection_diameter_grows() {
        let report = report();
        for s in 0..4 {
            for pair in report.cases.windows(2) {
                assert!(
                    pair[1].peaks[s] < pair[0].peaks[s],
                    "strip {s}: {} !< {}",
                    pair[1].peaks[s],
                    pair[0].peaks[s]
                );
            }
        }
    }

    #[test]
    fn moderate_detector_flags_only_the_oversized_strip() {
        let report = report();
        // Detection diameter twice the minimum feature size, threshold
        // 0.90, bandwidth 0.05.
        let case = &report.cases[1];
        assert!((case.diameter / report.geometry.widths[2] - 2.0).abs() < 1e-12);
        let row = case
            .coverage
            .iter()
            .find(|r| r.threshold == 0.90)
            .expect("0.90 settings present");
        assert!(row.coverage[0] > 0.5, "4x strip coverage {}", row.coverage[0]);
        assert!(row.coverage[2] < 0.01, "1x strip coverage {}", row.coverage[2]);
        assert!(row.coverage[3] < 0.01, "0.5x strip coverage {}", row.coverage[3]);
    }

    #[test]
    fn gap_field_decays_far_below_every_strip_peak() {
        let report = report();
        // Each gap midpoint lies 3.5 diameters from both neighbors, deep
        // in the exponential tail at every detection radius.
        let gap_mid =
            0.5 * (report.geometry.intervals[0].1 + report.geometry.intervals[1].0);
        for case in &report.cases {
            let mut mid_value = 0.0f64;
            for i in 0..report.mesh.node_count() {
                let x = report.mesh.node_position(i)[0];
                if (x - gap_mid).abs() < report.geometry.widths[3] {
                    mid_value = mid_value.max(case.rho_bar.values()[i]);
                }
            }
            let bound = if case.diameter < 2.5 * report.geometry.widths[2] { 0.01 } else { 0.1 };
            assert!(
                mid_value < bound,
                "diameter {}: mid-gap value {mid_value} above {bound}",
                case.diameter
            );
            let lowest_peak = case.peaks.iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(mid_value < 0.3 * lowest_peak, "valley {mid_value} vs peak {lowest_peak}");
        }
    }

    #[test]
    fn table_renders_every_case() {
        let report = report();
        let table = report.render_table();
        assert_eq!(table.matches("detection diameter").count(), 3);
        assert_eq!(table.matches("coverage at threshold").count(), 9);
    }
}
