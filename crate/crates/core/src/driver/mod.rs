//! End-to-end optimization runs.
//!
//! The driver ties the other modules together: it builds a built-in load
//! case from a [`RunConfig`], walks the optimize/adapt loop, logs one CSV
//! row per iteration, writes mesh snapshots, and reports how the run
//! ended.  A strip-pattern diagnostic for the size detector lives in
//! [`strips`].
//!
//! Runs are deterministic: the same config produces bitwise-identical
//! logs, snapshots, and final fields, with the single exception of the
//! wall-clock seconds column in the log.

pub mod config;
mod problems;
pub mod strips;
pub mod vtk;

pub use config::{load_config, load_config_str, serialize_config, ProblemKind, RunConfig};
pub use strips::{diagnostic_strips, CoverageRow, StripCase, StripGeometry, StripReport};
pub use vtk::{export_vtk, read_vtk_summary, VtkSummary};

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::PathBuf;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::NodalField;
use crate::filter::{FeatureSizeSpec, FilterOperator};
use crate::mesh::{transfer_field, SimplicialMesh};
use crate::objectives::{evaluate, ConstraintSpec, DesignState, PipelineParams};
use crate::optimizer::{mma_update, MmaParams, MmaState, SchedulePoint, TerminationMonitor, Verdict};

/// One completed iteration, as logged.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub iter: usize,
    /// Compliance objective.
    pub compliance: f64,
    /// Volume constraint value (feasible at or below zero).
    pub volume: f64,
    /// Maximum-size constraint value (feasible at or below zero).
    pub maxsize: f64,
    /// Largest smoothed density anywhere, a quick oversize indicator.
    pub max_rho_bar: f64,
    pub elements: usize,
    /// Wall-clock seconds since the run started.
    pub seconds: f64,
}

impl LogRow {
    pub const CSV_HEADER: &'static str = "iter,F,g1,g2,max_rhobar,elements,seconds";

    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.iter,
            self.compliance,
            self.volume,
            self.maxsize,
            self.max_rho_bar,
            self.elements,
            self.seconds
        )
    }
}

/// Why the loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// The termination rule saw enough consecutive quiet iterations.
    Converged,
    /// The iteration cap was reached first.
    IterationLimit,
}

impl std::fmt::Display for StopReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StopReason::Converged => write!(f, "converged"),
            StopReason::IterationLimit => write!(f, "iteration limit"),
        }
    }
}

/// What a finished run hands back.
#[derive(Debug)]
pub struct RunResult {
    /// The mesh the final design lives on.
    pub mesh: SimplicialMesh,
    /// The design at the last evaluated iterate.
    pub state: DesignState,
    pub log: Vec<LogRow>,
    pub stop: StopReason,
    /// Files written, log first, snapshots in iteration order.
    pub artifacts: Vec<PathBuf>,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, &x| a.max(x.abs()))
}

/// The uniform initial design at the volume bound, optionally perturbed by
/// seeded noise so distinct seeds explore distinct basins.
fn initial_phi(mesh: &SimplicialMesh, cfg: &RunConfig) -> NodalField {
    let base = 2.0 * cfg.volume_bound - 1.0;
    let mut values = vec![base; mesh.node_count()];
    if cfg.init_noise > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for v in &mut values {
            *v += cfg.init_noise * (2.0 * rng.gen::<f64>() - 1.0);
        }
    }
    NodalField::new(values, mesh).expect("sized against this mesh").with_bounds(-1.0, 1.0)
}

/// Runs one optimization from scratch.
///
/// Writes `log.csv` (one row per completed iteration), `design_NNNN.vtk`
/// snapshots on the snapshot cadence, and `final.vtk`.  If any step fails
/// the log rows written so far are already on disk and a `failure.txt`
/// with the error joins them; the error is returned as-is.
pub fn run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(cfg.out_dir.clone(), e))?;
    let log_path = cfg.out_dir.join("log.csv");
    let log_file = File::create(&log_path).map_err(|e| Error::io(log_path.clone(), e))?;
    let mut log_file = BufWriter::new(log_file);

    let mut artifacts = vec![log_path.clone()];
    let mut rows: Vec<LogRow> = Vec::new();

    let outcome = run_loop(cfg, &mut log_file, &log_path, &mut artifacts, &mut rows);
    let _ = log_file.flush();
    match outcome {
        Ok((mesh, state, stop)) => {
            Ok(RunResult { mesh, state, log: rows, stop, artifacts })
        }
        Err(err) => {
            let failure_path = cfg.out_dir.join("failure.txt");
            let _ = std::fs::write(&failure_path, format!("{err}\n"));
            Err(err)
        }
    }
}

fn run_loop(
    cfg: &RunConfig,
    log_file: &mut BufWriter<File>,
    log_path: &PathBuf,
    artifacts: &mut Vec<PathBuf>,
    rows: &mut Vec<LogRow>,
) -> Result<(SimplicialMesh, DesignState, StopReason)> {
    let io_err = |e: std::io::Error| Error::io(log_path.clone(), e);
    writeln!(log_file, "{}", LogRow::CSV_HEADER).map_err(io_err)?;

    let setup = problems::build_setup(cfg)?;
    let mut mesh = setup.mesh;
    let mut problem = setup.problem;

    let sizes = FeatureSizeSpec {
        min_diameter: cfg.min_diameter,
        max_diameter: cfg.max_diameter,
    };
    sizes.validate()?;
    let domain_volume = mesh.domain().volume();
    let spec = ConstraintSpec {
        volume_bound: cfg.volume_bound,
        threshold: cfg.threshold,
        bandwidth: cfg.bandwidth,
        penalty_exponent: cfg.penalty_exponent,
        violation_bound: cfg.violation_fraction * domain_volume,
        domain_volume,
    };

    // The detection radius is calibrated at the detector's onset, not its
    // center: a member exactly at the maximum diameter then peaks at
    // threshold - bandwidth and carries zero measure, so designs that
    // respect the size limit keep a feasibility margin and only genuinely
    // oversized members are penalized.
    let detect_level = cfg.threshold - cfg.bandwidth;
    let build_filters = |mesh: &SimplicialMesh| -> Result<(FilterOperator, FilterOperator)> {
        let design = FilterOperator::new(mesh, sizes.min_radius())?.with_solve_tol(cfg.solve_tol)?;
        let detect = FilterOperator::new(mesh, sizes.detection_radius(detect_level)?)?
            .with_solve_tol(cfg.solve_tol)?;
        Ok((design, detect))
    };
    let (mut design_filter, mut detect_filter) = build_filters(&mesh)?;

    let mut phi = initial_phi(&mesh, cfg);
    let mut mma = MmaState::new(mesh.node_count());
    let mma_params = MmaParams { move_limit: cfg.move_limit, ..MmaParams::default() };
    let mut monitor = TerminationMonitor::new(cfg.termination_rule());
    let mut warm: Option<Vec<f64>> = None;

    let t0 = Instant::now();
    let mut last_state: Option<DesignState> = None;
    let mut stop = StopReason::IterationLimit;
    let mut prev_point: Option<SchedulePoint> = None;

    for iter in 0..cfg.max_iters {
        let point = cfg.schedule.at(iter);
        // A schedule change redefines the landscape: asymptote history
        // from the previous stage would overstate the trust region, and
        // the first step under the new objective needs extra caution.
        let stage_changed = prev_point.is_some_and(|p| p != point);
        if stage_changed {
            mma = MmaState::new(mesh.node_count());
        }
        prev_point = Some(point);
        problem.simp_penalty = point.penalty;
        let params = PipelineParams {
            sharpness: point.sharpness,
            sharpness_geometric: point.sharpness_geometric,
            solve_tol: cfg.solve_tol,
        };

        let ev = evaluate(
            &mesh,
            &phi,
            &problem,
            &spec,
            &design_filter,
            &detect_filter,
            &params,
            warm.as_deref(),
        )?;
        warm = Some(ev.displacement.clone());

        let row = LogRow {
            iter,
            compliance: ev.compliance,
            volume: ev.volume,
            maxsize: ev.maxsize,
            max_rho_bar: ev.max_rho_bar,
            elements: mesh.element_count(),
            seconds: t0.elapsed().as_secs_f64(),
        };
        writeln!(log_file, "{}", row.to_csv()).map_err(io_err)?;
        log_file.flush().map_err(io_err)?;
        rows.push(row);

        if iter % cfg.snapshot_every == 0 {
            let indicator = mesh.error_indicator(&ev.state.rho, cfg.adapt.solid_bias)?;
            let snap_path = cfg.out_dir.join(format!("design_{iter:04}.vtk"));
            export_vtk(&snap_path, &mesh, &ev.state, &indicator)?;
            artifacts.push(snap_path);
        }

        // The update step.  Only the objective gradient is rescaled (to
        // unit max-norm) so the dual multipliers stay well inside the
        // elastic cap regardless of the problem's physical scales.  The
        // constraints keep their natural scale: rescaling them each
        // iteration would inflate the violation whenever a constraint
        // gradient happens to be small, provoking violent corrections.
        let obj_scale = 1.0 / inf_norm(&ev.grad_compliance).max(1e-300);
        let grad_objective: Vec<f64> =
            ev.grad_compliance.iter().map(|g| g * obj_scale).collect();

        let mut constraints: Vec<(f64, &[f64])> = vec![(ev.volume, &ev.grad_volume)];
        if cfg.maxsize_enabled {
            constraints.push((ev.maxsize, &ev.grad_maxsize));
        }

        // The projection linearization is only trustworthy for steps
        // small compared to the transition band, so the move limit
        // shrinks once the sharpness passes the reference value; the
        // first step after a schedule change is more cautious still.
        const SHARPNESS_MOVE_REF: f64 = 16.0;
        let mut move_factor = (SHARPNESS_MOVE_REF / point.sharpness).min(1.0);
        if stage_changed {
            move_factor *= 0.25;
        }
        let step_params = MmaParams {
            move_limit: move_factor * mma_params.move_limit,
            ..mma_params
        };
        let step = mma_update(
            &mut mma,
            phi.values(),
            &grad_objective,
            &constraints,
            -1.0,
            1.0,
            &step_params,
        )?;
        let max_step = phi
            .values()
            .iter()
            .zip(&step.x)
            .fold(0.0f64, |a, (old, new)| a.max((new - old).abs()));

        let verdict = monitor.observe(iter, ev.compliance, max_step);
        last_state = Some(ev.state);
        match verdict {
            Verdict::Continue => {}
            Verdict::Converged => {
                stop = StopReason::Converged;
                break;
            }
            Verdict::IterationLimit => break,
        }
        phi = phi.same_shape(step.x);

        // Adaptation cadence: refine along the current material interface,
        // coarsen the rest, then carry the design over and restart the
        // optimizer's history on the new mesh.
        let due = cfg.remesh_every > 0 && (iter + 1) % cfg.remesh_every == 0;
        if due {
            let state = last_state.as_ref().expect("set this iteration");
            let indicator = mesh.error_indicator(&state.rho, cfg.adapt.solid_bias)?;
            let refined = mesh.adapt(&indicator, &cfg.adapt)?;
            phi = transfer_field(&phi, &mesh, &refined)?;
            mesh = refined;
            let (design, detect) = build_filters(&mesh)?;
            design_filter = design;
            detect_filter = detect;
            mma = MmaState::new(mesh.node_count());
            monitor.interrupt();
            warm = None;
        }
    }

    let state = last_state.expect("max_iters is validated positive");
    let indicator = mesh.error_indicator(&state.rho, cfg.adapt.solid_bias)?;
    let final_path = cfg.out_dir.join("final.vtk");
    export_vtk(&final_path, &mesh, &state, &indicator)?;
    artifacts.push(final_path);

    Ok((mesh, state, stop))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::driver::config::ProblemKind;

    /// A small, fast configuration used by most loop tests.
    fn tiny_cfg(dir: &std::path::Path) -> RunConfig {
        let mut cfg = RunConfig::defaults(ProblemKind::Cantilever2d);
        cfg.resolution = 12;
        cfg.min_diameter = 0.4;
        cfg.max_diameter = 0.8;
        cfg.max_iters = 6;
        cfg.remesh_every = 0;
        cfg.snapshot_every = 3;
        cfg.solve_tol = 1e-8;
        cfg.out_dir = dir.to_path_buf();
        cfg
    }

    #[test]
    fn short_run_logs_every_iteration_and_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        let result = run(&cfg).unwrap();

        assert_eq!(result.log.len(), 6);
        for (i, row) in result.log.iter().enumerate() {
            assert_eq!(row.iter, i);
            assert!(row.compliance.is_finite() && row.compliance > 0.0);
            assert!(row.elements > 0);
        }
        assert_eq!(result.stop, StopReason::IterationLimit);

        let csv = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), LogRow::CSV_HEADER);
        assert_eq!(lines.count(), 6);

        assert!(dir.path().join("design_0000.vtk").exists());
        assert!(dir.path().join("design_0003.vtk").exists());
        assert!(dir.path().join("final.vtk").exists());
        assert!(result.artifacts.iter().any(|p| p.ends_with("final.vtk")));
    }

    #[test]
    fn identical_configs_reproduce_logs_and_fields_exactly() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg_a = tiny_cfg(dir_a.path());
        cfg_a.init_noise = 0.05;
        cfg_a.seed = 7;
        cfg_a.remesh_every = 2;
        let mut cfg_b = cfg_a.clone();
        cfg_b.out_dir = dir_b.path().to_path_buf();

        let a = run(&cfg_a).unwrap();
        let b = run(&cfg_b).unwrap();

        assert_eq!(a.log.len(), b.log.len());
        for (ra, rb) in a.log.iter().zip(&b.log) {
            // Bitwise equality everywhere except the wall-clock column.
            assert_eq!(ra.compliance.to_bits(), rb.compliance.to_bits());
            assert_eq!(ra.volume.to_bits(), rb.volume.to_bits());
            assert_eq!(ra.maxsize.to_bits(), rb.maxsize.to_bits());
            assert_eq!(ra.max_rho_bar.to_bits(), rb.max_rho_bar.to_bits());
            assert_eq!(ra.elements, rb.elements);
        }
        assert_eq!(a.state.rho.values(), b.state.rho.values());
        assert_eq!(a.state.phi.values(), b.state.phi.values());

        // Snapshot bytes match too; only the log contains wall time.
        let va = std::fs::read(dir_a.path().join("final.vtk")).unwrap();
        let vb = std::fs::read(dir_b.path().join("final.vtk")).unwrap();
        assert_eq!(va, vb);
    }

    #[test]
    fn adaptation_cadence_changes_the_mesh_and_resets_cleanly() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path());
        cfg.remesh_every = 2;
        cfg.max_iters = 5;
        let result = run(&cfg).unwrap();
        let elements: Vec<usize> = result.log.iter().map(|r| r.elements).collect();
        // Counts change on the cadence and rows keep coming afterwards.
        assert_eq!(result.log.len(), 5);
        assert!(
            elements.windows(2).any(|w| w[0] != w[1]),
            "element counts never changed: {elements:?}"
        );
        assert_eq!(result.state.phi.values().len(), result.mesh.node_count());
    }

    #[test]
    fn disabled_maxsize_still_logs_the_constraint() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_cfg(dir.path());
        cfg.maxsize_enabled = false;
        cfg.max_iters = 2;
        let result = run(&cfg).unwrap();
        for row in &result.log {
            assert!(row.maxsize.is_finite());
        }
    }

    #[test]
    fn failing_run_flushes_log_and_failure_record() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_cfg(dir.path());
        // Occupying the first snapshot path with a directory makes the
        // iteration-zero snapshot fail after the first log row is written.
        std::fs::create_dir(dir.path().join("design_0000.vtk")).unwrap();
        let err = run(&cfg).unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
        assert!(err.to_string().contains("design_0000.vtk"), "{err}");

        let csv = std::fs::read_to_string(dir.path().join("log.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], LogRow::CSV_HEADER);
        assert_eq!(lines.len(), 2, "one data row flushed before the failure");

        let failure = std::fs::read_to_string(dir.path().join("failure.txt")).unwrap();
        assert!(failure.contains("design_0000.vtk"), "{failure}");
    }

    #[test]
    fn seeds_change_the_initial_design() {
        let domain_cfg = RunConfig::defaults(ProblemKind::Cantilever2d);
        let mesh = SimplicialMesh::build_structured(
            domain_cfg.problem.domain(),
            &[8, 4],
        )
        .unwrap();
        let mut cfg = domain_cfg.clone();
        cfg.init_noise = 0.1;
        cfg.seed = 1;
        let a = initial_phi(&mesh, &cfg);
        cfg.seed = 2;
        let b = initial_phi(&mesh, &cfg);
        assert_ne!(a.values(), b.values());
        for v in a.values() {
            assert!((-1.0..=1.0).contains(v));
        }

        cfg.init_noise = 0.0;
        let c = initial_phi(&mesh, &cfg);
        assert!(c.values().iter().all(|&v| v == 0.0));
    }
}
