//! Run configuration.
//!
//! Configs are plain text, one `key = value` pair per line.  `#` starts a
//! comment, blank lines are skipped, keys are dotted lowercase.  The only
//! required key is `problem`; every other key falls back to a per-problem
//! default.  Unknown keys and duplicate keys are hard errors so a typo
//! cannot silently change a run.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::mesh::{AdaptConfig, DomainBox};
use crate::optimizer::{ContinuationSchedule, MmaParams, TerminationRule};

/// Built-in load cases.  Each one fixes the domain box, the supports, and
/// the applied loads; everything else comes from the config.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    /// 2 x 1 rectangle, left edge clamped, downward load on a short band
    /// at mid-height of the right edge.
    Cantilever2d,
    /// 2 x 1 rectangle, bottom edge clamped, tangential load along the top.
    ShearedBeam,
    /// Unit cube, left face clamped, twisting load about the center of the
    /// right face.
    TwistedBall,
    /// Unit cube, bottom face clamped, downward loads on two side faces.
    MultiCube,
}

impl ProblemKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cantilever_2d" => Some(ProblemKind::Cantilever2d),
            "sheared_beam" => Some(ProblemKind::ShearedBeam),
            "twisted_ball" => Some(ProblemKind::TwistedBall),
            "multi_cube" => Some(ProblemKind::MultiCube),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Cantilever2d => "cantilever_2d",
            ProblemKind::ShearedBeam => "sheared_beam",
            ProblemKind::TwistedBall => "twisted_ball",
            ProblemKind::MultiCube => "multi_cube",
        }
    }

    pub fn dimension(self) -> usize {
        match self {
            ProblemKind::Cantilever2d | ProblemKind::ShearedBeam => 2,
            ProblemKind::TwistedBall | ProblemKind::MultiCube => 3,
        }
    }

    /// The domain box the problem is posed on.
    pub fn domain(self) -> DomainBox {
        match self.dimension() {
            2 => DomainBox::rect([0.0, 0.0], [2.0, 1.0]).expect("static domain"),
            _ => DomainBox::cuboid([0.0, 0.0, 0.0], [1.0, 1.0, 1.0]).expect("static domain"),
        }
    }
}

/// Everything a run needs beyond the built-in problem geometry.
///
/// Field doc comments give the config key; `serialize_config` writes the
/// full key set so a dumped config is self-documenting.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// `problem`
    pub problem: ProblemKind,
    /// `mesh.resolution`: cells along the longest domain axis; other axes
    /// scale by extent.
    pub resolution: usize,
    /// `mesh.remesh_every`: iterations between adaptation passes, 0 keeps
    /// the mesh fixed.
    pub remesh_every: usize,
    /// `mesh.solid_bias`, `mesh.growth_rate`, `mesh.refine_fraction`,
    /// `mesh.coarsen_fraction`, `mesh.min_level`, `mesh.max_level`
    pub adapt: AdaptConfig,
    /// `material.youngs_modulus`
    pub youngs_modulus: f64,
    /// `material.poisson_ratio`
    pub poisson_ratio: f64,
    /// `material.rho_min`
    pub rho_min: f64,
    /// `feature.min_diameter`: diameter of the smallest feature the design
    /// smoothing admits.
    pub min_diameter: f64,
    /// `feature.max_diameter`: diameter above which the size constraint
    /// flags a region as oversized.
    pub max_diameter: f64,
    /// `constraint.volume_bound`: material volume fraction bound.
    pub volume_bound: f64,
    /// `constraint.threshold`: detector center on smoothed density.
    pub threshold: f64,
    /// `constraint.bandwidth`: detector half-width.
    pub bandwidth: f64,
    /// `constraint.penalty_exponent`: exponent on density in the oversize
    /// measure.
    pub penalty_exponent: f64,
    /// `constraint.violation_fraction`: allowed oversize measure as a
    /// fraction of the domain volume.
    pub violation_fraction: f64,
    /// `constraint.maxsize_enabled`: whether the optimizer enforces the
    /// maximum-size constraint (it is always logged).
    pub maxsize_enabled: bool,
    /// `schedule.cadence`, `schedule.penalty_final`,
    /// `schedule.sharpness_init`, `schedule.sharpness_max`,
    /// `schedule.geometric_factor`, `schedule.geometric_max`
    pub schedule: ContinuationSchedule,
    /// `optimizer.move_limit`
    pub move_limit: f64,
    /// `optimizer.max_iters`
    pub max_iters: usize,
    /// `optimizer.objective_tol`
    pub objective_tol: f64,
    /// `optimizer.step_tol`
    pub step_tol: f64,
    /// `optimizer.quiet_iters`
    pub quiet_iters: usize,
    /// `solver.tolerance`: relative residual tolerance for every linear
    /// solve.
    pub solve_tol: f64,
    /// `init.seed`
    pub seed: u64,
    /// `init.noise`: amplitude of the random perturbation added to the
    /// uniform initial design.
    pub init_noise: f64,
    /// `output.directory`
    pub out_dir: PathBuf,
    /// `output.snapshot_every`
    pub snapshot_every: usize,
}

impl RunConfig {
    /// The full default configuration for one problem.
    pub fn defaults(problem: ProblemKind) -> Self {
        let (resolution, volume_bound, min_diameter, max_diameter) = match problem {
            ProblemKind::Cantilever2d => (50, 0.5, 0.16, 0.32),
            ProblemKind::ShearedBeam => (50, 0.4, 0.16, 0.32),
            ProblemKind::TwistedBall => (12, 0.3, 0.35, 0.7),
            ProblemKind::MultiCube => (12, 0.3, 0.35, 0.7),
        };
        RunConfig {
            problem,
            resolution,
            remesh_every: 10,
            adapt: AdaptConfig::default(),
            youngs_modulus: 1.0,
            poisson_ratio: 0.3,
            rho_min: 1e-6,
            min_diameter,
            max_diameter,
            volume_bound,
            threshold: 0.9,
            bandwidth: 0.05,
            penalty_exponent: 2.0,
            violation_fraction: 1e-3,
            maxsize_enabled: true,
            schedule: ContinuationSchedule::default(),
            move_limit: MmaParams::default().move_limit,
            max_iters: 100,
            objective_tol: 1e-4,
            step_tol: 1e-3,
            quiet_iters: 3,
            solve_tol: 1e-8,
            seed: 0,
            init_noise: 0.0,
            out_dir: PathBuf::from("out"),
            snapshot_every: 10,
        }
    }

    /// The termination rule the run loop feeds to its monitor.
    pub fn termination_rule(&self) -> TerminationRule {
        TerminationRule {
            objective_tol: self.objective_tol,
            step_tol: self.step_tol,
            required_quiet: self.quiet_iters,
            max_iters: self.max_iters,
        }
    }

    /// Checks every field against its validity range.  Messages use the
    /// config key names so a bad file is easy to fix.
    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::InvalidParameter(format!(
                "mesh.resolution must be at least 2, got {}",
                self.resolution
            )));
        }
        self.adapt.validate()?;
        if !(self.youngs_modulus > 0.0) || !self.youngs_modulus.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "material.youngs_modulus must be positive, got {}",
                self.youngs_modulus
            )));
        }
        if !(0.0..0.5).contains(&self.poisson_ratio) {
            return Err(Error::InvalidParameter(format!(
                "material.poisson_ratio must lie in [0, 0.5), got {}",
                self.poisson_ratio
            )));
        }
        if !(self.rho_min > 0.0 && self.rho_min < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "material.rho_min must lie in (0, 1), got {}",
                self.rho_min
            )));
        }
        if !(self.min_diameter > 0.0) || !self.min_diameter.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "feature.min_diameter must be positive, got {}",
                self.min_diameter
            )));
        }
        if !(self.max_diameter > self.min_diameter) {
            return Err(Error::InvalidParameter(format!(
                "feature sizes violate the invariant min_diameter < max_diameter: \
                 feature.min_diameter = {}, feature.max_diameter = {}",
                self.min_diameter, self.max_diameter
            )));
        }
        let domain = self.problem.domain();
        let smallest = (0..domain.dim()).map(|a| domain.extent(a)).fold(f64::INFINITY, f64::min);
        if !(self.max_diameter < smallest) {
            return Err(Error::InvalidParameter(format!(
                "feature.max_diameter = {} violates the invariant \
                 max_diameter < smallest domain extent ({} for problem {})",
                self.max_diameter,
                smallest,
                self.problem.name()
            )));
        }
        if !(self.volume_bound > 0.0 && self.volume_bound < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "constraint.volume_bound must lie in (0, 1), got {}",
                self.volume_bound
            )));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "constraint.threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if !(self.bandwidth > 0.0 && self.threshold + self.bandwidth < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "constraint.bandwidth must be positive with threshold + bandwidth < 1, \
                 got threshold = {}, bandwidth = {}",
                self.threshold, self.bandwidth
            )));
        }
        // The detection radius is calibrated at the detector onset, which
        // must be a positive response level.
        if !(self.bandwidth < self.threshold) {
            return Err(Error::InvalidParameter(format!(
                "constraint.bandwidth must be smaller than constraint.threshold, \
                 got threshold = {}, bandwidth = {}",
                self.threshold, self.bandwidth
            )));
        }
        if !(self.penalty_exponent >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "constraint.penalty_exponent must be at least 1, got {}",
                self.penalty_exponent
            )));
        }
        if !(self.violation_fraction > 0.0 && self.violation_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "constraint.violation_fraction must lie in (0, 1), got {}",
                self.violation_fraction
            )));
        }
        self.schedule.validate()?;
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "optimizer.move_limit must lie in (0, 1], got {}",
                self.move_limit
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "optimizer.max_iters must be positive".into(),
            ));
        }
        if !(self.objective_tol > 0.0) || !(self.step_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "optimizer tolerances must be positive, got objective_tol = {}, step_tol = {}",
                self.objective_tol, self.step_tol
            )));
        }
        if self.quiet_iters == 0 {
            return Err(Error::InvalidParameter(
                "optimizer.quiet_iters must be positive".into(),
            ));
        }
        if !(self.solve_tol > 0.0 && self.solve_tol < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "solver.tolerance must lie in (0, 1), got {}",
                self.solve_tol
            )));
        }
        if !(0.0..1.0).contains(&self.init_noise) {
            return Err(Error::InvalidParameter(format!(
                "init.noise must lie in [0, 1), got {}",
                self.init_noise
            )));
        }
        if self.out_dir.as_os_str().is_empty() {
            return Err(Error::InvalidParameter(
                "output.directory must not be empty".into(),
            ));
        }
        if self.snapshot_every == 0 {
            return Err(Error::InvalidParameter(
                "output.snapshot_every must be positive".into(),
            ));
        }
        Ok(())
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "mesh.resolution" => self.resolution = parse_usize(key, value, line)?,
            "mesh.remesh_every" => self.remesh_every = parse_usize(key, value, line)?,
            "mesh.solid_bias" => self.adapt.solid_bias = parse_f64(key, value, line)?,
            "mesh.growth_rate" => self.adapt.growth_rate = parse_f64(key, value, line)?,
            "mesh.refine_fraction" => self.adapt.refine_fraction = parse_f64(key, value, line)?,
            "mesh.coarsen_fraction" => self.adapt.coarsen_fraction = parse_f64(key, value, line)?,
            "mesh.min_level" => self.adapt.min_level = parse_u32(key, value, line)?,
            "mesh.max_level" => self.adapt.max_level = parse_u32(key, value, line)?,
            "material.youngs_modulus" => self.youngs_modulus = parse_f64(key, value, line)?,
            "material.poisson_ratio" => self.poisson_ratio = parse_f64(key, value, line)?,
            "material.rho_min" => self.rho_min = parse_f64(key, value, line)?,
            "feature.min_diameter" => self.min_diameter = parse_f64(key, value, line)?,
            "feature.max_diameter" => self.max_diameter = parse_f64(key, value, line)?,
            "constraint.volume_bound" => self.volume_bound = parse_f64(key, value, line)?,
            "constraint.threshold" => self.threshold = parse_f64(key, value, line)?,
            "constraint.bandwidth" => self.bandwidth = parse_f64(key, value, line)?,
            "constraint.penalty_exponent" => {
                self.penalty_exponent = parse_f64(key, value, line)?
            }
            "constraint.violation_fraction" => {
                self.violation_fraction = parse_f64(key, value, line)?
            }
            "constraint.maxsize_enabled" => {
                self.maxsize_enabled = parse_bool(key, value, line)?
            }
            "schedule.cadence" => self.schedule.cadence = parse_usize(key, value, line)?,
            "schedule.penalty_final" => self.schedule.penalty_final = parse_f64(key, value, line)?,
            "schedule.sharpness_init" => {
                self.schedule.sharpness_init = parse_f64(key, value, line)?
            }
            "schedule.sharpness_max" => self.schedule.sharpness_max = parse_f64(key, value, line)?,
            "schedule.geometric_factor" => {
                self.schedule.geometric_factor = parse_f64(key, value, line)?
            }
            "schedule.geometric_max" => self.schedule.geometric_max = parse_f64(key, value, line)?,
            "optimizer.move_limit" => self.move_limit = parse_f64(key, value, line)?,
            "optimizer.max_iters" => self.max_iters = parse_usize(key, value, line)?,
            "optimizer.objective_tol" => self.objective_tol = parse_f64(key, value, line)?,
            "optimizer.step_tol" => self.step_tol = parse_f64(key, value, line)?,
            "optimizer.quiet_iters" => self.quiet_iters = parse_usize(key, value, line)?,
            "solver.tolerance" => self.solve_tol = parse_f64(key, value, line)?,
            "init.seed" => self.seed = parse_u64(key, value, line)?,
            "init.noise" => self.init_noise = parse_f64(key, value, line)?,
            "output.directory" => {
                if value.is_empty() {
                    return Err(Error::Config {
                        line,
                        message: "output.directory must not be empty".into(),
                    });
                }
                self.out_dir = PathBuf::from(value);
            }
            "output.snapshot_every" => self.snapshot_every = parse_usize(key, value, line)?,
            _ => {
                return Err(Error::Config { line, message: format!("unknown key '{key}'") });
            }
        }
        Ok(())
    }
}

fn parse_f64(key: &str, value: &str, line: usize) -> Result<f64> {
    value.parse::<f64>().map_err(|_| Error::Config {
        line,
        message: format!("value for '{key}' must be a number, got '{value}'"),
    })
}

fn parse_usize(key: &str, value: &str, line: usize) -> Result<usize> {
    value.parse::<usize>().map_err(|_| Error::Config {
        line,
        message: format!("value for '{key}' must be a non-negative integer, got '{value}'"),
    })
}

fn parse_u32(key: &str, value: &str, line: usize) -> Result<u32> {
    value.parse::<u32>().map_err(|_| Error::Config {
        line,
        message: format!("value for '{key}' must be a non-negative integer, got '{value}'"),
    })
}

fn parse_u64(key: &str, value: &str, line: usize) -> Result<u64> {
    value.parse::<u64>().map_err(|_| Error::Config {
        line,
        message: format!("value for '{key}' must be a non-negative integer, got '{value}'"),
    })
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config {
            line,
            message: format!("value for '{key}' must be 'true' or 'false', got '{value}'"),
        }),
    }
}

/// Parses a config from text.  Keys may come in any order; `problem` is
/// resolved first so the remaining keys override its defaults.
pub fn load_config_str(text: &str) -> Result<RunConfig> {
    // (line number, key, value) for every non-blank, non-comment line.
    let mut pairs: Vec<(usize, &str, &str)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                line,
                message: format!("expected 'key = value', got '{content}'"),
            });
        };
        pairs.push((line, key.trim(), value.trim()));
    }

    let mut seen: HashMap<&str, usize> = HashMap::new();
    for &(line, key, _) in &pairs {
        if let Some(&first) = seen.get(key) {
            return Err(Error::Config {
                line,
                message: format!("duplicate key '{key}' (already set at line {first})"),
            });
        }
        seen.insert(key, line);
    }

    let mut cfg = match pairs.iter().find(|&&(_, k, _)| k == "problem") {
        Some(&(line, _, value)) => match ProblemKind::parse(value) {
            Some(kind) => RunConfig::defaults(kind),
            None => {
                return Err(Error::Config {
                    line,
                    message: format!(
                        "unknown problem '{value}'; expected one of cantilever_2d, \
                         sheared_beam, twisted_ball, multi_cube"
                    ),
                });
            }
        },
        None => {
            return Err(Error::InvalidParameter(
                "config is missing the required key 'problem'".into(),
            ));
        }
    };

    for &(line, key, value) in &pairs {
        if key == "problem" {
            continue;
        }
        cfg.apply(key, value, line)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Reads and parses a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_config_str(&text)
}

/// Writes the full key set in a fixed order.  The output parses back to an
/// identical config, so dumps double as documentation of every default.
pub fn serialize_config(cfg: &RunConfig) -> String {
    let mut s = String::new();
    let mut push = |k: &str, v: String| {
        s.push_str(k);
        s.push_str(" = ");
        s.push_str(&v);
        s.push('\n');
    };
    push("problem", cfg.problem.name().to_string());
    push("mesh.resolution", cfg.resolution.to_string());
    push("mesh.remesh_every", cfg.remesh_every.to_string());
    push("mesh.solid_bias", cfg.adapt.solid_bias.to_string());
    push("mesh.growth_rate", cfg.adapt.growth_rate.to_string());
    push("mesh.refine_fraction", cfg.adapt.refine_fraction.to_string());
    push("mesh.coarsen_fraction", cfg.adapt.coarsen_fraction.to_string());
    push("mesh.min_level", cfg.adapt.min_level.to_string());
    push("mesh.max_level", cfg.adapt.max_level.to_string());
    push("material.youngs_modulus", cfg.youngs_modulus.to_string());
    push("material.poisson_ratio", cfg.poisson_ratio.to_string());
    push("material.rho_min", cfg.rho_min.to_string());
    push("feature.min_diameter", cfg.min_diameter.to_string());
    push("feature.max_diameter", cfg.max_diameter.to_string());
    push("constraint.volume_bound", cfg.volume_bound.to_string());
    push("constraint.threshold", cfg.threshold.to_string());
    push("constraint.bandwidth", cfg.bandwidth.to_string());
    push("constraint.penalty_exponent", cfg.penalty_exponent.to_string());
    push("constraint.violation_fraction", cfg.violation_fraction.to_string());
    push("constraint.maxsize_enabled", cfg.maxsize_enabled.to_string());
    push("schedule.cadence", cfg.schedule.cadence.to_string());
    push("schedule.penalty_final", cfg.schedule.penalty_final.to_string());
    push("schedule.sharpness_init", cfg.schedule.sharpness_init.to_string());
    push("schedule.sharpness_max", cfg.schedule.sharpness_max.to_string());
    push("schedule.geometric_factor", cfg.schedule.geometric_factor.to_string());
    push("schedule.geometric_max", cfg.schedule.geometric_max.to_string());
    push("optimizer.move_limit", cfg.move_limit.to_string());
    push("optimizer.max_iters", cfg.max_iters.to_string());
    push("optimizer.objective_tol", cfg.objective_tol.to_string());
    push("optimizer.step_tol", cfg.step_tol.to_string());
    push("optimizer.quiet_iters", cfg.quiet_iters.to_string());
    push("solver.tolerance", cfg.solve_tol.to_string());
    push("init.seed", cfg.seed.to_string());
    push("init.noise", cfg.init_noise.to_string());
    push("output.directory", cfg.out_dir.display().to_string());
    push("output.snapshot_every", cfg.snapshot_every.to_string());
    s
}
