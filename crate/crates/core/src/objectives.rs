//! Objective and constraint functionals with design derivatives.
//!
//! Three functionals drive the optimization:
//!
//! * compliance of the structure under its loads, evaluated on the analysis
//!   density and differentiated through the stiffness interpolation;
//! * a volume constraint on the analysis density;
//! * a maximum-feature-size constraint that integrates a detector over the
//!   doubly smoothed, near-binary density and penalizes regions that stay
//!   dense after smoothing at the detection radius.
//!
//! The forward map from the raw design field to the densities is
//!
//! ```text
//! phi --smooth(r_min)--> phi_tilde --step(s)--> rho      (analysis)
//!                                  --step(s_g)--> rho_tilde
//! rho_tilde --smooth(r_max)--> rho_bar                   (detection)
//! ```
//!
//! and every gradient returned here is with respect to the raw nodal
//! `phi`, chained through the smoothing solves by their matrix transposes.

use crate::error::{Error, Result};
use crate::fem::{assemble_elasticity, compliance_and_strain_energy, ElasticityProblem};
use crate::field::NodalField;
use crate::filter::FilterOperator;
use crate::mesh::SimplicialMesh;
use crate::projection::{
    detector, detector_deriv, project_analysis, project_geometric, ProjectionParams,
};

/// Bounds and detector parameters for the two design constraints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintSpec {
    /// Upper bound on the material volume fraction, in (0, 1).
    pub volume_bound: f64,
    /// Density above which the detector reports oversized material.
    pub threshold: f64,
    /// Half-width of the detector's smooth ramp.
    pub bandwidth: f64,
    /// Exponent weighting denser violations more strongly; at least 1.
    pub penalty_exponent: f64,
    /// Absolute volume of oversized material tolerated before the
    /// constraint activates.
    pub violation_bound: f64,
    /// Volume of the design domain; fixes the scale of both constraints.
    pub domain_volume: f64,
}

impl ConstraintSpec {
    /// Spec with conventional detector settings: threshold 0.9, bandwidth
    /// 0.05, quadratic penalty, and a violation allowance of one part in a
    /// thousand of the domain.
    pub fn with_defaults(volume_bound: f64, domain_volume: f64) -> Self {
        ConstraintSpec {
            volume_bound,
            threshold: 0.9,
            bandwidth: 0.05,
            penalty_exponent: 2.0,
            violation_bound: 1e-3 * domain_volume,
            domain_volume,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.volume_bound > 0.0 && self.volume_bound < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "volume bound must lie in (0, 1), got {}",
                self.volume_bound
            )));
        }
        ProjectionParams::new(self.threshold, self.bandwidth)?;
        if !(self.penalty_exponent >= 1.0) || !self.penalty_exponent.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "penalty exponent must be at least 1, got {}",
                self.penalty_exponent
            )));
        }
        if !(self.violation_bound > 0.0) || !self.violation_bound.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "violation bound must be positive, got {}",
                self.violation_bound
            )));
        }
        if !(self.domain_volume > 0.0) || !self.domain_volume.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "domain volume must be positive, got {}",
                self.domain_volume
            )));
        }
        Ok(())
    }
}

/// All fields derived from one design iterate on one mesh.
#[derive(Debug, Clone)]
pub struct DesignState {
    /// Raw nodal design variables in [-1, 1].
    pub phi: NodalField,
    /// Design field smoothed at the resolution radius.
    pub phi_tilde: NodalField,
    /// Analysis density, a moderate-sharpness step of `phi_tilde`.
    pub rho: NodalField,
    /// Near-binary density, a high-sharpness step of `phi_tilde`.
    pub rho_tilde: NodalField,
    /// Near-binary density smoothed at the detection radius.
    pub rho_bar: NodalField,
    /// Pointwise derivative d(rho)/d(phi_tilde).
    pub drho: Vec<f64>,
    /// Pointwise derivative d(rho_tilde)/d(phi_tilde).
    pub drho_tilde: Vec<f64>,
}

/// Sharpness and solver settings for one forward/backward sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    /// Step sharpness for the analysis density.
    pub sharpness: f64,
    /// Step sharpness for the near-binary density; conventionally several
    /// times larger than `sharpness`.
    pub sharpness_geometric: f64,
    /// Relative residual tolerance for all linear solves in the sweep.
    pub solve_tol: f64,
}

impl PipelineParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("sharpness", self.sharpness), ("geometric sharpness", self.sharpness_geometric)]
        {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        if !(self.solve_tol > 0.0) || !self.solve_tol.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "solve tolerance must be positive and finite, got {}",
                self.solve_tol
            )));
        }
        Ok(())
    }
}

fn check_operator(op: &FilterOperator, mesh: &SimplicialMesh) -> Result<()> {
    if !op.is_current_for(mesh) {
        return Err(Error::StaleField { bound: op.mesh_version(), current: mesh.version() });
    }
    Ok(())
}

/// Runs the forward map from `phi` to all derived densities.
///
/// `design_filter` smooths at the resolution radius, `detect_filter` at the
/// detection radius; both must have been assembled on `mesh`'s current
/// version.
pub fn forward(
    mesh: &SimplicialMesh,
    design_filter: &FilterOperator,
    detect_filter: &FilterOperator,
    phi: &NodalField,
    params: &PipelineParams,
) -> Result<DesignState> {
    params.validate()?;
    phi.check_bound_to(mesh)?;
    check_operator(design_filter, mesh)?;
    check_operator(detect_filter, mesh)?;

    let phi_tilde = design_filter.apply_with_tol(phi, params.solve_tol)?;
    let (rho, drho) = project_analysis(phi_tilde.values(), params.sharpness)?;
    let (rho_tilde, drho_tilde) =
        project_geometric(phi_tilde.values(), params.sharpness_geometric)?;
    let rho = NodalField::new(rho, mesh)?;
    let rho_tilde = NodalField::new(rho_tilde, mesh)?;
    let rho_bar = detect_filter.apply_with_tol(&rho_tilde, params.solve_tol)?;
    Ok(DesignState {
        phi: phi.clone(),
        phi_tilde,
        rho,
        rho_tilde,
        rho_bar,
        drho,
        drho_tilde,
    })
}

/// Pulls a gradient with respect to the analysis density back to `phi`.
///
/// Computes `S' (drho . g)` where `S` is the design smoothing matrix and
/// the product inside is pointwise.
pub fn chain_analysis_to_phi(
    design_filter: &FilterOperator,
    state: &DesignState,
    grad_rho: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    if grad_rho.len() != state.drho.len() {
        return Err(Error::InvalidField(format!(
            "gradient has {} entries for {} nodes",
            grad_rho.len(),
            state.drho.len()
        )));
    }
    let inner: Vec<f64> =
        grad_rho.iter().zip(&state.drho).map(|(g, d)| g * d).collect();
    design_filter.apply_transpose(&inner, tol)
}

/// Pulls a gradient with respect to the detection density back to `phi`.
///
/// Computes `S' (drho_tilde . (D' g))` where `D` is the detection smoothing
/// matrix and `S` the design smoothing matrix.
pub fn chain_geometric_to_phi(
    design_filter: &FilterOperator,
    detect_filter: &FilterOperator,
    state: &DesignState,
    grad_rho_bar: &[f64],
    tol: f64,
) -> Result<Vec<f64>> {
    if grad_rho_bar.len() != state.drho_tilde.len() {
        return Err(Error::InvalidField(format!(
            "gradient has {} entries for {} nodes",
            grad_rho_bar.len(),
            state.drho_tilde.len()
        )));
    }
    let mut inner = detect_filter.apply_transpose(grad_rho_bar, tol)?;
    for (v, d) in inner.iter_mut().zip(&state.drho_tilde) {
        *v *= d;
    }
    design_filter.apply_transpose(&inner, tol)
}

/// Volume constraint value and gradient with respect to the analysis
/// density: `g = (1/V0) sum_i m_i rho_i - bound`, a linear functional of
/// the lumped node volumes `m`.
pub fn eval_volume(
    mesh: &SimplicialMesh,
    rho: &NodalField,
    spec: &ConstraintSpec,
) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    rho.check_bound_to(mesh)?;
    let masses = mesh.lumped_node_volumes();
    let material: f64 = masses.iter().zip(rho.values()).map(|(m, r)| m * r).sum();
    let value = material / spec.domain_volume - spec.volume_bound;
    let gradient: Vec<f64> = masses.iter().map(|m| m / spec.domain_volume).collect();
    Ok((value, gradient))
}

/// Maximum-feature-size constraint evaluated on the detection density.
#[derive(Debug, Clone)]
pub struct MaxSizeEval {
    /// Constraint value; feasible when at most zero.
    pub value: f64,
    /// Gradient with respect to the nodal detection density.
    pub gradient: Vec<f64>,
    /// Volume of the region where the detector is strictly positive.
    pub active_volume: f64,
    /// Largest nodal detection density.
    pub max_density: f64,
}

/// Integrates the detector over the detection density with lumped node
/// volumes:
///
/// ```text
/// g = sum_i m_i H(rho_bar_i - threshold) (rho_bar_i / threshold)^eta
///     - violation_bound
/// ```
///
/// The power factor weights denser violations more strongly, so the
/// gradient stays informative well above the threshold where the detector
/// itself has saturated at one.
pub fn eval_maxsize(
    mesh: &SimplicialMesh,
    rho_bar: &NodalField,
    spec: &ConstraintSpec,
) -> Result<MaxSizeEval> {
    spec.validate()?;
    rho_bar.check_bound_to(mesh)?;
    let masses = mesh.lumped_node_volumes();
    let beta = spec.threshold;
    let h = spec.bandwidth;
    let eta = spec.penalty_exponent;
    let mut value = -spec.violation_bound;
    let mut active_volume = 0.0;
    let mut max_density = f64::NEG_INFINITY;
    let mut gradient = Vec::with_capacity(masses.len());
    for (&m, &x) in masses.iter().zip(rho_bar.values()) {
        let window = detector(x - beta, h);
        let dwindow = detector_deriv(x - beta, h);
        let ratio = x / beta;
        let power = ratio.powf(eta);
        value += m * window * power;
        if window > 0.0 {
            active_volume += m;
        }
        max_density = max_density.max(x);
        let dpower = eta / beta * ratio.powf(eta - 1.0);
        gradient.push(m * (dwindow * power + window * dpower));
    }
    Ok(MaxSizeEval { value, gradient, active_volume, max_density })
}

/// Compliance under the problem's loads, with its gradient scattered to
/// the nodes of the analysis density.
#[derive(Debug, Clone)]
pub struct ComplianceEval {
    /// Stored strain energy (1/2) u' K u.
    pub value: f64,
    /// Gradient with respect to the nodal analysis density.
    pub gradient: Vec<f64>,
    /// Displacement solution, reusable as the next warm start.
    pub displacement: Vec<f64>,
}

/// Assembles, solves, and differentiates one elasticity problem.
///
/// The gradient uses the self-adjointness of compliance under fixed loads
/// and homogeneous supports: per element the derivative with respect to
/// the element-average density is minus the interpolation slope times the
/// stored energy at unit modulus, and each vertex carries an equal share
/// of the average.
pub fn eval_compliance(
    mesh: &SimplicialMesh,
    rho: &NodalField,
    problem: &ElasticityProblem,
    solve_tol: f64,
    warm: Option<&[f64]>,
) -> Result<ComplianceEval> {
    let system = assemble_elasticity(mesh, rho, problem)?;
    let displacement = system.solve_warm(solve_tol, warm)?;
    let (value, unit_energy) = compliance_and_strain_energy(mesh, rho, problem, &displacement)?;
    let means = mesh.element_means(rho)?;
    let share = 1.0 / (mesh.dimension() + 1) as f64;
    let mut gradient = vec![0.0; mesh.node_count()];
    for e in 0..mesh.element_count() {
        let sens = -problem.modulus_factor_deriv(means[e]) * unit_energy[e] * share;
        for &n in mesh.element(e) {
            gradient[n] += sens;
        }
    }
    Ok(ComplianceEval { value, gradient, displacement })
}

/// One full evaluation of objective, constraints, and their gradients with
/// respect to the raw design field.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub state: DesignState,
    /// Compliance objective.
    pub compliance: f64,
    /// Volume constraint value; feasible at or below zero.
    pub volume: f64,
    /// Maximum-feature-size constraint value; feasible at or below zero.
    pub maxsize: f64,
    /// d(compliance)/d(phi), nodal.
    pub grad_compliance: Vec<f64>,
    /// d(volume)/d(phi), nodal.
    pub grad_volume: Vec<f64>,
    /// d(maxsize)/d(phi), nodal.
    pub grad_maxsize: Vec<f64>,
    /// Displacement solution of this iterate.
    pub displacement: Vec<f64>,
    /// Largest nodal detection density.
    pub max_rho_bar: f64,
    /// Material volume of the analysis density over the domain volume.
    pub material_fraction: f64,
    /// Volume where the oversize detector is strictly positive.
    pub active_volume: f64,
}

/// Evaluates everything the optimizer needs at one iterate.
///
/// Both constraint values are always computed, even when the caller will
/// not enforce one of them, so logs stay comparable across runs.
#[allow(clippy::too_many_arguments)]
pub fn evaluate(
    mesh: &SimplicialMesh,
    phi: &NodalField,
    problem: &ElasticityProblem,
    spec: &ConstraintSpec,
    design_filter: &FilterOperator,
    detect_filter: &FilterOperator,
    params: &PipelineParams,
    warm: Option<&[f64]>,
) -> Result<Evaluation> {
    spec.validate()?;
    let state = forward(mesh, design_filter, detect_filter, phi, params)?;

    let compliance = eval_compliance(mesh, &state.rho, problem, params.solve_tol, warm)?;
    let (volume, grad_volume_rho) = eval_volume(mesh, &state.rho, spec)?;
    let maxsize = eval_maxsize(mesh, &state.rho_bar, spec)?;

    let grad_compliance =
        chain_analysis_to_phi(design_filter, &state, &compliance.gradient, params.solve_tol)?;
    let grad_volume =
        chain_analysis_to_phi(design_filter, &state, &grad_volume_rho, params.solve_tol)?;
    let grad_maxsize = chain_geometric_to_phi(
        design_filter,
        detect_filter,
        &state,
        &maxsize.gradient,
        params.solve_tol,
    )?;

    let material = volume + spec.volume_bound;
    Ok(Evaluation {
        compliance: compliance.value,
        volume,
        maxsize: maxsize.value,
        grad_compliance,
        grad_volume,
        grad_maxsize,
        displacement: compliance.displacement,
        max_rho_bar: maxsize.max_density,
        material_fraction: material,
        active_volume: maxsize.active_volume,
        state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{DirichletBc, DirichletValue, Region, TractionBc, TractionValue};
    use crate::mesh::{BoundaryTag, DomainBox};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn rect_mesh(nx: usize, ny: usize, w: f64, h: f64) -> SimplicialMesh {
        let domain = DomainBox::rect([0.0, 0.0], [w, h]).unwrap();
        SimplicialMesh::build_structured(domain, &[nx, ny]).unwrap()
    }

    fn cantilever_problem() -> ElasticityProblem {
        ElasticityProblem {
            youngs_modulus: 1.0,
            poisson_ratio: 0.3,
            simp_penalty: 3.0,
            rho_min: 1e-6,
            dirichlet: vec![DirichletBc {
                region: Region::Face(BoundaryTag::XMin),
                axes: [true, true, false],
                value: DirichletValue::Constant(0.0),
            }],
            loads: vec![TractionBc {
                region: Region::Face(BoundaryTag::XMax),
                value: TractionValue::Constant([0.0, -1.0, 0.0]),
            }],
        }
    }

    fn smooth_random_phi(mesh: &SimplicialMesh, seed: u64, offset: f64) -> NodalField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> =
            (0..mesh.node_count()).map(|_| offset + 0.8 * (rng.gen::<f64>() - 0.5)).collect();
        NodalField::new(values, mesh).unwrap().with_bounds(-1.0, 1.0)
    }

    fn spec_for(mesh: &SimplicialMesh) -> ConstraintSpec {
        ConstraintSpec::with_defaults(0.4, mesh.domain().volume())
    }

    #[test]
    fn constraint_spec_validation_catches_bad_values() {
        let mut s = ConstraintSpec::with_defaults(0.4, 2.0);
        s.validate().unwrap();
        s.volume_bound = 1.0;
        assert!(s.validate().is_err());
        s = ConstraintSpec::with_defaults(0.4, 2.0);
        s.penalty_exponent = 0.5;
        assert!(s.validate().is_err());
        s = ConstraintSpec::with_defaults(0.4, 2.0);
        s.threshold = 0.97;
        s.bandwidth = 0.1;
        assert!(s.validate().is_err());
        s = ConstraintSpec::with_defaults(0.4, 2.0);
        s.violation_bound = 0.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn volume_of_a_constant_density_is_its_fraction() {
        let mesh = rect_mesh(6, 3, 2.0, 1.0);
        let spec = spec_for(&mesh);
        let rho = NodalField::constant(1.0, &mesh);
        let (g, _) = eval_volume(&mesh, &rho, &spec).unwrap();
        assert!((g - (1.0 - spec.volume_bound)).abs() < 1e-12);
        let rho = NodalField::constant(0.4, &mesh);
        let (g, _) = eval_volume(&mesh, &rho, &spec).unwrap();
        assert!(g.abs() < 1e-12);
    }

    #[test]
    fn volume_gradient_is_exact_for_the_linear_functional() {
        let mesh = rect_mesh(5, 4, 1.0, 0.8);
        let spec = spec_for(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base: Vec<f64> = (0..mesh.node_count()).map(|_| rng.gen::<f64>()).collect();
        let delta: Vec<f64> =
            (0..mesh.node_count()).map(|_| 0.01 * (rng.gen::<f64>() - 0.5)).collect();
        let rho0 = NodalField::new(base.clone(), &mesh).unwrap();
        let moved: Vec<f64> = base.iter().zip(&delta).map(|(b, d)| b + d).collect();
        let rho1 = NodalField::new(moved, &mesh).unwrap();
        let (g0, grad) = eval_volume(&mesh, &rho0, &spec).unwrap();
        let (g1, _) = eval_volume(&mesh, &rho1, &spec).unwrap();
        let predicted: f64 = grad.iter().zip(&delta).map(|(g, d)| g * d).sum();
        assert!(
            ((g1 - g0) - predicted).abs() <= 1e-14,
            "linear functional must be predicted exactly, err {}",
            (g1 - g0) - predicted
        );
    }

    #[test]
    fn maxsize_of_full_density_matches_the_closed_form() {
        let mesh = rect_mesh(8, 4, 2.0, 1.0);
        let spec = spec_for(&mesh);
        let rho_bar = NodalField::constant(1.0, &mesh);
        let eval = eval_maxsize(&mesh, &rho_bar, &spec).unwrap();
        let v0 = mesh.domain().volume();
        let expected = v0 * (1.0 / spec.threshold).powf(spec.penalty_exponent)
            - spec.violation_bound;
        assert!((eval.value - expected).abs() <= 1e-12 * expected.abs());
        assert!((eval.active_volume - v0).abs() <= 1e-12);
        assert!((eval.max_density - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn maxsize_vanishes_below_the_detector_band() {
        let mesh = rect_mesh(8, 4, 2.0, 1.0);
        let spec = spec_for(&mesh);
        let rho_bar = NodalField::constant(spec.threshold - 2.0 * spec.bandwidth, &mesh);
        let eval = eval_maxsize(&mesh, &rho_bar, &spec).unwrap();
        assert_eq!(eval.value, -spec.violation_bound);
        assert_eq!(eval.active_volume, 0.0);
        assert!(eval.gradient.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn maxsize_gradient_matches_finite_differences() {
        let mesh = rect_mesh(6, 4, 1.5, 1.0);
        let spec = spec_for(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // Values straddling the detector band exercise every branch.
        let base: Vec<f64> = (0..mesh.node_count())
            .map(|_| spec.threshold - 2.0 * spec.bandwidth + 4.0 * spec.bandwidth * rng.gen::<f64>())
            .collect();
        let rho_bar = NodalField::new(base.clone(), &mesh).unwrap();
        let eval = eval_maxsize(&mesh, &rho_bar, &spec).unwrap();
        let d = 1e-7;
        for i in (0..mesh.node_count()).step_by(7) {
            let mut up = base.clone();
            up[i] += d;
            let mut dn = base.clone();
            dn[i] -= d;
            let vu = eval_maxsize(&mesh, &NodalField::new(up, &mesh).unwrap(), &spec)
                .unwrap()
                .value;
            let vd = eval_maxsize(&mesh, &NodalField::new(dn, &mesh).unwrap(), &spec)
                .unwrap()
                .value;
            let fd = (vu - vd) / (2.0 * d);
            let an = eval.gradient[i];
            assert!(
                (fd - an).abs() <= 1e-5 * an.abs().max(1e-3),
                "node {i}: fd {fd} vs analytic {an}"
            );
        }
    }

    #[test]
    fn maxsize_grows_when_density_inflates() {
        let mesh = rect_mesh(6, 4, 1.5, 1.0);
        let spec = spec_for(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let base: Vec<f64> = (0..mesh.node_count()).map(|_| 0.8 + 0.15 * rng.gen::<f64>()).collect();
        let inflated: Vec<f64> = base.iter().map(|v| (v * 1.05).min(1.0)).collect();
        let lo = eval_maxsize(&mesh, &NodalField::new(base, &mesh).unwrap(), &spec).unwrap();
        let hi =
            eval_maxsize(&mesh, &NodalField::new(inflated, &mesh).unwrap(), &spec).unwrap();
        assert!(hi.value > lo.value, "{} should exceed {}", hi.value, lo.value);
    }

    #[test]
    fn compliance_gradient_matches_finite_differences() {
        let mesh = rect_mesh(4, 2, 2.0, 1.0);
        let problem = cantilever_problem();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let base: Vec<f64> =
            (0..mesh.node_count()).map(|_| 0.3 + 0.6 * rng.gen::<f64>()).collect();
        let rho = NodalField::new(base.clone(), &mesh).unwrap();
        let eval = eval_compliance(&mesh, &rho, &problem, 1e-13, None).unwrap();
        let d = 1e-6;
        let scale = eval.gradient.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        for i in (0..mesh.node_count()).step_by(3) {
            let mut up = base.clone();
            up[i] += d;
            let mut dn = base.clone();
            dn[i] -= d;
            let vu = eval_compliance(&mesh, &NodalField::new(up, &mesh).unwrap(), &problem, 1e-13, None)
                .unwrap()
                .value;
            let vd = eval_compliance(&mesh, &NodalField::new(dn, &mesh).unwrap(), &problem, 1e-13, None)
                .unwrap()
                .value;
            let fd = (vu - vd) / (2.0 * d);
            let an = eval.gradient[i];
            assert!(
                (fd - an).abs() <= 1e-4 * scale,
                "node {i}: fd {fd} vs analytic {an} (scale {scale})"
            );
        }
    }

    #[test]
    fn denser_designs_are_stiffer() {
        let mesh = rect_mesh(6, 3, 2.0, 1.0);
        let problem = cantilever_problem();
        let soft = eval_compliance(&mesh, &NodalField::constant(0.4, &mesh), &problem, 1e-11, None)
            .unwrap();
        let stiff = eval_compliance(&mesh, &NodalField::constant(0.9, &mesh), &problem, 1e-11, None)
            .unwrap();
        assert!(stiff.value < soft.value);
        // Adding material can only reduce compliance, so its gradient is
        // nonpositive everywhere.
        assert!(soft.gradient.iter().all(|&g| g <= 0.0));
    }

    #[test]
    fn forward_pipeline_produces_bounded_fields() {
        let mesh = rect_mesh(10, 5, 2.0, 1.0);
        let phi = smooth_random_phi(&mesh, 7, 0.0);
        let design = FilterOperator::new(&mesh, 0.06).unwrap();
        let detect = FilterOperator::new(&mesh, 0.12).unwrap();
        let params =
            PipelineParams { sharpness: 2.0, sharpness_geometric: 16.0, solve_tol: 1e-10 };
        let state = forward(&mesh, &design, &detect, &phi, &params).unwrap();
        for &r in state.rho.values() {
            assert!(r > 0.0 && r < 1.0);
        }
        for &r in state.rho_tilde.values() {
            assert!(r > 0.0 && r < 1.0);
        }
        for &r in state.rho_bar.values() {
            assert!(r > -1e-3 && r < 1.0 + 1e-3);
        }
        assert_eq!(state.phi_tilde.mesh_version(), mesh.version());
        assert_eq!(state.rho_bar.mesh_version(), mesh.version());
        // The geometric density is a sharper step of the same field.
        for (rt, r) in state.rho_tilde.values().iter().zip(state.rho.values()) {
            if *r > 0.6 {
                assert!(*rt >= *r - 1e-12);
            }
            if *r < 0.4 {
                assert!(*rt <= *r + 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_stale_operators_and_fields() {
        let coarse = rect_mesh(4, 4, 1.0, 1.0);
        let stale_filter = FilterOperator::new(&coarse, 0.1).unwrap();
        let mesh = coarse.refine_uniform(1).unwrap();
        let design = FilterOperator::new(&mesh, 0.1).unwrap();
        let detect = FilterOperator::new(&mesh, 0.2).unwrap();
        let params = PipelineParams { sharpness: 1.0, sharpness_geometric: 8.0, solve_tol: 1e-9 };
        let phi = NodalField::constant(0.0, &mesh);
        assert!(forward(&mesh, &stale_filter, &detect, &phi, &params).is_err());
        assert!(forward(&mesh, &design, &stale_filter, &phi, &params).is_err());
        let stale_phi = NodalField::constant(0.0, &coarse);
        assert!(forward(&mesh, &design, &detect, &stale_phi, &params).is_err());
        let bad = PipelineParams { sharpness: 0.0, ..params };
        assert!(forward(&mesh, &design, &detect, &phi, &bad).is_err());
    }

    #[test]
    fn full_chain_gradients_match_finite_differences() {
        let mesh = rect_mesh(4, 2, 2.0, 1.0);
        let problem = cantilever_problem();
        let spec = spec_for(&mesh);
        let design = FilterOperator::new(&mesh, 0.1).unwrap();
        let detect = FilterOperator::new(&mesh, 0.2).unwrap();
        let params =
            PipelineParams { sharpness: 2.0, sharpness_geometric: 12.0, solve_tol: 1e-13 };
        // Biased solid so the oversize detector is active somewhere and its
        // gradient has something to match.
        let phi0 = smooth_random_phi(&mesh, 57, 0.55);
        let eval =
            evaluate(&mesh, &phi0, &problem, &spec, &design, &detect, &params, None).unwrap();

        let probe = |values: Vec<f64>| -> (f64, f64, f64) {
            let phi = NodalField::new(values, &mesh).unwrap();
            let e = evaluate(&mesh, &phi, &problem, &spec, &design, &detect, &params, None)
                .unwrap();
            (e.compliance, e.volume, e.maxsize)
        };
        let d = 1e-5;
        let scale_f = eval.grad_compliance.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        let scale_v = eval.grad_volume.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        let scale_m = eval.grad_maxsize.iter().fold(0.0_f64, |m, g| m.max(g.abs()));
        assert!(scale_f > 0.0 && scale_v > 0.0 && scale_m > 0.0);
        for i in (0..mesh.node_count()).step_by(4) {
            let mut up = phi0.values().to_vec();
            up[i] += d;
            let mut dn = phi0.values().to_vec();
            dn[i] -= d;
            let (fu, vu, mu) = probe(up);
            let (fd_, vd, md) = probe(dn);
            let fd_f = (fu - fd_) / (2.0 * d);
            let fd_v = (vu - vd) / (2.0 * d);
            let fd_m = (mu - md) / (2.0 * d);
            assert!(
                (fd_f - eval.grad_compliance[i]).abs() <= 1e-3 * scale_f,
                "compliance node {i}: fd {fd_f} vs {}",
                eval.grad_compliance[i]
            );
            assert!(
                (fd_v - eval.grad_volume[i]).abs() <= 1e-3 * scale_v,
                "volume node {i}: fd {fd_v} vs {}",
                eval.grad_volume[i]
            );
            assert!(
                (fd_m - eval.grad_maxsize[i]).abs() <= 1e-3 * scale_m,
                "maxsize node {i}: fd {fd_m} vs {}",
                eval.grad_maxsize[i]
            );
        }
    }

    #[test]
    fn evaluation_reports_consistent_diagnostics() {
        let mesh = rect_mesh(8, 4, 2.0, 1.0);
        let problem = cantilever_problem();
        let spec = spec_for(&mesh);
        let design = FilterOperator::new(&mesh, 0.08).unwrap();
        let detect = FilterOperator::new(&mesh, 0.16).unwrap();
        let params = PipelineParams { sharpness: 1.0, sharpness_geometric: 8.0, solve_tol: 1e-10 };
        let phi = NodalField::constant(2.0 * spec.volume_bound - 1.0, &mesh);
        let eval =
            evaluate(&mesh, &phi, &problem, &spec, &design, &detect, &params, None).unwrap();
        assert!(eval.compliance > 0.0);
        assert!(eval.material_fraction > 0.0 && eval.material_fraction < 1.0);
        assert!((eval.volume - (eval.material_fraction - spec.volume_bound)).abs() < 1e-12);
        assert!(eval.max_rho_bar <= 1.0 + 1e-3);
        assert!(eval.active_volume >= 0.0 && eval.active_volume <= spec.domain_volume + 1e-9);
        // A uniform sub-threshold design has no oversized region.
        assert!(eval.maxsize <= 0.0);
        assert_eq!(eval.displacement.len(), 2 * mesh.node_count());
    }
}
