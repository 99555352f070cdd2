//! Separable convex optimizer, continuation schedule, and stopping rule.
//!
//! The update step builds, around the current iterate, a convex separable
//! approximation of the objective and constraints from their gradients and
//! a pair of per-variable moving asymptotes.  The approximation's dual has
//! one multiplier per constraint and is maximized by cyclic coordinate
//! bisection, which is exact enough at one or two constraints.  Constraints
//! are relaxed elastically: each multiplier is capped, so an infeasible
//! subproblem yields the least-infeasible step instead of failing.
//!
//! Asymptotes widen while the iterate keeps moving in one direction and
//! tighten when it oscillates, which damps the zigzagging that plain
//! gradient steps exhibit on stiff compliance landscapes.

use crate::error::{Error, Result};

/// Tuning constants for the update step.  Defaults follow long-standing
/// practice for density-based structural optimization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmaParams {
    /// Hard cap on |x_new - x| as a fraction of the variable range.
    pub move_limit: f64,
    /// Initial asymptote distance as a fraction of the variable range.
    pub asymptote_init: f64,
    /// Asymptote widening factor applied after two steps in one direction.
    pub asymptote_grow: f64,
    /// Asymptote tightening factor applied after a direction flip.
    pub asymptote_shrink: f64,
    /// Fraction of the asymptote gap kept between the feasible box and the
    /// asymptotes themselves.
    pub bound_margin: f64,
    /// Upper bound on each constraint multiplier; finite values make the
    /// constraints elastic.
    pub elastic_weight: f64,
    /// Target residual for the subproblem optimality check.
    pub kkt_tol: f64,
}

impl Default for MmaParams {
    fn default() -> Self {
        MmaParams {
            move_limit: 0.2,
            asymptote_init: 0.5,
            asymptote_grow: 1.2,
            asymptote_shrink: 0.7,
            bound_margin: 0.1,
            elastic_weight: 1e4,
            kkt_tol: 1e-8,
        }
    }
}

impl MmaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.move_limit > 0.0 && self.move_limit <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "move limit must lie in (0, 1], got {}",
                self.move_limit
            )));
        }
        if !(self.asymptote_init > 0.0) || !self.asymptote_init.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "initial asymptote distance must be positive, got {}",
                self.asymptote_init
            )));
        }
        if !(self.asymptote_grow > 1.0) || !(self.asymptote_shrink > 0.0)
            || !(self.asymptote_shrink < 1.0)
        {
            return Err(Error::InvalidParameter(format!(
                "asymptote factors must satisfy grow > 1 > shrink > 0, got {} and {}",
                self.asymptote_grow, self.asymptote_shrink
            )));
        }
        if !(self.bound_margin > 0.0 && self.bound_margin < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "bound margin must lie in (0, 0.5), got {}",
                self.bound_margin
            )));
        }
        if !(self.elastic_weight > 0.0) || !self.elastic_weight.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "elastic weight must be positive and finite, got {}",
                self.elastic_weight
            )));
        }
        if !(self.kkt_tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "optimality tolerance must be positive, got {}",
                self.kkt_tol
            )));
        }
        Ok(())
    }
}

/// Per-variable history carried between update steps.
///
/// Reset (or rebuilt) whenever the design vector changes meaning, for
/// example after a remesh and transfer.
#[derive(Debug, Clone)]
pub struct MmaState {
    lower: Vec<f64>,
    upper: Vec<f64>,
    x_prev: Vec<f64>,
    x_prev2: Vec<f64>,
    /// Update steps taken since construction.
    age: usize,
}

impl MmaState {
    pub fn new(n: usize) -> Self {
        MmaState {
            lower: vec![0.0; n],
            upper: vec![0.0; n],
            x_prev: vec![0.0; n],
            x_prev2: vec![0.0; n],
            age: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.x_prev.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_prev.is_empty()
    }

    pub fn age(&self) -> usize {
        self.age
    }
}

/// Result of one update step.
#[derive(Debug, Clone)]
pub struct MmaStep {
    /// The next iterate, inside the box and the move limits.
    pub x: Vec<f64>,
    /// Constraint multipliers of the subproblem solution.
    pub multipliers: Vec<f64>,
    /// Scaled optimality residual of the subproblem solution.
    pub kkt_residual: f64,
}

/// Denominator floor: asymptote safeguards keep true gaps far above this.
const GAP_FLOOR: f64 = 1e-300;

/// Convexity floor added to every approximation, as a fraction of the
/// gradient scale, so the subproblem stays strictly convex even where a
/// gradient vanishes.
const RHO_TINY: f64 = 1e-5;

/// Blending weights: the approximation leans almost entirely on the
/// asymptote matching the gradient sign, with a small symmetric part that
/// keeps both branches strictly convex.
const W_MAIN: f64 = 1.001;
const W_OFF: f64 = 0.001;

/// One separable approximation: per-variable numerators for the two
/// rational branches plus the constant offset.
struct Approximation {
    p: Vec<f64>,
    q: Vec<f64>,
    offset: f64,
}

fn build_approximation(
    value: f64,
    grad: &[f64],
    x: &[f64],
    lower: &[f64],
    upper: &[f64],
) -> Approximation {
    let n = x.len();
    let mut p = Vec::with_capacity(n);
    let mut q = Vec::with_capacity(n);
    let mut offset = value;
    for i in 0..n {
        let ux = (upper[i] - x[i]).max(GAP_FLOOR);
        let xl = (x[i] - lower[i]).max(GAP_FLOOR);
        let gp = grad[i].max(0.0);
        let gm = (-grad[i]).max(0.0);
        let tiny = RHO_TINY * grad[i].abs().max(1.0) / (upper[i] - lower[i]);
        let pi = ux * ux * (W_MAIN * gp + W_OFF * gm + tiny);
        let qi = xl * xl * (W_OFF * gp + W_MAIN * gm + tiny);
        offset -= pi / ux + qi / xl;
        p.push(pi);
        q.push(qi);
    }
    Approximation { p, q, offset }
}

/// Evaluates one approximation at `x`.
fn eval_approximation(a: &Approximation, x: &[f64], lower: &[f64], upper: &[f64]) -> f64 {
    let mut v = a.offset;
    for i in 0..x.len() {
        v += a.p[i] / (upper[i] - x[i]).max(GAP_FLOOR)
            + a.q[i] / (x[i] - lower[i]).max(GAP_FLOOR);
    }
    v
}

/// Minimizer of the weighted approximation sum over the box `[alpha, beta]`
/// for fixed multipliers, written into `x_out`.
#[allow(clippy::too_many_arguments)]
fn primal_minimizer(
    objective: &Approximation,
    constraints: &[Approximation],
    lambda: &[f64],
    lower: &[f64],
    upper: &[f64],
    alpha: &[f64],
    beta: &[f64],
    x_out: &mut [f64],
) {
    for i in 0..x_out.len() {
        let mut pi = objective.p[i];
        let mut qi = objective.q[i];
        for (a, &l) in constraints.iter().zip(lambda) {
            pi += l * a.p[i];
            qi += l * a.q[i];
        }
        let sp = pi.sqrt();
        let sq = qi.sqrt();
        let x = (sp * lower[i] + sq * upper[i]) / (sp + sq);
        x_out[i] = x.clamp(alpha[i], beta[i]);
    }
}

/// Maximizes the concave dual by cyclic coordinate bisection.  Each
/// coordinate's dual derivative is the corresponding constraint
/// approximation at the primal minimizer, monotone in the multiplier.
#[allow(clippy::too_many_arguments)]
fn solve_dual(
    objective: &Approximation,
    constraints: &[Approximation],
    lower: &[f64],
    upper: &[f64],
    alpha: &[f64],
    beta: &[f64],
    cap: f64,
    x_out: &mut [f64],
) -> Vec<f64> {
    let m = constraints.len();
    let mut lambda = vec![0.0; m];
    if m == 0 {
        primal_minimizer(objective, constraints, &lambda, lower, upper, alpha, beta, x_out);
        return lambda;
    }
    let slack = |lam: &[f64], j: usize, x_buf: &mut [f64]| -> f64 {
        primal_minimizer(objective, constraints, lam, lower, upper, alpha, beta, x_buf);
        eval_approximation(&constraints[j], x_buf, lower, upper)
    };
    for _pass in 0..40 {
        let mut moved = 0.0_f64;
        for j in 0..m {
            let old = lambda[j];
            lambda[j] = 0.0;
            if slack(&lambda, j, x_out) <= 0.0 {
                // Constraint inactive at zero multiplier.
            } else {
                lambda[j] = cap;
                if slack(&lambda, j, x_out) >= 0.0 {
                    // Elastic regime: the cap is the best the dual can do.
                } else {
                    let mut lo = 0.0;
                    let mut hi = cap;
                    for _ in 0..70 {
                        let mid = 0.5 * (lo + hi);
                        lambda[j] = mid;
                        if slack(&lambda, j, x_out) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    lambda[j] = 0.5 * (lo + hi);
                }
            }
            moved = moved.max((lambda[j] - old).abs() / cap.max(1.0));
        }
        if moved <= 1e-14 {
            break;
        }
    }
    primal_minimizer(objective, constraints, &lambda, lower, upper, alpha, beta, x_out);
    lambda
}

/// Scaled optimality residual of the subproblem solution: stationarity of
/// the Lagrangian over the box plus complementarity of each multiplier.
#[allow(clippy::too_many_arguments)]
fn subproblem_residual(
    objective: &Approximation,
    constraints: &[Approximation],
    lambda: &[f64],
    cap: f64,
    lower: &[f64],
    upper: &[f64],
    alpha: &[f64],
    beta: &[f64],
    x: &[f64],
) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..x.len() {
        let ux = (upper[i] - x[i]).max(GAP_FLOOR);
        let xl = (x[i] - lower[i]).max(GAP_FLOOR);
        let mut pi = objective.p[i];
        let mut qi = objective.q[i];
        for (a, &l) in constraints.iter().zip(lambda) {
            pi += l * a.p[i];
            qi += l * a.q[i];
        }
        let slope = pi / (ux * ux) - qi / (xl * xl);
        let scale = (pi / (ux * ux) + qi / (xl * xl)).max(1e-30);
        let span = beta[i] - alpha[i];
        let r = if span <= 0.0 {
            0.0
        } else if x[i] <= alpha[i] + 1e-12 * span {
            (-slope).max(0.0)
        } else if x[i] >= beta[i] - 1e-12 * span {
            slope.max(0.0)
        } else {
            slope.abs()
        };
        worst = worst.max(r / scale);
    }
    for (j, a) in constraints.iter().enumerate() {
        let g = eval_approximation(a, x, lower, upper);
        let scale = g.abs().max(1.0);
        let r = if lambda[j] <= 0.0 {
            g.max(0.0)
        } else if lambda[j] >= cap {
            (-g).max(0.0)
        } else {
            g.abs()
        };
        worst = worst.max(r / scale);
    }
    worst
}

/// One update step.
///
/// `constraints` pairs each constraint value (feasible at or below zero)
/// with its gradient.  `lo` and `hi` bound every variable.  The state keeps
/// the asymptotes and the two previous iterates; steps taken with a fresh
/// state fall back to the initial asymptote spacing.
pub fn mma_update(
    state: &mut MmaState,
    x: &[f64],
    grad_objective: &[f64],
    constraints: &[(f64, &[f64])],
    lo: f64,
    hi: f64,
    params: &MmaParams,
) -> Result<MmaStep> {
    params.validate()?;
    let n = x.len();
    if state.len() != n || grad_objective.len() != n {
        return Err(Error::InvalidParameter(format!(
            "size mismatch: {n} variables, state {}, objective gradient {}",
            state.len(),
            grad_objective.len()
        )));
    }
    for (value, grad) in constraints {
        if grad.len() != n {
            return Err(Error::InvalidParameter(format!(
                "constraint gradient has {} entries for {n} variables",
                grad.len()
            )));
        }
        if !value.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "constraint value must be finite, got {value}"
            )));
        }
    }
    if !(hi > lo) {
        return Err(Error::InvalidParameter(format!(
            "variable bounds must satisfy lo < hi, got [{lo}, {hi}]"
        )));
    }
    let range = hi - lo;

    // Asymptote update: spread on the first two steps, then adapt to the
    // oscillation pattern, then clamp to the safeguard band.
    for i in 0..n {
        if state.age < 2 {
            state.lower[i] = x[i] - params.asymptote_init * range;
            state.upper[i] = x[i] + params.asymptote_init * range;
        } else {
            let trend = (x[i] - state.x_prev[i]) * (state.x_prev[i] - state.x_prev2[i]);
            let factor = if trend > 0.0 {
                params.asymptote_grow
            } else if trend < 0.0 {
                params.asymptote_shrink
            } else {
                1.0
            };
            state.lower[i] = x[i] - factor * (state.x_prev[i] - state.lower[i]);
            state.upper[i] = x[i] + factor * (state.upper[i] - state.x_prev[i]);
        }
        // The tight end of the clamp band is deliberately small: paired
        // with the convexity floor it lets oscillating variables damp all
        // the way to a fixed point instead of orbiting the optimum at a
        // fixed asymptote distance.
        state.lower[i] = state.lower[i].clamp(x[i] - 10.0 * range, x[i] - 1e-4 * range);
        state.upper[i] = state.upper[i].clamp(x[i] + 1e-4 * range, x[i] + 10.0 * range);
    }

    // Inner box: global bounds, move limit, and a margin that keeps the
    // iterate strictly inside the asymptotes.
    let mut alpha = vec![0.0; n];
    let mut beta = vec![0.0; n];
    for i in 0..n {
        let a = (state.lower[i] + params.bound_margin * (x[i] - state.lower[i]))
            .max(x[i] - params.move_limit * range)
            .max(lo);
        let b = (state.upper[i] - params.bound_margin * (state.upper[i] - x[i]))
            .min(x[i] + params.move_limit * range)
            .min(hi);
        alpha[i] = a;
        beta[i] = b.max(a);
    }

    let objective = build_approximation(0.0, grad_objective, x, &state.lower, &state.upper);
    let approx: Vec<Approximation> = constraints
        .iter()
        .map(|(value, grad)| build_approximation(*value, grad, x, &state.lower, &state.upper))
        .collect();

    let mut x_new = vec![0.0; n];
    let lambda = solve_dual(
        &objective,
        &approx,
        &state.lower,
        &state.upper,
        &alpha,
        &beta,
        params.elastic_weight,
        &mut x_new,
    );
    let kkt_residual = subproblem_residual(
        &objective,
        &approx,
        &lambda,
        params.elastic_weight,
        &state.lower,
        &state.upper,
        &alpha,
        &beta,
        &x_new,
    );

    state.x_prev2.copy_from_slice(&state.x_prev);
    state.x_prev.copy_from_slice(x);
    state.age += 1;
    Ok(MmaStep { x: x_new, multipliers: lambda, kkt_residual })
}

/// Gradual stiffening of the projections and the modulus interpolation.
///
/// All three knobs step together every `cadence` iterations: the modulus
/// exponent climbs to its final value over the first two steps, while both
/// step sharpnesses double until they hit their caps.  Starting gentle
/// keeps the early problem nearly convex; ending sharp makes the final
/// design close to binary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationSchedule {
    /// Iterations per stage; the mesh adapts on the same cadence.
    pub cadence: usize,
    /// Final modulus interpolation exponent.
    pub penalty_final: f64,
    /// Initial analysis sharpness; doubles each stage.
    pub sharpness_init: f64,
    /// Cap on the analysis sharpness.
    pub sharpness_max: f64,
    /// Ratio of the near-binary sharpness to the analysis sharpness.
    pub geometric_factor: f64,
    /// Cap on the near-binary sharpness.
    pub geometric_max: f64,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        ContinuationSchedule {
            cadence: 10,
            penalty_final: 3.0,
            sharpness_init: 1.0,
            sharpness_max: 64.0,
            geometric_factor: 8.0,
            geometric_max: 512.0,
        }
    }
}

/// Continuation values in effect at one iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulePoint {
    pub penalty: f64,
    pub sharpness: f64,
    pub sharpness_geometric: f64,
}

impl ContinuationSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.cadence == 0 {
            return Err(Error::InvalidParameter("schedule cadence must be positive".into()));
        }
        if !(self.penalty_final >= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "final penalty must be at least 1, got {}",
                self.penalty_final
            )));
        }
        if !(self.sharpness_init > 0.0) || !(self.sharpness_max >= self.sharpness_init) {
            return Err(Error::InvalidParameter(format!(
                "sharpness range [{}, {}] is invalid",
                self.sharpness_init, self.sharpness_max
            )));
        }
        if !(self.geometric_factor >= 1.0) || !(self.geometric_max >= self.geometric_factor) {
            return Err(Error::InvalidParameter(format!(
                "geometric sharpness settings ({}, {}) are invalid",
                self.geometric_factor, self.geometric_max
            )));
        }
        Ok(())
    }

    /// Values in effect at `iter` (zero-based).
    pub fn at(&self, iter: usize) -> SchedulePoint {
        let stage = (iter / self.cadence) as u32;
        let penalty = (1.0 + stage as f64).min(self.penalty_final);
        let sharpness = if stage >= 63 {
            self.sharpness_max
        } else {
            (self.sharpness_init * (1u64 << stage) as f64).min(self.sharpness_max)
        };
        let sharpness_geometric = (self.geometric_factor * sharpness).min(self.geometric_max);
        SchedulePoint { penalty, sharpness, sharpness_geometric }
    }
}

/// Convergence rule: stop after several consecutive iterations with both a
/// small relative objective change and a small design step, or at the
/// iteration cap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerminationRule {
    /// Relative objective change below which an iteration counts as quiet.
    pub objective_tol: f64,
    /// Max-norm design step below which an iteration counts as quiet.
    pub step_tol: f64,
    /// Consecutive quiet iterations required to declare convergence.
    pub required_quiet: usize,
    /// Hard iteration cap.
    pub max_iters: usize,
}

impl Default for TerminationRule {
    fn default() -> Self {
        TerminationRule { objective_tol: 1e-4, step_tol: 1e-3, required_quiet: 3, max_iters: 100 }
    }
}

/// What the loop should do after the latest iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Continue,
    Converged,
    IterationLimit,
}

/// Tracks the quiet-iteration streak across a run.
#[derive(Debug, Clone)]
pub struct TerminationMonitor {
    rule: TerminationRule,
    prev_objective: Option<f64>,
    quiet_streak: usize,
}

impl TerminationMonitor {
    pub fn new(rule: TerminationRule) -> Self {
        TerminationMonitor { rule, prev_objective: None, quiet_streak: 0 }
    }

    /// Resets the streak, for events (like a remesh) that invalidate the
    /// objective comparison.
    pub fn interrupt(&mut self) {
        self.prev_objective = None;
        self.quiet_streak = 0;
    }

    /// Feeds one finished iteration (zero-based index) and its objective
    /// plus the max-norm of the design step that produced it.
    pub fn observe(&mut self, iter: usize, objective: f64, max_step: f64) -> Verdict {
        let quiet = match self.prev_objective {
            Some(prev) => {
                let rel = (objective - prev).abs() / objective.abs().max(1e-300);
                rel < self.rule.objective_tol && max_step < self.rule.step_tol
            }
            None => false,
        };
        self.prev_objective = Some(objective);
        self.quiet_streak = if quiet { self.quiet_streak + 1 } else { 0 };
        if self.quiet_streak >= self.rule.required_quiet {
            return Verdict::Converged;
        }
        if iter + 1 >= self.rule.max_iters {
            return Verdict::IterationLimit;
        }
        Verdict::Continue
    }
}
