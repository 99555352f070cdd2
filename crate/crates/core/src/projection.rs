//! Smoothed threshold maps between the design field and material densities.
//!
//! Three maps live here:
//!
//! * the analysis projection, a tanh step that turns the smoothed design
//!   field into the density the stiffness interpolation sees;
//! * the geometric projection, the same step at a much higher sharpness,
//!   producing the near-binary density used for feature-size measurement;
//! * the quintic detector, a polynomial step with compact transition band
//!   used to flag oversized regions.  It is C^2, which keeps the constraint
//!   gradient smooth enough for the optimizer.
//!
//! All maps are applied nodewise and return their pointwise derivative
//! alongside the value, since every consumer also needs the chain-rule
//! factor.

use crate::error::{Error, Result};

/// Parameters of a smoothed step: threshold location and transition width.
///
/// Used by the detector (`threshold` is the density above which a region
/// counts as oversized, `bandwidth` the half-width of the smooth ramp).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionParams {
    pub threshold: f64,
    pub bandwidth: f64,
}

impl ProjectionParams {
    pub fn new(threshold: f64, bandwidth: f64) -> Result<Self> {
        let p = ProjectionParams { threshold, bandwidth };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) || !self.threshold.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "detector threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if !(self.bandwidth > 0.0) || !self.bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "detector bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        // The ramp must finish below full density, otherwise fully solid
        // regions can never register as oversized.
        if self.threshold + self.bandwidth >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "detector threshold + bandwidth must stay below 1, got {} + {}",
                self.threshold, self.bandwidth
            )));
        }
        Ok(())
    }
}

/// Value of the tanh step `0.5 * (1 + tanh(sharpness * x))`.
#[inline]
pub fn smooth_step(x: f64, sharpness: f64) -> f64 {
    0.5 * (1.0 + (sharpness * x).tanh())
}

/// Derivative of [`smooth_step`] with respect to `x`.
///
/// Bounded by `sharpness / 2`, attained at `x = 0`.
#[inline]
pub fn smooth_step_deriv(x: f64, sharpness: f64) -> f64 {
    let t = (sharpness * x).tanh();
    0.5 * sharpness * (1.0 - t * t)
}

/// Applies the analysis projection nodewise; returns densities and the
/// pointwise derivative d(rho)/d(phi_tilde).
pub fn project_analysis(phi_tilde: &[f64], sharpness: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    project(phi_tilde, sharpness)
}

/// Applies the geometric projection nodewise; identical form to the
/// analysis projection but conventionally run at a higher sharpness so the
/// result is near-binary.
pub fn project_geometric(phi_tilde: &[f64], sharpness: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    project(phi_tilde, sharpness)
}

fn project(phi_tilde: &[f64], sharpness: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(sharpness > 0.0) || !sharpness.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "projection sharpness must be positive and finite, got {sharpness}"
        )));
    }
    let mut rho = Vec::with_capacity(phi_tilde.len());
    let mut drho = Vec::with_capacity(phi_tilde.len());
    for &x in phi_tilde {
        rho.push(smooth_step(x, sharpness));
        drho.push(smooth_step_deriv(x, sharpness));
    }
    Ok((rho, drho))
}

/// The quintic detector step.
///
/// Zero for `x < -h`, one for `x > h`, and the quintic
/// `1/2 + 15/16 t - 5/8 t^3 + 3/16 t^5` with `t = x / h` in between.  The
/// polynomial is the unique quintic that meets the constant branches with
/// matching value, slope and curvature, so the composite is C^2.
#[inline]
pub fn detector(x: f64, bandwidth: f64) -> f64 {
    debug_assert!(bandwidth > 0.0);
    if x < -bandwidth {
        0.0
    } else if x > bandwidth {
        1.0
    } else {
        let t = x / bandwidth;
        let t2 = t * t;
        0.5 + t * (0.9375 + t2 * (-0.625 + t2 * 0.1875))
    }
}

/// Derivative of [`detector`] with respect to `x`:
/// `15 / (16 h) * (1 - t^2)^2` inside the band, zero outside.
#[inline]
pub fn detector_deriv(x: f64, bandwidth: f64) -> f64 {
    debug_assert!(bandwidth > 0.0);
    if x.abs() > bandwidth {
        0.0
    } else {
        let t = x / bandwidth;
        let u = 1.0 - t * t;
        0.9375 / bandwidth * u * u
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn analysis_projection_matches_closed_form() {
        // s = 4 at phi_tilde = 0.5 sits on the steep part of the step.
        let (rho, drho) = project_analysis(&[0.5], 4.0).unwrap();
        assert_relative_eq!(rho[0], 0.5 * (1.0 + 2.0_f64.tanh()), max_relative = 1e-15);
        assert_relative_eq!(rho[0], 0.9820137900379085, max_relative = 1e-14);
        let t: f64 = 2.0_f64.tanh();
        assert_relative_eq!(drho[0], 2.0 * (1.0 - t * t), max_relative = 1e-14);
    }

    #[test]
    fn geometric_projection_saturates_at_high_sharpness() {
        let (rho, _) = project_geometric(&[0.1], 100.0).unwrap();
        assert!(rho[0] > 0.9999, "got {}", rho[0]);
    }

    #[test]
    fn projection_is_odd_around_half() {
        for s in [1.0, 8.0, 64.0] {
            for x in [0.0, 0.01, 0.3, 2.0] {
                let up = smooth_step(x, s);
                let dn = smooth_step(-x, s);
                assert_relative_eq!(up + dn, 1.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn projection_rejects_bad_sharpness() {
        assert!(project_analysis(&[0.0], 0.0).is_err());
        assert!(project_analysis(&[0.0], -1.0).is_err());
        assert!(project_analysis(&[0.0], f64::NAN).is_err());
    }

    #[test]
    fn detector_midpoint_and_band_edges_are_exact() {
        for h in [0.5, 0.05, 0.015, 0.2] {
            assert_eq!(detector(0.0, h), 0.5);
            assert_eq!(detector(h, h), 1.0);
            assert_eq!(detector(-h, h), 0.0);
            assert_eq!(detector(2.0 * h, h), 1.0);
            assert_eq!(detector(-2.0 * h, h), 0.0);
        }
        // Dyadic inputs evaluate the quintic exactly.
        assert_eq!(detector(0.25, 0.5), 0.896484375);
    }

    #[test]
    fn detector_halfband_value_at_generic_bandwidth() {
        // x/h may round when h is not a power of two; stay within 1e-12.
        let h = 0.05;
        assert_relative_eq!(detector(h / 2.0, h), 0.896484375, epsilon = 1e-12);
    }

    #[test]
    fn detector_is_c2_at_band_edges() {
        // Compare the quintic branch at t = +-1 against the constant
        // branches: value, first and second derivative all have to meet.
        let h = 0.05;
        let inner_second = |x: f64| {
            // d^2/dx^2 of the quintic branch.
            let t = x / h;
            15.0 / (16.0 * h * h) * (-4.0 * t + 4.0 * t * t * t)
        };
        assert!((detector(h, h) - 1.0).abs() <= 1e-12);
        assert!((detector(-h, h) - 0.0).abs() <= 1e-12);
        assert!(detector_deriv(h, h).abs() <= 1e-12);
        assert!(detector_deriv(-h, h).abs() <= 1e-12);
        assert!(inner_second(h).abs() <= 1e-12);
        assert!(inner_second(-h).abs() <= 1e-12);
    }

    #[test]
    fn detector_is_monotone_on_the_band() {
        let h = 0.1;
        let mut prev = -1.0;
        for i in 0..=1000 {
            let x = -1.5 * h + 3.0 * h * (i as f64) / 1000.0;
            let v = detector(x, h);
            assert!(v >= prev - 1e-15, "detector not monotone at x = {x}");
            assert!((0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn detector_deriv_matches_finite_differences() {
        let h = 0.07;
        let d = 1e-6;
        for &x in &[-0.9 * h, -0.3 * h, 0.0, 0.2 * h, 0.8 * h] {
            let fd = (detector(x + d, h) - detector(x - d, h)) / (2.0 * d);
            assert_relative_eq!(detector_deriv(x, h), fd, epsilon = 1e-8);
        }
    }

    #[test]
    fn params_validation_rejects_overlapping_ramp() {
        assert!(ProjectionParams::new(0.9, 0.05).is_ok());
        assert!(ProjectionParams::new(0.97, 0.015).is_ok());
        assert!(ProjectionParams::new(0.95, 0.05).is_err());
        assert!(ProjectionParams::new(0.0, 0.05).is_err());
        assert!(ProjectionParams::new(1.0, 0.05).is_err());
        assert!(ProjectionParams::new(0.9, 0.0).is_err());
    }
}
