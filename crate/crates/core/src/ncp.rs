//! Scalar building blocks of the relaxations: the piecewise NCP function
//! `phi` and the smoothed absolute value used by the Steffensen–Ulbrich
//! scheme.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};

/// `phi(a, b) = a b` if `a + b >= 0`, else `-(a^2 + b^2) / 2`.
///
/// `phi(a, b) = 0` exactly when `a >= 0`, `b >= 0` and `a b = 0`;
/// `phi(a, b) <= 0` exactly when `a` and `b` are not both positive.
pub fn phi(a: f64, b: f64) -> f64 {
    if a + b >= 0.0 {
        a * b
    } else {
        -0.5 * (a * a + b * b)
    }
}

/// Gradient of [`phi`]: `(b, a)` if `a + b >= 0`, else `(-a, -b)`.
pub fn grad_phi(a: f64, b: f64) -> (f64, f64) {
    if a + b >= 0.0 {
        (b, a)
    } else {
        (-a, -b)
    }
}

/// A smoothing kernel on `[-1, 1]` with `theta(±1) = 1`, `theta'(±1) = ±1`,
/// `theta''(±1) = 0` and `theta'' > 0` inside.
pub trait ThetaFunction: Send + Sync {
    fn value(&self, z: f64) -> f64;
    fn deriv(&self, z: f64) -> f64;
}

/// `theta(z) = 2/pi sin(pi/2 z + 3 pi/2) + 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SineTheta;

impl ThetaFunction for SineTheta {
    fn value(&self, z: f64) -> f64 {
        2.0 / PI * (FRAC_PI_2 * z + 3.0 * FRAC_PI_2).sin() + 1.0
    }

    fn deriv(&self, z: f64) -> f64 {
        (FRAC_PI_2 * z + 3.0 * FRAC_PI_2).cos()
    }
}

/// Choice of smoothing kernel for the Steffensen–Ulbrich scheme.
#[derive(Clone, Default)]
pub enum ThetaSpec {
    #[default]
    Sine,
    Custom(Arc<dyn ThetaFunction>),
}

impl fmt::Debug for ThetaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThetaSpec::Sine => f.write_str("Sine"),
            ThetaSpec::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl ThetaSpec {
    pub fn value(&self, z: f64) -> f64 {
        match self {
            ThetaSpec::Sine => SineTheta.value(z),
            ThetaSpec::Custom(th) => th.value(z),
        }
    }

    pub fn deriv(&self, z: f64) -> f64 {
        match self {
            ThetaSpec::Sine => SineTheta.deriv(z),
            ThetaSpec::Custom(th) => th.deriv(z),
        }
    }
}

/// Sine kernel value.
pub fn theta(z: f64) -> f64 {
    SineTheta.value(z)
}

/// Sine kernel derivative.
pub fn dtheta(z: f64) -> f64 {
    SineTheta.deriv(z)
}

/// Smoothed absolute value: `|z|` for `|z| >= t`, else `t theta(z / t)`.
/// Returns the value and the derivative in `z`.
pub fn phi_su_with(theta: &ThetaSpec, z: f64, t: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "smoothing parameter must be positive, got {t}"
        )));
    }
    if z.abs() >= t {
        Ok((z.abs(), z.signum()))
    } else {
        let s = z / t;
        Ok((t * theta.value(s), theta.deriv(s)))
    }
}

/// [`phi_su_with`] for the sine kernel.
pub fn phi_su(z: f64, t: f64) -> Result<(f64, f64)> {
    phi_su_with(&ThetaSpec::Sine, z, t)
}
