//! Planar array geometry: ULA steering vectors, bearings, and the two
//! path-loss laws used for the radar echo and the downlink channel.
//!
//! Angles are measured from the positive x-axis (`atan2` convention) and all
//! arrays share one global orientation, so a bearing computed at any BS can be
//! fed straight into [`steering_vector`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{invalid, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Transmit/receive antenna counts and element spacing in wavelengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub n_tx: usize,
    pub n_rx: usize,
    #[serde(default = "default_spacing")]
    pub spacing_ratio: f64,
}

fn default_spacing() -> f64 {
    0.5
}

impl ArraySpec {
    pub fn new(n_tx: usize, n_rx: usize) -> Self {
        Self { n_tx, n_rx, spacing_ratio: default_spacing() }
    }

    pub fn square(n: usize) -> Self {
        Self::new(n, n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_tx == 0 || self.n_rx == 0 {
            return invalid("array must have at least one transmit and one receive antenna");
        }
        if !(self.spacing_ratio > 0.0 && self.spacing_ratio.is_finite()) {
            return invalid(format!("spacing_ratio must be positive, got {}", self.spacing_ratio));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2D) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Point at `range` meters from `self` along bearing `theta`.
    pub fn offset_polar(&self, range: f64, theta: f64) -> Point2D {
        Point2D::new(self.x + range * theta.cos(), self.y + range * theta.sin())
    }
}

/// Parameters of one BS l -> target -> BS m echo link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensingLinkParams {
    /// Round-trip path loss (linear).
    pub beta: f64,
    /// RCS amplitude.
    pub zeta: f64,
    /// Target bearing seen from the transmitting BS.
    pub theta_tx: f64,
    /// Target bearing seen from the receiving BS.
    pub theta_rx: f64,
}

/// ULA response `[1, e^{j2πr sinθ}, ..., e^{j2πr(n-1) sinθ}]`.
pub fn steering_vector(theta: f64, n: usize, spacing_ratio: f64) -> Result<CVector> {
    if n == 0 {
        return invalid("steering vector length must be positive");
    }
    if !(spacing_ratio > 0.0) {
        return invalid(format!("spacing_ratio must be positive, got {spacing_ratio}"));
    }
    let step = 2.0 * PI * spacing_ratio * theta.sin();
    Ok(CVector::from_fn(n, |k, _| Complex64::from_polar(1.0, step * k as f64)))
}

/// Bearing of `target` as seen from `bs`.
pub fn angle_from(bs: &Point2D, target: &Point2D) -> Result<f64> {
    let (dx, dy) = (target.x - bs.x, target.y - bs.y);
    if dx == 0.0 && dy == 0.0 {
        return invalid(format!("coincident points ({}, {})", bs.x, bs.y));
    }
    Ok(dy.atan2(dx))
}

/// Two-way echo loss `κ² d_ref⁴ / (d_m² d_l²)`.
pub fn round_trip_pathloss(d_l: f64, d_m: f64, kappa: f64, d_ref: f64) -> Result<f64> {
    if !(d_l > 0.0 && d_m > 0.0 && d_ref > 0.0) {
        return invalid(format!("distances must be positive (d_l={d_l}, d_m={d_m}, d_ref={d_ref})"));
    }
    Ok(kappa * kappa * (d_ref / d_m).powi(2) * (d_ref / d_l).powi(2))
}

/// Downlink loss `κ̂ (d0/d)^ν`.
pub fn comm_pathloss(d: f64, kappa_hat: f64, d0: f64, nu: f64) -> Result<f64> {
    if !(d > 0.0 && d0 > 0.0) {
        return invalid(format!("distances must be positive (d={d}, d0={d0})"));
    }
    Ok(kappa_hat * (d0 / d).powf(nu))
}

/// `√β ζ a_r(θ_rx) a_tᵀ(θ_tx)`, an `n_rx × n_tx` rank-one matrix.
pub fn target_response_matrix(link: &SensingLinkParams, arrays: &ArraySpec) -> Result<CMatrix> {
    if !(link.beta >= 0.0) {
        return invalid(format!("beta must be nonnegative, got {}", link.beta));
    }
    arrays.validate()?;
    let a_r = steering_vector(link.theta_rx, arrays.n_rx, arrays.spacing_ratio)?;
    let a_t = steering_vector(link.theta_tx, arrays.n_tx, arrays.spacing_ratio)?;
    let gain = Complex64::new(link.beta.sqrt() * link.zeta, 0.0);
    Ok(a_r * a_t.transpose() * gain)
}

/// `a*(θ) aᵀ(θ)`: the transmit-side quadratic form whose trace against a
/// covariance gives the power radiated toward θ.
pub fn steering_outer(a_t: &CVector) -> CMatrix {
    a_t.conjugate() * a_t.transpose()
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}
