use std::f64::consts::PI;

use super::{EstimatorError, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Digamma function for `x > 0`: upward recurrence to `x >= 10`, then the
/// asymptotic series.
pub fn digamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(EstimatorError::Domain(format!("digamma needs x > 0, got {x}")));
    }
    let mut x = x;
    let mut shift = 0.0;
    while x < 10.0 {
        shift -= 1.0 / x;
        x += 1.0;
    }
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 / 132.0))));
    Ok(shift + x.ln() - 0.5 * inv - series)
}

/// `Γ(d/2 + 1)` for a positive integer `d`, exact up to rounding.
fn gamma_half_plus_one(d: usize) -> f64 {
    // Γ(1) = 1, Γ(3/2) = √π/2, then Γ(x + 1) = x Γ(x).
    let (mut x, mut g) = if d.is_multiple_of(2) { (1.0, 1.0) } else { (1.5, PI.sqrt() / 2.0) };
    let target = d as f64 / 2.0 + 1.0;
    while x < target {
        g *= x;
        x += 1.0;
    }
    g
}

/// Volume of the `d`-dimensional Euclidean ball of radius `r`.
pub fn ball_volume(d: usize, r: f64) -> f64 {
    PI.powf(d as f64 / 2.0) / gamma_half_plus_one(d) * r.powi(d as i32)
}

/// `ln` of [`ball_volume`], stable for tiny radii.
pub fn ln_ball_volume(d: usize, r: f64) -> f64 {
    (d as f64 / 2.0) * PI.ln() - gamma_half_plus_one(d).ln() + d as f64 * r.ln()
}
