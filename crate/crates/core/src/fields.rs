//! External magnetic field models and the nondimensional scaling.
//!
//! The field is `B = (0, 0, b(x_perp)/eps)` with `b` smooth, time-independent,
//! and bounded below by a positive constant.  `eps` is the ratio of plasma to
//! cyclotron frequency; the strong-field regime of interest has `eps` well
//! below one.  The magnetic force acts on the perpendicular velocity block
//! only: `v_perp -> v_perp^perp = (v_y, -v_x)`, nothing on the parallel
//! component.

use crate::error::{Error, Result};
use crate::grid::TAU;

/// Rotation by -pi/2: `u^perp = (u_y, -u_x)`.
///
/// Identity used throughout: `a . b^perp = -a^perp . b`.
#[inline]
pub fn perp(u: [f64; 2]) -> [f64; 2] {
    [u[1], -u[0]]
}

/// Dimensional scales defining the regime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingParameters {
    /// Plasma frequency (rad/s).
    pub omega_p: f64,
    /// Cyclotron frequency (rad/s).
    pub omega_c: f64,
}

/// `eps = omega_p / omega_c`, which also equals `1/(t_bar * omega_p)` for the
/// long observation time `t_bar = omega_c / omega_p^2`.
pub fn epsilon_from_scales(scales: &ScalingParameters) -> Result<f64> {
    let ScalingParameters { omega_p, omega_c } = *scales;
    if !(omega_p.is_finite() && omega_p > 0.0) || !(omega_c.is_finite() && omega_c > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frequencies must be positive and finite, got omega_p={omega_p}, omega_c={omega_c}"
        )));
    }
    let eps = omega_p / omega_c;
    if eps >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "omega_p/omega_c = {eps} >= 1: cyclotron frequency must dominate for the strong-field regime"
        )));
    }
    Ok(eps)
}

/// Profile of the out-of-plane field strength `b(x_perp)`.
///
/// `Uniform` and `PeriodicBump` are periodic and usable on torus grids;
/// `LinearRamp` is not periodic and is reserved for free-space single-particle
/// runs, with positivity checked on a caller-stated bounding box.
#[derive(Debug, Clone, PartialEq)]
pub enum MagneticFieldModel {
    Uniform { b0: f64 },
    LinearRamp { b0: f64, grad: [f64; 2] },
    /// `b0 * (1 + amplitude * cos(2 pi x / lengths0) * cos(2 pi y / lengths1))`.
    PeriodicBump { b0: f64, amplitude: f64, lengths: [f64; 2] },
}

impl MagneticFieldModel {
    pub fn eval(&self, x: [f64; 2]) -> f64 {
        match *self {
            Self::Uniform { b0 } => b0,
            Self::LinearRamp { b0, grad } => b0 + grad[0] * x[0] + grad[1] * x[1],
            Self::PeriodicBump { b0, amplitude, lengths } => {
                b0 * (1.0
                    + amplitude
                        * (TAU * x[0] / lengths[0]).cos()
                        * (TAU * x[1] / lengths[1]).cos())
            }
        }
    }

    pub fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        match *self {
            Self::Uniform { .. } => [0.0, 0.0],
            Self::LinearRamp { grad, .. } => grad,
            Self::PeriodicBump { b0, amplitude, lengths } => {
                let kx = TAU / lengths[0];
                let ky = TAU / lengths[1];
                let c = b0 * amplitude;
                [
                    -c * kx * (kx * x[0]).sin() * (ky * x[1]).cos(),
                    -c * ky * (kx * x[0]).cos() * (ky * x[1]).sin(),
                ]
            }
        }
    }

    /// Lower bound of `b` over the given perpendicular bounding box
    /// (`[x_min, x_max] x [y_min, y_max]`); exact for all three variants.
    pub fn lower_bound(&self, bbox: [[f64; 2]; 2]) -> f64 {
        match *self {
            Self::Uniform { b0 } => b0,
            Self::LinearRamp { b0, grad } => {
                let mut lo = f64::INFINITY;
                for &x in &bbox[0] {
                    for &y in &bbox[1] {
                        lo = lo.min(b0 + grad[0] * x + grad[1] * y);
                    }
                }
                lo
            }
            Self::PeriodicBump { b0, amplitude, .. } => b0 * (1.0 - amplitude.abs()),
        }
    }

    /// Samples of b at the perpendicular projection of every grid node.
    pub fn values_on(&self, grid: &crate::grid::TorusGrid) -> Vec<f64> {
        let mut pos = vec![0.0; grid.dim()];
        (0..grid.len())
            .map(|ix| {
                grid.position(ix, &mut pos);
                self.eval([pos[0], pos[1]])
            })
            .collect()
    }

    /// Check `b >= floor > 0` on the bounding box.
    pub fn validate_positivity(&self, bbox: [[f64; 2]; 2], floor: f64) -> Result<()> {
        if !(floor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "positivity floor must be > 0, got {floor}"
            )));
        }
        let lo = self.lower_bound(bbox);
        if lo < floor {
            return Err(Error::FieldNotPositive(format!(
                "inf b = {lo:.6} < floor {floor} on [{:?} x {:?}]",
                bbox[0], bbox[1]
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perp_rotates_clockwise() {
        assert_eq!(perp([1.0, 0.0]), [0.0, -1.0]);
        assert_eq!(perp([0.0, 1.0]), [1.0, 0.0]);
        // a . b^perp = -a^perp . b
        let a = [0.3, -1.2];
        let b = [2.0, 0.7];
        let lhs = a[0] * perp(b)[0] + a[1] * perp(b)[1];
        let rhs = -(perp(a)[0] * b[0] + perp(a)[1] * b[1]);
        assert!((lhs - rhs).abs() < 1e-15);
    }

    #[test]
    fn epsilon_is_frequency_ratio() {
        let eps = epsilon_from_scales(&ScalingParameters { omega_p: 1.0, omega_c: 20.0 }).unwrap();
        assert!((eps - 0.05).abs() < 1e-15);
        assert!(epsilon_from_scales(&ScalingParameters { omega_p: 2.0, omega_c: 1.0 }).is_err());
        assert!(epsilon_from_scales(&ScalingParameters { omega_p: -1.0, omega_c: 1.0 }).is_err());
    }

    #[test]
    fn ramp_gradient_and_bound() {
        let m = MagneticFieldModel::LinearRamp { b0: 1.0, grad: [0.1, 0.0] };
        assert!((m.eval([2.0, 5.0]) - 1.2).abs() < 1e-15);
        assert_eq!(m.grad([2.0, 5.0]), [0.1, 0.0]);
        let bbox = [[-4.0, 4.0], [-4.0, 4.0]];
        assert!((m.lower_bound(bbox) - 0.6).abs() < 1e-15);
        assert!(m.validate_positivity(bbox, 0.5).is_ok());
        assert!(m.validate_positivity([[-20.0, 4.0], [-4.0, 4.0]], 0.5).is_err());
    }

    #[test]
    fn bump_gradient_matches_finite_differences() {
        let m = MagneticFieldModel::PeriodicBump {
            b0: 1.0,
            amplitude: 0.3,
            lengths: [TAU, TAU],
        };
        let x = [0.7, 1.9];
        let h = 1e-6;
        let g = m.grad(x);
        let fd_x = (m.eval([x[0] + h, x[1]]) - m.eval([x[0] - h, x[1]])) / (2.0 * h);
        let fd_y = (m.eval([x[0], x[1] + h]) - m.eval([x[0], x[1] - h])) / (2.0 * h);
        assert!((g[0] - fd_x).abs() < 1e-8);
        assert!((g[1] - fd_y).abs() < 1e-8);
        assert!((m.lower_bound([[0.0, TAU], [0.0, TAU]]) - 0.7).abs() < 1e-15);
    }
}
