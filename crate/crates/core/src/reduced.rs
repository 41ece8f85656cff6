//! Gyrophase-independent distributions `F(x, w, v_par)` on tensor grids.
//!
//! `x` lives on a periodic [`TorusGrid`] (2D when nothing depends on the
//! parallel coordinate, 3D otherwise), `w = |v_perp|` on a uniform grid over
//! `[0, w_max]` including both endpoints, and `v_par` on a uniform grid over
//! `[-v_max, v_max]`.  Storage is flat with the x-block innermost:
//! `idx = (iw * n_v + iv) * n_x + ix`, so every `(w, v_par)` slab is a
//! contiguous spatial field.
//!
//! In the `W` chart the phase-space measure is `w dw dv_par dx` (times `2 pi`
//! from the gyroangle where number densities are involved); in the `Mu` chart
//! (`mu = w^2 / 2b`) it is `b(x_perp) dmu dv_par dx`.
//!
//! Velocity derivatives use centered second-order differences with one-sided
//! three-point closures at interval ends; spatial derivatives are spectral.

use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid, TAU};

/// Which radial velocity variable the speed axis of a distribution carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chart {
    /// Speed axis is `w = |v_perp|`, measure `w dw`.
    W,
    /// Speed axis is the magnetic moment `mu = w^2/(2b)`, measure `b dmu`.
    Mu,
}

/// Uniform grid on `[0, max]`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedGrid {
    n: usize,
    max: f64,
}

impl SpeedGrid {
    pub fn new(n: usize, max: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidParameter(format!(
                "speed grid needs at least 4 nodes, got {n}"
            )));
        }
        if !(max.is_finite() && max > 0.0) {
            return Err(Error::InvalidParameter(format!("speed max must be positive, got {max}")));
        }
        Ok(Self { n, max })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn spacing(&self) -> f64 {
        self.max / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        i as f64 * self.spacing()
    }

    /// Trapezoid quadrature weight (no measure factor).
    pub fn quad_weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i == self.n - 1 {
            0.5 * h
        } else {
            h
        }
    }
}

/// Uniform grid on `[-max, max]`, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParallelGrid {
    n: usize,
    max: f64,
}

impl ParallelGrid {
    pub fn new(n: usize, max: f64) -> Result<Self> {
        if n < 4 {
            return Err(Error::InvalidParameter(format!(
                "parallel grid needs at least 4 nodes, got {n}"
            )));
        }
        if !(max.is_finite() && max > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "parallel max must be positive, got {max}"
            )));
        }
        Ok(Self { n, max })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.max / (self.n - 1) as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        -self.max + i as f64 * self.spacing()
    }

    pub fn quad_weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        if i == 0 || i == self.n - 1 {
            0.5 * h
        } else {
            h
        }
    }
}

/// Distribution (or any scalar data) on the reduced phase-space grid.
/// Physical distributions are nonnegative; residual and scratch data reuse
/// the container with signed values.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDistribution {
    x_grid: TorusGrid,
    speed: SpeedGrid,
    parallel: ParallelGrid,
    chart: Chart,
    values: Vec<f64>,
}

impl ReducedDistribution {
    pub fn zeros(x_grid: &TorusGrid, speed: SpeedGrid, parallel: ParallelGrid, chart: Chart) -> Self {
        let n = x_grid.len() * speed.n() * parallel.n();
        Self { x_grid: x_grid.clone(), speed, parallel, chart, values: vec![0.0; n] }
    }

    /// Sample `f(x, w_or_mu, v_par)` at every node; `x` is the node position
    /// slice of length `x_grid.dim()`.
    pub fn from_fn(
        x_grid: &TorusGrid,
        speed: SpeedGrid,
        parallel: ParallelGrid,
        chart: Chart,
        f: impl Fn(&[f64], f64, f64) -> f64,
    ) -> Self {
        let mut out = Self::zeros(x_grid, speed, parallel, chart);
        let nx = x_grid.len();
        let d = x_grid.dim();
        let mut pos = [0.0; 3];
        for iw in 0..speed.n() {
            let w = speed.coord(iw);
            for iv in 0..parallel.n() {
                let v = parallel.coord(iv);
                let base = (iw * parallel.n() + iv) * nx;
                for ix in 0..nx {
                    x_grid.position(ix, &mut pos);
                    out.values[base + ix] = f(&pos[..d], w, v);
                }
            }
        }
        out
    }

    /// Separable product `F = g(x) * profile(w, v_par)`.
    pub fn product(
        g: &ScalarField,
        speed: SpeedGrid,
        parallel: ParallelGrid,
        chart: Chart,
        profile: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let mut out = Self::zeros(g.grid(), speed, parallel, chart);
        let nx = g.grid().len();
        for iw in 0..speed.n() {
            let w = speed.coord(iw);
            for iv in 0..parallel.n() {
                let p = profile(w, parallel.coord(iv));
                let base = (iw * parallel.n() + iv) * nx;
                for ix in 0..nx {
                    out.values[base + ix] = g.values()[ix] * p;
                }
            }
        }
        out
    }

    pub fn x_grid(&self) -> &TorusGrid {
        &self.x_grid
    }

    pub fn speed(&self) -> &SpeedGrid {
        &self.speed
    }

    pub fn parallel(&self) -> &ParallelGrid {
        &self.parallel
    }

    pub fn chart(&self) -> Chart {
        self.chart
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn idx(&self, iw: usize, iv: usize, ix: usize) -> usize {
        (iw * self.parallel.n() + iv) * self.x_grid.len() + ix
    }

    /// Contiguous spatial slab at fixed `(iw, iv)`.
    pub fn x_slab(&self, iw: usize, iv: usize) -> &[f64] {
        let nx = self.x_grid.len();
        let base = (iw * self.parallel.n() + iv) * nx;
        &self.values[base..base + nx]
    }

    pub fn x_slab_mut(&mut self, iw: usize, iv: usize) -> &mut [f64] {
        let nx = self.x_grid.len();
        let base = (iw * self.parallel.n() + iv) * nx;
        &mut self.values[base..base + nx]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.x_grid == other.x_grid && self.speed == other.speed && self.parallel == other.parallel
    }

    pub fn require_chart(&self, chart: Chart) -> Result<()> {
        if self.chart != chart {
            return Err(Error::ChartMismatch { expected: chart, got: self.chart });
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// `d/dw` with the module's fixed scheme (centered interior, one-sided
    /// three-point at the ends).  Same layout as `values`.
    pub fn d_dspeed(&self) -> Vec<f64> {
        fd_blocks(&self.values, 1, self.speed.n(), self.parallel.n() * self.x_grid.len(), self.speed.spacing())
    }

    /// `d/dv_par`, same scheme as `d_dspeed`.
    pub fn d_dparallel(&self) -> Vec<f64> {
        fd_blocks(&self.values, self.speed.n(), self.parallel.n(), self.x_grid.len(), self.parallel.spacing())
    }
}

/// Second-order finite difference along the middle axis of an
/// `[outer][n][inner]` array: centered in the interior, one-sided three-point
/// stencils at the two ends (exact on quadratics everywhere).
pub(crate) fn fd_blocks(values: &[f64], outer: usize, n: usize, inner: usize, h: f64) -> Vec<f64> {
    assert!(n >= 3, "finite-difference axis needs at least 3 nodes");
    assert_eq!(values.len(), outer * n * inner);
    let mut out = vec![0.0; values.len()];
    let inv2h = 1.0 / (2.0 * h);
    for o in 0..outer {
        let block = o * n * inner;
        for r in 0..inner {
            let at = |j: usize| values[block + j * inner + r];
            out[block + r] = (-3.0 * at(0) + 4.0 * at(1) - at(2)) * inv2h;
            for j in 1..n - 1 {
                out[block + j * inner + r] = (at(j + 1) - at(j - 1)) * inv2h;
            }
            out[block + (n - 1) * inner + r] =
                (3.0 * at(n - 1) - 4.0 * at(n - 2) + at(n - 3)) * inv2h;
        }
    }
    out
}

/// Unit Maxwellian velocity profile `M(w, v_par) = (2 pi)^{-3/2}
/// exp(-(w^2 + v_par^2)/2)`, normalized so `2 pi int M w dw dv_par = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxwellianProfile;

impl MaxwellianProfile {
    pub fn eval(&self, w: f64, v_par: f64) -> f64 {
        (TAU).powf(-1.5) * (-(w * w + v_par * v_par) / 2.0).exp()
    }

    /// `int (w^2 + v_par^2)/2 * M w dw dv_par` (no gyroangle factor): the
    /// kinetic energy carried per unit density is `3/2`, so this equals
    /// `3/(4 pi)`.
    pub fn energy_coefficient(&self) -> f64 {
        3.0 / (4.0 * std::f64::consts::PI)
    }

    /// Smallest `w_max` whose discarded perpendicular tail mass fraction
    /// `exp(-w_max^2/2)` is below `tail`.
    pub fn required_w_max(&self, tail: f64) -> f64 {
        (-2.0 * tail.ln()).sqrt()
    }

    /// `v_max` bounding the parallel tail mass fraction below `tail`
    /// (conservative Gaussian tail bound `exp(-v^2/2)`).
    pub fn required_v_max(&self, tail: f64) -> f64 {
        (-2.0 * tail.ln()).sqrt()
    }
}
