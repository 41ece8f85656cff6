//! Gyrophase machinery: polar velocity coordinates, the gyroaverage
//! Π g = (1/2π) ∫₀^{2π} g dθ, the gyration operator 𝓛 g = b ∂g/∂θ, the
//! vector field G = w ∇⊥F − ∇⊥φ ∂F/∂w, and the first-order corrector
//! f₁ = −(1/b) e_θ·G + P together with the solvability residuals that
//! gate its construction.
//!
//! Gyrophase grids are uniform with even node count, so Π (the sample
//! mean) and ∂/∂θ (trigonometric differentiation) are exact on
//! trigonometric polynomials of degree < N_θ/2.

use crate::error::{Error, Result};
use crate::fields::MagneticFieldModel;
use crate::grid::{ScalarField, Spectral, TorusGrid, TAU};
use crate::guiding_center::drift_from_gradients;
use crate::poisson::gradient_spectral;
use crate::reduced::{fd_blocks, Chart, ReducedDistribution};

/// Absolute L² threshold separating genuine constraint violation from
/// discretization roundoff in the parallel solvability check.
pub const DEFAULT_SOLVABILITY_TOL: f64 = 1e-8;

/// Polar velocity coordinates (w, θ, v∥) with v⊥ = w(cos θ, sin θ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyroCoordinates {
    pub w: f64,
    pub theta: f64,
    pub v_par: f64,
}

impl GyroCoordinates {
    /// Convention: w = 0 maps to θ = 0.
    pub fn from_velocity(v: [f64; 3]) -> Self {
        let w = v[0].hypot(v[1]);
        let theta = if w == 0.0 {
            0.0
        } else {
            let raw = v[1].atan2(v[0]);
            if raw < 0.0 {
                raw + TAU
            } else {
                raw
            }
        };
        Self {
            w,
            theta,
            v_par: v[2],
        }
    }

    pub fn to_velocity(self) -> [f64; 3] {
        [
            self.w * self.theta.cos(),
            self.w * self.theta.sin(),
            self.v_par,
        ]
    }
}

/// Unit vector along v⊥.
pub fn e_w(theta: f64) -> [f64; 2] {
    [theta.cos(), theta.sin()]
}

/// Unit vector along ∂v⊥/∂θ.
pub fn e_theta(theta: f64) -> [f64; 2] {
    [-theta.sin(), theta.cos()]
}

/// Samples of a function of gyrophase on the uniform grid θ_j = 2πj/N.
#[derive(Debug, Clone, PartialEq)]
pub struct GyrophaseSampling {
    values: Vec<f64>,
}

impl GyrophaseSampling {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_theta_count(values.len())?;
        Ok(Self { values })
    }

    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        check_theta_count(n)?;
        Ok(Self {
            values: (0..n).map(|j| f(theta_node(n, j))).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn node(&self, j: usize) -> f64 {
        theta_node(self.values.len(), j)
    }
}

fn check_theta_count(n: usize) -> Result<()> {
    if n < 4 || n % 2 != 0 {
        return Err(Error::InvalidParameter(format!(
            "gyrophase sampling needs an even node count of at least 4, got {n}"
        )));
    }
    Ok(())
}

pub fn theta_node(n: usize, j: usize) -> f64 {
    TAU * j as f64 / n as f64
}

/// Π: the uniform sample mean, identical to the rectangle rule for
/// (1/2π)∫ dθ and exact on trig polynomials of degree < N.
pub fn gyroaverage(s: &GyrophaseSampling) -> f64 {
    s.values.iter().sum::<f64>() / s.values.len() as f64
}

/// 𝓛 g = b ∂g/∂θ on the sampling grid.
#[allow(non_snake_case)]
pub fn apply_L(s: &GyrophaseSampling, b: f64) -> GyrophaseSampling {
    let matrix = DifferentiationMatrix::new(s.len());
    let mut out = vec![0.0; s.len()];
    matrix.apply(&s.values, &mut out);
    for v in &mut out {
        *v *= b;
    }
    GyrophaseSampling { values: out }
}

/// Trigonometric differentiation matrix for an even-N uniform periodic
/// grid: D[j][k] = (1/2)(−1)^{j−k} cot(π(j−k)/N) off the diagonal.
/// Exact for trig polynomials of degree < N/2; annihilates the Nyquist
/// cosine, matching the Fourier convention used on spatial grids.
struct DifferentiationMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl DifferentiationMatrix {
    fn new(n: usize) -> Self {
        let mut entries = vec![0.0; n * n];
        for j in 0..n {
            for k in 0..n {
                if j == k {
                    continue;
                }
                let d = j as isize - k as isize;
                let sign = if d.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                entries[j * n + k] =
                    0.5 * sign / (std::f64::consts::PI * d as f64 / n as f64).tan();
            }
        }
        Self { n, entries }
    }

    fn apply(&self, values: &[f64], out: &mut [f64]) {
        for j in 0..self.n {
            let row = &self.entries[j * self.n..(j + 1) * self.n];
            let mut acc = 0.0;
            for k in 0..self.n {
                acc += row[k] * values[k];
            }
            out[j] = acc;
        }
    }
}

/// G = w ∇⊥F − ∇⊥φ ∂F/∂w, returned componentwise on the (x, w, v∥)
/// grid of F. Spectral derivatives in x⊥, centered differences in w
/// with one-sided second-order closures at the w endpoints.
#[allow(non_snake_case)]
pub fn vector_G(
    f: &ReducedDistribution,
    phi: &ScalarField,
) -> Result<[ReducedDistribution; 2]> {
    f.require_chart(Chart::W)?;
    if phi.grid() != f.x_grid() {
        return Err(Error::ShapeMismatch(
            "potential grid does not match the distribution's x grid".into(),
        ));
    }
    let x_grid = f.x_grid();
    let n_x = x_grid.len();
    let n_w = f.speed().n();
    let n_v = f.parallel().n();

    let grad_phi = gradient_spectral(phi);
    let df_dw = fd_blocks(f.values(), 1, n_w, n_v * n_x, f.speed().spacing());

    let mut sp = Spectral::new(x_grid);
    let mut components = [
        ReducedDistribution::zeros(x_grid, f.speed().clone(), f.parallel().clone(), Chart::W),
        ReducedDistribution::zeros(x_grid, f.speed().clone(), f.parallel().clone(), Chart::W),
    ];
    for axis in 0..2 {
        for iw in 0..n_w {
            let w = f.speed().coord(iw);
            for iv in 0..n_v {
                let df_dx = sp.derivative_values(f.x_slab(iw, iv), axis);
                let base = (iw * n_v + iv) * n_x;
                let out = components[axis].values_mut();
                for ix in 0..n_x {
                    out[base + ix] =
                        w * df_dx[ix] - grad_phi.component(axis)[ix] * df_dw[base + ix];
                }
            }
        }
    }
    Ok(components)
}

/// Gyrophase-resolved distribution g(x, w, θ, v∥) on the tensor grid,
/// laid out as idx = ((iw·N_θ + iθ)·N_v + iv)·N_x + ix.
#[derive(Debug, Clone)]
pub struct GyroResolvedDistribution {
    base: ReducedDistribution,
    n_theta: usize,
    values: Vec<f64>,
}

impl GyroResolvedDistribution {
    pub fn zeros(template: &ReducedDistribution, n_theta: usize) -> Result<Self> {
        check_theta_count(n_theta)?;
        let count =
            template.speed().n() * n_theta * template.parallel().n() * template.x_grid().len();
        Ok(Self {
            base: ReducedDistribution::zeros(
                template.x_grid(),
                template.speed().clone(),
                template.parallel().clone(),
                template.chart(),
            ),
            n_theta,
            values: vec![0.0; count],
        })
    }

    pub fn x_grid(&self) -> &TorusGrid {
        self.base.x_grid()
    }

    pub fn speed(&self) -> &crate::reduced::SpeedGrid {
        self.base.speed()
    }

    pub fn parallel(&self) -> &crate::reduced::ParallelGrid {
        self.base.parallel()
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn theta_node(&self, it: usize) -> f64 {
        theta_node(self.n_theta, it)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn idx(&self, iw: usize, it: usize, iv: usize, ix: usize) -> usize {
        ((iw * self.n_theta + it) * self.base.parallel().n() + iv) * self.base.x_grid().len() + ix
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Π applied pointwise in (x, w, v∥): the mean over the θ axis.
    pub fn gyroaverage(&self) -> ReducedDistribution {
        let n_x = self.base.x_grid().len();
        let n_v = self.base.parallel().n();
        let n_w = self.base.speed().n();
        let mut out = self.base.clone();
        let inv = 1.0 / self.n_theta as f64;
        for iw in 0..n_w {
            for iv in 0..n_v {
                for ix in 0..n_x {
                    let mut acc = 0.0;
                    for it in 0..self.n_theta {
                        acc += self.values[self.idx(iw, it, iv, ix)];
                    }
                    out.values_mut()[(iw * n_v + iv) * n_x + ix] = acc * inv;
                }
            }
        }
        out
    }

    /// 𝓛 applied along the θ axis with b evaluated at each x⊥ node.
    #[allow(non_snake_case)]
    pub fn apply_L(&self, model: &MagneticFieldModel) -> Self {
        let n_x = self.base.x_grid().len();
        let n_v = self.base.parallel().n();
        let n_w = self.base.speed().n();
        let matrix = DifferentiationMatrix::new(self.n_theta);
        let b_at = model.values_on(self.base.x_grid());

        let mut out = self.clone();
        let mut lane = vec![0.0; self.n_theta];
        let mut dlane = vec![0.0; self.n_theta];
        for iw in 0..n_w {
            for iv in 0..n_v {
                for ix in 0..n_x {
                    for it in 0..self.n_theta {
                        lane[it] = self.values[self.idx(iw, it, iv, ix)];
                    }
                    matrix.apply(&lane, &mut dlane);
                    for it in 0..self.n_theta {
                        out.values[self.idx(iw, it, iv, ix)] = b_at[ix] * dlane[it];
                    }
                }
            }
        }
        out
    }

    /// L² norm with measure w dw dv∥ dθ dx.
    pub fn l2_norm(&self) -> f64 {
        let n_x = self.base.x_grid().len();
        let n_v = self.base.parallel().n();
        let n_w = self.base.speed().n();
        let cell = self.base.x_grid().cell_volume();
        let dtheta = TAU / self.n_theta as f64;
        let mut acc = 0.0;
        for iw in 0..n_w {
            let wq = self.base.speed().coord(iw) * self.base.speed().quad_weight(iw);
            if wq == 0.0 {
                continue;
            }
            for it in 0..self.n_theta {
                for iv in 0..n_v {
                    let vq = self.base.parallel().quad_weight(iv);
                    let base = ((iw * self.n_theta + it) * n_v + iv) * n_x;
                    let mut slab = 0.0;
                    for ix in 0..n_x {
                        let g = self.values[base + ix];
                        slab += g * g;
                    }
                    acc += slab * wq * vq * dtheta * cell;
                }
            }
        }
        acc.sqrt()
    }
}

/// Samples of e_θ(θ)·G over the tensor grid.
pub fn e_theta_projection(
    g: &[ReducedDistribution; 2],
    n_theta: usize,
) -> Result<GyroResolvedDistribution> {
    directional_projection(g, n_theta, e_theta)
}

/// Samples of e_w(θ)·G over the tensor grid.
pub fn e_w_projection(
    g: &[ReducedDistribution; 2],
    n_theta: usize,
) -> Result<GyroResolvedDistribution> {
    directional_projection(g, n_theta, e_w)
}

fn directional_projection(
    g: &[ReducedDistribution; 2],
    n_theta: usize,
    unit: fn(f64) -> [f64; 2],
) -> Result<GyroResolvedDistribution> {
    if !g[0].same_shape(&g[1]) {
        return Err(Error::ShapeMismatch(
            "vector components live on different grids".into(),
        ));
    }
    let mut out = GyroResolvedDistribution::zeros(&g[0], n_theta)?;
    let n_x = g[0].x_grid().len();
    let n_v = g[0].parallel().n();
    let n_w = g[0].speed().n();
    for iw in 0..n_w {
        for it in 0..n_theta {
            let [u0, u1] = unit(theta_node(n_theta, it));
            for iv in 0..n_v {
                let base_in = (iw * n_v + iv) * n_x;
                let base_out = ((iw * n_theta + it) * n_v + iv) * n_x;
                for ix in 0..n_x {
                    out.values[base_out + ix] =
                        u0 * g[0].values()[base_in + ix] + u1 * g[1].values()[base_in + ix];
                }
            }
        }
    }
    Ok(out)
}

/// First-order corrector f₁ = −(1/b) e_θ·G + P, defined only when the
/// parallel solvability constraint holds; Π f₁ = P exactly since
/// Π e_θ = 0 on the even uniform θ grid.
pub fn construct_f1(
    f: &ReducedDistribution,
    phi: &ScalarField,
    model: &MagneticFieldModel,
    p: &ReducedDistribution,
    n_theta: usize,
    tol: f64,
) -> Result<GyroResolvedDistribution> {
    if !f.same_shape(p) {
        return Err(Error::ShapeMismatch(
            "P does not share the distribution's grid".into(),
        ));
    }
    let (_, norm) = solvability_residual_parallel(f, phi)?;
    if norm > tol {
        return Err(Error::NotSolvable {
            which: "parallel solvability constraint",
            norm,
            tol,
        });
    }

    let g = vector_G(f, phi)?;
    let mut out = e_theta_projection(&g, n_theta)?;
    let b_at = model.values_on(f.x_grid());
    let n_x = f.x_grid().len();
    let n_v = f.parallel().n();
    for iw in 0..f.speed().n() {
        for it in 0..n_theta {
            for iv in 0..n_v {
                let base_out = ((iw * n_theta + it) * n_v + iv) * n_x;
                let base_p = (iw * n_v + iv) * n_x;
                for ix in 0..n_x {
                    let proj = out.values[base_out + ix];
                    out.values[base_out + ix] = -proj / b_at[ix] + p.values()[base_p + ix];
                }
            }
        }
    }
    Ok(out)
}

/// Residual of the parallel constraint v∥ ∂F/∂x∥ − (∂φ/∂x∥) ∂F/∂v∥,
/// with its L² norm under the measure w dw dv∥ dx. On a 2D x grid
/// nothing depends on x∥ and the residual vanishes identically.
pub fn solvability_residual_parallel(
    f: &ReducedDistribution,
    phi: &ScalarField,
) -> Result<(ReducedDistribution, f64)> {
    f.require_chart(Chart::W)?;
    if phi.grid() != f.x_grid() {
        return Err(Error::ShapeMismatch(
            "potential grid does not match the distribution's x grid".into(),
        ));
    }
    let x_grid = f.x_grid();
    let mut residual =
        ReducedDistribution::zeros(x_grid, f.speed().clone(), f.parallel().clone(), Chart::W);
    if x_grid.dim() == 2 {
        return Ok((residual, 0.0));
    }

    let n_x = x_grid.len();
    let n_v = f.parallel().n();
    let n_w = f.speed().n();
    let mut sp = Spectral::new(x_grid);
    let dphi_dpar = sp.derivative_values(phi.values(), 2);
    let df_dv = f.d_dparallel();
    for iw in 0..n_w {
        for iv in 0..n_v {
            let v_par = f.parallel().coord(iv);
            let df_dpar = sp.derivative_values(f.x_slab(iw, iv), 2);
            let base = (iw * n_v + iv) * n_x;
            let out = residual.values_mut();
            for ix in 0..n_x {
                out[base + ix] =
                    v_par * df_dpar[ix] - dphi_dpar[ix] * df_dv[base + ix];
            }
        }
    }
    let norm = reduced_l2_norm(&residual);
    Ok((residual, norm))
}

/// L² norm of a (w-chart) reduced field with measure w dw dv∥ dx.
pub fn reduced_l2_norm(f: &ReducedDistribution) -> f64 {
    let n_x = f.x_grid().len();
    let n_v = f.parallel().n();
    let cell = f.x_grid().cell_volume();
    let mut acc = 0.0;
    for iw in 0..f.speed().n() {
        let wq = f.speed().coord(iw) * f.speed().quad_weight(iw);
        if wq == 0.0 {
            continue;
        }
        for iv in 0..n_v {
            let vq = f.parallel().quad_weight(iv);
            let slab = f.x_slab(iw, iv);
            let mut s = 0.0;
            for ix in 0..n_x {
                s += slab[ix] * slab[ix];
            }
            acc += s * wq * vq * cell;
        }
    }
    acc.sqrt()
}

/// Residual of the order-zero evolution equation
/// ∂F/∂t + U⊥·∇⊥F + u_w ∂F/∂w − (∂φ_P/∂x∥)∂F/∂v∥
///       + v∥ ∂P/∂x∥ − (∂φ_F/∂x∥)∂P/∂v∥,
/// with drift coefficients evaluated from (φ_F, b) at each node.
/// `df_dt` is supplied by the caller (None for stationary data).
pub fn solvability_residual_order0(
    f: &ReducedDistribution,
    p: &ReducedDistribution,
    phi_f: &ScalarField,
    phi_p: &ScalarField,
    model: &MagneticFieldModel,
    df_dt: Option<&ReducedDistribution>,
) -> Result<(ReducedDistribution, f64)> {
    f.require_chart(Chart::W)?;
    if !f.same_shape(p) {
        return Err(Error::ShapeMismatch(
            "P does not share the distribution's grid".into(),
        ));
    }
    if let Some(ft) = df_dt {
        if !f.same_shape(ft) {
            return Err(Error::ShapeMismatch(
                "time derivative does not share the distribution's grid".into(),
            ));
        }
    }
    let x_grid = f.x_grid();
    if phi_f.grid() != x_grid || phi_p.grid() != x_grid {
        return Err(Error::ShapeMismatch(
            "potential grid does not match the distribution's x grid".into(),
        ));
    }

    let n_x = x_grid.len();
    let n_v = f.parallel().n();
    let n_w = f.speed().n();
    let parallel_axis = if x_grid.dim() == 3 { Some(2) } else { None };

    let grad_phi_f = gradient_spectral(phi_f);
    let mut sp = Spectral::new(x_grid);
    let dphi_p_dpar = match parallel_axis {
        Some(axis) => sp.derivative_values(phi_p.values(), axis),
        None => vec![0.0; n_x],
    };
    let dphi_f_dpar = match parallel_axis {
        Some(axis) => sp.derivative_values(phi_f.values(), axis),
        None => vec![0.0; n_x],
    };
    let df_dw = fd_blocks(f.values(), 1, n_w, n_v * n_x, f.speed().spacing());
    let df_dv = f.d_dparallel();
    let dp_dv = p.d_dparallel();

    // Drift coefficients depend on (x⊥, w) only.
    let mut pos = vec![0.0; x_grid.dim()];
    let mut drift = vec![([0.0; 2], 0.0); n_w * n_x];
    for iw in 0..n_w {
        let w = f.speed().coord(iw);
        for ix in 0..n_x {
            x_grid.position(ix, &mut pos);
            let grad_phi = [grad_phi_f.component(0)[ix], grad_phi_f.component(1)[ix]];
            drift[iw * n_x + ix] =
                drift_from_gradients([pos[0], pos[1]], w, grad_phi, model);
        }
    }

    let mut residual =
        ReducedDistribution::zeros(x_grid, f.speed().clone(), f.parallel().clone(), Chart::W);
    for iw in 0..n_w {
        for iv in 0..n_v {
            let v_par = f.parallel().coord(iv);
            let df_dx0 = sp.derivative_values(f.x_slab(iw, iv), 0);
            let df_dx1 = sp.derivative_values(f.x_slab(iw, iv), 1);
            let dp_dpar = match parallel_axis {
                Some(axis) => sp.derivative_values(p.x_slab(iw, iv), axis),
                None => vec![0.0; n_x],
            };
            let base = (iw * n_v + iv) * n_x;
            let out = residual.values_mut();
            for ix in 0..n_x {
                let (u_perp, u_w) = drift[iw * n_x + ix];
                let mut r = u_perp[0] * df_dx0[ix]
                    + u_perp[1] * df_dx1[ix]
                    + u_w * df_dw[base + ix]
                    - dphi_p_dpar[ix] * df_dv[base + ix]
                    + v_par * dp_dpar[ix]
                    - dphi_f_dpar[ix] * dp_dv[base + ix];
                if let Some(ft) = df_dt {
                    r += ft.values()[base + ix];
                }
                out[base + ix] = r;
            }
        }
    }
    let norm = reduced_l2_norm(&residual);
    Ok((residual, norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reduced::{ParallelGrid, SpeedGrid};

    fn sampling(n: usize, f: impl Fn(f64) -> f64) -> GyrophaseSampling {
        GyrophaseSampling::from_fn(n, f).unwrap()
    }

    #[test]
    fn polar_coordinates_match_hand_values() {
        let c = GyroCoordinates::from_velocity([1.0, 0.0, 3.0]);
        assert_eq!((c.w, c.theta, c.v_par), (1.0, 0.0, 3.0));

        let c = GyroCoordinates::from_velocity([0.0, 2.0, -1.0]);
        assert!((c.w - 2.0).abs() < 1e-15);
        assert!((c.theta - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        assert_eq!(c.v_par, -1.0);

        let c = GyroCoordinates::from_velocity([0.0, 0.0, 5.0]);
        assert_eq!((c.w, c.theta, c.v_par), (0.0, 0.0, 5.0));

        let v = [-0.3, 0.7, 0.2];
        let back = GyroCoordinates::from_velocity(v).to_velocity();
        for a in 0..3 {
            assert!((back[a] - v[a]).abs() < 1e-15);
        }
    }

    #[test]
    fn gyroaverage_of_basic_samples() {
        assert!(gyroaverage(&sampling(16, |t| t.cos())).abs() <= 1e-14);
        assert_eq!(gyroaverage(&sampling(8, |_| 2.5)), 2.5);
        let half = gyroaverage(&sampling(16, |t| t.cos().powi(2)));
        assert!((half - 0.5).abs() <= 1e-14);
        assert!(gyroaverage(&sampling(16, |t| t.sin())).abs() <= 1e-14);
    }

    #[test]
    fn sampling_rejects_sparse_or_odd_grids() {
        assert!(GyrophaseSampling::new(vec![1.0, 2.0]).is_err());
        assert!(GyrophaseSampling::new(vec![1.0; 7]).is_err());
        assert!(GyrophaseSampling::new(vec![1.0; 4]).is_ok());
    }

    #[test]
    fn gyration_operator_on_known_derivatives() {
        let z = apply_L(&sampling(8, |_| 3.0), 5.0);
        assert!(z.values().iter().all(|v| v.abs() <= 1e-13));

        let d = apply_L(&sampling(16, |t| t.sin()), 2.0);
        for (j, v) in d.values().iter().enumerate() {
            assert!((v - 2.0 * d.node(j).cos()).abs() <= 1e-12);
        }

        let d = apply_L(&sampling(16, |t| (3.0 * t).cos()), 1.0);
        for (j, v) in d.values().iter().enumerate() {
            assert!((v + 3.0 * (3.0 * d.node(j)).sin()).abs() <= 1e-12);
        }
    }

    #[test]
    fn gyroaverage_annihilates_gyration_range() {
        let s = sampling(16, |t| {
            1.3 + t.cos() - 0.7 * (2.0 * t).sin() + 0.25 * (5.0 * t).cos()
        });
        assert!(gyroaverage(&apply_L(&s, 1.7)).abs() <= 1e-12);
    }

    fn small_setup() -> (TorusGrid, SpeedGrid, ParallelGrid) {
        let x_grid = TorusGrid::square(TAU, 8).unwrap();
        let speed = SpeedGrid::new(9, 2.0).unwrap();
        let parallel = ParallelGrid::new(9, 3.0).unwrap();
        (x_grid, speed, parallel)
    }

    #[test]
    fn vector_field_vanishes_without_perpendicular_structure() {
        let (x_grid, speed, parallel) = small_setup();
        let f = ReducedDistribution::from_fn(&x_grid, speed, parallel, Chart::W, |_, _, v| {
            1.0 + v * v
        });
        let phi = ScalarField::zeros(&x_grid);
        let g = vector_G(&f, &phi).unwrap();
        for c in &g {
            assert!(c.values().iter().all(|v| v.abs() <= 1e-12));
        }
    }

    #[test]
    fn vector_field_matches_analytic_gradients() {
        let (x_grid, speed, parallel) = small_setup();
        // F = w² sin(x₀): G = (w³ cos x₀, 0) with φ = 0.
        let f = ReducedDistribution::from_fn(
            &x_grid,
            speed.clone(),
            parallel.clone(),
            Chart::W,
            |x, w, _| w * w * x[0].sin(),
        );
        let phi = ScalarField::zeros(&x_grid);
        let g = vector_G(&f, &phi).unwrap();
        for iw in 0..speed.n() {
            let w = speed.coord(iw);
            for iv in 0..parallel.n() {
                for ix in 0..x_grid.len() {
                    let mut pos = [0.0; 2];
                    x_grid.position(ix, &mut pos);
                    let idx = f.idx(iw, iv, ix);
                    assert!((g[0].values()[idx] - w.powi(3) * pos[0].cos()).abs() <= 1e-10);
                    assert!(g[1].values()[idx].abs() <= 1e-10);
                }
            }
        }

        // F = w² uniform in x, φ = sin(x₀): G = (−2w cos x₀, 0); centered
        // differences are exact on quadratics in w.
        let f = ReducedDistribution::from_fn(
            &x_grid,
            speed.clone(),
            parallel.clone(),
            Chart::W,
            |_, w, _| w * w,
        );
        let phi = ScalarField::from_fn(&x_grid, |x| x[0].sin());
        let g = vector_G(&f, &phi).unwrap();
        for iw in 0..speed.n() {
            let w = speed.coord(iw);
            for iv in 0..parallel.n() {
                for ix in 0..x_grid.len() {
                    let mut pos = [0.0; 2];
                    x_grid.position(ix, &mut pos);
                    let idx = f.idx(iw, iv, ix);
                    assert!((g[0].values()[idx] + 2.0 * w * pos[0].cos()).abs() <= 1e-10);
                    assert!(g[1].values()[idx].abs() <= 1e-10);
                }
            }
        }
    }

    #[test]
    fn corrector_is_zero_when_the_vector_field_vanishes() {
        let (x_grid, speed, parallel) = small_setup();
        let f = ReducedDistribution::from_fn(&x_grid, speed, parallel, Chart::W, |_, w, v| {
            (-w * w - v * v).exp()
        });
        let phi = ScalarField::zeros(&x_grid);
        let p = ReducedDistribution::zeros(f.x_grid(), f.speed().clone(), f.parallel().clone(), Chart::W);
        let model = MagneticFieldModel::Uniform { b0: 1.0 };
        let f1 = construct_f1(&f, &phi, &model, &p, 8, DEFAULT_SOLVABILITY_TOL).unwrap();
        // F uniform in x and φ = 0 give G = 0 exactly.
        assert!(f1.values().iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn corrector_matches_hand_assembled_formula() {
        let (x_grid, speed, parallel) = small_setup();
        let f = ReducedDistribution::from_fn(
            &x_grid,
            speed.clone(),
            parallel.clone(),
            Chart::W,
            |x, w, v| (-w * w - v * v).exp() * x[0].sin(),
        );
        let phi = ScalarField::zeros(&x_grid);
        let p = ReducedDistribution::zeros(&x_grid, speed.clone(), parallel.clone(), Chart::W);
        let model = MagneticFieldModel::Uniform { b0: 1.0 };
        let n_theta = 8;
        let f1 = construct_f1(&f, &phi, &model, &p, n_theta, DEFAULT_SOLVABILITY_TOL).unwrap();

        // With φ = 0 and b = 1: f₁ = −e_θ·(w ∇⊥F) = sin θ · w e^{−w²−v²} cos x₀.
        for iw in 0..speed.n() {
            let w = speed.coord(iw);
            for it in 0..n_theta {
                let theta = f1.theta_node(it);
                for iv in 0..parallel.n() {
                    let v = parallel.coord(iv);
                    for ix in 0..x_grid.len() {
                        let mut pos = [0.0; 2];
                        x_grid.position(ix, &mut pos);
                        let expected =
                            theta.sin() * w * (-w * w - v * v).exp() * pos[0].cos();
                        let got = f1.values()[f1.idx(iw, it, iv, ix)];
                        assert!(
                            (got - expected).abs() <= 1e-12,
                            "iw={iw} it={it} iv={iv} ix={ix}: {got} vs {expected}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn corrector_gyroaverage_recovers_p() {
        let (x_grid, speed, parallel) = small_setup();
        let f = ReducedDistribution::from_fn(
            &x_grid,
            speed.clone(),
            parallel.clone(),
            Chart::W,
            |x, w, v| (-w * w - v * v).exp() * (1.0 + 0.3 * x[0].sin() + 0.2 * x[1].cos()),
        );
        let phi = ScalarField::from_fn(&x_grid, |x| 0.1 * x[0].cos() + 0.05 * (x[1] * 2.0).sin());
        let p = ReducedDistribution::from_fn(
            &x_grid,
            speed.clone(),
            parallel.clone(),
            Chart::W,
            |x, w, v| 0.4 * (-w * w - 0.5 * v * v).exp() * x[1].sin(),
        );
        let model = MagneticFieldModel::PeriodicBump {
            b0: 1.5,
            amplitude: 0.2,
            lengths: [TAU, TAU],
        };
        let f1 = construct_f1(&f, &phi, &model, &p, 8, DEFAULT_SOLVABILITY_TOL).unwrap();
        let avg = f1.gyroaverage();
        for (a, b) in avg.values().iter().zip(p.values()) {
            assert!((a - b).abs() <= 1e-13);
        }
    }

    #[test]
    fn two_dimensional_grids_satisfy_the_parallel_constraint_exactly() {
        let (x_grid, speed, parallel) = small_setup();
        let f = ReducedDistribution::from_fn(&x_grid, speed, parallel, Chart::W, |x, w, v| {
            (-w * w - v * v).exp() * (1.0 + 0.5 * x[0].sin())
        });
        let phi = ScalarField::from_fn(&x_grid, |x| x[1].cos());
        let (residual, norm) = solvability_residual_parallel(&f, &phi).unwrap();
        assert_eq!(norm, 0.0);
        assert!(residual.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn parallel_residual_norm_matches_closed_form() {
        let x_grid = TorusGrid::cube(TAU, 8).unwrap();
        let speed = SpeedGrid::new(5, 2.0).unwrap();
        let parallel = ParallelGrid::new(33, 5.0).unwrap();
        let f = ReducedDistribution::from_fn(&x_grid, speed, parallel, Chart::W, |x, _, v| {
            x[2].sin() * (-v * v).exp()
        });
        let phi = ScalarField::zeros(&x_grid);
        let (_, norm) = solvability_residual_parallel(&f, &phi).unwrap();
        // Residual is v cos(x∥) e^{−v²} exactly at the nodes; its squared
        // norm is (2π)² · π · (w_max²/2) · ∫v²e^{−2v²}dv with the Gaussian
        // tail beyond v_max = 5 far below roundoff.
        let v_integral = (std::f64::consts::PI / 2.0f64).sqrt() / 4.0;
        let expected = (TAU * TAU * std::f64::consts::PI * 2.0 * v_integral).sqrt();
        assert!(
            (norm - expected).abs() <= 1e-10 * expected,
            "norm {norm} vs {expected}"
        );
    }

    #[test]
    fn corrector_refuses_constraint_violating_data() {
        let x_grid = TorusGrid::cube(TAU, 8).unwrap();
        let speed = SpeedGrid::new(5, 2.0).unwrap();
        let parallel = ParallelGrid::new(17, 4.0).unwrap();
        let f = ReducedDistribution::from_fn(
            &x_grid,
            speed.clone(),
            parallel.clone(),
            Chart::W,
            |x, _, v| x[2].sin() * (-v * v).exp(),
        );
        let phi = ScalarField::zeros(&x_grid);
        let p = ReducedDistribution::zeros(&x_grid, speed, parallel, Chart::W);
        let model = MagneticFieldModel::Uniform { b0: 1.0 };
        let err = construct_f1(&f, &phi, &model, &p, 8, DEFAULT_SOLVABILITY_TOL).unwrap_err();
        match err {
            Error::NotSolvable { norm, tol, .. } => {
                assert!(norm > tol);
            }
            other => panic!("expected a solvability rejection, got {other:?}"),
        }
    }

    #[test]
    fn order0_residual_vanishes_for_stationary_uniform_data() {
        let (x_grid, speed, parallel) = small_setup();
        let f = ReducedDistribution::from_fn(&x_grid, speed.clone(), parallel.clone(), Chart::W, |_, w, v| {
            (-w * w - v * v).exp()
        });
        let p = ReducedDistribution::zeros(&x_grid, speed, parallel, Chart::W);
        let phi = ScalarField::zeros(&x_grid);
        let model = MagneticFieldModel::Uniform { b0: 1.0 };
        let (_, norm) =
            solvability_residual_order0(&f, &p, &phi, &phi, &model, None).unwrap();
        assert!(norm <= 1e-14);
    }
}
