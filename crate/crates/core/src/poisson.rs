//! Spectral Poisson solver on the torus: `-lap phi = rho - rho_bg`,
//! `E = -grad phi`.
//!
//! Periodic solvability requires a zero-mean source, so the solver subtracts
//! a background (given, or the measured mean) and reports what it removed.
//! The potential is gauged to zero mean: the `k = 0` Fourier coefficient is
//! set to zero.

use crate::error::{Error, Result};
use crate::grid::{ScalarField, Spectral, VectorField, TAU};
use crate::reduced::{Chart, ReducedDistribution};


/// Charge density of a reduced distribution:
/// `rho(x) = 2 pi int F w dw dv_par` (w-chart measure).
pub fn density_from_reduced(f: &ReducedDistribution) -> Result<ScalarField> {
    f.require_chart(Chart::W)?;
    let nx = f.x_grid().len();
    let mut rho = vec![0.0; nx];
    for iw in 0..f.speed().n() {
        let w = f.speed().coord(iw);
        let ww = TAU * w * f.speed().quad_weight(iw);
        if ww == 0.0 {
            continue;
        }
        for iv in 0..f.parallel().n() {
            let c = ww * f.parallel().quad_weight(iv);
            let slab = f.x_slab(iw, iv);
            for ix in 0..nx {
                rho[ix] += c * slab[ix];
            }
        }
    }
    ScalarField::from_values(f.x_grid(), rho)
}

/// Result of one Poisson solve.
#[derive(Debug, Clone)]
pub struct PoissonSolution {
    /// Zero-mean potential.
    pub phi: ScalarField,
    /// `E = -grad phi`, spectral gradient (Nyquist modes dropped).
    pub e_field: VectorField,
    /// Mean of `rho - background` that had to be projected out for
    /// solvability; zero up to roundoff when charge balance holds.
    pub removed_mean: f64,
}

/// Solve `-lap phi = rho - background` on the torus.  With `background =
/// None` the measured mean of `rho` is used (and reported in
/// `removed_mean`... which is then the full mean).  Non-finite input is
/// rejected.
pub fn solve_poisson(rho: &ScalarField, background: Option<f64>) -> Result<PoissonSolution> {
    let mut sp = Spectral::new(rho.grid());
    solve_poisson_with(&mut sp, rho, background)
}

/// Same as [`solve_poisson`] but reusing a caller-owned workspace; intended
/// for time loops.
pub fn solve_poisson_with(
    sp: &mut Spectral,
    rho: &ScalarField,
    background: Option<f64>,
) -> Result<PoissonSolution> {
    if sp.grid() != rho.grid() {
        return Err(Error::ShapeMismatch("workspace grid differs from density grid".into()));
    }
    if !rho.all_finite() {
        return Err(Error::NonFinite("charge density passed to Poisson solve".into()));
    }
    let grid = rho.grid().clone();
    let mean = rho.mean();
    let removed_mean = match background {
        Some(bg) => mean - bg,
        None => mean,
    };

    let mut hat = sp.forward(rho.values());
    // k = 0 carries the total charge; zeroing it subtracts background and any
    // residual mean in one stroke and fixes the zero-mean gauge for phi.
    let n_total = grid.len();
    hat[0] = rustfft::num_complex::Complex64::new(0.0, 0.0);
    let mut e_hat: Vec<Vec<rustfft::num_complex::Complex64>> = Vec::new();
    for _ in 0..grid.dim() {
        e_hat.push(vec![rustfft::num_complex::Complex64::new(0.0, 0.0); n_total]);
    }
    let mut multi = [0usize; 3];
    for i in 0..n_total {
        if i == 0 {
            continue;
        }
        let k2 = sp.k_squared(i);
        hat[i] /= k2;
        grid.multi_index(i, &mut multi);
        for a in 0..grid.dim() {
            let m = multi[a];
            // E = -grad phi: coefficient -(i k) phi_hat; Nyquist dropped.
            let kw = if m == grid.nodes()[a] / 2 { 0.0 } else { grid.wavenumber(a, m) };
            e_hat[a][i] = hat[i] * rustfft::num_complex::Complex64::new(0.0, -kw);
        }
    }
    let phi_values = sp.inverse_real(hat);
    let phi = ScalarField::from_values(&grid, phi_values)?;
    let mut comps = Vec::with_capacity(grid.dim());
    for ehat_a in e_hat {
        comps.push(sp.inverse_real(ehat_a));
    }
    let e_field = VectorField::from_components(&grid, comps)?;
    Ok(PoissonSolution { phi, e_field, removed_mean })
}

/// Spectral gradient of a scalar field (Nyquist modes zeroed on the
/// differentiated axis).
pub fn gradient_spectral(field: &ScalarField) -> VectorField {
    let mut sp = Spectral::new(field.grid());
    gradient_spectral_with(&mut sp, field)
}

pub fn gradient_spectral_with(sp: &mut Spectral, field: &ScalarField) -> VectorField {
    let grid = field.grid().clone();
    let comps: Vec<Vec<f64>> =
        (0..grid.dim()).map(|a| sp.derivative_values(field.values(), a)).collect();
    VectorField::from_components(&grid, comps).expect("components built on the same grid")
}
