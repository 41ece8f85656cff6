//! Invariant bookkeeping shared by the solvers: energies, Lᵖ norms of
//! the reduced state under the measure w dw dv∥ dx, the longitudinal
//! momentum profile M(x) = ∫v∥F w dw dv∥, gyroperiod-aligned drift
//! measurement, and ε-convergence tables.

use crate::error::{Error, Result};
use crate::fields::MagneticFieldModel;
use crate::grid::{ScalarField, VectorField};
use crate::guiding_center::drift_from_gradients;
use crate::gyro::solvability_residual_order0;
use crate::kinetic::{FullOrbitSample, FullParticleEnsemble};
use crate::poisson::gradient_spectral;
use crate::reduced::{Chart, ReducedDistribution};
use std::fmt::Write as _;

/// One output row shared by every scenario.  `total_energy` is always
/// the sum of the two parts; `s` is NaN for runs without a fast time
/// axis.
#[derive(Debug, Clone)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub s: f64,
    pub kinetic_energy: f64,
    pub field_energy: f64,
    pub total_energy: f64,
    pub mass: f64,
    pub l1: f64,
    pub l2: f64,
    pub linf: f64,
    pub min_value: f64,
    pub longitudinal_momentum_variation: f64,
    pub constraint_residual: f64,
    pub defect_norm: Option<f64>,
    pub drift_estimate: Option<[f64; 2]>,
}

impl DiagnosticsRecord {
    pub fn new(t: f64, s: Option<f64>, kinetic_energy: f64, field_energy: f64) -> Self {
        Self {
            t,
            s: s.unwrap_or(f64::NAN),
            kinetic_energy,
            field_energy,
            total_energy: kinetic_energy + field_energy,
            mass: 0.0,
            l1: 0.0,
            l2: 0.0,
            linf: 0.0,
            min_value: 0.0,
            longitudinal_momentum_variation: 0.0,
            constraint_residual: 0.0,
            defect_norm: None,
            drift_estimate: None,
        }
    }

    pub fn csv_header() -> &'static str {
        "t,s,kinetic_energy,field_energy,total_energy,mass,l1,l2,linf,min_value,\
         longitudinal_momentum_variation,constraint_residual,defect_norm,\
         drift_estimate_0,drift_estimate_1"
    }

    /// One CSV row in header order; floats in shortest round-trip
    /// decimal, absent optionals as empty fields.
    pub fn to_csv_row(&self) -> String {
        let mut row = String::new();
        write!(
            row,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.s,
            self.kinetic_energy,
            self.field_energy,
            self.total_energy,
            self.mass,
            self.l1,
            self.l2,
            self.linf,
            self.min_value,
            self.longitudinal_momentum_variation,
            self.constraint_residual,
        )
        .expect("writing to a String cannot fail");
        match self.defect_norm {
            Some(d) => write!(row, ",{d}").unwrap(),
            None => row.push(','),
        }
        match self.drift_estimate {
            Some([u0, u1]) => write!(row, ",{u0},{u1}").unwrap(),
            None => row.push_str(",,"),
        }
        row
    }
}

/// Energy of the particle representation: Σ wₚ|vₚ|²/2 plus (1/2)∫|E|².
pub fn energy_full(
    ensemble: &FullParticleEnsemble,
    e_field: &VectorField,
) -> Result<(f64, f64, f64)> {
    if e_field.grid() != &ensemble.grid {
        return Err(Error::ShapeMismatch(
            "field grid differs from the ensemble grid".into(),
        ));
    }
    let mut kinetic = 0.0;
    for p in 0..ensemble.count() {
        let v = ensemble.velocity(p);
        kinetic += 0.5 * ensemble.weights[p] * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    }
    let field = 0.5 * e_field.l2_squared();
    Ok((kinetic, field, kinetic + field))
}

/// Energy of the reduced state: ∫(w²+v∥²)/2 F w dw dv∥ dx plus
/// (1/4π)∫|E|².  The two conventions differ on purpose; each matches
/// the conservation identity of its own model.
pub fn energy_reduced(
    f: &ReducedDistribution,
    e_field: &VectorField,
) -> Result<(f64, f64, f64)> {
    f.require_chart(Chart::W)?;
    if e_field.grid() != f.x_grid() {
        return Err(Error::ShapeMismatch(
            "field grid differs from the distribution's x grid".into(),
        ));
    }
    let cell = f.x_grid().cell_volume();
    let mut kinetic = 0.0;
    for iw in 0..f.speed().n() {
        let w = f.speed().coord(iw);
        let qw = w * f.speed().quad_weight(iw);
        if qw == 0.0 {
            continue;
        }
        for iv in 0..f.parallel().n() {
            let v = f.parallel().coord(iv);
            let c = 0.5 * (w * w + v * v) * qw * f.parallel().quad_weight(iv) * cell;
            let slab = f.x_slab(iw, iv);
            kinetic += c * slab.iter().sum::<f64>();
        }
    }
    let field = e_field.l2_squared() / (2.0 * crate::grid::TAU);
    Ok((kinetic, field, kinetic + field))
}

/// Lᵖ norm of the reduced state under the measure w dw dv∥ dx for
/// p ∈ {1, 2, ∞}; L∞ is the grid max of |F|.
pub fn lp_norm_reduced(f: &ReducedDistribution, p: f64) -> Result<f64> {
    f.require_chart(Chart::W)?;
    if p == f64::INFINITY {
        return Ok(f.values().iter().fold(0.0, |m, v| m.max(v.abs())));
    }
    if p != 1.0 && p != 2.0 {
        return Err(Error::InvalidParameter(format!(
            "supported norms are p = 1, 2, inf; got {p}"
        )));
    }
    let cell = f.x_grid().cell_volume();
    let mut acc = 0.0;
    for iw in 0..f.speed().n() {
        let qw = f.speed().coord(iw) * f.speed().quad_weight(iw);
        if qw == 0.0 {
            continue;
        }
        for iv in 0..f.parallel().n() {
            let c = qw * f.parallel().quad_weight(iv) * cell;
            let slab = f.x_slab(iw, iv);
            let local: f64 = if p == 1.0 {
                slab.iter().map(|v| v.abs()).sum()
            } else {
                slab.iter().map(|v| v * v).sum()
            };
            acc += c * local;
        }
    }
    Ok(if p == 1.0 { acc } else { acc.sqrt() })
}

/// Mass ∫F w dw dv∥ dx of the reduced state (signed, unlike L¹).
pub fn mass_reduced(f: &ReducedDistribution) -> Result<f64> {
    f.require_chart(Chart::W)?;
    let cell = f.x_grid().cell_volume();
    let mut acc = 0.0;
    for iw in 0..f.speed().n() {
        let qw = f.speed().coord(iw) * f.speed().quad_weight(iw);
        for iv in 0..f.parallel().n() {
            let c = qw * f.parallel().quad_weight(iv) * cell;
            acc += c * f.x_slab(iw, iv).iter().sum::<f64>();
        }
    }
    Ok(acc)
}

/// Longitudinal momentum check: M(x) = ∫v∥ F w dw dv∥ should be
/// constant along x∥.  Returns max|∂M/∂x∥| / (max|M| + 1e-30); zero on
/// 2D grids where no parallel axis exists.
pub fn longitudinal_momentum_variation(f: &ReducedDistribution) -> Result<f64> {
    f.require_chart(Chart::W)?;
    let x_grid = f.x_grid();
    let n_x = x_grid.len();
    let mut m = vec![0.0; n_x];
    let mut m_abs = vec![0.0; n_x];
    for iw in 0..f.speed().n() {
        let qw = f.speed().coord(iw) * f.speed().quad_weight(iw);
        if qw == 0.0 {
            continue;
        }
        for iv in 0..f.parallel().n() {
            let c = f.parallel().coord(iv) * qw * f.parallel().quad_weight(iv);
            let slab = f.x_slab(iw, iv);
            for ix in 0..n_x {
                m[ix] += c * slab[ix];
                m_abs[ix] += (c * slab[ix]).abs();
            }
        }
    }
    if x_grid.dim() == 2 {
        return Ok(0.0);
    }
    let peak = m.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let peak_abs = m_abs.iter().fold(0.0f64, |a, v| a.max(*v));
    if peak <= 1e-14 * peak_abs {
        // The signed profile cancels below the quadrature's roundoff;
        // there is no momentum left to vary.
        return Ok(0.0);
    }
    let mut sp = crate::grid::Spectral::new(x_grid);
    let dm = sp.derivative_values(&m, 2);
    let slope = dm.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(slope / (peak + 1e-30))
}

/// One trajectory point for drift extraction; `time` must be in the
/// units the caller wants the drift expressed in.
#[derive(Debug, Clone, Copy)]
pub struct TrajectorySample {
    pub time: f64,
    pub x_perp: [f64; 2],
}

/// Re-time a fast-time particle orbit to physical time t = ε·s.
pub fn trajectory_from_full_orbit(samples: &[FullOrbitSample], eps: f64) -> Vec<TrajectorySample> {
    samples
        .iter()
        .map(|s| TrajectorySample {
            time: eps * s.s,
            x_perp: [s.x[0], s.x[1]],
        })
        .collect()
}

/// Mean drift over a window of whole gyroperiods:
/// (x⊥(t₀+window) − x⊥(t₀))/window with the endpoint interpolated
/// linearly.  Whole-period alignment removes the O(1) gyration, leaving
/// the secular motion.
pub fn drift_measurement(
    trajectory: &[TrajectorySample],
    gyroperiod: f64,
    n_periods: usize,
) -> Result<[f64; 2]> {
    if !(gyroperiod > 0.0 && gyroperiod.is_finite()) || n_periods == 0 {
        return Err(Error::InvalidParameter(format!(
            "need a positive gyroperiod and at least one period, got {gyroperiod} x {n_periods}"
        )));
    }
    if trajectory.len() < 2 {
        return Err(Error::InsufficientData(
            "drift extraction needs at least two trajectory samples".into(),
        ));
    }
    let window = gyroperiod * n_periods as f64;
    let t0 = trajectory[0].time;
    let target = t0 + window;
    let t_end = trajectory[trajectory.len() - 1].time;
    if t_end < target - 1e-12 * window {
        return Err(Error::InsufficientData(format!(
            "trajectory spans {:.6}, window needs {:.6}",
            t_end - t0,
            window
        )));
    }
    // First sample at or past the target; its predecessor brackets it.
    let hi = trajectory
        .partition_point(|s| s.time < target)
        .min(trajectory.len() - 1)
        .max(1);
    let a = trajectory[hi - 1];
    let b = trajectory[hi];
    let span = b.time - a.time;
    let frac = if span > 0.0 {
        ((target - a.time) / span).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let x0 = trajectory[0].x_perp;
    Ok([
        (a.x_perp[0] + frac * (b.x_perp[0] - a.x_perp[0]) - x0[0]) / window,
        (a.x_perp[1] + frac * (b.x_perp[1] - a.x_perp[1]) - x0[1]) / window,
    ])
}

/// Time derivative of the three pieces of the reduced energy, each
/// assembled independently from ∂F/∂t of the evolution equation.  Their
/// sum cancels to discretization error for Poisson-consistent
/// (F, P, φ_F) data satisfying the parallel constraint.
#[derive(Debug, Clone, Copy)]
pub struct EnergyRate {
    /// d/dt ∫ (v∥²/2) F w dw dv∥ dx
    pub parallel_kinetic: f64,
    /// d/dt ∫ (w²/2) F w dw dv∥ dx
    pub perpendicular_kinetic: f64,
    /// (1/4π) d/dt ∫|∇φ_F|², via ∫ ∂F/∂t φ_F w dw dv∥ dx
    pub field: f64,
}

impl EnergyRate {
    pub fn total(&self) -> f64 {
        self.parallel_kinetic + self.perpendicular_kinetic + self.field
    }
}

pub fn energy_rate_reduced(
    f: &ReducedDistribution,
    p: &ReducedDistribution,
    phi_f: &ScalarField,
    phi_p: &ScalarField,
    model: &MagneticFieldModel,
) -> Result<EnergyRate> {
    let (transport, _) = solvability_residual_order0(f, p, phi_f, phi_p, model, None)?;
    let cell = f.x_grid().cell_volume();
    let mut rate = EnergyRate {
        parallel_kinetic: 0.0,
        perpendicular_kinetic: 0.0,
        field: 0.0,
    };
    for iw in 0..f.speed().n() {
        let w = f.speed().coord(iw);
        let qw = w * f.speed().quad_weight(iw);
        if qw == 0.0 {
            continue;
        }
        for iv in 0..f.parallel().n() {
            let v = f.parallel().coord(iv);
            let c = qw * f.parallel().quad_weight(iv) * cell;
            let base = (iw * f.parallel().n() + iv) * f.x_grid().len();
            let slab = &transport.values()[base..base + f.x_grid().len()];
            for (ix, r) in slab.iter().enumerate() {
                let df_dt = -r;
                rate.parallel_kinetic += c * 0.5 * v * v * df_dt;
                rate.perpendicular_kinetic += c * 0.5 * w * w * df_dt;
                rate.field += c * phi_f.values()[ix] * df_dt;
            }
        }
    }
    Ok(rate)
}

/// Instantaneous drift velocity at a phase-space point, from the
/// potential's spectral gradient; convenience wrapper for scenario
/// reporting.
pub fn drift_prediction(
    phi: &ScalarField,
    x_perp: [f64; 2],
    w: f64,
    model: &MagneticFieldModel,
) -> Result<[f64; 2]> {
    if phi.grid().dim() != 2 {
        return Err(Error::ShapeMismatch("drift prediction expects a 2D potential".into()));
    }
    let grad = gradient_spectral(phi);
    let gx = crate::guiding_center::interp_bicubic_periodic(phi.grid(), grad.component(0), x_perp);
    let gy = crate::guiding_center::interp_bicubic_periodic(phi.grid(), grad.component(1), x_perp);
    let (u, _) = drift_from_gradients(x_perp, w, [gx, gy], model);
    Ok(u)
}

/// One row of an ε-refinement table.
#[derive(Debug, Clone)]
pub struct ConvergenceRow {
    pub epsilon: f64,
    /// NaN when the sub-run failed.
    pub error: f64,
    /// error(previous)/error(this); NaN on the first row and next to
    /// failures.
    pub ratio: f64,
    pub failure: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of ln(error) against ln(ε); NaN when
    /// degenerate or fewer than two usable rows.
    pub fitted_order: f64,
    /// All successful errors at or below the noise floor 1e-10.
    pub degenerate: bool,
}

/// Run `observable_error` at each ε and tabulate errors, consecutive
/// ratios, and the fitted order.  Sub-run failures leave a marked row
/// and the study continues.
pub fn convergence_study(
    eps_list: &[f64],
    mut observable_error: impl FnMut(f64) -> Result<f64>,
) -> Result<ConvergenceStudy> {
    if eps_list.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "a refinement study needs at least 3 values of eps, got {}",
            eps_list.len()
        )));
    }
    for pair in eps_list.windows(2) {
        if !(pair[1] < pair[0]) {
            return Err(Error::InvalidParameter(
                "eps values must be strictly decreasing".into(),
            ));
        }
    }
    if eps_list.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidParameter(
            "eps values must lie in (0, 1)".into(),
        ));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let row = match observable_error(eps) {
            Ok(error) if error.is_finite() => {
                let ratio = match rows.last() {
                    Some(prev) if prev.error.is_finite() && error != 0.0 => prev.error / error,
                    _ => f64::NAN,
                };
                ConvergenceRow { epsilon: eps, error, ratio, failure: None }
            }
            Ok(error) => ConvergenceRow {
                epsilon: eps,
                error: f64::NAN,
                ratio: f64::NAN,
                failure: Some(format!("non-finite observable {error}")),
            },
            Err(e) => ConvergenceRow {
                epsilon: eps,
                error: f64::NAN,
                ratio: f64::NAN,
                failure: Some(e.to_string()),
            },
        };
        rows.push(row);
    }

    let usable: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.error.is_finite())
        .map(|r| (r.epsilon, r.error))
        .collect();
    let degenerate = !usable.is_empty() && usable.iter().all(|&(_, e)| e <= 1e-10);
    let fitted_order = if degenerate || usable.len() < 2 {
        f64::NAN
    } else {
        fit_loglog_slope(&usable)
    };
    Ok(ConvergenceStudy { rows, fitted_order, degenerate })
}

fn fit_loglog_slope(points: &[(f64, f64)]) -> f64 {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(_, e)| e > 0.0)
        .map(|&(eps, e)| (eps.ln(), e.ln()))
        .collect();
    if logs.len() < 2 {
        return f64::NAN;
    }
    let n = logs.len() as f64;
    let sx: f64 = logs.iter().map(|p| p.0).sum();
    let sy: f64 = logs.iter().map(|p| p.1).sum();
    let sxx: f64 = logs.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = logs.iter().map(|p| p.0 * p.1).sum();
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// `convergence.json` payload: an array of {epsilon, error, ratio},
/// with `failure` attached to failed rows.  Non-finite numbers
/// serialize as null.
pub fn convergence_to_json(study: &ConvergenceStudy) -> String {
    let rows: Vec<serde_json::Value> = study
        .rows
        .iter()
        .map(|r| {
            let mut obj = serde_json::json!({
                "epsilon": r.epsilon,
                "error": finite_or_null(r.error),
                "ratio": finite_or_null(r.ratio),
            });
            if let Some(msg) = &r.failure {
                obj["failure"] = serde_json::Value::String(msg.clone());
            }
            obj
        })
        .collect();
    let doc = serde_json::json!({
        "rows": rows,
        "fitted_order": finite_or_null(study.fitted_order),
        "degenerate": study.degenerate,
    });
    serde_json::to_string_pretty(&doc).expect("static JSON structure serializes")
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        serde_json::json!(v)
    } else {
        serde_json::Value::Null
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{TorusGrid, TAU};
    use crate::poisson::{density_from_reduced, solve_poisson};
    use crate::reduced::{ParallelGrid, SpeedGrid};

    #[test]
    fn record_totals_and_csv_shape() {
        let mut rec = DiagnosticsRecord::new(1.5, None, 2.0, 0.25);
        assert_eq!(rec.total_energy, 2.25);
        assert!(rec.s.is_nan());
        rec.mass = 3.0;
        let row = rec.to_csv_row();
        assert_eq!(row.split(',').count(), DiagnosticsRecord::csv_header().split(',').count());
        assert!(row.starts_with("1.5,NaN,2,0.25,2.25,3,"));
        assert!(row.ends_with(",,,"), "optionals should be empty: {row}");

        rec.defect_norm = Some(0.125);
        rec.drift_estimate = Some([1.0, -2.0]);
        let row = rec.to_csv_row();
        assert!(row.ends_with(",0.125,1,-2"), "row: {row}");
    }

    #[test]
    fn full_energy_examples() {
        let grid = TorusGrid::cube(TAU, 8).unwrap();
        let empty = FullParticleEnsemble {
            grid: grid.clone(),
            positions: vec![],
            velocities: vec![],
            weights: vec![],
            rng_seed: 0,
        };
        let e0 = VectorField::zeros(&grid, 3);
        assert_eq!(energy_full(&empty, &e0).unwrap(), (0.0, 0.0, 0.0));

        let one = FullParticleEnsemble {
            grid: grid.clone(),
            positions: vec![0.0, 0.0, 0.0],
            velocities: vec![3.0, 4.0, 0.0],
            weights: vec![1.0],
            rng_seed: 0,
        };
        let (k, _, _) = energy_full(&one, &e0).unwrap();
        assert!((k - 12.5).abs() <= 1e-12);

        let e = VectorField::from_components(
            &grid,
            vec![
                ScalarField::from_fn(&grid, |x| -x[0].cos()).values().to_vec(),
                vec![0.0; grid.len()],
                vec![0.0; grid.len()],
            ],
        )
        .unwrap();
        let (_, field, _) = energy_full(&empty, &e).unwrap();
        let expected = 2.0 * std::f64::consts::PI.powi(3);
        assert!((field - expected).abs() <= 1e-9 * expected, "field {field} vs {expected}");
    }

    #[test]
    fn reduced_energy_matches_gaussian_moments() {
        let grid = TorusGrid::square(TAU, 8).unwrap();
        let speed = SpeedGrid::new(129, 5.0).unwrap();
        let parallel = ParallelGrid::new(129, 5.0).unwrap();
        let f = ReducedDistribution::from_fn(&grid, speed, parallel, Chart::W, |_, w, v| {
            (-w * w - v * v).exp()
        });
        let e0 = VectorField::zeros(&grid, 2);
        let (k, field, total) = energy_reduced(&f, &e0).unwrap();
        let pi = std::f64::consts::PI;
        // ∫(w²+v²)/2 e^{−w²−v²} w dw dv = (1/2)(√π/2 + √π/4) = 3√π/8.
        let expected = TAU * TAU * 3.0 * pi.sqrt() / 8.0;
        assert!((k - expected).abs() <= 1e-4 * expected, "kinetic {k} vs {expected}");
        assert_eq!(field, 0.0);
        assert_eq!(total, k);

        let zero = ReducedDistribution::zeros(
            &grid,
            SpeedGrid::new(9, 1.0).unwrap(),
            ParallelGrid::new(9, 1.0).unwrap(),
            Chart::W,
        );
        let (k, _, t) = energy_reduced(&zero, &e0).unwrap();
        assert_eq!((k, t), (0.0, 0.0));

        let mu_chart = ReducedDistribution::zeros(
            &grid,
            SpeedGrid::new(9, 1.0).unwrap(),
            ParallelGrid::new(9, 1.0).unwrap(),
            Chart::Mu,
        );
        assert!(energy_reduced(&mu_chart, &e0).is_err());
    }

    #[test]
    fn lp_norms_on_unit_measure_and_gaussian() {
        let grid = TorusGrid::new(&[1.0, 1.0], &[8, 8]).unwrap();
        let speed = SpeedGrid::new(33, std::f64::consts::SQRT_2).unwrap();
        let parallel = ParallelGrid::new(33, 0.5).unwrap();
        let f = ReducedDistribution::from_fn(&grid, speed, parallel, Chart::W, |_, _, _| 1.0);
        assert!((lp_norm_reduced(&f, 1.0).unwrap() - 1.0).abs() <= 1e-12);
        assert!((lp_norm_reduced(&f, f64::INFINITY).unwrap() - 1.0).abs() <= 1e-15);
        assert!(lp_norm_reduced(&f, 3.0).is_err());

        let mut scaled = f.clone();
        for v in scaled.values_mut() {
            *v *= -2.5;
        }
        let l1 = lp_norm_reduced(&scaled, 1.0).unwrap();
        let l2 = lp_norm_reduced(&scaled, 2.0).unwrap();
        let li = lp_norm_reduced(&scaled, f64::INFINITY).unwrap();
        assert!((l1 - 2.5).abs() <= 1e-12);
        assert!((l2 - 2.5 * lp_norm_reduced(&f, 2.0).unwrap()).abs() <= 1e-12);
        assert!((li - 2.5).abs() <= 1e-15);

        let grid = TorusGrid::square(TAU, 8).unwrap();
        let speed = SpeedGrid::new(129, 5.0).unwrap();
        let parallel = ParallelGrid::new(129, 5.0).unwrap();
        let g = ReducedDistribution::from_fn(&grid, speed, parallel, Chart::W, |_, w, v| {
            (-w * w - v * v).exp()
        });
        let pi = std::f64::consts::PI;
        // The w-trapezoid endpoint term at w = 0 is O(h^2) ~ 2.5e-4 here.
        let l1 = lp_norm_reduced(&g, 1.0).unwrap();
        let expected = TAU * TAU * 0.5 * pi.sqrt();
        assert!((l1 - expected).abs() <= 1e-3 * expected);
        let l2 = lp_norm_reduced(&g, 2.0).unwrap();
        let expected = (TAU * TAU * 0.25 * (pi / 2.0).sqrt()).sqrt();
        assert!((l2 - expected).abs() <= 1e-3 * expected);
    }

    #[test]
    fn longitudinal_momentum_flags_only_true_variation() {
        let grid = TorusGrid::cube(TAU, 8).unwrap();
        let speed = SpeedGrid::new(17, 3.0).unwrap();
        let parallel = ParallelGrid::new(17, 3.0).unwrap();

        let even = ReducedDistribution::from_fn(&grid, speed.clone(), parallel.clone(), Chart::W, |x, w, v| {
            (1.0 + 0.5 * x[2].sin()) * (-w * w - v * v).exp()
        });
        assert_eq!(longitudinal_momentum_variation(&even).unwrap(), 0.0);

        let sheared = ReducedDistribution::from_fn(&grid, speed.clone(), parallel.clone(), Chart::W, |x, w, v| {
            (1.0 + 0.5 * x[0].sin()) * (-w * w - v * v).exp() * (1.0 + 0.3 * v)
        });
        assert!(longitudinal_momentum_variation(&sheared).unwrap() <= 1e-12);

        let violating = ReducedDistribution::from_fn(&grid, speed, parallel, Chart::W, |x, _, v| {
            x[2].sin() * v * (-v * v).exp()
        });
        let variation = longitudinal_momentum_variation(&violating).unwrap();
        assert!(variation > 1e-2, "constraint violation not flagged: {variation}");
    }

    #[test]
    fn drift_windows_cancel_gyration() {
        // Pure gyration: x = r(sin Ωt, cos Ωt), period 2π/Ω.
        let omega = 10.0;
        let period = TAU / omega;
        let r = 0.1;
        let samples: Vec<TrajectorySample> = (0..=900)
            .map(|i| {
                let t = period * 3.0 * i as f64 / 900.0;
                TrajectorySample {
                    time: t,
                    x_perp: [r * (omega * t).sin(), r * (omega * t).cos()],
                }
            })
            .collect();
        let drift = drift_measurement(&samples, period, 3).unwrap();
        assert!(drift[0].abs() <= 1e-12 && drift[1].abs() <= 1e-12, "{drift:?}");

        // Uniform translation at the drift velocity is recovered exactly.
        let u = [0.25, -0.5];
        let samples: Vec<TrajectorySample> = (0..=100)
            .map(|i| {
                let t = 0.05 * i as f64;
                TrajectorySample { time: t, x_perp: [u[0] * t, 1.0 + u[1] * t] }
            })
            .collect();
        let drift = drift_measurement(&samples, 1.0, 4).unwrap();
        assert!((drift[0] - u[0]).abs() <= 1e-13 && (drift[1] - u[1]).abs() <= 1e-13);

        assert!(matches!(
            drift_measurement(&samples, 3.0, 2),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn convergence_table_shapes() {
        let study = convergence_study(&[0.1, 0.05, 0.025], |eps| Ok(2.0 * eps)).unwrap();
        assert!(study.rows[0].ratio.is_nan());
        assert!((study.rows[1].ratio - 2.0).abs() <= 1e-12);
        assert!((study.rows[2].ratio - 2.0).abs() <= 1e-12);
        assert!((study.fitted_order - 1.0).abs() <= 1e-10);
        assert!(!study.degenerate);

        let study = convergence_study(&[0.1, 0.05, 0.025], |_| Ok(1e-14)).unwrap();
        assert!(study.degenerate);
        assert!(study.fitted_order.is_nan());

        let study = convergence_study(&[0.1, 0.05, 0.025], |eps| {
            if eps < 0.03 {
                Err(Error::SolverAbort("blew up".into()))
            } else {
                Ok(eps * eps)
            }
        })
        .unwrap();
        assert!(study.rows[2].failure.is_some());
        assert!(study.rows[1].error.is_finite());
        let json = convergence_to_json(&study);
        assert!(json.contains("\"failure\""));
        assert!(json.contains("\"epsilon\": 0.1"));

        assert!(convergence_study(&[0.1, 0.2, 0.3], |e| Ok(e)).is_err());
        assert!(convergence_study(&[0.1, 0.05], |e| Ok(e)).is_err());
    }

    #[test]
    fn energy_rate_terms_cancel_on_consistent_data() {
        let run = |n_w: usize| -> (f64, f64) {
            let grid = TorusGrid::square(TAU, 16).unwrap();
            let speed = SpeedGrid::new(n_w, 5.0).unwrap();
            let parallel = ParallelGrid::new(17, 3.0).unwrap();
            let model = MagneticFieldModel::PeriodicBump {
                b0: 1.0,
                amplitude: 0.25,
                lengths: [TAU, TAU],
            };
            let f = ReducedDistribution::from_fn(&grid, speed.clone(), parallel.clone(), Chart::W, |x, w, v| {
                (1.0 + 0.4 * x[0].sin() + 0.3 * (x[1] + x[0]).cos() + 0.25 * (2.0 * x[0] + x[1]).sin()) * (-w * w - v * v).exp()
            });
            let p = ReducedDistribution::from_fn(&grid, speed, parallel, Chart::W, |x, w, v| {
                0.2 * x[1].cos() * w * (-w * w - v * v).exp() * v
            });
            let rho = density_from_reduced(&f).unwrap();
            let sol = solve_poisson(&rho, Some(rho.mean())).unwrap();
            let phi_p = ScalarField::from_fn(&grid, |x| 0.1 * x[0].cos());
            let rate = energy_rate_reduced(&f, &p, &sol.phi, &phi_p, &model).unwrap();
            let scale = rate
                .perpendicular_kinetic
                .abs()
                .max(rate.field.abs())
                .max(rate.parallel_kinetic.abs());
            (rate.total().abs(), scale)
        };
        let (coarse, scale) = run(65);
        let (fine, _) = run(129);
        assert!(scale > 1e-6, "manufactured data has no energy exchange to cancel");
        assert!(fine <= 1e-2 * scale, "rates do not cancel: {fine:.3e} vs scale {scale:.3e}");
        // The residual is the w-quadrature's summation-by-parts defect,
        // second order in the speed spacing.
        assert!(
            fine <= coarse / 3.0,
            "residual is not O(h^2): coarse {coarse:.3e}, fine {fine:.3e}"
        );
    }

    #[test]
    fn drift_prediction_matches_hand_formula() {
        let grid = TorusGrid::square(TAU, 32).unwrap();
        let phi = ScalarField::from_fn(&grid, |x| 0.3 * x[0].sin());
        let model = MagneticFieldModel::Uniform { b0: 2.0 };
        // ∇φ = (0.3 cos x₀, 0); U = −perp(∇φ)/b = (0, 0.3 cos x₀)/2.
        let u = drift_prediction(&phi, [0.0, 1.0], 0.7, &model).unwrap();
        assert!(u[0].abs() <= 1e-9, "{u:?}");
        assert!((u[1] - 0.15).abs() <= 1e-6, "{u:?}");
    }
}
