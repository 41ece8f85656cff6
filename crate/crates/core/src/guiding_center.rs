//! Reduced slow dynamics: the perpendicular drift velocity
//! U⊥ = −(1/b)(∇⊥φ + (w²/2b)∇⊥b)^⊥ with its radial companion
//! u_w = (w/2b²)∇⊥^⊥b·∇⊥φ, drift-orbit characteristics, the magnetic
//! moment μ = w²/(2b) and its chart, and the self-consistent 2D solver
//! for ∂𝒢/∂t + U⊥·∇⊥𝒢 = 0 with −Δφ = 𝒢 − ρ₀ (uniform b = 1).
//!
//! Along drift orbits μ is exactly invariant: dμ/dt = (w/b)u_w −
//! (μ/b)∇b·U⊥ and the two contractions cancel identically, so measured
//! μ drift is pure integrator error.

use crate::error::{Error, Result};
use crate::fields::{perp, MagneticFieldModel};
use crate::grid::{ScalarField, Spectral, TorusGrid, VectorField, TAU};
use crate::poisson::{solve_poisson_with, PoissonSolution};
use crate::reduced::{Chart, MaxwellianProfile, ReducedDistribution, SpeedGrid};

/// Drift coefficients from already-evaluated field gradients.
/// Returns (U⊥, u_w).
pub fn drift_from_gradients(
    x_perp: [f64; 2],
    w: f64,
    grad_phi: [f64; 2],
    model: &MagneticFieldModel,
) -> ([f64; 2], f64) {
    let b = model.eval(x_perp);
    let grad_b = model.grad(x_perp);
    let half_w2_over_b = 0.5 * w * w / b;
    let combined = perp([
        grad_phi[0] + half_w2_over_b * grad_b[0],
        grad_phi[1] + half_w2_over_b * grad_b[1],
    ]);
    let u_perp = [-combined[0] / b, -combined[1] / b];
    let gb_perp = perp(grad_b);
    let u_w = 0.5 * w / (b * b) * (gb_perp[0] * grad_phi[0] + gb_perp[1] * grad_phi[1]);
    (u_perp, u_w)
}

/// μ = w²/(2b).
pub fn magnetic_moment(w: f64, b_at_x: f64) -> f64 {
    0.5 * w * w / b_at_x
}

/// A frozen electrostatic potential on the perpendicular plane.
pub trait Potential2 {
    fn eval(&self, x: [f64; 2]) -> f64;
    fn grad(&self, x: [f64; 2]) -> [f64; 2];
}

pub struct ZeroPotential;

impl Potential2 for ZeroPotential {
    fn eval(&self, _x: [f64; 2]) -> f64 {
        0.0
    }

    fn grad(&self, _x: [f64; 2]) -> [f64; 2] {
        [0.0, 0.0]
    }
}

/// φ = g·x, i.e. a uniform electric field E = −g.
pub struct LinearPotential {
    pub gradient: [f64; 2],
}

impl Potential2 for LinearPotential {
    fn eval(&self, x: [f64; 2]) -> f64 {
        self.gradient[0] * x[0] + self.gradient[1] * x[1]
    }

    fn grad(&self, _x: [f64; 2]) -> [f64; 2] {
        self.gradient
    }
}

/// φ = (c/2)|x − x₀|²; its E×B flow is rigid rotation about x₀.
pub struct RadialQuadratic {
    pub center: [f64; 2],
    pub curvature: f64,
}

impl Potential2 for RadialQuadratic {
    fn eval(&self, x: [f64; 2]) -> f64 {
        let dx = x[0] - self.center[0];
        let dy = x[1] - self.center[1];
        0.5 * self.curvature * (dx * dx + dy * dy)
    }

    fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        [
            self.curvature * (x[0] - self.center[0]),
            self.curvature * (x[1] - self.center[1]),
        ]
    }
}

struct FourierMode {
    k: [f64; 2],
    re: f64,
    im: f64,
}

/// Smooth (trigonometric) extension of a gridded 2D potential,
/// evaluable anywhere; the gradient matches the grid's spectral
/// derivative convention (Nyquist modes dropped).
pub struct GriddedPotential {
    modes: Vec<FourierMode>,
}

impl GriddedPotential {
    pub fn new(field: &ScalarField) -> Result<Self> {
        let grid = field.grid();
        if grid.dim() != 2 {
            return Err(Error::InvalidParameter(
                "gridded potentials are two-dimensional".into(),
            ));
        }
        if !field.all_finite() {
            return Err(Error::NonFinite("potential samples".into()));
        }
        let mut sp = Spectral::new(grid);
        let hat = sp.forward(field.values());
        let n_total = grid.len() as f64;
        let peak = hat.iter().map(|c| c.norm()).fold(0.0f64, f64::max) / n_total;
        let mut modes = Vec::new();
        let mut multi = [0usize; 3];
        for (i, c) in hat.iter().enumerate() {
            grid.multi_index(i, &mut multi);
            let m0 = grid.mode(0, multi[0]);
            let m1 = grid.mode(1, multi[1]);
            if 2 * m0.unsigned_abs() as usize == grid.nodes()[0]
                || 2 * m1.unsigned_abs() as usize == grid.nodes()[1]
            {
                continue;
            }
            let amp = c / n_total;
            if amp.norm() <= 1e-15 * peak {
                continue;
            }
            modes.push(FourierMode {
                k: [grid.wavenumber(0, multi[0]), grid.wavenumber(1, multi[1])],
                re: amp.re,
                im: amp.im,
            });
        }
        Ok(Self { modes })
    }
}

impl Potential2 for GriddedPotential {
    fn eval(&self, x: [f64; 2]) -> f64 {
        let mut acc = 0.0;
        for m in &self.modes {
            let phase = m.k[0] * x[0] + m.k[1] * x[1];
            acc += m.re * phase.cos() - m.im * phase.sin();
        }
        acc
    }

    fn grad(&self, x: [f64; 2]) -> [f64; 2] {
        let mut g = [0.0, 0.0];
        for m in &self.modes {
            let phase = m.k[0] * x[0] + m.k[1] * x[1];
            let d = m.re * phase.sin() + m.im * phase.cos();
            g[0] -= m.k[0] * d;
            g[1] -= m.k[1] * d;
        }
        g
    }
}

/// Drift coefficients of a frozen potential at a point.
pub fn drift_velocity(
    x_perp: [f64; 2],
    w: f64,
    potential: &dyn Potential2,
    model: &MagneticFieldModel,
) -> ([f64; 2], f64) {
    drift_from_gradients(x_perp, w, potential.grad(x_perp), model)
}

/// Slow-scale phase-space point in the speed chart (x⊥, x∥, w, v∥).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidingCenterState {
    pub x_perp: [f64; 2],
    pub x_par: f64,
    pub w: f64,
    pub v_par: f64,
}

/// The same point in the magnetic-moment chart (x⊥, x∥, μ, v∥).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidingCenterMoments {
    pub x_perp: [f64; 2],
    pub x_par: f64,
    pub mu: f64,
    pub v_par: f64,
}

impl GuidingCenterState {
    pub fn to_moment_chart(&self, model: &MagneticFieldModel) -> GuidingCenterMoments {
        GuidingCenterMoments {
            x_perp: self.x_perp,
            x_par: self.x_par,
            mu: magnetic_moment(self.w, model.eval(self.x_perp)),
            v_par: self.v_par,
        }
    }
}

impl GuidingCenterMoments {
    pub fn to_speed_chart(&self, model: &MagneticFieldModel) -> GuidingCenterState {
        GuidingCenterState {
            x_perp: self.x_perp,
            x_par: self.x_par,
            w: (2.0 * self.mu * model.eval(self.x_perp)).sqrt(),
            v_par: self.v_par,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct OrbitSample {
    pub t: f64,
    pub x_perp: [f64; 2],
    pub w: f64,
    pub mu: f64,
    pub b: f64,
    pub u_perp: [f64; 2],
}

/// Integrate ẋ⊥ = U⊥, ẇ = u_w with the classical 4th-order one-step
/// method; x∥ and v∥ are frozen (P ≡ 0 on the slow scale).  Positions
/// are not wrapped, so displacements read off directly.  Aborts if the
/// orbit reaches a point with b below `b_floor`.
pub fn integrate_drift_orbit(
    state0: &GuidingCenterState,
    potential: &dyn Potential2,
    model: &MagneticFieldModel,
    t_end: f64,
    dt: f64,
    b_floor: f64,
) -> Result<Vec<OrbitSample>> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end > 0.0 && t_end.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "orbit integration needs positive finite t_end and dt, got t_end = {t_end}, dt = {dt}"
        )));
    }
    if !(state0.w >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "perpendicular speed must be nonnegative, got {}",
            state0.w
        )));
    }
    let n_steps = (t_end / dt).round().max(1.0) as usize;
    let mut y = [state0.x_perp[0], state0.x_perp[1], state0.w];
    let sample = |t: f64, y: &[f64; 3]| {
        let x = [y[0], y[1]];
        let b = model.eval(x);
        let (u_perp, _) = drift_velocity(x, y[2], potential, model);
        OrbitSample {
            t,
            x_perp: x,
            w: y[2],
            mu: magnetic_moment(y[2], b),
            b,
            u_perp,
        }
    };
    let rhs = |y: &[f64; 3]| {
        let (u_perp, u_w) = drift_velocity([y[0], y[1]], y[2], potential, model);
        [u_perp[0], u_perp[1], u_w]
    };

    let b0 = model.eval(state0.x_perp);
    if b0 < b_floor {
        return Err(Error::SolverAbort(format!(
            "initial position ({:.6}, {:.6}) has b = {b0:.6} below the floor {b_floor}",
            state0.x_perp[0], state0.x_perp[1]
        )));
    }
    let mut trajectory = Vec::with_capacity(n_steps + 1);
    trajectory.push(sample(0.0, &y));
    for step in 0..n_steps {
        let k1 = rhs(&y);
        let y2 = advanced(&y, &k1, 0.5 * dt);
        let k2 = rhs(&y2);
        let y3 = advanced(&y, &k2, 0.5 * dt);
        let k3 = rhs(&y3);
        let y4 = advanced(&y, &k3, dt);
        let k4 = rhs(&y4);
        for i in 0..3 {
            y[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let t = (step + 1) as f64 * dt;
        let b = model.eval([y[0], y[1]]);
        if b < b_floor {
            return Err(Error::SolverAbort(format!(
                "orbit reached ({:.6}, {:.6}) at t = {t:.6} where b = {b:.6} is below the floor {b_floor}",
                y[0], y[1]
            )));
        }
        trajectory.push(sample(t, &y));
    }
    Ok(trajectory)
}

fn advanced(y: &[f64; 3], k: &[f64; 3], h: f64) -> [f64; 3] {
    [y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]]
}

/// Resample a reduced distribution between the speed chart and the
/// magnetic-moment chart.  The radial grid in the target chart is
/// uniform; values come from 4-point polynomial interpolation along the
/// source radial axis, with points outside the source range set to 0.
///
/// Discrete masses (∫F w dw dv dx versus ∫F b dμ dv dx, both by the
/// trapezoid rule) agree only as well as the two quadratures agree:
/// profiles with support away from the radial endpoints match to 1e-6
/// and better, while a profile finite at w = 0 carries an O(h²)
/// quadrature mismatch between the charts.
pub fn chart_transform(
    f: &ReducedDistribution,
    model: &MagneticFieldModel,
    target: Chart,
) -> Result<ReducedDistribution> {
    chart_transform_to(f, model, target, None)
}

/// As [`chart_transform`] with an explicit radial extent for the target
/// grid.  If the requested extent cannot hold the image of the source
/// support, the resampling is rejected with the mass it would lose.
pub fn chart_transform_to(
    f: &ReducedDistribution,
    model: &MagneticFieldModel,
    target: Chart,
    target_max: Option<f64>,
) -> Result<ReducedDistribution> {
    if f.chart() == target {
        return Ok(f.clone());
    }
    let x_grid = f.x_grid();
    let b_at = model.values_on(x_grid);
    let b_min = b_at.iter().cloned().fold(f64::INFINITY, f64::min);
    let b_max = b_at.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(b_min > 0.0) {
        return Err(Error::FieldNotPositive(format!(
            "chart transforms need b > 0 on the grid, found min b = {b_min}"
        )));
    }
    let n_x = x_grid.len();
    let n_v = f.parallel().n();
    let n_r = f.speed().n();
    let src_max = f.speed().max();

    // Covering extents: w_max²/(2 b_min) holds every image μ = w²/(2b),
    // and sqrt(2 b_max μ_max) holds every image w.
    let new_max = match target_max {
        Some(m) => {
            if !(m > 0.0 && m.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "target radial extent must be positive and finite, got {m}"
                )));
            }
            m
        }
        None => match target {
            Chart::Mu => src_max * src_max / (2.0 * b_min),
            Chart::W => (2.0 * b_max * src_max * src_max).sqrt(),
        },
    };

    // Mass that the target range cannot represent, measured with the
    // source chart's own quadrature.
    let cell = x_grid.cell_volume();
    let mut total = 0.0;
    let mut lost = 0.0;
    for ir in 0..n_r {
        let r = f.speed().coord(ir);
        let rq = f.speed().quad_weight(ir);
        for iv in 0..n_v {
            let vq = f.parallel().quad_weight(iv);
            let slab = f.x_slab(ir, iv);
            for ix in 0..n_x {
                let measure = match f.chart() {
                    Chart::W => r,
                    Chart::Mu => b_at[ix],
                };
                let m = slab[ix].abs() * measure * rq * vq * cell;
                total += m;
                let covered = match target {
                    // Source w is representable iff w²/(2b) ≤ μ_max.
                    Chart::Mu => r * r / (2.0 * b_at[ix]) <= new_max * (1.0 + 1e-12),
                    // Source μ is representable iff sqrt(2bμ) ≤ w_max.
                    Chart::W => 2.0 * b_at[ix] * r <= new_max * new_max * (1.0 + 1e-12),
                };
                if !covered {
                    lost += m;
                }
            }
        }
    }
    if lost > 1e-10 * total.max(f64::MIN_POSITIVE) {
        return Err(Error::ChartTruncation { lost });
    }

    let new_grid = SpeedGrid::new(n_r, new_max)?;
    let mut out = ReducedDistribution::zeros(x_grid, new_grid, f.parallel().clone(), target);
    let h_src = f.speed().spacing();
    let mut lane = vec![0.0; n_r];
    for iv in 0..n_v {
        for ix in 0..n_x {
            for ir in 0..n_r {
                lane[ir] = f.values()[(ir * n_v + iv) * n_x + ix];
            }
            for ir_new in 0..n_r {
                let r_new = out.speed().coord(ir_new);
                // Image of the target node back in the source chart.
                let r_src = match target {
                    Chart::Mu => (2.0 * b_at[ix] * r_new).sqrt(),
                    Chart::W => r_new * r_new / (2.0 * b_at[ix]),
                };
                let value = if r_src > src_max * (1.0 + 1e-12) {
                    0.0
                } else {
                    lagrange4_clamped(&lane, h_src, r_src.min(src_max))
                };
                out.values_mut()[(ir_new * n_v + iv) * n_x + ix] = value;
            }
        }
    }
    Ok(out)
}

/// Cubic Lagrange interpolation on a uniform non-periodic lane; the
/// 4-point stencil is shifted inward near the ends.  Exact on cubics.
fn lagrange4_clamped(lane: &[f64], h: f64, x: f64) -> f64 {
    let n = lane.len();
    let u = x / h;
    let base = (u.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
    let mut acc = 0.0;
    for j in 0..4 {
        let pj = (base + j) as f64;
        let mut weight = 1.0;
        for m in 0..4 {
            if m == j {
                continue;
            }
            let pm = (base + m) as f64;
            weight *= (u - pm) / (pj - pm);
        }
        acc += weight * lane[base + j];
    }
    acc
}

/// Cubic Lagrange weights for offset s ∈ [0, 1) within a periodic
/// 4-point stencil at nodes {−1, 0, 1, 2}.
fn cubic_weights(s: f64) -> [f64; 4] {
    [
        -s * (s - 1.0) * (s - 2.0) / 6.0,
        (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0,
        -s * (s + 1.0) * (s - 2.0) / 2.0,
        s * (s + 1.0) * (s - 1.0) / 6.0,
    ]
}

/// Bicubic periodic interpolation of nodal samples at an arbitrary
/// point (2D grids).
pub fn interp_bicubic_periodic(grid: &TorusGrid, values: &[f64], x: [f64; 2]) -> f64 {
    let n0 = grid.nodes()[0];
    let n1 = grid.nodes()[1];
    let u = grid.wrap(0, x[0]) / grid.spacing(0);
    let v = grid.wrap(1, x[1]) / grid.spacing(1);
    let i0 = u.floor() as usize % n0;
    let j0 = v.floor() as usize % n1;
    let wu = cubic_weights(u - u.floor());
    let wv = cubic_weights(v - v.floor());
    let mut acc = 0.0;
    for (dj, wvj) in wv.iter().enumerate() {
        let j = (j0 + n1 + dj - 1) % n1;
        let row = j * n0;
        let mut line = 0.0;
        for (di, wui) in wu.iter().enumerate() {
            let i = (i0 + n0 + di - 1) % n0;
            line += wui * values[row + i];
        }
        acc += wvj * line;
    }
    acc
}

/// State of the self-consistent 2D solver: density 𝒢, its potential,
/// and the field E = −∇φ from −Δφ = 𝒢 − ρ₀.
pub struct GC2DState {
    pub density: ScalarField,
    pub phi: ScalarField,
    pub e_field: VectorField,
    pub background: f64,
    pub time: f64,
    pub steps_taken: u64,
    pub substep_splits: u64,
    target_mean: f64,
    spectral: Spectral,
    split_logged: bool,
}

impl GC2DState {
    pub fn new(density: ScalarField, background: Option<f64>) -> Result<Self> {
        if density.grid().dim() != 2 {
            return Err(Error::InvalidParameter(
                "the guiding-center solver runs on a 2D torus".into(),
            ));
        }
        if !density.all_finite() {
            return Err(Error::NonFinite("initial density".into()));
        }
        let target_mean = density.mean();
        let background = background.unwrap_or(target_mean);
        let mut spectral = Spectral::new(density.grid());
        let PoissonSolution { phi, e_field, .. } =
            solve_poisson_with(&mut spectral, &density, Some(background))?;
        Ok(Self {
            density,
            phi,
            e_field,
            background,
            time: 0.0,
            steps_taken: 0,
            substep_splits: 0,
            target_mean,
            spectral,
            split_logged: false,
        })
    }

    /// Semi-Lagrangian step: freeze U⊥ = (E_y, −E_x), trace each node
    /// backward (midpoint rule, split so no substep moves more than two
    /// cells), interpolate 𝒢 at the foot, restore the exact mean, then
    /// refresh the Poisson solve.
    pub fn step(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "time step must be positive and finite, got {dt}"
            )));
        }
        let grid = self.density.grid().clone();
        let n0 = grid.nodes()[0];
        let n1 = grid.nodes()[1];
        let (h0, h1) = (grid.spacing(0), grid.spacing(1));

        let ex = self.e_field.component(0);
        let ey = self.e_field.component(1);
        let mut max_cells = 0.0f64;
        for i in 0..grid.len() {
            max_cells = max_cells.max((ey[i] * dt / h0).abs()).max((ex[i] * dt / h1).abs());
        }
        let n_sub = ((max_cells / 2.0).ceil() as usize).max(1);
        if n_sub > 1 {
            self.substep_splits += (n_sub - 1) as u64;
            if !self.split_logged {
                eprintln!(
                    "gc2d: displacement {max_cells:.2} cells at t = {:.4}; splitting steps into {n_sub} substeps",
                    self.time
                );
                self.split_logged = true;
            }
        }
        let dt_sub = dt / n_sub as f64;

        let velocity = |state: &Self, x: [f64; 2]| -> [f64; 2] {
            let uy = interp_bicubic_periodic(&grid, state.e_field.component(0), x);
            let ux = interp_bicubic_periodic(&grid, state.e_field.component(1), x);
            [ux, -uy]
        };

        let mut new_values = vec![0.0; grid.len()];
        for j in 0..n1 {
            let y0 = j as f64 * h1;
            for i in 0..n0 {
                let mut foot = [i as f64 * h0, y0];
                for _ in 0..n_sub {
                    let u_here = velocity(self, foot);
                    let mid = [
                        foot[0] - 0.5 * dt_sub * u_here[0],
                        foot[1] - 0.5 * dt_sub * u_here[1],
                    ];
                    let u_mid = velocity(self, mid);
                    foot[0] -= dt_sub * u_mid[0];
                    foot[1] -= dt_sub * u_mid[1];
                }
                new_values[j * n0 + i] =
                    interp_bicubic_periodic(&grid, self.density.values(), foot);
            }
        }

        let mut new_density = ScalarField::from_values(&grid, new_values)?;
        // Interpolation does not telescope, so restore the invariant mean
        // exactly; the correction is a uniform constant.
        new_density.add_scalar(self.target_mean - new_density.mean());
        if !new_density.all_finite() {
            return Err(Error::NonFinite(format!(
                "guiding-center density after the step at t = {:.6}",
                self.time
            )));
        }
        let PoissonSolution { phi, e_field, .. } =
            solve_poisson_with(&mut self.spectral, &new_density, Some(self.background))?;
        self.density = new_density;
        self.phi = phi;
        self.e_field = e_field;
        self.time += dt;
        self.steps_taken += 1;
        Ok(())
    }

    /// (kinetic, field, total) with the reduced-model coefficients:
    /// the w- and v∥-moments of 𝒢ℳ give kinetic = (3/4π)∫𝒢 dx, and the
    /// field part is (1/4π)∫|E|².
    pub fn energy(&self) -> (f64, f64, f64) {
        let kinetic = MaxwellianProfile.energy_coefficient() * self.density.integral();
        let field = self.e_field.l2_squared() / (4.0 * std::f64::consts::PI);
        (kinetic, field, kinetic + field)
    }
}

/// Run the 2D solver for `steps` steps, invoking `sink` on the initial
/// state and every `output_every` steps thereafter.
pub fn run_guiding_center_2d(
    initial: ScalarField,
    background: Option<f64>,
    dt: f64,
    steps: usize,
    output_every: usize,
    mut sink: impl FnMut(&GC2DState) -> Result<()>,
) -> Result<GC2DState> {
    if output_every == 0 {
        return Err(Error::InvalidParameter("output interval must be at least 1".into()));
    }
    let mut state = GC2DState::new(initial, background)?;
    sink(&state)?;
    for step in 0..steps {
        state.step(dt)?;
        if (step + 1) % output_every == 0 {
            sink(&state)?;
        }
    }
    Ok(state)
}

/// A steady state of the 2D guiding-center system: 𝒢 a pointwise
/// function of φ, so U⊥·∇𝒢 = 0.
pub struct SteadyVortex {
    pub density: ScalarField,
    pub phi: ScalarField,
    pub background: f64,
    /// Coefficient in the density-potential relation.
    pub amplitude: f64,
}

/// Laplacian eigenstate vortex on a square torus: φ = A(cos κx + cos κy)
/// with κ = 2πk/L, 𝒢 = ρ₀ + κ²φ.  Discretely steady to roundoff: the
/// spectral gradients of 𝒢 and φ are parallel at every node.
pub fn vortex_eigenstate(
    grid: &TorusGrid,
    rho0: f64,
    amplitude: f64,
    k: usize,
) -> Result<SteadyVortex> {
    if grid.dim() != 2 || (grid.lengths()[0] - grid.lengths()[1]).abs() > 1e-12 {
        return Err(Error::InvalidParameter(
            "eigenstate vortices need a square 2D torus".into(),
        ));
    }
    if k == 0 || 2 * k >= grid.nodes()[0].min(grid.nodes()[1]) {
        return Err(Error::InvalidParameter(format!(
            "mode number {k} is not resolved by the grid"
        )));
    }
    let kappa = TAU * k as f64 / grid.lengths()[0];
    let k2 = kappa * kappa;
    if rho0 - 2.0 * k2 * amplitude.abs() <= 0.0 {
        return Err(Error::FieldNotPositive(format!(
            "eigenstate density dips to {:.6}; raise rho0 or lower the amplitude",
            rho0 - 2.0 * k2 * amplitude.abs()
        )));
    }
    let phi = ScalarField::from_fn(grid, |x| {
        amplitude * ((kappa * x[0]).cos() + (kappa * x[1]).cos())
    });
    let mut density = phi.clone();
    for v in density.values_mut() {
        *v = rho0 + k2 * *v;
    }
    Ok(SteadyVortex { density, phi, background: rho0, amplitude })
}

/// Self-consistent exponential vortex 𝒢 = A e^{φ} found by a normalized
/// fixed-point iteration: solve −Δψ = e^{φ} − ⟨e^{φ}⟩, rescale ψ to the
/// prescribed sup-norm β, repeat.  The rescaling factor converges to
/// the amplitude A.  (The e^{φ} branch is used because its linearized
/// iteration is a plain power iteration; the e^{−φ} branch alternates
/// sign and does not settle.)
pub fn vortex_boltzmann(
    grid: &TorusGrid,
    beta: f64,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyVortex> {
    if grid.dim() != 2 {
        return Err(Error::InvalidParameter("exponential vortices live on a 2D torus".into()));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "target potential amplitude must be positive, got {beta}"
        )));
    }
    let mut spectral = Spectral::new(grid);
    let kx = TAU / grid.lengths()[0];
    let ky = TAU / grid.lengths()[1];
    let mut phi =
        ScalarField::from_fn(grid, |x| 0.5 * beta * ((kx * x[0]).cos() + (ky * x[1]).cos()));
    let mut amplitude = 0.0;
    let mut converged = false;
    for _ in 0..max_iter {
        let mut source = phi.clone();
        for v in source.values_mut() {
            *v = v.exp();
        }
        let sol = solve_poisson_with(&mut spectral, &source, None)?;
        let sup = sol.phi.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if sup < 1e-14 {
            return Err(Error::NoConvergence(
                "exponential vortex iteration collapsed to the uniform state".into(),
            ));
        }
        amplitude = beta / sup;
        let mut delta = 0.0f64;
        for (new, old) in sol.phi.values().iter().zip(phi.values()) {
            delta = delta.max((amplitude * new - old).abs());
        }
        let mut next = sol.phi;
        for v in next.values_mut() {
            *v *= amplitude;
        }
        phi = next;
        if delta <= tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence(format!(
            "exponential vortex iteration did not reach {tol:.1e} in {max_iter} iterations"
        )));
    }
    // Final pass: define the density from the converged potential and
    // re-solve so that (density, phi) satisfy the discrete Poisson
    // equation exactly.
    let mut density = phi.clone();
    for v in density.values_mut() {
        *v = amplitude * v.exp();
    }
    let background = density.mean();
    let sol = solve_poisson_with(&mut spectral, &density, Some(background))?;
    Ok(SteadyVortex { density, phi: sol.phi, background, amplitude })
}
