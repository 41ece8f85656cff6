//! Full-kinetic particle solver in fast time s = t/ε: characteristics
//! dx/ds = v, dv/ds = E + (b/ε) v^⊥ with v^⊥ = (v_y, −v_x, 0), pushed
//! by the exact-rotation Boris split, coupled to the spectral Poisson
//! solve of the deposited charge.  Also hosts the corrected-state
//! transport defect ‖ε∂_t(F+εf₁) + v·∇_x(F+εf₁) + (E+(b/ε)v^⊥)·∇_v(F+εf₁)‖.

use crate::error::{Error, Result};
use crate::fields::MagneticFieldModel;
use crate::grid::{ScalarField, Spectral, TorusGrid, VectorField};
use crate::gyro::{
    solvability_residual_order0, solvability_residual_parallel, GyroResolvedDistribution,
};
use crate::poisson::{solve_poisson_with, PoissonSolution};
use crate::reduced::{fd_blocks, Chart, ReducedDistribution};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

/// Particle ensemble in structure-of-arrays layout: positions are
/// `dim`-interleaved and wrapped into the box, velocities are
/// 3-interleaved (v_x, v_y, v_z).  Weights never change after loading,
/// so total charge is conserved exactly.
#[derive(Debug, Clone)]
pub struct FullParticleEnsemble {
    pub grid: TorusGrid,
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub weights: Vec<f64>,
    pub rng_seed: u64,
}

impl FullParticleEnsemble {
    pub fn count(&self) -> usize {
        self.weights.len()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn position(&self, p: usize) -> &[f64] {
        let dim = self.grid.dim();
        &self.positions[p * dim..(p + 1) * dim]
    }

    pub fn velocity(&self, p: usize) -> [f64; 3] {
        [
            self.velocities[3 * p],
            self.velocities[3 * p + 1],
            self.velocities[3 * p + 2],
        ]
    }

    /// Append a zero-weight marker particle; it rides the fields without
    /// feeding back into the charge density.
    pub fn push_tracer(&mut self, x: &[f64], v: [f64; 3]) {
        let dim = self.grid.dim();
        assert_eq!(x.len(), dim);
        for a in 0..dim {
            self.positions.push(self.grid.wrap(a, x[a]));
        }
        self.velocities.extend_from_slice(&v);
        self.weights.push(0.0);
    }

    pub fn all_finite(&self) -> bool {
        self.positions.iter().all(|v| v.is_finite())
            && self.velocities.iter().all(|v| v.is_finite())
    }
}

/// Spatial factor of an initial distribution; acts as a density with
/// respect to dx, so the loaded total weight is its integral.
pub enum SpatialProfile {
    Uniform,
    /// 1 + delta·cos(2π·mode·x_axis/L_axis).
    SingleMode { axis: usize, mode: usize, delta: f64 },
    /// Arbitrary nonnegative nodal density on the ensemble grid.
    Gridded(ScalarField),
}

pub enum VelocityProfile {
    /// Isotropic Gaussian with the given thermal speed per component.
    Maxwellian { thermal: f64 },
    /// Fixed perpendicular speed with uniform random gyrophase.
    Ring { w: f64, v_par: f64 },
    Delta { v: [f64; 3] },
}

pub enum Loading {
    /// Positions sampled from the spatial profile, equal weights.
    Random,
    /// Uniform lattice positions with weights proportional to the
    /// profile; deposited density is then noise-free at t = 0.
    Quiet,
}

pub struct InitialDistribution {
    pub spatial: SpatialProfile,
    pub velocity: VelocityProfile,
    pub loading: Loading,
}

/// Deterministic ensemble loading: identical (spec, n_p, seed) gives a
/// bit-identical ensemble.
pub fn sample_initial(
    grid: &TorusGrid,
    spec: &InitialDistribution,
    n_p: usize,
    seed: u64,
) -> Result<FullParticleEnsemble> {
    if n_p == 0 {
        return Err(Error::InvalidParameter("particle count must be positive".into()));
    }
    if let SpatialProfile::Gridded(field) = &spec.spatial {
        if field.grid() != grid {
            return Err(Error::ShapeMismatch(
                "spatial profile grid differs from the ensemble grid".into(),
            ));
        }
        if grid.dim() != 2 {
            return Err(Error::InvalidParameter(
                "gridded spatial profiles are sampled in the plane; use a 2D grid".into(),
            ));
        }
        if field.min() < 0.0 {
            return Err(Error::InvalidParameter(
                "spatial profile must be nonnegative to be a density".into(),
            ));
        }
    }
    if let SpatialProfile::SingleMode { axis, mode, delta } = spec.spatial {
        if axis >= grid.dim() || mode == 0 || 2 * mode >= grid.nodes()[axis] {
            return Err(Error::InvalidParameter(format!(
                "perturbation mode {mode} on axis {axis} is not representable"
            )));
        }
        if delta.abs() >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "perturbation amplitude {delta} makes the density change sign"
            )));
        }
    }
    if let VelocityProfile::Maxwellian { thermal } = spec.velocity {
        if !(thermal > 0.0 && thermal.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "thermal speed must be positive, got {thermal}"
            )));
        }
    }
    if let VelocityProfile::Ring { w, .. } = spec.velocity {
        if !(w >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ring speed must be nonnegative, got {w}"
            )));
        }
    }

    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dim = grid.dim();
    let mut positions = Vec::with_capacity(n_p * dim);
    let mut weights = Vec::with_capacity(n_p);
    // Quiet loading balances gyrophases over 2x2 lattice blocks and
    // gives the four block members one shared perpendicular speed: the
    // four offsets form a rigid ring that rotates without changing
    // shape, so the lattice deposit does not breathe at the
    // gyrofrequency.
    let mut phase_pattern: Vec<f64> = Vec::new();
    let mut lattice_side = 0usize;

    match spec.loading {
        Loading::Random => {
            let total = match &spec.spatial {
                SpatialProfile::Uniform | SpatialProfile::SingleMode { .. } => grid.volume(),
                SpatialProfile::Gridded(field) => field.integral(),
            };
            let weight = total / n_p as f64;
            for _ in 0..n_p {
                let x = sample_position(grid, &spec.spatial, &mut rng);
                positions.extend_from_slice(&x[..dim]);
                weights.push(weight);
            }
        }
        Loading::Quiet => {
            let per_axis = (n_p as f64).powf(1.0 / dim as f64).round() as usize;
            if per_axis.pow(dim as u32) != n_p {
                return Err(Error::InvalidParameter(format!(
                    "quiet loading lays particles on a uniform lattice; {n_p} is not a {dim}th power"
                )));
            }
            let cell = grid.volume() / n_p as f64;
            lattice_side = per_axis;
            let mut idx = vec![0usize; dim];
            for _ in 0..n_p {
                let mut x = [0.0; 3];
                for a in 0..dim {
                    x[a] = (idx[a] as f64 + 0.5) * grid.lengths()[a] / per_axis as f64;
                }
                let density = match &spec.spatial {
                    SpatialProfile::Uniform => 1.0,
                    SpatialProfile::SingleMode { axis, mode, delta } => {
                        1.0 + delta
                            * (crate::grid::TAU * *mode as f64 * x[*axis]
                                / grid.lengths()[*axis])
                                .cos()
                    }
                    SpatialProfile::Gridded(field) => {
                        crate::guiding_center::interp_bicubic_periodic(
                            grid,
                            field.values(),
                            [x[0], x[1]],
                        )
                    }
                };
                positions.extend_from_slice(&x[..dim]);
                weights.push(density * cell);
                phase_pattern
                    .push(crate::grid::TAU * ((idx[0] + 2 * idx[1]) % 4) as f64 / 4.0);
                for a in 0..dim {
                    idx[a] += 1;
                    if idx[a] < per_axis {
                        break;
                    }
                    idx[a] = 0;
                }
            }
        }
    }

    let phase0 = if phase_pattern.is_empty() {
        0.0
    } else {
        crate::grid::TAU * rng.random::<f64>()
    };
    let blocks_per_side = lattice_side.div_ceil(2);
    // Block speeds are a stratified Rayleigh sample: every 2x2 tile of
    // blocks holds all four speed quantiles (one shared uniform offset,
    // permuted per tile), so the coarse-grained perpendicular pressure
    // is uniform and the deposit picks up no low-mode pressure noise.
    let mut block_speeds = vec![f64::NAN; blocks_per_side * blocks_per_side];
    if !phase_pattern.is_empty() {
        if let VelocityProfile::Maxwellian { .. } = spec.velocity {
            let u: f64 = rng.random();
            let strata: [f64; 4] = core::array::from_fn(|q| {
                (-2.0 * (1.0 - (q as f64 + u) / 4.0).ln()).sqrt()
            });
            for tj in 0..blocks_per_side.div_ceil(2) {
                for ti in 0..blocks_per_side.div_ceil(2) {
                    let mut perm = [0usize, 1, 2, 3];
                    for k in (1..4).rev() {
                        perm.swap(k, rng.random_range(0..=k));
                    }
                    for (m, &q) in perm.iter().enumerate() {
                        let bi = 2 * ti + m % 2;
                        let bj = 2 * tj + m / 2;
                        if bi < blocks_per_side && bj < blocks_per_side {
                            block_speeds[bi + blocks_per_side * bj] = strata[q];
                        }
                    }
                }
            }
        }
    }
    let mut velocities = Vec::with_capacity(n_p * 3);
    for p in 0..n_p {
        let v = match spec.velocity {
            VelocityProfile::Maxwellian { thermal } => {
                let c: f64 = rng.sample(StandardNormal);
                match phase_pattern.get(p) {
                    Some(&pattern) => {
                        let i = p % lattice_side;
                        let j = (p / lattice_side) % lattice_side;
                        let block = i / 2 + blocks_per_side * (j / 2);
                        let w = thermal * block_speeds[block];
                        let theta = phase0 + pattern;
                        [w * theta.cos(), w * theta.sin(), thermal * c]
                    }
                    None => {
                        let a: f64 = rng.sample(StandardNormal);
                        let b: f64 = rng.sample(StandardNormal);
                        [thermal * a, thermal * b, thermal * c]
                    }
                }
            }
            VelocityProfile::Ring { w, v_par } => {
                let drawn = crate::grid::TAU * rng.random::<f64>();
                let theta = match phase_pattern.get(p) {
                    Some(&pattern) => phase0 + pattern,
                    None => drawn,
                };
                [w * theta.cos(), w * theta.sin(), v_par]
            }
            VelocityProfile::Delta { v } => v,
        };
        velocities.extend_from_slice(&v);
    }

    Ok(FullParticleEnsemble {
        grid: grid.clone(),
        positions,
        velocities,
        weights,
        rng_seed: seed,
    })
}

fn sample_position(
    grid: &TorusGrid,
    spatial: &SpatialProfile,
    rng: &mut ChaCha20Rng,
) -> [f64; 3] {
    let mut x = [0.0; 3];
    for a in 0..grid.dim() {
        x[a] = grid.lengths()[a] * rng.random::<f64>();
    }
    match spatial {
        SpatialProfile::Uniform => x,
        SpatialProfile::SingleMode { axis, mode, delta } => {
            // Invert the 1D CDF u = (x + (δL/2πm)sin(2πm x/L))/L by
            // Newton's method; the density 1+δcos never vanishes.
            let length = grid.lengths()[*axis];
            let k = crate::grid::TAU * *mode as f64 / length;
            let u = x[*axis] / length;
            let mut t = u * length;
            for _ in 0..50 {
                let f = (t + delta / k * (k * t).sin()) / length - u;
                let fp = (1.0 + delta * (k * t).cos()) / length;
                let step = f / fp;
                t -= step;
                if step.abs() < 1e-14 * length {
                    break;
                }
            }
            x[*axis] = grid.wrap(*axis, t);
            x
        }
        SpatialProfile::Gridded(field) => {
            // Rejection against the grid maximum.
            let peak = field.max();
            if peak <= 0.0 {
                return x;
            }
            loop {
                let value = crate::guiding_center::interp_bicubic_periodic(
                    field.grid(),
                    field.values(),
                    [x[0], x[1]],
                );
                if value >= peak * rng.random::<f64>() {
                    return x;
                }
                for a in 0..grid.dim() {
                    x[a] = grid.lengths()[a] * rng.random::<f64>();
                }
            }
        }
    }
}

/// Right-hand side of the fast-time characteristics.  The magnetic
/// rotation acts on (v_x, v_y) only; v_z feels the electric field
/// alone.
pub fn lorentz_rhs(
    v: [f64; 3],
    e_at_x: [f64; 3],
    b_at_x: f64,
    eps: f64,
) -> ([f64; 3], [f64; 3]) {
    let omega = b_at_x / eps;
    (
        v,
        [
            e_at_x[0] + omega * v[1],
            e_at_x[1] - omega * v[0],
            e_at_x[2],
        ],
    )
}

/// Boris split: half electric kick, exact perpendicular rotation by
/// α = Δs·b/ε (clockwise, matching dv/ds = Ω v^⊥), half kick, then the
/// position update x += Δs·v⁺.  With E = 0 the perpendicular speed is
/// conserved to roundoff.
pub fn boris_push(
    x: &mut [f64],
    v: &mut [f64; 3],
    e: [f64; 3],
    b: f64,
    eps: f64,
    ds: f64,
) {
    let half = 0.5 * ds;
    v[0] += half * e[0];
    v[1] += half * e[1];
    v[2] += half * e[2];
    let alpha = ds * b / eps;
    let (sin_a, cos_a) = alpha.sin_cos();
    let vx = cos_a * v[0] + sin_a * v[1];
    let vy = -sin_a * v[0] + cos_a * v[1];
    v[0] = vx;
    v[1] = vy;
    v[0] += half * e[0];
    v[1] += half * e[1];
    v[2] += half * e[2];
    for (a, xa) in x.iter_mut().enumerate() {
        *xa += ds * v[a];
    }
}

/// Cloud-in-cell deposition onto grid nodes, returning a density whose
/// integral equals the total particle weight exactly (partition of
/// unity, fixed summation order).
pub fn deposit_charge(ensemble: &FullParticleEnsemble) -> ScalarField {
    let grid = &ensemble.grid;
    let dim = grid.dim();
    let mut values = vec![0.0; grid.len()];
    let inv_cell = 1.0 / grid.cell_volume();
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for p in 0..ensemble.count() {
        let pos = ensemble.position(p);
        for a in 0..dim {
            let u = grid.wrap(a, pos[a]) / grid.spacing(a);
            let i = u.floor() as usize % grid.nodes()[a];
            base[a] = i;
            frac[a] = u - u.floor();
        }
        let weight = ensemble.weights[p] * inv_cell;
        let corners = 1usize << dim;
        for corner in 0..corners {
            let mut idx = 0usize;
            let mut shape = weight;
            for a in 0..dim {
                let offset = (corner >> a) & 1;
                let node = (base[a] + offset) % grid.nodes()[a];
                idx += node * grid.stride(a);
                shape *= if offset == 1 { frac[a] } else { 1.0 - frac[a] };
            }
            values[idx] += shape;
        }
    }
    ScalarField::from_values(grid, values).expect("deposition produces finite values")
}

/// Gather a vector field at a particle position with the same
/// cloud-in-cell weights used for deposition.
pub fn gather(field: &VectorField, pos: &[f64]) -> [f64; 3] {
    let grid = field.grid();
    let dim = grid.dim();
    let mut base = [0usize; 3];
    let mut frac = [0.0f64; 3];
    for a in 0..dim {
        let u = grid.wrap(a, pos[a]) / grid.spacing(a);
        let i = u.floor() as usize % grid.nodes()[a];
        base[a] = i;
        frac[a] = u - u.floor();
    }
    let mut out = [0.0; 3];
    let corners = 1usize << dim;
    for corner in 0..corners {
        let mut multi = [0usize; 3];
        let mut shape = 1.0;
        for a in 0..dim {
            let offset = (corner >> a) & 1;
            multi[a] = (base[a] + offset) % grid.nodes()[a];
            shape *= if offset == 1 { frac[a] } else { 1.0 - frac[a] };
        }
        let idx = grid.flat_index(&multi[..dim]);
        for c in 0..field.n_components() {
            out[c] += shape * field.component(c)[idx];
        }
    }
    out
}

/// Self-consistent particle-in-cell state; after construction and after
/// every step the stored field is the Poisson solve of the deposited
/// density against the neutralizing background.
pub struct PicState {
    pub ensemble: FullParticleEnsemble,
    pub model: MagneticFieldModel,
    pub eps: f64,
    pub ds: f64,
    pub s: f64,
    pub steps_taken: u64,
    pub rho: ScalarField,
    pub phi: ScalarField,
    pub e_field: VectorField,
    pub background: f64,
    spectral: Spectral,
}

impl PicState {
    pub fn new(
        ensemble: FullParticleEnsemble,
        model: MagneticFieldModel,
        eps: f64,
        ds: f64,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "scale ratio must lie in (0, 1), got {eps}"
            )));
        }
        if !(ds > 0.0 && ds.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "fast-time step must be positive, got {ds}"
            )));
        }
        let b_max = model
            .values_on(&ensemble.grid)
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        let bbox = [
            [0.0, ensemble.grid.lengths()[0]],
            [0.0, ensemble.grid.lengths()[1]],
        ];
        model.validate_positivity(bbox, 1e-6)?;
        if ds * b_max / eps > 0.5 {
            return Err(Error::InvalidParameter(format!(
                "step {ds} does not resolve the gyration: ds*b/eps = {:.3} > 0.5",
                ds * b_max / eps
            )));
        }
        let mut spectral = Spectral::new(&ensemble.grid);
        let rho = deposit_charge(&ensemble);
        let background = rho.mean();
        let PoissonSolution { phi, e_field, .. } =
            solve_poisson_with(&mut spectral, &rho, Some(background))?;
        Ok(Self {
            ensemble,
            model,
            eps,
            ds,
            s: 0.0,
            steps_taken: 0,
            rho,
            phi,
            e_field,
            background,
            spectral,
        })
    }

    /// Physical (slow) time t = ε·s.
    pub fn time(&self) -> f64 {
        self.eps * self.s
    }

    /// Push every particle through the frozen field, wrap positions,
    /// then refresh density and field.
    pub fn step(&mut self) -> Result<()> {
        let dim = self.ensemble.grid.dim();
        let grid = self.ensemble.grid.clone();
        for p in 0..self.ensemble.count() {
            let (pos_slice, e3) = {
                let pos = self.ensemble.position(p);
                let e = gather(&self.e_field, pos);
                (p * dim, e)
            };
            let b = {
                let pos = &self.ensemble.positions[pos_slice..pos_slice + dim];
                self.model.eval([pos[0], pos[1]])
            };
            let mut v = self.ensemble.velocity(p);
            let e = [e3[0], e3[1], if dim == 3 { e3[2] } else { 0.0 }];
            let x = &mut self.ensemble.positions[pos_slice..pos_slice + dim];
            boris_push(x, &mut v, e, b, self.eps, self.ds);
            for a in 0..dim {
                x[a] = grid.wrap(a, x[a]);
            }
            self.ensemble.velocities[3 * p] = v[0];
            self.ensemble.velocities[3 * p + 1] = v[1];
            self.ensemble.velocities[3 * p + 2] = v[2];
        }
        if !self.ensemble.all_finite() {
            return Err(Error::SolverAbort(format!(
                "non-finite particle state at s = {:.6}",
                self.s
            )));
        }
        self.rho = deposit_charge(&self.ensemble);
        let PoissonSolution { phi, e_field, .. } =
            solve_poisson_with(&mut self.spectral, &self.rho, Some(self.background))?;
        self.phi = phi;
        self.e_field = e_field;
        self.s += self.ds;
        self.steps_taken += 1;
        Ok(())
    }
}

/// Run the particle solver for `steps` steps, invoking `sink` on the
/// initial state and every `output_every` steps.
pub fn run_full_kinetic(
    mut state: PicState,
    steps: usize,
    output_every: usize,
    mut sink: impl FnMut(&PicState) -> Result<()>,
) -> Result<PicState> {
    if output_every == 0 {
        return Err(Error::InvalidParameter("output interval must be at least 1".into()));
    }
    sink(&state)?;
    for step in 0..steps {
        state.step()?;
        if (step + 1) % output_every == 0 {
            sink(&state)?;
        }
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy)]
pub struct FullOrbitSample {
    pub s: f64,
    pub x: [f64; 3],
    pub v: [f64; 3],
}

/// Single-particle orbit in frozen fields on unbounded space (positions
/// unwrapped so secular drifts read off directly).
pub fn integrate_full_orbit(
    x0: [f64; 3],
    v0: [f64; 3],
    e_uniform: [f64; 3],
    model: &MagneticFieldModel,
    eps: f64,
    ds: f64,
    n_steps: usize,
) -> Result<Vec<FullOrbitSample>> {
    if !(eps > 0.0 && eps < 1.0) || !(ds > 0.0 && ds.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < eps < 1 and ds > 0, got eps = {eps}, ds = {ds}"
        )));
    }
    let mut x = x0;
    let mut v = v0;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(FullOrbitSample { s: 0.0, x, v });
    for step in 0..n_steps {
        let b = model.eval([x[0], x[1]]);
        if ds * b / eps > 0.5 {
            return Err(Error::InvalidParameter(format!(
                "step {ds} does not resolve the gyration at b = {b}: ds*b/eps > 0.5"
            )));
        }
        boris_push(&mut x, &mut v, e_uniform, b, eps, ds);
        out.push(FullOrbitSample { s: (step + 1) as f64 * ds, x, v });
    }
    Ok(out)
}

/// Inputs for the transport-defect evaluation of the corrected state
/// F^ε = F + ε f₁.
pub struct DefectInputs<'a> {
    pub f: &'a ReducedDistribution,
    pub f1: &'a GyroResolvedDistribution,
    pub phi: &'a ScalarField,
    pub model: &'a MagneticFieldModel,
    pub eps: f64,
    /// ∂F/∂t; None for stationary data.
    pub df_dt: Option<&'a ReducedDistribution>,
    /// ∂f₁/∂t; None for stationary data.
    pub df1_dt: Option<&'a GyroResolvedDistribution>,
    /// Gate on the parallel constraint residual.
    pub parallel_tol: f64,
    /// Gate on the order-zero evolution residual (discretization scale).
    pub order0_tol: f64,
}

/// Transport defect of the corrected state: the full Vlasov operator in
/// polar velocity coordinates applied to F^ε = F + εf₁, with ∂_t scaled
/// by ε.  The O(1/ε) and O(1) blocks cancel by construction of f₁, so
/// the norm is O(ε).  The w = 0 ring (zero measure, where the polar
/// frame degenerates) is excluded.
pub fn hilbert_defect(inputs: &DefectInputs) -> Result<(GyroResolvedDistribution, f64)> {
    let f = inputs.f;
    f.require_chart(Chart::W)?;
    let x_grid = f.x_grid();
    if inputs.phi.grid() != x_grid {
        return Err(Error::ShapeMismatch(
            "potential grid does not match the distribution's x grid".into(),
        ));
    }

    let (_, parallel_norm) = solvability_residual_parallel(f, inputs.phi)?;
    if parallel_norm > inputs.parallel_tol {
        return Err(Error::NotSolvable {
            which: "parallel solvability constraint",
            norm: parallel_norm,
            tol: inputs.parallel_tol,
        });
    }
    let p_zero = ReducedDistribution::zeros(x_grid, f.speed().clone(), f.parallel().clone(), Chart::W);
    let phi_zero = ScalarField::zeros(x_grid);
    let (_, order0_norm) = solvability_residual_order0(
        f,
        &p_zero,
        inputs.phi,
        &phi_zero,
        inputs.model,
        inputs.df_dt,
    )?;
    if order0_norm > inputs.order0_tol {
        return Err(Error::NotSolvable {
            which: "order-zero evolution equation",
            norm: order0_norm,
            tol: inputs.order0_tol,
        });
    }

    let n_theta = inputs.f1.n_theta();
    let n_x = x_grid.len();
    let n_w = f.speed().n();
    let n_v = f.parallel().n();
    let eps = inputs.eps;

    // Corrected state on the tensor grid.
    let mut state = inputs.f1.clone();
    for iw in 0..n_w {
        for it in 0..n_theta {
            for iv in 0..n_v {
                let base_f = (iw * n_v + iv) * n_x;
                let base = ((iw * n_theta + it) * n_v + iv) * n_x;
                for ix in 0..n_x {
                    state.values_mut()[base + ix] =
                        f.values()[base_f + ix] + eps * inputs.f1.values()[base + ix];
                }
            }
        }
    }

    // Velocity-space derivatives of the corrected state.
    let d_dw = fd_blocks(
        state.values(),
        1,
        n_w,
        n_theta * n_v * n_x,
        f.speed().spacing(),
    );
    let d_dv = fd_blocks(state.values(), n_w * n_theta, n_v, n_x, f.parallel().spacing());
    let d_dtheta = state.apply_L(&MagneticFieldModel::Uniform { b0: 1.0 });

    // Field data.
    let grad_phi = crate::poisson::gradient_spectral(inputs.phi);
    let parallel_axis = if x_grid.dim() == 3 { Some(2) } else { None };
    let mut sp = Spectral::new(x_grid);
    let e_par: Vec<f64> = match parallel_axis {
        Some(axis) => sp
            .derivative_values(inputs.phi.values(), axis)
            .into_iter()
            .map(|g| -g)
            .collect(),
        None => vec![0.0; n_x],
    };
    let b_at = inputs.model.values_on(x_grid);

    let mut defect = state.clone();
    for v in defect.values_mut() {
        *v = 0.0;
    }
    for iw in 0..n_w {
        let w = f.speed().coord(iw);
        for it in 0..n_theta {
            let theta = state.theta_node(it);
            let (sin_t, cos_t) = theta.sin_cos();
            for iv in 0..n_v {
                let v_par = f.parallel().coord(iv);
                let base = ((iw * n_theta + it) * n_v + iv) * n_x;
                let slab = &state.values()[base..base + n_x];
                let dx0 = sp.derivative_values(slab, 0);
                let dx1 = sp.derivative_values(slab, 1);
                let dpar = parallel_axis.map(|axis| sp.derivative_values(slab, axis));
                let base_f = (iw * n_v + iv) * n_x;
                for ix in 0..n_x {
                    if iw == 0 {
                        // Polar frame degenerates on the zero-measure ring.
                        defect.values_mut()[base + ix] = 0.0;
                        continue;
                    }
                    let e_perp = [
                        -grad_phi.component(0)[ix],
                        -grad_phi.component(1)[ix],
                    ];
                    let e_w = e_perp[0] * cos_t + e_perp[1] * sin_t;
                    let e_theta = -e_perp[0] * sin_t + e_perp[1] * cos_t;
                    let mut r = w * (cos_t * dx0[ix] + sin_t * dx1[ix]);
                    if let Some(d) = &dpar {
                        r += v_par * d[ix];
                    }
                    r += e_w * d_dw[base + ix];
                    r += (e_theta / w - b_at[ix] / eps) * d_dtheta.values()[base + ix];
                    r += e_par[ix] * d_dv[base + ix];
                    let mut time_term = 0.0;
                    if let Some(ft) = inputs.df_dt {
                        time_term += ft.values()[base_f + ix];
                    }
                    if let Some(f1t) = inputs.df1_dt {
                        time_term += eps * f1t.values()[base + ix];
                    }
                    defect.values_mut()[base + ix] = r + eps * time_term;
                }
            }
        }
    }
    let norm = defect.l2_norm();
    Ok((defect, norm))
}
