//! Randomized structure checks of the gyrophase algebra: the average
//! annihilates the gyration operator's range, the θ derivative vanishes
//! exactly on θ-independent samples and detectably nowhere else, the
//! unit vectors e_w and e_θ average to zero, and the constructed
//! corrector keeps Π f₁ = P while solving 𝓛 f₁ = e_w·G pointwise.

use driftkin::fields::MagneticFieldModel;
use driftkin::grid::{ScalarField, TorusGrid};
use driftkin::gyro::{
    apply_L, construct_f1, e_theta, e_w, e_w_projection, gyroaverage, theta_node, vector_G,
    GyrophaseSampling,
};
use driftkin::reduced::{Chart, ParallelGrid, ReducedDistribution, SpeedGrid};
use proptest::prelude::*;
use std::f64::consts::TAU;

#[derive(Debug, Clone)]
struct TrigPoly {
    constant: f64,
    // harmonic k+1 has coefficients (cos, sin)
    harmonics: Vec<(f64, f64)>,
}

impl TrigPoly {
    fn eval(&self, theta: f64) -> f64 {
        let mut acc = self.constant;
        for (k, (a, b)) in self.harmonics.iter().enumerate() {
            let arg = (k + 1) as f64 * theta;
            acc += a * arg.cos() + b * arg.sin();
        }
        acc
    }

    fn sample(&self, n: usize) -> GyrophaseSampling {
        GyrophaseSampling::from_fn(n, |t| self.eval(t)).unwrap()
    }
}

fn trig_poly(max_harmonics: usize) -> impl Strategy<Value = TrigPoly> {
    (
        -1.0..1.0f64,
        proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64), 0..=max_harmonics),
    )
        .prop_map(|(constant, harmonics)| TrigPoly { constant, harmonics })
}

// One harmonic is pinned to magnitude >= 0.01, so by orthogonality the
// derivative's rms is bounded below no matter what the rest do.
fn theta_dependent_poly() -> impl Strategy<Value = TrigPoly> {
    (
        trig_poly(5),
        0usize..5,
        0.01..1.0f64,
        any::<bool>(),
    )
        .prop_map(|(mut poly, slot, magnitude, flip)| {
            if poly.harmonics.is_empty() {
                poly.harmonics.push((0.0, 0.0));
            }
            let idx = slot % poly.harmonics.len();
            poly.harmonics[idx].0 = if flip { -magnitude } else { magnitude };
            poly
        })
}

fn node_count() -> impl Strategy<Value = usize> {
    prop_oneof![Just(16usize), Just(32), Just(64)]
}

fn rms(s: &GyrophaseSampling) -> f64 {
    (s.values().iter().map(|v| v * v).sum::<f64>() / s.len() as f64).sqrt()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn average_annihilates_the_gyration_range(
        poly in trig_poly(5),
        n in node_count(),
        b in 0.1..4.0f64,
    ) {
        let derived = apply_L(&poly.sample(n), b);
        prop_assert!(gyroaverage(&derived).abs() <= 1e-12);
    }

    #[test]
    fn derivative_vanishes_on_theta_independent_samples(
        constant in -1.0..1.0f64,
        n in node_count(),
        b in 0.1..4.0f64,
    ) {
        let poly = TrigPoly { constant, harmonics: vec![] };
        let derived = apply_L(&poly.sample(n), b);
        for v in derived.values() {
            prop_assert!(v.abs() <= 1e-13);
        }
    }

    #[test]
    fn derivative_detects_theta_dependence(
        poly in theta_dependent_poly(),
        n in node_count(),
        b in 0.1..4.0f64,
    ) {
        let derived = apply_L(&poly.sample(n), b);
        // rms >= b * k * 0.01 / sqrt(2) for the pinned harmonic
        prop_assert!(rms(&derived) > 1e-4);
    }

    #[test]
    fn average_is_a_projection(
        poly in trig_poly(5),
        n in node_count(),
    ) {
        let mean = gyroaverage(&poly.sample(n));
        let extended = GyrophaseSampling::from_fn(n, |_| mean).unwrap();
        prop_assert!((gyroaverage(&extended) - mean).abs() <= 1e-14);
    }
}

#[test]
fn unit_vectors_average_to_zero() {
    for n in [4usize, 6, 8, 16, 32, 64] {
        for component in 0..2 {
            let w: f64 = (0..n).map(|j| e_w(theta_node(n, j))[component]).sum();
            let t: f64 = (0..n).map(|j| e_theta(theta_node(n, j))[component]).sum();
            assert!(w.abs() / n as f64 <= 1e-14);
            assert!(t.abs() / n as f64 <= 1e-14);
        }
    }
}

fn corrector_setup(nodes: usize) -> (TorusGrid, SpeedGrid, ParallelGrid) {
    let x_grid = TorusGrid::square(TAU, nodes).unwrap();
    let speed = SpeedGrid::new(9, 3.0).unwrap();
    let parallel = ParallelGrid::new(9, 3.0).unwrap();
    (x_grid, speed, parallel)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn corrector_average_is_p_and_solves_the_cell_problem(
        amplitude in 0.1..0.5f64,
        p_amplitude in -0.5..0.5f64,
        b0 in 0.5..2.0f64,
        bump in proptest::option::of(0.05..0.3f64),
        n_theta in prop_oneof![Just(8usize), Just(16)],
    ) {
        let (x_grid, speed, parallel) = corrector_setup(16);
        let f = ReducedDistribution::from_fn(
            &x_grid,
            speed.clone(),
            parallel.clone(),
            Chart::W,
            |x, w, v| (1.0 + amplitude * x[0].sin() * (2.0 * x[1]).cos())
                * (-w * w - v * v).exp(),
        );
        let p = ReducedDistribution::from_fn(
            &x_grid,
            speed,
            parallel,
            Chart::W,
            |x, w, v| p_amplitude * x[1].cos() * (-0.5 * (w * w + v * v)).exp(),
        );
        let phi = ScalarField::from_fn(&x_grid, |x| {
            amplitude * (x[0].cos() + (x[0] + x[1]).sin())
        });
        let model = match bump {
            None => MagneticFieldModel::Uniform { b0 },
            Some(amplitude) => MagneticFieldModel::PeriodicBump {
                b0,
                amplitude,
                lengths: [x_grid.lengths()[0], x_grid.lengths()[1]],
            },
        };

        let f1 = construct_f1(&f, &phi, &model, &p, n_theta, 1e-8).unwrap();

        // Π f₁ = P pointwise: Π e_θ = 0 on the even uniform grid.
        let averaged = f1.gyroaverage();
        for (a, b) in averaged.values().iter().zip(p.values()) {
            prop_assert!((a - b).abs() <= 1e-13);
        }

        // 𝓛 f₁ = e_w·G pointwise: the b factors cancel, and θ enters
        // only through degree-one trig, differentiated exactly.
        let g = vector_G(&f, &phi).unwrap();
        let rhs = e_w_projection(&g, n_theta).unwrap();
        let lhs = f1.apply_L(&model);
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for (a, b) in lhs.values().iter().zip(rhs.values()) {
            worst = worst.max((a - b).abs());
            scale = scale.max(b.abs());
        }
        prop_assert!(worst <= 1e-12 * scale.max(1.0));
    }
}
