//! Drift-kinetic limit toolkit for strongly magnetized plasmas.
//!
//! The crate covers both sides of the gyrokinetic reduction of the scaled
//! Vlasov-Poisson system with out-of-plane field `b(x_perp)/eps`:
//!
//! * the full kinetic side: particle ensembles pushed in fast time
//!   `s = t/eps` with a Boris integrator and a spectral Poisson solve
//!   ([`kinetic`]);
//! * the reduced side: gyroaveraged distributions `F(x, w, v_par)`
//!   transported by electric and magnetic drifts ([`guiding_center`]), with
//!   the gyrophase algebra and first-order correction `f_1` in [`gyro`];
//! * the glue: grids and spectral calculus ([`grid`]), field models
//!   ([`fields`]), the Poisson solver ([`poisson`]), run diagnostics
//!   ([`diagnostics`]), and scenario configuration ([`config`], [`scenario`]).

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fields;
pub mod grid;
pub mod guiding_center;
pub mod gyro;
pub mod kinetic;
pub mod poisson;
pub mod reduced;
pub mod scenario;

pub use error::{Error, Result};
pub use fields::{epsilon_from_scales, perp, MagneticFieldModel, ScalingParameters};
pub use grid::{ScalarField, Spectral, TorusGrid, VectorField};
pub use reduced::{Chart, MaxwellianProfile, ParallelGrid, ReducedDistribution, SpeedGrid};
