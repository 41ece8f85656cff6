//! Periodic tensor grids on the 2- or 3-torus and the spectral machinery on them.
//!
//! Storage is a flat `Vec<f64>` with axis 0 fastest:
//! `idx = i0 + N0*(i1 + N1*i2)`.  Node coordinates are `x_a = i_a * L_a / N_a`;
//! the point `x_a = L_a` is identified with `0` and not stored.
//!
//! Fourier conventions: mode index `m` on an axis with `N` nodes maps to the
//! signed integer `m` for `m <= N/2` and `m - N` above, giving the wavenumber
//! `k = 2*pi*m_signed / L`.  Spectral derivatives zero the Nyquist mode `m = N/2`
//! (its sign is ambiguous for real data); inverse-Laplacian weights keep it.

use crate::error::{Error, Result};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::io::Write;
use std::sync::Arc;

pub const TAU: f64 = std::f64::consts::TAU;

#[derive(Debug, Clone, PartialEq)]
pub struct TorusGrid {
    lengths: Vec<f64>,
    nodes: Vec<usize>,
}

impl TorusGrid {
    /// Periodic grid with the given box lengths and per-axis node counts.
    /// Node counts must be powers of two and at least 8.
    pub fn new(lengths: &[f64], nodes: &[usize]) -> Result<Self> {
        if lengths.len() != nodes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} lengths vs {} node counts",
                lengths.len(),
                nodes.len()
            )));
        }
        let dim = lengths.len();
        if dim < 2 || dim > 3 {
            return Err(Error::InvalidParameter(format!(
                "grid dimension must be 2 or 3, got {dim}"
            )));
        }
        for (a, &l) in lengths.iter().enumerate() {
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "length on axis {a} must be positive and finite, got {l}"
                )));
            }
        }
        for (a, &n) in nodes.iter().enumerate() {
            if n < 8 || !n.is_power_of_two() {
                return Err(Error::InvalidParameter(format!(
                    "node count on axis {a} must be a power of two >= 8, got {n}"
                )));
            }
        }
        Ok(Self { lengths: lengths.to_vec(), nodes: nodes.to_vec() })
    }

    /// Square 2D torus `[0, length)^2` with `n` nodes per axis.
    pub fn square(length: f64, n: usize) -> Result<Self> {
        Self::new(&[length, length], &[n, n])
    }

    /// Cubic 3D torus `[0, length)^3` with `n` nodes per axis.
    pub fn cube(length: f64, n: usize) -> Result<Self> {
        Self::new(&[length, length, length], &[n, n, n])
    }

    pub fn dim(&self) -> usize {
        self.lengths.len()
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.nodes.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.lengths[axis] / self.nodes[axis] as f64
    }

    /// Volume (or area) of one grid cell.
    pub fn cell_volume(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).product()
    }

    /// Total volume of the torus.
    pub fn volume(&self) -> f64 {
        self.lengths.iter().product()
    }

    pub fn coord(&self, axis: usize, i: usize) -> f64 {
        i as f64 * self.spacing(axis)
    }

    pub fn stride(&self, axis: usize) -> usize {
        self.nodes[..axis].iter().product()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        debug_assert_eq!(multi.len(), self.dim());
        let mut idx = 0;
        for a in (0..self.dim()).rev() {
            idx = idx * self.nodes[a] + multi[a];
        }
        idx
    }

    /// Multi-index of a flat index, written into `out`.
    pub fn multi_index(&self, mut flat: usize, out: &mut [usize]) {
        for a in 0..self.dim() {
            out[a] = flat % self.nodes[a];
            flat /= self.nodes[a];
        }
    }

    /// Node position of a flat index, written into `out`.
    pub fn position(&self, flat: usize, out: &mut [f64]) {
        let mut rest = flat;
        for a in 0..self.dim() {
            out[a] = (rest % self.nodes[a]) as f64 * self.spacing(a);
            rest /= self.nodes[a];
        }
    }

    /// Signed mode integer for index `m` on `axis`.
    pub fn mode(&self, axis: usize, m: usize) -> i64 {
        let n = self.nodes[axis];
        if m <= n / 2 {
            m as i64
        } else {
            m as i64 - n as i64
        }
    }

    /// Wavenumber `2*pi*mode/L` for index `m` on `axis`.
    pub fn wavenumber(&self, axis: usize, m: usize) -> f64 {
        TAU * self.mode(axis, m) as f64 / self.lengths[axis]
    }

    /// Wrap a coordinate into `[0, L)` on `axis`.
    pub fn wrap(&self, axis: usize, x: f64) -> f64 {
        let l = self.lengths[axis];
        let y = x % l;
        if y < 0.0 {
            y + l
        } else {
            y
        }
    }
}

/// Real scalar field sampled on a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: TorusGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: &TorusGrid) -> Self {
        Self { grid: grid.clone(), values: vec![0.0; grid.len()] }
    }

    pub fn from_values(grid: &TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        Ok(Self { grid: grid.clone(), values })
    }

    /// Sample `f` at every node; the closure receives the node position
    /// (slice of length `grid.dim()`).
    pub fn from_fn(grid: &TorusGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let mut values = vec![0.0; grid.len()];
        let mut pos = [0.0; 3];
        let d = grid.dim();
        for (i, v) in values.iter_mut().enumerate() {
            grid.position(i, &mut pos);
            *v = f(&pos[..d]);
        }
        Self { grid: grid.clone(), values }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Integral over the torus (node sum times cell volume; spectrally exact
    /// for smooth periodic data).
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn add_scalar(&mut self, c: f64) {
        for v in &mut self.values {
            *v += c;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Write `x0,x1[,x2],value` rows with a header line.
    pub fn export_csv(&self, path: &std::path::Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        match self.grid.dim() {
            2 => writeln!(out, "x0,x1,value")?,
            _ => writeln!(out, "x0,x1,x2,value")?,
        }
        let d = self.grid.dim();
        let mut pos = [0.0; 3];
        for (i, v) in self.values.iter().enumerate() {
            self.grid.position(i, &mut pos);
            for p in &pos[..d] {
                write!(out, "{p},")?;
            }
            writeln!(out, "{v}")?;
        }
        Ok(())
    }

    /// Write `<stem>.f64` (little-endian f64, axis 0 fastest) plus a
    /// `<stem>.json` header describing the layout.
    pub fn export_raw(&self, stem: &std::path::Path) -> Result<()> {
        let mut raw = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(stem.with_extension("f64"), raw)?;
        let header = serde_json::json!({
            "dimension": self.grid.dim(),
            "lengths": self.grid.lengths(),
            "nodes": self.grid.nodes(),
            "count": self.values.len(),
            "dtype": "f64-le",
            "order": "axis0-fastest",
        });
        std::fs::write(
            stem.with_extension("json"),
            serde_json::to_string_pretty(&header)?,
        )?;
        Ok(())
    }
}

/// Real vector field on a [`TorusGrid`]; one flat array per component.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    grid: TorusGrid,
    components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: &TorusGrid, components: usize) -> Self {
        Self {
            grid: grid.clone(),
            components: vec![vec![0.0; grid.len()]; components],
        }
    }

    pub fn from_components(grid: &TorusGrid, components: Vec<Vec<f64>>) -> Result<Self> {
        for c in &components {
            if c.len() != grid.len() {
                return Err(Error::ShapeMismatch(format!(
                    "component of {} values for a grid of {} nodes",
                    c.len(),
                    grid.len()
                )));
            }
        }
        Ok(Self { grid: grid.clone(), components })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn component(&self, i: usize) -> &[f64] {
        &self.components[i]
    }

    pub fn component_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.components[i]
    }

    /// Integral of |field|^2 over the torus.
    pub fn l2_squared(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.grid.len() {
            let mut s = 0.0;
            for c in &self.components {
                s += c[i] * c[i];
            }
            acc += s;
        }
        acc * self.grid.cell_volume()
    }

    pub fn all_finite(&self) -> bool {
        self.components.iter().all(|c| c.iter().all(|v| v.is_finite()))
    }
}

/// FFT workspace bound to one grid shape.  Plans are cached per axis length;
/// every public method is deterministic (fixed lane order, fixed reduction
/// order), so repeated calls are bit-identical.
pub struct Spectral {
    grid: TorusGrid,
    planner: FftPlanner<f64>,
    lane: Vec<Complex64>,
}

impl Spectral {
    pub fn new(grid: &TorusGrid) -> Self {
        Self {
            grid: grid.clone(),
            planner: FftPlanner::new(),
            lane: Vec::new(),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    fn plan(&mut self, n: usize, forward: bool) -> Arc<dyn Fft<f64>> {
        if forward {
            self.planner.plan_fft_forward(n)
        } else {
            self.planner.plan_fft_inverse(n)
        }
    }

    /// In-place FFT along one axis of a flat complex array.
    fn axis_fft(&mut self, data: &mut [Complex64], axis: usize, forward: bool) {
        let n = self.grid.nodes()[axis];
        let stride = self.grid.stride(axis);
        let plan = self.plan(n, forward);
        self.lane.resize(n, Complex64::new(0.0, 0.0));
        let block = stride * n;
        let outer = data.len() / block;
        for o in 0..outer {
            let base = o * block;
            for inner in 0..stride {
                let start = base + inner;
                for j in 0..n {
                    self.lane[j] = data[start + j * stride];
                }
                plan.process(&mut self.lane);
                for j in 0..n {
                    data[start + j * stride] = self.lane[j];
                }
            }
        }
    }

    /// Unnormalized forward transform of real data.
    pub fn forward(&mut self, values: &[f64]) -> Vec<Complex64> {
        assert_eq!(values.len(), self.grid.len(), "field/grid shape mismatch");
        let mut data: Vec<Complex64> =
            values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        for a in 0..self.grid.dim() {
            self.axis_fft(&mut data, a, true);
        }
        data
    }

    /// Inverse transform of `forward` output; returns the real part with the
    /// 1/N normalization applied.
    pub fn inverse_real(&mut self, mut data: Vec<Complex64>) -> Vec<f64> {
        for a in 0..self.grid.dim() {
            self.axis_fft(&mut data, a, false);
        }
        let norm = 1.0 / self.grid.len() as f64;
        data.iter().map(|c| c.re * norm).collect()
    }

    /// Spectral derivative along `axis`; the Nyquist mode is zeroed.
    pub fn derivative_values(&mut self, values: &[f64], axis: usize) -> Vec<f64> {
        let mut data = self.forward(values);
        self.apply_derivative_weights(&mut data, axis);
        self.inverse_real(data)
    }

    fn apply_derivative_weights(&mut self, data: &mut [Complex64], axis: usize) {
        let n = self.grid.nodes()[axis];
        let stride = self.grid.stride(axis);
        let block = stride * n;
        let outer = data.len() / block;
        for o in 0..outer {
            let base = o * block;
            for m in 0..n {
                let w = if m == n / 2 {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, self.grid.wavenumber(axis, m))
                };
                for inner in 0..stride {
                    let i = base + m * stride + inner;
                    data[i] *= w;
                }
            }
        }
    }

    pub fn derivative(&mut self, field: &ScalarField, axis: usize) -> ScalarField {
        assert_eq!(field.grid(), &self.grid, "field/grid shape mismatch");
        let values = self.derivative_values(field.values(), axis);
        ScalarField { grid: self.grid.clone(), values }
    }

    /// |k|^2 for the flat spectral index.
    pub fn k_squared(&self, flat: usize) -> f64 {
        let mut rest = flat;
        let mut k2 = 0.0;
        for a in 0..self.grid.dim() {
            let m = rest % self.grid.nodes()[a];
            rest /= self.grid.nodes()[a];
            let k = self.grid.wavenumber(a, m);
            k2 += k * k;
        }
        k2
    }
}
