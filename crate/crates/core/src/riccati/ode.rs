//! Fixed-step RK4 integration of matrix ODEs backward from a terminal condition.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::TimeGrid;

/// Magnitude beyond which a path is declared to escape.
pub const ESCAPE_BOUND: f64 = 1e12;

#[derive(Clone, Debug, PartialEq)]
pub struct MatrixPath {
    pub grid: TimeGrid,
    pub values: Vec<DMatrix<f64>>,
}

impl MatrixPath {
    pub fn constant(grid: TimeGrid, m: DMatrix<f64>) -> Self {
        MatrixPath { grid, values: vec![m; grid.len()] }
    }

    pub fn at(&self, k: usize) -> &DMatrix<f64> {
        &self.values[k]
    }

    pub fn initial(&self) -> &DMatrix<f64> {
        &self.values[0]
    }

    pub fn terminal(&self) -> &DMatrix<f64> {
        &self.values[self.values.len() - 1]
    }

    /// Linear interpolation between grid points; clamps outside `[0, T]`.
    pub fn interp(&self, t: f64) -> DMatrix<f64> {
        let (k, w) = locate(&self.grid, t);
        if w == 0.0 {
            self.values[k].clone()
        } else {
            &self.values[k] * (1.0 - w) + &self.values[k + 1] * w
        }
    }

    /// Cubic interpolation through the four nearest grid points.
    pub fn interp_cubic(&self, t: f64) -> DMatrix<f64> {
        let (start, ws) = cubic_stencil(&self.grid, t);
        let mut out = DMatrix::zeros(self.values[0].nrows(), self.values[0].ncols());
        for (i, w) in ws.iter().enumerate().filter(|(_, w)| **w != 0.0) {
            out += &self.values[start + i] * *w;
        }
        out
    }

    pub fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> MatrixPath {
        MatrixPath { grid: self.grid, values: self.values.iter().map(f).collect() }
    }

    /// Entrywise combination of two paths on the same grid.
    pub fn zip_with(&self, other: &MatrixPath, f: impl Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>) -> MatrixPath {
        MatrixPath {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(a, b)).collect(),
        }
    }

    /// Largest Frobenius-norm distance to another path on the same grid.
    pub fn sup_distance(&self, other: &MatrixPath) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorPath {
    pub grid: TimeGrid,
    pub values: Vec<DVector<f64>>,
}

impl VectorPath {
    pub fn constant(grid: TimeGrid, v: DVector<f64>) -> Self {
        VectorPath { grid, values: vec![v; grid.len()] }
    }

    pub fn at(&self, k: usize) -> &DVector<f64> {
        &self.values[k]
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.values[0]
    }

    pub fn interp(&self, t: f64) -> DVector<f64> {
        let (k, w) = locate(&self.grid, t);
        if w == 0.0 {
            self.values[k].clone()
        } else {
            &self.values[k] * (1.0 - w) + &self.values[k + 1] * w
        }
    }

    /// Cubic interpolation through the four nearest grid points.
    pub fn interp_cubic(&self, t: f64) -> DVector<f64> {
        let (start, ws) = cubic_stencil(&self.grid, t);
        let mut out = DVector::zeros(self.values[0].len());
        for (i, w) in ws.iter().enumerate().filter(|(_, w)| **w != 0.0) {
            out += &self.values[start + i] * *w;
        }
        out
    }

    pub fn sup_distance(&self, other: &VectorPath) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max)
    }

    pub(crate) fn from_columns(path: MatrixPath) -> VectorPath {
        VectorPath {
            grid: path.grid,
            values: path.values.into_iter().map(|m| m.column(0).into_owned()).collect(),
        }
    }
}

/// Four-node Lagrange stencil around `t`: first node index and weights.
fn cubic_stencil(grid: &TimeGrid, t: f64) -> (usize, [f64; 4]) {
    let (k, w) = locate(grid, t);
    if grid.steps < 3 {
        return (k, [1.0 - w, w, 0.0, 0.0]);
    }
    let start = k.saturating_sub(1).min(grid.steps - 3);
    let x = (k - start) as f64 + w;
    let mut ws = [1.0; 4];
    for (i, wi) in ws.iter_mut().enumerate() {
        for j in 0..4 {
            if j != i {
                *wi *= (x - j as f64) / (i as f64 - j as f64);
            }
        }
    }
    (start, ws)
}

fn locate(grid: &TimeGrid, t: f64) -> (usize, f64) {
    if t <= 0.0 {
        return (0, 0.0);
    }
    if t >= grid.t_end {
        return (grid.steps, 0.0);
    }
    let x = t / grid.h();
    let k = (x.floor() as usize).min(grid.steps - 1);
    (k, x - k as f64)
}

/// Right-hand side `t, M ↦ dM/dt` of a matrix ODE.
pub trait MatrixOde {
    fn rhs(&self, t: f64, m: &DMatrix<f64>) -> DMatrix<f64>;
}

impl<F: Fn(f64, &DMatrix<f64>) -> DMatrix<f64>> MatrixOde for F {
    fn rhs(&self, t: f64, m: &DMatrix<f64>) -> DMatrix<f64> {
        self(t, m)
    }
}

/// `dM/dt = ρM − LᵀM − M Rt + M G M + W`: the composition of affine and
/// quadratic terms that covers every Riccati flow handled here.
#[derive(Clone, Debug)]
pub struct QuadraticRhs {
    pub rho: f64,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub quad: DMatrix<f64>,
    pub constant: DMatrix<f64>,
}

impl MatrixOde for QuadraticRhs {
    fn rhs(&self, _t: f64, m: &DMatrix<f64>) -> DMatrix<f64> {
        m * self.rho - self.left.transpose() * m - m * &self.right + m * &self.quad * m + &self.constant
    }
}

fn escaped(ms: &[DMatrix<f64>]) -> bool {
    ms.iter().any(|m| m.iter().any(|v| !v.is_finite() || v.abs() > ESCAPE_BOUND))
}

fn axpy_all(base: &[DMatrix<f64>], h: f64, dir: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    base.iter().zip(dir).map(|(b, d)| b + d * h).collect()
}

/// RK4 step of size `h` (negative for backward) from `t`.
fn rk4_step<F>(rhs: &F, t: f64, y: &[DMatrix<f64>], h: f64) -> Vec<DMatrix<f64>>
where
    F: Fn(f64, &[DMatrix<f64>]) -> Vec<DMatrix<f64>>,
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &axpy_all(y, 0.5 * h, &k1));
    let k3 = rhs(t + 0.5 * h, &axpy_all(y, 0.5 * h, &k2));
    let k4 = rhs(t + h, &axpy_all(y, h, &k3));
    y.iter()
        .enumerate()
        .map(|(i, yi)| yi + (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (h / 6.0))
        .collect()
}

/// Integrates a system of matrix ODEs backward from `terminal` at `t = T` to 0.
/// Returns one path per component.
pub fn integrate_system_backward<F>(
    terminal: Vec<DMatrix<f64>>,
    rhs: F,
    grid: TimeGrid,
    label: &str,
) -> Result<Vec<MatrixPath>>
where
    F: Fn(f64, &[DMatrix<f64>]) -> Vec<DMatrix<f64>>,
{
    let h = grid.h();
    let m = terminal.len();
    let mut out: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(grid.len()); m];
    let mut y = terminal;
    for (i, yi) in y.iter().enumerate() {
        out[i].push(yi.clone());
    }
    for k in (0..grid.steps).rev() {
        let t = grid.time(k + 1);
        y = rk4_step(&rhs, t, &y, -h);
        if escaped(&y) {
            return Err(Error::FiniteEscape { what: label.to_string(), t: grid.time(k) });
        }
        for (i, yi) in y.iter().enumerate() {
            out[i].push(yi.clone());
        }
    }
    Ok(out
        .into_iter()
        .map(|mut v| {
            v.reverse();
            MatrixPath { grid, values: v }
        })
        .collect())
}

/// Forward counterpart of [`integrate_system_backward`], from `t = 0`.
pub fn integrate_system_forward<F>(
    initial: Vec<DMatrix<f64>>,
    rhs: F,
    grid: TimeGrid,
    label: &str,
) -> Result<Vec<MatrixPath>>
where
    F: Fn(f64, &[DMatrix<f64>]) -> Vec<DMatrix<f64>>,
{
    let h = grid.h();
    let m = initial.len();
    let mut out: Vec<Vec<DMatrix<f64>>> = vec![Vec::with_capacity(grid.len()); m];
    let mut y = initial;
    for (i, yi) in y.iter().enumerate() {
        out[i].push(yi.clone());
    }
    for k in 0..grid.steps {
        y = rk4_step(&rhs, grid.time(k), &y, h);
        if escaped(&y) {
            return Err(Error::FiniteEscape { what: label.to_string(), t: grid.time(k + 1) });
        }
        for (i, yi) in y.iter().enumerate() {
            out[i].push(yi.clone());
        }
    }
    Ok(out.into_iter().map(|v| MatrixPath { grid, values: v }).collect())
}

/// Backward RK4 for a single matrix Riccati ODE.
pub fn integrate_matrix_dre(terminal: DMatrix<f64>, rhs: &dyn MatrixOde, grid: TimeGrid) -> Result<MatrixPath> {
    let mut paths = integrate_system_backward(vec![terminal], |t, y| vec![rhs.rhs(t, &y[0])], grid, "matrix DRE")?;
    Ok(paths.remove(0))
}

/// Backward RK4 for `ṡ = ρ s − coeff(t)ᵀ s − forcing(t)`, i.e. the affine costate
/// equation `ρ s = ṡ + coeff(t)ᵀ s + forcing(t)`.
pub fn integrate_affine_backward(
    terminal: DVector<f64>,
    rho: f64,
    coeff: &dyn Fn(f64) -> DMatrix<f64>,
    forcing: &dyn Fn(f64) -> DVector<f64>,
    grid: TimeGrid,
) -> Result<VectorPath> {
    let n = terminal.len();
    let term = DMatrix::from_column_slice(n, 1, terminal.as_slice());
    let mut paths = integrate_system_backward(
        vec![term],
        |t, y| {
            let s = &y[0];
            let f = forcing(t);
            vec![s * rho - coeff(t).transpose() * s - DMatrix::from_column_slice(n, 1, f.as_slice())]
        },
        grid,
        "affine costate",
    )?;
    Ok(VectorPath::from_columns(paths.remove(0)))
}

/// Fourth-order centered difference `(−y₊₂ + 8y₊₁ − 8y₋₁ + y₋₂)/(12h)` at
/// interior points `2..=steps−2`; `None` elsewhere.
pub fn centered_derivative(values: &[DMatrix<f64>], h: f64) -> Vec<Option<DMatrix<f64>>> {
    let m = values.len();
    (0..m)
        .map(|k| {
            if k < 2 || k + 2 >= m {
                None
            } else {
                Some((&values[k - 2] - &values[k + 2] + (&values[k + 1] - &values[k - 1]) * 8.0) / (12.0 * h))
            }
        })
        .collect()
}
