//! Spectral solvability tests: c-splitting of the block matrices and the
//! determinant characterization of bounded `Π_N`.

use nalgebra::{Complex, DMatrix};
use serde::Serialize;

use super::are::{solve_are, AreDescriptor};
use super::equations::{self, k_parts, SystemConstants};
use super::ode::{self, MatrixPath};
use super::p_equation_blocks;
use crate::error::Result;
use crate::linalg;
use crate::model::{ScenarioConfig, TimeGrid};

/// Eigenvalues with `|Re λ| ≤ AXIS_TOL` count as imaginary-axis eigenvalues.
pub const AXIS_TOL: f64 = 1e-8;
/// Threshold for the A2 determinant test.
pub const DET_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum MatrixTag {
    /// Nash-game block matrix for general `Γ`.
    MGamma,
    /// Nash-game block matrix with `Γ = I`.
    MI,
    /// Social block matrix.
    MHatGamma,
    /// The `Π_N` flow generator built from the stationary `K_N`.
    CalA,
}

impl MatrixTag {
    pub fn name(&self) -> &'static str {
        match self {
            MatrixTag::MGamma => "M_Gamma",
            MatrixTag::MI => "M_I",
            MatrixTag::MHatGamma => "M_hat_Gamma",
            MatrixTag::CalA => "calA",
        }
    }
}

/// How `ρ/2` enters the diagonal blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ShiftConvention {
    /// `Â` already carries `−ρ/2·I`; no further shift. Spectrally equivalent to
    /// the Hamiltonian of the `P` equation.
    #[default]
    Single,
    /// A second `∓ρ/2·I` on the diagonal blocks, `[[Â − ρ/2, G], [Ĉ + W, −Âᵀ + ρ/2]]`.
    Double,
}

#[derive(Clone, Debug, Serialize)]
pub struct SplittingReport {
    pub matrix_tag: MatrixTag,
    #[serde(skip)]
    pub eigenvalues: Vec<Complex<f64>>,
    pub left_count: usize,
    pub right_count: usize,
    pub axis_count: usize,
    pub passes: bool,
}

impl SplittingReport {
    /// Classifies a spectrum of a `2n × 2n` matrix.
    pub fn classify(matrix_tag: MatrixTag, eigenvalues: Vec<Complex<f64>>) -> Self {
        let n2 = eigenvalues.len();
        let axis_count = eigenvalues.iter().filter(|z| z.re.abs() <= AXIS_TOL).count();
        let left_count = eigenvalues.iter().filter(|z| z.re < -AXIS_TOL).count();
        let right_count = n2 - axis_count - left_count;
        let passes = axis_count == 0 && left_count == right_count;
        SplittingReport { matrix_tag, eigenvalues, left_count, right_count, axis_count, passes }
    }
}

impl std::fmt::Display for SplittingReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}: left {}, right {}, axis {} ({})",
            self.matrix_tag.name(),
            self.left_count,
            self.right_count,
            self.axis_count,
            if self.passes { "splits" } else { "does not split" }
        )
    }
}

fn block(ul: &DMatrix<f64>, ur: &DMatrix<f64>, ll: &DMatrix<f64>, lr: &DMatrix<f64>) -> DMatrix<f64> {
    let n = ul.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(ul);
    m.view_mut((0, n), (n, n)).copy_from(ur);
    m.view_mut((n, 0), (n, n)).copy_from(ll);
    m.view_mut((n, n), (n, n)).copy_from(lr);
    m
}

fn stationary_k(cfg: &ScenarioConfig, sc: &SystemConstants) -> Result<DMatrix<f64>> {
    let sol = solve_are(&AreDescriptor::Stochastic {
        a: cfg.a.clone(),
        b: cfg.b.clone(),
        c: cfg.c.clone(),
        d: cfg.d.clone(),
        r: cfg.r.clone(),
        rho: cfg.rho,
        w: sc.w_k.clone(),
    })?;
    Ok(sol.x)
}

/// Builds the block matrix named by `tag`.
pub fn splitting_matrix(cfg: &ScenarioConfig, tag: MatrixTag, conv: ShiftConvention) -> Result<DMatrix<f64>> {
    let n = cfg.n();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut cfg = cfg.clone();
    if tag == MatrixTag::MI {
        cfg.gamma = eye.clone();
    }
    let sc = match tag {
        MatrixTag::MHatGamma => equations::social_constants(&cfg),
        _ => equations::game_constants(&cfg),
    };
    let k = stationary_k(&cfg, &sc)?;
    if tag == MatrixTag::CalA {
        let kp = k_parts(&cfg, &k);
        let abar = &cfg.a - &cfg.b * &kp.ups_inv * &kp.s - &eye * (0.5 * cfg.rho);
        let g = &cfg.b * &kp.ups_inv * cfg.b.transpose();
        return Ok(block(&abar, &(-g), &sc.c_pi, &(-abar.transpose())));
    }
    let (a_hat, g, w) = p_equation_blocks(&cfg, &k, &sc.w_p());
    let shift = match conv {
        ShiftConvention::Single => 0.0,
        ShiftConvention::Double => 0.5 * cfg.rho,
    };
    Ok(block(&(&a_hat - &eye * shift), &g, &w, &(-a_hat.transpose() + &eye * shift)))
}

/// c-splitting test with the default shift convention.
pub fn check_c_splitting(cfg: &ScenarioConfig, which: MatrixTag) -> Result<SplittingReport> {
    check_c_splitting_with(cfg, which, ShiftConvention::Single)
}

pub fn check_c_splitting_with(cfg: &ScenarioConfig, which: MatrixTag, conv: ShiftConvention) -> Result<SplittingReport> {
    let m = splitting_matrix(cfg, which, conv)?;
    Ok(SplittingReport::classify(which, linalg::eigenvalues(&m)))
}

#[derive(Clone, Debug, Serialize)]
pub struct A2Report {
    pub passes: bool,
    pub min_det: f64,
    /// `(t, det)` at every grid point, from `t = T` down to 0.
    #[serde(skip)]
    pub dets: Vec<(f64, f64)>,
    /// Largest `t` at which the determinant first drops to `DET_TOL` or below.
    pub first_failure: Option<f64>,
}

/// Determinant test for bounded `Π_N` on `[0, T]`. The generator is frozen on
/// each cell at the cell-midpoint `K_N`, and the propagator is accumulated from
/// `t = T` backwards.
pub fn check_a2_determinant(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<A2Report> {
    let n = cfg.n();
    let eye = DMatrix::<f64>::identity(n, n);
    let sc = equations::game_constants(cfg);
    let k_path: MatrixPath = ode::integrate_system_backward(
        vec![DMatrix::zeros(n, n)],
        |_t, y| vec![equations::k_dot(cfg, &y[0], &sc.w_k)],
        grid,
        "K_N",
    )?
    .remove(0);
    let h = grid.h();
    let mut phi = DMatrix::<f64>::identity(2 * n, 2 * n);
    let lower_det = |phi: &DMatrix<f64>| phi.view((n, n), (n, n)).into_owned().determinant();
    let mut dets = vec![(grid.t_end, 1.0)];
    for j in (0..grid.steps).rev() {
        let k_mid = (k_path.at(j) + k_path.at(j + 1)) * 0.5;
        let kp = k_parts(cfg, &k_mid);
        let abar = &cfg.a - &cfg.b * &kp.ups_inv * &kp.s - &eye * (0.5 * cfg.rho);
        let g = &cfg.b * &kp.ups_inv * cfg.b.transpose();
        let gen = block(&abar, &(-g), &sc.c_pi, &(-abar.transpose()));
        phi = &phi * (gen * h).exp();
        // keep the propagator at unit scale; only the sign and the relative size matter
        let scale = phi.norm();
        if !scale.is_finite() {
            dets.push((grid.time(j), f64::NAN));
            break;
        }
        dets.push((grid.time(j), lower_det(&phi)));
    }
    let min_det = dets.iter().map(|d| d.1).fold(f64::INFINITY, |a, b| if b.is_nan() { f64::NEG_INFINITY } else { a.min(b) });
    let first_failure = dets.iter().find(|d| !(d.1 > DET_TOL)).map(|d| d.0);
    Ok(A2Report { passes: min_det > DET_TOL, min_det, dets, first_failure })
}
