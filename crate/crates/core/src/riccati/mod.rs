//! Differential and algebraic Riccati equations for every strategy family,
//! plus the spectral solvability tests.

pub mod are;
pub mod equations;
pub mod ode;
pub mod splitting;

use nalgebra::{DMatrix, DVector};

pub use are::{solve_are, AreDescriptor, AreMethod, AreSolution};
pub use ode::{integrate_affine_backward, integrate_matrix_dre, MatrixOde, MatrixPath, QuadraticRhs, VectorPath};
pub use splitting::{check_a2_determinant, check_c_splitting, check_c_splitting_with, A2Report, MatrixTag, ShiftConvention, SplittingReport};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{ScenarioConfig, StrategyFamily, TimeGrid};
use equations::{k_parts, SystemConstants};

/// The six heterogeneous paths: dominant agent `1` and representative follower `j`.
#[derive(Clone, Debug)]
pub struct HeteroPaths {
    pub k1: MatrixPath,
    pub pi11: MatrixPath,
    pub pi1j: MatrixPath,
    pub kj: MatrixPath,
    pub pij1: MatrixPath,
    pub pijj: MatrixPath,
    pub upsilon1: MatrixPath,
    pub upsilonj: MatrixPath,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct CoupledPaths {
    pub k: MatrixPath,
    pub pi: MatrixPath,
    pub s: VectorPath,
}

/// Mean-field fixed point `φ = Πx̄ + s` with the residuals of its two ODEs.
#[derive(Clone, Debug)]
pub struct FixedPointCheck {
    pub phi: VectorPath,
    pub xbar: VectorPath,
    /// Max residual of the `φ` equation, including its `σ` channel term.
    pub residual_phi: f64,
    /// Max residual of the `x̄` equation when its control term uses `Υ⁻¹` (and `DᵀKσ`).
    pub residual_xbar_upsilon: f64,
    /// Same with `R⁻¹` and no `DᵀKσ` term.
    pub residual_xbar_rinv: f64,
}

/// Solution set of one strategy family on a time grid. Infinite-horizon
/// families replicate their constants across the grid and also keep `P`.
#[derive(Clone, Debug)]
pub struct RiccatiBundle {
    pub family: StrategyFamily,
    pub grid: TimeGrid,
    pub k: MatrixPath,
    pub pi: Option<MatrixPath>,
    pub p: Option<DMatrix<f64>>,
    pub s: VectorPath,
    pub hetero: Option<HeteroPaths>,
    pub coupled: Option<CoupledPaths>,
    pub upsilon: MatrixPath,
    pub fixed_point: Option<FixedPointCheck>,
    /// ARE solutions for `K` and `P` (infinite horizon only).
    pub are: Vec<(String, AreSolution)>,
}

impl RiccatiBundle {
    /// The matrix multiplying the propagated mean: `Π`, or `P − K`.
    pub fn mean_weight(&self) -> MatrixPath {
        match (&self.pi, &self.p) {
            (Some(pi), _) => pi.clone(),
            (None, Some(p)) => self.k.map(|k| p - k),
            _ => self.k.map(|k| DMatrix::zeros(k.nrows(), k.ncols())),
        }
    }

    /// `P = K + Π` along the grid.
    pub fn p_path(&self) -> MatrixPath {
        match &self.p {
            Some(p) => MatrixPath::constant(self.grid, p.clone()),
            None => self.k.zip_with(&self.mean_weight(), |k, pi| k + pi),
        }
    }
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn require_homogeneous(cfg: &ScenarioConfig) -> Result<()> {
    if cfg.is_homogeneous() {
        Ok(())
    } else {
        Err(Error::InvalidScenario("this family requires weights 1/N".into()))
    }
}

fn upsilon_path(cfg: &ScenarioConfig, k: &MatrixPath) -> Result<MatrixPath> {
    let ups = k.map(|k| &cfg.r + cfg.d.transpose() * k * &cfg.d);
    let scale = cfg.r.norm().max(f64::MIN_POSITIVE);
    for (i, u) in ups.values.iter().enumerate() {
        if ups.grid.steps > 0 && linalg::min_sym_eigenvalue(u) <= 1e-10 * scale {
            return Err(Error::SingularUpsilon { t: ups.grid.time(i) });
        }
    }
    Ok(ups)
}

fn bundle(family: StrategyFamily, grid: TimeGrid, k: MatrixPath, pi: Option<MatrixPath>, s: VectorPath, upsilon: MatrixPath) -> RiccatiBundle {
    RiccatiBundle { family, grid, k, pi, p: None, s, hetero: None, coupled: None, upsilon, fixed_point: None, are: Vec::new() }
}

fn solve_kps_finite(
    cfg: &ScenarioConfig,
    grid: TimeGrid,
    sc: &SystemConstants,
    family: StrategyFamily,
    label: &str,
) -> Result<RiccatiBundle> {
    let n = cfg.n();
    let terminal = vec![DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, 1)];
    let rhs = |t: f64, y: &[DMatrix<f64>]| {
        let kp = k_parts(cfg, &y[0]);
        let s = y[2].column(0).into_owned();
        vec![
            equations::k_dot(cfg, &y[0], &sc.w_k),
            equations::pi_dot(cfg, &kp, &y[1], &sc.c_pi),
            col(&equations::s_dot(cfg, &y[0], &kp, &y[1], &s, &sc.eta_weight, t)),
        ]
    };
    let mut paths = ode::integrate_system_backward(terminal, rhs, grid, label)?.into_iter();
    let k = paths.next().unwrap();
    let pi = paths.next().unwrap();
    let s = VectorPath::from_columns(paths.next().unwrap());
    let ups = upsilon_path(cfg, &k)?;
    Ok(bundle(family, grid, k, Some(pi), s, ups))
}

/// Homogeneous finite-horizon Nash game: `K_N`, `Π_N`, `s_N`.
pub fn solve_game_finite(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<RiccatiBundle> {
    require_homogeneous(cfg)?;
    solve_kps_finite(cfg, grid, &equations::game_constants(cfg), StrategyFamily::GameHomogeneousFinite, "Pi_N (A2 fails)")
}

/// Finite-horizon social problem: `K̂_N`, `Π̂_N`, `ŝ_N`.
pub fn solve_social_finite(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<RiccatiBundle> {
    require_homogeneous(cfg)?;
    solve_kps_finite(cfg, grid, &equations::social_constants(cfg), StrategyFamily::SocialFinite, "social Riccati system").map_err(
        |e| match e {
            Error::FiniteEscape { what, t } => {
                Error::Numerical(format!("{what} escaped at t = {t}; social Riccati flows must stay bounded"))
            }
            e => e,
        },
    )
}

fn propagate_fixed_point(cfg: &ScenarioConfig, b: &RiccatiBundle) -> Result<FixedPointCheck> {
    let grid = b.grid;
    let n = cfg.n();
    let h = grid.h();
    let pi = b.pi.as_ref().expect("finite classical bundle has Pi");
    // x̄̇ = (A − BΥ⁻¹(S + BᵀΠ))x̄ − BΥ⁻¹(Bᵀs + DᵀKσ) + f
    let drift = |t: f64, x: &DMatrix<f64>| {
        let k = b.k.interp_cubic(t);
        let p = pi.interp_cubic(t);
        let s = b.s.interp_cubic(t);
        let kp = k_parts(cfg, &k);
        let ui = &kp.ups_inv;
        let xv = x.column(0).into_owned();
        let v = (&cfg.a - &cfg.b * ui * (&kp.s + cfg.b.transpose() * &p)) * &xv
            - &cfg.b * ui * (cfg.b.transpose() * &s + cfg.d.transpose() * &k * cfg.sigma.eval(t))
            + cfg.f.eval(t);
        col(&v)
    };
    let xbar = ode::integrate_system_forward(vec![col(&cfg.x0_mean)], |t, y| vec![drift(t, &y[0])], grid, "mean-field mean")?;
    let xbar = VectorPath::from_columns(xbar.into_iter().next().unwrap());
    let phi = VectorPath {
        grid,
        values: (0..grid.len()).map(|k| pi.at(k) * xbar.at(k) + b.s.at(k)).collect(),
    };
    let phi_m: Vec<DMatrix<f64>> = phi.values.iter().map(col).collect();
    let x_m: Vec<DMatrix<f64>> = xbar.values.iter().map(col).collect();
    let dphi = ode::centered_derivative(&phi_m, h);
    let dx = ode::centered_derivative(&x_m, h);
    let rinv = cfg.r.clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(cfg.r.nrows(), cfg.r.ncols()));
    let (mut r_phi, mut r_ups, mut r_rinv) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..grid.len() {
        let (Some(dp), Some(dxk)) = (&dphi[k], &dx[k]) else { continue };
        let t = grid.time(k);
        let kk = b.k.at(k);
        let kp = k_parts(cfg, kk);
        let abar = &cfg.a - &cfg.b * &kp.ups_inv * &kp.s;
        let eye = DMatrix::<f64>::identity(n, n);
        let ph = phi.at(k);
        let xb = xbar.at(k);
        let f = cfg.f.eval(t);
        // the σ channel term matches the strategy's DᵀKσ feedthrough
        let sig = cfg.c.transpose() - kp.s.transpose() * &kp.ups_inv * cfg.d.transpose();
        let rhs_phi = -(&abar - &eye * cfg.rho).transpose() * ph - kk * &f - sig * kk * cfg.sigma.eval(t)
            + &cfg.q * (&cfg.gamma * xb + cfg.eta.eval(t));
        let scale = 1.0 + ph.norm();
        r_phi = r_phi.max((dp.column(0) - rhs_phi).norm() / scale);
        let feed = &abar * xb + &f;
        let x_ups = &feed - &cfg.b * &kp.ups_inv * (cfg.b.transpose() * ph + cfg.d.transpose() * kk * cfg.sigma.eval(t));
        let x_rinv = &feed - &cfg.b * &rinv * cfg.b.transpose() * ph;
        let xs = 1.0 + xb.norm();
        r_ups = r_ups.max((dxk.column(0) - x_ups).norm() / xs);
        r_rinv = r_rinv.max((dxk.column(0) - x_rinv).norm() / xs);
    }
    Ok(FixedPointCheck { phi, xbar, residual_phi: r_phi, residual_xbar_upsilon: r_ups, residual_xbar_rinv: r_rinv })
}

/// Classical mean-field baseline (`N → ∞`). Finite horizon integrates `K`, `Π`, `s`
/// and checks the fixed-point system; infinite horizon solves the AREs.
pub fn solve_classical_mf(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<RiccatiBundle> {
    let sc = equations::classical_constants(cfg);
    if cfg.horizon.is_infinite() {
        return solve_kps_infinite(cfg, grid, &sc, StrategyFamily::ClassicalMeanField, "classical mean-field ARE");
    }
    let mut b = solve_kps_finite(cfg, grid, &sc, StrategyFamily::ClassicalMeanField, "classical Pi")?;
    b.fixed_point = Some(propagate_fixed_point(cfg, &b)?);
    Ok(b)
}

/// Stationary costate offset `(ρI − Mᵀ)s = LᵀKσ + Pf − Wη·η` for constant inputs.
fn stationary_s(cfg: &ScenarioConfig, k: &DMatrix<f64>, pi: &DMatrix<f64>, sc: &SystemConstants, t: f64) -> Option<DVector<f64>> {
    let n = cfg.n();
    let kp = k_parts(cfg, k);
    let (mt, lt) = equations::s_coefficients(cfg, &kp, pi);
    let forcing = equations::s_forcing(k, pi, &lt, &sc.eta_weight, &cfg.f.eval(t), &cfg.sigma.eval(t), &cfg.eta.eval(t));
    let m = DMatrix::identity(n, n) * cfg.rho - mt;
    m.lu().solve(&forcing)
}

fn solve_kps_infinite(
    cfg: &ScenarioConfig,
    grid: TimeGrid,
    sc: &SystemConstants,
    family: StrategyFamily,
    assumption: &str,
) -> Result<RiccatiBundle> {
    let n = cfg.n();
    let fail = |what: &str, e: Error| Error::NoStabilizingSolution(format!("{assumption} fails for {what}: {e}"));
    let k_sol = solve_are(&AreDescriptor::Stochastic {
        a: cfg.a.clone(),
        b: cfg.b.clone(),
        c: cfg.c.clone(),
        d: cfg.d.clone(),
        r: cfg.r.clone(),
        rho: cfg.rho,
        w: sc.w_k.clone(),
    })
    .map_err(|e| fail("K", e))?;
    let k = k_sol.x.clone();
    let (a_hat, g, w) = p_equation_blocks(cfg, &k, &sc.w_p());
    let p_sol = solve_are(&AreDescriptor::Quadratic { a_hat, g, w }).map_err(|e| fail("P", e))?;
    let p = p_sol.x.clone();
    let pi = &p - &k;
    let constant_inputs = cfg.f.is_constant() && cfg.sigma.is_constant() && cfg.eta.is_constant();
    let s = match stationary_s(cfg, &k, &pi, sc, 0.0) {
        Some(s0) if constant_inputs => VectorPath::constant(grid, s0),
        _ => {
            let terminal = stationary_s(cfg, &k, &pi, sc, grid.t_end).unwrap_or_else(|| DVector::zeros(n));
            let kp = k_parts(cfg, &k);
            let (mt, lt) = equations::s_coefficients(cfg, &kp, &pi);
            let coeff = |_t: f64| mt.transpose();
            let forcing = |t: f64| {
                equations::s_forcing(&k, &pi, &lt, &sc.eta_weight, &cfg.f.eval(t), &cfg.sigma.eval(t), &cfg.eta.eval(t))
            };
            integrate_affine_backward(terminal, cfg.rho, &coeff, &forcing, grid)?
        }
    };
    let kpath = MatrixPath::constant(grid, k);
    let ups = upsilon_path(cfg, &kpath)?;
    let mut b = bundle(family, grid, kpath, None, s, ups);
    b.p = Some(p);
    b.are = vec![("K".into(), k_sol), ("P".into(), p_sol)];
    Ok(b)
}

/// Blocks `(Â, G, W')` of the `P` equation written as `0 = ÂᵀP + PÂ − PGP + W'`,
/// with `Â = A − ρ/2·I − BΥ⁻¹DᵀKC`, `G = BΥ⁻¹Bᵀ`, `W' = Ĉ + W_P` and
/// `Ĉ = CᵀKC − CᵀKDΥ⁻¹DᵀKC`.
pub fn p_equation_blocks(cfg: &ScenarioConfig, k: &DMatrix<f64>, w_p: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let n = cfg.n();
    let kp = k_parts(cfg, k);
    let dkc = cfg.d.transpose() * k * &cfg.c;
    let a_hat = &cfg.a - DMatrix::identity(n, n) * (0.5 * cfg.rho) - &cfg.b * &kp.ups_inv * &dkc;
    let g = &cfg.b * &kp.ups_inv * cfg.b.transpose();
    let c_hat = cfg.c.transpose() * k * &cfg.c - dkc.transpose() * &kp.ups_inv * &dkc;
    (a_hat, g, c_hat + w_p)
}

/// Infinite-horizon Nash game: constant `K_N`, `P_N` and stationary `s_N`.
pub fn solve_game_infinite(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<RiccatiBundle> {
    require_homogeneous(cfg)?;
    solve_kps_infinite(cfg, grid, &equations::game_constants(cfg), StrategyFamily::GameInfinite, "A4")
}

/// Infinite-horizon social problem: constant `K̂_N`, `P̂_N` and stationary `ŝ_N`.
pub fn solve_social_infinite(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<RiccatiBundle> {
    require_homogeneous(cfg)?;
    solve_kps_infinite(cfg, grid, &equations::social_constants(cfg), StrategyFamily::SocialInfinite, "A5")
}

/// Heterogeneous game with one dominant agent of weight `alpha_dominant` and
/// `N − 1` followers sharing the rest. Requires `f = σ = η = 0`.
pub fn solve_game_hetero(cfg: &ScenarioConfig, alpha_dominant: f64, grid: TimeGrid) -> Result<RiccatiBundle> {
    if !(cfg.f.is_zero() && cfg.sigma.is_zero() && cfg.eta.is_zero()) {
        return Err(Error::InvalidScenario("heterogeneous family requires f = sigma = eta = 0".into()));
    }
    if cfg.n_agents < 2 || !(alpha_dominant > 0.0 && alpha_dominant < 1.0) {
        return Err(Error::InvalidScenario("heterogeneous family needs N >= 2 and alpha in (0, 1)".into()));
    }
    let n = cfg.n();
    let hc = equations::hetero_constants(cfg, alpha_dominant);
    let terminal = vec![DMatrix::zeros(n, n); 6];
    let paths = ode::integrate_system_backward(terminal, |_t, y| equations::hetero_dot(cfg, &hc, y), grid, "heterogeneous solvability fails")?;
    let mut it = paths.into_iter();
    let mut next = || it.next().unwrap();
    let (k1, pi11, pi1j, kj, pij1, pijj) = (next(), next(), next(), next(), next(), next());
    let upsilon1 = upsilon_path(cfg, &k1)?;
    let upsilonj = upsilon_path(cfg, &kj)?;
    let s = VectorPath::constant(grid, DVector::zeros(n));
    let mut b = bundle(StrategyFamily::GameHeterogeneousFinite, grid, k1.clone(), Some(pi11.clone()), s, upsilon1.clone());
    b.hetero = Some(HeteroPaths { k1, pi11, pi1j, kj, pij1, pijj, upsilon1, upsilonj, alpha: alpha_dominant });
    Ok(b)
}

/// State-coupled social problem (`D = 0`): `K̆_N`, `Π̆_N`, `s̆_N`.
pub fn solve_coupled_social(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<RiccatiBundle> {
    require_homogeneous(cfg)?;
    if cfg.d.iter().any(|&v| v != 0.0) {
        return Err(Error::InvalidScenario("coupled social family requires D = 0".into()));
    }
    let n = cfg.n();
    let terminal = vec![DMatrix::zeros(n, n), DMatrix::zeros(n, n), DMatrix::zeros(n, 1)];
    let paths = ode::integrate_system_backward(terminal, |t, y| equations::coupled_dot(cfg, y, t), grid, "coupled solvability fails")?;
    let mut it = paths.into_iter();
    let k = it.next().unwrap();
    let pi = it.next().unwrap();
    let s = VectorPath::from_columns(it.next().unwrap());
    let ups = MatrixPath::constant(grid, cfg.r.clone());
    let mut b = bundle(StrategyFamily::SocialCoupledFinite, grid, k.clone(), Some(pi.clone()), s.clone(), ups);
    b.coupled = Some(CoupledPaths { k, pi, s });
    Ok(b)
}

/// Dispatches on `cfg.family`.
pub fn solve(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<RiccatiBundle> {
    match cfg.family {
        StrategyFamily::GameHomogeneousFinite => solve_game_finite(cfg, grid),
        StrategyFamily::GameHeterogeneousFinite => solve_game_hetero(cfg, cfg.alpha[0], grid),
        StrategyFamily::GameInfinite => solve_game_infinite(cfg, grid),
        StrategyFamily::SocialFinite => solve_social_finite(cfg, grid),
        StrategyFamily::SocialInfinite => solve_social_infinite(cfg, grid),
        StrategyFamily::SocialCoupledFinite => solve_coupled_social(cfg, grid),
        StrategyFamily::ClassicalMeanField => solve_classical_mf(cfg, grid),
    }
}

/// Default grid for a scenario: at least `per_unit` steps per unit horizon.
pub fn default_grid(cfg: &ScenarioConfig, per_unit: usize) -> Result<TimeGrid> {
    TimeGrid::with_density(cfg.horizon.length(), per_unit)
}
