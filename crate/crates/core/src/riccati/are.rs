//! Algebraic Riccati equations: invariant-subspace solves with Newton polish,
//! Kleinman iteration for the multiplicative-noise case and stabilizing certificates.

use nalgebra::{Complex, DMatrix};

use crate::error::{Error, Result};
use crate::linalg;

/// Condition number of `U₁₁` above which the DRE fallback is used.
pub const U11_COND_LIMIT: f64 = 1e10;

/// Quadratic matrix equation to solve.
#[derive(Clone, Debug)]
pub enum AreDescriptor {
    /// `0 = ÂᵀX + XÂ − X G X + W` with possibly nonsymmetric `W`; the
    /// stabilizing solution makes `Â − G X` Hurwitz.
    Quadratic { a_hat: DMatrix<f64>, g: DMatrix<f64>, w: DMatrix<f64> },
    /// `0 = (A−ρ/2)ᵀX + X(A−ρ/2) + CᵀXC − SᵀΥ⁻¹S + W` with `S = BᵀX + DᵀXC`,
    /// `Υ = R + DᵀXD`; the solution is mean-square stabilizing.
    Stochastic {
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        r: DMatrix<f64>,
        rho: f64,
        w: DMatrix<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AreMethod {
    Schur,
    DreFallback,
    Kleinman,
}

#[derive(Clone, Debug)]
pub struct AreSolution {
    pub x: DMatrix<f64>,
    /// Eigenvalues of the ρ/2-shifted deterministic closed-loop drift.
    pub closed_loop_spectrum: Vec<Complex<f64>>,
    /// Spectral abscissa of the second-moment operator (stochastic case).
    pub mean_square_abscissa: Option<f64>,
    pub residual: f64,
    pub method: AreMethod,
}

impl AreSolution {
    pub fn is_stabilizing(&self) -> bool {
        self.closed_loop_spectrum.iter().all(|z| z.re < 0.0) && self.mean_square_abscissa.map_or(true, |a| a < 0.0)
    }
}

fn quad_residual(a_hat: &DMatrix<f64>, g: &DMatrix<f64>, w: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    a_hat.transpose() * x + x * a_hat - x * g * x + w
}

/// Hamiltonian-type block matrix whose stable subspace yields the solution.
pub fn hamiltonian(a_hat: &DMatrix<f64>, g: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a_hat.nrows();
    let mut h = DMatrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(a_hat);
    h.view_mut((0, n), (n, n)).copy_from(&(-g));
    h.view_mut((n, 0), (n, n)).copy_from(&(-w));
    h.view_mut((n, n), (n, n)).copy_from(&(-a_hat.transpose()));
    h
}

fn newton_quadratic(a_hat: &DMatrix<f64>, g: &DMatrix<f64>, w: &DMatrix<f64>, x: &mut DMatrix<f64>, sweeps: usize) {
    for _ in 0..sweeps {
        let f = quad_residual(a_hat, g, w, x);
        if f.norm() <= 1e-15 * (1.0 + x.norm()) {
            break;
        }
        let lhs = a_hat.transpose() - &*x * g;
        let rhs = a_hat - g * &*x;
        match linalg::solve_sylvester(&lhs, &rhs, &(-&f)) {
            Ok(delta) if linalg::all_finite(&delta) => {
                let cand = &*x + delta;
                if quad_residual(a_hat, g, w, &cand).norm() < f.norm() {
                    *x = cand;
                } else {
                    break;
                }
            }
            _ => break,
        }
    }
}

/// Long-horizon integration of `Ẋ = −(ÂᵀX + XÂ − XGX + W)` backward from zero.
fn dre_steady<F: Fn(&DMatrix<f64>) -> DMatrix<f64>>(n: usize, flow: F, label: &str) -> Result<DMatrix<f64>> {
    let mut x = DMatrix::zeros(n, n);
    let h = 1e-2;
    for _ in 0..400_000 {
        let k1 = flow(&x);
        let k2 = flow(&(&x + &k1 * (0.5 * h)));
        let k3 = flow(&(&x + &k2 * (0.5 * h)));
        let k4 = flow(&(&x + &k3 * h));
        let dx = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        x += &dx;
        if !linalg::all_finite(&x) || x.amax() > 1e12 {
            return Err(Error::NoStabilizingSolution(format!("{label}: long-horizon flow escaped")));
        }
        if dx.norm() <= 1e-15 * (1.0 + x.norm()) {
            return Ok(x);
        }
    }
    Err(Error::NoStabilizingSolution(format!("{label}: long-horizon flow did not settle")))
}

fn solve_quadratic(a_hat: &DMatrix<f64>, g: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<AreSolution> {
    let n = a_hat.nrows();
    let h = hamiltonian(a_hat, g, w);
    let (mut x, method) = match linalg::stable_subspace_solution(&h) {
        Ok((x, cond)) if cond <= U11_COND_LIMIT => (x, AreMethod::Schur),
        _ => {
            let flow = |x: &DMatrix<f64>| quad_residual(a_hat, g, w, x);
            (dre_steady(n, flow, "quadratic ARE")?, AreMethod::DreFallback)
        }
    };
    newton_quadratic(a_hat, g, w, &mut x, 3);
    let residual = quad_residual(a_hat, g, w, &x).norm();
    let spectrum = linalg::eigenvalues(&(a_hat - g * &x));
    let sol = AreSolution { x, closed_loop_spectrum: spectrum, mean_square_abscissa: None, residual, method };
    if !sol.is_stabilizing() {
        return Err(Error::NoStabilizingSolution("closed loop is not Hurwitz".into()));
    }
    Ok(sol)
}

struct StochasticData<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DMatrix<f64>,
    c: &'a DMatrix<f64>,
    d: &'a DMatrix<f64>,
    r: &'a DMatrix<f64>,
    rho: f64,
    w: &'a DMatrix<f64>,
}

impl StochasticData<'_> {
    fn a_shift(&self) -> DMatrix<f64> {
        let n = self.a.nrows();
        self.a - DMatrix::identity(n, n) * (0.5 * self.rho)
    }

    fn gain(&self, x: &DMatrix<f64>) -> Option<DMatrix<f64>> {
        let ups = self.r + self.d.transpose() * x * self.d;
        let s = self.b.transpose() * x + self.d.transpose() * x * self.c;
        ups.try_inverse().map(|ui| -(ui * s))
    }

    fn residual(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let ups = self.r + self.d.transpose() * x * self.d;
        let s = self.b.transpose() * x + self.d.transpose() * x * self.c;
        let sus = match ups.try_inverse() {
            Some(ui) => s.transpose() * ui * s,
            None => DMatrix::from_element(x.nrows(), x.ncols(), f64::NAN),
        };
        let ash = self.a_shift();
        ash.transpose() * x + x * &ash + self.c.transpose() * x * self.c - sus + self.w
    }

    /// Spectral abscissa of `X ↦ ĀX + XĀᵀ + C̄XC̄ᵀ − ρX` for gain `f`.
    fn ms_abscissa(&self, f: &DMatrix<f64>) -> f64 {
        let abar = self.a + self.b * f;
        let cbar = self.c + self.d * f;
        let n = abar.nrows();
        let i = DMatrix::<f64>::identity(n, n);
        let op = linalg::kron(&i, &abar) + linalg::kron(&abar, &i) + linalg::kron(&cbar, &cbar)
            - DMatrix::identity(n * n, n * n) * self.rho;
        linalg::spectral_abscissa(&op)
    }

    /// Kleinman step: value of the closed loop under gain `f`.
    fn policy_value(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let a_cl = self.a_shift() + self.b * f;
        let c_cl = self.c + self.d * f;
        let w = self.w + f.transpose() * self.r * f;
        linalg::solve_generalized_lyapunov(&a_cl, &c_cl, &w)
    }
}

fn solve_stochastic(data: StochasticData<'_>) -> Result<AreSolution> {
    let n = data.a.nrows();
    let zero_noise = data.c.iter().all(|&v| v == 0.0) && data.d.iter().all(|&v| v == 0.0);
    let ups0 = data.r.clone().try_inverse().ok_or_else(|| Error::Numerical("R singular".into()))?;
    let g0 = data.b * &ups0 * data.b.transpose();
    if zero_noise {
        return solve_quadratic(&data.a_shift(), &g0, data.w);
    }
    // initial guess from the noise-free problem, else from the long-horizon flow
    let mut x = match solve_quadratic(&data.a_shift(), &g0, data.w) {
        Ok(s) if data.gain(&s.x).is_some_and(|f| data.ms_abscissa(&f) < 0.0) => s.x,
        _ => dre_steady(n, |x| data.residual(x), "stochastic ARE")?,
    };
    let mut method = AreMethod::Kleinman;
    let mut best = data.residual(&x).norm();
    for _ in 0..60 {
        let Some(f) = data.gain(&x) else { break };
        if data.ms_abscissa(&f) >= 0.0 {
            break;
        }
        let Ok(next) = data.policy_value(&f) else { break };
        let sym = (&next + next.transpose()) * 0.5;
        let res = data.residual(&sym).norm();
        if !res.is_finite() {
            break;
        }
        let converged = (&sym - &x).norm() <= 1e-15 * (1.0 + sym.norm());
        x = sym;
        best = res;
        if converged || res <= 1e-14 * (1.0 + x.norm()) {
            break;
        }
    }
    if !best.is_finite() || best > 1e-9 * (1.0 + x.norm()) {
        x = dre_steady(n, |x| data.residual(x), "stochastic ARE")?;
        method = AreMethod::DreFallback;
    }
    let f = data.gain(&x).ok_or_else(|| Error::NoStabilizingSolution("Upsilon singular".into()))?;
    let spectrum = linalg::eigenvalues(&(data.a_shift() + data.b * &f));
    let sol = AreSolution {
        residual: data.residual(&x).norm(),
        mean_square_abscissa: Some(data.ms_abscissa(&f)),
        closed_loop_spectrum: spectrum,
        x,
        method,
    };
    if !sol.is_stabilizing() {
        return Err(Error::NoStabilizingSolution("closed loop is not mean-square stable".into()));
    }
    Ok(sol)
}

/// Solves the equation described by `spec` and certifies the ρ-stabilizing property.
pub fn solve_are(spec: &AreDescriptor) -> Result<AreSolution> {
    match spec {
        AreDescriptor::Quadratic { a_hat, g, w } => solve_quadratic(a_hat, g, w),
        AreDescriptor::Stochastic { a, b, c, d, r, rho, w } => solve_stochastic(StochasticData { a, b, c, d, r, rho: *rho, w }),
    }
}
