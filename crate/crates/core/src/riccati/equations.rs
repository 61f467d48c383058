//! Right-hand sides `dM/dt` of every differential equation in the decoupled
//! optimality systems, written for backward RK4 integration.

use nalgebra::{DMatrix, DVector};

use crate::model::ScenarioConfig;

/// Quantities derived from `K`: `S = BᵀK + DᵀKC`, `Υ = R + DᵀKD` and `Υ⁻¹`.
pub struct KParts {
    pub s: DMatrix<f64>,
    pub ups: DMatrix<f64>,
    pub ups_inv: DMatrix<f64>,
}

pub fn k_parts(cfg: &ScenarioConfig, k: &DMatrix<f64>) -> KParts {
    let s = cfg.b.transpose() * k + cfg.d.transpose() * k * &cfg.c;
    let ups = &cfg.r + cfg.d.transpose() * k * &cfg.d;
    let ups_inv = ups
        .clone()
        .try_inverse()
        .unwrap_or_else(|| DMatrix::from_element(ups.nrows(), ups.ncols(), f64::NAN));
    KParts { s, ups, ups_inv }
}

fn eye(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// Constant terms of a homogeneous `(K, Π, s)` system.
#[derive(Clone, Debug)]
pub struct SystemConstants {
    /// Constant in the `K` equation.
    pub w_k: DMatrix<f64>,
    /// Constant subtracted in the `Π` equation.
    pub c_pi: DMatrix<f64>,
    /// Matrix multiplying `η` in the `s` equation.
    pub eta_weight: DMatrix<f64>,
}

impl SystemConstants {
    /// Constant of the equation for `P = K + Π`.
    pub fn w_p(&self) -> DMatrix<f64> {
        &self.w_k - &self.c_pi
    }
}

/// `Q_Γ = ΓᵀQ + QΓ − ΓᵀQΓ`.
pub fn q_gamma(cfg: &ScenarioConfig) -> DMatrix<f64> {
    let gt = cfg.gamma.transpose();
    &gt * &cfg.q + &cfg.q * &cfg.gamma - &gt * &cfg.q * &cfg.gamma
}

/// Nash game with `N` agents.
pub fn game_constants(cfg: &ScenarioConfig) -> SystemConstants {
    let n = cfg.n();
    let nn = cfg.n_agents as f64;
    let l = eye(n) - &cfg.gamma / nn;
    SystemConstants {
        w_k: l.transpose() * &cfg.q * &l,
        c_pi: l.transpose() * &cfg.q * &cfg.gamma * ((nn - 1.0) / nn),
        eta_weight: l.transpose() * &cfg.q,
    }
}

/// Social problem with `N` agents.
pub fn social_constants(cfg: &ScenarioConfig) -> SystemConstants {
    let n = cfg.n();
    let nn = cfg.n_agents as f64;
    let qg = q_gamma(cfg);
    SystemConstants {
        w_k: &cfg.q - &qg / nn,
        c_pi: qg * ((nn - 1.0) / nn),
        eta_weight: (eye(n) - &cfg.gamma).transpose() * &cfg.q,
    }
}

/// Classical mean-field limit.
pub fn classical_constants(cfg: &ScenarioConfig) -> SystemConstants {
    SystemConstants { w_k: cfg.q.clone(), c_pi: &cfg.q * &cfg.gamma, eta_weight: cfg.q.clone() }
}

/// `K̇` from `ρK = K̇ + AᵀK + KA + CᵀKC − SᵀΥ⁻¹S + W`.
pub fn k_dot(cfg: &ScenarioConfig, k: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let kp = k_parts(cfg, k);
    k * cfg.rho - cfg.a.transpose() * k - k * &cfg.a - cfg.c.transpose() * k * &cfg.c
        + kp.s.transpose() * &kp.ups_inv * &kp.s
        - w
}

/// `Π̇` from `ρΠ = Π̇ + AᵀΠ + ΠA − SᵀΥ⁻¹BᵀΠ − ΠBΥ⁻¹(S + BᵀΠ) − c`.
pub fn pi_dot(cfg: &ScenarioConfig, kp: &KParts, pi: &DMatrix<f64>, c: &DMatrix<f64>) -> DMatrix<f64> {
    let bt_pi = cfg.b.transpose() * pi;
    pi * cfg.rho - cfg.a.transpose() * pi - pi * &cfg.a
        + kp.s.transpose() * &kp.ups_inv * &bt_pi
        + pi * &cfg.b * &kp.ups_inv * (&kp.s + &bt_pi)
        + c
}

/// `Ṗ` from `ρP = Ṗ + AᵀP + PA − (PB + CᵀKD)Υ⁻¹(BᵀP + DᵀKC) + CᵀKC + W`.
pub fn p_dot(cfg: &ScenarioConfig, k: &DMatrix<f64>, p: &DMatrix<f64>, w: &DMatrix<f64>) -> DMatrix<f64> {
    let kp = k_parts(cfg, k);
    let left = p * &cfg.b + cfg.c.transpose() * k * &cfg.d;
    let right = cfg.b.transpose() * p + cfg.d.transpose() * k * &cfg.c;
    p * cfg.rho - cfg.a.transpose() * p - p * &cfg.a + left * &kp.ups_inv * right
        - cfg.c.transpose() * k * &cfg.c
        - w
}

/// Transposed closed-loop coefficients of the costate offset equation:
/// `Mᵀ = Aᵀ − (Sᵀ + ΠB)Υ⁻¹Bᵀ` and `Lᵀ = Cᵀ − (Sᵀ + ΠB)Υ⁻¹Dᵀ`.
pub fn s_coefficients(cfg: &ScenarioConfig, kp: &KParts, pi: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let left = kp.s.transpose() + pi * &cfg.b;
    let mt = cfg.a.transpose() - &left * &kp.ups_inv * cfg.b.transpose();
    let lt = cfg.c.transpose() - &left * &kp.ups_inv * cfg.d.transpose();
    (mt, lt)
}

/// Forcing `LᵀKσ + (K+Π)f − Wη·η` of `ρs = ṡ + Mᵀs + forcing`.
pub fn s_forcing(
    k: &DMatrix<f64>,
    pi: &DMatrix<f64>,
    lt: &DMatrix<f64>,
    eta_weight: &DMatrix<f64>,
    f: &DVector<f64>,
    sigma: &DVector<f64>,
    eta: &DVector<f64>,
) -> DVector<f64> {
    lt * k * sigma + (k + pi) * f - eta_weight * eta
}

/// `ṡ` from `ρs = ṡ + Mᵀs + LᵀKσ + (K+Π)f − Wη·η`.
#[allow(clippy::too_many_arguments)]
pub fn s_dot(
    cfg: &ScenarioConfig,
    k: &DMatrix<f64>,
    kp: &KParts,
    pi: &DMatrix<f64>,
    s: &DVector<f64>,
    eta_weight: &DMatrix<f64>,
    t: f64,
) -> DVector<f64> {
    let (mt, lt) = s_coefficients(cfg, kp, pi);
    s * cfg.rho - mt * s - s_forcing(k, pi, &lt, eta_weight, &cfg.f.eval(t), &cfg.sigma.eval(t), &cfg.eta.eval(t))
}

/// Heterogeneous system state `(K¹, Π¹¹, Π¹ʲ, Kʲ, Πʲ¹, Πʲʲ)`.
pub struct HeteroConstants {
    pub alpha: f64,
    pub alpha_j: f64,
    pub w1: DMatrix<f64>,
    pub wj: DMatrix<f64>,
    pub c1j: DMatrix<f64>,
    pub cj1: DMatrix<f64>,
    pub cjj: DMatrix<f64>,
}

pub fn hetero_constants(cfg: &ScenarioConfig, alpha: f64) -> HeteroConstants {
    let n = cfg.n();
    let nn = cfg.n_agents as f64;
    let alpha_j = (1.0 - alpha) / (nn - 1.0);
    let l1 = eye(n) - &cfg.gamma * alpha;
    let lj = eye(n) - &cfg.gamma * alpha_j;
    let qg = &cfg.q * &cfg.gamma;
    HeteroConstants {
        alpha,
        alpha_j,
        w1: l1.transpose() * &cfg.q * &l1,
        wj: lj.transpose() * &cfg.q * &lj,
        c1j: l1.transpose() * &qg * (1.0 - alpha),
        cj1: lj.transpose() * &qg * alpha,
        cjj: lj.transpose() * &qg * ((nn - 2.0) / (nn - 1.0) * (1.0 - alpha)),
    }
}

/// Re-derived coefficient-matched heterogeneous system.
pub fn hetero_dot(cfg: &ScenarioConfig, hc: &HeteroConstants, y: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let (k1, p11, p1j, kj, pj1, pjj) = (&y[0], &y[1], &y[2], &y[3], &y[4], &y[5]);
    let e1 = k_parts(cfg, k1);
    let ej = k_parts(cfg, kj);
    let b = &cfg.b;
    let bt = b.transpose();
    let at = cfg.a.transpose();
    let g1 = b * &e1.ups_inv * &bt;
    let gj = b * &ej.ups_inv * &bt;
    let rho = cfg.rho;
    let lin = |p: &DMatrix<f64>| p * rho - &at * p - p * &cfg.a;
    let d11 = lin(p11) + e1.s.transpose() * &e1.ups_inv * &bt * p11 + p11 * b * &e1.ups_inv * (&e1.s + &bt * p11) + p1j * &gj * pj1;
    let d1j = lin(p1j) + e1.s.transpose() * &e1.ups_inv * &bt * p1j + p11 * &g1 * p1j + p1j * b * &ej.ups_inv * (&ej.s + &bt * pjj)
        + &hc.c1j;
    let dj1 = lin(pj1) + ej.s.transpose() * &ej.ups_inv * &bt * pj1 + pj1 * b * &e1.ups_inv * (&e1.s + &bt * p11) + pjj * &gj * pj1
        + &hc.cj1;
    let djj = lin(pjj) + ej.s.transpose() * &ej.ups_inv * &bt * pjj + pjj * b * &ej.ups_inv * (&ej.s + &bt * pjj) + pj1 * &g1 * p1j
        + &hc.cjj;
    vec![k_dot(cfg, k1, &hc.w1), d11, d1j, k_dot(cfg, kj, &hc.wj), dj1, djj]
}

/// Alternative form of the heterogeneous Π equations with mixed superscripts
/// (`Ῡʲ` and `Πʲ¹` inside the dominant-agent equations). Only used to report
/// how far the solved system is from it.
pub fn hetero_dot_alternative(cfg: &ScenarioConfig, hc: &HeteroConstants, y: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let (k1, p11, p1j, kj, pj1, pjj) = (&y[0], &y[1], &y[2], &y[3], &y[4], &y[5]);
    let e1 = k_parts(cfg, k1);
    let ej = k_parts(cfg, kj);
    let b = &cfg.b;
    let bt = b.transpose();
    let at = cfg.a.transpose();
    let rho = cfg.rho;
    let lin = |p: &DMatrix<f64>| p * rho - &at * p - p * &cfg.a;
    let gj = b * &ej.ups_inv * &bt;
    let g1 = b * &e1.ups_inv * &bt;
    let d11 = lin(p11) + p11 * &gj * p11 + ej.s.transpose() * &e1.ups_inv * &bt * p11
        + pj1 * b * &e1.ups_inv * (&e1.s + &bt * p11)
        + p1j * &gj * pj1;
    let d1j = lin(p1j) + (&e1.s + &bt * p11).transpose() * &e1.ups_inv * &bt * p1j
        + p1j * b * &ej.ups_inv * (&ej.s + &bt * pjj)
        + &hc.c1j;
    let dj1 = lin(pj1) + pjj * &g1 * pj1 + e1.s.transpose() * &ej.ups_inv * &bt * pj1 + pjj * b * &e1.ups_inv * &e1.s + &hc.cj1;
    // the alternative constant lacks the trailing Γ
    let nn = cfg.n_agents as f64;
    let lj = eye(cfg.n()) - &cfg.gamma * hc.alpha_j;
    let cjj_alt = lj.transpose() * &cfg.q * ((nn - 2.0) / (nn - 1.0) * (1.0 - hc.alpha));
    let djj = lin(pjj) + ej.s.transpose() * &ej.ups_inv * &bt * pjj + pjj * b * &ej.ups_inv * &ej.s + pjj * &gj * pjj
        + pj1 * &g1 * p1j
        + cjj_alt;
    vec![k_dot(cfg, k1, &hc.w1), d11, d1j, k_dot(cfg, kj, &hc.wj), dj1, djj]
}

/// State-coupled social system `(K̆, Π̆, s̆)` with `D = 0`.
pub fn coupled_dot(cfg: &ScenarioConfig, y: &[DMatrix<f64>], t: f64) -> Vec<DMatrix<f64>> {
    let (k, pi, s) = (&y[0], &y[1], &y[2]);
    let nn = cfg.n_agents as f64;
    let rinv = cfg.r.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(cfg.r.nrows(), cfg.r.ncols(), f64::NAN));
    let g = &cfg.b * rinv * cfg.b.transpose();
    let at = cfg.a.transpose();
    let gc = &cfg.g;
    let kc = k + pi / nn;
    let sum = k + pi;
    let qg = q_gamma(cfg);
    let n = cfg.n();
    let col = |v: DVector<f64>| DMatrix::from_column_slice(n, 1, v.as_slice());
    let dk = k * cfg.rho - &at * k - k * &cfg.a - &cfg.q + k * &g * k - cfg.c.transpose() * &kc * &cfg.c;
    let dpi = pi * cfg.rho - &at * pi - pi * &cfg.a + k * &g * pi + pi * &g * &sum - gc.transpose() * &sum - &sum * gc + &qg;
    let eta_bar = (DMatrix::identity(n, n) - &cfg.gamma).transpose() * &cfg.q * cfg.eta.eval(t);
    let ds = s * cfg.rho - (&cfg.a + gc).transpose() * s + &sum * &g * s - &sum * col(cfg.f.eval(t))
        - cfg.c.transpose() * &kc * col(cfg.sigma.eval(t))
        + col(eta_bar);
    vec![dk, dpi, ds]
}
