//! Problem data, standing-assumption checks and preset scenarios.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;

/// PSD tolerance for `Q`, relative to its largest eigenvalue.
pub const PSD_TOL: f64 = 1e-12;
/// Minimum eigenvalue accepted for `R`.
pub const PD_TOL: f64 = 1e-10;

/// Exogenous input as a function of time: a constant or a table that is
/// piecewise constant between its knots.
#[derive(Clone, Debug, PartialEq)]
pub enum TimeFunction {
    Constant(DVector<f64>),
    Table { times: Vec<f64>, values: Vec<DVector<f64>> },
}

impl TimeFunction {
    pub fn zeros(n: usize) -> Self {
        TimeFunction::Constant(DVector::zeros(n))
    }

    pub fn constant(v: &[f64]) -> Self {
        TimeFunction::Constant(DVector::from_column_slice(v))
    }

    pub fn dim(&self) -> usize {
        match self {
            TimeFunction::Constant(v) => v.len(),
            TimeFunction::Table { values, .. } => values.first().map_or(0, |v| v.len()),
        }
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        match self {
            TimeFunction::Constant(v) => v.clone(),
            TimeFunction::Table { times, values } => {
                let k = times.partition_point(|&s| s <= t).saturating_sub(1);
                values[k.min(values.len() - 1)].clone()
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            TimeFunction::Constant(v) => v.iter().all(|&x| x == 0.0),
            TimeFunction::Table { values, .. } => values.iter().all(|v| v.iter().all(|&x| x == 0.0)),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, TimeFunction::Constant(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Horizon {
    Finite { t: f64 },
    /// Improper integral truncated at `t_trunc`.
    Infinite { t_trunc: f64, tail_tol: f64 },
}

impl Horizon {
    /// Simulation window length.
    pub fn length(&self) -> f64 {
        match *self {
            Horizon::Finite { t } => t,
            Horizon::Infinite { t_trunc, .. } => t_trunc,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Horizon::Infinite { .. })
    }

    /// Default truncation `max(10, 8/ρ)`.
    pub fn infinite_default(rho: f64) -> Self {
        let t_trunc = if rho > 0.0 { (8.0 / rho).max(10.0) } else { 10.0 };
        Horizon::Infinite { t_trunc, tail_tol: 1e-3 }
    }
}

/// Uniform grid `t_k = k h` on `[0, T]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_end: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_end: f64, steps: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) || steps < 2 {
            return Err(Error::InvalidScenario(format!(
                "grid needs T > 0 and steps >= 2 (got T = {t_end}, steps = {steps})"
            )));
        }
        Ok(TimeGrid { t_end, steps })
    }

    /// Grid with at least `per_unit` steps per unit time.
    pub fn with_density(t_end: f64, per_unit: usize) -> Result<Self> {
        let steps = ((t_end * per_unit as f64).ceil() as usize).max(2);
        TimeGrid::new(t_end, steps)
    }

    pub fn h(&self) -> f64 {
        self.t_end / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.t_end
        } else {
            k as f64 * self.h()
        }
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum StrategyFamily {
    GameHomogeneousFinite,
    GameHeterogeneousFinite,
    GameInfinite,
    SocialFinite,
    SocialInfinite,
    SocialCoupledFinite,
    ClassicalMeanField,
}

impl StrategyFamily {
    pub const ALL: [StrategyFamily; 7] = [
        StrategyFamily::GameHomogeneousFinite,
        StrategyFamily::GameHeterogeneousFinite,
        StrategyFamily::GameInfinite,
        StrategyFamily::SocialFinite,
        StrategyFamily::SocialInfinite,
        StrategyFamily::SocialCoupledFinite,
        StrategyFamily::ClassicalMeanField,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            StrategyFamily::GameHomogeneousFinite => "game_homogeneous_finite",
            StrategyFamily::GameHeterogeneousFinite => "game_heterogeneous_finite",
            StrategyFamily::GameInfinite => "game_infinite",
            StrategyFamily::SocialFinite => "social_finite",
            StrategyFamily::SocialInfinite => "social_infinite",
            StrategyFamily::SocialCoupledFinite => "social_coupled_finite",
            StrategyFamily::ClassicalMeanField => "classical_mean_field",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|f| f.name() == s)
    }

    pub fn is_social(&self) -> bool {
        matches!(
            self,
            StrategyFamily::SocialFinite | StrategyFamily::SocialInfinite | StrategyFamily::SocialCoupledFinite
        )
    }
}

/// A full problem instance. Matrices follow the dynamics
/// `dx_i = (A x_i + B u_i + G x̄ + f) dt + (C x_i + D u_i + σ) dw_i`
/// and the discounted cost `‖x_i − Γ x^(α) − η‖²_Q + ‖u_i‖²_R`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioConfig {
    pub family: StrategyFamily,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub f: TimeFunction,
    pub sigma: TimeFunction,
    pub eta: TimeFunction,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub rho: f64,
    pub g: DMatrix<f64>,
    pub n_agents: usize,
    pub alpha: Vec<f64>,
    pub horizon: Horizon,
    pub x0_mean: DVector<f64>,
    pub x0_cov: DMatrix<f64>,
}

impl ScenarioConfig {
    /// Zero dynamics, identity weights, uniform population weights.
    pub fn zeros(family: StrategyFamily, n: usize, r: usize, n_agents: usize, horizon: Horizon) -> Self {
        ScenarioConfig {
            family,
            a: DMatrix::zeros(n, n),
            b: DMatrix::zeros(n, r),
            c: DMatrix::zeros(n, n),
            d: DMatrix::zeros(n, r),
            f: TimeFunction::zeros(n),
            sigma: TimeFunction::zeros(n),
            eta: TimeFunction::zeros(n),
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(r, r),
            gamma: DMatrix::zeros(n, n),
            rho: 0.0,
            g: DMatrix::zeros(n, n),
            n_agents,
            alpha: vec![1.0 / n_agents as f64; n_agents],
            horizon,
            x0_mean: DVector::zeros(n),
            x0_cov: DMatrix::zeros(n, n),
        }
    }

    /// Scalar scenario `A=a, B=b, C=c, D=d, Q=q, R=r, Γ=γ`.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        family: StrategyFamily,
        a: f64,
        b: f64,
        c: f64,
        d: f64,
        q: f64,
        r: f64,
        gamma: f64,
        rho: f64,
        n_agents: usize,
        horizon: Horizon,
    ) -> Self {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        ScenarioConfig {
            a: m(a),
            b: m(b),
            c: m(c),
            d: m(d),
            q: m(q),
            r: m(r),
            gamma: m(gamma),
            rho,
            ..ScenarioConfig::zeros(family, 1, 1, n_agents, horizon)
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn r_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn with_family(&self, family: StrategyFamily) -> Self {
        ScenarioConfig { family, ..self.clone() }
    }

    pub fn with_agents(&self, n_agents: usize) -> Self {
        ScenarioConfig {
            n_agents,
            alpha: vec![1.0 / n_agents as f64; n_agents],
            ..self.clone()
        }
    }

    /// Weights α₁ = α and α_j = (1−α)/(N−1).
    pub fn with_dominant_weight(&self, alpha: f64) -> Self {
        let n = self.n_agents;
        let mut w = vec![(1.0 - alpha) / (n as f64 - 1.0); n];
        w[0] = alpha;
        ScenarioConfig { alpha: w, ..self.clone() }
    }

    pub fn is_homogeneous(&self) -> bool {
        let u = 1.0 / self.n_agents as f64;
        self.alpha.iter().all(|&a| (a - u).abs() <= 1e-12)
    }

    /// Stable 64-bit digest of every field (FNV-1a over the emitted scenario text).
    pub fn digest(&self) -> u64 {
        let text = crate::io::emit_scenario(self);
        let mut h: u64 = 0xcbf29ce484222325;
        for b in text.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn passes(&self) -> bool {
        self.violations.is_empty()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.passes() {
            return write!(f, "valid");
        }
        for v in &self.violations {
            writeln!(f, "- {v}")?;
        }
        Ok(())
    }
}

fn is_symmetric(m: &DMatrix<f64>) -> bool {
    (m - m.transpose()).norm() <= 1e-12 * (1.0 + m.norm())
}

/// Lists every violated data-level assumption.
pub fn validate_scenario(cfg: &ScenarioConfig) -> ValidationReport {
    let mut v = Vec::new();
    let n = cfg.a.nrows();
    let r = cfg.b.ncols();
    let mut dim = |name: &str, m: &DMatrix<f64>, rows: usize, cols: usize| {
        if m.shape() != (rows, cols) {
            v.push(format!("{name} is {}x{}, expected {rows}x{cols}", m.nrows(), m.ncols()));
            false
        } else {
            true
        }
    };
    let mut ok = dim("A", &cfg.a, n, n);
    ok &= dim("B", &cfg.b, n, r);
    ok &= dim("C", &cfg.c, n, n);
    ok &= dim("D", &cfg.d, n, r);
    ok &= dim("Q", &cfg.q, n, n);
    ok &= dim("R", &cfg.r, r, r);
    ok &= dim("Gamma", &cfg.gamma, n, n);
    ok &= dim("G", &cfg.g, n, n);
    ok &= dim("x0_cov", &cfg.x0_cov, n, n);
    if cfg.x0_mean.len() != n {
        v.push(format!("x0_mean has length {}, expected {n}", cfg.x0_mean.len()));
        ok = false;
    }
    for (name, tf) in [("f", &cfg.f), ("sigma", &cfg.sigma), ("eta", &cfg.eta)] {
        if tf.dim() != n {
            v.push(format!("{name} has length {}, expected {n}", tf.dim()));
            ok = false;
        }
        if let TimeFunction::Table { times, values } = tf {
            if times.is_empty() || times.len() != values.len() {
                v.push(format!("{name} table has mismatched knots and values"));
            } else if times.windows(2).any(|w| w[1] <= w[0]) {
                v.push(format!("{name} table knots must increase"));
            }
            if values.iter().any(|x| x.len() != n) {
                v.push(format!("{name} table rows must have length {n}"));
            }
        }
    }
    if cfg.n_agents == 0 {
        v.push("N must be positive".into());
    }
    if cfg.alpha.len() != cfg.n_agents {
        v.push(format!("alpha has length {}, expected N = {}", cfg.alpha.len(), cfg.n_agents));
    }
    if cfg.alpha.iter().any(|&a| a < 0.0) {
        v.push("alpha has a negative weight".into());
    }
    let sum: f64 = cfg.alpha.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        v.push(format!("alpha sums to {sum}, expected 1"));
    }
    if !(cfg.rho >= 0.0 && cfg.rho.is_finite()) {
        v.push("rho must be a nonnegative real".into());
    }
    match cfg.horizon {
        Horizon::Finite { t } if !(t > 0.0 && t.is_finite()) => v.push("horizon T must be positive".into()),
        Horizon::Infinite { t_trunc, tail_tol } if !(t_trunc > 0.0 && tail_tol > 0.0) => {
            v.push("infinite horizon needs positive truncation and tail tolerance".into())
        }
        _ => {}
    }
    if ok {
        if !is_symmetric(&cfg.q) {
            v.push("Q is not symmetric".into());
        } else {
            let scale = linalg::max_sym_eigenvalue(&cfg.q).abs().max(1.0);
            if linalg::min_sym_eigenvalue(&cfg.q) < -PSD_TOL * scale {
                v.push("Q is not positive semidefinite".into());
            }
        }
        if !is_symmetric(&cfg.r) {
            v.push("R is not symmetric".into());
        } else if r > 0 && linalg::min_sym_eigenvalue(&cfg.r) < PD_TOL {
            v.push("R is not positive definite".into());
        }
        if !is_symmetric(&cfg.x0_cov) || (n > 0 && linalg::min_sym_eigenvalue(&cfg.x0_cov) < -PSD_TOL) {
            v.push("x0_cov is not symmetric positive semidefinite".into());
        }
        let all = [&cfg.a, &cfg.b, &cfg.c, &cfg.d, &cfg.q, &cfg.r, &cfg.gamma, &cfg.g, &cfg.x0_cov];
        if all.iter().any(|m| !linalg::all_finite(m)) || cfg.x0_mean.iter().any(|x| !x.is_finite()) {
            v.push("non-finite matrix entry".into());
        }
    }
    use StrategyFamily::*;
    let finite = !cfg.horizon.is_infinite();
    match cfg.family {
        GameHeterogeneousFinite => {
            if !(cfg.f.is_zero() && cfg.sigma.is_zero() && cfg.eta.is_zero()) {
                v.push("heterogeneous family requires f = sigma = eta = 0".into());
            }
            if cfg.n_agents < 2 {
                v.push("heterogeneous family needs N >= 2".into());
            } else {
                let follower = cfg.alpha.get(1).copied().unwrap_or(0.0);
                if cfg.alpha.iter().skip(1).any(|&a| (a - follower).abs() > 1e-12) {
                    v.push("heterogeneous family requires equal follower weights".into());
                }
            }
        }
        SocialCoupledFinite => {
            if ok && cfg.d.iter().any(|&x| x != 0.0) {
                v.push("coupled social family requires D = 0".into());
            }
        }
        _ => {}
    }
    if !matches!(cfg.family, GameHeterogeneousFinite) && !cfg.is_homogeneous() && cfg.alpha.len() == cfg.n_agents {
        v.push(format!("{} requires homogeneous weights 1/N", cfg.family.name()));
    }
    if ok && !matches!(cfg.family, SocialCoupledFinite) && cfg.g.iter().any(|&x| x != 0.0) {
        v.push("state coupling G is only supported by the coupled social family".into());
    }
    let needs_finite = matches!(
        cfg.family,
        GameHomogeneousFinite | GameHeterogeneousFinite | SocialFinite | SocialCoupledFinite
    );
    let needs_infinite = matches!(cfg.family, GameInfinite | SocialInfinite);
    if needs_finite && !finite {
        v.push(format!("{} needs a finite horizon", cfg.family.name()));
    }
    if needs_infinite && finite {
        v.push(format!("{} needs an infinite horizon", cfg.family.name()));
    }
    ValidationReport { violations: v }
}

/// `Σ_j α_j x_j`.
pub fn weighted_average(states: &[DVector<f64>], alpha: &[f64]) -> Result<DVector<f64>> {
    if states.len() != alpha.len() || states.is_empty() {
        return Err(Error::Dimension(format!(
            "{} states for {} weights",
            states.len(),
            alpha.len()
        )));
    }
    let n = states[0].len();
    let mut out = DVector::zeros(n);
    for (x, &a) in states.iter().zip(alpha) {
        if x.len() != n {
            return Err(Error::Dimension("states of unequal length".into()));
        }
        out.axpy(a, x, 1.0);
    }
    Ok(out)
}

/// Preset scenarios from the worked examples.
pub mod presets {
    use super::*;

    /// Six single-integrator agents with additive noise `σ = 0.1`, Nash game.
    pub fn additive_noise_game() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::scalar(
            StrategyFamily::GameInfinite,
            0.0,
            1.0,
            0.0,
            0.0,
            1.0,
            1.0,
            1.0,
            0.2,
            6,
            Horizon::infinite_default(0.2),
        );
        cfg.sigma = TimeFunction::constant(&[0.1]);
        cfg.x0_mean = DVector::from_element(1, 5.0);
        cfg.x0_cov = DMatrix::identity(1, 1);
        cfg
    }

    /// Noisy integrators `dx = u dt + u dw` with `Q = R = 1`, Nash game.
    pub fn integrator_game() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::scalar(
            StrategyFamily::GameInfinite,
            0.0,
            1.0,
            0.0,
            1.0,
            1.0,
            1.0,
            1.0,
            0.2,
            6,
            Horizon::infinite_default(0.2),
        );
        cfg.x0_mean = DVector::from_element(1, 5.0);
        cfg.x0_cov = DMatrix::identity(1, 1);
        cfg
    }

    /// Six single integrators with multiplicative noise, social problem.
    pub fn multiplicative_social() -> ScenarioConfig {
        integrator_game().with_family(StrategyFamily::SocialInfinite)
    }
}
