//! Numerical certificates: equation residuals of every Riccati bundle,
//! common-random-number stationarity of the synthesized laws, mean-field
//! convergence and the social cost cross-check.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ScenarioConfig, StrategyFamily, TimeGrid};
use crate::riccati::equations::{self, k_parts, SystemConstants};
use crate::riccati::ode::{centered_derivative, MatrixPath};
use crate::riccati::{self, RiccatiBundle};
use crate::simulate::{self, CostEstimate, CostTarget, SimOptions};
use crate::synthesis::{AgentGains, GainSchedule, MeanFlow};

/// Relative equation tolerance: `‖LHS − RHS‖ ≤ RES_TOL·(1 + ‖value‖)`.
pub const RES_TOL: f64 = 1e-8;
/// Standard errors allowed in Monte Carlo comparisons.
pub const STAT_SIGMAS: f64 = 3.0;
/// Quadrature slack of the cost cross-check.
pub const RES_SLACK: f64 = 1e-6;
/// Largest number of deviation directions before switching to random ones.
pub const MAX_DIRECTIONS: usize = 40;

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub equation_tag: String,
    /// Max over interior grid points of `‖LHS − RHS‖ / (1 + ‖value‖)`.
    pub max_residual: f64,
    #[serde(skip)]
    pub grid: TimeGrid,
    pub passes: bool,
}

impl ResidualReport {
    fn new(tag: &str, max_residual: f64, grid: TimeGrid) -> Self {
        ResidualReport { equation_tag: tag.to_string(), max_residual, grid, passes: max_residual <= RES_TOL }
    }
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Residual of `ẏ = rhs(t, y)` along `values`, derivative by the five-point stencil.
fn path_residual(tag: &str, grid: TimeGrid, values: &[DMatrix<f64>], rhs: impl Fn(usize) -> DMatrix<f64>) -> ResidualReport {
    let d = centered_derivative(values, grid.h());
    let mut worst = 0.0f64;
    for (k, dk) in d.iter().enumerate() {
        if let Some(dk) = dk {
            let r = (dk - rhs(k)).norm() / (1.0 + values[k].norm());
            worst = worst.max(if r.is_nan() { f64::INFINITY } else { r });
        }
    }
    // constant paths on very short grids have no interior points; check the equation itself
    if d.iter().all(|x| x.is_none()) {
        for (k, v) in values.iter().enumerate() {
            worst = worst.max(rhs(k).norm() / (1.0 + v.norm()));
        }
    }
    ResidualReport::new(tag, worst, grid)
}

fn constants(cfg: &ScenarioConfig, family: StrategyFamily) -> SystemConstants {
    match family {
        StrategyFamily::SocialFinite | StrategyFamily::SocialInfinite => equations::social_constants(cfg),
        StrategyFamily::ClassicalMeanField => equations::classical_constants(cfg),
        _ => equations::game_constants(cfg),
    }
}

/// Residuals of every equation the bundle claims to solve.
pub fn riccati_residual(bundle: &RiccatiBundle, cfg: &ScenarioConfig) -> Vec<ResidualReport> {
    let grid = bundle.grid;
    let mut out = Vec::new();
    if let Some(h) = &bundle.hetero {
        let hc = equations::hetero_constants(cfg, h.alpha);
        let y: Vec<&MatrixPath> = vec![&h.k1, &h.pi11, &h.pi1j, &h.kj, &h.pij1, &h.pijj];
        let tags = ["K1", "Pi11", "Pi1j", "Kj", "Pij1", "Pijj"];
        let rhs: Vec<Vec<DMatrix<f64>>> = (0..grid.len())
            .map(|k| {
                let state: Vec<DMatrix<f64>> = y.iter().map(|p| p.at(k).clone()).collect();
                equations::hetero_dot(cfg, &hc, &state)
            })
            .collect();
        for (c, tag) in tags.iter().enumerate() {
            out.push(path_residual(tag, grid, &y[c].values, |k| rhs[k][c].clone()));
        }
        return out;
    }
    if let Some(c) = &bundle.coupled {
        let s_m: Vec<DMatrix<f64>> = c.s.values.iter().map(col).collect();
        let rhs: Vec<Vec<DMatrix<f64>>> = (0..grid.len())
            .map(|k| equations::coupled_dot(cfg, &[c.k.at(k).clone(), c.pi.at(k).clone(), s_m[k].clone()], grid.time(k)))
            .collect();
        out.push(path_residual("K_coupled", grid, &c.k.values, |k| rhs[k][0].clone()));
        out.push(path_residual("Pi_coupled", grid, &c.pi.values, |k| rhs[k][1].clone()));
        out.push(path_residual("s_coupled", grid, &s_m, |k| rhs[k][2].clone()));
        return out;
    }
    let sc = constants(cfg, bundle.family);
    let pi = bundle.mean_weight();
    let p = bundle.p_path();
    let s_m: Vec<DMatrix<f64>> = bundle.s.values.iter().map(col).collect();
    out.push(path_residual("K", grid, &bundle.k.values, |k| equations::k_dot(cfg, bundle.k.at(k), &sc.w_k)));
    out.push(path_residual("Pi", grid, &pi.values, |k| equations::pi_dot(cfg, &k_parts(cfg, bundle.k.at(k)), pi.at(k), &sc.c_pi)));
    out.push(path_residual("P", grid, &p.values, |k| equations::p_dot(cfg, bundle.k.at(k), p.at(k), &sc.w_p())));
    out.push(path_residual("s", grid, &s_m, |k| {
        let kk = bundle.k.at(k);
        col(&equations::s_dot(cfg, kk, &k_parts(cfg, kk), pi.at(k), bundle.s.at(k), &sc.eta_weight, grid.time(k)))
    }));
    if let Some(fp) = &bundle.fixed_point {
        out.push(ResidualReport::new("phi", fp.residual_phi, grid));
        out.push(ResidualReport::new("xbar", fp.residual_xbar_upsilon, grid));
    }
    out
}

/// Residuals of the heterogeneous paths against the alternative Π
/// equations (reported, not asserted).
pub fn hetero_alternative_residuals(bundle: &RiccatiBundle, cfg: &ScenarioConfig) -> Vec<ResidualReport> {
    let Some(h) = &bundle.hetero else { return Vec::new() };
    let grid = bundle.grid;
    let hc = equations::hetero_constants(cfg, h.alpha);
    let y: Vec<&MatrixPath> = vec![&h.k1, &h.pi11, &h.pi1j, &h.kj, &h.pij1, &h.pijj];
    let tags = ["K1_alt", "Pi11_alt", "Pi1j_alt", "Kj_alt", "Pij1_alt", "Pijj_alt"];
    let rhs: Vec<Vec<DMatrix<f64>>> = (0..grid.len())
        .map(|k| equations::hetero_dot_alternative(cfg, &hc, &y.iter().map(|p| p.at(k).clone()).collect::<Vec<_>>()))
        .collect();
    tags.iter().enumerate().map(|(c, tag)| path_residual(tag, grid, &y[c].values, |k| rhs[k][c].clone())).collect()
}

/// Monte Carlo gap along one deviation direction and magnitude.
#[derive(Clone, Debug, Serialize)]
pub struct DirectionGap {
    pub direction: usize,
    pub eps: f64,
    /// Mean of `(J(+ε) − J(−ε)) / 2ε`.
    pub first_order: f64,
    pub first_order_stderr: f64,
    /// Mean of `(J(+ε) + J(−ε) − 2J(0)) / ε²`.
    pub curvature: f64,
    pub curvature_stderr: f64,
    pub passes: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct StationarityReport {
    /// `None` for the social (team) objective.
    pub agent: Option<usize>,
    pub directions: usize,
    pub max_first_order: f64,
    pub min_second_order_gain: f64,
    pub baseline: CostEstimate,
    /// Every direction has `|first order| ≤ 3·stderr` and curvature `≥ −3·stderr`.
    pub passes: bool,
    /// Looser variant where the first-order bound is scaled by `1 + |J(0)|`.
    pub passes_scaled: bool,
    pub gaps: Vec<DirectionGap>,
    /// Per-direction `ε → 0` limit of the first-order difference, from the two
    /// smallest distinct nonzero magnitudes (empty with fewer than two).
    pub extrapolated: Vec<ExtrapolatedGap>,
    /// Every extrapolated first order is within 3·stderr of zero.
    pub passes_extrapolated: bool,
}

/// First-order difference with its `O(ε²)` bias removed: with
/// `g(ε) = g₀ + cε²` per path, `g₀ = (g(ε₁)ε₂² − g(ε₂)ε₁²)/(ε₂² − ε₁²)`.
#[derive(Clone, Debug, Serialize)]
pub struct ExtrapolatedGap {
    pub direction: usize,
    pub eps: (f64, f64),
    pub first_order: f64,
    pub first_order_stderr: f64,
    pub passes: bool,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let e = CostEstimate::from_samples(v, 0.0);
    (e.value, e.stderr)
}

fn directions_for(g: &AgentGains, seed: u64) -> Vec<AgentGains> {
    let canon = g.canonical_directions();
    if canon.len() <= MAX_DIRECTIONS {
        return canon;
    }
    // random orthonormal combinations of the canonical basis
    let d = canon.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    while basis.len() < MAX_DIRECTIONS {
        let mut v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= dot * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let zero = g.zeros_like();
    basis
        .iter()
        .map(|coef| coef.iter().zip(&canon).fold(zero.clone(), |acc, (c, dir)| acc.offset(dir, *c)))
        .collect()
}

fn analyze(agent: Option<usize>, costs: &[Vec<f64>], n_dirs: usize, eps: &[f64], infinite_tail: f64) -> StationarityReport {
    let base = &costs[0];
    let baseline = CostEstimate { tail_bound: infinite_tail, ..CostEstimate::from_samples(base, 0.0) };
    let mut gaps = Vec::new();
    let mut samples = Vec::new();
    let mut idx = 1;
    for dir in 0..n_dirs {
        for &e in eps {
            let (plus, minus) = (&costs[idx], &costs[idx + 1]);
            idx += 2;
            if e == 0.0 {
                gaps.push(DirectionGap { direction: dir, eps: e, first_order: 0.0, first_order_stderr: 0.0, curvature: 0.0, curvature_stderr: 0.0, passes: true });
                continue;
            }
            let fo: Vec<f64> = plus.iter().zip(minus).map(|(p, m)| (p - m) / (2.0 * e)).collect();
            let cu: Vec<f64> = plus.iter().zip(minus).zip(base).map(|((p, m), b)| (p + m - 2.0 * b) / (e * e)).collect();
            let (f, fs) = mean_se(&fo);
            let (c, cs) = mean_se(&cu);
            let passes = f.abs() <= STAT_SIGMAS * fs && c >= -STAT_SIGMAS * cs;
            gaps.push(DirectionGap { direction: dir, eps: e, first_order: f, first_order_stderr: fs, curvature: c, curvature_stderr: cs, passes });
            samples.push((dir, e, fo));
        }
    }
    let mut mags: Vec<f64> = eps.iter().map(|e| e.abs()).filter(|e| *e > 0.0).collect();
    mags.sort_by(|a, b| a.total_cmp(b));
    mags.dedup();
    let mut extrapolated = Vec::new();
    if let [e1, e2, ..] = mags[..] {
        for dir in 0..n_dirs {
            let pick = |m: f64| samples.iter().find(|(d, e, _)| *d == dir && e.abs() == m).map(|(_, _, v)| v).unwrap();
            let (g1, g2) = (pick(e1), pick(e2));
            let g0: Vec<f64> = g1.iter().zip(g2).map(|(a, b)| (a * e2 * e2 - b * e1 * e1) / (e2 * e2 - e1 * e1)).collect();
            let (f, fs) = mean_se(&g0);
            extrapolated.push(ExtrapolatedGap { direction: dir, eps: (e1, e2), first_order: f, first_order_stderr: fs, passes: f.abs() <= STAT_SIGMAS * fs });
        }
    }
    let passes_extrapolated = extrapolated.iter().all(|g| g.passes);
    let j0 = baseline.value.abs();
    let max_first_order = gaps.iter().map(|g| g.first_order.abs()).fold(0.0, f64::max);
    let min_second_order_gain = gaps.iter().filter(|g| g.eps != 0.0).map(|g| g.curvature).fold(f64::INFINITY, f64::min);
    let passes = gaps.iter().all(|g| g.passes);
    let passes_scaled = gaps.iter().all(|g| {
        g.first_order.abs() <= STAT_SIGMAS * g.first_order_stderr * (1.0 + j0) && g.curvature >= -STAT_SIGMAS * g.curvature_stderr
    });
    StationarityReport { agent, directions: n_dirs, max_first_order, min_second_order_gain, baseline, passes, passes_scaled, gaps, extrapolated, passes_extrapolated }
}

/// Gain-space stationarity of agent `agent`'s law with every other agent fixed.
pub fn nash_stationarity_gap(
    cfg: &ScenarioConfig,
    gains: &GainSchedule,
    flow: &MeanFlow,
    agent: usize,
    opts: &SimOptions,
    eps: &[f64],
) -> Result<StationarityReport> {
    let own = gains.for_agent(agent);
    let dirs = directions_for(own, opts.seed);
    let mut variants = vec![own.clone()];
    for d in &dirs {
        for &e in eps {
            variants.push(own.offset(d, e));
            variants.push(own.offset(d, -e));
        }
    }
    let rep = simulate::unilateral_replay(cfg, gains, flow, agent, &variants, opts)?;
    Ok(analyze(Some(agent), &rep.costs, dirs.len(), eps, 0.0))
}

fn shift_all(gains: &GainSchedule, dir: &AgentGains, e: f64, dom_dir: Option<&AgentGains>) -> GainSchedule {
    let mut g = gains.clone();
    g.representative = gains.representative.offset(dir, e);
    if let (Some(d), Some(dd)) = (&gains.dominant, dom_dir) {
        g.dominant = Some(d.offset(dd, e));
    }
    g
}

/// Team stationarity of the social cost `Σᵢ Jᵢ` when every agent's law is
/// shifted along the same direction.
pub fn social_stationarity_gap(cfg: &ScenarioConfig, gains: &GainSchedule, flow: &MeanFlow, opts: &SimOptions, eps: &[f64]) -> Result<StationarityReport> {
    let dirs = directions_for(&gains.representative, opts.seed);
    let dom_dirs = gains.dominant.as_ref().map(|d| directions_for(d, opts.seed));
    let mut variants = vec![gains.clone()];
    for (i, d) in dirs.iter().enumerate() {
        let dd = dom_dirs.as_ref().and_then(|v| v.get(i));
        for &e in eps {
            variants.push(shift_all(gains, d, e, dd));
            variants.push(shift_all(gains, d, -e, dd));
        }
    }
    let rep = simulate::joint_replay(cfg, &variants, flow, opts)?;
    Ok(analyze(None, &rep.costs, dirs.len(), eps, 0.0))
}

/// Copy of `gains` with every `F_own` scaled by `factor` (negative control).
pub fn scaled_own_gains(gains: &GainSchedule, factor: f64) -> GainSchedule {
    let mut g = gains.clone();
    g.representative = g.representative.scale_own(factor);
    if let Some(d) = &g.dominant {
        g.dominant = Some(d.scale_own(factor));
    }
    g
}

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub n_agents: usize,
    pub k_diff: f64,
    pub pi_diff: f64,
    pub s_diff: f64,
}

impl ConvergenceRow {
    pub fn total(&self) -> f64 {
        self.k_diff + self.pi_diff + self.s_diff
    }
}

/// Sup-norm distances of the N-agent game solution from the classical
/// mean-field solution, per population size.
pub fn mf_convergence_study(cfg_base: &ScenarioConfig, n_list: &[usize], grid: TimeGrid) -> Result<Vec<ConvergenceRow>> {
    let classical = riccati::solve_classical_mf(&cfg_base.with_family(StrategyFamily::ClassicalMeanField), grid)?;
    let game_family = if cfg_base.horizon.is_infinite() { StrategyFamily::GameInfinite } else { StrategyFamily::GameHomogeneousFinite };
    let c_pi = classical.mean_weight();
    n_list
        .iter()
        .map(|&n| {
            let cfg = cfg_base.with_agents(n).with_family(game_family);
            let b = riccati::solve(&cfg, grid)?;
            Ok(ConvergenceRow {
                n_agents: n,
                k_diff: b.k.sup_distance(&classical.k),
                pi_diff: b.mean_weight().sup_distance(&c_pi),
                s_diff: b.s.sup_distance(&classical.s),
            })
        })
        .collect()
}

/// True when the totals strictly decrease along the table.
pub fn strictly_decreasing(rows: &[ConvergenceRow]) -> bool {
    rows.windows(2).all(|w| w[1].total() < w[0].total())
}

#[derive(Clone, Debug, Serialize)]
pub struct CostCrossCheck {
    pub closed_form: f64,
    pub simulated: CostEstimate,
    pub passes: bool,
}

/// Closed-form social cost against the Monte Carlo estimate of the
/// simulated social optimum.
pub fn cost_formula_cross_check(cfg: &ScenarioConfig, bundle: &RiccatiBundle, gains: &GainSchedule, flow: &MeanFlow, opts: &SimOptions) -> Result<CostCrossCheck> {
    if bundle.family != StrategyFamily::SocialFinite {
        return Err(Error::Unsupported(format!("cost cross-check for {}", bundle.family.name())));
    }
    let closed_form = simulate::social_cost_closed_form(cfg, bundle);
    let ens = simulate::simulate_ensemble(cfg, gains, flow, opts)?;
    let simulated = simulate::estimate_cost(&ens, CostTarget::Social)?;
    let passes = (closed_form - simulated.value).abs() <= STAT_SIGMAS * simulated.stderr + RES_SLACK;
    Ok(CostCrossCheck { closed_form, simulated, passes })
}
