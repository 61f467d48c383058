//! Euler–Maruyama Monte Carlo for the N-agent closed loop, discounted cost
//! estimation, common-random-number replays and consensus metrics.
//!
//! Every `(path, agent)` pair owns an independent ChaCha8 stream, so any agent
//! can be replayed alone with exactly the noise it saw in the full run.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ScenarioConfig, TimeGrid};
use crate::riccati::ode::ESCAPE_BOUND;
use crate::riccati::RiccatiBundle;
use crate::synthesis::{AgentGains, CoupledGains, GainSchedule, MeanFlow};

/// Share of discarded (escaping) paths above which a run fails.
pub const MAX_DISCARD_FRACTION: f64 = 0.01;
/// Largest state dimension the simulator accepts.
pub const MAX_STATE_DIM: usize = 16;

#[derive(Clone, Debug)]
pub struct SimOptions {
    pub paths: usize,
    pub seed: u64,
    /// Number of leading paths whose states, controls and increments are kept.
    pub record_paths: usize,
    /// Stride of the population summary series (0 disables it).
    pub thin: usize,
    /// Per-agent seed override; agent `i` then draws from `agent_seeds[i]`.
    pub agent_seeds: Option<Vec<u64>>,
}

impl SimOptions {
    pub fn new(paths: usize, seed: u64) -> Self {
        SimOptions { paths, seed, record_paths: 0, thin: 0, agent_seeds: None }
    }

    pub fn record(mut self, record_paths: usize) -> Self {
        self.record_paths = record_paths;
        self
    }

    pub fn thin(mut self, thin: usize) -> Self {
        self.thin = thin;
        self
    }
}

/// Full trajectory of one path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    pub path: usize,
    /// `[agent][k][n]`
    pub states: Vec<f64>,
    /// `[agent][k][r]`
    pub controls: Vec<f64>,
    /// `[agent][k]`, `k < steps`
    pub dw: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    pub cfg_hash: u64,
    pub seed: u64,
    pub paths: usize,
    pub grid: TimeGrid,
    pub n_agents: usize,
    pub n: usize,
    pub r: usize,
    pub alpha: Vec<f64>,
    pub rho: f64,
    pub infinite: bool,
    /// Indices of the paths that stayed bounded.
    pub kept: Vec<usize>,
    pub discarded: usize,
    /// Discounted cost, `[kept path][agent]`.
    pub costs: Vec<f64>,
    /// Mean undiscounted integrand over the last decile of the window, `[kept path][agent]`.
    pub tail_integrand: Vec<f64>,
    pub records: Vec<PathRecord>,
    pub summary_times: Vec<f64>,
    /// Weighted population average, `[kept path][summary time][n]`.
    pub pop_avg: Vec<f64>,
    /// `(1/N) Σᵢ ‖xᵢ − x^{(α)}‖²`, `[kept path][summary time]`.
    pub dispersion: Vec<f64>,
}

impl Ensemble {
    pub fn state(&self, rec: &PathRecord, agent: usize, k: usize) -> DVector<f64> {
        let off = (agent * self.grid.len() + k) * self.n;
        DVector::from_column_slice(&rec.states[off..off + self.n])
    }

    pub fn control(&self, rec: &PathRecord, agent: usize, k: usize) -> DVector<f64> {
        let off = (agent * self.grid.len() + k) * self.r;
        DVector::from_column_slice(&rec.controls[off..off + self.r])
    }

    pub fn increment(&self, rec: &PathRecord, agent: usize, k: usize) -> f64 {
        rec.dw[agent * self.grid.steps + k]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CostEstimate {
    pub value: f64,
    pub stderr: f64,
    pub paths: usize,
    pub tail_bound: f64,
}

impl CostEstimate {
    /// Sample mean and standard error of per-path values.
    pub fn from_samples(samples: &[f64], tail_bound: f64) -> CostEstimate {
        let p = samples.len();
        let mean = samples.iter().sum::<f64>() / p.max(1) as f64;
        let var = if p > 1 { samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (p - 1) as f64 } else { 0.0 };
        CostEstimate { value: mean, stderr: (var / p.max(1) as f64).sqrt(), paths: p, tail_bound }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostTarget {
    Agent(usize),
    /// `Σᵢ Jᵢ`
    Social,
    /// `Σᵢ αᵢ Jᵢ`
    WeightedSocial,
}

// ---------------------------------------------------------------------------
// compiled plant and laws

/// Row-major flattened scenario data on the simulation grid.
struct Plant {
    n: usize,
    r: usize,
    steps: usize,
    h: f64,
    sqrt_h: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    d: Vec<f64>,
    g: Vec<f64>,
    gamma: Vec<f64>,
    q: Vec<f64>,
    rw: Vec<f64>,
    f: Vec<f64>,
    sigma: Vec<f64>,
    eta: Vec<f64>,
    /// Trapezoid weight times `e^{−ρ t_k}`.
    weight: Vec<f64>,
    tail_from: usize,
    x0_mean: Vec<f64>,
    x0_factor: Vec<f64>,
    coupled_state: bool,
}

fn flat(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            v.push(m[(i, j)]);
        }
    }
    v
}

impl Plant {
    fn new(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<Plant> {
        let n = cfg.n();
        if n > MAX_STATE_DIM {
            return Err(Error::Unsupported(format!("simulation of state dimension {n} (at most {MAX_STATE_DIM})")));
        }
        let h = grid.h();
        let mut f = Vec::with_capacity(grid.len() * n);
        let mut sigma = Vec::with_capacity(grid.len() * n);
        let mut eta = Vec::with_capacity(grid.len() * n);
        let mut weight = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            let t = grid.time(k);
            f.extend(cfg.f.eval(t).iter());
            sigma.extend(cfg.sigma.eval(t).iter());
            eta.extend(cfg.eta.eval(t).iter());
            let trap = if k == 0 || k == grid.steps { 0.5 } else { 1.0 };
            weight.push(trap * h * (-cfg.rho * t).exp());
        }
        let eig = cfg.x0_cov.clone().symmetric_eigen();
        let mut factor = eig.eigenvectors.clone();
        for j in 0..n {
            let s = eig.eigenvalues[j].max(0.0).sqrt();
            for i in 0..n {
                factor[(i, j)] *= s;
            }
        }
        Ok(Plant {
            n,
            r: cfg.r_dim(),
            steps: grid.steps,
            h,
            sqrt_h: h.sqrt(),
            a: flat(&cfg.a),
            b: flat(&cfg.b),
            c: flat(&cfg.c),
            d: flat(&cfg.d),
            g: flat(&cfg.g),
            gamma: flat(&cfg.gamma),
            q: flat(&cfg.q),
            rw: flat(&cfg.r),
            f,
            sigma,
            eta,
            weight,
            tail_from: grid.steps - grid.steps / 10,
            x0_mean: cfg.x0_mean.iter().copied().collect(),
            x0_factor: flat(&factor),
            coupled_state: cfg.g.iter().any(|&v| v != 0.0),
        })
    }

    #[inline]
    fn integrand(&self, k: usize, x: &[f64], xa: &[f64], u: &[f64]) -> f64 {
        let n = self.n;
        if n == 1 && self.r == 1 {
            let e = x[0] - self.gamma[0] * xa[0] - self.eta[k];
            return self.q[0] * e * e + self.rw[0] * u[0] * u[0];
        }
        let mut e = [0.0f64; MAX_STATE_DIM];
        let e = &mut e[..n];
        for i in 0..n {
            let mut gx = 0.0;
            for j in 0..n {
                gx += self.gamma[i * n + j] * xa[j];
            }
            e[i] = x[i] - gx - self.eta[k * n + i];
        }
        quad(&self.q, e) + quad(&self.rw, u)
    }
}

fn quad(m: &[f64], v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[i * n + j] * v[j];
        }
        s += v[i] * row;
    }
    s
}

/// `out = m·x` for row-major `m` of shape `rows × x.len()`.
#[inline]
fn matvec_add(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &m[i * cols..(i + 1) * cols];
        let mut s = 0.0;
        for j in 0..cols {
            s += row[j] * x[j];
        }
        *o += s;
    }
}

/// One Euler–Maruyama step `x ← x + h(Ax + Bu + G x̄ + f) + (Cx + Du + σ)ΔW`
/// at grid index `k`.
#[allow(clippy::too_many_arguments)]
#[inline]
fn em_step_flat(p: &Plant, k: usize, x: &mut [f64], u: &[f64], xa: &[f64], dw: f64) {
    let n = p.n;
    if n == 1 && p.r == 1 {
        let (x0, u0) = (x[0], u[0]);
        let drift = p.a[0] * x0 + p.b[0] * u0 + if p.coupled_state { p.g[0] * xa[0] } else { 0.0 };
        let diff = p.c[0] * x0 + p.d[0] * u0 + p.sigma[k];
        x[0] = x0 + p.h * (drift + p.f[k]) + diff * dw;
        return;
    }
    let mut drift = [0.0f64; MAX_STATE_DIM];
    let mut diff = [0.0f64; MAX_STATE_DIM];
    let drift = &mut drift[..n];
    let diff = &mut diff[..n];
    matvec_add(&p.a, x, drift);
    matvec_add(&p.b, u, drift);
    if p.coupled_state {
        matvec_add(&p.g, xa, drift);
    }
    matvec_add(&p.c, x, diff);
    matvec_add(&p.d, u, diff);
    for i in 0..n {
        x[i] += p.h * (drift[i] + p.f[k * n + i]) + (diff[i] + p.sigma[k * n + i]) * dw;
    }
}

/// Public Euler–Maruyama step on `cfg` using the same arithmetic as the
/// simulator (the coupling term uses `x_avg`).
pub fn euler_maruyama_step(
    cfg: &ScenarioConfig,
    grid: TimeGrid,
    k: usize,
    x: &DVector<f64>,
    u: &DVector<f64>,
    x_avg: &DVector<f64>,
    dw: f64,
) -> Result<DVector<f64>> {
    let p = Plant::new(cfg, grid)?;
    let mut out: Vec<f64> = x.iter().copied().collect();
    em_step_flat(&p, k, &mut out, u.as_slice(), x_avg.as_slice(), dw);
    Ok(DVector::from_vec(out))
}

/// Per-step arrays of one agent class's law with the deterministic mean terms
/// already folded into `offset`.
#[derive(Clone)]
struct Law {
    own: Vec<f64>,
    offset: Vec<f64>,
    coupled: Option<CoupledLaw>,
}

#[derive(Clone)]
struct CoupledLaw {
    f2: Vec<f64>,
    ji: Vec<f64>,
    jj: Vec<f64>,
    /// `A + G/N`, `A + (N−1)/N·G`, `G/N`, `(N−1)/N·G`
    a_i: Vec<f64>,
    a_j: Vec<f64>,
    g_i: Vec<f64>,
    g_j: Vec<f64>,
}

fn compile_law(p: &Plant, cfg: &ScenarioConfig, g: &AgentGains, coupled: Option<&CoupledGains>, flow: &MeanFlow) -> Result<Law> {
    if g.f_own.values.len() != p.steps + 1 || flow.mean.values.len() != p.steps + 1 {
        return Err(Error::Dimension("gain schedule and mean flow must share the simulation grid".into()));
    }
    let mut own = Vec::with_capacity((p.steps + 1) * p.r * p.n);
    let mut offset = Vec::with_capacity((p.steps + 1) * p.r);
    for k in 0..=p.steps {
        own.extend(flat(g.f_own.at(k)));
        let mut c = g.bias.at(k).clone();
        if coupled.is_none() {
            c += g.f_mean.at(k) * flow.mean.at(k);
            if let (Some(f2), Some(m2)) = (&g.f_mean2, &flow.mean2) {
                c += f2.at(k) * m2.at(k);
            }
        }
        offset.extend(c.iter());
    }
    let coupled = coupled.map(|cg| {
        let nn = cfg.n_agents as f64;
        let stack = |m: &crate::riccati::MatrixPath| m.values.iter().flat_map(flat).collect::<Vec<f64>>();
        CoupledLaw {
            f2: stack(g.f_mean2.as_ref().expect("coupled law has f_mean2")),
            ji: stack(&cg.f_ji),
            jj: stack(&cg.f_jj),
            a_i: flat(&(&cfg.a + &cfg.g / nn)),
            a_j: flat(&(&cfg.a + &cfg.g * ((nn - 1.0) / nn))),
            g_i: flat(&(&cfg.g / nn)),
            g_j: flat(&(&cfg.g * ((nn - 1.0) / nn))),
        }
    });
    Ok(Law { own, offset, coupled })
}

/// Per-agent mutable state: `x`, plus the conditional-mean filter for the
/// coupled family.
struct AgentState {
    x: Vec<f64>,
    xi: Vec<f64>,
    xj: Vec<f64>,
    u: Vec<f64>,
}

impl AgentState {
    fn new(x0: &[f64], p: &Plant) -> Self {
        AgentState { x: x0.to_vec(), xi: x0.to_vec(), xj: p.x0_mean.clone(), u: vec![0.0; p.r] }
    }

    #[inline]
    fn control(&mut self, p: &Plant, law: &Law, k: usize) {
        let (n, r) = (p.n, p.r);
        if n == 1 && r == 1 && law.coupled.is_none() {
            self.u[0] = law.offset[k] + law.own[k] * self.x[0];
            return;
        }
        self.u.copy_from_slice(&law.offset[k * r..(k + 1) * r]);
        let block = k * r * n..(k + 1) * r * n;
        match &law.coupled {
            None => matvec_add(&law.own[block], &self.x, &mut self.u),
            Some(c) => {
                matvec_add(&law.own[block.clone()], &self.xi, &mut self.u);
                matvec_add(&c.f2[block], &self.xj, &mut self.u);
            }
        }
    }

    #[inline]
    fn step(&mut self, p: &Plant, law: &Law, k: usize, xa: &[f64], dw: f64) {
        if let Some(c) = &law.coupled {
            let (n, r) = (p.n, p.r);
            let block = k * r * n..(k + 1) * r * n;
            let mut uj = law.offset[k * r..(k + 1) * r].to_vec();
            matvec_add(&c.ji[block.clone()], &self.xi, &mut uj);
            matvec_add(&c.jj[block], &self.xj, &mut uj);
            let mut di = vec![0.0; n];
            let mut dj = vec![0.0; n];
            let mut sd = vec![0.0; n];
            matvec_add(&c.a_i, &self.xi, &mut di);
            matvec_add(&c.g_j, &self.xj, &mut di);
            matvec_add(&p.b, &self.u, &mut di);
            matvec_add(&c.a_j, &self.xj, &mut dj);
            matvec_add(&c.g_i, &self.xi, &mut dj);
            matvec_add(&p.b, &uj, &mut dj);
            matvec_add(&p.c, &self.xi, &mut sd);
            for i in 0..n {
                let f = p.f[k * n + i];
                self.xi[i] += p.h * (di[i] + f) + (sd[i] + p.sigma[k * n + i]) * dw;
                self.xj[i] += p.h * (dj[i] + f);
            }
        }
        em_step_flat(p, k, &mut self.x, &self.u, xa, dw);
    }

    #[inline]
    fn escaped(&self) -> bool {
        self.x.iter().any(|v| !v.is_finite() || v.abs() > ESCAPE_BOUND)
    }
}

/// Initial state and scaled Brownian increments of one `(path, agent)` stream.
fn draw_noise(p: &Plant, seed: u64, path: usize, agent: usize, x0: &mut [f64], dw: &mut [f64]) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((path as u64) << 16) | agent as u64);
    let n = p.n;
    let z: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    for i in 0..n {
        let mut v = p.x0_mean[i];
        for j in 0..n {
            v += p.x0_factor[i * n + j] * z[j];
        }
        x0[i] = v;
    }
    for w in dw.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *w = p.sqrt_h * z;
    }
}

/// Initial states of every agent on `path`, identical to those the
/// simulator draws for that path.
pub fn initial_states(cfg: &ScenarioConfig, seed: u64, path: usize) -> Result<Vec<DVector<f64>>> {
    let grid = TimeGrid::new(1.0, 2)?;
    let p = Plant::new(cfg, grid)?;
    let mut x0 = vec![0.0; p.n];
    let mut dw = [0.0; 0];
    Ok((0..cfg.n_agents)
        .map(|i| {
            draw_noise(&p, seed, path, i, &mut x0, &mut dw);
            DVector::from_column_slice(&x0)
        })
        .collect())
}

struct PathNoise {
    x0: Vec<f64>,
    dw: Vec<f64>,
}

fn path_noise(p: &Plant, opts: &SimOptions, path: usize, n_agents: usize, buf: &mut PathNoise) {
    for i in 0..n_agents {
        let seed = opts.agent_seeds.as_ref().map_or(opts.seed, |s| s[i]);
        let (x0, dw) = (&mut buf.x0[i * p.n..(i + 1) * p.n], &mut buf.dw[i * p.steps..(i + 1) * p.steps]);
        draw_noise(p, seed, path, i, x0, dw);
    }
}

struct PathResult {
    costs: Vec<f64>,
    tail: Vec<f64>,
}

/// Runs one path of all agents. `observe(k, agents, xa)` is called at every grid index.
fn run_agents(
    p: &Plant,
    laws: &[&Law],
    alpha: &[f64],
    noise: &PathNoise,
    mut observe: impl FnMut(usize, &[AgentState], &[f64]),
) -> Option<PathResult> {
    let n = p.n;
    let na = laws.len();
    let mut agents: Vec<AgentState> = (0..na).map(|i| AgentState::new(&noise.x0[i * n..(i + 1) * n], p)).collect();
    let mut costs = vec![0.0; na];
    let mut tail = vec![0.0; na];
    let mut xa = vec![0.0; n];
    for k in 0..=p.steps {
        xa.iter_mut().for_each(|v| *v = 0.0);
        for (ag, &w) in agents.iter().zip(alpha) {
            for j in 0..n {
                xa[j] += w * ag.x[j];
            }
        }
        for (i, ag) in agents.iter_mut().enumerate() {
            ag.control(p, laws[i], k);
            let l = p.integrand(k, &ag.x, &xa, &ag.u);
            costs[i] += p.weight[k] * l;
            if k >= p.tail_from {
                tail[i] += l;
            }
        }
        observe(k, &agents, &xa);
        if k == p.steps {
            break;
        }
        for (i, ag) in agents.iter_mut().enumerate() {
            ag.step(p, laws[i], k, &xa, noise.dw[i * p.steps + k]);
            if ag.escaped() {
                return None;
            }
        }
    }
    let tail_len = (p.steps + 1 - p.tail_from) as f64;
    tail.iter_mut().for_each(|v| *v /= tail_len);
    Some(PathResult { costs, tail })
}

/// Runs agent `i` alone against a fixed stored `others = Σ_{j≠i} αⱼxⱼ`.
fn run_single(p: &Plant, law: &Law, alpha_i: f64, x0: &[f64], dw: &[f64], others: &[f64]) -> Option<f64> {
    let n = p.n;
    let mut ag = AgentState::new(x0, p);
    let mut cost = 0.0;
    let mut xa = vec![0.0; n];
    for k in 0..=p.steps {
        for j in 0..n {
            xa[j] = others[k * n + j] + alpha_i * ag.x[j];
        }
        ag.control(p, law, k);
        cost += p.weight[k] * p.integrand(k, &ag.x, &xa, &ag.u);
        if k == p.steps {
            break;
        }
        ag.step(p, law, k, &xa, dw[k]);
        if ag.escaped() {
            return None;
        }
    }
    Some(cost)
}

fn compile_schedule(p: &Plant, cfg: &ScenarioConfig, gains: &GainSchedule, flow: &MeanFlow) -> Result<Vec<Law>> {
    let rep = compile_law(p, cfg, &gains.representative, gains.coupled.as_ref(), flow)?;
    let mut laws = vec![rep; cfg.n_agents];
    if let Some(d) = &gains.dominant {
        laws[0] = compile_law(p, cfg, d, None, flow)?;
    }
    Ok(laws)
}

fn check_discards(discarded: usize, paths: usize) -> Result<()> {
    if discarded as f64 > MAX_DISCARD_FRACTION * paths as f64 {
        Err(Error::Numerical(format!("{discarded} of {paths} paths escaped")))
    } else {
        Ok(())
    }
}

/// Simulates `opts.paths` independent closed-loop paths of all agents.
pub fn simulate_ensemble(cfg: &ScenarioConfig, gains: &GainSchedule, flow: &MeanFlow, opts: &SimOptions) -> Result<Ensemble> {
    if opts.paths < 2 {
        return Err(Error::InvalidScenario("at least 2 paths are required".into()));
    }
    let grid = gains.grid;
    let p = Plant::new(cfg, grid)?;
    let laws = compile_schedule(&p, cfg, gains, flow)?;
    let law_refs: Vec<&Law> = laws.iter().collect();
    let na = cfg.n_agents;
    let (n, r) = (p.n, p.r);
    let mut noise = PathNoise { x0: vec![0.0; na * n], dw: vec![0.0; na * p.steps] };
    let summary_idx: Vec<usize> = if opts.thin > 0 { (0..=p.steps).step_by(opts.thin).collect() } else { Vec::new() };
    let mut ens = Ensemble {
        cfg_hash: cfg.digest(),
        seed: opts.seed,
        paths: opts.paths,
        grid,
        n_agents: na,
        n,
        r,
        alpha: cfg.alpha.clone(),
        rho: cfg.rho,
        infinite: cfg.horizon.is_infinite(),
        kept: Vec::new(),
        discarded: 0,
        costs: Vec::new(),
        tail_integrand: Vec::new(),
        records: Vec::new(),
        summary_times: summary_idx.iter().map(|&k| grid.time(k)).collect(),
        pop_avg: Vec::new(),
        dispersion: Vec::new(),
    };
    for path in 0..opts.paths {
        path_noise(&p, opts, path, na, &mut noise);
        let record = path < opts.record_paths;
        let mut rec = PathRecord {
            path,
            states: if record { vec![0.0; na * grid.len() * n] } else { Vec::new() },
            controls: if record { vec![0.0; na * grid.len() * r] } else { Vec::new() },
            dw: if record { noise.dw.clone() } else { Vec::new() },
        };
        let mut avg = Vec::with_capacity(summary_idx.len() * n);
        let mut disp = Vec::with_capacity(summary_idx.len());
        let thin = opts.thin;
        let res = run_agents(&p, &law_refs, &cfg.alpha, &noise, |k, agents, xa| {
            if record {
                for (i, ag) in agents.iter().enumerate() {
                    let so = (i * grid.len() + k) * n;
                    rec.states[so..so + n].copy_from_slice(&ag.x);
                    let co = (i * grid.len() + k) * r;
                    rec.controls[co..co + r].copy_from_slice(&ag.u);
                }
            }
            if thin > 0 && k % thin == 0 {
                avg.extend_from_slice(xa);
                let d: f64 = agents.iter().map(|ag| ag.x.iter().zip(xa).map(|(a, b)| (a - b).powi(2)).sum::<f64>()).sum();
                disp.push(d / agents.len() as f64);
            }
        });
        match res {
            Some(res) => {
                ens.kept.push(path);
                ens.costs.extend(res.costs);
                ens.tail_integrand.extend(res.tail);
                ens.pop_avg.extend(avg);
                ens.dispersion.extend(disp);
                if record {
                    ens.records.push(rec);
                }
            }
            None => ens.discarded += 1,
        }
    }
    check_discards(ens.discarded, opts.paths)?;
    Ok(ens)
}

fn tail_bound(infinite: bool, rho: f64, t_end: f64, tails: &[f64]) -> f64 {
    if !infinite || rho <= 0.0 || tails.is_empty() {
        return 0.0;
    }
    let mean = tails.iter().sum::<f64>() / tails.len() as f64;
    (-rho * t_end).exp() * mean / rho
}

/// Monte Carlo estimate of an agent's or the population's discounted cost.
pub fn estimate_cost(ens: &Ensemble, target: CostTarget) -> Result<CostEstimate> {
    let na = ens.n_agents;
    let weights: Vec<f64> = match target {
        CostTarget::Agent(i) if i < na => (0..na).map(|j| if j == i { 1.0 } else { 0.0 }).collect(),
        CostTarget::Agent(i) => return Err(Error::Dimension(format!("agent {i} out of range"))),
        CostTarget::Social => vec![1.0; na],
        CostTarget::WeightedSocial => ens.alpha.clone(),
    };
    let fold = |v: &[f64]| -> Vec<f64> { v.chunks(na).map(|c| c.iter().zip(&weights).map(|(a, w)| a * w).sum()).collect() };
    let samples = fold(&ens.costs);
    let tails = fold(&ens.tail_integrand);
    Ok(CostEstimate::from_samples(&samples, tail_bound(ens.infinite, ens.rho, ens.grid.t_end, &tails)))
}

/// Per-variant, per-path costs from a common-random-number replay.
#[derive(Clone, Debug)]
pub struct ReplayCosts {
    /// `[variant][kept path]`
    pub costs: Vec<Vec<f64>>,
    pub discarded: usize,
}

/// Replays agent `agent` under each law in `variants` while every other agent
/// keeps its law from `gains`. Other agents are simulated once per path; the
/// deviating agent reuses its own cached noise in every variant.
pub fn unilateral_replay(
    cfg: &ScenarioConfig,
    gains: &GainSchedule,
    flow: &MeanFlow,
    agent: usize,
    variants: &[AgentGains],
    opts: &SimOptions,
) -> Result<ReplayCosts> {
    let grid = gains.grid;
    let p = Plant::new(cfg, grid)?;
    let na = cfg.n_agents;
    if agent >= na {
        return Err(Error::Dimension(format!("agent {agent} out of range")));
    }
    let base = compile_schedule(&p, cfg, gains, flow)?;
    let coupled = gains.coupled.as_ref();
    let var_laws: Vec<Law> = variants.iter().map(|v| compile_law(&p, cfg, v, coupled, flow)).collect::<Result<_>>()?;
    let n = p.n;
    let mut noise = PathNoise { x0: vec![0.0; na * n], dw: vec![0.0; na * p.steps] };
    let mut out = ReplayCosts { costs: vec![Vec::with_capacity(opts.paths); variants.len()], discarded: 0 };
    let mut others = vec![0.0; grid.len() * n];
    let a_i = cfg.alpha[agent];
    for path in 0..opts.paths {
        path_noise(&p, opts, path, na, &mut noise);
        let mut row = Vec::with_capacity(variants.len());
        if p.coupled_state {
            // the deviation feeds back into everyone's state: full re-simulation
            for law in &var_laws {
                let mut refs: Vec<&Law> = base.iter().collect();
                refs[agent] = law;
                match run_agents(&p, &refs, &cfg.alpha, &noise, |_, _, _| {}) {
                    Some(res) => row.push(res.costs[agent]),
                    None => break,
                }
            }
        } else {
            let refs: Vec<&Law> = base.iter().collect();
            let ok = run_agents(&p, &refs, &cfg.alpha, &noise, |k, agents, xa| {
                for j in 0..n {
                    others[k * n + j] = xa[j] - a_i * agents[agent].x[j];
                }
            });
            if ok.is_some() {
                let x0 = &noise.x0[agent * n..(agent + 1) * n];
                let dw = &noise.dw[agent * p.steps..(agent + 1) * p.steps];
                for law in &var_laws {
                    match run_single(&p, law, a_i, x0, dw, &others) {
                        Some(c) => row.push(c),
                        None => break,
                    }
                }
            }
        }
        if row.len() == variants.len() {
            for (v, c) in row.into_iter().enumerate() {
                out.costs[v].push(c);
            }
        } else {
            out.discarded += 1;
        }
    }
    check_discards(out.discarded, opts.paths)?;
    Ok(out)
}

/// Replays the whole population under each schedule in `variants` with
/// common noise, returning the social cost `Σᵢ Jᵢ` per path.
pub fn joint_replay(cfg: &ScenarioConfig, variants: &[GainSchedule], flow: &MeanFlow, opts: &SimOptions) -> Result<ReplayCosts> {
    let grid = variants.first().ok_or_else(|| Error::InvalidScenario("no variants".into()))?.grid;
    let p = Plant::new(cfg, grid)?;
    let na = cfg.n_agents;
    let laws: Vec<Vec<Law>> = variants.iter().map(|g| compile_schedule(&p, cfg, g, flow)).collect::<Result<_>>()?;
    let mut noise = PathNoise { x0: vec![0.0; na * p.n], dw: vec![0.0; na * p.steps] };
    let mut out = ReplayCosts { costs: vec![Vec::with_capacity(opts.paths); variants.len()], discarded: 0 };
    for path in 0..opts.paths {
        path_noise(&p, opts, path, na, &mut noise);
        let mut row = Vec::with_capacity(variants.len());
        for l in &laws {
            let refs: Vec<&Law> = l.iter().collect();
            match run_agents(&p, &refs, &cfg.alpha, &noise, |_, _, _| {}) {
                Some(res) => row.push(res.costs.iter().sum()),
                None => break,
            }
        }
        if row.len() == variants.len() {
            for (v, c) in row.into_iter().enumerate() {
                out.costs[v].push(c);
            }
        } else {
            out.discarded += 1;
        }
    }
    check_discards(out.discarded, opts.paths)?;
    Ok(out)
}

/// Control sequence of agent `agent` on `path` when simulated in isolation
/// from its own stream (used to check decentralization).
pub fn agent_control_sequence(
    cfg: &ScenarioConfig,
    gains: &GainSchedule,
    flow: &MeanFlow,
    opts: &SimOptions,
    path: usize,
    agent: usize,
) -> Result<Vec<f64>> {
    let o = SimOptions { paths: (path + 1).max(2), record_paths: path + 1, thin: 0, ..opts.clone() };
    let ens = simulate_ensemble(cfg, gains, flow, &o)?;
    let rec = ens.records.iter().find(|r| r.path == path).ok_or_else(|| Error::Numerical("path escaped".into()))?;
    let len = ens.grid.len() * ens.r;
    Ok(rec.controls[agent * len..(agent + 1) * len].to_vec())
}

/// Closed-form social cost of the finite-horizon social optimum:
/// `Σᵢ[tr(K̂(0)Σ₀) + x̄₀ᵀP̂(0)x̄₀ + 2ŝ(0)ᵀx̄₀] + N·∫e^{−ρt} q(t) dt` with
/// `q = σᵀK̂σ + ηᵀQη − ‖Bᵀŝ + DᵀK̂σ‖²_{Υ̂⁻¹} + 2ŝᵀf`, trapezoidal in time.
pub fn social_cost_closed_form(cfg: &ScenarioConfig, bundle: &RiccatiBundle) -> f64 {
    let nn = cfg.n_agents as f64;
    let k0 = bundle.k.initial();
    let p0 = bundle.p_path().values[0].clone();
    let s0 = bundle.s.initial();
    let m0 = &cfg.x0_mean;
    let initial = (k0 * &cfg.x0_cov).trace() + (m0.transpose() * &p0 * m0)[(0, 0)] + 2.0 * s0.dot(m0);
    let grid = bundle.grid;
    let mut running = 0.0;
    for k in 0..grid.len() {
        let t = grid.time(k);
        let kk = bundle.k.at(k);
        let s = bundle.s.at(k);
        let sigma = cfg.sigma.eval(t);
        let eta = cfg.eta.eval(t);
        let ups_inv = bundle.upsilon.at(k).clone().try_inverse().unwrap_or_else(|| DMatrix::zeros(cfg.r_dim(), cfg.r_dim()));
        let v = cfg.b.transpose() * s + cfg.d.transpose() * kk * &sigma;
        let q = sigma.dot(&(kk * &sigma)) + eta.dot(&(&cfg.q * &eta)) - v.dot(&(&ups_inv * &v)) + 2.0 * s.dot(&cfg.f.eval(t));
        let trap = if k == 0 || k == grid.steps { 0.5 } else { 1.0 };
        running += trap * grid.h() * (-cfg.rho * t).exp() * q;
    }
    nn * (initial + running)
}

#[derive(Clone, Debug, Serialize)]
pub struct ConsensusMetrics {
    pub times: Vec<f64>,
    /// Sample mean of `‖x^{(α)}(t) − x_ref‖²`.
    pub mse: Vec<f64>,
    /// Sample mean of `(1/N)Σᵢ‖xᵢ(t) − x^{(α)}(t)‖²`.
    pub dispersion: Vec<f64>,
    /// Fitted `c₂` in `mse ≈ c₁e^{−c₂t}` over the second half of the window.
    pub rate: f64,
    /// RMS residual of the log-linear fit.
    pub fit_residual: f64,
}

/// Least-squares slope of `ln y` on `t`, with the RMS residual.
pub fn log_linear_fit(t: &[f64], y: &[f64]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = t.iter().zip(y).filter(|(_, &y)| y > 0.0).map(|(&t, &y)| (t, y.ln())).collect();
    let m = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let ym = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - tm).powi(2)).sum();
    let slope = sxy / sxx;
    let res = (pts.iter().map(|p| (p.1 - ym - slope * (p.0 - tm)).powi(2)).sum::<f64>() / m).sqrt();
    (slope, res)
}

/// Mean-square consensus diagnostics from the ensemble's summary series.
pub fn consensus_metrics(ens: &Ensemble, x_ref: &DVector<f64>) -> Result<ConsensusMetrics> {
    let nt = ens.summary_times.len();
    if nt < 4 {
        return Err(Error::InvalidScenario("ensemble was simulated without a summary series".into()));
    }
    let n = ens.n;
    let np = ens.kept.len();
    let mut mse = vec![0.0; nt];
    let mut dispersion = vec![0.0; nt];
    for p in 0..np {
        for j in 0..nt {
            let off = (p * nt + j) * n;
            mse[j] += (0..n).map(|i| (ens.pop_avg[off + i] - x_ref[i]).powi(2)).sum::<f64>();
            dispersion[j] += ens.dispersion[p * nt + j];
        }
    }
    mse.iter_mut().chain(dispersion.iter_mut()).for_each(|v| *v /= np as f64);
    let half = nt / 2;
    let (slope, fit_residual) = log_linear_fit(&ens.summary_times[half..], &mse[half..]);
    Ok(ConsensusMetrics { times: ens.summary_times.clone(), mse, dispersion, rate: -slope, fit_residual })
}
