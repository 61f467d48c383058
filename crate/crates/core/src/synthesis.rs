//! Decentralized affine feedback laws built from Riccati bundles, and the
//! deterministic mean flows they consume.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{ScenarioConfig, StrategyFamily, TimeGrid};
use crate::riccati::equations::k_parts;
use crate::riccati::ode::{self, MatrixPath, VectorPath};
use crate::riccati::RiccatiBundle;

/// One agent class's law `u = F_own·x + F_mean·m + F_mean2·m₂ + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentGains {
    pub f_own: MatrixPath,
    pub f_mean: MatrixPath,
    pub f_mean2: Option<MatrixPath>,
    pub bias: VectorPath,
}

impl AgentGains {
    pub fn zeros_like(&self) -> AgentGains {
        let z = |p: &MatrixPath| p.map(|m| DMatrix::zeros(m.nrows(), m.ncols()));
        AgentGains {
            f_own: z(&self.f_own),
            f_mean: z(&self.f_mean),
            f_mean2: self.f_mean2.as_ref().map(z),
            bias: VectorPath { grid: self.bias.grid, values: self.bias.values.iter().map(|b| DVector::zeros(b.len())).collect() },
        }
    }

    /// `self + eps·dir`, entrywise on every grid point.
    pub fn offset(&self, dir: &AgentGains, eps: f64) -> AgentGains {
        let add = |a: &MatrixPath, b: &MatrixPath| a.zip_with(b, |x, y| x + y * eps);
        AgentGains {
            f_own: add(&self.f_own, &dir.f_own),
            f_mean: add(&self.f_mean, &dir.f_mean),
            f_mean2: match (&self.f_mean2, &dir.f_mean2) {
                (Some(a), Some(b)) => Some(add(a, b)),
                (a, _) => a.clone(),
            },
            bias: VectorPath {
                grid: self.bias.grid,
                values: self.bias.values.iter().zip(&dir.bias.values).map(|(a, b)| a + b * eps).collect(),
            },
        }
    }

    /// Canonical unit directions in `(F_own, F_mean, bias)` space, constant in time.
    pub fn canonical_directions(&self) -> Vec<AgentGains> {
        let zero = self.zeros_like();
        let (r, n) = (self.f_own.initial().nrows(), self.f_own.initial().ncols());
        let mut out = Vec::new();
        for which in 0..2 {
            for i in 0..r {
                for j in 0..n {
                    let mut d = zero.clone();
                    let target = if which == 0 { &mut d.f_own } else { &mut d.f_mean };
                    for m in &mut target.values {
                        m[(i, j)] = 1.0;
                    }
                    out.push(d);
                }
            }
        }
        for i in 0..r {
            let mut d = zero.clone();
            for b in &mut d.bias.values {
                b[i] = 1.0;
            }
            out.push(d);
        }
        out
    }

    /// Scales `F_own` by `factor`.
    pub fn scale_own(&self, factor: f64) -> AgentGains {
        AgentGains { f_own: self.f_own.map(|m| m * factor), ..self.clone() }
    }
}

/// Extra gains of the state-coupled family. Each agent runs its own
/// conditional-mean filter `(x̂ᵢ, x̂ⱼ)` driven by its Brownian motion, and the
/// control acts on the filter: `u = F_own·x̂ᵢ + F_mean2·x̂ⱼ + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct CoupledGains {
    /// `x̂ⱼ`'s own input law on `(x̂ᵢ, x̂ⱼ)`.
    pub f_ji: MatrixPath,
    pub f_jj: MatrixPath,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GainSchedule {
    pub family: StrategyFamily,
    pub grid: TimeGrid,
    /// Law of every agent except a heterogeneous dominant agent.
    pub representative: AgentGains,
    /// Law of agent 0 in the heterogeneous family.
    pub dominant: Option<AgentGains>,
    pub coupled: Option<CoupledGains>,
}

impl GainSchedule {
    pub fn for_agent(&self, i: usize) -> &AgentGains {
        match (&self.dominant, i) {
            (Some(d), 0) => d,
            _ => &self.representative,
        }
    }

    pub fn for_agent_mut(&mut self, i: usize) -> &mut AgentGains {
        match (&mut self.dominant, i) {
            (Some(d), 0) => d,
            _ => &mut self.representative,
        }
    }

    /// Evaluates agent `i`'s control from its time, own feedback state and the
    /// deterministic mean flow only.
    pub fn control(&self, i: usize, t: f64, x: &DVector<f64>, flow: &MeanFlow) -> DVector<f64> {
        let g = self.for_agent(i);
        let mut u = g.f_own.interp(t) * x + g.bias.interp(t);
        if self.coupled.is_none() {
            u += g.f_mean.interp(t) * flow.mean.interp(t);
            if let (Some(f2), Some(m2)) = (&g.f_mean2, &flow.mean2) {
                u += f2.interp(t) * m2.interp(t);
            }
        }
        u
    }
}

/// Deterministic mean trajectories: `mean` is the representative agent's
/// `𝔼[x̌]`; `mean2` the dominant agent's (heterogeneous) or `𝔼[x̂ⱼ]` (coupled).
#[derive(Clone, Debug, PartialEq)]
pub struct MeanFlow {
    pub grid: TimeGrid,
    pub mean: VectorPath,
    pub mean2: Option<VectorPath>,
}

fn check_finite(name: &str, p: &MatrixPath) -> Result<()> {
    if p.values.iter().all(|m| m.iter().all(|v| v.is_finite())) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite {name} gain")))
    }
}

fn own_gain(cfg: &ScenarioConfig, k: &MatrixPath) -> Result<(MatrixPath, MatrixPath)> {
    let mut own = Vec::with_capacity(k.values.len());
    let mut ups_inv = Vec::with_capacity(k.values.len());
    for (i, kk) in k.values.iter().enumerate() {
        let kp = k_parts(cfg, kk);
        if !kp.ups_inv.iter().all(|v| v.is_finite()) || crate::linalg::min_sym_eigenvalue(&kp.ups) <= 1e-10 * cfg.r.norm() {
            return Err(Error::SingularUpsilon { t: k.grid.time(i) });
        }
        own.push(-&kp.ups_inv * &kp.s);
        ups_inv.push(kp.ups_inv);
    }
    Ok((MatrixPath { grid: k.grid, values: own }, MatrixPath { grid: k.grid, values: ups_inv }))
}

fn homogeneous_gains(cfg: &ScenarioConfig, b: &RiccatiBundle) -> Result<AgentGains> {
    let (f_own, ups_inv) = own_gain(cfg, &b.k)?;
    let bt = cfg.b.transpose();
    let f_mean = ups_inv.zip_with(&b.mean_weight(), |ui, w| -(ui * &bt * w));
    let grid = b.grid;
    let bias = (0..grid.len())
        .map(|k| {
            let t = grid.time(k);
            -(ups_inv.at(k) * (&bt * b.s.at(k) + cfg.d.transpose() * b.k.at(k) * cfg.sigma.eval(t)))
        })
        .collect();
    Ok(AgentGains { f_own, f_mean, f_mean2: None, bias: VectorPath { grid, values: bias } })
}

/// Builds the decentralized feedback schedule of `bundle.family`.
pub fn make_gains(bundle: &RiccatiBundle, cfg: &ScenarioConfig) -> Result<GainSchedule> {
    let grid = bundle.grid;
    let bt = cfg.b.transpose();
    let zero_bias = VectorPath::constant(grid, DVector::zeros(cfg.r_dim()));
    let schedule = match bundle.family {
        StrategyFamily::GameHeterogeneousFinite => {
            let h = bundle.hetero.as_ref().ok_or_else(|| Error::Numerical("missing heterogeneous paths".into()))?;
            let (own1, ui1) = own_gain(cfg, &h.k1)?;
            let (ownj, uij) = own_gain(cfg, &h.kj)?;
            let lin = |ui: &MatrixPath, p: &MatrixPath| ui.zip_with(p, |u, p| -(u * &bt * p));
            // both classes see the follower mean through f_mean and the dominant mean through f_mean2
            let dominant = AgentGains { f_own: own1, f_mean: lin(&ui1, &h.pi1j), f_mean2: Some(lin(&ui1, &h.pi11)), bias: zero_bias.clone() };
            let representative = AgentGains { f_own: ownj, f_mean: lin(&uij, &h.pijj), f_mean2: Some(lin(&uij, &h.pij1)), bias: zero_bias };
            GainSchedule { family: bundle.family, grid, representative, dominant: Some(dominant), coupled: None }
        }
        StrategyFamily::SocialCoupledFinite => {
            let c = bundle.coupled.as_ref().ok_or_else(|| Error::Numerical("missing coupled paths".into()))?;
            let rinv = cfg.r.clone().try_inverse().ok_or(Error::SingularUpsilon { t: 0.0 })?;
            let nn = cfg.n_agents as f64;
            let w = (nn - 1.0) / nn;
            let g = |f: &dyn Fn(&DMatrix<f64>, &DMatrix<f64>) -> DMatrix<f64>| c.k.zip_with(&c.pi, |k, p| -(&rinv * &bt * f(k, p)));
            let representative = AgentGains {
                f_own: g(&|k, p| k + p / nn),
                f_mean: MatrixPath::constant(grid, DMatrix::zeros(cfg.r_dim(), cfg.n())),
                f_mean2: Some(g(&|_, p| p * w)),
                bias: VectorPath { grid, values: c.s.values.iter().map(|s| -(&rinv * &bt * s)).collect() },
            };
            let coupled = CoupledGains { f_ji: g(&|_, p| p / nn), f_jj: g(&|k, p| k + p * w) };
            GainSchedule { family: bundle.family, grid, representative, dominant: None, coupled: Some(coupled) }
        }
        _ => GainSchedule { family: bundle.family, grid, representative: homogeneous_gains(cfg, bundle)?, dominant: None, coupled: None },
    };
    for g in std::iter::once(&schedule.representative).chain(schedule.dominant.as_ref()) {
        check_finite("own", &g.f_own)?;
        check_finite("mean", &g.f_mean)?;
        if let Some(f2) = &g.f_mean2 {
            check_finite("second mean", f2)?;
        }
    }
    Ok(schedule)
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Forward RK4 for the mean ODE `ṁ = A m + B u(m) + f` (and its heterogeneous
/// or coupled pair), starting from `x̄₀`.
pub fn propagate_mean(gains: &GainSchedule, cfg: &ScenarioConfig, grid: TimeGrid) -> Result<MeanFlow> {
    let x0 = col(&cfg.x0_mean);
    let a = &cfg.a;
    let b = &cfg.b;
    let rep = &gains.representative;
    let vp = |p: MatrixPath| VectorPath { grid: p.grid, values: p.values.into_iter().map(|m| m.column(0).into_owned()).collect() };
    if let Some(cg) = &gains.coupled {
        let nn = cfg.n_agents as f64;
        let gi = &cfg.g / nn;
        let gj = &cfg.g * ((nn - 1.0) / nn);
        let f2 = rep.f_mean2.as_ref().expect("coupled schedule has f_mean2");
        let rhs = |t: f64, y: &[DMatrix<f64>]| {
            let f = col(&cfg.f.eval(t));
            let ui = rep.f_own.interp(t) * &y[0] + f2.interp(t) * &y[1] + col(&rep.bias.interp(t));
            let uj = cg.f_ji.interp(t) * &y[0] + cg.f_jj.interp(t) * &y[1] + col(&rep.bias.interp(t));
            vec![(a + &gi) * &y[0] + &gj * &y[1] + b * ui + &f, (a + &gj) * &y[1] + &gi * &y[0] + b * uj + f]
        };
        let mut p = ode::integrate_system_forward(vec![x0.clone(), x0], rhs, grid, "conditional mean")?.into_iter();
        return Ok(MeanFlow { grid, mean: vp(p.next().unwrap()), mean2: Some(vp(p.next().unwrap())) });
    }
    if let Some(dom) = &gains.dominant {
        let law = |g: &AgentGains, t: f64, own: &DMatrix<f64>, mj: &DMatrix<f64>, m1: &DMatrix<f64>| {
            let u = g.f_own.interp(t) * own + g.f_mean.interp(t) * mj + g.f_mean2.as_ref().unwrap().interp(t) * m1 + col(&g.bias.interp(t));
            a * own + b * u + col(&cfg.f.eval(t))
        };
        let rhs = |t: f64, y: &[DMatrix<f64>]| vec![law(rep, t, &y[0], &y[0], &y[1]), law(dom, t, &y[1], &y[0], &y[1])];
        let mut p = ode::integrate_system_forward(vec![x0.clone(), x0], rhs, grid, "mean flow")?.into_iter();
        return Ok(MeanFlow { grid, mean: vp(p.next().unwrap()), mean2: Some(vp(p.next().unwrap())) });
    }
    let rhs = |t: f64, y: &[DMatrix<f64>]| {
        let u = (rep.f_own.interp(t) + rep.f_mean.interp(t)) * &y[0] + col(&rep.bias.interp(t));
        vec![a * &y[0] + b * u + col(&cfg.f.eval(t))]
    };
    let p = ode::integrate_system_forward(vec![x0], rhs, grid, "mean flow")?.remove(0);
    let mut mean = vp(p);
    mean.values[0] = cfg.x0_mean.clone();
    Ok(MeanFlow { grid, mean, mean2: None })
}

/// Solves, synthesizes and propagates in one call.
pub fn synthesize(cfg: &ScenarioConfig, grid: TimeGrid) -> Result<(RiccatiBundle, GainSchedule, MeanFlow)> {
    let bundle = crate::riccati::solve(cfg, grid)?;
    let gains = make_gains(&bundle, cfg)?;
    let flow = propagate_mean(&gains, cfg, grid)?;
    Ok((bundle, gains, flow))
}
