use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lqg_mfg::consensus::{self, Graph};
use lqg_mfg::figures::{self, Figure, FigureOptions};
use lqg_mfg::io::{self, Summary};
use lqg_mfg::model::{self, presets, ScenarioConfig, StrategyFamily, TimeGrid};
use lqg_mfg::simulate::{self, CostTarget, SimOptions};
use lqg_mfg::{riccati, synthesis, verify, Error};

const DEFAULT_STEPS_PER_UNIT: usize = 100;

#[derive(Parser)]
#[command(name = "lqg-mfg", version, about = "Solve, simulate and verify LQG mean-field games and team problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo paths.
    #[arg(long, default_value_t = 2000)]
    paths: usize,
    /// Output directory.
    #[arg(long, env = "LQG_MFG_OUT", default_value = "out")]
    out: PathBuf,
    /// Steps of the time grid over the whole horizon (default 100 per unit time).
    #[arg(long)]
    grid_steps: Option<usize>,
    /// Population sizes for the cost sweeps, comma separated.
    #[arg(long, value_delimiter = ',')]
    sweep_n: Option<Vec<usize>>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the Riccati system and write the paths and gain schedules.
    Solve(Common),
    /// Simulate the closed loop and estimate costs.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Number of leading paths written to ensemble.csv.
        #[arg(long, default_value_t = 3)]
        record: usize,
    },
    /// Residual checks, stationarity and cost cross-checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Perturbation magnitudes, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.02")]
        eps: Vec<f64>,
        /// Multiply every agent's own-state gain before checking (negative control).
        #[arg(long)]
        scale_own: Option<f64>,
    },
    /// Reference figures as CSV and SVG.
    Figures {
        #[command(flatten)]
        common: Common,
        /// Subset of figures, comma separated (fig1 … fig5).
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<String>>,
        /// Re-render SVGs from the CSVs already in the output directory.
        #[arg(long)]
        svg_only: bool,
    },
    /// Average consensus of the agents' initial states over a graph.
    Consensus {
        #[command(flatten)]
        common: Common,
        /// Edge-list file (`i j weight` per line).
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = consensus::DEFAULT_TOL)]
        tol: f64,
        #[arg(long, default_value_t = 10_000)]
        max_steps: usize,
    },
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::FiniteEscape { .. } | Error::NoStabilizingSolution(_) | Error::SingularUpsilon { .. } | Error::Numerical(_) => 3,
            _ => 2,
        };
        Failure { code, msg: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 2, msg: e.to_string() }
    }
}

type CliResult = Result<u8, Failure>;

fn input_error(msg: impl Into<String>) -> Failure {
    Failure { code: 2, msg: msg.into() }
}

fn load(common: &Common) -> Result<ScenarioConfig, Failure> {
    let path = common.scenario.as_ref().ok_or_else(|| input_error("--scenario is required"))?;
    let cfg = io::load_scenario(path).map_err(|e| input_error(format!("{}: {e}", path.display())))?;
    let report = model::validate_scenario(&cfg);
    if !report.passes() {
        return Err(input_error(format!("{}: invalid scenario\n{report}", path.display())));
    }
    Ok(cfg)
}

fn grid_for(cfg: &ScenarioConfig, common: &Common) -> Result<TimeGrid, Failure> {
    let t = cfg.horizon.length();
    Ok(match common.grid_steps {
        Some(steps) => TimeGrid::new(t, steps)?,
        None => TimeGrid::with_density(t, DEFAULT_STEPS_PER_UNIT)?,
    })
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), text)?;
    Ok(())
}

fn flat_matrix(summary: &mut Summary, key: &str, m: &lqg_mfg::nalgebra::DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            summary.num(format!("{key}_{i}_{j}"), m[(i, j)]);
        }
    }
}

fn cmd_solve(common: &Common) -> CliResult {
    let cfg = load(common)?;
    let grid = grid_for(&cfg, common)?;
    let bundle = riccati::solve(&cfg, grid)?;
    let gains = synthesis::make_gains(&bundle, &cfg)?;
    let mut summary = Summary::new();
    summary
        .text("family", cfg.family.name())
        .int("grid_steps", grid.steps as u64)
        .num("t_end", grid.t_end)
        .text("scenario_digest", format!("{:016x}", cfg.digest()));
    flat_matrix(&mut summary, "K0", bundle.k.initial());
    flat_matrix(&mut summary, "P0", &bundle.p_path().values[0]);
    summary.num("s0_norm", bundle.s.initial().norm());
    println!("family {}", cfg.family.name());
    println!("K(0) = {}", compact(bundle.k.initial()));
    println!("P(0) = {}", compact(&bundle.p_path().values[0]));
    println!("|s(0)| = {:e}", bundle.s.initial().norm());
    for (name, sol) in &bundle.are {
        println!("ARE {name}: residual {:.3e}, method {:?}, stabilizing {}", sol.residual, sol.method, sol.is_stabilizing());
        summary.num(format!("are.{name}.residual"), sol.residual).flag(format!("are.{name}.stabilizing"), sol.is_stabilizing());
    }
    let mut worst = 0.0f64;
    for r in verify::riccati_residual(&bundle, &cfg) {
        worst = worst.max(r.max_residual);
        summary.num(format!("residual.{}", r.equation_tag), r.max_residual);
    }
    println!("max residual {worst:.3e}");
    summary.num("max_residual", worst);
    for (name, csv) in io::bundle_csvs(&bundle).into_iter().chain(io::gain_schedule_csvs(&gains)) {
        write(&common.out, &format!("{name}.csv"), &csv)?;
    }
    write(&common.out, "solve.json", &summary.to_json())?;
    println!("wrote {}", common.out.display());
    Ok(0)
}

fn compact(m: &lqg_mfg::nalgebra::DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| format!("{:.6}", m[(i, j)])).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn cmd_simulate(common: &Common, record: usize) -> CliResult {
    let cfg = load(common)?;
    let grid = grid_for(&cfg, common)?;
    let (_, gains, flow) = synthesis::synthesize(&cfg, grid)?;
    let opts = SimOptions::new(common.paths, common.seed).record(record);
    let ens = simulate::simulate_ensemble(&cfg, &gains, &flow, &opts)?;
    let mut summary = Summary::new();
    summary
        .text("family", cfg.family.name())
        .int("seed", common.seed)
        .int("paths", common.paths as u64)
        .int("kept", ens.kept.len() as u64)
        .int("discarded", ens.discarded as u64)
        .text("scenario_digest", format!("{:016x}", ens.cfg_hash));
    for i in 0..cfg.n_agents {
        let c = simulate::estimate_cost(&ens, CostTarget::Agent(i))?;
        summary.num(format!("cost.agent{i}.value"), c.value).num(format!("cost.agent{i}.stderr"), c.stderr);
        summary.num(format!("cost.agent{i}.tail_bound"), c.tail_bound);
    }
    let soc = simulate::estimate_cost(&ens, CostTarget::Social)?;
    summary.num("cost.social.value", soc.value).num("cost.social.stderr", soc.stderr).num("cost.social.tail_bound", soc.tail_bound);
    println!("social cost {:.6} ± {:.6} over {} paths ({} discarded)", soc.value, soc.stderr, ens.kept.len(), ens.discarded);
    if cfg.family == StrategyFamily::SocialFinite {
        let bundle = riccati::solve(&cfg, grid)?;
        let cf = simulate::social_cost_closed_form(&cfg, &bundle);
        summary.num("cost.social.closed_form", cf);
        println!("closed-form social cost {cf:.6}");
    }
    write(&common.out, "ensemble.csv", &io::ensemble_csv(&ens))?;
    write(&common.out, "simulate.json", &summary.to_json())?;
    Ok(0)
}

fn cmd_verify(common: &Common, eps: &[f64], scale_own: Option<f64>) -> CliResult {
    let cfg = load(common)?;
    let grid = grid_for(&cfg, common)?;
    let (bundle, gains, flow) = synthesis::synthesize(&cfg, grid)?;
    let gains = match scale_own {
        Some(f) => verify::scaled_own_gains(&gains, f),
        None => gains,
    };
    let mut summary = Summary::new();
    let mut ok = true;
    for r in verify::riccati_residual(&bundle, &cfg) {
        println!("residual {:<12} {:.3e} {}", r.equation_tag, r.max_residual, verdict(r.passes));
        summary.num(format!("residual.{}", r.equation_tag), r.max_residual);
        ok &= r.passes;
    }
    let opts = SimOptions::new(common.paths, common.seed);
    let report = if cfg.family.is_social() {
        verify::social_stationarity_gap(&cfg, &gains, &flow, &opts, eps)?
    } else {
        verify::nash_stationarity_gap(&cfg, &gains, &flow, 0, &opts, eps)?
    };
    println!(
        "stationarity over {} directions: max first order {:.4e}, min curvature {:.4e}, J0 {:.6} ± {:.6} {}",
        report.directions,
        report.max_first_order,
        report.min_second_order_gain,
        report.baseline.value,
        report.baseline.stderr,
        verdict(report.passes_scaled)
    );
    summary
        .num("stationarity.max_first_order", report.max_first_order)
        .num("stationarity.min_curvature", report.min_second_order_gain)
        .num("stationarity.baseline", report.baseline.value)
        .num("stationarity.baseline_stderr", report.baseline.stderr)
        .flag("stationarity.passes", report.passes_scaled)
        .flag("stationarity.passes_strict", report.passes);
    for g in &report.extrapolated {
        println!("  direction {} extrapolated first order {:+.4e} ± {:.4e} {}", g.direction, g.first_order, g.first_order_stderr, verdict(g.passes));
    }
    if !report.extrapolated.is_empty() {
        summary.flag("stationarity.passes_extrapolated", report.passes_extrapolated);
    }
    ok &= report.passes_scaled;
    if cfg.family == StrategyFamily::SocialFinite {
        let cc = verify::cost_formula_cross_check(&cfg, &bundle, &gains, &flow, &opts)?;
        println!(
            "social cost closed form {:.6} vs simulated {:.6} ± {:.6} {}",
            cc.closed_form,
            cc.simulated.value,
            cc.simulated.stderr,
            verdict(cc.passes)
        );
        summary.num("cost.closed_form", cc.closed_form).num("cost.simulated", cc.simulated.value).flag("cost.passes", cc.passes);
        ok &= cc.passes;
    }
    summary.flag("passes", ok);
    write(&common.out, "verify.json", &summary.to_json())?;
    println!("{}", if ok { "all checks pass" } else { "verification failed" });
    Ok(if ok { 0 } else { 1 })
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "ok"
    } else {
        "FAIL"
    }
}

fn cmd_figures(common: &Common, only: Option<&[String]>, svg_only: bool) -> CliResult {
    let names: Vec<String> = match only {
        Some(list) => list.to_vec(),
        None => (1..=5).map(|i| format!("fig{i}")).collect(),
    };
    if svg_only {
        for name in &names {
            let csv = std::fs::read_to_string(common.out.join(format!("{name}.csv")))?;
            write(&common.out, &format!("{name}.svg"), &figures::svg_from_csv(&csv)?)?;
        }
        return Ok(0);
    }
    let mut opts = FigureOptions { paths: common.paths, seed: common.seed, ..FigureOptions::default() };
    if let Some(n) = &common.sweep_n {
        opts.sweep_n = n.clone();
    }
    if let Some(steps) = common.grid_steps {
        // every reference scenario shares the same window
        let t = presets::additive_noise_game().horizon.length();
        opts.per_unit = ((steps as f64 / t).ceil() as usize).max(1);
    }
    for name in &names {
        let fig: Figure = figures::figure_by_name(name, &opts).map_err(|e| match e {
            Error::InvalidScenario(m) => input_error(m),
            e => e.into(),
        })?;
        let csv = fig.to_csv();
        write(&common.out, &format!("{name}.csv"), &csv)?;
        write(&common.out, &format!("{name}.svg"), &figures::svg_from_csv(&csv)?)?;
        println!("{name}: {} rows", fig.rows.len());
    }
    Ok(0)
}

fn cmd_consensus(common: &Common, graph: &Path, tol: f64, max_steps: usize) -> CliResult {
    let cfg = match &common.scenario {
        Some(_) => load(common)?,
        None => presets::additive_noise_game(),
    };
    let text = std::fs::read_to_string(graph).map_err(|e| input_error(format!("{}: {e}", graph.display())))?;
    let g = Graph::parse_edge_list(&text).map_err(|e| input_error(format!("{}: {e}", graph.display())))?;
    if g.n_nodes() != cfg.n_agents {
        return Err(input_error(format!("graph has {} nodes, scenario has {} agents", g.n_nodes(), cfg.n_agents)));
    }
    let initial = simulate::initial_states(&cfg, common.seed, 0)?;
    let run = consensus::average_consensus(&g, &initial, max_steps, tol)?;
    let mut csv = String::from("k");
    for i in 0..g.n_nodes() {
        for j in 0..cfg.n() {
            csv.push_str(&format!(",y_{i}_{j}"));
        }
    }
    csv.push('\n');
    for (k, it) in run.iterates.iter().enumerate() {
        csv.push_str(&k.to_string());
        for y in it {
            for v in y.iter() {
                csv.push_str(&format!(",{v:?}"));
            }
        }
        csv.push('\n');
    }
    let mut summary = Summary::new();
    summary.num("final_error", run.final_error).flag("converged", run.converged_at.is_some());
    if let Some(k) = run.converged_at {
        summary.int("converged_at", k as u64);
    }
    for (j, v) in run.average.iter().enumerate() {
        summary.num(format!("average_{j}"), *v);
    }
    match run.converged_at {
        Some(k) => println!("converged after {k} steps, error {:.3e}", run.final_error),
        None => println!("not converged after {max_steps} steps, error {:.3e}", run.final_error),
    }
    if !g.is_connected() {
        println!("graph has {} components; nodes settle on per-component averages", g.components().len());
    }
    write(&common.out, "consensus.csv", &csv)?;
    write(&common.out, "consensus.json", &summary.to_json())?;
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Solve(c) => cmd_solve(c),
        Command::Simulate { common, record } => cmd_simulate(common, *record),
        Command::Verify { common, eps, scale_own } => cmd_verify(common, eps, *scale_own),
        Command::Figures { common, only, svg_only } => cmd_figures(common, only.as_deref(), *svg_only),
        Command::Consensus { common, graph, tol, max_steps } => cmd_consensus(common, graph, *tol, *max_steps),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
