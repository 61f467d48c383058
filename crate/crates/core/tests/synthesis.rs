use lqg_mfg::io::{gain_schedule_csvs, parse_path_csv};
use lqg_mfg::model::{presets, Horizon, ScenarioConfig, StrategyFamily, TimeGrid};
use lqg_mfg::riccati::{self, MatrixPath};
use lqg_mfg::synthesis::{make_gains, propagate_mean, synthesize};
use nalgebra::{DMatrix, DVector};

fn v(m: &DMatrix<f64>) -> f64 {
    m[(0, 0)]
}

fn sup(a: &MatrixPath, b: &MatrixPath) -> f64 {
    a.values.iter().zip(&b.values).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

#[test]
fn integrator_gains_match_scalar_root() {
    let cfg = presets::integrator_game();
    let grid = TimeGrid::with_density(cfg.horizon.length(), 10).unwrap();
    let (bundle, gains, _) = synthesize(&cfg, grid).unwrap();
    // with B = D = R = 1 and C = 0 the own gain is −K/(1 + K)
    let k = v(bundle.k.initial());
    let f_own = v(gains.representative.f_own.initial());
    assert!((f_own + k / (1.0 + k)).abs() < 1e-12);
    assert!((f_own + 0.498533).abs() < 5e-6, "F_own = {f_own}");
    let f_mean = v(gains.representative.f_mean.initial());
    assert!((f_mean - k / (1.0 + k)).abs() < 1e-10, "F_mean = {f_mean}");
    assert!(gains.representative.bias.values.iter().all(|b| b.norm() < 1e-12));
    // infinite-horizon laws are constant in time
    assert!(gains.representative.f_own.values.iter().all(|m| m == gains.representative.f_own.initial()));
}

#[test]
fn integrator_mean_stays_at_initial_mean() {
    let cfg = presets::integrator_game();
    let grid = TimeGrid::with_density(cfg.horizon.length(), 10).unwrap();
    let (_, _, flow) = synthesize(&cfg, grid).unwrap();
    assert_eq!(flow.mean.values[0], cfg.x0_mean);
    assert!(flow.mean.values.iter().all(|m| (m[0] - 5.0).abs() < 1e-10));
}

#[test]
fn zero_state_weight_gives_zero_gains() {
    let mut cfg = presets::additive_noise_game().with_family(StrategyFamily::GameHomogeneousFinite);
    cfg.horizon = Horizon::Finite { t: 2.0 };
    cfg.q = DMatrix::zeros(1, 1);
    let grid = TimeGrid::with_density(2.0, 50).unwrap();
    let (_, gains, flow) = synthesize(&cfg, grid).unwrap();
    let g = &gains.representative;
    assert!(g.f_own.values.iter().chain(&g.f_mean.values).all(|m| m.norm() == 0.0));
    assert!(g.bias.values.iter().all(|b| b.norm() == 0.0));
    assert!(flow.mean.values.iter().all(|m| m == &cfg.x0_mean));
}

#[test]
fn zero_gains_keep_mean_constant() {
    let mut cfg = ScenarioConfig::scalar(StrategyFamily::GameHomogeneousFinite, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 3, Horizon::Finite { t: 1.0 });
    cfg.x0_mean = DVector::from_element(1, -2.5);
    let grid = TimeGrid::with_density(1.0, 20).unwrap();
    let (_, _, flow) = synthesize(&cfg, grid).unwrap();
    assert!(flow.mean.values.iter().all(|m| m[0] == -2.5));
}

#[test]
fn classical_and_large_population_gains_agree() {
    let base = ScenarioConfig { x0_mean: DVector::from_element(1, 5.0), ..presets::additive_noise_game() };
    let mut cfg = base.with_agents(256).with_family(StrategyFamily::GameHomogeneousFinite);
    cfg.horizon = Horizon::Finite { t: 5.0 };
    let grid = TimeGrid::with_density(5.0, 100).unwrap();
    let game = make_gains(&riccati::solve(&cfg, grid).unwrap(), &cfg).unwrap();
    let mf_cfg = cfg.with_family(StrategyFamily::ClassicalMeanField);
    let mf = make_gains(&riccati::solve(&mf_cfg, grid).unwrap(), &mf_cfg).unwrap();
    let d = sup(&game.representative.f_own, &mf.representative.f_own);
    assert!(d <= 0.01, "F_own sup difference {d}");
}

#[test]
fn equal_weights_reduce_heterogeneous_to_homogeneous() {
    let mut cfg = presets::additive_noise_game().with_family(StrategyFamily::GameHomogeneousFinite);
    cfg.horizon = Horizon::Finite { t: 1.0 };
    cfg.sigma = lqg_mfg::model::TimeFunction::zeros(1);
    cfg.gamma = DMatrix::from_element(1, 1, 0.6);
    let grid = TimeGrid::with_density(1.0, 200).unwrap();
    let homo = make_gains(&riccati::solve(&cfg, grid).unwrap(), &cfg).unwrap();
    let het_cfg = cfg.with_family(StrategyFamily::GameHeterogeneousFinite);
    let het = make_gains(&riccati::solve(&het_cfg, grid).unwrap(), &het_cfg).unwrap();
    let h = &homo.representative;
    for g in [&het.representative, het.dominant.as_ref().unwrap()] {
        assert!(sup(&g.f_own, &h.f_own) < 1e-8);
        // the two mean channels carry the same mean when the weights are equal
        let total = g.f_mean.zip_with(g.f_mean2.as_ref().unwrap(), |a, b| a + b);
        assert!(sup(&total, &h.f_mean) < 1e-8);
    }
    let fh = propagate_mean(&homo, &cfg, grid).unwrap();
    let ft = propagate_mean(&het, &het_cfg, grid).unwrap();
    assert!(fh.mean.sup_distance(&ft.mean) < 1e-8);
    assert!(fh.mean.sup_distance(ft.mean2.as_ref().unwrap()) < 1e-8);
}

#[test]
fn long_finite_horizon_approaches_stationary_law() {
    let cfg = presets::additive_noise_game();
    let t = 50.0 / cfg.rho;
    let inf_grid = TimeGrid::with_density(cfg.horizon.length(), 10).unwrap();
    let inf = make_gains(&riccati::solve(&cfg, inf_grid).unwrap(), &cfg).unwrap();
    let mut fin_cfg = cfg.with_family(StrategyFamily::GameHomogeneousFinite);
    fin_cfg.horizon = Horizon::Finite { t };
    let fin_grid = TimeGrid::with_density(t, 20).unwrap();
    let fin = make_gains(&riccati::solve(&fin_cfg, fin_grid).unwrap(), &fin_cfg).unwrap();
    let (a, b) = (&inf.representative, &fin.representative);
    assert!((a.f_own.initial() - b.f_own.initial()).amax() <= 1e-4);
    assert!((a.f_mean.initial() - b.f_mean.initial()).amax() <= 1e-4);
    assert!((a.bias.initial() - b.bias.initial()).amax() <= 1e-4);
}

#[test]
fn mean_flow_self_converges() {
    let mut cfg = presets::additive_noise_game().with_family(StrategyFamily::GameHomogeneousFinite);
    cfg.horizon = Horizon::Finite { t: 2.0 };
    cfg.gamma = DMatrix::from_element(1, 1, 0.5);
    cfg.f = lqg_mfg::model::TimeFunction::constant(&[0.4]);
    // gains on a grid twice as fine so every RK4 stage below hits a node
    let fine = TimeGrid::new(2.0, 3200).unwrap();
    let gains = make_gains(&riccati::solve(&cfg, TimeGrid::new(2.0, 6400).unwrap()).unwrap(), &cfg).unwrap();
    let reference = propagate_mean(&gains, &cfg, fine).unwrap();
    let moved = (reference.mean.values.last().unwrap() - &cfg.x0_mean).norm();
    assert!(moved > 0.1, "mean should move, moved {moved}");
    let err = |steps: usize| {
        let g = TimeGrid::new(2.0, steps).unwrap();
        let m = propagate_mean(&gains, &cfg, g).unwrap();
        let stride = 3200 / steps;
        (0..g.len()).map(|k| (m.mean.at(k) - reference.mean.at(stride * k)).norm()).fold(0.0, f64::max)
    };
    let (e1, e2) = (err(100), err(200));
    assert!(e2 < 1e-7, "{e2}");
    // fourth order in the step
    assert!(e1 / e2 > 12.0, "{e1} vs {e2}");
}

#[test]
fn preset_mean_flow_self_converges() {
    let cfg = presets::additive_noise_game();
    let coarse = TimeGrid::with_density(cfg.horizon.length(), 10).unwrap();
    let fine = TimeGrid::new(coarse.t_end, coarse.steps * 16).unwrap();
    let gains = make_gains(&riccati::solve(&cfg, coarse).unwrap(), &cfg).unwrap();
    let a = propagate_mean(&gains, &cfg, coarse).unwrap();
    let b = propagate_mean(&gains, &cfg, fine).unwrap();
    for k in 0..coarse.len() {
        assert!((a.mean.at(k) - b.mean.at(16 * k)).norm() < 1e-8);
    }
}

#[test]
fn gain_csvs_round_trip() {
    let cfg = ScenarioConfig { n_agents: 4, alpha: vec![0.7, 0.1, 0.1, 0.1], ..presets::additive_noise_game() }
        .with_family(StrategyFamily::GameHeterogeneousFinite);
    let cfg = ScenarioConfig { horizon: Horizon::Finite { t: 1.0 }, sigma: lqg_mfg::model::TimeFunction::zeros(1), ..cfg };
    let grid = TimeGrid::with_density(1.0, 20).unwrap();
    let (_, gains, _) = synthesize(&cfg, grid).unwrap();
    let files = gain_schedule_csvs(&gains);
    let stems: Vec<&str> = files.iter().map(|(s, _)| s.as_str()).collect();
    for s in ["gain_F_own", "gain_F_mean", "gain_F_mean2", "gain_bias", "dominant_gain_F_own"] {
        assert!(stems.contains(&s), "missing {s}");
    }
    let (_, text) = files.iter().find(|(s, _)| s == "dominant_gain_F_own").unwrap();
    let (header, times, rows) = parse_path_csv(text).unwrap();
    assert_eq!(header, vec!["t", "F_own_0_0"]);
    assert_eq!(times, grid.times());
    let g = gains.dominant.as_ref().unwrap();
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0], g.f_own.at(k)[(0, 0)]);
    }
}

#[test]
fn control_reads_only_own_state_and_flow() {
    let cfg = presets::additive_noise_game();
    let grid = TimeGrid::with_density(cfg.horizon.length(), 10).unwrap();
    let (_, gains, flow) = synthesize(&cfg, grid).unwrap();
    let g = &gains.representative;
    let x = DVector::from_element(1, 1.7);
    let t = 3.3;
    let expected = g.f_own.interp(t) * &x + g.f_mean.interp(t) * flow.mean.interp(t) + g.bias.interp(t);
    for i in 0..cfg.n_agents {
        assert_eq!(gains.control(i, t, &x, &flow), expected);
    }
}
