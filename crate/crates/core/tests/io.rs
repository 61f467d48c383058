use lqg_mfg::io::{emit_scenario, matrix_path_csv, parse_path_csv, parse_scenario, vector_path_csv, Summary};
use lqg_mfg::model::{presets, Horizon, ScenarioConfig, StrategyFamily, TimeFunction, TimeGrid};
use lqg_mfg::riccati::{MatrixPath, VectorPath};
use lqg_mfg::Error;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn shipped_scenarios_parse_and_validate() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios");
    for name in ["game", "integrator_game", "social", "social_finite", "hetero", "escape"] {
        let text = std::fs::read_to_string(format!("{dir}/{name}.txt")).unwrap();
        let cfg = parse_scenario(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(lqg_mfg::model::validate_scenario(&cfg).passes(), "{name}");
    }
    let game = parse_scenario(&std::fs::read_to_string(format!("{dir}/game.txt")).unwrap()).unwrap();
    assert_eq!(game, presets::additive_noise_game());
    let social = parse_scenario(&std::fs::read_to_string(format!("{dir}/social.txt")).unwrap()).unwrap();
    assert_eq!(social, presets::multiplicative_social());
}

#[test]
fn table_functions_round_trip() {
    let mut cfg = presets::additive_noise_game();
    cfg.f = TimeFunction::Table {
        times: vec![0.0, 2.5, 7.0],
        values: vec![DVector::from_element(1, 0.1), DVector::from_element(1, -0.3), DVector::from_element(1, 1.0 / 3.0)],
    };
    let text = emit_scenario(&cfg);
    assert!(text.contains("f = table [0.0, 0.1; 2.5, -0.3; 7.0, 0.3333333333333333]"), "{text}");
    assert_eq!(parse_scenario(&text).unwrap(), cfg);
}

#[test]
fn matrices_are_row_major() {
    let cfg = parse_scenario("family = social_finite\nn_agents = 2\nhorizon = finite 1\nA = [0, 1; 0, 0]\nB = [0; 1]\n").unwrap();
    assert_eq!(cfg.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
    assert_eq!(cfg.b.shape(), (2, 1));
    assert_eq!(cfg.q, DMatrix::identity(2, 2));
}

#[test]
fn malformed_inputs_are_rejected() {
    let base = "family = game_infinite\nn_agents = 2\nhorizon = finite 1\nA = [0]\nB = [1]\n";
    for (extra, line) in [("Q = [1, 2\n", 6), ("rho = fast\n", 6), ("sigma = table [1, 0.1; 0.5, 0.2]\n", 6), ("A = [1]\n", 6), ("nonsense\n", 6)] {
        match parse_scenario(&format!("{base}{extra}")) {
            Err(Error::Parse { line: l, .. }) => assert_eq!(l, line, "{extra}"),
            other => panic!("{extra}: {other:?}"),
        }
    }
    assert!(parse_scenario("family = nope\nn_agents = 2\nhorizon = finite 1\nA = [0]\nB = [1]\n").is_err());
    assert!(parse_scenario("family = game_infinite\n").is_err());
}

#[test]
fn path_csv_round_trip() {
    let grid = TimeGrid::new(1.0, 4).unwrap();
    let vals: Vec<_> = (0..5).map(|k| DMatrix::from_row_slice(2, 2, &[k as f64, 0.5, -1.0, 1.0 / 7.0])).collect();
    let path = MatrixPath { grid, values: vals.clone() };
    let csv = matrix_path_csv("K", &path);
    let (header, times, rows) = parse_path_csv(&csv).unwrap();
    assert_eq!(header, ["t", "K_0_0", "K_0_1", "K_1_0", "K_1_1"]);
    assert_eq!(times, grid.times());
    for (r, m) in rows.iter().zip(&vals) {
        assert_eq!(r, &[m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]]);
    }
    let vp = VectorPath { grid, values: vec![DVector::from_column_slice(&[1.0, 2.0]); 5] };
    let (h, _, rows) = parse_path_csv(&vector_path_csv("s", &vp)).unwrap();
    assert_eq!(h, ["t", "s_0", "s_1"]);
    assert!(rows.iter().all(|r| r == &[1.0, 2.0]));
}

#[test]
fn summary_is_flat_sorted_json() {
    let mut s = Summary::new();
    s.num("b.value", 1.5).int("a", 3).text("c", "x").flag("d", true).num("e", f64::NAN);
    let json = s.to_json();
    let keys: Vec<_> = s.keys().collect();
    assert_eq!(keys, ["a", "b.value", "c", "d", "e"]);
    assert_eq!(Summary::from_json(&json).unwrap(), s);
    assert!(Summary::from_json("{\"a\": {\"b\": 1}}").is_err());
}

fn matrix(n: usize, m: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, n * m).prop_map(move |v| DMatrix::from_row_slice(n, m, &v))
}

fn time_function(n: usize) -> impl Strategy<Value = TimeFunction> {
    prop_oneof![
        prop::collection::vec(-1e3..1e3f64, n).prop_map(|v| TimeFunction::constant(&v)),
        (1usize..4, prop::collection::vec(-1e3..1e3f64, 3 * n)).prop_map(move |(k, v)| TimeFunction::Table {
            times: (0..k).map(|i| i as f64 * 0.7).collect(),
            values: (0..k).map(|i| DVector::from_column_slice(&v[i * n..(i + 1) * n])).collect(),
        }),
    ]
}

fn scenario() -> impl Strategy<Value = ScenarioConfig> {
    (1usize..4, 1usize..3).prop_flat_map(|(n, r)| {
        (
            (matrix(n, n), matrix(n, r), matrix(n, n), matrix(n, r), matrix(n, n)),
            (matrix(n, n), matrix(r, r), matrix(n, n), matrix(n, n)),
            (time_function(n), time_function(n), time_function(n)),
            (0.0..2.0f64, 1usize..9, any::<bool>(), 0.1..100.0f64),
            prop::collection::vec(-10.0..10.0f64, n),
        )
            .prop_map(move |((a, b, c, d, g), (q, rw, gamma, cov), (f, sigma, eta), (rho, na, inf, t), m)| {
                let horizon = if inf { Horizon::Infinite { t_trunc: t, tail_tol: 1e-3 } } else { Horizon::Finite { t } };
                let mut cfg = ScenarioConfig::zeros(StrategyFamily::ALL[na % 7], n, r, na, horizon);
                cfg.a = a;
                cfg.b = b;
                cfg.c = c;
                cfg.d = d;
                cfg.g = g;
                cfg.q = q;
                cfg.r = rw;
                cfg.gamma = gamma;
                cfg.x0_cov = cov;
                cfg.f = f;
                cfg.sigma = sigma;
                cfg.eta = eta;
                cfg.rho = rho;
                cfg.x0_mean = DVector::from_vec(m);
                cfg
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn scenario_round_trips_exactly(cfg in scenario()) {
        let text = emit_scenario(&cfg);
        let back = parse_scenario(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(emit_scenario(&back), text);
        prop_assert_eq!(back.digest(), cfg.digest());
    }
}
