use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn out_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("lqg-mfg-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lqg-mfg")).args(args).env_remove("LQG_MFG_OUT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn solve_writes_paths_gains_and_summary() {
    let out = out_dir("solve");
    let o = run(&["solve", "--scenario", s(&scenario("game.txt")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    for f in ["K.csv", "P.csv", "s.csv", "Upsilon.csv", "gain_F_own.csv", "gain_bias.csv", "solve.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let summary = std::fs::read_to_string(out.join("solve.json")).unwrap();
    let summary = lqg_mfg::io::Summary::from_json(&summary).unwrap();
    assert!(summary.get("max_residual").and_then(|v| v.as_f64()).unwrap() <= 1e-8);
}

#[test]
fn input_errors_exit_2() {
    let out = out_dir("bad");
    let bad = out.join("bad.txt");
    std::fs::write(&bad, "family = game_infinite\nn_agents = six\n").unwrap();
    let o = run(&["solve", "--scenario", s(&bad), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    assert!(text(&o).contains("line 2"), "{}", text(&o));
    let o = run(&["solve", "--scenario", s(&out.join("missing.txt")), "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let o = run(&["solve", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unsolvable_scenario_exits_3() {
    let out = out_dir("escape");
    let o = run(&["solve", "--scenario", s(&scenario("escape.txt")), "--out", s(&out)]);
    assert_eq!(code(&o), 3, "{}", text(&o));
    assert!(text(&o).contains("A2"), "{}", text(&o));
}

#[test]
fn zero_weight_scenario_solves() {
    let out = out_dir("zero");
    let src = std::fs::read_to_string(scenario("game.txt")).unwrap();
    let zero: String = src.lines().filter(|l| !l.trim_start().starts_with("Q ")).map(|l| format!("{l}\n")).collect::<String>() + "Q = [0]\n";
    let path = out.join("zero.txt");
    std::fs::write(&path, zero).unwrap();
    let o = run(&["solve", "--scenario", s(&path), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
}

#[test]
fn verify_passes_equilibrium_and_rejects_scaled_gains() {
    let out = out_dir("verify");
    let game = scenario("game.txt");
    let base = ["verify", "--scenario", s(&game), "--out", s(&out), "--paths", "1000", "--grid-steps", "800"];
    let o = run(&base);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(out.join("verify.json").exists());
    let o = run(&[&base[..], &["--scale-own", "1.5"]].concat());
    assert_eq!(code(&o), 1, "{}", text(&o));
}

#[test]
fn simulate_writes_ensemble() {
    let out = out_dir("simulate");
    let o = run(&["simulate", "--scenario", s(&scenario("social_finite.txt")), "--out", s(&out), "--paths", "50", "--record", "2"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let csv = std::fs::read_to_string(out.join("ensemble.csv")).unwrap();
    assert!(csv.starts_with("path,agent,t,x_0,u_0\n"));
    assert!(std::fs::read_to_string(out.join("simulate.json")).unwrap().contains("closed_form"));
}

#[test]
fn figures_are_reproducible() {
    let a = out_dir("fig-a");
    let b = out_dir("fig-b");
    let args = |d: &Path| -> Vec<String> {
        ["figures", "--out", s(d), "--paths", "40", "--sweep-n", "2,4", "--grid-steps", "400"].iter().map(|x| x.to_string()).collect()
    };
    for d in [&a, &b] {
        let o = Command::new(env!("CARGO_BIN_EXE_lqg-mfg")).args(args(d)).output().unwrap();
        assert_eq!(code(&o), 0, "{}", text(&o));
    }
    for i in 1..=5 {
        for ext in ["csv", "svg"] {
            let f = format!("fig{i}.{ext}");
            assert_eq!(std::fs::read(a.join(&f)).unwrap(), std::fs::read(b.join(&f)).unwrap(), "{f} differs");
        }
    }
    let svg = std::fs::read(a.join("fig2.svg")).unwrap();
    std::fs::remove_file(a.join("fig2.svg")).unwrap();
    let o = run(&["figures", "--out", s(&a), "--svg-only", "--only", "fig2"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert_eq!(std::fs::read(a.join("fig2.svg")).unwrap(), svg);
    let o = run(&["figures", "--out", s(&a), "--only", "fig9", "--paths", "4"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn consensus_reaches_average() {
    let out = out_dir("consensus");
    let o = run(&["consensus", "--graph", s(&scenario("path6.txt")), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let summary = lqg_mfg::io::Summary::from_json(&std::fs::read_to_string(out.join("consensus.json")).unwrap()).unwrap();
    assert_eq!(summary.get("converged").and_then(|v| v.as_bool()), Some(true));
    assert!(out.join("consensus.csv").exists());
    let wrong = out.join("three.txt");
    std::fs::write(&wrong, "0 1 0.2\n1 2 0.2\n").unwrap();
    let o = run(&["consensus", "--graph", s(&wrong), "--out", s(&out)]);
    assert_eq!(code(&o), 2, "{}", text(&o));
}

#[test]
fn output_directory_from_environment() {
    let out = out_dir("env");
    let o = Command::new(env!("CARGO_BIN_EXE_lqg-mfg"))
        .args(["solve", "--scenario", s(&scenario("integrator_game.txt"))])
        .env("LQG_MFG_OUT", &out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(out.join("solve.json").exists());
}
