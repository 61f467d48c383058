//! Scenario files, path CSVs, ensemble spills and summary files.
//!
//! Scenario files are flat `key = value` text. Matrices are written
//! row-major with `;` between rows, `A = [0, 1; 0, 0]`. Time functions are
//! either `const [v1, v2]` or `table [t0, v1, v2; t1, v1, v2]`, a table
//! being piecewise constant from each knot. Lines starting with `#` are
//! comments. [`emit_scenario`] and [`parse_scenario`] round-trip exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{Horizon, ScenarioConfig, StrategyFamily, TimeFunction};
use crate::riccati::{MatrixPath, RiccatiBundle, VectorPath};
use crate::simulate::Ensemble;
use crate::synthesis::{AgentGains, GainSchedule};

fn num(x: f64) -> String {
    format!("{x:?}")
}

fn matrix_text(m: &DMatrix<f64>) -> String {
    let rows: Vec<String> = (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| num(m[(i, j)])).collect::<Vec<_>>().join(", "))
        .collect();
    format!("[{}]", rows.join("; "))
}

fn vector_text(v: &DVector<f64>) -> String {
    format!("[{}]", v.iter().map(|&x| num(x)).collect::<Vec<_>>().join(", "))
}

fn time_function_text(tf: &TimeFunction) -> String {
    match tf {
        TimeFunction::Constant(v) => format!("const {}", vector_text(v)),
        TimeFunction::Table { times, values } => {
            let rows: Vec<String> = times
                .iter()
                .zip(values)
                .map(|(t, v)| std::iter::once(*t).chain(v.iter().copied()).map(num).collect::<Vec<_>>().join(", "))
                .collect();
            format!("table [{}]", rows.join("; "))
        }
    }
}

/// Canonical text form of a scenario.
pub fn emit_scenario(cfg: &ScenarioConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    kv("family", cfg.family.name().to_string());
    kv("n_agents", cfg.n_agents.to_string());
    kv("rho", num(cfg.rho));
    kv(
        "horizon",
        match cfg.horizon {
            Horizon::Finite { t } => format!("finite {}", num(t)),
            Horizon::Infinite { t_trunc, tail_tol } => format!("infinite {} {}", num(t_trunc), num(tail_tol)),
        },
    );
    kv("A", matrix_text(&cfg.a));
    kv("B", matrix_text(&cfg.b));
    kv("C", matrix_text(&cfg.c));
    kv("D", matrix_text(&cfg.d));
    kv("G", matrix_text(&cfg.g));
    kv("Q", matrix_text(&cfg.q));
    kv("R", matrix_text(&cfg.r));
    kv("Gamma", matrix_text(&cfg.gamma));
    kv("f", time_function_text(&cfg.f));
    kv("sigma", time_function_text(&cfg.sigma));
    kv("eta", time_function_text(&cfg.eta));
    kv("alpha", format!("[{}]", cfg.alpha.iter().map(|&a| num(a)).collect::<Vec<_>>().join(", ")));
    kv("x0_mean", vector_text(&cfg.x0_mean));
    kv("x0_cov", matrix_text(&cfg.x0_cov));
    out
}

fn parse_rows(s: &str, line: usize) -> Result<Vec<Vec<f64>>> {
    let err = |msg: String| Error::Parse { line, msg };
    let inner = s
        .trim()
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .ok_or_else(|| err(format!("expected a bracketed list, got `{s}`")))?;
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(';')
        .map(|row| {
            row.split(',')
                .map(|x| x.trim().parse::<f64>().map_err(|e| err(format!("bad number `{}`: {e}", x.trim()))))
                .collect()
        })
        .collect()
}

fn parse_matrix(s: &str, line: usize) -> Result<DMatrix<f64>> {
    let rows = parse_rows(s, line)?;
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Parse { line, msg: "ragged matrix rows".into() });
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

/// Accepts `[a, b]` or the column form `[a; b]`.
fn parse_vector(s: &str, line: usize) -> Result<DVector<f64>> {
    let m = parse_matrix(s, line)?;
    if m.nrows() > 1 && m.ncols() > 1 {
        return Err(Error::Parse { line, msg: "expected a vector, got a matrix".into() });
    }
    Ok(DVector::from_iterator(m.len(), m.iter().copied()))
}

fn parse_time_function(s: &str, line: usize) -> Result<TimeFunction> {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix("const") {
        return Ok(TimeFunction::Constant(parse_vector(rest, line)?));
    }
    if let Some(rest) = s.strip_prefix("table") {
        let rows = parse_rows(rest, line)?;
        if rows.is_empty() || rows.iter().any(|r| r.len() < 2 || r.len() != rows[0].len()) {
            return Err(Error::Parse { line, msg: "table rows need `t, values…` of equal length".into() });
        }
        let times: Vec<f64> = rows.iter().map(|r| r[0]).collect();
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Parse { line, msg: "table knots must increase".into() });
        }
        let values = rows.iter().map(|r| DVector::from_column_slice(&r[1..])).collect();
        return Ok(TimeFunction::Table { times, values });
    }
    // A bare list is a constant.
    Ok(TimeFunction::Constant(parse_vector(s, line)?))
}

/// Parses scenario text. Missing optional keys default to zero (`C`, `D`,
/// `G`, `f`, `sigma`, `eta`, `x0_mean`, `x0_cov`), identity (`Q`, `R`),
/// uniform weights (`alpha`) and `rho = 0`. `A`, `B`, `family`,
/// `n_agents` and `horizon` are required.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, msg: format!("expected `key = value`, got `{line}`") })?;
        let key = k.trim().to_string();
        if entries.insert(key.clone(), (i + 1, v.trim().to_string())).is_some() {
            return Err(Error::Parse { line: i + 1, msg: format!("duplicate key `{key}`") });
        }
    }
    const KNOWN: [&str; 18] = [
        "family", "n_agents", "rho", "horizon", "A", "B", "C", "D", "G", "Q", "R", "Gamma", "f", "sigma", "eta",
        "alpha", "x0_mean", "x0_cov",
    ];
    if let Some((k, (line, _))) = entries.iter().find(|(k, _)| !KNOWN.contains(&k.as_str())) {
        return Err(Error::Parse { line: *line, msg: format!("unknown key `{k}`") });
    }
    let last_line = text.lines().count();
    let take = |k: &str| entries.get(k).map(|(l, v)| (*l, v.as_str()));
    let need = |k: &str| take(k).ok_or_else(|| Error::Parse { line: last_line, msg: format!("missing key `{k}`") });

    let (l, v) = need("family")?;
    let family = StrategyFamily::from_name(v).ok_or_else(|| Error::Parse { line: l, msg: format!("unknown family `{v}`") })?;
    let (l, v) = need("n_agents")?;
    let n_agents: usize = v.parse().map_err(|e| Error::Parse { line: l, msg: format!("n_agents: {e}") })?;
    let (l, v) = need("horizon")?;
    let tok: Vec<&str> = v.split_whitespace().collect();
    let pf = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse { line: l, msg: format!("horizon: {e}") });
    let horizon = match tok.as_slice() {
        ["finite", t] => Horizon::Finite { t: pf(t)? },
        ["infinite", t, tol] => Horizon::Infinite { t_trunc: pf(t)?, tail_tol: pf(tol)? },
        _ => {
            return Err(Error::Parse { line: l, msg: "horizon is `finite <T>` or `infinite <T_trunc> <tail_tol>`".into() })
        }
    };
    let (l, v) = need("A")?;
    let a = parse_matrix(v, l)?;
    let (l, v) = need("B")?;
    let b = parse_matrix(v, l)?;
    let (n, r) = (a.nrows(), b.ncols());
    let mut cfg = ScenarioConfig::zeros(family, n, r, n_agents, horizon);
    cfg.a = a;
    cfg.b = b;
    if let Some((l, v)) = take("rho") {
        cfg.rho = v.parse().map_err(|e| Error::Parse { line: l, msg: format!("rho: {e}") })?;
    }
    for (key, slot) in [
        ("C", &mut cfg.c),
        ("D", &mut cfg.d),
        ("G", &mut cfg.g),
        ("Q", &mut cfg.q),
        ("R", &mut cfg.r),
        ("Gamma", &mut cfg.gamma),
        ("x0_cov", &mut cfg.x0_cov),
    ] {
        if let Some((l, v)) = take(key) {
            *slot = parse_matrix(v, l)?;
        }
    }
    for (key, slot) in [("f", &mut cfg.f), ("sigma", &mut cfg.sigma), ("eta", &mut cfg.eta)] {
        if let Some((l, v)) = take(key) {
            *slot = parse_time_function(v, l)?;
        }
    }
    if let Some((l, v)) = take("x0_mean") {
        cfg.x0_mean = parse_vector(v, l)?;
    }
    if let Some((l, v)) = take("alpha") {
        cfg.alpha = parse_vector(v, l)?.iter().copied().collect();
    }
    Ok(cfg)
}

/// Reads and parses a scenario file.
pub fn load_scenario(path: &std::path::Path) -> Result<ScenarioConfig> {
    parse_scenario(&std::fs::read_to_string(path)?)
}

/// Path CSV: header `t,<name>_<i>_<j>…`, one row per grid point, entries row-major.
pub fn matrix_path_csv(name: &str, path: &MatrixPath) -> String {
    let (nr, nc) = path.values.first().map_or((0, 0), |m| m.shape());
    let mut out = String::from("t");
    for i in 0..nr {
        for j in 0..nc {
            let _ = write!(out, ",{name}_{i}_{j}");
        }
    }
    out.push('\n');
    for (k, m) in path.values.iter().enumerate() {
        out.push_str(&num(path.grid.time(k)));
        for i in 0..nr {
            for j in 0..nc {
                let _ = write!(out, ",{}", num(m[(i, j)]));
            }
        }
        out.push('\n');
    }
    out
}

/// Vector path CSV: header `t,<name>_<i>…`.
pub fn vector_path_csv(name: &str, path: &VectorPath) -> String {
    let dim = path.values.first().map_or(0, |v| v.len());
    let mut out = String::from("t");
    for i in 0..dim {
        let _ = write!(out, ",{name}_{i}");
    }
    out.push('\n');
    for (k, v) in path.values.iter().enumerate() {
        out.push_str(&num(path.grid.time(k)));
        for x in v.iter() {
            let _ = write!(out, ",{}", num(*x));
        }
        out.push('\n');
    }
    out
}

/// Parses a path CSV back into its time column and one row-major entry
/// vector per grid point.
pub fn parse_path_csv(text: &str) -> Result<(Vec<String>, Vec<f64>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty CSV".into() })?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|x| x.parse::<f64>().map_err(|e| Error::Parse { line: i + 2, msg: format!("`{x}`: {e}") }))
            .collect::<Result<_>>()?;
        if vals.len() != header.len() {
            return Err(Error::Parse { line: i + 2, msg: format!("{} fields, header has {}", vals.len(), header.len()) });
        }
        times.push(vals[0]);
        rows.push(vals[1..].to_vec());
    }
    Ok((header, times, rows))
}

/// CSVs for every path of a bundle, keyed by file stem.
pub fn bundle_csvs(b: &RiccatiBundle) -> Vec<(String, String)> {
    let mut out = vec![("K".to_string(), matrix_path_csv("K", &b.k))];
    if let Some(pi) = &b.pi {
        out.push(("Pi".into(), matrix_path_csv("Pi", pi)));
    }
    out.push(("P".into(), matrix_path_csv("P", &b.p_path())));
    out.push(("s".into(), vector_path_csv("s", &b.s)));
    out.push(("Upsilon".into(), matrix_path_csv("Upsilon", &b.upsilon)));
    if let Some(h) = &b.hetero {
        for (name, path) in [
            ("K1", &h.k1),
            ("Pi11", &h.pi11),
            ("Pi1j", &h.pi1j),
            ("Kj", &h.kj),
            ("Pij1", &h.pij1),
            ("Pijj", &h.pijj),
        ] {
            out.push((name.to_string(), matrix_path_csv(name, path)));
        }
    }
    if let Some(c) = &b.coupled {
        out.push(("K_coupled".into(), matrix_path_csv("K_coupled", &c.k)));
        out.push(("Pi_coupled".into(), matrix_path_csv("Pi_coupled", &c.pi)));
        out.push(("s_coupled".into(), vector_path_csv("s_coupled", &c.s)));
    }
    if let Some(fp) = &b.fixed_point {
        out.push(("phi".into(), vector_path_csv("phi", &fp.phi)));
        out.push(("xbar".into(), vector_path_csv("xbar", &fp.xbar)));
    }
    out
}

/// CSVs for one agent law, keyed by file stem.
pub fn agent_gains_csvs(prefix: &str, g: &AgentGains) -> Vec<(String, String)> {
    let mut out = vec![
        (format!("{prefix}F_own"), matrix_path_csv("F_own", &g.f_own)),
        (format!("{prefix}F_mean"), matrix_path_csv("F_mean", &g.f_mean)),
    ];
    if let Some(m2) = &g.f_mean2 {
        out.push((format!("{prefix}F_mean2"), matrix_path_csv("F_mean2", m2)));
    }
    out.push((format!("{prefix}bias"), vector_path_csv("bias", &g.bias)));
    out
}

/// CSVs for a whole schedule: `gain_*` for the representative law,
/// `dominant_gain_*` and `coupled_gain_*` when present.
pub fn gain_schedule_csvs(gains: &GainSchedule) -> Vec<(String, String)> {
    let mut out = agent_gains_csvs("gain_", &gains.representative);
    if let Some(d) = &gains.dominant {
        out.extend(agent_gains_csvs("dominant_gain_", d));
    }
    if let Some(c) = &gains.coupled {
        out.push(("coupled_gain_F_ji".into(), matrix_path_csv("F_ji", &c.f_ji)));
        out.push(("coupled_gain_F_jj".into(), matrix_path_csv("F_jj", &c.f_jj)));
    }
    out
}

/// Columnar spill of the recorded paths: `path,agent,t,x_0…,u_0…`.
/// Controls are blank at the terminal time.
pub fn ensemble_csv(ens: &Ensemble) -> String {
    let mut out = String::from("path,agent,t");
    for i in 0..ens.n {
        let _ = write!(out, ",x_{i}");
    }
    for i in 0..ens.r {
        let _ = write!(out, ",u_{i}");
    }
    out.push('\n');
    for rec in &ens.records {
        for a in 0..ens.n_agents {
            for k in 0..ens.grid.len() {
                let _ = write!(out, "{},{},{}", rec.path, a, num(ens.grid.time(k)));
                for x in ens.state(rec, a, k).iter() {
                    let _ = write!(out, ",{}", num(*x));
                }
                if k < ens.grid.steps {
                    for u in ens.control(rec, a, k).iter() {
                        let _ = write!(out, ",{}", num(*u));
                    }
                } else {
                    out.push_str(&",".repeat(ens.r));
                }
                out.push('\n');
            }
        }
    }
    out
}

/// Flat key-value summary written as a JSON object with sorted keys.
/// Values are numbers, strings or booleans; nested structures are
/// flattened with dotted keys by the caller.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    entries: BTreeMap<String, Value>,
}

impl Summary {
    pub fn new() -> Self {
        Summary::default()
    }

    pub fn num(&mut self, key: impl Into<String>, v: f64) -> &mut Self {
        let value = serde_json::Number::from_f64(v).map(Value::Number).unwrap_or_else(|| Value::String(num(v)));
        self.entries.insert(key.into(), value);
        self
    }

    pub fn int(&mut self, key: impl Into<String>, v: u64) -> &mut Self {
        self.entries.insert(key.into(), Value::from(v));
        self
    }

    pub fn text(&mut self, key: impl Into<String>, v: impl Into<String>) -> &mut Self {
        self.entries.insert(key.into(), Value::String(v.into()));
        self
    }

    pub fn flag(&mut self, key: impl Into<String>, v: bool) -> &mut Self {
        self.entries.insert(key.into(), Value::Bool(v));
        self
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, Value> = self.entries.clone().into_iter().collect();
        let mut s = serde_json::to_string_pretty(&Value::Object(map)).expect("flat map serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
        let Value::Object(map) = v else {
            return Err(Error::Parse { line: 1, msg: "summary must be a JSON object".into() });
        };
        if let Some((k, _)) = map.iter().find(|(_, v)| v.is_object() || v.is_array()) {
            return Err(Error::Parse { line: 1, msg: format!("summary key `{k}` is not flat") });
        }
        Ok(Summary { entries: map.into_iter().collect() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    #[test]
    fn preset_round_trips() {
        let cfg = presets::additive_noise_game();
        let text = emit_scenario(&cfg);
        assert_eq!(parse_scenario(&text).unwrap(), cfg);
    }

    #[test]
    fn minimal_file_fills_defaults() {
        let cfg = parse_scenario("family = game_infinite\nn_agents = 3\nhorizon = finite 2\nA = [0]\nB = [1]\n").unwrap();
        assert_eq!(cfg.q, DMatrix::identity(1, 1));
        assert_eq!(cfg.alpha, vec![1.0 / 3.0; 3]);
        assert!(cfg.sigma.is_zero());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = parse_scenario("family = game_infinite\nbogus = 1\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }), "{e}");
        let e = parse_scenario("family = game_infinite\nn_agents = 2\nhorizon = finite 1\nA = [1, 2; 3]\nB = [1]\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 4, .. }), "{e}");
    }
}
