//! Figure series for the reference scenarios, their CSV form and a minimal
//! SVG line chart rendered from that CSV alone.
//!
//! A figure CSV starts with `# key: value` metadata lines (`title`,
//! `x_label`, `y_label`, `series`), then a header row and numeric rows.
//! The first column is the x axis; `series` lists the columns drawn.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{presets, ScenarioConfig, StrategyFamily, TimeGrid};
use crate::riccati::VectorPath;
use crate::simulate::{self, CostEstimate, SimOptions};
use crate::synthesis::{self, AgentGains, GainSchedule};

/// Knobs shared by every figure.
#[derive(Clone, Debug)]
pub struct FigureOptions {
    pub paths: usize,
    pub seed: u64,
    /// Simulation steps per unit time.
    pub per_unit: usize,
    /// Population sizes swept in the cost comparisons.
    pub sweep_n: Vec<usize>,
    /// Time spacing of the emitted trajectory rows.
    pub sample_dt: f64,
}

impl Default for FigureOptions {
    fn default() -> Self {
        FigureOptions { paths: 10_000, seed: 1, per_unit: 50, sweep_n: vec![2, 3, 4, 6, 8, 12, 16], sample_dt: 0.1 }
    }
}

/// One chart: named columns over a shared x column.
#[derive(Clone, Debug, PartialEq)]
pub struct Figure {
    pub name: String,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub header: Vec<String>,
    /// Columns drawn as lines.
    pub series: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Figure {
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# title: {}", self.title);
        let _ = writeln!(out, "# x_label: {}", self.x_label);
        let _ = writeln!(out, "# y_label: {}", self.y_label);
        let _ = writeln!(out, "# series: {}", self.series.join(","));
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.iter().map(|v| format!("{v:?}")).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }

    /// Inverse of [`Figure::to_csv`]; the name is not stored in the CSV.
    pub fn from_csv(name: &str, text: &str) -> Result<Figure> {
        let mut meta = std::collections::BTreeMap::new();
        let mut header = None;
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(m) = line.strip_prefix("# ") {
                let (k, v) = m.split_once(": ").unwrap_or((m.trim_end_matches(':'), ""));
                meta.insert(k.to_string(), v.to_string());
            } else if header.is_none() {
                header = Some(line.split(',').map(str::to_string).collect::<Vec<_>>());
            } else {
                let r = line
                    .split(',')
                    .map(|x| x.parse::<f64>().map_err(|e| Error::Parse { line: i + 1, msg: format!("`{x}`: {e}") }))
                    .collect::<Result<Vec<_>>>()?;
                rows.push(r);
            }
        }
        let header = header.ok_or_else(|| Error::Parse { line: 1, msg: "figure CSV has no header".into() })?;
        if let Some(i) = rows.iter().position(|r| r.len() != header.len()) {
            return Err(Error::Parse { line: i + 6, msg: "row length differs from header".into() });
        }
        let get = |k: &str| meta.get(k).cloned().unwrap_or_default();
        let series_text = get("series");
        let series = if series_text.is_empty() {
            header[1..].to_vec()
        } else {
            series_text.split(',').map(str::to_string).collect()
        };
        if let Some(s) = series.iter().find(|s| !header.contains(s)) {
            return Err(Error::Parse { line: 4, msg: format!("series `{s}` is not a column") });
        }
        Ok(Figure {
            name: name.to_string(),
            title: get("title"),
            x_label: get("x_label"),
            y_label: get("y_label"),
            header,
            series,
            rows,
        })
    }

    pub fn to_svg(&self) -> String {
        render_svg(self)
    }
}

/// Renders the SVG of a figure CSV.
pub fn svg_from_csv(text: &str) -> Result<String> {
    Ok(Figure::from_csv("", text)?.to_svg())
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn nice_step(range: f64) -> f64 {
    let raw = range / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let frac = raw / mag;
    let nice = if frac < 1.5 {
        1.0
    } else if frac < 3.5 {
        2.0
    } else if frac < 7.5 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let s = format!("{:.*}", decimals, v);
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo <= 1e-12 * (1.0 + lo.abs()) {
        let pad = 0.5 * (1.0 + lo.abs()) * 0.1;
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn render_svg(fig: &Figure) -> String {
    let cols: Vec<usize> = fig.series.iter().filter_map(|s| fig.header.iter().position(|h| h == s)).collect();
    let (x0, x1) = bounds(fig.rows.iter().map(|r| r[0]));
    let (y0, y1) = bounds(fig.rows.iter().flat_map(|r| cols.iter().map(move |&j| r[j])));
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, escape(&fig.title));

    for (axis, lo, hi) in [("x", x0, x1), ("y", y0, y1)] {
        let step = nice_step(hi - lo);
        let mut v = (lo / step).ceil() * step;
        while v <= hi + 1e-9 * step {
            let label = tick_label(v, step);
            if axis == "x" {
                let px = sx(v);
                let _ = writeln!(s, r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#dddddd"/>"##, TOP, TOP + ph);
                let _ = writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#, TOP + ph + 18.0);
            } else {
                let py = sy(v);
                let _ = writeln!(s, r##"<line x1="{LEFT:.2}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#dddddd"/>"##, LEFT + pw);
                let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{label}</text>"#, LEFT - 6.0, py + 4.0);
            }
            v += step;
        }
    }
    let _ = writeln!(s, r#"<rect x="{LEFT:.2}" y="{TOP:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&fig.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&fig.y_label)
    );

    for (idx, &j) in cols.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut segments: Vec<Vec<String>> = vec![Vec::new()];
        for r in &fig.rows {
            if r[0].is_finite() && r[j].is_finite() {
                segments.last_mut().unwrap().push(format!("{:.2},{:.2}", sx(r[0]), sy(r[j])));
            } else if !segments.last().unwrap().is_empty() {
                segments.push(Vec::new());
            }
        }
        for seg in segments.iter().filter(|seg| !seg.is_empty()) {
            let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, seg.join(" "));
        }
        let ly = TOP + 14.0 + 18.0 * idx as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#, lx + 22.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 28.0, ly + 4.0, escape(&fig.header[j]));
    }
    s.push_str("</svg>\n");
    s
}

fn stride(grid: &TimeGrid, dt: f64) -> usize {
    ((dt / grid.h()).round() as usize).max(1)
}

/// Moves the mean-field feedforward of `g` from the trajectory `from` onto
/// `to`: the returned law produces the same control against `to` that `g`
/// produces against `from`.
fn rebase(g: &AgentGains, from: &VectorPath, to: &VectorPath) -> AgentGains {
    let mut out = g.clone();
    for k in 0..out.bias.values.len() {
        let shift = g.f_mean.at(k) * (from.at(k) - to.at(k));
        out.bias.values[k] += shift;
    }
    out
}

/// Population-average sample path, ensemble mean of the average and the
/// deterministic mean flow. Used for both the game and the social chart.
fn mean_curves(name: &str, title: &str, cfg: &ScenarioConfig, opts: &FigureOptions) -> Result<Figure> {
    let grid = TimeGrid::with_density(cfg.horizon.length(), opts.per_unit)?;
    let (_, gains, flow) = synthesis::synthesize(cfg, grid)?;
    let th = stride(&grid, opts.sample_dt);
    let ens = simulate::simulate_ensemble(cfg, &gains, &flow, &SimOptions::new(opts.paths, opts.seed).thin(th))?;
    let nt = ens.summary_times.len();
    let n = ens.n;
    let np = ens.kept.len();
    let mut rows = Vec::with_capacity(nt);
    for (j, &t) in ens.summary_times.iter().enumerate() {
        let path0 = ens.pop_avg[j * n];
        let avg = (0..np).map(|p| ens.pop_avg[(p * nt + j) * n]).sum::<f64>() / np as f64;
        let k = ((t / grid.h()).round() as usize).min(grid.steps);
        rows.push(vec![t, path0, avg, flow.mean.at(k)[0]]);
    }
    Ok(Figure {
        name: name.into(),
        title: title.into(),
        x_label: "t".into(),
        y_label: "state".into(),
        header: vec!["t".into(), "x_avg_path0".into(), "x_avg_ensemble".into(), "mean_flow".into()],
        series: vec!["x_avg_path0".into(), "mean_flow".into()],
        rows,
    })
}

/// Population average of one path against the mean flow, additive-noise game.
pub fn fig1(opts: &FigureOptions) -> Result<Figure> {
    mean_curves("fig1", "Nash game: population average and mean flow", &presets::additive_noise_game(), opts)
}

/// Social optimum, multiplicative noise: every agent's trajectory on one path.
pub fn fig3(opts: &FigureOptions) -> Result<Figure> {
    let cfg = presets::multiplicative_social();
    let grid = TimeGrid::with_density(cfg.horizon.length(), opts.per_unit)?;
    let (_, gains, flow) = synthesis::synthesize(&cfg, grid)?;
    let ens = simulate::simulate_ensemble(&cfg, &gains, &flow, &SimOptions::new(2, opts.seed).record(1))?;
    let rec = ens.records.first().ok_or_else(|| Error::Numerical("recorded path escaped".into()))?;
    let th = stride(&grid, opts.sample_dt);
    let mut rows = Vec::new();
    for k in (0..grid.len()).step_by(th) {
        let mut r = vec![grid.time(k)];
        r.extend((0..cfg.n_agents).map(|a| ens.state(rec, a, k)[0]));
        rows.push(r);
    }
    let mut header = vec!["t".to_string()];
    header.extend((0..cfg.n_agents).map(|a| format!("x_{a}")));
    Ok(Figure {
        name: "fig3".into(),
        title: "Social optimum: agent trajectories".into(),
        x_label: "t".into(),
        y_label: "state".into(),
        series: header[1..].to_vec(),
        header,
        rows,
    })
}

/// Population average against the mean flow, social optimum.
pub fn fig4(opts: &FigureOptions) -> Result<Figure> {
    mean_curves("fig4", "Social optimum: population average and mean flow", &presets::multiplicative_social(), opts)
}

fn sweep_rows(estimates: &[(usize, CostEstimate, CostEstimate, CostEstimate)]) -> Vec<Vec<f64>> {
    estimates
        .iter()
        .map(|(n, a, b, d)| vec![*n as f64, a.value, b.value, d.value, d.stderr])
        .collect()
}

/// Cost of agent 0 playing the finite-population Nash law against playing
/// the classical mean-field law, everyone else on Nash, per population size.
pub fn fig2(opts: &FigureOptions) -> Result<Figure> {
    let mut est = Vec::new();
    for &n in &opts.sweep_n {
        let cfg = presets::additive_noise_game().with_agents(n);
        let grid = TimeGrid::with_density(cfg.horizon.length(), opts.per_unit)?;
        let (_, gains, flow) = synthesis::synthesize(&cfg, grid)?;
        let (_, mf, mf_flow) = synthesis::synthesize(&cfg.with_family(StrategyFamily::ClassicalMeanField), grid)?;
        let mf_law = rebase(&mf.representative, &mf_flow.mean, &flow.mean);
        let rep = simulate::unilateral_replay(&cfg, &gains, &flow, 0, &[gains.representative.clone(), mf_law], &SimOptions::new(opts.paths, opts.seed))?;
        est.push(sweep_estimates(n, &rep.costs, 1.0));
    }
    Ok(Figure {
        name: "fig2".into(),
        title: "Agent cost: finite-N Nash vs classical mean field".into(),
        x_label: "N".into(),
        y_label: "cost".into(),
        header: vec!["N".into(), "nash".into(), "mean_field".into(), "gap".into(), "gap_stderr".into()],
        series: vec!["nash".into(), "mean_field".into()],
        rows: sweep_rows(&est),
    })
}

/// Per-agent social cost of the social optimum against every agent playing
/// the classical mean-field law, per population size.
pub fn fig5(opts: &FigureOptions) -> Result<Figure> {
    let mut est = Vec::new();
    for &n in &opts.sweep_n {
        let cfg = presets::multiplicative_social().with_agents(n);
        let grid = TimeGrid::with_density(cfg.horizon.length(), opts.per_unit)?;
        let (_, gains, flow) = synthesis::synthesize(&cfg, grid)?;
        let (_, mf, mf_flow) = synthesis::synthesize(&cfg.with_family(StrategyFamily::ClassicalMeanField), grid)?;
        let mf_sched = GainSchedule {
            representative: rebase(&mf.representative, &mf_flow.mean, &flow.mean),
            ..gains.clone()
        };
        let rep = simulate::joint_replay(&cfg, &[gains, mf_sched], &flow, &SimOptions::new(opts.paths, opts.seed))?;
        est.push(sweep_estimates(n, &rep.costs, 1.0 / n as f64));
    }
    Ok(Figure {
        name: "fig5".into(),
        title: "Per-agent social cost: social optimum vs classical mean field".into(),
        x_label: "N".into(),
        y_label: "cost / N".into(),
        header: vec!["N".into(), "social".into(), "mean_field".into(), "gap".into(), "gap_stderr".into()],
        series: vec!["social".into(), "mean_field".into()],
        rows: sweep_rows(&est),
    })
}

fn sweep_estimates(n: usize, costs: &[Vec<f64>], scale: f64) -> (usize, CostEstimate, CostEstimate, CostEstimate) {
    let a: Vec<f64> = costs[0].iter().map(|c| c * scale).collect();
    let b: Vec<f64> = costs[1].iter().map(|c| c * scale).collect();
    let d: Vec<f64> = b.iter().zip(&a).map(|(b, a)| b - a).collect();
    (n, CostEstimate::from_samples(&a, 0.0), CostEstimate::from_samples(&b, 0.0), CostEstimate::from_samples(&d, 0.0))
}

/// All five figures in order.
pub fn all_figures(opts: &FigureOptions) -> Result<Vec<Figure>> {
    Ok(vec![fig1(opts)?, fig2(opts)?, fig3(opts)?, fig4(opts)?, fig5(opts)?])
}

/// Looks a figure up by name (`fig1` … `fig5`).
pub fn figure_by_name(name: &str, opts: &FigureOptions) -> Result<Figure> {
    match name {
        "fig1" => fig1(opts),
        "fig2" => fig2(opts),
        "fig3" => fig3(opts),
        "fig4" => fig4(opts),
        "fig5" => fig5(opts),
        _ => Err(Error::InvalidScenario(format!("unknown figure `{name}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Figure {
        Figure {
            name: "t".into(),
            title: "a < b".into(),
            x_label: "t".into(),
            y_label: "y".into(),
            header: vec!["t".into(), "y".into(), "z".into()],
            series: vec!["y".into()],
            rows: vec![vec![0.0, 1.0, 9.0], vec![1.0, f64::NAN, 9.0], vec![2.0, 0.5, 9.0]],
        }
    }

    #[test]
    fn csv_round_trip_and_svg_from_csv() {
        let f = tiny();
        let csv = f.to_csv();
        let back = Figure::from_csv("t", &csv).unwrap();
        assert_eq!(back.to_csv(), csv);
        assert_eq!(svg_from_csv(&csv).unwrap(), f.to_svg());
        assert!(f.to_svg().contains("a &lt; b"));
    }

    #[test]
    fn nan_breaks_the_line() {
        assert_eq!(tiny().to_svg().matches("<polyline").count(), 2);
    }

    #[test]
    fn nice_ticks() {
        assert_eq!(nice_step(10.0), 2.0);
        assert_eq!(nice_step(0.3), 0.05);
        assert_eq!(tick_label(-0.0, 0.5), "0.0");
    }
}
