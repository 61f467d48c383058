//! Synchronous average consensus on an undirected weighted graph.
//!
//! Each node holds an `n`-vector and updates
//! `y_i ← y_i + Σ_j l_ij (y_j − y_i)`. With symmetric weights the node sum is
//! preserved, and on a connected graph with `Σ_j l_ij < 1` every node tends
//! to the average of the initial values.

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Default absolute convergence tolerance.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Undirected graph with positive edge weights, stored once per pair `i < j`.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    n_nodes: usize,
    weights: BTreeMap<(usize, usize), f64>,
}

impl Graph {
    pub fn new(n_nodes: usize) -> Self {
        Graph { n_nodes, weights: BTreeMap::new() }
    }

    /// Every pair joined with the same weight.
    pub fn complete(n_nodes: usize, weight: f64) -> Result<Self> {
        let mut g = Graph::new(n_nodes);
        for i in 0..n_nodes {
            for j in i + 1..n_nodes {
                g.add_edge(i, j, weight)?;
            }
        }
        Ok(g)
    }

    /// Nodes `0 - 1 - … - (n−1)` in a line.
    pub fn path(n_nodes: usize, weight: f64) -> Result<Self> {
        let mut g = Graph::new(n_nodes);
        for i in 1..n_nodes {
            g.add_edge(i - 1, i, weight)?;
        }
        Ok(g)
    }

    /// Adds an undirected edge. Re-adding a pair with the same weight is a
    /// no-op; a conflicting weight is an error.
    pub fn add_edge(&mut self, i: usize, j: usize, weight: f64) -> Result<()> {
        if i >= self.n_nodes || j >= self.n_nodes {
            return Err(Error::InvalidScenario(format!("edge ({i}, {j}) outside {} nodes", self.n_nodes)));
        }
        if i == j {
            return Err(Error::InvalidScenario(format!("self-loop at node {i}")));
        }
        if !(weight > 0.0 && weight.is_finite()) {
            return Err(Error::InvalidScenario(format!("edge ({i}, {j}) weight {weight} is not positive")));
        }
        let key = (i.min(j), i.max(j));
        match self.weights.get(&key) {
            Some(&w) if w != weight => Err(Error::InvalidScenario(format!(
                "edge ({i}, {j}) listed with weights {w} and {weight}"
            ))),
            _ => {
                self.weights.insert(key, weight);
                Ok(())
            }
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Edges as `(i, j, l_ij)` with `i < j`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights.iter().map(|(&(i, j), &w)| (i, j, w))
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights.get(&(i.min(j), i.max(j))).copied().unwrap_or(0.0)
    }

    /// `Σ_j l_ij` for every node.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n_nodes];
        for (i, j, w) in self.edges() {
            d[i] += w;
            d[j] += w;
        }
        d
    }

    /// Connected components as sorted node lists.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.n_nodes).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for (i, j, _) in self.edges() {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for v in 0..self.n_nodes {
            let root = find(&mut parent, v);
            groups.entry(root).or_default().push(v);
        }
        groups.into_values().collect()
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() <= 1
    }

    /// Parses an edge list: one `i j weight` triple per line, zero-based
    /// node indices, `#` starts a comment. The node count is one more than
    /// the largest index unless a `nodes <n>` line is given.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut declared = None;
        let mut triples = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: ln + 1, msg };
            let tok: Vec<&str> = line.split_whitespace().collect();
            if tok[0] == "nodes" {
                let n = tok
                    .get(1)
                    .and_then(|s| s.parse::<usize>().ok())
                    .ok_or_else(|| parse_err("expected `nodes <count>`".into()))?;
                declared = Some(n);
                continue;
            }
            if tok.len() != 3 {
                return Err(parse_err(format!("expected `i j weight`, got `{line}`")));
            }
            let i = tok[0].parse::<usize>().map_err(|e| parse_err(format!("node index: {e}")))?;
            let j = tok[1].parse::<usize>().map_err(|e| parse_err(format!("node index: {e}")))?;
            let w = tok[2].parse::<f64>().map_err(|e| parse_err(format!("weight: {e}")))?;
            triples.push((ln + 1, i, j, w));
        }
        let inferred = triples.iter().map(|&(_, i, j, _)| i.max(j) + 1).max().unwrap_or(0);
        let n = declared.unwrap_or(inferred);
        let mut g = Graph::new(n);
        for (line, i, j, w) in triples {
            g.add_edge(i, j, w).map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        }
        Ok(g)
    }

    /// Canonical edge-list text, accepted by [`Graph::parse_edge_list`].
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("nodes {}\n", self.n_nodes);
        for (i, j, w) in self.edges() {
            out.push_str(&format!("{i} {j} {w:?}\n"));
        }
        out
    }
}

/// Output of [`average_consensus`].
#[derive(Clone, Debug)]
pub struct ConsensusRun {
    /// `iterates[k][i]` is node `i` after `k` updates; `iterates[0]` is the input.
    pub iterates: Vec<Vec<DVector<f64>>>,
    /// First `k` with every node within `tol` of the true average.
    pub converged_at: Option<usize>,
    /// Max node deviation from the true average after the last iterate.
    pub final_error: f64,
    pub average: DVector<f64>,
}

impl ConsensusRun {
    pub fn last(&self) -> &[DVector<f64>] {
        self.iterates.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Max deviation `max_i ‖y_i − avg‖` in the Euclidean norm.
pub fn max_deviation(values: &[DVector<f64>], avg: &DVector<f64>) -> f64 {
    values.iter().map(|y| (y - avg).norm()).fold(0.0, f64::max)
}

/// Runs the synchronous update until every node is within `tol` of the
/// average of `initial` or `max_steps` updates have been applied. Hitting
/// `max_steps` is not an error: `converged_at` is `None` and
/// `final_error` says how far off the nodes are.
pub fn average_consensus(graph: &Graph, initial: &[DVector<f64>], max_steps: usize, tol: f64) -> Result<ConsensusRun> {
    let n_nodes = graph.n_nodes();
    if initial.len() != n_nodes {
        return Err(Error::Dimension(format!("{} initial values for {n_nodes} nodes", initial.len())));
    }
    let dim = initial.first().map_or(0, |v| v.len());
    if initial.iter().any(|v| v.len() != dim) {
        return Err(Error::Dimension("initial values differ in length".into()));
    }
    if let Some((i, d)) = graph.degrees().into_iter().enumerate().find(|&(_, d)| d >= 1.0) {
        return Err(Error::InvalidScenario(format!("node {i} has weight sum {d} >= 1")));
    }
    let mut average = DVector::zeros(dim);
    for y in initial {
        average += y;
    }
    if n_nodes > 0 {
        average /= n_nodes as f64;
    }

    let mut iterates = vec![initial.to_vec()];
    let mut converged_at = (max_deviation(initial, &average) <= tol).then_some(0);
    let mut k = 0;
    while converged_at.is_none() && k < max_steps {
        let cur = &iterates[k];
        let mut next = cur.clone();
        for (i, j, w) in graph.edges() {
            let flow = (&cur[j] - &cur[i]) * w;
            next[i] += &flow;
            next[j] -= &flow;
        }
        k += 1;
        if max_deviation(&next, &average) <= tol {
            converged_at = Some(k);
        }
        iterates.push(next);
    }
    let final_error = max_deviation(iterates.last().unwrap(), &average);
    Ok(ConsensusRun { iterates, converged_at, final_error, average })
}
