//! Communication graphs, doubly stochastic mixing matrices and consensus
//! diagnostics.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cmg::SimRng;
use crate::error::{Error, Result};
use crate::graph::bfs_levels;

/// Tolerance on row and column sums of a mixing matrix.
pub const STOCHASTIC_TOL: f64 = 1e-12;

const GEOMETRIC_ATTEMPTS: usize = 1000;

/// Topology block of an experiment configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologySpec {
    Complete,
    Ring,
    Star,
    /// Agents dropped uniformly in the unit square, linked within `radius`.
    RandomGeometric { radius: f64 },
    Custom { edges: Vec<[usize; 2]> },
}

impl Default for TopologySpec {
    fn default() -> Self {
        TopologySpec::Complete
    }
}

impl TopologySpec {
    pub fn build(&self, num_agents: usize, rng: &mut SimRng) -> Result<Topology> {
        match self {
            TopologySpec::Complete => Topology::complete(num_agents),
            TopologySpec::Ring => Topology::ring(num_agents),
            TopologySpec::Star => Topology::star(num_agents),
            TopologySpec::RandomGeometric { radius } => Topology::random_geometric(num_agents, *radius, rng),
            TopologySpec::Custom { edges } => {
                Topology::custom(num_agents, edges.iter().map(|e| (e[0], e[1])).collect(), "custom")
            }
        }
    }
}

/// Network block: a base topology and an optional time-varying mode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub topology: TopologySpec,
    /// When set, every step mixes over a random connected spanning subgraph
    /// of the base topology that keeps each non-tree edge with this
    /// probability.
    pub time_varying_keep_probability: Option<f64>,
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if let TopologySpec::RandomGeometric { radius } = self.topology {
            if !(radius > 0.0) {
                return Err(Error::config("random-geometric radius must be positive"));
            }
        }
        if let Some(p) = self.time_varying_keep_probability {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("keep probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Undirected connected graph on `num_agents` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    num_agents: usize,
    edges: Vec<(usize, usize)>,
    kind: String,
}

impl Topology {
    pub fn complete(n: usize) -> Result<Self> {
        let edges = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        Self::custom(n, edges, "complete")
    }

    pub fn ring(n: usize) -> Result<Self> {
        let edges = match n {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::custom(n, edges, "ring")
    }

    /// Node 0 is the hub.
    pub fn star(n: usize) -> Result<Self> {
        Self::custom(n, (1..n).map(|i| (0, i)).collect(), "star")
    }

    /// Redraws positions until the graph is connected.
    pub fn random_geometric(n: usize, radius: f64, rng: &mut SimRng) -> Result<Self> {
        for _ in 0..GEOMETRIC_ATTEMPTS {
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen(), rng.gen())).collect();
            let mut edges = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
                    if dx.hypot(dy) <= radius {
                        edges.push((i, j));
                    }
                }
            }
            if let Ok(t) = Self::custom(n, edges, "random-geometric") {
                return Ok(t);
            }
        }
        Err(Error::config(format!(
            "no connected random geometric graph with radius {radius} after {GEOMETRIC_ATTEMPTS} draws"
        )))
    }

    pub fn custom(n: usize, edges: Vec<(usize, usize)>, kind: &str) -> Result<Self> {
        if n == 0 {
            return Err(Error::config("topology needs at least one agent"));
        }
        let mut norm = Vec::with_capacity(edges.len());
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Index {
                    what: "edge endpoint",
                    index: i.max(j),
                    limit: n,
                });
            }
            if i == j {
                return Err(Error::config(format!("self-edge ({i}, {i}) in topology")));
            }
            norm.push((i.min(j), i.max(j)));
        }
        norm.sort_unstable();
        norm.dedup();
        let t = Self {
            num_agents: n,
            edges: norm,
            kind: kind.to_string(),
        };
        let level = bfs_levels(&t.adjacency(), 0);
        if let Some(v) = level.iter().position(Option::is_none) {
            return Err(Error::config(format!("{kind} topology is disconnected (agent {v} unreachable)")));
        }
        Ok(t)
    }

    pub fn num_agents(&self) -> usize {
        self.num_agents
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn kind(&self) -> &str {
        &self.kind
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_agents];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut d = vec![0; self.num_agents];
        for &(i, j) in &self.edges {
            d[i] += 1;
            d[j] += 1;
        }
        d
    }

    /// A random spanning tree (random-order Kruskal) plus every other edge
    /// kept independently with probability `keep`. Always connected.
    pub fn random_connected_subgraph(&self, keep: f64, rng: &mut SimRng) -> Topology {
        let mut order = self.edges.clone();
        order.shuffle(rng);
        let mut parent: Vec<usize> = (0..self.num_agents).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut kept = Vec::new();
        for (i, j) in order {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri] = rj;
                kept.push((i, j));
            } else if rng.gen::<f64>() < keep {
                kept.push((i, j));
            }
        }
        kept.sort_unstable();
        Topology {
            num_agents: self.num_agents,
            edges: kept,
            kind: format!("{}-subgraph", self.kind),
        }
    }
}

/// Doubly stochastic `N x N` matrix with its minimum positive entry `eta`
/// and spectral parameter `rho = || C^T (I - 11^T / N) C ||`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    data: Vec<f64>,
    eta: f64,
    rho: f64,
}

impl MixingMatrix {
    /// `c_ij = 1 / (1 + max(deg_i, deg_j))` on edges, remainder on the diagonal.
    pub fn metropolis(topology: &Topology) -> Result<Self> {
        let n = topology.num_agents();
        let deg = topology.degrees();
        let mut data = vec![0.0; n * n];
        for &(i, j) in topology.edges() {
            let c = 1.0 / (1 + deg[i].max(deg[j])) as f64;
            data[i * n + j] = c;
            data[j * n + i] = c;
        }
        for i in 0..n {
            let off: f64 = (0..n).filter(|&j| j != i).map(|j| data[i * n + j]).sum();
            data[i * n + i] = 1.0 - off;
        }
        Self::from_matrix(n, data)
    }

    /// Validates double stochasticity, positive diagonal and `rho < 1`.
    pub fn from_matrix(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape("mixing matrix", n * n, data.len()));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::config(format!("mixing matrix has invalid entry {v}")));
        }
        for i in 0..n {
            let row: f64 = (0..n).map(|j| data[i * n + j]).sum();
            let col: f64 = (0..n).map(|j| data[j * n + i]).sum();
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::config(format!(
                    "mixing matrix is not doubly stochastic at index {i} (row {row}, column {col})"
                )));
            }
            if data[i * n + i] <= 0.0 {
                return Err(Error::config(format!("mixing matrix has zero diagonal entry at {i}")));
            }
        }
        let eta = data.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
        let rho = spectral_rho(n, &data);
        if rho >= 1.0 {
            return Err(Error::config(format!("mixing matrix has rho = {rho} >= 1")));
        }
        Ok(Self { n, data, eta, rho })
    }

    pub fn num_agents(&self) -> usize {
        self.n
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `out_n = sum_m c_nm * values_m`.
    pub fn mix(&self, values: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if values.len() != self.n {
            return Err(Error::shape("mixed agent values", self.n, values.len()));
        }
        let dim = common_dim(values)?;
        let mut out = vec![vec![0.0; dim]; self.n];
        for (i, o) in out.iter_mut().enumerate() {
            for (j, v) in values.iter().enumerate() {
                let c = self.data[i * self.n + j];
                if c != 0.0 {
                    for (x, y) in o.iter_mut().zip(v) {
                        *x += c * y;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn common_dim(values: &[Vec<f64>]) -> Result<usize> {
    let dim = values.first().map_or(0, Vec::len);
    if let Some(v) = values.iter().find(|v| v.len() != dim) {
        return Err(Error::shape("agent value vector", dim, v.len()));
    }
    Ok(dim)
}

/// Largest eigenvalue of the symmetric PSD matrix `C^T (I - 11^T/N) C`.
pub fn spectral_rho(n: usize, c: &[f64]) -> f64 {
    let cm = DMatrix::from_row_slice(n, n, c);
    largest_eigenvalue(&disagreement_gram(&cm))
}

fn disagreement_gram(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    let proj = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    c.transpose() * proj * c
}

fn largest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.iter().copied().fold(0.0, f64::max)
}

/// Mixing matrices over time: fixed, or redrawn each step.
#[derive(Debug, Clone)]
pub enum MixingSchedule {
    Static(MixingMatrix),
    TimeVarying { base: Topology, keep: f64 },
}

impl MixingSchedule {
    pub fn new(config: &NetworkConfig, topology: Topology) -> Result<Self> {
        match config.time_varying_keep_probability {
            None => Ok(MixingSchedule::Static(MixingMatrix::metropolis(&topology)?)),
            Some(keep) => Ok(MixingSchedule::TimeVarying { base: topology, keep }),
        }
    }

    /// Matrix for the next step; draws from `rng` only in time-varying mode.
    pub fn draw(&self, rng: &mut SimRng) -> Result<MixingMatrix> {
        match self {
            MixingSchedule::Static(c) => Ok(c.clone()),
            MixingSchedule::TimeVarying { base, keep } => {
                MixingMatrix::metropolis(&base.random_connected_subgraph(*keep, rng))
            }
        }
    }

    /// `|| E[C^T (I - 11^T/N) C] ||`, exact for static matrices and a
    /// Monte Carlo average over `samples` draws otherwise.
    pub fn expected_rho(&self, samples: usize, rng: &mut SimRng) -> Result<f64> {
        match self {
            MixingSchedule::Static(c) => Ok(c.rho()),
            MixingSchedule::TimeVarying { base, .. } => {
                let n = base.num_agents();
                let mut acc = DMatrix::zeros(n, n);
                for _ in 0..samples.max(1) {
                    let c = self.draw(rng)?;
                    acc += disagreement_gram(&DMatrix::from_row_slice(n, n, c.as_slice()));
                }
                Ok(largest_eigenvalue(&(acc / samples.max(1) as f64)))
            }
        }
    }
}

/// Agent average and disagreement norm of stacked per-agent vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusStats {
    pub mean: Vec<f64>,
    pub disagreement: f64,
}

pub fn consensus_stats(values: &[Vec<f64>]) -> ConsensusStats {
    let n = values.len();
    let dim = values.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for v in values {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    if n > 0 {
        for m in &mut mean {
            *m /= n as f64;
        }
    }
    let sq: f64 = values
        .iter()
        .flat_map(|v| v.iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)))
        .sum();
    ConsensusStats {
        mean,
        disagreement: sq.sqrt(),
    }
}

/// `max_{n, m} || x_n - x_m ||`.
pub fn max_pairwise_distance(values: &[Vec<f64>]) -> f64 {
    let mut best = 0.0f64;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
            best = best.max(d.sqrt());
        }
    }
    best
}
