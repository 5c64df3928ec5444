//! Synthetic drift instances: random walks over a sparse weighted token graph,
//! before and after a random perturbation of its edge weights.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{fsio, seed};

/// Weighted directed token graph standing in for a text distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CooccurrenceGraph {
    pub n_nodes: usize,
    /// `(src, dst, weight)`, sorted by `(src, dst)`.
    pub edges: Vec<(usize, usize, f64)>,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub drift_fraction: f64,
    pub drift_scale: f64,
    pub edge_add_prob: f64,
    pub seed: u64,
}

impl Default for DriftSpec {
    fn default() -> Self {
        Self {
            drift_fraction: 0.3,
            drift_scale: 1.0,
            edge_add_prob: 0.02,
            seed: 0,
        }
    }
}

impl DriftSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.drift_fraction) || !unit.contains(&self.edge_add_prob) {
            return Err(Error::InvalidConfig(
                "drift_fraction and edge_add_prob must lie in [0, 1]".into(),
            ));
        }
        if !(self.drift_scale > 0.0 && self.drift_scale.is_finite()) {
            return Err(Error::InvalidConfig("drift_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Token sequence split into lines (one walk or one document per line).
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub lines: Vec<Vec<String>>,
}

pub fn token_name(node: usize) -> String {
    format!("t{node}")
}

impl Corpus {
    pub fn from_lines(lines: Vec<Vec<String>>) -> Self {
        Self { lines }
    }

    pub fn num_tokens(&self) -> usize {
        self.lines.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.num_tokens() == 0
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.lines.iter().flatten().map(String::as_str)
    }

    /// Plain text: one line per walk, tokens separated by single spaces, LF endings.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.num_tokens() * 5);
        for line in &self.lines {
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Self {
        let lines = text
            .lines()
            .map(|l| l.split_whitespace().map(str::to_string).collect::<Vec<_>>())
            .filter(|l| !l.is_empty())
            .collect();
        Self { lines }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::atomic_write(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::parse(&fsio::read_to_string(path)?))
    }
}

impl CooccurrenceGraph {
    pub fn validate(&self) -> Result<()> {
        let mut out_deg = vec![0usize; self.n_nodes];
        let mut prev: Option<(usize, usize)> = None;
        for &(s, d, w) in &self.edges {
            if s >= self.n_nodes || d >= self.n_nodes {
                return Err(Error::InvalidConfig(format!("edge ({s},{d}) outside node range")));
            }
            if s == d {
                return Err(Error::InvalidConfig(format!("self-loop on node {s}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidConfig(format!("edge ({s},{d}) has weight {w}")));
            }
            if prev.is_some_and(|p| p >= (s, d)) {
                return Err(Error::InvalidConfig("edges unsorted or duplicated".into()));
            }
            prev = Some((s, d));
            out_deg[s] += 1;
        }
        if let Some(n) = out_deg.iter().position(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!("node {n} has no outgoing edge")));
        }
        Ok(())
    }

    pub fn weight(&self, src: usize, dst: usize) -> Option<f64> {
        self.edges
            .binary_search_by(|&(s, d, _)| (s, d).cmp(&(src, dst)))
            .ok()
            .map(|i| self.edges[i].2)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsio::atomic_write(path, self.to_json()?.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let g: Self = fsio::read_json(path)?;
        g.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(g)
    }

    fn edge_map(&self) -> BTreeMap<(usize, usize), f64> {
        self.edges.iter().map(|&(s, d, w)| ((s, d), w)).collect()
    }

    fn from_map(n_nodes: usize, map: BTreeMap<(usize, usize), f64>, seed: u64) -> Self {
        Self {
            n_nodes,
            edges: map.into_iter().map(|((s, d), w)| (s, d, w)).collect(),
            seed,
        }
    }
}

/// Uniform on (0, 1].
fn unit_weight(rng: &mut seed::Rng) -> f64 {
    1.0 - rng.gen::<f64>()
}

/// Directed Erdős–Rényi graph plus a random Hamiltonian cycle.
pub fn generate_graph(n_nodes: usize, edge_prob: f64, seed: u64) -> Result<CooccurrenceGraph> {
    if n_nodes < 2 {
        return Err(Error::InvalidConfig(format!(
            "graph needs at least 2 nodes, got {n_nodes}"
        )));
    }
    if !(edge_prob > 0.0 && edge_prob <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "edge_prob must be in (0, 1], got {edge_prob}"
        )));
    }
    let mut rng = seed::rng(seed);
    let mut edges = BTreeMap::new();
    for s in 0..n_nodes {
        for d in 0..n_nodes {
            if s != d && rng.gen::<f64>() < edge_prob {
                edges.insert((s, d), unit_weight(&mut rng));
            }
        }
    }
    let mut order: Vec<usize> = (0..n_nodes).collect();
    order.shuffle(&mut rng);
    for i in 0..n_nodes {
        let (s, d) = (order[i], order[(i + 1) % n_nodes]);
        let w = unit_weight(&mut rng);
        edges.entry((s, d)).or_insert(w);
    }
    Ok(CooccurrenceGraph::from_map(n_nodes, edges, seed))
}

/// Log-normal reweighting of a random `drift_fraction` of edges plus sparse edge addition.
pub fn perturb_graph(g: &CooccurrenceGraph, spec: &DriftSpec) -> Result<CooccurrenceGraph> {
    spec.validate()?;
    g.validate()?;
    let mut rng = seed::rng(spec.seed);
    let mut edges = g.edges.clone();
    let n_drift = (spec.drift_fraction * edges.len() as f64).round() as usize;
    let normal = Normal::new(0.0, spec.drift_scale).expect("validated scale");
    let mut chosen = rand::seq::index::sample(&mut rng, edges.len(), n_drift).into_vec();
    chosen.sort_unstable();
    for i in chosen {
        let z: f64 = normal.sample(&mut rng);
        edges[i].2 *= z.exp();
    }
    let mut map: BTreeMap<_, _> = edges.into_iter().map(|(s, d, w)| ((s, d), w)).collect();
    if spec.edge_add_prob > 0.0 {
        let existing = g.edge_map();
        for s in 0..g.n_nodes {
            for d in 0..g.n_nodes {
                if s != d && !existing.contains_key(&(s, d)) && rng.gen::<f64>() < spec.edge_add_prob {
                    map.insert((s, d), unit_weight(&mut rng));
                }
            }
        }
    }
    Ok(CooccurrenceGraph::from_map(g.n_nodes, map, g.seed))
}

/// Per-node cumulative transition weights for fast walking.
struct Transitions {
    targets: Vec<Vec<usize>>,
    cumulative: Vec<Vec<f64>>,
}

impl Transitions {
    fn new(g: &CooccurrenceGraph) -> Self {
        let mut targets = vec![Vec::new(); g.n_nodes];
        let mut cumulative = vec![Vec::new(); g.n_nodes];
        for &(s, d, w) in &g.edges {
            let acc = cumulative[s].last().copied().unwrap_or(0.0) + w;
            targets[s].push(d);
            cumulative[s].push(acc);
        }
        Self { targets, cumulative }
    }

    fn step(&self, node: usize, rng: &mut seed::Rng) -> usize {
        let cum = &self.cumulative[node];
        let total = *cum.last().expect("graph invariant: every node has an outgoing edge");
        let u = rng.gen::<f64>() * total;
        let i = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
        self.targets[node][i]
    }
}

/// Node-id sequence of a weighted random walk.
pub fn walk_nodes(g: &CooccurrenceGraph, length: usize, seed: u64) -> Vec<usize> {
    let trans = Transitions::new(g);
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(length);
    if length == 0 {
        return out;
    }
    let mut node = rng.gen_range(0..g.n_nodes);
    out.push(node);
    while out.len() < length {
        node = trans.step(node, &mut rng);
        out.push(node);
    }
    out
}

/// Weighted random walk emitted as a one-line corpus of `t<id>` tokens.
pub fn sample_walk(g: &CooccurrenceGraph, length: usize, seed: u64) -> Result<Corpus> {
    if length == 0 {
        return Err(Error::InvalidConfig("walk length must be at least 1".into()));
    }
    g.validate()?;
    let line = walk_nodes(g, length, seed).into_iter().map(token_name).collect();
    Ok(Corpus { lines: vec![line] })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub n_nodes: usize,
    pub edge_prob: f64,
    pub walk_len: usize,
    pub drift: DriftSpec,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            n_nodes: 100,
            edge_prob: 0.1,
            walk_len: 100_000,
            drift: DriftSpec::default(),
        }
    }
}

/// The corpora of one synthetic drift instance plus the graphs that produced them.
#[derive(Clone, Debug)]
pub struct InstanceCorpora {
    pub base: CooccurrenceGraph,
    pub drifted: CooccurrenceGraph,
    pub d1: Corpus,
    pub d2: Corpus,
    pub d2_small: Corpus,
}

pub fn small_len(walk_len: usize, small_pct: f64) -> usize {
    (small_pct * walk_len as f64).round() as usize
}

/// Graph seeds come from `seed`; the perturbation uses `spec.seed`. Walks of
/// different `small_pct` under the same seed are prefixes of one another.
pub fn make_instance_corpora(
    n_nodes: usize,
    edge_prob: f64,
    walk_len: usize,
    small_pct: f64,
    spec: &DriftSpec,
    seed: u64,
) -> Result<InstanceCorpora> {
    if !(0.0..=1.0).contains(&small_pct) {
        return Err(Error::InvalidConfig(format!(
            "small_pct must be in [0, 1], got {small_pct}"
        )));
    }
    let base = generate_graph(n_nodes, edge_prob, seed::derive(seed, "graph", 0))?;
    let drifted = perturb_graph(&base, spec)?;
    let d1 = sample_walk(&base, walk_len, seed::derive(seed, "d1", 0))?;
    let d2 = sample_walk(&drifted, walk_len, seed::derive(seed, "d2", 0))?;
    let n_small = small_len(walk_len, small_pct);
    let d2_small = if n_small == 0 {
        Corpus::default()
    } else {
        sample_walk(&drifted, n_small, seed::derive(seed, "d2_small", 0))?
    };
    Ok(InstanceCorpora {
        base,
        drifted,
        d1,
        d2,
        d2_small,
    })
}

impl InstanceCorpora {
    /// Writes `graph_base.json`, `graph_drifted.json`, `d1.txt`, `d2.txt`, `d2_small.txt`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.base.save(&dir.join("graph_base.json"))?;
        self.drifted.save(&dir.join("graph_drifted.json"))?;
        self.d1.save(&dir.join("d1.txt"))?;
        self.d2.save(&dir.join("d2.txt"))?;
        self.d2_small.save(&dir.join("d2_small.txt"))
    }
}
