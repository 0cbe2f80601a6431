//! System topology and parameters.
//!
//! Classes are vertices `0..I` and stations are vertices `I..I+J` of the
//! activity graph. The JSON file format uses the one-based labels
//! `1..=I` for classes and `I+1..=I+J` for stations.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp1, LogNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterarrivalKind {
    Exponential,
    Deterministic,
    Lognormal,
    Uniform,
}

/// Law of the unscaled interarrival variable, normalized to mean one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterarrivalSpec {
    pub kind: InterarrivalKind,
    /// Squared coefficient of variation.
    pub scv: f64,
    /// Order of a moment known to be finite.
    pub moment_order: f64,
}

impl InterarrivalSpec {
    pub fn exponential() -> Self {
        InterarrivalSpec { kind: InterarrivalKind::Exponential, scv: 1.0, moment_order: 8.0 }
    }

    pub fn validate(&self, class: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSystem(format!("interarrival[{class}]: {msg}")));
        if !self.scv.is_finite() || self.scv < 0.0 {
            return bad("scv must be finite and nonnegative");
        }
        if !self.moment_order.is_finite() || self.moment_order <= 0.0 {
            return bad("moment_order must be finite and positive");
        }
        match self.kind {
            InterarrivalKind::Exponential if (self.scv - 1.0).abs() > 1e-12 => {
                bad("exponential interarrivals have scv = 1")
            }
            InterarrivalKind::Deterministic if self.scv != 0.0 => {
                bad("deterministic interarrivals have scv = 0")
            }
            InterarrivalKind::Lognormal if self.scv <= 0.0 => bad("lognormal needs scv > 0"),
            // support [1-a, 1+a] with scv = a^2/3; a < 1 keeps interarrivals strictly positive
            InterarrivalKind::Uniform if !(self.scv > 0.0 && self.scv < 1.0 / 3.0) => {
                bad("uniform needs 0 < scv < 1/3")
            }
            _ => Ok(()),
        }
    }

    /// Sampler for the mean-one variable.
    pub fn sampler(&self) -> InterarrivalSampler {
        match self.kind {
            InterarrivalKind::Exponential => InterarrivalSampler::Exponential,
            InterarrivalKind::Deterministic => InterarrivalSampler::Deterministic,
            InterarrivalKind::Lognormal => {
                let sigma2 = (1.0 + self.scv).ln();
                let dist = LogNormal::new(-0.5 * sigma2, sigma2.sqrt())
                    .expect("validated lognormal parameters");
                InterarrivalSampler::Lognormal(dist)
            }
            InterarrivalKind::Uniform => {
                let a = (3.0 * self.scv).sqrt();
                InterarrivalSampler::Uniform(Uniform::new(1.0 - a, 1.0 + a))
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum InterarrivalSampler {
    Exponential,
    Deterministic,
    Lognormal(LogNormal<f64>),
    Uniform(Uniform<f64>),
}

impl InterarrivalSampler {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            InterarrivalSampler::Exponential => Exp1.sample(rng),
            InterarrivalSampler::Deterministic => 1.0,
            InterarrivalSampler::Lognormal(d) => d.sample(rng),
            InterarrivalSampler::Uniform(d) => d.sample(rng),
        }
    }
}

/// The complete parametric model, zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub num_classes: usize,
    pub num_stations: usize,
    /// Activities as (class, station), both zero-based.
    pub edges: Vec<(usize, usize)>,
    pub lambda: Vec<f64>,
    /// Dense `I x J` service rates, row-major by class.
    pub mu: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub nu: Vec<f64>,
    pub lambda_hat: Vec<f64>,
    pub mu_hat: Vec<Vec<f64>>,
    pub gamma: f64,
    pub interarrival: Vec<InterarrivalSpec>,
}

impl SystemSpec {
    /// A system with zero second-order terms, no abandonment and Poisson
    /// arrivals. `mu` is given per edge in the order of `edges`.
    pub fn simple(
        num_classes: usize,
        num_stations: usize,
        edges: &[(usize, usize)],
        lambda: &[f64],
        mu: &[f64],
        nu: &[f64],
    ) -> Self {
        let mut dense = vec![vec![0.0; num_stations]; num_classes];
        for (&(i, j), &m) in edges.iter().zip(mu) {
            dense[i][j] = m;
        }
        SystemSpec {
            num_classes,
            num_stations,
            edges: edges.to_vec(),
            lambda: lambda.to_vec(),
            mu: dense,
            theta: vec![0.0; num_classes],
            nu: nu.to_vec(),
            lambda_hat: vec![0.0; num_classes],
            mu_hat: vec![vec![0.0; num_stations]; num_classes],
            gamma: 1.0,
            interarrival: vec![InterarrivalSpec::exponential(); num_classes],
        }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: SystemFile = serde_json::from_str(s)?;
        file.into_spec()
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&SystemFile::from_spec(self)).expect("serializable")
    }
}

/// On-disk representation with one-based, station-offset labels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemFile {
    pub schema: u32,
    pub classes: usize,
    pub stations: usize,
    pub activities: Vec<[usize; 2]>,
    pub lambda: Vec<f64>,
    pub mu: BTreeMap<String, f64>,
    #[serde(default)]
    pub theta: Option<Vec<f64>>,
    pub nu: Vec<f64>,
    #[serde(default)]
    pub lambda_hat: Option<Vec<f64>>,
    #[serde(default)]
    pub mu_hat: BTreeMap<String, f64>,
    pub gamma: f64,
    #[serde(default)]
    pub interarrival: Option<Vec<InterarrivalSpec>>,
}

impl SystemFile {
    fn parse_key(&self, key: &str) -> Result<(usize, usize)> {
        let err = || Error::InvalidSystem(format!("bad rate key `{key}` (expected \"i,j\")"));
        let (a, b) = key.split_once(',').ok_or_else(err)?;
        let i: usize = a.trim().parse().map_err(|_| err())?;
        let j: usize = b.trim().parse().map_err(|_| err())?;
        self.to_zero_based(i, j)
    }

    fn to_zero_based(&self, i: usize, j: usize) -> Result<(usize, usize)> {
        let (ni, nj) = (self.classes, self.stations);
        if i < 1 || i > ni || j <= ni || j > ni + nj {
            return Err(Error::InvalidSystem(format!(
                "pair ({i},{j}) out of range: classes are 1..={ni}, stations {}..={}",
                ni + 1,
                ni + nj
            )));
        }
        Ok((i - 1, j - ni - 1))
    }

    pub fn into_spec(self) -> Result<SystemSpec> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::InvalidSystem(format!("unsupported schema {}", self.schema)));
        }
        let (ni, nj) = (self.classes, self.stations);
        let edges = self
            .activities
            .iter()
            .map(|&[i, j]| self.to_zero_based(i, j))
            .collect::<Result<Vec<_>>>()?;
        let mut mu = vec![vec![0.0; nj]; ni];
        for (k, &v) in &self.mu {
            let (i, j) = self.parse_key(k)?;
            mu[i][j] = v;
        }
        let mut mu_hat = vec![vec![0.0; nj]; ni];
        for (k, &v) in &self.mu_hat {
            let (i, j) = self.parse_key(k)?;
            mu_hat[i][j] = v;
        }
        Ok(SystemSpec {
            num_classes: ni,
            num_stations: nj,
            edges,
            lambda: self.lambda,
            mu,
            theta: self.theta.unwrap_or_else(|| vec![0.0; ni]),
            nu: self.nu,
            lambda_hat: self.lambda_hat.unwrap_or_else(|| vec![0.0; ni]),
            mu_hat,
            gamma: self.gamma,
            interarrival: self
                .interarrival
                .unwrap_or_else(|| vec![InterarrivalSpec::exponential(); ni]),
        })
    }

    pub fn from_spec(spec: &SystemSpec) -> Self {
        let ni = spec.num_classes;
        let label = |i: usize, j: usize| format!("{},{}", i + 1, ni + j + 1);
        let mut mu = BTreeMap::new();
        let mut mu_hat = BTreeMap::new();
        for i in 0..ni {
            for j in 0..spec.num_stations {
                if spec.mu[i][j] != 0.0 {
                    mu.insert(label(i, j), spec.mu[i][j]);
                }
                if spec.mu_hat[i][j] != 0.0 {
                    mu_hat.insert(label(i, j), spec.mu_hat[i][j]);
                }
            }
        }
        SystemFile {
            schema: SCHEMA_VERSION,
            classes: ni,
            stations: spec.num_stations,
            activities: spec.edges.iter().map(|&(i, j)| [i + 1, ni + j + 1]).collect(),
            lambda: spec.lambda.clone(),
            mu,
            theta: Some(spec.theta.clone()),
            nu: spec.nu.clone(),
            lambda_hat: Some(spec.lambda_hat.clone()),
            mu_hat,
            gamma: spec.gamma,
            interarrival: Some(spec.interarrival.clone()),
        }
    }
}

/// One step of a leaf elimination: `leaf` is removed together with `edge`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Peel {
    pub leaf: usize,
    pub edge: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VertexKind {
    Class,
    Station,
}

/// Adjacency structure of a validated activity tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeIndex {
    pub num_classes: usize,
    pub num_stations: usize,
    /// Activities sorted lexicographically by (class, station).
    pub edges: Vec<(usize, usize)>,
    /// Edge indices incident to each vertex.
    pub adjacency: Vec<Vec<usize>>,
    pub kinds: Vec<VertexKind>,
    pub order: Vec<Peel>,
    /// The single vertex left after peeling every edge.
    pub root: usize,
    edge_lookup: Vec<Option<usize>>,
}

impl TreeIndex {
    /// Builds the index for an edge list already known to form a spanning
    /// tree. Use [`validate`] for untrusted input.
    fn build(num_classes: usize, num_stations: usize, mut edges: Vec<(usize, usize)>) -> Self {
        edges.sort_unstable();
        let nv = num_classes + num_stations;
        let mut adjacency = vec![Vec::new(); nv];
        let mut edge_lookup = vec![None; num_classes * num_stations];
        for (e, &(i, j)) in edges.iter().enumerate() {
            adjacency[i].push(e);
            adjacency[num_classes + j].push(e);
            edge_lookup[i * num_stations + j] = Some(e);
        }
        let kinds = (0..nv)
            .map(|v| if v < num_classes { VertexKind::Class } else { VertexKind::Station })
            .collect();
        let mut tree = TreeIndex {
            num_classes,
            num_stations,
            edges,
            adjacency,
            kinds,
            order: Vec::new(),
            root: 0,
            edge_lookup,
        };
        let (order, root) = tree.peel();
        tree.order = order;
        tree.root = root;
        tree
    }

    fn peel(&self) -> (Vec<Peel>, usize) {
        let nv = self.num_vertices();
        let mut degree: Vec<usize> = self.adjacency.iter().map(Vec::len).collect();
        let mut removed_edge = vec![false; self.edges.len()];
        let mut removed_vertex = vec![false; nv];
        let mut order = Vec::with_capacity(self.edges.len());
        // Smallest current leaf first. Desk-scale graphs make the linear scan fine.
        for _ in 0..self.edges.len() {
            let leaf = (0..nv)
                .find(|&v| !removed_vertex[v] && degree[v] == 1)
                .expect("a finite tree with an edge has a leaf");
            let edge = *self.adjacency[leaf]
                .iter()
                .find(|&&e| !removed_edge[e])
                .expect("leaf has one live edge");
            let other = self.other_end(edge, leaf);
            removed_edge[edge] = true;
            removed_vertex[leaf] = true;
            degree[leaf] = 0;
            degree[other] -= 1;
            order.push(Peel { leaf, edge });
        }
        let root = (0..nv).find(|&v| !removed_vertex[v]).expect("one vertex survives");
        (order, root)
    }

    pub fn num_vertices(&self) -> usize {
        self.num_classes + self.num_stations
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn class_vertex(&self, i: usize) -> usize {
        i
    }

    pub fn station_vertex(&self, j: usize) -> usize {
        self.num_classes + j
    }

    pub fn edge_index(&self, class: usize, station: usize) -> Option<usize> {
        self.edge_lookup[class * self.num_stations + station]
    }

    /// Endpoints of an edge as vertex ids.
    pub fn endpoints(&self, edge: usize) -> (usize, usize) {
        let (i, j) = self.edges[edge];
        (i, self.num_classes + j)
    }

    pub fn other_end(&self, edge: usize, vertex: usize) -> usize {
        let (a, b) = self.endpoints(edge);
        if vertex == a {
            b
        } else {
            a
        }
    }

    /// Number of edges on the longest path.
    pub fn diameter(&self) -> usize {
        let nv = self.num_vertices();
        let bfs = |src: usize| {
            let mut dist = vec![usize::MAX; nv];
            dist[src] = 0;
            let mut queue = std::collections::VecDeque::from([src]);
            while let Some(v) = queue.pop_front() {
                for &e in &self.adjacency[v] {
                    let w = self.other_end(e, v);
                    if dist[w] == usize::MAX {
                        dist[w] = dist[v] + 1;
                        queue.push_back(w);
                    }
                }
            }
            dist
        };
        (0..nv).map(|v| *bfs(v).iter().max().unwrap()).max().unwrap_or(0)
    }
}

/// Leaf elimination order of a validated tree (smallest leaf first).
pub fn leaf_order(tree: &TreeIndex) -> &[Peel] {
    &tree.order
}

/// A system whose activity graph has been checked to be a spanning tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidatedSystem {
    pub spec: SystemSpec,
    pub tree: TreeIndex,
}

impl ValidatedSystem {
    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn num_stations(&self) -> usize {
        self.spec.num_stations
    }

    pub fn num_edges(&self) -> usize {
        self.tree.num_edges()
    }

    /// Fluid service rate on each edge, in tree edge order.
    pub fn edge_mu(&self) -> Vec<f64> {
        self.tree.edges.iter().map(|&(i, j)| self.spec.mu[i][j]).collect()
    }

    pub fn edge_mu_hat(&self) -> Vec<f64> {
        self.tree.edges.iter().map(|&(i, j)| self.spec.mu_hat[i][j]).collect()
    }

    /// `n lambda_i + sqrt(n) lambda_hat_i`.
    pub fn lambda_n(&self, n: f64) -> Vec<f64> {
        let sn = n.sqrt();
        self.spec.lambda.iter().zip(&self.spec.lambda_hat).map(|(l, lh)| n * l + sn * lh).collect()
    }

    /// `mu_ij + mu_hat_ij / sqrt(n)` per edge.
    pub fn mu_n(&self, n: f64) -> Vec<f64> {
        let sn = n.sqrt();
        self.edge_mu().iter().zip(self.edge_mu_hat()).map(|(m, mh)| m + mh / sn).collect()
    }

    /// `round(n nu_j)`.
    pub fn servers(&self, n: f64) -> Vec<i64> {
        self.spec.nu.iter().map(|v| (n * v).round() as i64).collect()
    }
}

fn check_rates(field: &'static str, values: &[f64], strictly_positive: bool) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        let ok = value.is_finite() && if strictly_positive { value > 0.0 } else { value >= 0.0 };
        if !ok {
            return Err(Error::NonpositiveRate { field, index, value });
        }
    }
    Ok(())
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet { parent: (0..n).collect() }
    }

    fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Checks structure and parameters and builds the tree index.
pub fn validate(spec: SystemSpec) -> Result<ValidatedSystem> {
    let (ni, nj) = (spec.num_classes, spec.num_stations);
    if ni == 0 || nj == 0 {
        return Err(Error::InvalidSystem("need at least one class and one station".into()));
    }
    let dims_ok = spec.lambda.len() == ni
        && spec.theta.len() == ni
        && spec.lambda_hat.len() == ni
        && spec.interarrival.len() == ni
        && spec.nu.len() == nj
        && spec.mu.len() == ni
        && spec.mu_hat.len() == ni
        && spec.mu.iter().chain(&spec.mu_hat).all(|row| row.len() == nj);
    if !dims_ok {
        return Err(Error::InvalidSystem("parameter dimensions do not match I and J".into()));
    }
    check_rates("lambda", &spec.lambda, true)?;
    check_rates("nu", &spec.nu, true)?;
    check_rates("theta", &spec.theta, false)?;
    check_rates("gamma", &[spec.gamma], true)?;
    for (i, row) in spec.mu.iter().enumerate() {
        for (j, &m) in row.iter().enumerate() {
            if !m.is_finite() || m < 0.0 {
                return Err(Error::NonpositiveRate { field: "mu", index: i * nj + j, value: m });
            }
        }
    }
    for (field, values) in [("lambda_hat", &spec.lambda_hat)] {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonpositiveRate { field, index, value: values[index] });
        }
    }
    for (i, ia) in spec.interarrival.iter().enumerate() {
        ia.validate(i)?;
    }

    let mut on_edge = vec![false; ni * nj];
    for &(i, j) in &spec.edges {
        if i >= ni || j >= nj {
            return Err(Error::InvalidSystem(format!("activity ({i},{j}) out of range")));
        }
        if on_edge[i * nj + j] {
            return Err(Error::InvalidSystem(format!("duplicate activity ({i},{j})")));
        }
        on_edge[i * nj + j] = true;
    }
    for i in 0..ni {
        for j in 0..nj {
            let edge = on_edge[i * nj + j];
            if (spec.mu[i][j] > 0.0) != edge || (!edge && spec.mu_hat[i][j] != 0.0) {
                return Err(Error::RateEdgeMismatch { class: i, station: j });
            }
            if !spec.mu_hat[i][j].is_finite() {
                return Err(Error::NonpositiveRate {
                    field: "mu_hat",
                    index: i * nj + j,
                    value: spec.mu_hat[i][j],
                });
            }
        }
    }

    let mut sorted = spec.edges.clone();
    sorted.sort_unstable();
    let mut dsu = DisjointSet::new(ni + nj);
    for &(i, j) in &sorted {
        if !dsu.union(i, ni + j) {
            return Err(Error::CycleDetected { class: i, station: j });
        }
    }
    let components = {
        let mut roots: Vec<usize> = (0..ni + nj).map(|v| dsu.find(v)).collect();
        roots.sort_unstable();
        roots.dedup();
        roots.len()
    };
    if components > 1 {
        return Err(Error::Disconnected { components });
    }
    let tree = TreeIndex::build(ni, nj, sorted);
    Ok(ValidatedSystem { spec, tree })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n_tree() -> SystemSpec {
        SystemSpec::simple(2, 2, &[(0, 0), (1, 0), (1, 1)], &[0.5, 1.5], &[1.0; 3], &[1.0, 1.0])
    }

    /// Four classes, three stations, six activities.
    fn chain4() -> SystemSpec {
        let edges = [(0, 0), (1, 0), (1, 1), (2, 1), (2, 2), (3, 2)];
        SystemSpec::simple(4, 3, &edges, &[1.0; 4], &[1.0; 6], &[1.0; 3])
    }

    #[test]
    fn accepts_four_class_chain() {
        let sys = validate(chain4()).unwrap();
        assert_eq!(sys.num_edges(), 4 + 3 - 1);
    }

    #[test]
    fn complete_bipartite_2x2_has_a_cycle() {
        let spec = SystemSpec::simple(
            2,
            2,
            &[(0, 0), (0, 1), (1, 0), (1, 1)],
            &[1.0, 1.0],
            &[1.0; 4],
            &[1.0, 1.0],
        );
        assert!(matches!(validate(spec), Err(Error::CycleDetected { .. })));
    }

    #[test]
    fn disconnected_forest_rejected() {
        let spec = SystemSpec::simple(2, 2, &[(0, 0), (1, 1)], &[1.0, 1.0], &[1.0; 2], &[1.0; 2]);
        assert_eq!(validate(spec), Err(Error::Disconnected { components: 2 }));
    }

    #[test]
    fn rate_off_edge_rejected() {
        let mut spec = n_tree();
        spec.mu[0][1] = 0.5;
        assert_eq!(validate(spec), Err(Error::RateEdgeMismatch { class: 0, station: 1 }));
        let mut spec = n_tree();
        spec.mu[1][1] = 0.0;
        assert_eq!(validate(spec), Err(Error::RateEdgeMismatch { class: 1, station: 1 }));
    }

    #[test]
    fn nonpositive_rates_rejected() {
        let mut spec = n_tree();
        spec.lambda[1] = 0.0;
        assert!(matches!(validate(spec), Err(Error::NonpositiveRate { field: "lambda", .. })));
        let mut spec = n_tree();
        spec.nu[0] = f64::NAN;
        assert!(matches!(validate(spec), Err(Error::NonpositiveRate { field: "nu", .. })));
        let mut spec = n_tree();
        spec.theta[0] = -1.0;
        assert!(matches!(validate(spec), Err(Error::NonpositiveRate { field: "theta", .. })));
    }

    #[test]
    fn single_activity_order() {
        let sys = validate(SystemSpec::simple(1, 1, &[(0, 0)], &[1.0], &[1.0], &[1.0])).unwrap();
        assert_eq!(leaf_order(&sys.tree), &[Peel { leaf: 0, edge: 0 }]);
        assert_eq!(sys.tree.root, 1);
    }

    #[test]
    fn n_tree_peels_class_one_first() {
        let sys = validate(n_tree()).unwrap();
        let order = leaf_order(&sys.tree);
        assert_eq!(order.len(), 3);
        assert_eq!(order[0], Peel { leaf: 0, edge: 0 });
        // Station A (vertex 2) is the smallest leaf once class 1 is gone.
        assert_eq!(order[1], Peel { leaf: 2, edge: 1 });
        assert_eq!(order[2], Peel { leaf: 1, edge: 2 });
        assert_eq!(sys.tree.root, 3);
    }

    #[test]
    fn path_class_station_class_takes_two_removals() {
        let spec = SystemSpec::simple(2, 1, &[(0, 0), (1, 0)], &[0.5, 0.5], &[1.0; 2], &[1.0]);
        let sys = validate(spec).unwrap();
        assert_eq!(leaf_order(&sys.tree).len(), 2);
        assert_eq!(sys.tree.root, 2);
    }

    #[test]
    fn json_roundtrip_uses_offset_station_labels() {
        let spec = n_tree();
        let text = spec.to_json_string();
        assert!(text.contains("\"1,3\""));
        assert!(text.contains("[\n      2,\n      4\n    ]"));
        assert_eq!(SystemSpec::from_json_str(&text).unwrap(), spec);
    }

    #[test]
    fn json_rejects_station_label_below_offset() {
        let text = r#"{"schema":1,"classes":1,"stations":1,"activities":[[1,1]],
            "lambda":[1],"mu":{"1,2":1},"nu":[1],"gamma":1}"#;
        assert!(matches!(SystemSpec::from_json_str(text), Err(Error::InvalidSystem(_))));
    }

    #[test]
    fn interarrival_scv_must_match_kind() {
        let mut spec = n_tree();
        spec.interarrival[0] =
            InterarrivalSpec { kind: InterarrivalKind::Exponential, scv: 0.5, moment_order: 4.0 };
        assert!(validate(spec).is_err());
        let mut spec = n_tree();
        spec.interarrival[0] =
            InterarrivalSpec { kind: InterarrivalKind::Uniform, scv: 0.5, moment_order: 4.0 };
        assert!(validate(spec).is_err());
    }

    #[test]
    fn interarrival_samplers_have_unit_mean_and_target_scv() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for (kind, scv) in [
            (InterarrivalKind::Exponential, 1.0),
            (InterarrivalKind::Deterministic, 0.0),
            (InterarrivalKind::Lognormal, 0.5),
            (InterarrivalKind::Uniform, 0.2),
        ] {
            let s = InterarrivalSpec { kind, scv, moment_order: 4.0 }.sampler();
            let m = 200_000;
            let draws: Vec<f64> = (0..m).map(|_| s.sample(&mut rng)).collect();
            let mean = draws.iter().sum::<f64>() / m as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
            assert!((mean - 1.0).abs() < 0.01, "{kind:?} mean {mean}");
            assert!((var - scv).abs() < 0.02 + 0.05 * scv, "{kind:?} var {var}");
        }
    }

    #[test]
    fn validation_is_deterministic() {
        let a = serde_json::to_vec(&validate(chain4()).unwrap()).unwrap();
        let b = serde_json::to_vec(&validate(chain4()).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
