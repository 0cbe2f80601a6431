//! Feedback maps `x -> U`.

use serde::{Deserialize, Serialize};

use super::hamiltonian::{hamiltonian, phi};
use super::hjb::{node_gradient, ValueField};
use super::{ControlPoint, CostSpec, DriftData, Grid};
use crate::error::{Error, Result};

/// Control stored at every node of a grid, looked up at the nearest node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub grid: Grid,
    pub num_classes: usize,
    pub num_stations: usize,
    /// `num_classes` entries per node.
    pub u: Vec<f64>,
    /// `num_stations` entries per node.
    pub v: Vec<f64>,
}

impl PolicyTable {
    pub fn control(&self, idx: usize) -> ControlPoint {
        let (ni, nj) = (self.num_classes, self.num_stations);
        ControlPoint {
            u: self.u[idx * ni..(idx + 1) * ni].to_vec(),
            v: self.v[idx * nj..(idx + 1) * nj].to_vec(),
        }
    }

    pub fn lookup(&self, x: &[f64]) -> ControlPoint {
        self.control(self.grid.nearest(x))
    }

    /// Accumulates `w * h(x)` into `(u, v)` without allocating.
    fn add_weighted(&self, x: &[f64], w: f64, u: &mut [f64], v: &mut [f64]) {
        let idx = self.grid.nearest(x);
        let (ni, nj) = (self.num_classes, self.num_stations);
        for (a, s) in u.iter_mut().zip(&self.u[idx * ni..(idx + 1) * ni]) {
            *a += w * s;
        }
        for (a, s) in v.iter_mut().zip(&self.v[idx * nj..(idx + 1) * nj]) {
            *a += w * s;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MarkovPolicy {
    HStar { table: PolicyTable },
    HZero { num_classes: usize, num_stations: usize },
    Mollified { table: PolicyTable, epsilon: f64 },
    Constant { control: ControlPoint },
}

impl MarkovPolicy {
    pub fn h_zero(num_classes: usize, num_stations: usize) -> Self {
        MarkovPolicy::HZero { num_classes, num_stations }
    }

    /// Writes `h(x)` into `out` reusing its buffers.
    pub fn eval_into(&self, x: &[f64], out: &mut ControlPoint) {
        match self {
            MarkovPolicy::HStar { table } => {
                let idx = table.grid.nearest(x);
                let (ni, nj) = (table.num_classes, table.num_stations);
                out.u.clear();
                out.u.extend_from_slice(&table.u[idx * ni..(idx + 1) * ni]);
                out.v.clear();
                out.v.extend_from_slice(&table.v[idx * nj..(idx + 1) * nj]);
            }
            _ => *out = self.eval(x),
        }
    }

    pub fn eval(&self, x: &[f64]) -> ControlPoint {
        match self {
            MarkovPolicy::HStar { table } => table.lookup(x),
            MarkovPolicy::HZero { num_classes, num_stations } => {
                ControlPoint::vertex(*num_classes, *num_stations, 0, 0)
            }
            MarkovPolicy::Mollified { table, epsilon } => {
                mollified_eval(table, *epsilon, x).expect("positive epsilon")
            }
            MarkovPolicy::Constant { control } => control.clone(),
        }
    }
}

/// Lattice points `y` of `eps Z^I` in the open Euclidean ball of radius
/// `eps sqrt(I)` around `x`, with weights proportional to the distance from
/// `y` to the sphere.
pub fn mollifier_weights(x: &[f64], epsilon: f64) -> Result<Vec<(Vec<f64>, f64)>> {
    if !(epsilon > 0.0) {
        return Err(Error::EmptyNeighborhood);
    }
    let dim = x.len();
    let radius = epsilon * (dim as f64).sqrt();
    let lo: Vec<i64> = x.iter().map(|v| ((v - radius) / epsilon).ceil() as i64).collect();
    let hi: Vec<i64> = x.iter().map(|v| ((v + radius) / epsilon).floor() as i64).collect();
    let mut out = Vec::new();
    let mut k = lo.clone();
    'outer: loop {
        let y: Vec<f64> = k.iter().map(|&ki| ki as f64 * epsilon).collect();
        let dist = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let w = radius - dist;
        if w > 0.0 {
            out.push((y, w));
        }
        for a in 0..dim {
            if k[a] < hi[a] {
                k[a] += 1;
                continue 'outer;
            }
            k[a] = lo[a];
        }
        break;
    }
    let total: f64 = out.iter().map(|(_, w)| w).sum();
    if out.is_empty() || !(total > 0.0) {
        return Err(Error::EmptyNeighborhood);
    }
    for (_, w) in &mut out {
        *w /= total;
    }
    Ok(out)
}

fn mollified_eval(table: &PolicyTable, epsilon: f64, x: &[f64]) -> Result<ControlPoint> {
    let mut u = vec![0.0; table.num_classes];
    let mut v = vec![0.0; table.num_stations];
    for (y, w) in mollifier_weights(x, epsilon)? {
        table.add_weighted(&y, w, &mut u, &mut v);
    }
    Ok(ControlPoint { u, v })
}

/// Lipschitz regularization of a tabulated feedback.
pub fn mollify_policy(h_star: &PolicyTable, epsilon: f64) -> Result<MarkovPolicy> {
    if !(epsilon > 0.0) {
        return Err(Error::EmptyNeighborhood);
    }
    Ok(MarkovPolicy::Mollified { table: h_star.clone(), epsilon })
}

/// Default mollification level.
pub const DEFAULT_EPSILON: f64 = 0.05;
/// Default pointwise suboptimality allowance of the mollified feedback.
pub const DEFAULT_DELTA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MollificationCheck {
    /// `max (b(x, h(x)).Df(x) + L(x, h(x)) - H(x, Df(x)))` over the nodes.
    pub max_gap: f64,
    pub worst_node: Vec<f64>,
    pub nodes: usize,
    pub delta: f64,
    pub passed: bool,
}

/// Pointwise suboptimality of the feedback `h` against the Hamiltonian at
/// every grid node in the Euclidean ball of radius `radius`, using centered
/// node gradients of the value field.
pub fn mollification_check(
    value: &ValueField,
    d: &DriftData,
    cost: &CostSpec,
    h: &MarkovPolicy,
    radius: f64,
    delta: f64,
) -> MollificationCheck {
    let grid = &value.grid;
    let mut max_gap = f64::NEG_INFINITY;
    let mut worst_node = Vec::new();
    let mut nodes = 0;
    for idx in 0..grid.len() {
        let x = grid.point(idx);
        if x.iter().map(|v| v * v).sum::<f64>().sqrt() > radius {
            continue;
        }
        nodes += 1;
        let p = node_gradient(grid, &value.values, idx);
        let (ham, _) = hamiltonian(&x, &p, d, cost, value.tol_h);
        let gap = phi(&x, &p, d, cost, &h.eval(&x)) - ham;
        if gap > max_gap {
            max_gap = gap;
            worst_node = x;
        }
    }
    MollificationCheck { max_gap, worst_node, nodes, delta, passed: nodes > 0 && max_gap <= delta }
}
