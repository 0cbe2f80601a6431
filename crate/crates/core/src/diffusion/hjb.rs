//! Finite-difference policy iteration for the discounted HJB equation
//! `(1/2) sum r_i^2 f_ii + H(x, Df) - gamma f = 0` on a truncated box.
//!
//! First differences are centered where the cell Peclet condition
//! `|b_i| h <= r_i^2` holds and upwind elsewhere, which keeps every
//! off-diagonal coefficient nonnegative. On the box faces the second
//! difference is dropped (linear extrapolation) and only drift pointing into
//! the box is kept.

use serde::{Deserialize, Serialize};

use super::hamiltonian::{simplex_grid, vertex_candidates};
use super::policy::PolicyTable;
use super::{ControlPoint, CostSpec, DriftData, DriftScratch, Grid};
use crate::error::{Error, Result};

fn default_tol_pde() -> f64 {
    1e-6
}
fn default_tol_h() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200
}
fn default_resolution() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    /// Per-axis half-width; chosen from the diffusion scales when absent.
    #[serde(default)]
    pub half_width: Option<Vec<f64>>,
    pub spacing: f64,
    #[serde(default = "default_tol_pde")]
    pub tol_pde: f64,
    #[serde(default = "default_tol_h")]
    pub tol_h: f64,
    #[serde(default = "default_max_iter")]
    pub max_policy_iterations: usize,
    /// Simplex lattice resolution for costs that are not vertex-exact.
    #[serde(default = "default_resolution")]
    pub control_resolution: usize,
    /// Re-solve on a doubled box and compare at `probes`.
    #[serde(default)]
    pub check_box: bool,
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
}

impl GridConfig {
    pub fn new(spacing: f64) -> Self {
        GridConfig {
            half_width: None,
            spacing,
            tol_pde: default_tol_pde(),
            tol_h: default_tol_h(),
            max_policy_iterations: default_max_iter(),
            control_resolution: default_resolution(),
            check_box: false,
            probes: Vec::new(),
        }
    }

    pub fn with_half_width(mut self, w: Vec<f64>) -> Self {
        self.half_width = Some(w);
        self
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }
}

/// Default half-width: a multiple of the diffusion spread over the slower
/// of the discounting and mean-reversion time scales.
pub fn auto_half_width(d: &DriftData, gamma: f64) -> Vec<f64> {
    let min_mu = d.mu.iter().copied().fold(f64::INFINITY, f64::min);
    let t = (1.0 / gamma).max(1.0 / min_mu);
    let drift = d.ell.iter().map(|l| l.abs()).fold(0.0, f64::max);
    d.r.iter().map(|r| (6.0 * r * t.sqrt() + 2.0 * drift * t).max(6.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub gamma: f64,
    pub residual: f64,
    pub iterations: usize,
    pub tol_pde: f64,
    pub tol_h: f64,
}

impl ValueField {
    pub fn value_at(&self, x: &[f64]) -> f64 {
        self.grid.interpolate(&self.values, x)
    }

    /// Centered gradient at a node, one-sided on faces.
    pub fn gradient_at_node(&self, idx: usize) -> Vec<f64> {
        node_gradient(&self.grid, &self.values, idx)
    }
}

pub(crate) fn node_gradient(grid: &Grid, f: &[f64], idx: usize) -> Vec<f64> {
    let strides = grid.strides();
    let multi = grid.multi_index(idx);
    (0..grid.dim())
        .map(|a| {
            let h = grid.spacing[a];
            let k = multi[a];
            let s = strides[a];
            if k == 0 {
                (f[idx + s] - f[idx]) / h
            } else if k + 1 == grid.nodes[a] {
                (f[idx] - f[idx - s]) / h
            } else {
                (f[idx + s] - f[idx - s]) / (2.0 * h)
            }
        })
        .collect()
}

/// First differences used by the scheme at an interior node for drift `b`.
pub fn discrete_gradient(grid: &Grid, f: &[f64], idx: usize, b: &[f64], r: &[f64]) -> Vec<f64> {
    let strides = grid.strides();
    (0..grid.dim())
        .map(|a| {
            let (h, s) = (grid.spacing[a], strides[a]);
            if b[a].abs() * h <= r[a] * r[a] {
                (f[idx + s] - f[idx - s]) / (2.0 * h)
            } else if b[a] > 0.0 {
                (f[idx + s] - f[idx]) / h
            } else {
                (f[idx] - f[idx - s]) / h
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct HjbReport {
    pub value: ValueField,
    pub policy: PolicyTable,
    pub assumption3: Vec<String>,
    /// Largest relative change at the probes when the box was doubled.
    pub box_change: Option<f64>,
}

/// Precomputed drift and cost for every (node, candidate control).
struct Candidates {
    start: Vec<usize>,
    /// Index into `controls` of each candidate.
    control: Vec<usize>,
    b: Vec<f64>,
    l: Vec<f64>,
    controls: Vec<ControlPoint>,
}

fn build_candidates(
    grid: &Grid,
    d: &DriftData,
    cost: &CostSpec,
    resolution: usize,
) -> Candidates {
    let (ni, nj) = (d.num_classes(), d.num_stations());
    let sets: [Vec<ControlPoint>; 3] = if cost.vertex_exact() {
        [vertex_candidates(ni, nj, 1.0), vertex_candidates(ni, nj, -1.0), vertex_candidates(ni, nj, 0.0)]
    } else {
        let base = ControlPoint::vertex(ni, nj, 0, 0);
        let pos = simplex_grid(ni, resolution)
            .into_iter()
            .map(|u| ControlPoint { u, v: base.v.clone() })
            .collect();
        let neg = simplex_grid(nj, resolution)
            .into_iter()
            .map(|v| ControlPoint { u: base.u.clone(), v })
            .collect();
        [pos, neg, vec![base]]
    };
    let offsets = [0, sets[0].len(), sets[0].len() + sets[1].len()];
    let controls: Vec<ControlPoint> = sets.iter().flatten().cloned().collect();

    let mut out = Candidates {
        start: Vec::with_capacity(grid.len() + 1),
        control: Vec::new(),
        b: Vec::new(),
        l: Vec::new(),
        controls,
    };
    let mut scratch = DriftScratch::default();
    let mut b = vec![0.0; ni];
    for idx in 0..grid.len() {
        out.start.push(out.control.len());
        let x = grid.point(idx);
        let s: f64 = x.iter().sum();
        let which = if s > 0.0 {
            0
        } else if s < 0.0 {
            1
        } else {
            2
        };
        for (k, cp) in sets[which].iter().enumerate() {
            d.drift_into(&x, cp, &mut scratch, &mut b);
            out.control.push(offsets[which] + k);
            out.b.extend_from_slice(&b);
            out.l.push(cost.eval_control_fast(&x, cp));
        }
    }
    out.start.push(out.control.len());
    out
}

/// Sparse operator `A f = diag f - sum plus f(+) - sum minus f(-)`.
struct Operator {
    dim: usize,
    diag: Vec<f64>,
    plus: Vec<f64>,
    minus: Vec<f64>,
    up: Vec<usize>,
    down: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl Operator {
    fn new(grid: &Grid) -> Self {
        let (n, dim) = (grid.len(), grid.dim());
        let strides = grid.strides();
        let mut up = vec![NONE; n * dim];
        let mut down = vec![NONE; n * dim];
        for idx in 0..n {
            let m = grid.multi_index(idx);
            for a in 0..dim {
                if m[a] + 1 < grid.nodes[a] {
                    up[idx * dim + a] = idx + strides[a];
                }
                if m[a] > 0 {
                    down[idx * dim + a] = idx - strides[a];
                }
            }
        }
        Operator {
            dim,
            diag: vec![0.0; n],
            plus: vec![0.0; n * dim],
            minus: vec![0.0; n * dim],
            up,
            down,
        }
    }

    /// Coefficients `(a+, a-)` along one axis at one node.
    fn coefficients(&self, idx: usize, a: usize, b: f64, r: f64, h: f64) -> (f64, f64) {
        let k = idx * self.dim + a;
        match (self.down[k] == NONE, self.up[k] == NONE) {
            (true, _) => (b.max(0.0) / h, 0.0),
            (_, true) => (0.0, (-b).max(0.0) / h),
            _ => {
                let diff = 0.5 * r * r / (h * h);
                if b.abs() * h <= r * r {
                    (diff + 0.5 * b / h, diff - 0.5 * b / h)
                } else {
                    (diff + b.max(0.0) / h, diff + (-b).max(0.0) / h)
                }
            }
        }
    }

    /// Value of the discrete generator plus cost at one node for one
    /// candidate: `sum a+ (f+ - f) + a- (f- - f) + L - gamma f`.
    fn node_value(&self, grid: &Grid, r: &[f64], gamma: f64, f: &[f64], idx: usize, b: &[f64], l: f64) -> f64 {
        let mut acc = l - gamma * f[idx];
        for a in 0..self.dim {
            let (ap, am) = self.coefficients(idx, a, b[a], r[a], grid.spacing[a]);
            let k = idx * self.dim + a;
            if ap != 0.0 {
                acc += ap * (f[self.up[k]] - f[idx]);
            }
            if am != 0.0 {
                acc += am * (f[self.down[k]] - f[idx]);
            }
        }
        acc
    }

    fn assemble(&mut self, grid: &Grid, r: &[f64], gamma: f64, cand: &Candidates, policy: &[usize], rhs: &mut [f64]) {
        for idx in 0..grid.len() {
            let c = cand.start[idx] + policy[idx];
            let b = &cand.b[c * self.dim..(c + 1) * self.dim];
            let mut diag = gamma;
            for a in 0..self.dim {
                let (ap, am) = self.coefficients(idx, a, b[a], r[a], grid.spacing[a]);
                self.plus[idx * self.dim + a] = ap;
                self.minus[idx * self.dim + a] = am;
                diag += ap + am;
            }
            self.diag[idx] = diag;
            rhs[idx] = cand.l[c];
        }
    }

    fn apply(&self, f: &[f64], out: &mut [f64]) {
        for idx in 0..f.len() {
            let mut acc = self.diag[idx] * f[idx];
            for a in 0..self.dim {
                let k = idx * self.dim + a;
                if self.plus[k] != 0.0 {
                    acc -= self.plus[k] * f[self.up[k]];
                }
                if self.minus[k] != 0.0 {
                    acc -= self.minus[k] * f[self.down[k]];
                }
            }
            out[idx] = acc;
        }
    }

    fn residual_norm(&self, f: &[f64], rhs: &[f64], work: &mut [f64]) -> f64 {
        self.apply(f, work);
        work.iter().zip(rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn solve(&self, rhs: &[f64], f: &mut [f64]) -> Result<()> {
        let scale = rhs.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            f.iter_mut().for_each(|v| *v = 0.0);
            return Ok(());
        }
        if self.dim == 1 {
            self.thomas(rhs, f);
            return Ok(());
        }
        let tol = 1e-11 * scale;
        if self.bicgstab(rhs, f, tol, 5000) {
            return Ok(());
        }
        self.gauss_seidel(rhs, f, tol, 1e-8 * scale)
    }

    fn thomas(&self, rhs: &[f64], f: &mut [f64]) {
        let n = rhs.len();
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        for i in 0..n {
            let sub = if i > 0 { -self.minus[i] } else { 0.0 };
            let denom = self.diag[i] - if i > 0 { sub * c[i - 1] } else { 0.0 };
            c[i] = -self.plus[i] / denom;
            d[i] = (rhs[i] - if i > 0 { sub * d[i - 1] } else { 0.0 }) / denom;
        }
        f[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            f[i] = d[i] - c[i] * f[i + 1];
        }
    }

    /// Jacobi-preconditioned BiCGSTAB; `false` on breakdown or stall.
    fn bicgstab(&self, rhs: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> bool {
        let n = rhs.len();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let inf = |a: &[f64]| a.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let mut r = vec![0.0; n];
        self.apply(x, &mut r);
        for i in 0..n {
            r[i] = rhs[i] - r[i];
        }
        if inf(&r) <= tol {
            return true;
        }
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut t = vec![0.0; n];
        for _ in 0..max_iter {
            let rho_new = dot(&r0, &r);
            if rho_new == 0.0 || omega == 0.0 {
                return false;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
                y[i] = p[i] / self.diag[i];
            }
            self.apply(&y, &mut v);
            let den = dot(&r0, &v);
            if den == 0.0 {
                return false;
            }
            alpha = rho / den;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if inf(&s) <= tol {
                for i in 0..n {
                    x[i] += alpha * y[i];
                }
                return true;
            }
            for i in 0..n {
                z[i] = s[i] / self.diag[i];
            }
            self.apply(&z, &mut t);
            let tt = dot(&t, &t);
            if tt == 0.0 {
                return false;
            }
            omega = dot(&t, &s) / tt;
            for i in 0..n {
                x[i] += alpha * y[i] + omega * z[i];
                r[i] = s[i] - omega * t[i];
            }
            if inf(&r) <= tol {
                // guard against drift of the recursive residual
                let mut work = vec![0.0; n];
                return self.residual_norm(x, rhs, &mut work) <= 10.0 * tol;
            }
        }
        false
    }

    /// Sweeps until `tol`, or until the residual stagnates below `floor`.
    fn gauss_seidel(&self, rhs: &[f64], f: &mut [f64], tol: f64, floor: f64) -> Result<()> {
        let n = rhs.len();
        let mut work = vec![0.0; n];
        let max_sweeps = 200_000;
        let mut prev = f64::INFINITY;
        for sweep in 0..max_sweeps {
            for idx in 0..n {
                let mut acc = rhs[idx];
                for a in 0..self.dim {
                    let k = idx * self.dim + a;
                    if self.plus[k] != 0.0 {
                        acc += self.plus[k] * f[self.up[k]];
                    }
                    if self.minus[k] != 0.0 {
                        acc += self.minus[k] * f[self.down[k]];
                    }
                }
                f[idx] = acc / self.diag[idx];
            }
            if sweep % 50 == 49 {
                let res = self.residual_norm(f, rhs, &mut work);
                if res <= tol || (res <= floor && res >= 0.99 * prev) {
                    return Ok(());
                }
                prev = res;
            }
        }
        let residual = self.residual_norm(f, rhs, &mut work);
        Err(Error::NoConvergence { iterations: max_sweeps, residual })
    }
}

fn solve_on_grid(
    grid: Grid,
    d: &DriftData,
    cost: &CostSpec,
    gamma: f64,
    cfg: &GridConfig,
) -> Result<(ValueField, PolicyTable)> {
    if grid.nodes.iter().any(|&n| n < 3) {
        return Err(Error::InvalidConfig("grid needs at least three nodes per axis".into()));
    }
    let n = grid.len();
    let dim = grid.dim();
    let r = &d.r;
    let cand = build_candidates(&grid, d, cost, cfg.control_resolution);
    let mut op = Operator::new(&grid);
    let mut policy = vec![0usize; n];
    let mut f = vec![0.0; n];
    let mut rhs = vec![0.0; n];

    let mut iterations = 0;
    loop {
        iterations += 1;
        op.assemble(&grid, r, gamma, &cand, &policy, &mut rhs);
        op.solve(&rhs, &mut f)?;
        let mut changed = 0usize;
        for idx in 0..n {
            let (lo, hi) = (cand.start[idx], cand.start[idx + 1]);
            let eval = |c: usize| {
                op.node_value(&grid, r, gamma, &f, idx, &cand.b[c * dim..(c + 1) * dim], cand.l[c])
            };
            let current = eval(lo + policy[idx]);
            let mut best = current;
            let mut best_k = policy[idx];
            for c in lo..hi {
                let v = eval(c);
                if v < best {
                    best = v;
                    best_k = c - lo;
                }
            }
            if best < current - 1e-12 * (1.0 + current.abs()) {
                policy[idx] = best_k;
                changed += 1;
            }
        }
        if changed == 0 {
            break;
        }
        if iterations >= cfg.max_policy_iterations {
            let residual = hjb_residual(&op, &grid, r, gamma, &cand, &f);
            return Err(Error::NoConvergence { iterations, residual });
        }
    }

    let residual = hjb_residual(&op, &grid, r, gamma, &cand, &f);
    if !(residual <= cfg.tol_pde) {
        return Err(Error::NoConvergence { iterations, residual });
    }
    let mut u = Vec::with_capacity(n * d.num_classes());
    let mut v = Vec::with_capacity(n * d.num_stations());
    for idx in 0..n {
        let cp = &cand.controls[cand.control[cand.start[idx] + policy[idx]]];
        u.extend_from_slice(&cp.u);
        v.extend_from_slice(&cp.v);
    }
    let table = PolicyTable {
        grid: grid.clone(),
        num_classes: d.num_classes(),
        num_stations: d.num_stations(),
        u,
        v,
    };
    let value = ValueField {
        grid,
        values: f,
        gamma,
        residual,
        iterations,
        tol_pde: cfg.tol_pde,
        tol_h: cfg.tol_h,
    };
    Ok((value, table))
}

/// `max_nodes |min_U (discrete generator + L - gamma f)|`, relative to
/// `max(1, gamma |f|_inf)`.
fn hjb_residual(op: &Operator, grid: &Grid, r: &[f64], gamma: f64, cand: &Candidates, f: &[f64]) -> f64 {
    let dim = grid.dim();
    let mut worst = 0.0_f64;
    for idx in 0..grid.len() {
        let best = (cand.start[idx]..cand.start[idx + 1])
            .map(|c| op.node_value(grid, r, gamma, f, idx, &cand.b[c * dim..(c + 1) * dim], cand.l[c]))
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best.abs());
    }
    let scale = f.iter().map(|v| gamma * v.abs()).fold(1.0, f64::max);
    worst / scale
}

/// Solves the HJB equation and extracts the minimizing feedback on the grid.
pub fn solve_hjb(d: &DriftData, cost: &CostSpec, gamma: f64, cfg: &GridConfig) -> Result<HjbReport> {
    cost.validate(d.num_classes(), d.num_stations())?;
    if !(cfg.spacing > 0.0) || !(gamma > 0.0) {
        return Err(Error::InvalidConfig("spacing and gamma must be positive".into()));
    }
    if d.r.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidConfig("diffusion coefficients must be positive".into()));
    }
    let half = cfg.half_width.clone().unwrap_or_else(|| auto_half_width(d, gamma));
    if half.len() != d.num_classes() {
        return Err(Error::InvalidConfig("half_width needs one entry per class".into()));
    }
    let (value, policy) = solve_on_grid(Grid::centered(&half, cfg.spacing), d, cost, gamma, cfg)?;
    let mut box_change = None;
    if cfg.check_box {
        let probes = if cfg.probes.is_empty() {
            vec![vec![0.0; d.num_classes()]]
        } else {
            cfg.probes.clone()
        };
        let wide: Vec<f64> = half.iter().map(|w| 2.0 * w).collect();
        let (big, _) = solve_on_grid(Grid::centered(&wide, cfg.spacing), d, cost, gamma, cfg)?;
        let change = probes
            .iter()
            .map(|x| {
                let (a, b) = (value.value_at(x), big.value_at(x));
                (a - b).abs() / b.abs().max(1.0)
            })
            .fold(0.0, f64::max);
        if change > 10.0 * cfg.tol_pde {
            return Err(Error::GridTooSmall { change });
        }
        box_change = Some(change);
    }
    Ok(HjbReport { value, policy, assumption3: d.assumption3_cases(cost), box_change })
}
