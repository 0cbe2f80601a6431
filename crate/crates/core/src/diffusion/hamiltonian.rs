//! Minimization of `b(x, U).p + L(x, U)` over the control set.

use super::{ControlPoint, CostSpec, DriftData, DriftScratch};

/// `b(x, U).p + L(x, U)`.
pub fn phi(x: &[f64], p: &[f64], d: &DriftData, cost: &CostSpec, cp: &ControlPoint) -> f64 {
    let mut b = vec![0.0; x.len()];
    d.drift_into(x, cp, &mut DriftScratch::default(), &mut b);
    b.iter().zip(p).map(|(a, q)| a * q).sum::<f64>() + cost.eval_control_fast(x, cp)
}

/// Candidate controls that matter at a point with total `s = e.x`.
///
/// Only `u` enters when `s > 0` and only `v` when `s < 0`; at `s = 0`
/// neither does. The unused component is pinned to its first vertex.
pub fn vertex_candidates(num_classes: usize, num_stations: usize, s: f64) -> Vec<ControlPoint> {
    if s > 0.0 {
        (0..num_classes).map(|a| ControlPoint::vertex(num_classes, num_stations, a, 0)).collect()
    } else if s < 0.0 {
        (0..num_stations).map(|b| ControlPoint::vertex(num_classes, num_stations, 0, b)).collect()
    } else {
        vec![ControlPoint::vertex(num_classes, num_stations, 0, 0)]
    }
}

/// Lattice points `w / m` of the `k`-simplex, vertices first.
pub fn simplex_grid(k: usize, m: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..k)
        .map(|a| {
            let mut w = vec![0.0; k];
            w[a] = 1.0;
            w
        })
        .collect();
    let mut counts = vec![0usize; k];
    fn rec(pos: usize, left: usize, m: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        let k = counts.len();
        if pos == k - 1 {
            counts[pos] = left;
            if counts.iter().filter(|&&c| c > 0).count() > 1 {
                out.push(counts.iter().map(|&c| c as f64 / m as f64).collect());
            }
            return;
        }
        for c in 0..=left {
            counts[pos] = c;
            rec(pos + 1, left - c, m, counts, out);
        }
    }
    if k > 1 && m > 0 {
        rec(0, m, m, &mut counts, &mut out);
    }
    out
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let g = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while (b - a).abs() > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let t = 0.5 * (a + b);
    (t, f(t))
}

/// Minimizes `f` over the probability simplex of dimension `k`: simplex grid
/// search followed by pairwise mass transfers optimized by golden section.
pub fn minimize_on_simplex(k: usize, f: impl Fn(&[f64]) -> f64, tol: f64) -> (f64, Vec<f64>) {
    let mut best_w = Vec::new();
    let mut best = f64::INFINITY;
    for w in simplex_grid(k, 12) {
        let v = f(&w);
        if v < best {
            best = v;
            best_w = w;
        }
    }
    for _ in 0..200 {
        let start = best;
        for a in 0..k {
            for b in 0..k {
                if a == b || best_w[a] <= 0.0 {
                    continue;
                }
                let base = best_w.clone();
                let shift = |t: f64| {
                    let mut w = base.clone();
                    w[a] -= t;
                    w[b] += t;
                    w
                };
                let (t, v) = golden_section(|t| f(&shift(t)), 0.0, base[a], tol.max(1e-12));
                if v < best {
                    best = v;
                    best_w = shift(t);
                }
            }
        }
        if start - best <= tol {
            break;
        }
    }
    (best, best_w)
}

/// `H(x, p)` and a minimizing control.
///
/// Vertex enumeration when the cost is concave in the control (the
/// objective is then concave), general simplex search otherwise.
pub fn hamiltonian(
    x: &[f64],
    p: &[f64],
    d: &DriftData,
    cost: &CostSpec,
    tol_h: f64,
) -> (f64, ControlPoint) {
    let (ni, nj) = (d.num_classes(), d.num_stations());
    let s: f64 = x.iter().sum();
    let candidates = vertex_candidates(ni, nj, s);
    let mut best = f64::INFINITY;
    let mut best_cp = candidates[0].clone();
    for cp in candidates {
        let v = phi(x, p, d, cost, &cp);
        if v < best {
            best = v;
            best_cp = cp;
        }
    }
    if cost.vertex_exact() || s == 0.0 {
        return (best, best_cp);
    }
    let (val, w) = if s > 0.0 {
        minimize_on_simplex(
            ni,
            |w| phi(x, p, d, cost, &ControlPoint { u: w.to_vec(), v: best_cp.v.clone() }),
            tol_h,
        )
    } else {
        minimize_on_simplex(
            nj,
            |w| phi(x, p, d, cost, &ControlPoint { u: best_cp.u.clone(), v: w.to_vec() }),
            tol_h,
        )
    };
    if val < best {
        let cp = if s > 0.0 {
            ControlPoint { u: w, v: best_cp.v }
        } else {
            ControlPoint { u: best_cp.u, v: w }
        };
        (val, cp)
    } else {
        (best, best_cp)
    }
}
