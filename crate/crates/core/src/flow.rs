//! The tree flow map `G` and the integer routing helpers built on it.
//!
//! Flows are stored per activity in the edge order of [`TreeIndex`].

use crate::error::{Error, Result};
use crate::system::TreeIndex;

/// Class margins `alpha` and station margins `beta` with `e.alpha = e.beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginPair {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Flow per activity, zero off the tree by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowAssignment {
    pub psi: Vec<f64>,
}

impl FlowAssignment {
    pub fn dense(&self, tree: &TreeIndex) -> Vec<Vec<f64>> {
        dense(tree, &self.psi)
    }
}

/// Expands an edge vector into an `I x J` matrix.
pub fn dense<T: Copy + Default>(tree: &TreeIndex, values: &[T]) -> Vec<Vec<T>> {
    let mut out = vec![vec![T::default(); tree.num_stations]; tree.num_classes];
    for (e, &(i, j)) in tree.edges.iter().enumerate() {
        out[i][j] = values[e];
    }
    out
}

/// Gathers the tree entries of an `I x J` matrix.
pub fn sparse<T: Copy>(tree: &TreeIndex, values: &[Vec<T>]) -> Vec<T> {
    tree.edges.iter().map(|&(i, j)| values[i][j]).collect()
}

/// Row sums over classes and column sums over stations of an edge vector.
pub fn margins(tree: &TreeIndex, psi: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut rows = vec![0.0; tree.num_classes];
    let mut cols = vec![0.0; tree.num_stations];
    for (e, &(i, j)) in tree.edges.iter().enumerate() {
        rows[i] += psi[e];
        cols[j] += psi[e];
    }
    (rows, cols)
}

pub fn margins_int(tree: &TreeIndex, psi: &[i64]) -> (Vec<i64>, Vec<i64>) {
    let mut rows = vec![0; tree.num_classes];
    let mut cols = vec![0; tree.num_stations];
    for (e, &(i, j)) in tree.edges.iter().enumerate() {
        rows[i] += psi[e];
        cols[j] += psi[e];
    }
    (rows, cols)
}

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Unique `psi` on the tree with row sums `alpha` and column sums `beta`.
pub fn g_solve(tree: &TreeIndex, alpha: &[f64], beta: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(alpha.len(), tree.num_classes, "alpha has wrong length");
    assert_eq!(beta.len(), tree.num_stations, "beta has wrong length");
    let (sa, sb): (f64, f64) = (alpha.iter().sum(), beta.iter().sum());
    if !sa.is_finite() || !sb.is_finite() || (sa - sb).abs() > 1e-9 * (1.0 + l1(alpha)) {
        return Err(Error::MarginMismatch { alpha_sum: sa, beta_sum: sb });
    }
    Ok(g_peel(tree, alpha, beta))
}

/// Leaf elimination without the margin check.
pub(crate) fn g_peel(tree: &TreeIndex, alpha: &[f64], beta: &[f64]) -> Vec<f64> {
    let mut rem: Vec<f64> = alpha.iter().chain(beta).copied().collect();
    let mut psi = vec![0.0; tree.num_edges()];
    for p in &tree.order {
        let v = rem[p.leaf];
        psi[p.edge] = v;
        rem[tree.other_end(p.edge, p.leaf)] -= v;
    }
    psi
}

/// Integer version of [`g_solve`]; exact.
pub fn g_solve_int(tree: &TreeIndex, alpha: &[i64], beta: &[i64]) -> Result<Vec<i64>> {
    let (sa, sb): (i64, i64) = (alpha.iter().sum(), beta.iter().sum());
    if sa != sb {
        return Err(Error::MarginMismatch { alpha_sum: sa as f64, beta_sum: sb as f64 });
    }
    let mut rem: Vec<i64> = alpha.iter().chain(beta).copied().collect();
    let mut psi = vec![0; tree.num_edges()];
    for p in &tree.order {
        let v = rem[p.leaf];
        psi[p.edge] = v;
        rem[tree.other_end(p.edge, p.leaf)] -= v;
    }
    Ok(psi)
}

impl MarginPair {
    pub fn solve(&self, tree: &TreeIndex) -> Result<FlowAssignment> {
        g_solve(tree, &self.alpha, &self.beta).map(|psi| FlowAssignment { psi })
    }
}

/// Vertices of `{e.alpha = e.beta, |alpha|_1 <= 1, |beta|_1 <= 1}`.
///
/// The polytope is the product of two cross-polytopes cut by a hyperplane,
/// so its vertices are the product vertices on the hyperplane together with
/// the points where product edges cross it.
pub fn norm_ball_vertices(num_classes: usize, num_stations: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let cross = |k: usize| -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(2 * k);
        for a in 0..k {
            for s in [1.0, -1.0] {
                let mut v = vec![0.0; k];
                v[a] = s;
                out.push(v);
            }
        }
        out
    };
    // Non-antipodal vertex pairs are the edges of a cross-polytope.
    let cross_edges = |verts: &[Vec<f64>]| -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for p in 0..verts.len() {
            for q in p + 1..verts.len() {
                if p / 2 != q / 2 {
                    out.push((p, q));
                }
            }
        }
        out
    };
    let va = cross(num_classes);
    let vb = cross(num_stations);
    let sum = |v: &[f64]| v.iter().sum::<f64>();
    let mut out = Vec::new();
    for a in &va {
        for b in &vb {
            if sum(a) == sum(b) {
                out.push((a.clone(), b.clone()));
            }
        }
    }
    let mut crossing = |p: &[f64], q: &[f64], fixed: &[f64], alpha_moves: bool| {
        let target = sum(fixed);
        let (sp, sq) = (sum(p), sum(q));
        if (sp - target) * (sq - target) < 0.0 {
            let t = (target - sp) / (sq - sp);
            let point: Vec<f64> = p.iter().zip(q).map(|(x, y)| x + t * (y - x)).collect();
            if alpha_moves {
                out.push((point, fixed.to_vec()));
            } else {
                out.push((fixed.to_vec(), point));
            }
        }
    };
    for (p, q) in cross_edges(&va) {
        for b in &vb {
            crossing(&va[p], &va[q], b, true);
        }
    }
    for (p, q) in cross_edges(&vb) {
        for a in &va {
            crossing(&vb[p], &vb[q], a, false);
        }
    }
    out
}

/// `C_G`: the largest `|G_ij|` over the unit section of the domain.
///
/// `|G_ij|` is convex, so the supremum is attained at a polytope vertex.
pub fn g_norm_constant(tree: &TreeIndex) -> f64 {
    norm_ball_vertices(tree.num_classes, tree.num_stations)
        .iter()
        .map(|(a, b)| g_peel(tree, a, b).iter().fold(0.0_f64, |m, x| m.max(x.abs())))
        .fold(0.0, f64::max)
}

/// Integer vector with the first `k - 1` entries floored and the remaining
/// fractional mass added to the last one.
///
/// When `e.y` is not an integer the fractional mass is rounded to nearest.
pub fn round_preserving_sum(y: &[f64]) -> Result<Vec<i64>> {
    for (index, &value) in y.iter().enumerate() {
        if !(value >= 0.0) || !value.is_finite() {
            return Err(Error::NegativeComponent { index, value });
        }
    }
    let Some(k) = y.len().checked_sub(1) else {
        return Ok(Vec::new());
    };
    let mut out: Vec<i64> = y.iter().map(|v| v.floor() as i64).collect();
    let frac: f64 = y.iter().map(|v| v - v.floor()).sum();
    out[k] += frac.round() as i64;
    Ok(out)
}

/// Integer state used by the routing procedure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingState {
    /// Per edge.
    pub psi: Vec<i64>,
    pub x: Vec<i64>,
    pub y: Vec<i64>,
    pub z: Vec<i64>,
}

impl RoutingState {
    /// Checks `sum_j psi + y = x`, `sum_i psi + z = capacity`, `y, z >= 0`.
    pub fn check(&self, tree: &TreeIndex, capacity: &[i64]) -> Result<()> {
        if self.psi.len() != tree.num_edges()
            || self.x.len() != tree.num_classes
            || self.y.len() != tree.num_classes
            || self.z.len() != tree.num_stations
            || capacity.len() != tree.num_stations
        {
            return Err(Error::MalformedState("dimension mismatch".into()));
        }
        let (rows, cols) = margins_int(tree, &self.psi);
        for i in 0..tree.num_classes {
            if rows[i] + self.y[i] != self.x[i] {
                return Err(Error::MalformedState(format!("class {i} does not balance")));
            }
            if self.y[i] < 0 {
                return Err(Error::MalformedState(format!("negative queue at class {i}")));
            }
        }
        for j in 0..tree.num_stations {
            if cols[j] + self.z[j] != capacity[j] {
                return Err(Error::MalformedState(format!("station {j} does not balance")));
            }
            if self.z[j] < 0 {
                return Err(Error::MalformedState(format!("negative idle count at station {j}")));
            }
        }
        Ok(())
    }
}

/// Routes queued customers one at a time through nonblocked activities until
/// no nonblocked activity has both a waiting customer and an idle server.
///
/// Each step picks the smallest such class, then the smallest station.
/// Returns the edges routed on, in order.
pub fn route_nonblocked(
    tree: &TreeIndex,
    state: &mut RoutingState,
    capacity: &[i64],
    nonblocked: &[bool],
) -> Result<Vec<usize>> {
    state.check(tree, capacity)?;
    if nonblocked.len() != tree.num_edges() {
        return Err(Error::MalformedState("nonblocked mask has wrong length".into()));
    }
    let mut routed = Vec::new();
    'outer: loop {
        for i in 0..tree.num_classes {
            if state.y[i] == 0 {
                continue;
            }
            // adjacency lists are built in sorted edge order, so stations ascend
            for &e in &tree.adjacency[i] {
                let j = tree.edges[e].1;
                if nonblocked[e] && state.z[j] > 0 {
                    state.y[i] -= 1;
                    state.z[j] -= 1;
                    state.psi[e] += 1;
                    routed.push(e);
                    continue 'outer;
                }
            }
        }
        return Ok(routed);
    }
}

/// Greedy leaf-peeling fill maximizing the number of customers in service.
/// Exact maximum on a tree.
pub fn greedy_fill(tree: &TreeIndex, x: &[i64], capacity: &[i64]) -> Vec<i64> {
    let mut rem: Vec<i64> = x.iter().chain(capacity).copied().collect();
    let mut psi = vec![0; tree.num_edges()];
    for p in &tree.order {
        let other = tree.other_end(p.edge, p.leaf);
        let f = rem[p.leaf].min(rem[other]).max(0);
        psi[p.edge] = f;
        rem[p.leaf] -= f;
        rem[other] -= f;
    }
    psi
}

/// Both sides of the gap inequality: `sum |psi - psi_c|` and
/// `sum (psi - psi_c)^+ + |x - x_c|_1`.
#[allow(clippy::too_many_arguments)]
pub fn flow_gap(
    tree: &TreeIndex,
    psi: &[f64],
    x: &[f64],
    y: &[f64],
    z: &[f64],
    psi_c: &[f64],
    x_c: &[f64],
    y_c: &[f64],
    z_c: &[f64],
) -> Result<(f64, f64)> {
    let tol = 1e-9;
    let balance = |psi: &[f64], x: &[f64], y: &[f64], z: &[f64], tag: &str| -> Result<()> {
        let (rows, cols) = margins(tree, psi);
        let scale = 1.0 + l1(x) + l1(psi);
        for i in 0..tree.num_classes {
            if (rows[i] - (x[i] - y[i])).abs() > tol * scale {
                return Err(Error::HypothesisViolated(format!("{tag}: class {i} does not balance")));
            }
        }
        for j in 0..tree.num_stations {
            if (cols[j] + z[j]).abs() > tol * scale {
                return Err(Error::HypothesisViolated(format!(
                    "{tag}: station {j} does not balance"
                )));
            }
        }
        Ok(())
    };
    balance(psi, x, y, z, "state")?;
    balance(psi_c, x_c, y_c, z_c, "reference")?;
    if y_c.iter().chain(z_c).any(|&v| v < 0.0) {
        return Err(Error::HypothesisViolated("reference queue or idleness negative".into()));
    }
    for (e, &(i, j)) in tree.edges.iter().enumerate() {
        if psi[e] < psi_c[e] && y[i].min(z[j]).abs() > tol {
            return Err(Error::HypothesisViolated(format!(
                "activity {e} is below reference but y_i ^ z_j != 0"
            )));
        }
    }
    let lhs = psi.iter().zip(psi_c).map(|(a, b)| (a - b).abs()).sum();
    let pos: f64 = psi.iter().zip(psi_c).map(|(a, b)| (a - b).max(0.0)).sum();
    let dx: f64 = x.iter().zip(x_c).map(|(a, b)| (a - b).abs()).sum();
    Ok((lhs, pos + dx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::{validate, SystemSpec};

    fn tree(ni: usize, nj: usize, edges: &[(usize, usize)]) -> TreeIndex {
        let m = vec![1.0; edges.len()];
        validate(SystemSpec::simple(ni, nj, edges, &vec![1.0; ni], &m, &vec![1.0; nj]))
            .unwrap()
            .tree
    }

    fn n_tree() -> TreeIndex {
        tree(2, 2, &[(0, 0), (1, 0), (1, 1)])
    }

    #[test]
    fn single_edge_is_identity() {
        let t = tree(1, 1, &[(0, 0)]);
        assert_eq!(g_solve(&t, &[3.0], &[3.0]).unwrap(), vec![3.0]);
    }

    #[test]
    fn n_tree_flow() {
        assert_eq!(g_solve(&n_tree(), &[1.0, 2.0], &[2.0, 1.0]).unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn zero_margins_give_zero_flow() {
        assert!(g_solve(&n_tree(), &[0.0; 2], &[0.0; 2]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_margins_rejected() {
        assert!(matches!(
            g_solve(&n_tree(), &[1.0, 2.0], &[2.0, 2.0]),
            Err(Error::MarginMismatch { .. })
        ));
        assert!(g_solve_int(&n_tree(), &[1, 2], &[2, 2]).is_err());
    }

    #[test]
    fn c_g_values() {
        assert_eq!(g_norm_constant(&tree(1, 1, &[(0, 0)])), 1.0);
        assert_eq!(g_norm_constant(&tree(1, 3, &[(0, 0), (0, 1), (0, 2)])), 1.0);
        assert_eq!(g_norm_constant(&n_tree()), 1.0);
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(round_preserving_sum(&[0.5, 0.5]).unwrap(), vec![0, 1]);
        assert_eq!(round_preserving_sum(&[1.25, 2.25, 0.5]).unwrap(), vec![1, 2, 1]);
        assert_eq!(round_preserving_sum(&[1.2, 2.3, 0.5]).unwrap(), vec![1, 2, 1]);
        assert_eq!(round_preserving_sum(&[4.0, 0.0, 7.0]).unwrap(), vec![4, 0, 7]);
        assert!(matches!(
            round_preserving_sum(&[1.0, -0.5]),
            Err(Error::NegativeComponent { index: 1, .. })
        ));
    }

    #[test]
    fn routing_single_move() {
        let t = n_tree();
        // one class-1 customer waits, one station-A server idles
        let mut s = RoutingState { psi: vec![0, 1, 1], x: vec![1, 2], y: vec![1, 0], z: vec![1, 0] };
        let cap = [2, 1];
        let routed = route_nonblocked(&t, &mut s, &cap, &[true, false, false]).unwrap();
        assert_eq!(routed, vec![0]);
        assert_eq!(s.y, vec![0, 0]);
        assert_eq!(s.z, vec![0, 0]);
        assert_eq!(s.psi, vec![1, 1, 1]);
    }

    #[test]
    fn routing_all_blocked_is_noop() {
        let t = n_tree();
        let mut s = RoutingState { psi: vec![0, 1, 1], x: vec![1, 2], y: vec![1, 0], z: vec![1, 0] };
        let before = s.clone();
        assert!(route_nonblocked(&t, &mut s, &[2, 1], &[false; 3]).unwrap().is_empty());
        assert_eq!(s, before);
    }

    #[test]
    fn routing_limited_by_idle_servers() {
        let t = n_tree();
        let mut s = RoutingState { psi: vec![0, 1, 1], x: vec![2, 2], y: vec![2, 0], z: vec![1, 0] };
        route_nonblocked(&t, &mut s, &[2, 1], &[true, false, false]).unwrap();
        assert_eq!(s.y, vec![1, 0]);
        assert_eq!(s.z, vec![0, 0]);
    }

    #[test]
    fn routing_rejects_unbalanced_state() {
        let t = n_tree();
        let mut s = RoutingState { psi: vec![0, 1, 1], x: vec![3, 2], y: vec![1, 0], z: vec![1, 0] };
        assert!(matches!(
            route_nonblocked(&t, &mut s, &[2, 1], &[true; 3]),
            Err(Error::MalformedState(_))
        ));
    }

    #[test]
    fn greedy_fill_serves_everyone_when_possible() {
        let t = n_tree();
        let psi = greedy_fill(&t, &[1, 2], &[2, 1]);
        assert_eq!(psi.iter().sum::<i64>(), 3);
        let psi = greedy_fill(&t, &[0, 5], &[2, 1]);
        assert_eq!(psi, vec![0, 2, 1]);
    }

    #[test]
    fn flow_gap_zero_case() {
        let t = n_tree();
        let psi = [0.0, -0.5, -0.5];
        let x = [0.5, -1.0];
        let y = [0.5, 0.0];
        let z = [0.5, 0.5];
        let (lhs, rhs) = flow_gap(&t, &psi, &x, &y, &z, &psi, &x, &y, &z).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
    }
}
