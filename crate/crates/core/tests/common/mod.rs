//! Independent oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use treesched::diffusion::{solve_hjb, CostSpec, GridConfig, HjbReport, DriftData};
use treesched::fluid::{solve_static_fluid, FluidTolerances, StaticFluid};
use treesched::system::{validate, InterarrivalKind, InterarrivalSpec, SystemSpec, ValidatedSystem};

/// Random spanning tree of the complete bipartite graph `I x J`.
pub fn random_tree(rng: &mut ChaCha8Rng, ni: usize, nj: usize) -> Vec<(usize, usize)> {
    // vertices 0..ni are classes, ni.. are stations
    let mut rest: Vec<usize> = (0..ni + nj).collect();
    rest.shuffle(rng);
    let first_class = *rest.iter().find(|&&v| v < ni).unwrap();
    let first_station = *rest.iter().find(|&&v| v >= ni).unwrap();
    rest.retain(|&v| v != first_class && v != first_station);
    let mut classes = vec![first_class];
    let mut stations = vec![first_station];
    let mut edges = vec![(first_class, first_station - ni)];
    for v in rest {
        if v < ni {
            let s = stations[rng.gen_range(0..stations.len())];
            edges.push((v, s - ni));
            classes.push(v);
        } else {
            let c = classes[rng.gen_range(0..classes.len())];
            edges.push((c, v - ni));
            stations.push(v);
        }
    }
    edges.sort_unstable();
    edges
}

/// Structurally valid system on `edges`, parameters irrelevant.
pub fn tree_system(ni: usize, nj: usize, edges: &[(usize, usize)]) -> ValidatedSystem {
    validate(SystemSpec::simple(ni, nj, edges, &vec![1.0; ni], &vec![1.0; edges.len()], &vec![1.0; nj])).unwrap()
}

/// Least-squares solution of `A x = b` through the normal equations,
/// Gaussian elimination with partial pivoting.
pub fn dense_least_squares(a: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let n = a[0].len();
    let mut m = vec![vec![0.0; n + 1]; n];
    for r in 0..n {
        for c in 0..n {
            m[r][c] = a.iter().map(|row| row[r] * row[c]).sum();
        }
        m[r][n] = a.iter().zip(b).map(|(row, bi)| row[r] * bi).sum();
    }
    solve_augmented(m)
}

pub fn solve_augmented(mut m: Vec<Vec<f64>>) -> Vec<f64> {
    let n = m.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs())).unwrap();
        m.swap(col, piv);
        let p = m[col][col];
        for r in 0..n {
            if r != col && m[r][col] != 0.0 {
                let f = m[r][col] / p;
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    (0..n).map(|r| m[r][n] / m[r][r]).collect()
}

/// Square solve returning `None` on a (numerically) singular matrix.
pub fn try_solve(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut m: Vec<Vec<f64>> = a.iter().zip(b).map(|(row, &bi)| row.iter().copied().chain([bi]).collect()).collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[piv][col].abs() < 1e-10 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..n {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    Some((0..n).map(|r| m[r][n] / m[r][r]).collect())
}

/// `max c.x` subject to `A x = b`, `x >= 0`, by enumerating every basic
/// solution. Returns the optimal value and a maximizer.
pub fn lp_max_by_vertices(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Option<(f64, Vec<f64>)> {
    let (nrow, nvar) = (a.len(), c.len());
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pick = Vec::new();
    subsets(nvar, nrow, 0, &mut pick, &mut |cols| {
        let sub: Vec<Vec<f64>> = a.iter().map(|row| cols.iter().map(|&k| row[k]).collect()).collect();
        let Some(sol) = try_solve(&sub, b) else { return };
        if sol.iter().any(|&v| v < -1e-12) {
            return;
        }
        let mut full = vec![0.0; nvar];
        for (&k, &v) in cols.iter().zip(&sol) {
            full[k] = v;
        }
        let val: f64 = c.iter().zip(&full).map(|(p, q)| p * q).sum();
        if best.as_ref().is_none_or(|(v, _)| val > *v + 1e-12) {
            best = Some((val, full));
        }
    });
    best
}

/// Optimal value and solution of the fluid LP
/// `min rho : sum_j nu_j mu_ij xi_ij = lambda_i, sum_i xi_ij <= rho, xi >= 0`.
pub fn fluid_lp_by_vertices(sys: &ValidatedSystem) -> Option<(f64, Vec<f64>)> {
    let spec = &sys.spec;
    let edges = &sys.tree.edges;
    let (ni, nj, ne) = (spec.num_classes, spec.num_stations, edges.len());
    // columns: xi_e, rho, slack_j
    let nvar = ne + 1 + nj;
    let mut a = vec![vec![0.0; nvar]; ni + nj];
    let mut b = vec![0.0; ni + nj];
    for (e, &(i, j)) in edges.iter().enumerate() {
        a[i][e] = spec.nu[j] * spec.mu[i][j];
        a[ni + j][e] = 1.0;
    }
    b[..ni].copy_from_slice(&spec.lambda);
    for j in 0..nj {
        a[ni + j][ne] = -1.0;
        a[ni + j][ne + 1 + j] = 1.0;
    }
    let mut c = vec![0.0; nvar];
    c[ne] = -1.0;
    lp_max_by_vertices(&a, &b, &c).map(|(v, x)| (-v, x[..ne].to_vec()))
}

/// Matrix of the margin equations: rows are classes then stations,
/// columns are edges.
pub fn margin_matrix(ni: usize, nj: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let mut a = vec![vec![0.0; edges.len()]; ni + nj];
    for (e, &(i, j)) in edges.iter().enumerate() {
        a[i][e] = 1.0;
        a[ni + j][e] = 1.0;
    }
    a
}

/// `max |G_e|` over `{e.alpha = e.beta, |alpha|_1 <= 1, |beta|_1 <= 1}` as
/// a family of LPs in split variables.
pub fn c_g_by_lp(ni: usize, nj: usize, edges: &[(usize, usize)]) -> f64 {
    let a = margin_matrix(ni, nj, edges);
    let k = ni + nj;
    // G as a linear map of the margins, column by column
    let cols: Vec<Vec<f64>> = (0..k)
        .map(|m| {
            let mut rhs = vec![0.0; k];
            rhs[m] = 1.0;
            dense_least_squares(&a, &rhs)
        })
        .collect();
    // variables: alpha+, alpha-, beta+, beta-, two slacks
    let nvar = 2 * k + 2;
    let mut lp = vec![vec![0.0; nvar]; 3];
    for m in 0..ni {
        lp[0][m] = 1.0;
        lp[0][k + m] = 1.0;
        lp[2][m] = 1.0;
        lp[2][k + m] = -1.0;
    }
    for m in ni..k {
        lp[1][m] = 1.0;
        lp[1][k + m] = 1.0;
        lp[2][m] = -1.0;
        lp[2][k + m] = 1.0;
    }
    lp[0][2 * k] = 1.0;
    lp[1][2 * k + 1] = 1.0;
    let rhs = [1.0, 1.0, 0.0];
    let mut best = 0.0f64;
    for e in 0..edges.len() {
        for sign in [1.0, -1.0] {
            // only balanced margins are in the domain; there least squares is exact
            let mut c = vec![0.0; nvar];
            for m in 0..k {
                c[m] = sign * cols[m][e];
                c[k + m] = -sign * cols[m][e];
            }
            best = best.max(lp_max_by_vertices(&lp, &rhs, &c).unwrap().0);
        }
    }
    best
}

fn subsets(n: usize, k: usize, start: usize, pick: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
    if pick.len() == k {
        f(pick);
        return;
    }
    for c in start..n {
        if n - c < k - pick.len() {
            break;
        }
        pick.push(c);
        subsets(n, k, c + 1, pick, f);
        pick.pop();
    }
}

/// Erlang C by the Erlang B recursion.
pub fn erlang_c(servers: u32, offered: f64) -> f64 {
    let mut b = 1.0;
    for k in 1..=servers {
        b = offered * b / (k as f64 + offered * b);
    }
    let rho = offered / servers as f64;
    b / (1.0 - rho * (1.0 - b))
}

/// Two-sample Kolmogorov-Smirnov statistic.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Asymptotic two-sample critical value at level 1%.
pub fn ks_critical_1pct(m: usize, n: usize) -> f64 {
    1.628 * ((m + n) as f64 / (m * n) as f64).sqrt()
}

pub fn mean_se(v: &[f64]) -> (f64, f64) {
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
    (mean, (var / m).sqrt())
}

/// One class, one station: `lambda = mu = nu = 1`, `lambda_hat = -1`.
pub fn single_station_spec() -> SystemSpec {
    let mut s = SystemSpec::simple(1, 1, &[(0, 0)], &[1.0], &[1.0], &[1.0]);
    s.lambda_hat = vec![-1.0];
    s
}

pub fn single_station_cost() -> CostSpec {
    CostSpec::PositivePart { cap: 5.0 }
}

/// Two classes, two stations, all three activities basic; class 1
/// abandons, class 2 has lognormal interarrivals.
pub fn two_class_spec() -> SystemSpec {
    let mut s = SystemSpec::simple(2, 2, &[(0, 0), (1, 0), (1, 1)], &[0.5, 1.5], &[1.0; 3], &[1.0; 2]);
    s.lambda_hat = vec![-0.5, -0.5];
    s.theta = vec![1.0, 0.0];
    s.interarrival[1] = InterarrivalSpec { kind: InterarrivalKind::Lognormal, scv: 0.5, moment_order: 8.0 };
    s
}

pub fn two_class_cost() -> CostSpec {
    CostSpec::Linear { c: vec![2.0, 1.0], d: None, cap: Some(20.0) }
}

pub fn solved(spec: SystemSpec, cost: &CostSpec, spacing: f64) -> (ValidatedSystem, StaticFluid, DriftData, HjbReport) {
    let sys = validate(spec).unwrap();
    let fluid = solve_static_fluid(&sys, FluidTolerances::default()).unwrap();
    let d = DriftData::new(&sys, &fluid);
    let rep = solve_hjb(&d, cost, sys.spec.gamma, &GridConfig::new(spacing)).unwrap();
    (sys, fluid, d, rep)
}

/// Random tree with positive fluid shares, critically loaded by construction.
pub fn random_critical_system(rng: &mut ChaCha8Rng, ni: usize, nj: usize) -> SystemSpec {
    let edges = random_tree(rng, ni, nj);
    let mu: Vec<f64> = edges.iter().map(|_| rng.gen_range(0.5..3.0)).collect();
    let nu: Vec<f64> = (0..nj).map(|_| rng.gen_range(0.5..2.0)).collect();
    // positive shares summing to one at every station
    let mut xi = vec![0.0; edges.len()];
    for j in 0..nj {
        let on: Vec<usize> = (0..edges.len()).filter(|&e| edges[e].1 == j).collect();
        let w: Vec<f64> = on.iter().map(|_| rng.gen_range(0.2..1.0)).collect();
        let s: f64 = w.iter().sum();
        for (&e, wk) in on.iter().zip(&w) {
            xi[e] = wk / s;
        }
    }
    let mut lambda = vec![0.0; ni];
    for (e, &(i, j)) in edges.iter().enumerate() {
        lambda[i] += nu[j] * mu[e] * xi[e];
    }
    SystemSpec::simple(ni, nj, &edges, &lambda, &mu, &nu)
}
