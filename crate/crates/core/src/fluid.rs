//! Static fluid allocation of a critically loaded tree system.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow;
use crate::system::ValidatedSystem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FluidTolerances {
    /// Relative residual of the redundant root equation.
    pub consistency: f64,
    /// Allocations at or below `positivity * min(lambda)` count as zero.
    pub positivity: f64,
}

impl Default for FluidTolerances {
    fn default() -> Self {
        FluidTolerances { consistency: 1e-9, positivity: 1e-12 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticFluid {
    pub xi_star: Vec<Vec<f64>>,
    pub rho_star: f64,
    pub x_star: Vec<f64>,
    pub psi_star: Vec<Vec<f64>>,
    pub c_g: f64,
    pub alpha0: f64,
}

impl StaticFluid {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    /// `psi*` in tree edge order.
    pub fn psi_edges(&self, sys: &ValidatedSystem) -> Vec<f64> {
        flow::sparse(&sys.tree, &self.psi_star)
    }
}

/// Solves the allocation LP by leaf elimination and certifies optimality.
pub fn solve_static_fluid(sys: &ValidatedSystem, tol: FluidTolerances) -> Result<StaticFluid> {
    let tree = &sys.tree;
    let spec = &sys.spec;
    let ni = spec.num_classes;
    let mu = sys.edge_mu();

    // Unknowns psi_ij = xi_ij nu_j; row equations are weighted by mu.
    let mut rem: Vec<f64> = spec.lambda.iter().chain(&spec.nu).copied().collect();
    let mut psi = vec![0.0; tree.num_edges()];
    for p in &tree.order {
        let other = tree.other_end(p.edge, p.leaf);
        if p.leaf < ni {
            psi[p.edge] = rem[p.leaf] / mu[p.edge];
            rem[other] -= psi[p.edge];
        } else {
            psi[p.edge] = rem[p.leaf];
            rem[other] -= mu[p.edge] * psi[p.edge];
        }
    }
    let root_scale = if tree.root < ni { spec.lambda[tree.root] } else { spec.nu[tree.root - ni] };
    let residual = rem[tree.root].abs() / root_scale;
    if !(residual <= tol.consistency) {
        return Err(Error::NotCriticallyLoaded { residual });
    }

    let xi: Vec<f64> =
        tree.edges.iter().enumerate().map(|(e, &(_, j))| psi[e] / spec.nu[j]).collect();
    let min_lambda = spec.lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let threshold = tol.positivity * min_lambda;
    for (e, &(i, j)) in tree.edges.iter().enumerate() {
        if xi[e] < -threshold {
            return Err(Error::NegativeAllocation { class: i, station: j, value: xi[e] });
        }
        if xi[e] <= threshold {
            return Err(Error::NonBasicActivity { class: i, station: j, value: xi[e] });
        }
    }

    let rho_star = dual_certificate(sys)?;
    let xi_star = flow::dense(tree, &xi);
    let (x_star, psi_star) = derive_fluid_quantities(&xi_star, sys);
    let c_g = flow::g_norm_constant(tree);
    let alpha0 = compute_alpha0(&flow::sparse(tree, &psi_star), c_g);
    Ok(StaticFluid { xi_star, rho_star, x_star, psi_star, c_g, alpha0 })
}

/// Complementary dual solution `w_j = nu_j mu_ij y_i` on every edge,
/// normalized to `e.w = 1`. Strict positivity of `w` certifies that the
/// full-support primal point is optimal with value `e.w = 1`.
fn dual_certificate(sys: &ValidatedSystem) -> Result<f64> {
    let tree = &sys.tree;
    let ni = sys.num_classes();
    let mut val = vec![f64::NAN; tree.num_vertices()];
    val[tree.root] = 1.0;
    // Reverse peeling visits every edge with its parent end already known.
    for p in tree.order.iter().rev() {
        let parent = tree.other_end(p.edge, p.leaf);
        let (i, j) = tree.edges[p.edge];
        let mu_bar = sys.spec.nu[j] * sys.spec.mu[i][j];
        val[p.leaf] = if parent < ni { mu_bar * val[parent] } else { val[parent] / mu_bar };
    }
    let w_sum: f64 = val[ni..].iter().sum();
    let y: Vec<f64> = val[..ni].iter().map(|v| v / w_sum).collect();
    if val.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidSystem("LP dual certificate failed".into()));
    }
    Ok(sys.spec.lambda.iter().zip(&y).map(|(l, y)| l * y).sum())
}

/// `x*_i = sum_j xi*_ij nu_j` and `psi*_ij = xi*_ij nu_j`.
pub fn derive_fluid_quantities(
    xi_star: &[Vec<f64>],
    sys: &ValidatedSystem,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let nu = &sys.spec.nu;
    let psi: Vec<Vec<f64>> =
        xi_star.iter().map(|row| row.iter().zip(nu).map(|(x, v)| x * v).collect()).collect();
    let x = psi.iter().map(|row| row.iter().sum()).collect();
    (x, psi)
}

/// `min psi* / (4 C_G)` over activities.
pub fn compute_alpha0(psi_star_edges: &[f64], c_g: f64) -> f64 {
    psi_star_edges.iter().copied().fold(f64::INFINITY, f64::min) / (4.0 * c_g)
}
