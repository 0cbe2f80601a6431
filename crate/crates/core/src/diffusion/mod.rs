//! Limiting diffusion control problem: drift, cost, Hamiltonian, HJB solver,
//! feedback policies and a Monte Carlo check of the controlled SDE.

pub mod cost;
pub mod grid;
pub mod hamiltonian;
pub mod hjb;
pub mod montecarlo;
pub mod policy;

use serde::{Deserialize, Serialize};

use crate::flow;
use crate::fluid::StaticFluid;
use crate::system::{TreeIndex, ValidatedSystem};

pub use cost::CostSpec;
pub use grid::Grid;
pub use hamiltonian::{hamiltonian, phi};
pub use hjb::{solve_hjb, GridConfig, HjbReport, ValueField};
pub use montecarlo::{simulate_controlled_diffusion, McConfig, McEstimate};
pub use policy::{
    mollification_check, mollify_policy, MarkovPolicy, MollificationCheck, PolicyTable, DEFAULT_DELTA,
    DEFAULT_EPSILON,
};

/// A point of the control set: `u` on the class simplex, `v` on the
/// station simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPoint {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl ControlPoint {
    /// `(e_a, e_b)`.
    pub fn vertex(num_classes: usize, num_stations: usize, a: usize, b: usize) -> Self {
        let mut u = vec![0.0; num_classes];
        let mut v = vec![0.0; num_stations];
        u[a] = 1.0;
        v[b] = 1.0;
        ControlPoint { u, v }
    }

    pub fn is_admissible(&self, tol: f64) -> bool {
        let ok = |w: &[f64]| {
            w.iter().all(|&x| x >= -tol) && (w.iter().sum::<f64>() - 1.0).abs() <= tol
        };
        ok(&self.u) && ok(&self.v)
    }
}

/// Reusable buffers for drift evaluation in hot loops.
#[derive(Debug, Clone, Default)]
pub struct DriftScratch {
    rem: Vec<f64>,
    psi: Vec<f64>,
}

/// Coefficients of the limiting drift.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftData {
    pub tree: TreeIndex,
    /// Per edge.
    pub mu: Vec<f64>,
    pub theta: Vec<f64>,
    pub ell: Vec<f64>,
    pub r: Vec<f64>,
    pub c_g: f64,
}

impl DriftData {
    pub fn new(sys: &ValidatedSystem, fluid: &StaticFluid) -> Self {
        let spec = &sys.spec;
        let ell = (0..spec.num_classes)
            .map(|i| {
                spec.lambda_hat[i]
                    - (0..spec.num_stations)
                        .map(|j| spec.mu_hat[i][j] * fluid.psi_star[i][j])
                        .sum::<f64>()
            })
            .collect();
        let r = spec
            .lambda
            .iter()
            .zip(&spec.interarrival)
            .map(|(l, ia)| (l * ia.scv + l).sqrt())
            .collect();
        DriftData {
            tree: sys.tree.clone(),
            mu: sys.edge_mu(),
            theta: spec.theta.clone(),
            ell,
            r,
            c_g: fluid.c_g,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.tree.num_classes
    }

    pub fn num_stations(&self) -> usize {
        self.tree.num_stations
    }

    /// `G(x - (e.x)^+ u, -(e.x)^- v)` per edge.
    pub fn ghat(&self, x: &[f64], cp: &ControlPoint) -> Vec<f64> {
        let mut scratch = DriftScratch::default();
        self.ghat_into(x, cp, &mut scratch);
        scratch.psi
    }

    fn ghat_into(&self, x: &[f64], cp: &ControlPoint, scratch: &mut DriftScratch) {
        let s: f64 = x.iter().sum();
        let (sp, sm) = (s.max(0.0), (-s).max(0.0));
        scratch.rem.clear();
        scratch.rem.extend(x.iter().zip(&cp.u).map(|(xi, ui)| xi - sp * ui));
        scratch.rem.extend(cp.v.iter().map(|vj| -sm * vj));
        scratch.psi.clear();
        scratch.psi.resize(self.tree.num_edges(), 0.0);
        for p in &self.tree.order {
            let val = scratch.rem[p.leaf];
            scratch.psi[p.edge] = val;
            scratch.rem[self.tree.other_end(p.edge, p.leaf)] -= val;
        }
    }

    pub fn drift(&self, x: &[f64], cp: &ControlPoint) -> Vec<f64> {
        let mut out = vec![0.0; self.num_classes()];
        self.drift_into(x, cp, &mut DriftScratch::default(), &mut out);
        out
    }

    pub fn drift_into(
        &self,
        x: &[f64],
        cp: &ControlPoint,
        scratch: &mut DriftScratch,
        out: &mut [f64],
    ) {
        self.ghat_into(x, cp, scratch);
        let sp = x.iter().sum::<f64>().max(0.0);
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.ell[i] - self.theta[i] * sp * cp.u[i];
        }
        for (e, &(i, _)) in self.tree.edges.iter().enumerate() {
            out[i] -= self.mu[e] * scratch.psi[e];
        }
    }

    /// Bound on the Lipschitz constant of `x -> b(x, U)` uniform in `U`.
    pub fn lipschitz_bound(&self) -> f64 {
        let ni = self.num_classes();
        let mut row = vec![0.0; ni];
        for (e, &(i, _)) in self.tree.edges.iter().enumerate() {
            row[i] += self.mu[e];
        }
        let worst = (0..ni)
            .map(|i| 2.0 * self.c_g * row[i] + self.theta[i])
            .fold(0.0, f64::max);
        worst * ni as f64
    }

    /// Which of the large-time conditions on the data hold: `"i"` (rates
    /// depend on class only or station only, no abandonment), `"ii"` (tree
    /// diameter at most 3, `theta_i <= mu_ij`), `"iii"` (bounded cost).
    pub fn assumption3_cases(&self, cost: &CostSpec) -> Vec<String> {
        let mut out = Vec::new();
        let by = |key: &dyn Fn(usize) -> usize| {
            self.tree.edges.iter().enumerate().all(|(e, _)| {
                self.tree.edges.iter().enumerate().all(|(f, _)| {
                    key(e) != key(f) || (self.mu[e] - self.mu[f]).abs() <= 1e-12 * self.mu[e]
                })
            })
        };
        let class_only = by(&|e| self.tree.edges[e].0);
        let station_only = by(&|e| self.tree.edges[e].1);
        if (class_only || station_only) && self.theta.iter().all(|&t| t == 0.0) {
            out.push("i".to_string());
        }
        let theta_ok =
            self.tree.edges.iter().enumerate().all(|(e, &(i, _))| self.theta[i] <= self.mu[e]);
        if self.tree.diameter() <= 3 && theta_ok {
            out.push("ii".to_string());
        }
        if cost.bounded() {
            out.push("iii".to_string());
        }
        out
    }
}

/// Row and column identities of `G^`, returned as maximal deviations.
pub fn ghat_identity_error(d: &DriftData, x: &[f64], cp: &ControlPoint) -> f64 {
    let psi = d.ghat(x, cp);
    let (rows, cols) = flow::margins(&d.tree, &psi);
    let s: f64 = x.iter().sum();
    let mut err = 0.0_f64;
    for i in 0..d.num_classes() {
        err = err.max((rows[i] - (x[i] - s.max(0.0) * cp.u[i])).abs());
    }
    for j in 0..d.num_stations() {
        err = err.max((cols[j] + (-s).max(0.0) * cp.v[j]).abs());
    }
    err
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fluid::{solve_static_fluid, FluidTolerances};
    use crate::system::{validate, SystemSpec};

    fn single(theta: f64) -> DriftData {
        let mut spec = SystemSpec::simple(1, 1, &[(0, 0)], &[1.0], &[1.0], &[1.0]);
        spec.theta[0] = theta;
        let sys = validate(spec).unwrap();
        let fluid = solve_static_fluid(&sys, FluidTolerances::default()).unwrap();
        DriftData::new(&sys, &fluid)
    }

    #[test]
    fn single_station_drift() {
        let d = single(0.0);
        let cp = ControlPoint::vertex(1, 1, 0, 0);
        assert_eq!(d.drift(&[-1.0], &cp), vec![1.0]);
        assert_eq!(d.drift(&[0.0], &cp), vec![0.0]);
        assert_eq!(single(0.7).drift(&[1.0], &cp), vec![-0.7]);
        assert_eq!(d.r, vec![2.0_f64.sqrt()]);
    }

    #[test]
    fn ghat_identities_on_the_n_tree() {
        let sys = validate(SystemSpec::simple(
            2,
            2,
            &[(0, 0), (1, 0), (1, 1)],
            &[0.5, 1.5],
            &[1.0; 3],
            &[1.0; 2],
        ))
        .unwrap();
        let fluid = solve_static_fluid(&sys, FluidTolerances::default()).unwrap();
        let d = DriftData::new(&sys, &fluid);
        let cp = ControlPoint { u: vec![0.3, 0.7], v: vec![0.6, 0.4] };
        for x in [[1.0, 2.0], [-3.0, 1.0], [0.5, -0.5]] {
            assert!(ghat_identity_error(&d, &x, &cp) < 1e-12);
        }
    }

    #[test]
    fn assumption3_cases_recorded() {
        let d = single(0.0);
        let bounded = CostSpec::PositivePart { cap: 5.0 };
        assert_eq!(d.assumption3_cases(&bounded), vec!["i", "ii", "iii"]);
    }
}
