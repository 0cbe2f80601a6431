//! Rearrangements used by the preemptive policy and for initial states.

use super::{Arrangement, Scaled};
use crate::diffusion::MarkovPolicy;
use crate::error::{Error, Result};
use crate::flow;
use crate::fluid::StaticFluid;
use crate::system::ValidatedSystem;

/// Full rearrangement of the population `x` at time `t`.
///
/// Inside the ball `|X - n x*|_1 <= alpha0 n` the queue and idleness follow
/// the feedback `h` and the servers are filled by the tree map; outside it
/// the leaf-peeling greedy fill is used.
pub fn pstar_rearrange(
    sys: &ValidatedSystem,
    fluid: &StaticFluid,
    sc: &Scaled,
    h: &MarkovPolicy,
    x: &[i64],
    t: f64,
) -> Result<Arrangement> {
    let tree = &sys.tree;
    let dist: f64 = x.iter().zip(&sc.x_star).map(|(&v, s)| (v as f64 - sc.n * s).abs()).sum();
    if dist > fluid.alpha0 * sc.n {
        let psi = flow::greedy_fill(tree, x, &sc.servers);
        let (rows, cols) = flow::margins_int(tree, &psi);
        let y = x.iter().zip(&rows).map(|(a, b)| a - b).collect();
        let z = sc.servers.iter().zip(&cols).map(|(a, b)| a - b).collect();
        return Ok(Arrangement { y, z, psi });
    }
    let cp = h.eval(&sc.x_hat(x));
    // e.(X - Y) must equal e.(N - Z), so the totals come from the integer gap
    let d: i64 = x.iter().sum::<i64>() - sc.servers.iter().sum::<i64>();
    let (dp, dm) = (d.max(0) as f64, (-d).max(0) as f64);
    let yf: Vec<f64> = cp.u.iter().map(|u| dp * u.max(0.0)).collect();
    let zf: Vec<f64> = cp.v.iter().map(|v| dm * v.max(0.0)).collect();
    let y = flow::round_preserving_sum(&yf)?;
    let z = flow::round_preserving_sum(&zf)?;
    let alpha: Vec<i64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
    let beta: Vec<i64> = sc.servers.iter().zip(&z).map(|(a, b)| a - b).collect();
    let psi = flow::g_solve_int(tree, &alpha, &beta)?;
    if let Some(edge) = psi.iter().position(|&p| p < 0) {
        return Err(Error::InfeasibleRearrangement { time: t, edge });
    }
    Ok(Arrangement { y, z, psi })
}

/// Default arrangement of `X^{0,n}`: the preemptive construction at time 0.
pub fn initial_arrangement(
    sys: &ValidatedSystem,
    fluid: &StaticFluid,
    sc: &Scaled,
    h: &MarkovPolicy,
    x0: &[i64],
) -> Result<Arrangement> {
    pstar_rearrange(sys, fluid, sc, h, x0, 0.0)
}
