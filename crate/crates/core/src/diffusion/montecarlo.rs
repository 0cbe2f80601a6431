//! Euler-Maruyama estimate of the discounted cost of a feedback policy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ControlPoint, CostSpec, DriftData, DriftScratch, MarkovPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub dt: f64,
    pub paths: usize,
    pub seed: u64,
    /// Fixed horizon; chosen from `tail_tol` when absent.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub tail_tol: f64,
    /// Bound on `sup_t E L(X_t, U_t)` used for unbounded costs.
    #[serde(default)]
    pub moment_cap: Option<f64>,
}

impl McConfig {
    pub fn new(dt: f64, paths: usize, seed: u64) -> Self {
        McConfig { dt, paths, seed, horizon: None, tail_tol: 1e-4, moment_cap: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub horizon: f64,
    /// Bound on the discounted cost beyond the horizon.
    pub tail_bound: f64,
    pub paths: usize,
}

/// Per-path random stream keyed by `(seed, index)`.
pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Discounted cost of the controlled diffusion started at `x0`.
pub fn simulate_controlled_diffusion(
    x0: &[f64],
    policy: &MarkovPolicy,
    d: &DriftData,
    cost: &CostSpec,
    gamma: f64,
    cfg: &McConfig,
) -> Result<McEstimate> {
    if !(cfg.dt > 0.0) || cfg.paths < 2 || !(gamma > 0.0) {
        return Err(Error::InvalidConfig("need dt > 0, gamma > 0 and at least two paths".into()));
    }
    let lipschitz = d.lipschitz_bound();
    if lipschitz * cfg.dt > 0.5 {
        return Err(Error::StepTooLarge { lipschitz, dt: cfg.dt });
    }
    let bound = cost.sup_bound().or(cfg.moment_cap).ok_or_else(|| {
        Error::InvalidConfig("unbounded cost needs moment_cap or an explicit horizon".into())
    });
    let horizon = match cfg.horizon {
        Some(t) => t,
        None => {
            let b = bound.clone()?;
            if b <= 0.0 {
                cfg.dt
            } else {
                ((b / (gamma * cfg.tail_tol)).ln() / gamma).max(cfg.dt)
            }
        }
    };
    let tail_bound = bound.map(|b| b * (-gamma * horizon).exp() / gamma).unwrap_or(f64::NAN);
    let steps = (horizon / cfg.dt).ceil() as usize;
    let sqrt_dt = cfg.dt.sqrt();
    let decay = (-gamma * cfg.dt).exp();
    let weight0 = (1.0 - decay) / gamma;

    let costs: Vec<f64> = (0..cfg.paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = path_rng(cfg.seed, p as u64);
            let mut x = x0.to_vec();
            let mut b = vec![0.0; x.len()];
            let mut cp = ControlPoint { u: Vec::new(), v: Vec::new() };
            let mut scratch = DriftScratch::default();
            let mut disc = 1.0;
            let mut acc = 0.0;
            for _ in 0..steps {
                policy.eval_into(&x, &mut cp);
                acc += cost.eval_control_fast(&x, &cp) * disc * weight0;
                d.drift_into(&x, &cp, &mut scratch, &mut b);
                for i in 0..x.len() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[i] += b[i] * cfg.dt + d.r[i] * sqrt_dt * z;
                }
                disc *= decay;
            }
            acc
        })
        .collect();
    let m = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / m;
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(McEstimate { mean, std_error: (var / m).sqrt(), horizon: steps as f64 * cfg.dt, tail_bound, paths: cfg.paths })
}
