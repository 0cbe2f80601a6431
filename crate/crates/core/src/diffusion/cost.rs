//! Running cost families.
//!
//! Every family is written in terms of the scaled state `x`, queue `y` and
//! idleness `z`. The prelimit cost of `(x, psi)` takes `y = x - sum_j psi`
//! and `z = -sum_i psi`; the diffusion cost of `(x, U)` takes
//! `y = (e.x)^+ u` and `z = (e.x)^- v`.

use serde::{Deserialize, Serialize};

use super::{ControlPoint, DriftData};
use crate::error::{Error, Result};
use crate::flow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSpec {
    /// `value`.
    Constant { value: f64 },
    /// `min((e.x)^+, cap)`.
    PositivePart { cap: f64 },
    /// `min(c.y + d.z, cap)`; `d` defaults to zero and `cap` to infinity.
    Linear {
        c: Vec<f64>,
        #[serde(default)]
        d: Option<Vec<f64>>,
        #[serde(default)]
        cap: Option<f64>,
    },
    /// `min(sum_i c_i (y_i^+)^alpha, cap)`.
    QueuePower {
        alpha: f64,
        c: Vec<f64>,
        #[serde(default)]
        cap: Option<f64>,
    },
}

impl CostSpec {
    pub fn from_json_str(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn from_path(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self, num_classes: usize, num_stations: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("cost: {m}")));
        let nonneg = |w: &[f64]| w.iter().all(|v| v.is_finite() && *v >= 0.0);
        let cap_ok = |c: &Option<f64>| c.is_none_or(|c| c > 0.0);
        match self {
            CostSpec::Constant { value } if !(value.is_finite() && *value >= 0.0) => {
                bad("constant must be finite and nonnegative")
            }
            CostSpec::PositivePart { cap } if !(*cap > 0.0) => bad("cap must be positive"),
            CostSpec::Linear { c, d, cap } => {
                if c.len() != num_classes || !nonneg(c) {
                    return bad("c must have one nonnegative weight per class");
                }
                if let Some(d) = d {
                    if d.len() != num_stations || !nonneg(d) {
                        return bad("d must have one nonnegative weight per station");
                    }
                }
                if !cap_ok(cap) {
                    return bad("cap must be positive");
                }
                Ok(())
            }
            CostSpec::QueuePower { alpha, c, cap } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return bad("alpha must be positive");
                }
                if c.len() != num_classes || !nonneg(c) {
                    return bad("c must have one nonnegative weight per class");
                }
                if !cap_ok(cap) {
                    return bad("cap must be positive");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn eval_xyz(&self, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
        let capped = |v: f64, cap: &Option<f64>| cap.map_or(v, |c| v.min(c));
        match self {
            CostSpec::Constant { value } => *value,
            CostSpec::PositivePart { cap } => x.iter().sum::<f64>().max(0.0).min(*cap),
            CostSpec::Linear { c, d, cap } => {
                let mut v: f64 = c.iter().zip(y).map(|(a, b)| a * b).sum();
                if let Some(d) = d {
                    v += d.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
                }
                capped(v, cap)
            }
            CostSpec::QueuePower { alpha, c, cap } => {
                let v = c.iter().zip(y).map(|(a, b)| a * b.max(0.0).powf(*alpha)).sum();
                capped(v, cap)
            }
        }
    }

    /// Prelimit cost `L~(x, psi)` with `psi` per edge.
    pub fn eval_state(&self, tree: &crate::system::TreeIndex, x: &[f64], psi: &[f64]) -> f64 {
        let (rows, cols) = flow::margins(tree, psi);
        let y: Vec<f64> = x.iter().zip(&rows).map(|(a, b)| a - b).collect();
        let z: Vec<f64> = cols.iter().map(|c| -c).collect();
        self.eval_xyz(x, &y, &z)
    }

    /// `L(x, U) = L~(x, G^(x, U))`.
    pub fn eval_control(&self, d: &DriftData, x: &[f64], cp: &ControlPoint) -> f64 {
        self.eval_state(&d.tree, x, &d.ghat(x, cp))
    }

    /// Same as [`eval_control`](Self::eval_control) using the closed-form
    /// margins of `G^`; allocation free.
    pub fn eval_control_fast(&self, x: &[f64], cp: &ControlPoint) -> f64 {
        let s: f64 = x.iter().sum();
        let (sp, sm) = (s.max(0.0), (-s).max(0.0));
        let capped = |v: f64, cap: &Option<f64>| cap.map_or(v, |c| v.min(c));
        match self {
            CostSpec::Constant { value } => *value,
            CostSpec::PositivePart { cap } => sp.min(*cap),
            CostSpec::Linear { c, d, cap } => {
                let mut v = sp * c.iter().zip(&cp.u).map(|(a, u)| a * u).sum::<f64>();
                if let Some(d) = d {
                    v += sm * d.iter().zip(&cp.v).map(|(a, w)| a * w).sum::<f64>();
                }
                capped(v, cap)
            }
            CostSpec::QueuePower { alpha, c, cap } => {
                let v = c.iter().zip(&cp.u).map(|(a, u)| a * (sp * u).powf(*alpha)).sum();
                capped(v, cap)
            }
        }
    }

    /// Concave in `U` for fixed `x`, so the Hamiltonian is minimized at a
    /// vertex of the control set.
    pub fn vertex_exact(&self) -> bool {
        match self {
            CostSpec::QueuePower { alpha, .. } => *alpha <= 1.0,
            _ => true,
        }
    }

    pub fn convex_in_control(&self) -> bool {
        match self {
            CostSpec::Constant { .. } | CostSpec::PositivePart { .. } => true,
            CostSpec::Linear { cap, .. } => cap.is_none(),
            CostSpec::QueuePower { alpha, cap, .. } => *alpha >= 1.0 && cap.is_none(),
        }
    }

    pub fn bounded(&self) -> bool {
        match self {
            CostSpec::Constant { .. } | CostSpec::PositivePart { .. } => true,
            CostSpec::Linear { c, d, cap } => {
                cap.is_some()
                    || (c.iter().all(|&w| w == 0.0)
                        && d.as_ref().is_none_or(|d| d.iter().all(|&w| w == 0.0)))
            }
            CostSpec::QueuePower { c, cap, .. } => cap.is_some() || c.iter().all(|&w| w == 0.0),
        }
    }

    /// Polynomial growth exponent, at least one.
    pub fn growth_exponent(&self) -> f64 {
        match self {
            CostSpec::QueuePower { alpha, cap: None, .. } => alpha.max(1.0),
            _ => 1.0,
        }
    }

    /// Upper bound on the cost when bounded.
    pub fn sup_bound(&self) -> Option<f64> {
        match self {
            CostSpec::Constant { value } => Some(*value),
            CostSpec::PositivePart { cap } => Some(*cap),
            CostSpec::Linear { cap: Some(c), .. } | CostSpec::QueuePower { cap: Some(c), .. } => {
                Some(*c)
            }
            _ if self.bounded() => Some(0.0),
            _ => None,
        }
    }
}
