//! Discrete-event simulation of the n-th system under a scheduling policy.
//!
//! Arrivals are renewal processes with persistent residual times. Service
//! completions and abandonments are driven by one competing exponential clock
//! that is resampled after every event.

mod policies;

use std::collections::VecDeque;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::montecarlo::path_rng;
use crate::diffusion::{ControlPoint, CostSpec, MarkovPolicy};
use crate::error::{Error, Result};
use crate::flow;
use crate::fluid::StaticFluid;
use crate::system::{InterarrivalSampler, ValidatedSystem};

pub use policies::{initial_arrangement, pstar_rearrange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Preemptive tracking of the diffusion feedback.
    Pstar,
    /// Nonpreemptive tracking with blocking of overpopulated activities.
    Pprime,
    /// `Pprime` driven by the mollified feedback.
    Ppp,
    /// Nonpreemptive static priority by class.
    Priority,
    /// Nonpreemptive first come first served.
    Fifo,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Pstar => "pstar",
            PolicyKind::Pprime => "pprime",
            PolicyKind::Ppp => "ppp",
            PolicyKind::Priority => "priority",
            PolicyKind::Fifo => "fifo",
        }
    }

    pub fn is_preemptive(self) -> bool {
        self == PolicyKind::Pstar
    }

    pub fn is_tracking(self) -> bool {
        matches!(self, PolicyKind::Pprime | PolicyKind::Ppp)
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "pstar" => PolicyKind::Pstar,
            "pprime" => PolicyKind::Pprime,
            "ppp" => PolicyKind::Ppp,
            "priority" => PolicyKind::Priority,
            "fifo" => PolicyKind::Fifo,
            other => return Err(Error::InvalidConfig(format!("unknown policy `{other}`"))),
        })
    }
}

/// Integer arrangement of the population: queue, idle servers and
/// customers in service per activity.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Arrangement {
    pub y: Vec<i64>,
    pub z: Vec<i64>,
    /// Per activity in tree edge order.
    pub psi: Vec<i64>,
}

/// Read-only inputs shared by every replication.
#[derive(Debug, Clone)]
pub struct SimModel {
    pub sys: ValidatedSystem,
    pub fluid: StaticFluid,
    pub cost: CostSpec,
    /// Feedback tracked by `Pstar` and `Pprime` (`h*`, or `h0` when no table
    /// is available).
    pub h_star: MarkovPolicy,
    /// Feedback tracked by `Ppp`.
    pub h_smooth: Option<MarkovPolicy>,
}

impl SimModel {
    pub fn new(sys: ValidatedSystem, fluid: StaticFluid, cost: CostSpec, h_star: MarkovPolicy) -> Self {
        SimModel { sys, fluid, cost, h_star, h_smooth: None }
    }

    pub fn with_smooth(mut self, h: MarkovPolicy) -> Self {
        self.h_smooth = Some(h);
        self
    }

    /// The feedback a policy tracks before any switch.
    pub fn tracked(&self, kind: PolicyKind) -> Result<&MarkovPolicy> {
        match kind {
            PolicyKind::Ppp => self
                .h_smooth
                .as_ref()
                .ok_or_else(|| Error::InvalidConfig("ppp needs a mollified policy".into())),
            _ => Ok(&self.h_star),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: u32,
    pub horizon: f64,
    pub seed: u64,
    pub policy: PolicyKind,
    /// `X^{0,n}`.
    pub initial_x: Vec<i64>,
    /// Overrides the default initial arrangement.
    #[serde(default)]
    pub arrangement: Option<Arrangement>,
    /// Switching threshold for the tracking policies; computed from the
    /// initial state when absent.
    #[serde(default)]
    pub b0: Option<f64>,
    /// Start of the window over which tracking suprema are taken.
    #[serde(default)]
    pub diag_start: f64,
    /// Class order for `Priority`, highest first; defaults to `0..I`.
    #[serde(default)]
    pub priority: Option<Vec<usize>>,
}

impl SimConfig {
    pub fn new(n: u32, horizon: f64, seed: u64, policy: PolicyKind, initial_x: Vec<i64>) -> Self {
        SimConfig {
            n,
            horizon,
            seed,
            policy,
            initial_x,
            arrangement: None,
            b0: None,
            diag_start: 0.0,
            priority: None,
        }
    }
}

/// Parameters of the n-th system.
#[derive(Debug, Clone)]
pub struct Scaled {
    pub n: f64,
    pub sqrt_n: f64,
    pub lambda: Vec<f64>,
    /// Per edge.
    pub mu: Vec<f64>,
    pub theta: Vec<f64>,
    pub servers: Vec<i64>,
    pub x_star: Vec<f64>,
    /// Per edge.
    pub psi_star: Vec<f64>,
    pub ell: Vec<f64>,
}

impl Scaled {
    pub fn new(sys: &ValidatedSystem, fluid: &StaticFluid, n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidConfig("n must be positive".into()));
        }
        let nf = n as f64;
        let sqrt_n = nf.sqrt();
        let lambda = sys.lambda_n(nf);
        if let Some(i) = lambda.iter().position(|&l| !(l > 0.0)) {
            return Err(Error::InvalidConfig(format!("arrival rate of class {i} is not positive at n = {n}")));
        }
        let mu = sys.mu_n(nf);
        if let Some(e) = mu.iter().position(|&m| !(m > 0.0)) {
            return Err(Error::InvalidConfig(format!("service rate on activity {e} is not positive at n = {n}")));
        }
        let servers = sys.servers(nf);
        if let Some(j) = servers.iter().position(|&s| s < 1) {
            return Err(Error::InvalidConfig(format!("station {j} has no servers at n = {n}")));
        }
        let psi_star = fluid.psi_edges(sys);
        let mu0 = sys.edge_mu();
        // lambda_hat^n and mu_hat^n as defined from the n-th rates
        let mut ell: Vec<f64> =
            lambda.iter().zip(&sys.spec.lambda).map(|(ln, l)| sqrt_n * (ln / nf - l)).collect();
        for (e, &(i, _)) in sys.tree.edges.iter().enumerate() {
            ell[i] -= sqrt_n * (mu[e] - mu0[e]) * psi_star[e];
        }
        Ok(Scaled {
            n: nf,
            sqrt_n,
            lambda,
            mu,
            theta: sys.spec.theta.clone(),
            servers,
            x_star: fluid.x_star.clone(),
            psi_star,
            ell,
        })
    }

    pub fn x_hat(&self, x: &[i64]) -> Vec<f64> {
        x.iter().zip(&self.x_star).map(|(&v, s)| (v as f64 - self.n * s) / self.sqrt_n).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Event {
    Arrival(usize),
    /// Service completion on an activity (tree edge index).
    Service(usize),
    Abandonment(usize),
}

/// Diffusion-scaled view of the state and its tracking targets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScaledObservables {
    pub x_hat: Vec<f64>,
    pub y_hat: Vec<f64>,
    pub z_hat: Vec<f64>,
    pub psi_hat: Vec<f64>,
    pub m_hat: f64,
    pub y_check: Vec<f64>,
    pub z_check: Vec<f64>,
    pub psi_check: Vec<f64>,
    /// `|Y^ - Y~|_1 + |Z^ - Z~|_1`.
    pub j: f64,
    /// `Psi^ - Psi~` per edge.
    pub lambda: Vec<f64>,
}

impl ScaledObservables {
    pub fn lambda_norm(&self) -> f64 {
        self.lambda.iter().map(|v| v.abs()).sum()
    }

    /// Largest residual of the scaled balance equations, after removing the
    /// server-count offset `(N_j - n nu_j) / sqrt(n)`.
    pub fn identity_residual(&self, sc: &Scaled, nu: &[f64], tree: &crate::system::TreeIndex) -> f64 {
        let (rows, cols) = flow::margins(tree, &self.psi_hat);
        let mut worst: f64 = 0.0;
        for i in 0..rows.len() {
            worst = worst.max((self.y_hat[i] + rows[i] - self.x_hat[i]).abs());
        }
        for j in 0..cols.len() {
            let offset = (sc.servers[j] as f64 - sc.n * nu[j]) / sc.sqrt_n;
            worst = worst.max((self.z_hat[j] + cols[j] - offset).abs());
        }
        worst
    }
}

/// Targets `Y~ = (e.x)^+ u`, `Z~ = (e.x)^- v`, `Psi~ = G(x - Y~, -Z~)`.
pub fn tracking_targets(
    tree: &crate::system::TreeIndex,
    x_hat: &[f64],
    cp: &ControlPoint,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s: f64 = x_hat.iter().sum();
    let y: Vec<f64> = cp.u.iter().map(|u| s.max(0.0) * u).collect();
    let z: Vec<f64> = cp.v.iter().map(|v| (-s).max(0.0) * v).collect();
    let alpha: Vec<f64> = x_hat.iter().zip(&y).map(|(a, b)| a - b).collect();
    let beta: Vec<f64> = z.iter().map(|v| -v).collect();
    let psi = flow::g_peel(tree, &alpha, &beta);
    (y, z, psi)
}

/// Mutable state of one replication.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub x: Vec<i64>,
    pub y: Vec<i64>,
    pub z: Vec<i64>,
    /// Per edge.
    pub psi: Vec<i64>,
    /// Cumulative routings per edge.
    pub routed: Vec<u64>,
    /// Absolute time of the next arrival of each class.
    pub next_arrival: Vec<f64>,
    pub arrivals: Vec<u64>,
    /// Per edge.
    pub services: Vec<u64>,
    pub abandonments: Vec<u64>,
    /// `int_0^t Psi ds` per edge.
    pub psi_integral: Vec<f64>,
    /// `int_0^t Y ds` per class.
    pub y_integral: Vec<f64>,
    /// Arrivals that had to wait in the queue.
    pub delayed_arrivals: Vec<u64>,
    pub preemptions: u64,
    pub events: u64,
    /// Tracking policies: feedback switched to `h0`.
    pub switched: bool,
    pub theta_time: Option<f64>,
    pub cost: f64,
    /// Arrival epochs of queued customers, FIFO only.
    pub queues: Option<Vec<VecDeque<f64>>>,
}

impl SimState {
    pub fn arrangement(&self) -> Arrangement {
        Arrangement { y: self.y.clone(), z: self.z.clone(), psi: self.psi.clone() }
    }
}

/// Summary of one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rep: u64,
    pub n: u32,
    pub policy: PolicyKind,
    pub cost: f64,
    /// Bound on the discounted cost beyond the horizon, for bounded costs.
    pub tail_bound: Option<f64>,
    pub sup_mhat: f64,
    pub sup_j: f64,
    pub sup_lambda: f64,
    pub sup_xhat: f64,
    pub theta_n_time: Option<f64>,
    pub events: u64,
    pub b0: f64,
    pub preemptions: u64,
    /// Largest gap between the integral reconstruction of `X^` and its
    /// direct definition.
    pub reconstruction_error: f64,
    /// Largest residual of the scaled balance identities.
    pub identity_error: f64,
    pub arrivals: Vec<u64>,
    pub delayed_arrivals: Vec<u64>,
    pub horizon: f64,
}

/// One replication as an explicit state machine.
pub struct Simulator<'a> {
    pub model: &'a SimModel,
    pub cfg: SimConfig,
    pub scaled: Scaled,
    pub state: SimState,
    pub obs: ScaledObservables,
    pub b0: f64,
    rep: u64,
    rng: ChaCha8Rng,
    samplers: Vec<InterarrivalSampler>,
    x_hat0: Vec<f64>,
    cost_rate: f64,
    trigger_gap: f64,
    sup_mhat: f64,
    sup_j: f64,
    sup_lambda: f64,
    sup_xhat: f64,
    recon_error: f64,
    identity_error: f64,
    done: bool,
}

impl<'a> Simulator<'a> {
    /// Builds the initial state of replication `rep`; its random stream is
    /// keyed by `(cfg.seed, rep)`.
    pub fn new(model: &'a SimModel, cfg: SimConfig, rep: u64) -> Result<Self> {
        let sys = &model.sys;
        let (ni, nj) = (sys.num_classes(), sys.num_stations());
        if !(cfg.horizon > 0.0) || !cfg.horizon.is_finite() {
            return Err(Error::InvalidConfig("horizon must be positive and finite".into()));
        }
        if cfg.initial_x.len() != ni {
            return Err(Error::InvalidConfig("initial_x needs one entry per class".into()));
        }
        if let Some(i) = cfg.initial_x.iter().position(|&v| v < 0) {
            return Err(Error::NegativePopulation { class: i, n: cfg.n as u64 });
        }
        if let Some(order) = &cfg.priority {
            let mut sorted = order.clone();
            sorted.sort_unstable();
            if sorted != (0..ni).collect::<Vec<_>>() {
                return Err(Error::InvalidConfig("priority must be a permutation of the classes".into()));
            }
        }
        model.cost.validate(ni, nj)?;
        let scaled = Scaled::new(sys, &model.fluid, cfg.n)?;
        let tracked = model.tracked(cfg.policy)?;

        let arr = match &cfg.arrangement {
            Some(a) => a.clone(),
            None => initial_arrangement(sys, &model.fluid, &scaled, tracked, &cfg.initial_x)?,
        };
        let check = flow::RoutingState {
            psi: arr.psi.clone(),
            x: cfg.initial_x.clone(),
            y: arr.y.clone(),
            z: arr.z.clone(),
        };
        check.check(&sys.tree, &scaled.servers)?;
        if let Some(e) = arr.psi.iter().position(|&p| p < 0) {
            return Err(Error::MalformedState(format!("negative initial population on activity {e}")));
        }

        let mut rng = path_rng(cfg.seed, rep);
        let samplers: Vec<InterarrivalSampler> = sys.spec.interarrival.iter().map(|s| s.sampler()).collect();
        let next_arrival =
            (0..ni).map(|i| samplers[i].sample(&mut rng) / scaled.lambda[i]).collect();
        let queues = (cfg.policy == PolicyKind::Fifo).then(|| {
            (0..ni).map(|i| std::iter::repeat_n(0.0, arr.y[i] as usize).collect()).collect()
        });
        let ne = sys.num_edges();
        let state = SimState {
            t: 0.0,
            x: cfg.initial_x.clone(),
            y: arr.y,
            z: arr.z,
            psi: arr.psi,
            routed: vec![0; ne],
            next_arrival,
            arrivals: vec![0; ni],
            services: vec![0; ne],
            abandonments: vec![0; ni],
            psi_integral: vec![0.0; ne],
            y_integral: vec![0.0; ni],
            delayed_arrivals: vec![0; ni],
            preemptions: 0,
            events: 0,
            switched: false,
            theta_time: None,
            cost: 0.0,
            queues,
        };
        let x_hat0 = scaled.x_hat(&state.x);
        let mut sim = Simulator {
            model,
            cfg,
            scaled,
            state,
            obs: ScaledObservables::default(),
            b0: 0.0,
            rep,
            rng,
            samplers,
            x_hat0,
            cost_rate: 0.0,
            trigger_gap: f64::NEG_INFINITY,
            sup_mhat: 0.0,
            sup_j: 0.0,
            sup_lambda: 0.0,
            sup_xhat: 0.0,
            recon_error: 0.0,
            identity_error: 0.0,
            done: false,
        };
        sim.refresh()?;
        sim.b0 = match sim.cfg.b0 {
            Some(b) => b,
            None => b0_from(&sim.obs),
        };
        // the policy acts at time zero too
        let before = sim.state.clone();
        sim.apply_policy(&before, None)?;
        sim.refresh()?;
        sim.audit(&before, None)?;
        Ok(sim)
    }

    /// Samples the next event and the time until it, without changing the
    /// state apart from consuming randomness.
    pub fn next_event(&mut self) -> (Event, f64) {
        let st = &self.state;
        let (ai, a_time) = st
            .next_arrival
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &t)| if t < acc.1 { (i, t) } else { acc });
        let service: f64 = self.scaled.mu.iter().zip(&st.psi).map(|(m, &p)| m * p as f64).sum();
        let aband: f64 = self.scaled.theta.iter().zip(&st.y).map(|(th, &y)| th * y as f64).sum();
        let total = service + aband;
        let a_delta = a_time - st.t;
        if total > 0.0 {
            let e: f64 = Exp1.sample(&mut self.rng);
            let tau = e / total;
            if tau < a_delta {
                let mut pick = self.rng.gen::<f64>() * total;
                for (k, (m, &p)) in self.scaled.mu.iter().zip(&st.psi).enumerate() {
                    let r = m * p as f64;
                    if pick < r {
                        return (Event::Service(k), tau);
                    }
                    pick -= r;
                }
                let mut last = None;
                for (i, (th, &y)) in self.scaled.theta.iter().zip(&st.y).enumerate() {
                    let r = th * y as f64;
                    if r > 0.0 {
                        last = Some(i);
                        if pick < r {
                            return (Event::Abandonment(i), tau);
                        }
                        pick -= r;
                    }
                }
                // rounding left a sliver of mass; give it to the last live clock
                return match last {
                    Some(i) => (Event::Abandonment(i), tau),
                    None => {
                        let k = st.psi.iter().rposition(|&p| p > 0).expect("positive service rate");
                        (Event::Service(k), tau)
                    }
                };
            }
        }
        (Event::Arrival(ai), a_delta)
    }

    /// Advances to the next event and applies it together with the policy
    /// response. Returns `None` once the horizon is reached.
    pub fn step(&mut self) -> Result<Option<Event>> {
        if self.done {
            return Ok(None);
        }
        let (event, dt) = self.next_event();
        let t_new = self.state.t + dt;
        if t_new >= self.cfg.horizon {
            self.advance_to(self.cfg.horizon);
            self.done = true;
            return Ok(None);
        }
        self.advance_to(t_new);
        if self.cfg.policy.is_tracking() && !self.state.switched && self.trigger_gap >= self.b0 {
            self.state.switched = true;
            self.state.theta_time = Some(t_new);
        }
        let before = self.state.clone();
        self.apply_event(event)?;
        self.apply_policy(&before, Some(event))?;
        self.refresh()?;
        self.audit(&before, Some(event))?;
        Ok(Some(event))
    }

    /// Cost rate of the state in force.
    pub fn cost_rate(&self) -> f64 {
        self.cost_rate
    }

    pub fn run(mut self) -> Result<CostReport> {
        while self.step()?.is_some() {}
        Ok(self.report())
    }

    pub fn report(&self) -> CostReport {
        let gamma = self.model.sys.spec.gamma;
        let h = self.cfg.horizon;
        CostReport {
            rep: self.rep,
            n: self.cfg.n,
            policy: self.cfg.policy,
            cost: self.state.cost,
            tail_bound: self.model.cost.sup_bound().map(|b| b * (-gamma * h).exp() / gamma),
            sup_mhat: self.sup_mhat,
            sup_j: self.sup_j,
            sup_lambda: self.sup_lambda,
            sup_xhat: self.sup_xhat,
            theta_n_time: self.state.theta_time,
            events: self.state.events,
            b0: self.b0,
            preemptions: self.state.preemptions,
            reconstruction_error: self.recon_error,
            identity_error: self.identity_error,
            arrivals: self.state.arrivals.clone(),
            delayed_arrivals: self.state.delayed_arrivals.clone(),
            horizon: h,
        }
    }

    /// Moves the clock with the state frozen, accruing cost and integrals.
    fn advance_to(&mut self, t_new: f64) {
        let t_old = self.state.t;
        let dt = t_new - t_old;
        self.state.cost += accrue_cost(self.cost_rate, t_old, t_new, self.model.sys.spec.gamma);
        for (acc, &p) in self.state.psi_integral.iter_mut().zip(&self.state.psi) {
            *acc += p as f64 * dt;
        }
        for (acc, &y) in self.state.y_integral.iter_mut().zip(&self.state.y) {
            *acc += y as f64 * dt;
        }
        self.state.t = t_new;
        // the state in force on [t_old, t_new) counts if the interval meets the window
        self.sup_xhat = self.sup_xhat.max(self.obs.x_hat.iter().map(|v| v.abs()).sum());
        if t_new > self.cfg.diag_start {
            self.sup_mhat = self.sup_mhat.max(self.obs.m_hat);
            self.sup_j = self.sup_j.max(self.obs.j);
            self.sup_lambda = self.sup_lambda.max(self.obs.lambda_norm());
        }
    }

    fn apply_event(&mut self, event: Event) -> Result<()> {
        let st = &mut self.state;
        st.events += 1;
        match event {
            Event::Arrival(i) => {
                st.x[i] += 1;
                st.y[i] += 1;
                st.arrivals[i] += 1;
                let gap = self.samplers[i].sample(&mut self.rng) / self.scaled.lambda[i];
                st.next_arrival[i] = st.t + gap;
                if let Some(q) = &mut st.queues {
                    q[i].push_back(st.t);
                }
            }
            Event::Service(e) => {
                let (i, j) = self.model.sys.tree.edges[e];
                st.x[i] -= 1;
                st.psi[e] -= 1;
                st.z[j] += 1;
                st.services[e] += 1;
            }
            Event::Abandonment(i) => {
                st.x[i] -= 1;
                st.y[i] -= 1;
                st.abandonments[i] += 1;
                if let Some(q) = &mut st.queues {
                    let k = self.rng.gen_range(0..q[i].len());
                    q[i].remove(k);
                }
            }
        }
        Ok(())
    }

    fn apply_policy(&mut self, before: &SimState, event: Option<Event>) -> Result<()> {
        match self.cfg.policy {
            PolicyKind::Pstar => {
                let tracked = self.model.tracked(PolicyKind::Pstar)?;
                let arr = pstar_rearrange(
                    &self.model.sys,
                    &self.model.fluid,
                    &self.scaled,
                    tracked,
                    &self.state.x,
                    self.state.t,
                )?;
                for e in 0..arr.psi.len() {
                    let gain = arr.psi[e] - self.state.psi[e];
                    if gain > 0 {
                        self.state.routed[e] += gain as u64;
                    } else if gain < 0 {
                        self.state.preemptions += (-gain) as u64;
                    }
                }
                self.state.y = arr.y;
                self.state.z = arr.z;
                self.state.psi = arr.psi;
            }
            PolicyKind::Pprime | PolicyKind::Ppp => {
                // blocking uses the post-event, pre-routing state
                self.refresh()?;
                let nonblocked: Vec<bool> = self.obs.lambda.iter().map(|&l| l <= 0.0).collect();
                self.route(&nonblocked, None)?;
            }
            PolicyKind::Priority => {
                let order = self.cfg.priority.clone().unwrap_or_else(|| (0..self.state.x.len()).collect());
                let all = vec![true; self.state.psi.len()];
                self.route(&all, Some(&order))?;
            }
            PolicyKind::Fifo => self.route_fifo(),
        }
        if let Some(Event::Arrival(i)) = event {
            if self.state.y[i] > before.y[i] {
                self.state.delayed_arrivals[i] += 1;
            }
        }
        Ok(())
    }

    /// Routes one customer at a time through allowed activities, classes in
    /// `order` (default ascending), stations ascending.
    fn route(&mut self, allowed: &[bool], order: Option<&[usize]>) -> Result<()> {
        let tree = &self.model.sys.tree;
        match order {
            None => {
                let mut rs = flow::RoutingState {
                    psi: std::mem::take(&mut self.state.psi),
                    x: self.state.x.clone(),
                    y: std::mem::take(&mut self.state.y),
                    z: std::mem::take(&mut self.state.z),
                };
                let routed = flow::route_nonblocked(tree, &mut rs, &self.scaled.servers, allowed);
                self.state.psi = rs.psi;
                self.state.y = rs.y;
                self.state.z = rs.z;
                for e in routed.map_err(|err| Error::InvariantBroken {
                    time: self.state.t,
                    detail: err.to_string(),
                })? {
                    self.state.routed[e] += 1;
                }
            }
            Some(order) => loop {
                let mut hit = None;
                'search: for &i in order {
                    if self.state.y[i] == 0 {
                        continue;
                    }
                    for &e in &tree.adjacency[i] {
                        if allowed[e] && self.state.z[tree.edges[e].1] > 0 {
                            hit = Some(e);
                            break 'search;
                        }
                    }
                }
                let Some(e) = hit else { break };
                let (i, j) = tree.edges[e];
                self.state.y[i] -= 1;
                self.state.z[j] -= 1;
                self.state.psi[e] += 1;
                self.state.routed[e] += 1;
            },
        }
        Ok(())
    }

    /// Oldest waiting customer with an idle compatible server goes first.
    fn route_fifo(&mut self) {
        let tree = &self.model.sys.tree;
        loop {
            let queues = self.state.queues.as_ref().expect("fifo keeps queues");
            let mut best: Option<(f64, usize)> = None;
            for (i, q) in queues.iter().enumerate() {
                let Some(&t0) = q.front() else { continue };
                let Some(&e) = tree.adjacency[i].iter().find(|&&e| self.state.z[tree.edges[e].1] > 0)
                else {
                    continue;
                };
                if best.is_none_or(|(tb, _)| t0 < tb) {
                    best = Some((t0, e));
                }
            }
            let Some((_, e)) = best else { break };
            let (i, j) = tree.edges[e];
            self.state.queues.as_mut().unwrap()[i].pop_front();
            self.state.y[i] -= 1;
            self.state.z[j] -= 1;
            self.state.psi[e] += 1;
            self.state.routed[e] += 1;
        }
    }

    /// Recomputes observables, the cost rate and the switch trigger from the
    /// current state.
    fn refresh(&mut self) -> Result<()> {
        let sc = &self.scaled;
        let tree = &self.model.sys.tree;
        let st = &self.state;
        let x_hat = sc.x_hat(&st.x);
        let y_hat: Vec<f64> = st.y.iter().map(|&v| v as f64 / sc.sqrt_n).collect();
        let z_hat: Vec<f64> = st.z.iter().map(|&v| v as f64 / sc.sqrt_n).collect();
        let psi_hat: Vec<f64> =
            st.psi.iter().zip(&sc.psi_star).map(|(&p, s)| (p as f64 - sc.n * s) / sc.sqrt_n).collect();
        let ey: i64 = st.y.iter().sum();
        let ez: i64 = st.z.iter().sum();
        let m_hat = ey.min(ez) as f64 / sc.sqrt_n;

        let tracked = self.model.tracked(self.cfg.policy)?;
        let unswitched = tracked.eval(&x_hat);
        let (y0, z0, psi0) = tracking_targets(tree, &x_hat, &unswitched);
        let (y_check, z_check, psi_check) = if st.switched {
            let ni = self.model.sys.num_classes();
            let nj = self.model.sys.num_stations();
            tracking_targets(tree, &x_hat, &ControlPoint::vertex(ni, nj, 0, 0))
        } else {
            (y0, z0, psi0.clone())
        };
        self.trigger_gap =
            psi_hat.iter().zip(&psi0).map(|(a, b)| a - b).fold(f64::NEG_INFINITY, f64::max);
        let j = y_hat.iter().zip(&y_check).map(|(a, b)| (a - b).abs()).sum::<f64>()
            + z_hat.iter().zip(&z_check).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let lambda = psi_hat.iter().zip(&psi_check).map(|(a, b)| a - b).collect();
        self.cost_rate = self.model.cost.eval_xyz(&x_hat, &y_hat, &z_hat);
        self.obs = ScaledObservables {
            x_hat,
            y_hat,
            z_hat,
            psi_hat,
            m_hat,
            y_check,
            z_check,
            psi_check,
            j,
            lambda,
        };
        Ok(())
    }

    /// Hard checks after every event.
    fn audit(&mut self, before: &SimState, event: Option<Event>) -> Result<()> {
        let t = self.state.t;
        let broken = |detail: String| Error::InvariantBroken { time: t, detail };
        let tree = &self.model.sys.tree;
        let st = &self.state;
        let rs = flow::RoutingState { psi: st.psi.clone(), x: st.x.clone(), y: st.y.clone(), z: st.z.clone() };
        rs.check(tree, &self.scaled.servers).map_err(|e| broken(e.to_string()))?;
        if let Some(i) = st.x.iter().position(|&v| v < 0) {
            return Err(broken(format!("negative population at class {i}")));
        }
        if let Some(e) = st.psi.iter().position(|&v| v < 0) {
            return Err(broken(format!("negative service count on activity {e}")));
        }

        if !self.cfg.policy.is_preemptive() {
            for e in 0..st.psi.len() {
                let served = matches!(event, Some(Event::Service(k)) if k == e) as i64;
                let routed = (st.routed[e] - before.routed[e]) as i64;
                if st.psi[e] != before.psi[e] - served + routed {
                    return Err(broken(format!("customer removed from service on activity {e}")));
                }
            }
        }

        if self.cfg.policy.is_tracking() {
            // blocking decision is taken on the post-event state before routing
            let mut pre = before.clone();
            if let Some(ev) = event {
                apply_event_counts(&mut pre, ev, &tree.edges);
            }
            let sc = &self.scaled;
            for e in 0..st.psi.len() {
                let psi_hat_pre = (pre.psi[e] as f64 - sc.n * sc.psi_star[e]) / sc.sqrt_n;
                if psi_hat_pre > self.obs.psi_check[e] && st.routed[e] != before.routed[e] {
                    return Err(broken(format!("routing on blocked activity {e}")));
                }
                let (i, j) = tree.edges[e];
                if self.obs.lambda[e] <= 0.0 && st.y[i].min(st.z[j]) > 0 {
                    return Err(broken(format!("idle server and waiting customer on open activity {e}")));
                }
            }
        }

        if self.cfg.policy == PolicyKind::Pstar {
            let dist: f64 =
                st.x.iter().zip(&self.scaled.x_star).map(|(&v, s)| (v as f64 - self.scaled.n * s).abs()).sum();
            if dist <= self.model.fluid.alpha0 * self.scaled.n && self.obs.m_hat != 0.0 {
                return Err(broken("queue and idle servers coexist inside the fluid ball".into()));
            }
        }

        self.identity_error = self
            .identity_error
            .max(self.obs.identity_residual(&self.scaled, &self.model.sys.spec.nu, tree));
        self.recon_error = self.recon_error.max(self.reconstruction_gap());
        Ok(())
    }

    /// Gap between `X^` rebuilt from the centered primitive processes and
    /// its direct definition, worst class.
    pub fn reconstruction_gap(&self) -> f64 {
        let sc = &self.scaled;
        let st = &self.state;
        let t = st.t;
        let mut rebuilt = self.x_hat0.clone();
        for i in 0..rebuilt.len() {
            let a_hat = (st.arrivals[i] as f64 - sc.lambda[i] * t) / sc.sqrt_n;
            let r_hat = (st.abandonments[i] as f64 - sc.theta[i] * st.y_integral[i]) / sc.sqrt_n;
            rebuilt[i] += a_hat - r_hat + sc.ell[i] * t - sc.theta[i] * st.y_integral[i] / sc.sqrt_n;
        }
        for (e, &(i, _)) in self.model.sys.tree.edges.iter().enumerate() {
            let s_hat = (st.services[e] as f64 - sc.mu[e] * st.psi_integral[e]) / sc.sqrt_n;
            let int_psi_hat = (st.psi_integral[e] - sc.n * sc.psi_star[e] * t) / sc.sqrt_n;
            rebuilt[i] -= s_hat + sc.mu[e] * int_psi_hat;
        }
        let direct = sc.x_hat(&st.x);
        rebuilt.iter().zip(&direct).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn apply_event_counts(st: &mut SimState, event: Event, edges: &[(usize, usize)]) {
    match event {
        Event::Arrival(i) => {
            st.x[i] += 1;
            st.y[i] += 1;
        }
        Event::Service(e) => {
            st.x[edges[e].0] -= 1;
            st.psi[e] -= 1;
            st.z[edges[e].1] += 1;
        }
        Event::Abandonment(i) => {
            st.x[i] -= 1;
            st.y[i] -= 1;
        }
    }
}

/// `2 + max (Psi^(0) - Psi~(0))^+`.
pub fn b0_from(obs: &ScaledObservables) -> f64 {
    2.0 + obs.lambda.iter().fold(0.0_f64, |m, &l| m.max(l))
}

/// Exact discounted integral of a constant rate over `[t0, t1)`.
pub fn accrue_cost(rate: f64, t0: f64, t1: f64, gamma: f64) -> f64 {
    if rate == 0.0 || t1 <= t0 {
        return 0.0;
    }
    rate * ((-gamma * t0).exp() - (-gamma * t1).exp()) / gamma
}

/// Runs replications `0..reps` in parallel; reports come back in
/// replication order.
pub fn run_replications(model: &SimModel, cfg: &SimConfig, reps: u64) -> Result<Vec<CostReport>> {
    (0..reps)
        .into_par_iter()
        .map(|rep| Simulator::new(model, cfg.clone(), rep)?.run())
        .collect()
}

pub fn run_replication(model: &SimModel, cfg: &SimConfig, rep: u64) -> Result<CostReport> {
    Simulator::new(model, cfg.clone(), rep)?.run()
}
