//! Experiment orchestration: sweeps over `n` and policies, comparison with
//! the diffusion value, and report emission.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::{
    mollification_check, mollify_policy, solve_hjb, CostSpec, DriftData, GridConfig, MarkovPolicy,
    MollificationCheck, PolicyTable, ValueField, DEFAULT_DELTA, DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::fluid::{solve_static_fluid, FluidTolerances, StaticFluid};
use crate::sim::{CostReport, PolicyKind, SimConfig, SimModel, Simulator};
use crate::stats;
use crate::storage;
use crate::system::{validate, SystemSpec, ValidatedSystem};

pub const REPORT_SCHEMA: u32 = 1;
/// Environment variable holding the worker count.
pub const WORKERS_ENV: &str = "TREESCHED_WORKERS";

fn default_tail_tol() -> f64 {
    1e-3
}
fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}
fn default_delta() -> f64 {
    DEFAULT_DELTA
}
fn default_radius() -> f64 {
    2.0
}
fn default_diag_start() -> f64 {
    0.5
}

/// Everything about a sweep except where its inputs live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    /// Strictly increasing.
    pub n: Vec<u32>,
    pub reps: u64,
    /// Limit of the scaled initial condition.
    pub x: Vec<f64>,
    pub policies: Vec<PolicyKind>,
    pub seed: u64,
    /// Simulation horizon; derived from `tail_tol` for bounded costs.
    #[serde(default)]
    pub horizon: Option<f64>,
    #[serde(default = "default_tail_tol")]
    pub tail_tol: f64,
    #[serde(default = "default_diag_start")]
    pub diag_start: f64,
    /// Mollification level for `ppp`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Allowed pointwise suboptimality of the mollified feedback.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Radius of the ball on which the mollified feedback is checked.
    #[serde(default = "default_radius")]
    pub check_radius: f64,
    #[serde(default)]
    pub priority: Option<Vec<usize>>,
    /// Record wall-clock time per replication (breaks byte reproducibility).
    #[serde(default)]
    pub timing: bool,
}

impl SweepSettings {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n.is_empty() || self.n.windows(2).any(|w| w[0] >= w[1]) || self.n[0] == 0 {
            return bad("n list must be nonempty, positive and strictly increasing");
        }
        if self.reps < 2 {
            return bad("at least two replications are needed");
        }
        if self.x.len() != num_classes {
            return bad("x needs one entry per class");
        }
        if !(self.tail_tol > 0.0) || !(self.epsilon > 0.0) || !(self.delta > 0.0) {
            return bad("tail_tol, epsilon and delta must be positive");
        }
        let mut seen = self.policies.clone();
        seen.sort_by_key(|p| p.name());
        seen.dedup();
        if seen.len() != self.policies.len() {
            return bad("policies must be distinct");
        }
        Ok(())
    }
}

/// Sweep description read from disk. Relative paths are resolved against
/// the plan's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub system: PathBuf,
    pub cost: PathBuf,
    /// Grid for solving the HJB equation when no value file is given.
    #[serde(default)]
    pub grid: Option<PathBuf>,
    #[serde(default)]
    pub fluid: Option<PathBuf>,
    #[serde(default)]
    pub value: Option<PathBuf>,
    #[serde(default)]
    pub policy: Option<PathBuf>,
    pub out_dir: PathBuf,
    #[serde(flatten)]
    pub settings: SweepSettings,
}

impl ExperimentPlan {
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut plan: ExperimentPlan = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut plan.system);
        fix(&mut plan.cost);
        fix(&mut plan.out_dir);
        for p in [&mut plan.grid, &mut plan.fluid, &mut plan.value, &mut plan.policy].into_iter().flatten() {
            fix(p);
        }
        Ok(plan)
    }
}

/// Solved inputs of a sweep.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub sys: ValidatedSystem,
    pub fluid: StaticFluid,
    pub cost: CostSpec,
    pub value: ValueField,
    pub policy: PolicyTable,
    /// SHA-256 of each input file, by role.
    pub hashes: BTreeMap<String, String>,
}

impl Artifacts {
    /// Solves the fluid model and the HJB equation in memory.
    pub fn solve(spec: SystemSpec, cost: CostSpec, grid: &GridConfig) -> Result<Self> {
        let sys = validate(spec)?;
        let fluid = solve_static_fluid(&sys, FluidTolerances::default())?;
        cost.validate(sys.num_classes(), sys.num_stations())?;
        let d = DriftData::new(&sys, &fluid);
        let rep = solve_hjb(&d, &cost, sys.spec.gamma, grid)?;
        Ok(Artifacts { sys, fluid, cost, value: rep.value, policy: rep.policy, hashes: BTreeMap::new() })
    }

    pub fn load(plan: &ExperimentPlan) -> Result<Self> {
        let mut hashes = BTreeMap::new();
        let mut read = |role: &str, p: &Path| -> Result<Vec<u8>> {
            let bytes = std::fs::read(p)?;
            hashes.insert(role.to_string(), sha256_hex(&bytes));
            Ok(bytes)
        };
        let text = |b: Vec<u8>| String::from_utf8(b).map_err(|e| Error::Parse(e.to_string()));
        let spec = SystemSpec::from_json_str(&text(read("system", &plan.system)?)?)?;
        let sys = validate(spec)?;
        let fluid = match &plan.fluid {
            Some(p) => StaticFluid::from_json_str(&text(read("fluid", p)?)?)?,
            None => solve_static_fluid(&sys, FluidTolerances::default())?,
        };
        let cost = CostSpec::from_json_str(&text(read("cost", &plan.cost)?)?)?;
        cost.validate(sys.num_classes(), sys.num_stations())?;
        let (value, policy) = match (&plan.value, &plan.policy) {
            (Some(v), Some(p)) => {
                let value = storage::decode_value(&read("value", v)?)?.0;
                let policy = storage::decode_policy(&read("policy", p)?)?;
                (value, policy)
            }
            (None, None) => {
                let gpath = plan.grid.as_ref().ok_or_else(|| {
                    Error::InvalidConfig("plan needs a grid file or value and policy files".into())
                })?;
                let grid = GridConfig::from_json_str(&text(read("grid", gpath)?)?)?;
                let d = DriftData::new(&sys, &fluid);
                let rep = solve_hjb(&d, &cost, sys.spec.gamma, &grid)?;
                (rep.value, rep.policy)
            }
            _ => return Err(Error::InvalidConfig("value and policy files come together".into())),
        };
        if value.grid.dim() != sys.num_classes() || policy.num_classes != sys.num_classes() {
            return Err(Error::InvalidConfig("value or policy dimension does not match the system".into()));
        }
        Ok(Artifacts { sys, fluid, cost, value, policy, hashes })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `X^{0,n} = [[n x* + sqrt(n) x]]`.
pub fn plan_initial_conditions(x: &[f64], fluid: &StaticFluid, n: u32) -> Result<Vec<i64>> {
    let nf = n as f64;
    let target: Vec<f64> = fluid.x_star.iter().zip(x).map(|(s, v)| nf * s + nf.sqrt() * v).collect();
    if let Some(class) = target.iter().position(|&v| v < 0.0) {
        return Err(Error::NegativePopulation { class, n: n as u64 });
    }
    crate::flow::round_preserving_sum(&target)
}

/// One row per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub rep: u64,
    pub n: u32,
    pub policy: PolicyKind,
    pub cost: f64,
    pub tail_bound: Option<f64>,
    #[serde(rename = "sup_Mhat")]
    pub sup_mhat: f64,
    #[serde(rename = "sup_J")]
    pub sup_j: f64,
    #[serde(rename = "sup_Lambda")]
    pub sup_lambda: f64,
    pub theta_n_time: Option<f64>,
    pub events: u64,
    pub wall_ms: u64,
    pub sup_xhat: f64,
    pub preemptions: u64,
    pub reconstruction_error: f64,
    pub identity_error: f64,
}

impl ReplicationRow {
    pub fn from_report(r: &CostReport, wall_ms: u64) -> Self {
        ReplicationRow {
            rep: r.rep,
            n: r.n,
            policy: r.policy,
            cost: r.cost,
            tail_bound: r.tail_bound,
            sup_mhat: r.sup_mhat,
            sup_j: r.sup_j,
            sup_lambda: r.sup_lambda,
            theta_n_time: r.theta_n_time,
            events: r.events,
            wall_ms,
            sup_xhat: r.sup_xhat,
            preemptions: r.preemptions,
            reconstruction_error: r.reconstruction_error,
            identity_error: r.identity_error,
        }
    }
}

/// Aggregate of one `(n, policy)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: u32,
    pub policy: PolicyKind,
    pub reps: u64,
    pub mean_cost: f64,
    pub se_cost: f64,
    /// `mean_cost - V(x)`.
    pub gap: f64,
    pub median_sup_j: f64,
    pub se_median_sup_j: f64,
    pub median_sup_mhat: f64,
    pub se_median_sup_mhat: f64,
    pub theta_frequency: f64,
    pub mean_events: f64,
    pub max_reconstruction_error: f64,
    pub max_identity_error: f64,
    pub preemptions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdicts {
    /// Per tracking policy: `|gap|` nonincreasing in `n` up to 2 SE.
    pub gap_trend: BTreeMap<String, bool>,
    /// Per baseline: gap at the largest `n` at least the `pstar` gap minus 2 SE.
    pub baseline_not_better: BTreeMap<String, bool>,
    /// Per tracking policy: median `sup J` and `sup M^` nonincreasing up to 2 SE.
    pub diagnostics_trend: BTreeMap<String, bool>,
    /// Switching frequency nonincreasing up to 2 SE, tracking policies only.
    pub theta_trend: BTreeMap<String, bool>,
    pub audits_passed: bool,
    pub audit_failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub schema: u32,
    pub settings: SweepSettings,
    pub hashes: BTreeMap<String, String>,
    /// `V(x)` by multilinear interpolation of the value field.
    pub value_at_x: f64,
    /// Residual of the value field, reported as the error scale of `V(x)`.
    pub value_residual: f64,
    pub horizon: f64,
    /// Switching threshold per tracking policy, maximized over `n`.
    pub b0: BTreeMap<String, f64>,
    pub mollification: Option<MollificationCheck>,
    pub cells: Vec<CellSummary>,
    pub verdicts: Verdicts,
    /// Per-replication rows; written to CSV, not to the JSON summary.
    #[serde(skip)]
    pub rows: Vec<ReplicationRow>,
}

impl SweepReport {
    pub fn cell(&self, n: u32, policy: PolicyKind) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.n == n && c.policy == policy)
    }
}

fn horizon_for(settings: &SweepSettings, cost: &CostSpec, gamma: f64) -> Result<f64> {
    if let Some(t) = settings.horizon {
        return Ok(t);
    }
    match cost.sup_bound() {
        Some(b) if b > 0.0 => Ok(((b / (gamma * settings.tail_tol)).ln() / gamma).max(1.0)),
        Some(_) => Ok(1.0),
        None => Err(Error::InvalidConfig("unbounded cost needs an explicit horizon".into())),
    }
}

/// Thread pool sized from the environment, or the global pool.
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> Result<T> {
    match std::env::var(WORKERS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(k) if k > 0 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
            Ok(pool.install(f))
        }
        _ => Ok(f()),
    }
}

/// Runs every `(n, policy, rep)` cell and aggregates in fixed cell order.
pub fn run_sweep_with(settings: &SweepSettings, art: &Artifacts) -> Result<SweepReport> {
    let sys = &art.sys;
    settings.validate(sys.num_classes())?;
    if let Some(order) = &settings.priority {
        if order.len() != sys.num_classes() {
            return Err(Error::InvalidConfig("priority needs one entry per class".into()));
        }
    }
    let gamma = sys.spec.gamma;
    let horizon = horizon_for(settings, &art.cost, gamma)?;
    let d = DriftData::new(sys, &art.fluid);
    let h_star = MarkovPolicy::HStar { table: art.policy.clone() };
    let mut model = SimModel::new(sys.clone(), art.fluid.clone(), art.cost.clone(), h_star);

    let mut mollification = None;
    let mut failures = Vec::new();
    if settings.policies.contains(&PolicyKind::Ppp) {
        let h = mollify_policy(&art.policy, settings.epsilon)?;
        let check = mollification_check(&art.value, &d, &art.cost, &h, settings.check_radius, settings.delta);
        if !check.passed {
            failures.push(format!(
                "mollified feedback exceeds delta: gap {:e} > {:e}",
                check.max_gap, settings.delta
            ));
        }
        mollification = Some(check);
        model = model.with_smooth(h);
    }

    let initial: Vec<Vec<i64>> =
        settings.n.iter().map(|&n| plan_initial_conditions(&settings.x, &art.fluid, n)).collect::<Result<_>>()?;
    let base_cfg = |n_idx: usize, policy: PolicyKind| {
        let mut cfg = SimConfig::new(settings.n[n_idx], horizon, settings.seed, policy, initial[n_idx].clone());
        cfg.diag_start = settings.diag_start;
        cfg.priority = settings.priority.clone();
        cfg
    };

    // one threshold per tracking policy over the whole n sequence
    let mut b0 = BTreeMap::new();
    for &policy in settings.policies.iter().filter(|p| p.is_tracking()) {
        let mut best: f64 = 0.0;
        for k in 0..settings.n.len() {
            best = best.max(Simulator::new(&model, base_cfg(k, policy), 0)?.b0);
        }
        b0.insert(policy.name().to_string(), best);
    }

    let mut tasks = Vec::new();
    for k in 0..settings.n.len() {
        for &policy in &settings.policies {
            for rep in 0..settings.reps {
                tasks.push((k, policy, rep));
            }
        }
    }
    let model_ref = &model;
    let results: Vec<Result<ReplicationRow>> = with_workers(|| {
        tasks
            .par_iter()
            .map(|&(k, policy, rep)| {
                let mut cfg = base_cfg(k, policy);
                cfg.b0 = b0.get(policy.name()).copied();
                let start = Instant::now();
                let report = Simulator::new(model_ref, cfg, rep)?.run()?;
                let wall = if settings.timing { start.elapsed().as_millis() as u64 } else { 0 };
                Ok(ReplicationRow::from_report(&report, wall))
            })
            .collect()
    })?;
    let rows: Vec<ReplicationRow> = results.into_iter().collect::<Result<_>>()?;

    let value_at_x = art.value.value_at(&settings.x);
    let cells = aggregate(&rows, settings, value_at_x);
    for c in &cells {
        if c.max_reconstruction_error > 1e-9 {
            failures.push(format!(
                "n = {} {}: path reconstruction error {:e}",
                c.n,
                c.policy.name(),
                c.max_reconstruction_error
            ));
        }
        if c.max_identity_error > 1e-9 {
            failures.push(format!("n = {} {}: scaled identity error {:e}", c.n, c.policy.name(), c.max_identity_error));
        }
        if !c.policy.is_preemptive() && c.preemptions > 0 {
            failures.push(format!("n = {} {}: {} preemptions", c.n, c.policy.name(), c.preemptions));
        }
    }
    let verdicts = verdicts(&cells, settings, failures);
    Ok(SweepReport {
        schema: REPORT_SCHEMA,
        settings: settings.clone(),
        hashes: art.hashes.clone(),
        value_at_x,
        value_residual: art.value.residual,
        horizon,
        b0,
        mollification,
        cells,
        verdicts,
        rows,
    })
}

pub fn run_sweep(plan: &ExperimentPlan) -> Result<SweepReport> {
    let art = Artifacts::load(plan)?;
    run_sweep_with(&plan.settings, &art)
}

fn aggregate(rows: &[ReplicationRow], settings: &SweepSettings, value_at_x: f64) -> Vec<CellSummary> {
    let mut cells = Vec::new();
    for &n in &settings.n {
        for &policy in &settings.policies {
            let cell: Vec<&ReplicationRow> = rows.iter().filter(|r| r.n == n && r.policy == policy).collect();
            let col = |f: fn(&ReplicationRow) -> f64| cell.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let costs = col(|r| r.cost);
            let sj = col(|r| r.sup_j);
            let sm = col(|r| r.sup_mhat);
            let mean_cost = stats::mean(&costs);
            cells.push(CellSummary {
                n,
                policy,
                reps: cell.len() as u64,
                mean_cost,
                se_cost: stats::std_error(&costs),
                gap: mean_cost - value_at_x,
                median_sup_j: stats::median(&sj),
                se_median_sup_j: stats::median_std_error(&sj),
                median_sup_mhat: stats::median(&sm),
                se_median_sup_mhat: stats::median_std_error(&sm),
                theta_frequency: cell.iter().filter(|r| r.theta_n_time.is_some()).count() as f64
                    / cell.len() as f64,
                mean_events: stats::mean(&col(|r| r.events as f64)),
                max_reconstruction_error: cell.iter().map(|r| r.reconstruction_error).fold(0.0, f64::max),
                max_identity_error: cell.iter().map(|r| r.identity_error).fold(0.0, f64::max),
                preemptions: cell.iter().map(|r| r.preemptions).sum(),
            });
        }
    }
    cells
}

fn verdicts(cells: &[CellSummary], settings: &SweepSettings, failures: Vec<String>) -> Verdicts {
    let series = |p: PolicyKind| -> Vec<&CellSummary> {
        settings.n.iter().filter_map(|&n| cells.iter().find(|c| c.n == n && c.policy == p)).collect()
    };
    let pairwise = |s: &[&CellSummary], f: &dyn Fn(&CellSummary) -> (f64, f64)| {
        s.windows(2).all(|w| {
            let (a, sa) = f(w[0]);
            let (b, sb) = f(w[1]);
            stats::not_larger(a, sa, b, sb)
        })
    };
    let mut v = Verdicts {
        gap_trend: BTreeMap::new(),
        baseline_not_better: BTreeMap::new(),
        diagnostics_trend: BTreeMap::new(),
        theta_trend: BTreeMap::new(),
        audits_passed: failures.is_empty(),
        audit_failures: failures,
    };
    let last_n = *settings.n.last().expect("validated nonempty");
    let pstar_last = cells.iter().find(|c| c.n == last_n && c.policy == PolicyKind::Pstar);
    for &p in &settings.policies {
        let s = series(p);
        let name = p.name().to_string();
        if matches!(p, PolicyKind::Pstar | PolicyKind::Pprime | PolicyKind::Ppp) {
            v.gap_trend.insert(name.clone(), pairwise(&s, &|c| (c.gap.abs(), c.se_cost)));
            let diag = pairwise(&s, &|c| (c.median_sup_j, c.se_median_sup_j))
                && pairwise(&s, &|c| (c.median_sup_mhat, c.se_median_sup_mhat));
            v.diagnostics_trend.insert(name.clone(), diag);
        }
        if p.is_tracking() {
            let binom = |c: &CellSummary| {
                let q = c.theta_frequency;
                (q, (q * (1.0 - q) / c.reps as f64).sqrt())
            };
            v.theta_trend.insert(name.clone(), pairwise(&s, &binom));
        }
        if matches!(p, PolicyKind::Priority | PolicyKind::Fifo) {
            if let (Some(ps), Some(b)) = (pstar_last, s.last()) {
                let tol = 2.0 * (ps.se_cost.powi(2) + b.se_cost.powi(2)).sqrt();
                v.baseline_not_better.insert(name, b.gap >= ps.gap - tol);
            }
        }
    }
    v
}

/// Writes `runs.csv` and `summary.json` into `dir`.
pub fn emit(report: &SweepReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_rows(&report.rows, dir.join("runs.csv"))?;
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    std::fs::write(dir.join("summary.json"), json)?;
    Ok(())
}

/// Inverse of [`emit`].
pub fn load_report(dir: impl AsRef<Path>) -> Result<SweepReport> {
    let dir = dir.as_ref();
    let mut report: SweepReport = serde_json::from_str(&std::fs::read_to_string(dir.join("summary.json"))?)?;
    if report.schema != REPORT_SCHEMA {
        return Err(Error::Parse(format!("unsupported report schema {}", report.schema)));
    }
    report.rows = read_rows(dir.join("runs.csv"))?;
    Ok(report)
}

pub fn write_rows(rows: &[ReplicationRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(CSV_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: impl AsRef<Path>) -> Result<Vec<ReplicationRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub const CSV_HEADER: [&str; 15] = [
    "rep",
    "n",
    "policy",
    "cost",
    "tail_bound",
    "sup_Mhat",
    "sup_J",
    "sup_Lambda",
    "theta_n_time",
    "events",
    "wall_ms",
    "sup_xhat",
    "preemptions",
    "reconstruction_error",
    "identity_error",
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::SystemSpec;

    fn single_artifacts() -> Artifacts {
        let mut spec = SystemSpec::simple(1, 1, &[(0, 0)], &[1.0], &[1.0], &[1.0]);
        spec.lambda_hat = vec![-1.0];
        Artifacts::solve(spec, CostSpec::PositivePart { cap: 5.0 }, &GridConfig::new(0.05)).unwrap()
    }

    fn settings(n: Vec<u32>, reps: u64, policies: Vec<PolicyKind>) -> SweepSettings {
        SweepSettings {
            n,
            reps,
            x: vec![0.5],
            policies,
            seed: 3,
            horizon: Some(2.0),
            tail_tol: 1e-3,
            diag_start: 0.5,
            epsilon: DEFAULT_EPSILON,
            delta: DEFAULT_DELTA,
            check_radius: 2.0,
            priority: None,
            timing: false,
        }
    }

    #[test]
    fn initial_condition_examples() {
        let art = single_artifacts();
        assert_eq!(plan_initial_conditions(&[0.0], &art.fluid, 100).unwrap(), vec![100]);
        assert_eq!(plan_initial_conditions(&[2.0], &art.fluid, 100).unwrap(), vec![120]);
        assert!(matches!(
            plan_initial_conditions(&[-20.0], &art.fluid, 100),
            Err(Error::NegativePopulation { class: 0, n: 100 })
        ));
    }

    #[test]
    fn two_replication_plan() {
        let art = single_artifacts();
        let s = settings(vec![25], 2, vec![PolicyKind::Pstar]);
        let r = run_sweep_with(&s, &art).unwrap();
        assert_eq!(r.rows.len(), 2);
        assert_eq!(r.cells.len(), 1);
        assert!(r.cells[0].se_cost.is_finite());
        assert!(r.verdicts.audits_passed);
    }

    #[test]
    fn emit_roundtrip_and_determinism() {
        let art = single_artifacts();
        let s = settings(vec![16, 36], 3, vec![PolicyKind::Pstar, PolicyKind::Pprime, PolicyKind::Fifo]);
        let a = run_sweep_with(&s, &art).unwrap();
        assert_eq!(a.rows.len(), 2 * 3 * 3);
        let dir = tempfile::tempdir().unwrap();
        emit(&a, dir.path()).unwrap();
        assert_eq!(load_report(dir.path()).unwrap(), a);
        let b = run_sweep_with(&s, &art).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        emit(&b, dir2.path()).unwrap();
        for f in ["runs.csv", "summary.json"] {
            assert_eq!(std::fs::read(dir.path().join(f)).unwrap(), std::fs::read(dir2.path().join(f)).unwrap());
        }
    }

    #[test]
    fn empty_policy_list_gives_valid_summary() {
        let art = single_artifacts();
        let r = run_sweep_with(&settings(vec![25], 2, vec![]), &art).unwrap();
        assert!(r.cells.is_empty());
        let dir = tempfile::tempdir().unwrap();
        emit(&r, dir.path()).unwrap();
        let back = load_report(dir.path()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.schema, REPORT_SCHEMA);
    }

    #[test]
    fn settings_are_checked() {
        let art = single_artifacts();
        for s in [
            settings(vec![100, 25], 2, vec![PolicyKind::Pstar]),
            settings(vec![25], 1, vec![PolicyKind::Pstar]),
            settings(vec![25], 2, vec![PolicyKind::Pstar, PolicyKind::Pstar]),
        ] {
            assert!(run_sweep_with(&s, &art).is_err());
        }
    }
}
