use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use treesched::diffusion::{mollify_policy, solve_hjb, CostSpec, DriftData, GridConfig, MarkovPolicy, DEFAULT_EPSILON};
use treesched::fluid::{solve_static_fluid, FluidTolerances, StaticFluid};
use treesched::harness::{self, ExperimentPlan, ReplicationRow};
use treesched::sim::{PolicyKind, SimConfig, SimModel};
use treesched::storage;
use treesched::system::{validate, SystemSpec, ValidatedSystem};
use treesched::{Error, Result};

#[derive(Parser)]
#[command(name = "treesched", version, about = "Tree-structured many-server scheduling toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the static fluid problem.
    Fluid {
        #[arg(long)]
        system: PathBuf,
        /// Writes to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the HJB equation and store the value and the minimizing policy.
    Hjb {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        fluid: Option<PathBuf>,
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long, default_value = "value.bin")]
        value_out: PathBuf,
        #[arg(long, default_value = "policy.bin")]
        policy_out: PathBuf,
    },
    /// Simulate replications of one policy at one scale.
    Simulate {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        fluid: Option<PathBuf>,
        #[arg(long)]
        cost: PathBuf,
        #[arg(long)]
        policy: PolicyKind,
        /// Policy table from `hjb`; required by the tracking policies.
        #[arg(long)]
        policy_file: Option<PathBuf>,
        #[arg(long)]
        n: u32,
        /// Chosen from the cost bound and `--tail-tol` when absent.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value_t = 1e-3)]
        tail_tol: f64,
        #[arg(long, default_value_t = 100)]
        reps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Scaled initial condition, comma separated; zero when absent.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        x: Option<Vec<f64>>,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        /// Class order for the priority baseline (zero based).
        #[arg(long, value_delimiter = ',')]
        priority: Option<Vec<usize>>,
        #[arg(long, default_value_t = 0.5)]
        diag_start: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a sweep described by a plan file.
    Sweep {
        #[arg(long)]
        plan: PathBuf,
    },
}

fn load_system(path: &PathBuf) -> Result<ValidatedSystem> {
    validate(SystemSpec::from_path(path)?)
}

fn load_fluid(sys: &ValidatedSystem, path: &Option<PathBuf>) -> Result<StaticFluid> {
    match path {
        Some(p) => StaticFluid::from_path(p),
        None => solve_static_fluid(sys, FluidTolerances::default()),
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Fluid { system, out } => {
            let sys = load_system(&system)?;
            let fluid = solve_static_fluid(&sys, FluidTolerances::default())?;
            let text = fluid.to_json_string();
            match out {
                Some(p) => std::fs::write(p, text + "\n")?,
                None => println!("{text}"),
            }
            Ok(true)
        }
        Command::Hjb { system, fluid, cost, grid, value_out, policy_out } => {
            let sys = load_system(&system)?;
            let fluid = load_fluid(&sys, &fluid)?;
            let cost = CostSpec::from_path(cost)?;
            cost.validate(sys.num_classes(), sys.num_stations())?;
            let grid = GridConfig::from_path(grid)?;
            let d = DriftData::new(&sys, &fluid);
            let rep = solve_hjb(&d, &cost, sys.spec.gamma, &grid)?;
            storage::write_value(&value_out, &rep.value, &rep.assumption3, rep.box_change)?;
            storage::write_policy(&policy_out, &rep.policy)?;
            let summary = serde_json::json!({
                "nodes": rep.value.grid.len(),
                "iterations": rep.value.iterations,
                "residual": rep.value.residual,
                "assumption3": rep.assumption3,
                "box_change": rep.box_change,
                "value_at_origin": rep.value.value_at(&vec![0.0; sys.num_classes()]),
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(true)
        }
        Command::Simulate {
            system,
            fluid,
            cost,
            policy,
            policy_file,
            n,
            horizon,
            tail_tol,
            reps,
            seed,
            x,
            epsilon,
            priority,
            diag_start,
            out,
        } => {
            let sys = load_system(&system)?;
            let fluid = load_fluid(&sys, &fluid)?;
            let cost = CostSpec::from_path(cost)?;
            cost.validate(sys.num_classes(), sys.num_stations())?;
            let table = policy_file.as_ref().map(storage::read_policy).transpose()?;
            if (policy.is_tracking() || policy == PolicyKind::Pstar) && table.is_none() {
                return Err(Error::InvalidConfig(format!("policy {} needs --policy-file", policy.name())));
            }
            let (ni, nj) = (sys.num_classes(), sys.num_stations());
            let h_star = match &table {
                Some(t) => MarkovPolicy::HStar { table: t.clone() },
                None => MarkovPolicy::h_zero(ni, nj),
            };
            let mut model = SimModel::new(sys.clone(), fluid.clone(), cost.clone(), h_star);
            if policy == PolicyKind::Ppp {
                model = model.with_smooth(mollify_policy(table.as_ref().expect("checked above"), epsilon)?);
            }
            let x = x.unwrap_or_else(|| vec![0.0; ni]);
            if x.len() != ni {
                return Err(Error::InvalidConfig("--x needs one entry per class".into()));
            }
            let horizon = match horizon {
                Some(t) => t,
                None => match cost.sup_bound() {
                    Some(b) if b > 0.0 => (b / (sys.spec.gamma * tail_tol)).ln() / sys.spec.gamma,
                    Some(_) => 1.0,
                    None => return Err(Error::InvalidConfig("unbounded cost needs --horizon".into())),
                },
            };
            let mut cfg = SimConfig::new(n, horizon, seed, policy, harness::plan_initial_conditions(&x, &fluid, n)?);
            cfg.priority = priority;
            cfg.diag_start = diag_start;
            let reports = harness::with_workers(|| treesched::sim::run_replications(&model, &cfg, reps))??;
            let rows: Vec<ReplicationRow> = reports.iter().map(|r| ReplicationRow::from_report(r, 0)).collect();
            harness::write_rows(&rows, &out)?;
            let audits = rows.iter().all(|r| r.reconstruction_error <= 1e-9 && r.identity_error <= 1e-9);
            let mean = rows.iter().map(|r| r.cost).sum::<f64>() / rows.len().max(1) as f64;
            println!("{} replications, mean cost {mean:.6}, audits {}", rows.len(), if audits { "ok" } else { "FAILED" });
            Ok(audits)
        }
        Command::Sweep { plan } => {
            let plan = ExperimentPlan::from_path(plan)?;
            let report = harness::run_sweep(&plan)?;
            harness::emit(&report, &plan.out_dir)?;
            for c in &report.cells {
                println!(
                    "n={:<6} {:<9} mean {:.5} se {:.5} gap {:+.5}",
                    c.n,
                    c.policy.name(),
                    c.mean_cost,
                    c.se_cost,
                    c.gap
                );
            }
            for f in &report.verdicts.audit_failures {
                eprintln!("audit: {f}");
            }
            println!("V(x) = {:.5}; reports in {}", report.value_at_x, plan.out_dir.display());
            Ok(report.verdicts.audits_passed)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
