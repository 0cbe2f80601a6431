mod common;

use common::*;
use treesched::diffusion::{mollify_policy, CostSpec, MarkovPolicy, DEFAULT_EPSILON};
use treesched::fluid::{solve_static_fluid, FluidTolerances};
use treesched::harness::plan_initial_conditions;
use treesched::sim::{Event, PolicyKind, SimConfig, SimModel, Simulator};
use treesched::system::validate;

fn single_station_model(theta: f64) -> SimModel {
    let mut spec = single_station_spec();
    spec.theta = vec![theta];
    let sys = validate(spec).unwrap();
    let fluid = solve_static_fluid(&sys, FluidTolerances::default()).unwrap();
    SimModel::new(sys, fluid, single_station_cost(), MarkovPolicy::h_zero(1, 1))
}

/// Fraction of arrivals after `warmup` that had to wait.
fn delayed_fraction(model: &SimModel, rep: u64, warmup: f64, horizon: f64) -> (f64, f64) {
    let cfg = SimConfig::new(100, horizon, 5, PolicyKind::Fifo, vec![90]);
    let mut sim = Simulator::new(model, cfg, rep).unwrap();
    let mut mark = None;
    while sim.step().unwrap().is_some() {
        if mark.is_none() && sim.state.t >= warmup {
            mark = Some((sim.state.arrivals[0], sim.state.delayed_arrivals[0]));
        }
    }
    let (a0, d0) = mark.unwrap();
    let arrivals = (sim.state.arrivals[0] - a0) as f64;
    ((sim.state.delayed_arrivals[0] - d0) as f64 / arrivals, sim.state.arrivals[0] as f64 / horizon)
}

#[test]
fn mmn_delay_probability_matches_erlang_c() {
    // lambda^n = 100 - sqrt(100) = 90 on 100 unit-rate servers
    let model = single_station_model(0.0);
    let runs: Vec<(f64, f64)> = (0..200).map(|rep| delayed_fraction(&model, rep, 20.0, 70.0)).collect();
    let (p, se) = mean_se(&runs.iter().map(|r| r.0).collect::<Vec<_>>());
    let exact = erlang_c(100, 90.0);
    assert!((p - exact).abs() <= 3.0 * se, "delay {p} +- {se} vs {exact}");
    let (rate, rse) = mean_se(&runs.iter().map(|r| r.1).collect::<Vec<_>>());
    assert!((rate - 90.0).abs() <= 3.0 * rse, "rate {rate} +- {rse}");
}

/// Population at the horizon and its time average.
fn population_path(model: &SimModel, policy: PolicyKind, seed: u64, rep: u64) -> (f64, f64) {
    let x0 = plan_initial_conditions(&[0.5], &model.fluid, 50).unwrap();
    let mut sim = Simulator::new(model, SimConfig::new(50, 5.0, seed, policy, x0), rep).unwrap();
    let (mut area, mut last) = (0.0, 0.0);
    let mut x = sim.state.x[0] as f64;
    while sim.step().unwrap().is_some() {
        area += x * (sim.state.t - last);
        last = sim.state.t;
        x = sim.state.x[0] as f64;
    }
    area += x * (5.0 - last);
    (x, area / 5.0)
}

#[test]
fn nonpreemptive_tracking_matches_fifo_in_law_on_one_station() {
    let model = single_station_model(0.5);
    let a: Vec<(f64, f64)> = (0..1000).map(|r| population_path(&model, PolicyKind::Pprime, 1, r)).collect();
    let b: Vec<(f64, f64)> = (0..1000).map(|r| population_path(&model, PolicyKind::Fifo, 2, r)).collect();
    let crit = ks_critical_1pct(1000, 1000);
    for pick in [|v: &(f64, f64)| v.0, |v: &(f64, f64)| v.1] {
        let da: Vec<f64> = a.iter().map(pick).collect();
        let db: Vec<f64> = b.iter().map(pick).collect();
        let d = ks_statistic(&da, &db);
        assert!(d < crit, "KS {d} >= {crit}");
    }
    // without abandonment neither discipline draws extra randomness, so a
    // shared stream gives the same population path
    let patient = single_station_model(0.0);
    for r in 0..20 {
        assert_eq!(
            population_path(&patient, PolicyKind::Pprime, 3, r),
            population_path(&patient, PolicyKind::Fifo, 3, r)
        );
    }
}

fn two_class_model() -> SimModel {
    let (sys, fluid, _, rep) = solved(two_class_spec(), &two_class_cost(), 0.1);
    SimModel::new(sys, fluid, two_class_cost(), MarkovPolicy::HStar { table: rep.policy })
}

#[test]
fn pstar_is_work_conserving_inside_the_ball() {
    let model = two_class_model();
    let n = 100;
    let radius = model.fluid.alpha0 * n as f64;
    let mut inside = 0;
    for rep in 0..10 {
        let x0 = plan_initial_conditions(&[0.5, 0.5], &model.fluid, n).unwrap();
        let mut sim = Simulator::new(&model, SimConfig::new(n, 8.0, 3, PolicyKind::Pstar, x0), rep).unwrap();
        while sim.step().unwrap().is_some() {
            let dist: f64 =
                sim.state.x.iter().zip(&model.fluid.x_star).map(|(&x, s)| (x as f64 - n as f64 * s).abs()).sum();
            if dist <= radius {
                inside += 1;
                assert_eq!(sim.obs.m_hat, 0.0, "t = {}", sim.state.t);
            }
        }
    }
    assert!(inside > 1000);
}

#[test]
fn nonpreemptive_paths_respect_blocking_and_routing_rules() {
    let base = two_class_model();
    let MarkovPolicy::HStar { table } = &base.h_star else { unreachable!() };
    let smooth = mollify_policy(table, DEFAULT_EPSILON).unwrap();
    let model = base.with_smooth(smooth);
    let tree = &model.sys.tree;
    for policy in [PolicyKind::Pprime, PolicyKind::Ppp] {
        for rep in 0..4 {
            let x0 = plan_initial_conditions(&[1.0, -0.5], &model.fluid, 100).unwrap();
            let mut sim = Simulator::new(&model, SimConfig::new(100, 8.0, 9, policy, x0), rep).unwrap();
            let mut routed = sim.state.routed.clone();
            let mut psi = sim.state.psi.clone();
            while let Some(ev) = sim.step().unwrap() {
                for (e, (&now, &before)) in sim.state.routed.iter().zip(&routed).enumerate() {
                    assert!(now >= before);
                    // a server only changes customers through a routing or a completion
                    let finished = matches!(ev, Event::Service(f) if f == e) as i64;
                    assert_eq!(sim.state.psi[e] - psi[e], (now - before) as i64 - finished);
                }
                for (e, &(i, j)) in tree.edges.iter().enumerate() {
                    if sim.obs.lambda[e] <= 0.0 {
                        assert_eq!(sim.state.y[i].min(sim.state.z[j]), 0, "t = {}", sim.state.t);
                    }
                }
                routed = sim.state.routed.clone();
                psi = sim.state.psi.clone();
            }
            assert_eq!(sim.state.preemptions, 0);
            let report = sim.report();
            assert!(report.reconstruction_error < 1e-9 && report.identity_error < 1e-9);
        }
    }
}

#[test]
fn zero_cost_is_zero_and_constant_cost_discounts_exactly() {
    let mut model = single_station_model(0.0);
    model.cost = CostSpec::Constant { value: 2.0 };
    let cfg = SimConfig::new(50, 3.0, 1, PolicyKind::Fifo, vec![50]);
    let r = Simulator::new(&model, cfg.clone(), 0).unwrap().run().unwrap();
    assert!((r.cost - 2.0 * (1.0 - (-3.0f64).exp())).abs() < 1e-12);
    model.cost = CostSpec::Constant { value: 0.0 };
    assert_eq!(Simulator::new(&model, cfg, 0).unwrap().run().unwrap().cost, 0.0);
}
