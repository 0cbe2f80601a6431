//! C interface to `treesched`.
//!
//! Every entry point returns a [`TsStatus`]. On failure the message is kept
//! per thread and can be read with [`ts_last_error`]. Handles are opaque and
//! must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use treesched::diffusion::{
    mollify_policy, solve_hjb, CostSpec, DriftData, GridConfig, HjbReport, MarkovPolicy, DEFAULT_EPSILON,
};
use treesched::flow::{g_solve, round_preserving_sum};
use treesched::fluid::{solve_static_fluid, FluidTolerances, StaticFluid};
use treesched::harness::plan_initial_conditions;
use treesched::sim::{PolicyKind, SimConfig, SimModel, Simulator};
use treesched::system::{validate, SystemSpec, ValidatedSystem};
use treesched::Error;

/// Status codes. Values from 100 up mirror the library error variants.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    TsOk = 0,
    TsNullPointer = 1,
    TsInvalidUtf8 = 2,
    TsLengthMismatch = 3,
    TsPanic = 4,
    TsCycleDetected = 100,
    TsDisconnected = 101,
    TsRateEdgeMismatch = 102,
    TsNonpositiveRate = 103,
    TsInvalidSystem = 104,
    TsNotCriticallyLoaded = 105,
    TsNonBasicActivity = 106,
    TsNegativeAllocation = 107,
    TsMarginMismatch = 108,
    TsNegativeComponent = 109,
    TsMalformedState = 110,
    TsHypothesisViolated = 111,
    TsGridTooSmall = 112,
    TsNoConvergence = 113,
    TsEmptyNeighborhood = 114,
    TsStepTooLarge = 115,
    TsInfeasibleRearrangement = 116,
    TsInvariantBroken = 117,
    TsNegativePopulation = 118,
    TsInvalidConfig = 119,
    TsIoFailure = 120,
    TsParse = 121,
}

impl From<&Error> for TsStatus {
    fn from(e: &Error) -> Self {
        use TsStatus::*;
        match e {
            Error::CycleDetected { .. } => TsCycleDetected,
            Error::Disconnected { .. } => TsDisconnected,
            Error::RateEdgeMismatch { .. } => TsRateEdgeMismatch,
            Error::NonpositiveRate { .. } => TsNonpositiveRate,
            Error::InvalidSystem(_) => TsInvalidSystem,
            Error::NotCriticallyLoaded { .. } => TsNotCriticallyLoaded,
            Error::NonBasicActivity { .. } => TsNonBasicActivity,
            Error::NegativeAllocation { .. } => TsNegativeAllocation,
            Error::MarginMismatch { .. } => TsMarginMismatch,
            Error::NegativeComponent { .. } => TsNegativeComponent,
            Error::MalformedState(_) => TsMalformedState,
            Error::HypothesisViolated(_) => TsHypothesisViolated,
            Error::GridTooSmall { .. } => TsGridTooSmall,
            Error::NoConvergence { .. } => TsNoConvergence,
            Error::EmptyNeighborhood => TsEmptyNeighborhood,
            Error::StepTooLarge { .. } => TsStepTooLarge,
            Error::InfeasibleRearrangement { .. } => TsInfeasibleRearrangement,
            Error::InvariantBroken { .. } => TsInvariantBroken,
            Error::NegativePopulation { .. } => TsNegativePopulation,
            Error::InvalidConfig(_) => TsInvalidConfig,
            Error::IoFailure(_) => TsIoFailure,
            Error::Parse(_) => TsParse,
        }
    }
}

/// A validated system together with its static fluid solution.
pub struct TsSystem {
    sys: ValidatedSystem,
    fluid: StaticFluid,
}

/// An HJB solution: value function, minimizing policy and the cost it was
/// solved for.
pub struct TsSolution {
    report: HjbReport,
    cost: CostSpec,
}

/// Outcome of one simulated replication.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct TsRunSummary {
    pub cost: f64,
    pub sup_mhat: f64,
    pub sup_j: f64,
    pub sup_lambda: f64,
    pub events: u64,
    pub preemptions: u64,
    pub reconstruction_error: f64,
    pub identity_error: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

enum Fail {
    Status(TsStatus, String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            TsStatus::TsOk
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            TsStatus::from(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside treesched".into());
            TsStatus::TsPanic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(TsStatus::TsNullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Status(TsStatus::TsInvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T: Copy>(src: &[T], dst: *mut T, len: usize, what: &str) -> Result<(), Fail> {
    if len != src.len() {
        return Err(Fail::Status(
            TsStatus::TsLengthMismatch,
            format!("{what} has length {len}, expected {}", src.len()),
        ));
    }
    if len > 0 {
        if dst.is_null() {
            return Err(null(what));
        }
        ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    }
    Ok(())
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ts_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a system from JSON and solves its static fluid
/// problem.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn ts_system_new(json: *const c_char, out: *mut *mut TsSystem) -> TsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let sys = validate(SystemSpec::from_json_str(text(json, "json")?)?)?;
        let fluid = solve_static_fluid(&sys, FluidTolerances::default())?;
        *out = Box::into_raw(Box::new(TsSystem { sys, fluid }));
        Ok(())
    })
}

/// # Safety
/// `sys` must come from [`ts_system_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_system_free(sys: *mut TsSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Number of classes, stations and activities.
///
/// # Safety
/// `sys` must be a live handle; the output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn ts_system_dims(
    sys: *const TsSystem,
    classes: *mut usize,
    stations: *mut usize,
    activities: *mut usize,
) -> TsStatus {
    guard(|| {
        let s = handle(sys, "sys")?;
        for (p, v) in [(classes, s.sys.num_classes()), (stations, s.sys.num_stations()), (activities, s.sys.tree.edges.len())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Fluid equilibrium `x*` (one entry per class), the radius `alpha0` and the
/// flow norm constant `c_g`.
///
/// # Safety
/// `x_star` must hold `len` doubles; `alpha0` and `c_g` may be null.
#[no_mangle]
pub unsafe extern "C" fn ts_system_fluid(
    sys: *const TsSystem,
    x_star: *mut f64,
    len: usize,
    alpha0: *mut f64,
    c_g: *mut f64,
) -> TsStatus {
    guard(|| {
        let s = handle(sys, "sys")?;
        write_out(&s.fluid.x_star, x_star, len, "x_star")?;
        if !alpha0.is_null() {
            *alpha0 = s.fluid.alpha0;
        }
        if !c_g.is_null() {
            *c_g = s.fluid.c_g;
        }
        Ok(())
    })
}

/// Activity endpoints in internal order, as zero-based class and station
/// indices.
///
/// # Safety
/// `classes` and `stations` must each hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn ts_system_activities(
    sys: *const TsSystem,
    classes: *mut usize,
    stations: *mut usize,
    len: usize,
) -> TsStatus {
    guard(|| {
        let s = handle(sys, "sys")?;
        let (ci, sj): (Vec<usize>, Vec<usize>) = s.sys.tree.edges.iter().copied().unzip();
        write_out(&ci, classes, len, "classes")?;
        write_out(&sj, stations, len, "stations")
    })
}

/// Solves for the activity flow with class margins `alpha` and station
/// margins `beta`, writing one value per activity.
///
/// # Safety
/// Buffers must hold the stated number of doubles.
#[no_mangle]
pub unsafe extern "C" fn ts_flow_solve(
    sys: *const TsSystem,
    alpha: *const f64,
    alpha_len: usize,
    beta: *const f64,
    beta_len: usize,
    psi: *mut f64,
    psi_len: usize,
) -> TsStatus {
    guard(|| {
        let s = handle(sys, "sys")?;
        let (a, b) = (slice(alpha, alpha_len, "alpha")?, slice(beta, beta_len, "beta")?);
        if a.len() != s.sys.num_classes() || b.len() != s.sys.num_stations() {
            return Err(Fail::Status(TsStatus::TsLengthMismatch, "margins do not match the system size".into()));
        }
        write_out(&g_solve(&s.sys.tree, a, b)?, psi, psi_len, "psi")
    })
}

/// Rounds `y` to integers with the same (integral) sum.
///
/// # Safety
/// `y` and `out` must each hold `len` entries.
#[no_mangle]
pub unsafe extern "C" fn ts_round(y: *const f64, len: usize, out: *mut i64) -> TsStatus {
    guard(|| {
        let r = round_preserving_sum(slice(y, len, "y")?)?;
        write_out(&r, out, len, "out")
    })
}

/// Solves the HJB equation for a cost and grid given as JSON.
///
/// # Safety
/// Strings must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ts_hjb_solve(
    sys: *const TsSystem,
    cost_json: *const c_char,
    grid_json: *const c_char,
    out: *mut *mut TsSolution,
) -> TsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let s = handle(sys, "sys")?;
        let cost = CostSpec::from_json_str(text(cost_json, "cost_json")?)?;
        cost.validate(s.sys.num_classes(), s.sys.num_stations())?;
        let grid = GridConfig::from_json_str(text(grid_json, "grid_json")?)?;
        let report = solve_hjb(&DriftData::new(&s.sys, &s.fluid), &cost, s.sys.spec.gamma, &grid)?;
        *out = Box::into_raw(Box::new(TsSolution { report, cost }));
        Ok(())
    })
}

/// # Safety
/// `sol` must come from [`ts_hjb_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ts_solution_free(sol: *mut TsSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Interpolated value at scaled state `x`, plus the final residual and
/// number of grid nodes.
///
/// # Safety
/// `x` must hold `len` doubles; `residual` and `nodes` may be null.
#[no_mangle]
pub unsafe extern "C" fn ts_solution_value(
    sol: *const TsSolution,
    x: *const f64,
    len: usize,
    value: *mut f64,
    residual: *mut f64,
    nodes: *mut usize,
) -> TsStatus {
    guard(|| {
        let s = handle(sol, "sol")?;
        let field = &s.report.value;
        let x = slice(x, len, "x")?;
        if x.len() != field.grid.dim() {
            return Err(Fail::Status(TsStatus::TsLengthMismatch, "x does not match the grid dimension".into()));
        }
        if value.is_null() {
            return Err(null("value"));
        }
        *value = field.value_at(x);
        if !residual.is_null() {
            *residual = field.residual;
        }
        if !nodes.is_null() {
            *nodes = field.grid.len();
        }
        Ok(())
    })
}

/// Simulates replication `rep` of `policy` ("pstar", "pprime", "ppp",
/// "priority" or "fifo") at scale `n`, started from scaled state `x`.
///
/// The cost and the tracked policy come from `sol`. A non-positive
/// `horizon` is rejected.
///
/// # Safety
/// `policy` must be NUL-terminated, `x` must hold `len` doubles and `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn ts_simulate(
    sys: *const TsSystem,
    sol: *const TsSolution,
    policy: *const c_char,
    n: u32,
    horizon: f64,
    seed: u64,
    rep: u64,
    x: *const f64,
    len: usize,
    out: *mut TsRunSummary,
) -> TsStatus {
    guard(|| {
        let s = handle(sys, "sys")?;
        let sol = handle(sol, "sol")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let kind: PolicyKind = text(policy, "policy")?.parse()?;
        if !(horizon > 0.0) {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")).into());
        }
        let x = slice(x, len, "x")?;
        if x.len() != s.sys.num_classes() {
            return Err(Fail::Status(TsStatus::TsLengthMismatch, "x needs one entry per class".into()));
        }
        let table = &sol.report.policy;
        let mut model = SimModel::new(
            s.sys.clone(),
            s.fluid.clone(),
            sol.cost.clone(),
            MarkovPolicy::HStar { table: table.clone() },
        );
        if kind == PolicyKind::Ppp {
            model = model.with_smooth(mollify_policy(table, DEFAULT_EPSILON)?);
        }
        let cfg = SimConfig::new(n, horizon, seed, kind, plan_initial_conditions(x, &s.fluid, n)?);
        let r = Simulator::new(&model, cfg, rep)?.run()?;
        *out = TsRunSummary {
            cost: r.cost,
            sup_mhat: r.sup_mhat,
            sup_j: r.sup_j,
            sup_lambda: r.sup_lambda,
            events: r.events,
            preemptions: r.preemptions,
            reconstruction_error: r.reconstruction_error,
            identity_error: r.identity_error,
        };
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_library_error_has_its_own_code() {
        let samples = [
            Error::CycleDetected { class: 0, station: 0 },
            Error::Disconnected { components: 2 },
            Error::RateEdgeMismatch { class: 0, station: 0 },
            Error::NonpositiveRate { field: "mu", index: 0, value: 0.0 },
            Error::InvalidSystem(String::new()),
            Error::NotCriticallyLoaded { residual: 1.0 },
            Error::NonBasicActivity { class: 0, station: 0, value: 0.0 },
            Error::NegativeAllocation { class: 0, station: 0, value: -1.0 },
            Error::MarginMismatch { alpha_sum: 0.0, beta_sum: 1.0 },
            Error::NegativeComponent { index: 0, value: -1.0 },
            Error::MalformedState(String::new()),
            Error::HypothesisViolated(String::new()),
            Error::GridTooSmall { change: 1.0 },
            Error::NoConvergence { iterations: 1, residual: 1.0 },
            Error::EmptyNeighborhood,
            Error::StepTooLarge { lipschitz: 1.0, dt: 1.0 },
            Error::InfeasibleRearrangement { time: 0.0, edge: 0 },
            Error::InvariantBroken { time: 0.0, detail: String::new() },
            Error::NegativePopulation { class: 0, n: 1 },
            Error::InvalidConfig(String::new()),
            Error::IoFailure(String::new()),
            Error::Parse(String::new()),
        ];
        for (k, e) in samples.iter().enumerate() {
            assert_eq!(TsStatus::from(e) as i32, 100 + k as i32, "{e:?}");
        }
    }

    #[test]
    fn panics_are_reported_not_propagated() {
        assert_eq!(guard(|| panic!("boom")), TsStatus::TsPanic);
        let msg = unsafe { CStr::from_ptr(ts_last_error()) };
        assert!(msg.to_str().unwrap().contains("panic"));
    }
}
