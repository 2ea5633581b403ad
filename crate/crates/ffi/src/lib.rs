//! C ABI over the `fpsim` simulator.
//!
//! Every fallible function returns an [`FpsimStatus`] and writes results
//! through out-pointers. On failure a message is kept per thread and can be
//! read with [`fpsim_last_error_message`]. Strings returned by this library
//! must be released with [`fpsim_string_free`], problems with
//! [`fpsim_problem_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fpsim::evolution::{EvolutionConfig, Evolver, FailurePolicy, MeasurementMode};
use fpsim::interpolation::{
    make_grover_instance, make_random_instance_seeded, make_two_level_instance, InterpolationProblem,
};
use fpsim::selective::{AncillaConfig, Boost, OracleMode};
use fpsim::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidUtf8 = 3,
    Numerical = 4,
    Budget = 5,
    Parse = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpsimOracleMode {
    Exact = 0,
    Pea = 1,
    PeaBoosted = 2,
}

/// Run parameters. `ancilla_qubits`, `boost_q` and `boost_q_prime` are read
/// only by the modes that need them. `max_restarts = 0` means a failed step
/// ends the run.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct FpsimRunConfig {
    pub m: usize,
    pub fpqs_level: u32,
    pub oracle_mode: FpsimOracleMode,
    pub ancilla_qubits: u32,
    pub boost_q: u64,
    pub boost_q_prime: u64,
    pub anchor_repeats: usize,
    pub max_restarts: u32,
    pub seed: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FpsimRunSummary {
    pub success: bool,
    pub completed: bool,
    pub final_fidelity: f64,
    pub u_applications: u64,
    pub oracle_queries: u64,
    pub measurements: u64,
    pub pea_runs: u64,
    pub restarts: u64,
}

/// Opaque problem handle.
pub struct FpsimProblem {
    inner: InterpolationProblem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> FpsimStatus {
    match e {
        Error::DimensionMismatch { .. } | Error::OutOfRange { .. } | Error::Precondition(_) => {
            FpsimStatus::InvalidArgument
        }
        Error::NotHermitian(_)
        | Error::NotUnitary(_)
        | Error::NotNormalized(_)
        | Error::NoConvergence
        | Error::DegenerateGround { .. }
        | Error::InvalidProjectors(_)
        | Error::AnchorEstimation(_) => FpsimStatus::Numerical,
        Error::RejectionBudget(_) => FpsimStatus::Budget,
        Error::Parse(_) | Error::Json(_) => FpsimStatus::Parse,
        Error::Io(_) => FpsimStatus::Io,
    }
}

enum Fail {
    Status(FpsimStatus, String),
    Sim(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Sim(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FpsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FpsimStatus::Ok,
        Ok(Err(Fail::Status(s, msg))) => {
            set_last_error(msg);
            s
        }
        Ok(Err(Fail::Sim(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            FpsimStatus::Panic
        }
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(FpsimStatus::NullPointer, format!("{what} is null"))
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

unsafe fn problem_ref<'a>(p: *const FpsimProblem) -> Result<&'a InterpolationProblem, Fail> {
    p.as_ref().map(|p| &p.inner).ok_or_else(|| null("problem"))
}

unsafe fn out_problem(out: *mut *mut FpsimProblem, p: InterpolationProblem) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(Box::into_raw(Box::new(FpsimProblem { inner: p })));
    Ok(())
}

unsafe fn out_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    let c = CString::new(s).map_err(|e| Fail::Status(FpsimStatus::InvalidUtf8, e.to_string()))?;
    out.write(c.into_raw());
    Ok(())
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn fpsim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Static, NUL-terminated version string.
#[no_mangle]
pub extern "C" fn fpsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fpsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Grover search over `2^n_qubits` items; `seed` picks the marked item.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fpsim_problem_grover(n_qubits: u32, seed: u64, out: *mut *mut FpsimProblem) -> FpsimStatus {
    guard(|| out_problem(out, make_grover_instance(n_qubits, seed)?))
}

/// Random GUE pair of dimension `dim` with minimum gap at least `min_gap_floor`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fpsim_problem_random(
    dim: usize,
    min_gap_floor: f64,
    seed: u64,
    out: *mut *mut FpsimProblem,
) -> FpsimStatus {
    guard(|| out_problem(out, make_random_instance_seeded(dim, min_gap_floor, seed)?))
}

/// Two-level avoided crossing with minimum gap `gap`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fpsim_problem_two_level(gap: f64, out: *mut *mut FpsimProblem) -> FpsimStatus {
    guard(|| out_problem(out, make_two_level_instance(gap)?))
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fpsim_problem_from_json(json: *const c_char, out: *mut *mut FpsimProblem) -> FpsimStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail::Status(FpsimStatus::InvalidUtf8, e.to_string()))?;
        out_problem(out, InterpolationProblem::from_json(text)?)
    })
}

/// Serializes a problem; free the result with [`fpsim_string_free`].
///
/// # Safety
/// `p` must be a live problem handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fpsim_problem_to_json(p: *const FpsimProblem, out: *mut *mut c_char) -> FpsimStatus {
    guard(|| out_string(out, problem_ref(p)?.to_json()?))
}

/// # Safety
/// `p` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fpsim_problem_free(p: *mut FpsimProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// # Safety
/// `p` must be a live problem handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fpsim_problem_dim(p: *const FpsimProblem, out: *mut usize) -> FpsimStatus {
    guard(|| write(out, problem_ref(p)?.dim()))
}

/// `Gamma = |H0| + |H1|`.
///
/// # Safety
/// `p` must be a live problem handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fpsim_problem_gamma(p: *const FpsimProblem, out: *mut f64) -> FpsimStatus {
    guard(|| write(out, problem_ref(p)?.gamma()))
}

/// # Safety
/// `p` must be a live problem handle; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fpsim_problem_min_gap(p: *const FpsimProblem, out: *mut f64) -> FpsimStatus {
    guard(|| write(out, problem_ref(p)?.min_gap()))
}

/// Exact oracle, level 1, no restarts, default anchor repeats.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fpsim_run_config_default(m: usize, seed: u64, out: *mut FpsimRunConfig) -> FpsimStatus {
    guard(|| {
        write(
            out,
            FpsimRunConfig {
                m,
                fpqs_level: 1,
                oracle_mode: FpsimOracleMode::Exact,
                ancilla_qubits: 10,
                boost_q: 2,
                boost_q_prime: 2,
                anchor_repeats: fpsim::evolution::DEFAULT_ANCHOR_REPEATS,
                max_restarts: 0,
                seed,
            },
        )
    })
}

fn to_config(c: &FpsimRunConfig, problem: &InterpolationProblem) -> Result<EvolutionConfig, Fail> {
    let oracle_mode = match c.oracle_mode {
        FpsimOracleMode::Exact => OracleMode::Exact,
        FpsimOracleMode::Pea => OracleMode::Pea,
        FpsimOracleMode::PeaBoosted => OracleMode::PeaBoosted,
    };
    let mut cfg = EvolutionConfig::exact(c.m, c.fpqs_level, c.seed);
    cfg.oracle_mode = oracle_mode;
    cfg.anchor_repeats = c.anchor_repeats;
    cfg.failure_policy = if c.max_restarts == 0 {
        FailurePolicy::Strict
    } else {
        FailurePolicy::Restart { max: c.max_restarts }
    };
    if oracle_mode == OracleMode::PeaBoosted {
        cfg.boost = Some(Boost {
            q: c.boost_q,
            q_prime: c.boost_q_prime,
        });
    }
    cfg.measurement_mode = MeasurementMode::ExactProjector;
    if cfg.uses_pea() {
        cfg.ancilla = Some(AncillaConfig::with_default_time(c.ancilla_qubits, problem.gamma())?);
    }
    Ok(cfg)
}

/// One seeded run of the adiabatic schedule.
///
/// # Safety
/// `p` must be a live problem handle, `config` readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fpsim_run(
    p: *const FpsimProblem,
    config: *const FpsimRunConfig,
    out: *mut FpsimRunSummary,
) -> FpsimStatus {
    guard(|| {
        let problem = problem_ref(p)?;
        let c = config.as_ref().ok_or_else(|| null("config"))?;
        let cfg = to_config(c, problem)?;
        cfg.validate(problem)?;
        let r = Evolver::new(problem, &cfg)?.run_seeded(c.seed)?;
        write(
            out,
            FpsimRunSummary {
                success: r.success,
                completed: r.completed,
                final_fidelity: r.final_fidelity,
                u_applications: r.ledger.u_applications,
                oracle_queries: r.ledger.oracle_queries,
                measurements: r.ledger.measurements,
                pea_runs: r.ledger.pea_runs,
                restarts: r.ledger.restarts,
            },
        )
    })
}

/// Token string of `V_level` in application order (`A`, `B`, `a`, `b`).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn fpsim_sequence(level: u32, out: *mut *mut c_char) -> FpsimStatus {
    guard(|| out_string(out, fpsim::fpqs::build_sequence(level)?.to_string()))
}
