//! C interface to `delaylq`.
//!
//! Objects are opaque handles created by `dlq_*_new`/`dlq_*_from_*` and
//! released by the matching `dlq_*_free`. Every fallible call returns a
//! [`DlqStatus`]; the message of the last failure on the calling thread is
//! available from [`dlq_last_error`]. Matrices cross the boundary as
//! row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use delaylq::config::{Scenario, ScenarioConfig};
use delaylq::grid::build_grid;
use delaylq::pipeline::{certify, synthesize, Certificate, CertifyOptions, GainFile, Provenance, Synthesis};
use delaylq::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlqStatus {
    DlqOk = 0,
    DlqErrNull = 1,
    DlqErrUtf8 = 2,
    DlqErrConfig = 3,
    /// Certificate not found within the iteration budget.
    DlqErrInfeasible = 4,
    /// Riccati iteration did not converge.
    DlqErrNotConverged = 5,
    DlqErrDimension = 6,
    DlqErrBufferTooSmall = 7,
    DlqErrInvalidArgument = 8,
    DlqErrInternal = 9,
    DlqErrPanic = 10,
}

/// Which LMI certificate [`dlq_certify`] checks.
pub const DLQ_CERT_STABILIZABILITY: i32 = 0;
pub const DLQ_CERT_DETECTABILITY: i32 = 1;
pub const DLQ_CERT_DELAY_INDEPENDENT: i32 = 2;

/// Parsed scenario (opaque).
pub struct DlqScenario {
    inner: Scenario,
}

/// Converged Riccati synthesis (opaque).
pub struct DlqSynthesis {
    inner: Synthesis,
    hash: String,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).expect("nul removed"));
}

fn status_of(e: &Error) -> DlqStatus {
    match e {
        Error::Config(_) | Error::Json(_) => DlqStatus::DlqErrConfig,
        Error::Dimension(_) => DlqStatus::DlqErrDimension,
        Error::Domain { .. } | Error::Precondition(_) | Error::Resource { .. } => DlqStatus::DlqErrInvalidArgument,
        _ => DlqStatus::DlqErrInternal,
    }
}

fn fail(status: DlqStatus, msg: impl Into<String>) -> DlqStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> DlqStatus) -> DlqStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == DlqStatus::DlqOk {
                set_error("");
            }
            s
        }
        Err(_) => fail(DlqStatus::DlqErrPanic, "internal panic"),
    }
}

macro_rules! try_dlq {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(err) => return fail(status_of(&err), err.to_string()),
        }
    };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dlq_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next `dlq_*` call on the same thread.
#[no_mangle]
pub extern "C" fn dlq_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a scenario JSON document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dlq_scenario_from_json(json: *const c_char, out: *mut *mut DlqScenario) -> DlqStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(DlqStatus::DlqErrNull, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(DlqStatus::DlqErrUtf8, "scenario is not valid UTF-8");
        };
        let cfg = try_dlq!(ScenarioConfig::from_json_str(text));
        let inner = try_dlq!(cfg.build());
        *out = Box::into_raw(Box::new(DlqScenario { inner }));
        DlqStatus::DlqOk
    })
}

/// Releases a scenario; null is ignored.
///
/// # Safety
/// `s` must come from [`dlq_scenario_from_json`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlq_scenario_free(s: *mut DlqScenario) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// State dimension `n`, input dimension `m` and delay order `p`.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dlq_scenario_dims(
    s: *const DlqScenario,
    n: *mut usize,
    m: *mut usize,
    p: *mut usize,
) -> DlqStatus {
    guard(|| {
        if s.is_null() || n.is_null() || m.is_null() || p.is_null() {
            return fail(DlqStatus::DlqErrNull, "null argument");
        }
        let sc = &(*s).inner;
        *n = sc.plant().state_dim();
        *m = sc.plant().input_dim();
        *p = sc.kernel.order();
        DlqStatus::DlqOk
    })
}

/// Writes `A(τ)` (`(n+m)×(n+m)`) and `B(τ)` (`(n+m)×m`) row-major.
///
/// # Safety
/// `a_out` and `b_out` must hold `a_len` and `b_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlq_discretize(
    s: *const DlqScenario,
    tau: f64,
    a_out: *mut f64,
    a_len: usize,
    b_out: *mut f64,
    b_len: usize,
) -> DlqStatus {
    guard(|| {
        if s.is_null() || a_out.is_null() || b_out.is_null() {
            return fail(DlqStatus::DlqErrNull, "null argument");
        }
        let plant = (*s).inner.plant();
        let (a, b) = try_dlq!(delaylq::plant::assemble_jump_matrices(plant, &[tau]));
        if a_len < a.len() || b_len < b.len() {
            return fail(
                DlqStatus::DlqErrBufferTooSmall,
                format!("need {} and {} doubles", a.len(), b.len()),
            );
        }
        write_row_major(&a, a_out);
        write_row_major(&b, b_out);
        DlqStatus::DlqOk
    })
}

unsafe fn write_row_major(m: &nalgebra::DMatrix<f64>, out: *mut f64) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        for j in 0..cols {
            *out.add(i * cols + j) = m[(i, j)];
        }
    }
}

/// Runs one certificate on the `r`-grid with the scenario's settings.
/// `feasible` receives 1 or 0 and `margin` the rechecked margin; a solve that
/// ran but found no certificate returns [`DlqStatus::DlqErrInfeasible`].
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dlq_certify(
    s: *const DlqScenario,
    which: i32,
    r: usize,
    feasible: *mut i32,
    margin: *mut f64,
) -> DlqStatus {
    guard(|| {
        if s.is_null() || feasible.is_null() || margin.is_null() {
            return fail(DlqStatus::DlqErrNull, "null argument");
        }
        let cert = match which {
            DLQ_CERT_STABILIZABILITY => Certificate::Stabilizability,
            DLQ_CERT_DETECTABILITY => Certificate::Detectability,
            DLQ_CERT_DELAY_INDEPENDENT => Certificate::DelayIndependent,
            _ => return fail(DlqStatus::DlqErrInvalidArgument, format!("unknown certificate {which}")),
        };
        let sc = &(*s).inner;
        let opts = CertifyOptions {
            kappa: sc.config.grid.kappa_settings(),
            epsilon: sc.config.solver.epsilon,
            solver: sc.config.solver.options(),
        };
        let run = try_dlq!(certify(&sc.maps, sc.kernel.clone(), r, cert, &opts));
        *feasible = i32::from(run.is_feasible());
        *margin = run.margin;
        if run.is_feasible() {
            DlqStatus::DlqOk
        } else {
            fail(DlqStatus::DlqErrInfeasible, format!("{}: {}", run.status, run.message))
        }
    })
}

/// Riccati synthesis on the `r`-grid (`r = 0` uses the scenario's value).
/// Non-convergence returns [`DlqStatus::DlqErrNotConverged`] and no handle.
///
/// # Safety
/// `s` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn dlq_synthesize(s: *const DlqScenario, r: usize, out: *mut *mut DlqSynthesis) -> DlqStatus {
    guard(|| {
        if s.is_null() || out.is_null() {
            return fail(DlqStatus::DlqErrNull, "null argument");
        }
        *out = ptr::null_mut();
        let sc = &(*s).inner;
        let r = if r == 0 { sc.config.grid.r } else { r };
        let grid = try_dlq!(build_grid(sc.kernel.clone(), r));
        let syn = try_dlq!(synthesize(
            &sc.maps,
            &grid,
            sc.config.riccati,
            Some(&sc.config.simulation.initial)
        ));
        if !syn.report.converged() {
            return fail(DlqStatus::DlqErrNotConverged, syn.report.diagnostic());
        }
        *out = Box::into_raw(Box::new(DlqSynthesis {
            inner: syn,
            hash: sc.config.hash(),
        }));
        DlqStatus::DlqOk
    })
}

/// Releases a synthesis; null is ignored.
///
/// # Safety
/// `s` must come from [`dlq_synthesize`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn dlq_synthesis_free(s: *mut DlqSynthesis) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of boxes, Riccati iterations, closed-loop surrogate and the
/// predicted optimal cost for the scenario's initial distribution.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn dlq_synthesis_info(
    s: *const DlqSynthesis,
    boxes: *mut usize,
    iterations: *mut usize,
    surrogate: *mut f64,
    predicted_cost: *mut f64,
) -> DlqStatus {
    guard(|| {
        if s.is_null() || boxes.is_null() || iterations.is_null() || surrogate.is_null() || predicted_cost.is_null() {
            return fail(DlqStatus::DlqErrNull, "null argument");
        }
        let syn = &(*s).inner;
        *boxes = syn.report.solution.len();
        *iterations = syn.report.iterations;
        *surrogate = syn.report.surrogate.map_or(f64::NAN, |r| r.estimate);
        *predicted_cost = syn.predicted_cost.unwrap_or(f64::NAN);
        DlqStatus::DlqOk
    })
}

/// Original-coordinate gain `K_orig(φ)` (`m×(n+m)`, row-major) of the box containing `φ`.
///
/// # Safety
/// `phi` must hold `phi_len` doubles and `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlq_synthesis_gain(
    s: *const DlqSynthesis,
    phi: *const f64,
    phi_len: usize,
    out: *mut f64,
    out_len: usize,
) -> DlqStatus {
    guard(|| {
        if s.is_null() || phi.is_null() || out.is_null() {
            return fail(DlqStatus::DlqErrNull, "null argument");
        }
        let Some(gain) = &(*s).inner.gain_original else {
            return fail(DlqStatus::DlqErrInternal, "synthesis carries no gain");
        };
        let phi = std::slice::from_raw_parts(phi, phi_len);
        let k = try_dlq!(gain.lookup(phi));
        if out_len < k.len() {
            return fail(DlqStatus::DlqErrBufferTooSmall, format!("need {} doubles", k.len()));
        }
        write_row_major(k, out);
        DlqStatus::DlqOk
    })
}

/// Serializes the gain file (the format the `simulate` command reads) into
/// `buf` with a trailing NUL. `needed` receives the required size including
/// the NUL; call with `buf_len = 0` to query it.
///
/// # Safety
/// `buf` must hold `buf_len` bytes (may be null when `buf_len` is 0).
#[no_mangle]
pub unsafe extern "C" fn dlq_synthesis_to_json(
    s: *const DlqSynthesis,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> DlqStatus {
    guard(|| {
        if s.is_null() || needed.is_null() || (buf.is_null() && buf_len > 0) {
            return fail(DlqStatus::DlqErrNull, "null argument");
        }
        let syn = &*s;
        let file = try_dlq!(GainFile::from_synthesis(&syn.inner, Provenance::new(syn.hash.clone())));
        let text = try_dlq!(serde_json::to_string(&file).map_err(Error::from));
        *needed = text.len() + 1;
        if buf_len < text.len() + 1 {
            return fail(
                DlqStatus::DlqErrBufferTooSmall,
                format!("need {} bytes", text.len() + 1),
            );
        }
        ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
        *buf.add(text.len()) = 0;
        DlqStatus::DlqOk
    })
}
