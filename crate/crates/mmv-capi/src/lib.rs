//! C ABI over the core toolkit: opaque handles, integer status codes, and a
//! thread-local last-error message. The generated header lands in
//! `include/mmv.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::io::BufReader;
use std::path::Path;

use mmv_core::engine::{simulate, SimMode};
use mmv_core::measure::{
    w2_distance, weighted_tv_distance, BinningPolicy, EmpiricalMeasure, WeightFunction,
};
use mmv_core::model::{check_dissipativity, check_measure_lipschitz, ModelConfig, ProbePlan};
use mmv_core::{MmvError, ModelSpec};

/// Status code of every fallible call; 0 is success.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum MmvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    RuntimeError = 3,
    Utf8Error = 4,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl AsRef<str>) {
    let c = CString::new(msg.as_ref().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &MmvError) -> MmvStatus {
    match err {
        MmvError::InvalidConfig(_)
        | MmvError::Precondition(_)
        | MmvError::DimensionMismatch { .. }
        | MmvError::MissingParameter(_)
        | MmvError::UnknownBuiltin(_) => MmvStatus::InvalidArgument,
        _ => MmvStatus::RuntimeError,
    }
}

fn fail(err: MmvError) -> MmvStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

/// Opaque weighted empirical measure.
pub struct MmvMeasure(EmpiricalMeasure);

/// Opaque model (coefficients + regularity metadata).
pub struct MmvModel(ModelSpec);

unsafe fn cstr<'a>(p: *const c_char) -> Result<&'a str, MmvStatus> {
    if p.is_null() {
        set_error("null pointer argument");
        return Err(MmvStatus::NullPointer);
    }
    unsafe { CStr::from_ptr(p) }.to_str().map_err(|_| {
        set_error("argument is not valid UTF-8");
        MmvStatus::Utf8Error
    })
}

/// Returns the last error message of this thread as a newly allocated
/// string, or NULL if none; free with `mmv_string_free`.
#[no_mangle]
pub extern "C" fn mmv_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(c) => c.clone().into_raw(),
        None => std::ptr::null_mut(),
    })
}

/// Frees a string returned by this library. NULL is a no-op.
#[no_mangle]
pub extern "C" fn mmv_string_free(s: *mut c_char) {
    if !s.is_null() {
        unsafe { drop(CString::from_raw(s)) };
    }
}

// ---------------------------------------------------------------------------
// Measures
// ---------------------------------------------------------------------------

/// Builds an equally weighted measure from a flat row-major atom array of
/// `len` points in dimension `dim`. Returns NULL on error.
///
/// # Safety
/// `atoms` must point to `len * dim` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn mmv_measure_from_points(
    dim: usize,
    atoms: *const f64,
    len: usize,
) -> *mut MmvMeasure {
    if atoms.is_null() {
        set_error("null pointer argument");
        return std::ptr::null_mut();
    }
    let flat = unsafe { std::slice::from_raw_parts(atoms, len * dim) }.to_vec();
    match EmpiricalMeasure::equal_weights(dim, flat) {
        Ok(m) => Box::into_raw(Box::new(MmvMeasure(m))),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Loads a measure from the CSV format written by `mmv_measure_to_csv`.
/// Returns NULL on error.
///
/// # Safety
/// `path` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mmv_measure_from_csv(path: *const c_char) -> *mut MmvMeasure {
    let path = match unsafe { cstr(path) } {
        Ok(p) => p,
        Err(_) => return std::ptr::null_mut(),
    };
    let file = match std::fs::File::open(Path::new(path)) {
        Ok(f) => f,
        Err(e) => {
            set_error(e.to_string());
            return std::ptr::null_mut();
        }
    };
    match EmpiricalMeasure::read_csv(BufReader::new(file)) {
        Ok(m) => Box::into_raw(Box::new(MmvMeasure(m))),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Writes a measure as CSV (`w,x1..xd` rows).
///
/// # Safety
/// `m` must be a live handle; `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mmv_measure_to_csv(m: *const MmvMeasure, path: *const c_char) -> MmvStatus {
    let path = match unsafe { cstr(path) } {
        Ok(p) => p,
        Err(s) => return s,
    };
    let Some(m) = (unsafe { m.as_ref() }) else {
        set_error("null measure handle");
        return MmvStatus::NullPointer;
    };
    let mut file = match std::fs::File::create(Path::new(path)) {
        Ok(f) => f,
        Err(e) => {
            set_error(e.to_string());
            return MmvStatus::RuntimeError;
        }
    };
    match m.0.write_csv(&mut file) {
        Ok(()) => MmvStatus::Ok,
        Err(e) => fail(e),
    }
}

/// Number of atoms.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmv_measure_len(m: *const MmvMeasure) -> usize {
    unsafe { m.as_ref() }.map_or(0, |m| m.0.len())
}

/// Dimension of the atoms.
///
/// # Safety
/// `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mmv_measure_dim(m: *const MmvMeasure) -> usize {
    unsafe { m.as_ref() }.map_or(0, |m| m.0.dim())
}

/// Writes the barycenter into `out` (length = dimension).
///
/// # Safety
/// `m` must be a live handle; `out` must hold `mmv_measure_dim(m)` doubles.
#[no_mangle]
pub unsafe extern "C" fn mmv_measure_mean(m: *const MmvMeasure, out: *mut f64) -> MmvStatus {
    let Some(m) = (unsafe { m.as_ref() }) else {
        set_error("null measure handle");
        return MmvStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output pointer");
        return MmvStatus::NullPointer;
    }
    let mean = m.0.mean();
    unsafe { std::ptr::copy_nonoverlapping(mean.as_ptr(), out, mean.len()) };
    MmvStatus::Ok
}

/// Frees a measure handle. NULL is a no-op.
///
/// # Safety
/// `m` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn mmv_measure_free(m: *mut MmvMeasure) {
    if !m.is_null() {
        unsafe { drop(Box::from_raw(m)) };
    }
}

/// 2-Wasserstein distance between two measures, written to `out`.
///
/// # Safety
/// `a`, `b` must be live handles; `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn mmv_w2(
    a: *const MmvMeasure,
    b: *const MmvMeasure,
    out: *mut f64,
) -> MmvStatus {
    let (Some(a), Some(b)) = (unsafe { a.as_ref() }, unsafe { b.as_ref() }) else {
        set_error("null measure handle");
        return MmvStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output pointer");
        return MmvStatus::NullPointer;
    }
    match w2_distance(&a.0, &b.0) {
        Ok(d) => {
            unsafe { *out = d };
            MmvStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Weighted total-variation distance with weight `1 + |y|^p`, written to
/// `out`.
///
/// # Safety
/// `a`, `b` must be live handles; `out` a writable double.
#[no_mangle]
pub unsafe extern "C" fn mmv_rho_v(
    a: *const MmvMeasure,
    b: *const MmvMeasure,
    p: f64,
    out: *mut f64,
) -> MmvStatus {
    let (Some(a), Some(b)) = (unsafe { a.as_ref() }, unsafe { b.as_ref() }) else {
        set_error("null measure handle");
        return MmvStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output pointer");
        return MmvStatus::NullPointer;
    }
    let v = match WeightFunction::new(p) {
        Ok(v) => v,
        Err(e) => return fail(e),
    };
    match weighted_tv_distance(&a.0, &b.0, &v, &BinningPolicy::default()) {
        Ok(d) => {
            unsafe { *out = d };
            MmvStatus::Ok
        }
        Err(e) => fail(e),
    }
}

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

/// Builds a model from the JSON `model` block (builtin reference or explicit
/// coefficient table). Returns NULL on error.
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mmv_model_from_json(json: *const c_char) -> *mut MmvModel {
    let json = match unsafe { cstr(json) } {
        Ok(j) => j,
        Err(_) => return std::ptr::null_mut(),
    };
    let cfg: ModelConfig = match serde_json::from_str(json) {
        Ok(c) => c,
        Err(e) => {
            set_error(e.to_string());
            return std::ptr::null_mut();
        }
    };
    match cfg.build() {
        Ok(m) => Box::into_raw(Box::new(MmvModel(m))),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

/// Runs the model assumption checks; `out_pass` receives 1 if all pass.
///
/// # Safety
/// `m` must be a live handle; `out_pass` a writable int.
#[no_mangle]
pub unsafe extern "C" fn mmv_model_check(m: *const MmvModel, out_pass: *mut i32) -> MmvStatus {
    let Some(m) = (unsafe { m.as_ref() }) else {
        set_error("null model handle");
        return MmvStatus::NullPointer;
    };
    if out_pass.is_null() {
        set_error("null output pointer");
        return MmvStatus::NullPointer;
    }
    let probe = ProbePlan::default();
    let diss = match check_dissipativity(&m.0, &probe, &[2.0, m.0.meta.p]) {
        Ok(d) => d,
        Err(e) => return fail(e),
    };
    let lip = match check_measure_lipschitz(&m.0, &probe, 0.2) {
        Ok(l) => l,
        Err(e) => return fail(e),
    };
    let pass = diss.iter().all(|r| r.pass) && lip.pass;
    unsafe { *out_pass = pass as i32 };
    MmvStatus::Ok
}

/// Frees a model handle. NULL is a no-op.
///
/// # Safety
/// `m` must be NULL or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn mmv_model_free(m: *mut MmvModel) {
    if !m.is_null() {
        unsafe { drop(Box::from_raw(m)) };
    }
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

/// Runs a coupled simulation described by a full run-configuration JSON
/// string and returns the terminal slow law as a new measure handle; NULL on
/// error.
///
/// # Safety
/// `config_json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mmv_simulate_terminal(config_json: *const c_char) -> *mut MmvMeasure {
    let json = match unsafe { cstr(config_json) } {
        Ok(j) => j,
        Err(_) => return std::ptr::null_mut(),
    };
    let mut cfg: mmv_core::config::RunConfig = match serde_json::from_str(json) {
        Ok(c) => c,
        Err(e) => {
            set_error(e.to_string());
            return std::ptr::null_mut();
        }
    };
    let model = match cfg.finalize() {
        Ok(m) => m,
        Err(e) => {
            set_error(e.to_string());
            return std::ptr::null_mut();
        }
    };
    match simulate(&model, &cfg.sim, SimMode::Coupled, &[cfg.sim.t_end]) {
        Ok(traj) => Box::into_raw(Box::new(MmvMeasure(traj.terminal_slow().clone()))),
        Err(e) => {
            set_error(e.to_string());
            std::ptr::null_mut()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    fn own_error() -> String {
        let p = mmv_last_error_message();
        assert!(!p.is_null());
        let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
        mmv_string_free(p);
        s
    }

    #[test]
    fn measure_roundtrip_and_distances() {
        let atoms = [0.0f64, 1.0, 2.0, 3.0];
        let a = unsafe { mmv_measure_from_points(1, atoms.as_ptr(), 4) };
        assert!(!a.is_null());
        assert_eq!(unsafe { mmv_measure_len(a) }, 4);
        assert_eq!(unsafe { mmv_measure_dim(a) }, 1);
        let mut mean = 0.0f64;
        assert_eq!(unsafe { mmv_measure_mean(a, &mut mean) }, MmvStatus::Ok);
        assert!((mean - 1.5).abs() < 1e-12);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("m.csv").to_str().unwrap()).unwrap();
        assert_eq!(unsafe { mmv_measure_to_csv(a, path.as_ptr()) }, MmvStatus::Ok);
        let b = unsafe { mmv_measure_from_csv(path.as_ptr()) };
        assert!(!b.is_null());

        let mut d = f64::NAN;
        assert_eq!(unsafe { mmv_w2(a, b, &mut d) }, MmvStatus::Ok);
        assert!(d.abs() < 1e-12, "w2 {d}");
        assert_eq!(unsafe { mmv_rho_v(a, b, 2.0, &mut d) }, MmvStatus::Ok);
        assert!(d.abs() < 1e-12, "rho_v {d}");

        unsafe { mmv_measure_free(a) };
        unsafe { mmv_measure_free(b) };
    }

    #[test]
    fn null_and_error_paths() {
        let mut d = 0.0f64;
        assert_eq!(
            unsafe { mmv_w2(std::ptr::null(), std::ptr::null(), &mut d) },
            MmvStatus::NullPointer
        );
        assert!(own_error().contains("null"));

        let bad = CString::new("{\"builtin\": \"nope\"}").unwrap();
        let m = unsafe { mmv_model_from_json(bad.as_ptr()) };
        assert!(m.is_null());
        assert!(own_error().contains("nope"));
    }

    #[test]
    fn model_check_and_simulate() {
        let model_json = CString::new(
            r#"{"builtin": "linear_ou", "params": {"a": 2.0, "c": 1.0, "k0": 0.5,
                "g0": 1.4142135623730951, "b0": 1.0, "b1": 1.0, "b2": 0.0, "s0": 1.0}}"#,
        )
        .unwrap();
        let m = unsafe { mmv_model_from_json(model_json.as_ptr()) };
        assert!(!m.is_null());
        let mut pass = 0i32;
        assert_eq!(unsafe { mmv_model_check(m, &mut pass) }, MmvStatus::Ok);
        assert_eq!(pass, 1);
        unsafe { mmv_model_free(m) };

        let cfg = CString::new(
            r#"{
  "model": {"builtin": "linear_ou", "params": {"a": 2.0, "c": 1.0, "k0": 0.5,
            "g0": 1.4142135623730951, "b0": 1.0, "b1": 1.0, "b2": 0.0, "s0": 1.0}},
  "sim": {"epsilon": 0.1, "h_slow": 0.02, "N": 32, "T": 0.2, "seed": 1,
          "initial_slow": {"kind": "point", "v": 1.0},
          "initial_fast": {"kind": "point", "v": 0.0}},
  "experiment": {"name": "simulate"}
}"#,
        )
        .unwrap();
        let terminal = unsafe { mmv_simulate_terminal(cfg.as_ptr()) };
        assert!(!terminal.is_null());
        assert_eq!(unsafe { mmv_measure_len(terminal) }, 32);
        unsafe { mmv_measure_free(terminal) };
    }
}
