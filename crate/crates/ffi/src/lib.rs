//! C ABI for fls-core.
//!
//! Every function returns an [`FlsStatus`]. On failure the message is kept per
//! thread and can be copied out with [`fls_last_error`]. Handles are opaque and
//! must be released with their matching `*_free` function. Joint vectors are
//! `dof + 1` doubles: the revolute angles followed by the virtual joint.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use fls_core::config::RunConfig;
use fls_core::ik::{solve_ik, IkProblem, IkSettings};
use fls_core::kinematics::{forward_kinematics, ChainModel, JointState};
use fls_core::phase::{detect_phases, feedback_force, ConstraintSet};
use fls_core::pipeline::run_pipeline;
use fls_core::scene::Arm;
use fls_core::trajectory::DemoRecord;
use fls_core::FlsError;
use nalgebra::Vector3;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    JointLimit = 3,
    NotConverged = 4,
    Io = 5,
    Parse = 6,
    Config = 7,
    Internal = 8,
}

/// Kinematic chain with a remote-center port.
pub struct FlsChain {
    chain: ChainModel,
    settings: IkSettings,
}

/// Depth bands read from a constraints file.
pub struct FlsConstraints {
    set: ConstraintSet,
}

/// Result of an IK solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FlsIkReport {
    pub residual_tip: f64,
    pub residual_port: f64,
    pub iterations: u32,
    pub converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &FlsError) -> FlsStatus {
    match e {
        FlsError::JointLimit { .. } => FlsStatus::JointLimit,
        FlsError::Io(_) => FlsStatus::Io,
        FlsError::Parse(_) => FlsStatus::Parse,
        FlsError::InvalidConfig(_) => FlsStatus::Config,
        FlsError::Diverged(_) => FlsStatus::NotConverged,
        FlsError::Dimension { .. } | FlsError::NonFinite(_) | FlsError::OutsideWorkspace | FlsError::InvalidInput(_) => {
            FlsStatus::InvalidArgument
        }
    }
}

struct Fail(FlsStatus, String);

impl From<FlsError> for Fail {
    fn from(e: FlsError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FlsStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FlsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FlsStatus::Ok
        }
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {m}"));
            FlsStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(FlsStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn vec3(p: *const f64, what: &str) -> Result<Vector3<f64>, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = std::slice::from_raw_parts(p, 3);
    Ok(Vector3::new(s[0], s[1], s[2]))
}

fn arm_arg(arm: u32) -> Result<Arm, Fail> {
    match arm {
        0 => Ok(Arm::Left),
        1 => Ok(Arm::Right),
        _ => Err(Fail(FlsStatus::InvalidArgument, format!("arm {arm} is not 0 or 1"))),
    }
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `cap` bytes. Returns the full message length excluding NUL.
///
/// # Safety
/// `buf` must be null or point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fls_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = e.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(e.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Built-in seven-joint chain with default IK settings.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fls_chain_new_synthetic(out: *mut *mut FlsChain) -> FlsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(FlsChain {
            chain: ChainModel::synthetic_7r(),
            settings: IkSettings::default(),
        }));
        Ok(())
    })
}

/// Chain described by a JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fls_chain_load(path: *const c_char, out: *mut *mut FlsChain) -> FlsStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let chain = ChainModel::load(&path)?;
        *out = Box::into_raw(Box::new(FlsChain {
            chain,
            settings: IkSettings::default(),
        }));
        Ok(())
    })
}

/// # Safety
/// `chain` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fls_chain_free(chain: *mut FlsChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of revolute joints; joint vectors hold one more value.
///
/// # Safety
/// `chain` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn fls_chain_dof(chain: *const FlsChain) -> usize {
    chain.as_ref().map_or(0, |c| c.chain.dof())
}

/// Overrides the IK tolerances (mm) and iteration cap.
///
/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fls_chain_set_ik_tolerance(
    chain: *mut FlsChain,
    tol_tip: f64,
    tol_port: f64,
    max_iters: u32,
) -> FlsStatus {
    guard(|| {
        let c = chain.as_mut().ok_or_else(|| null("chain"))?;
        if !(tol_tip > 0.0 && tol_port > 0.0) || max_iters == 0 {
            return Err(Fail(FlsStatus::InvalidArgument, "tolerances and max_iters must be positive".into()));
        }
        c.settings.tol_tip = tol_tip;
        c.settings.tol_port = tol_port;
        c.settings.max_iters = max_iters as usize;
        Ok(())
    })
}

unsafe fn joints_in(c: &FlsChain, q: *const f64) -> Result<JointState, Fail> {
    if q.is_null() {
        return Err(null("q"));
    }
    let s = std::slice::from_raw_parts(q, c.chain.dof() + 1);
    Ok(JointState::new(s[..c.chain.dof()].to_vec(), s[c.chain.dof()]))
}

/// Mid-range configuration, written to `q_out` (`dof + 1` doubles).
///
/// # Safety
/// `chain` must be live and `q_out` must hold `dof + 1` doubles.
#[no_mangle]
pub unsafe extern "C" fn fls_chain_mid_configuration(chain: *const FlsChain, q_out: *mut f64) -> FlsStatus {
    guard(|| {
        let c = chain.as_ref().ok_or_else(|| null("chain"))?;
        if q_out.is_null() {
            return Err(null("q_out"));
        }
        let q = c.chain.mid_configuration();
        let out = std::slice::from_raw_parts_mut(q_out, c.chain.dof() + 1);
        out[..c.chain.dof()].copy_from_slice(&q.theta);
        out[c.chain.dof()] = q.theta_virtual;
        Ok(())
    })
}

/// Forward kinematics. `forcep_tip` and `virtual_tip` receive three doubles
/// each; either may be null.
///
/// # Safety
/// `chain` must be live, `q` must hold `dof + 1` doubles, outputs must be null
/// or hold three doubles.
#[no_mangle]
pub unsafe extern "C" fn fls_fk(
    chain: *const FlsChain,
    q: *const f64,
    forcep_tip: *mut f64,
    virtual_tip: *mut f64,
) -> FlsStatus {
    guard(|| {
        let c = chain.as_ref().ok_or_else(|| null("chain"))?;
        let q = joints_in(c, q)?;
        let fk = forward_kinematics(&c.chain, &q)?;
        for (ptr, v) in [(forcep_tip, fk.forcep_tip), (virtual_tip, fk.virtual_tip)] {
            if !ptr.is_null() {
                std::slice::from_raw_parts_mut(ptr, 3).copy_from_slice(v.as_slice());
            }
        }
        Ok(())
    })
}

/// Solves for joints placing the forceps tip at `target` while the shaft
/// passes through `port` (the virtual tip lands on it). `q_seed` and `q_out` hold `dof + 1` doubles and may
/// alias. Returns `FLS_STATUS_NOT_CONVERGED` when the tolerances are not met;
/// `q_out` and `report` are filled either way.
///
/// # Safety
/// Pointers must be valid for the sizes above; `report` may be null.
#[no_mangle]
pub unsafe extern "C" fn fls_ik_solve(
    chain: *const FlsChain,
    target: *const f64,
    port: *const f64,
    q_seed: *const f64,
    q_out: *mut f64,
    report: *mut FlsIkReport,
) -> FlsStatus {
    guard(|| {
        let c = chain.as_ref().ok_or_else(|| null("chain"))?;
        let target = vec3(target, "target")?;
        let port = vec3(port, "port")?;
        let seed = joints_in(c, q_seed)?;
        if q_out.is_null() {
            return Err(null("q_out"));
        }
        let sol = solve_ik(&c.chain, &IkProblem::new(target, port, seed).with_settings(c.settings))?;
        let n = c.chain.dof();
        let out = std::slice::from_raw_parts_mut(q_out, n + 1);
        out[..n].copy_from_slice(&sol.q.theta);
        out[n] = sol.q.theta_virtual;
        if let Some(r) = report.as_mut() {
            *r = FlsIkReport {
                residual_tip: sol.residual_tip,
                residual_port: sol.residual_port,
                iterations: sol.iterations as u32,
                converged: sol.converged,
            };
        }
        if sol.converged {
            Ok(())
        } else {
            Err(Fail(
                FlsStatus::NotConverged,
                format!("ik stopped at tip {:.3e} mm, port {:.3e} mm", sol.residual_tip, sol.residual_port),
            ))
        }
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fls_constraints_read(path: *const c_char, out: *mut *mut FlsConstraints) -> FlsStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let set = ConstraintSet::read(&path)?;
        *out = Box::into_raw(Box::new(FlsConstraints { set }));
        Ok(())
    })
}

/// # Safety
/// `c` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fls_constraints_free(c: *mut FlsConstraints) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// # Safety
/// `c` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn fls_constraints_phase_count(c: *const FlsConstraints) -> usize {
    c.as_ref().map_or(0, |c| c.set.phase_count())
}

/// Band `[z_lo, z_hi]` for a 1-based phase and arm (0 left, 1 right).
///
/// # Safety
/// `c` must be live; `z_lo` and `z_hi` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fls_constraints_band(
    c: *const FlsConstraints,
    phase: usize,
    arm: u32,
    z_lo: *mut f64,
    z_hi: *mut f64,
) -> FlsStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("constraints"))?;
        let arm = arm_arg(arm)?;
        if z_lo.is_null() || z_hi.is_null() {
            return Err(null("z_lo/z_hi"));
        }
        let band = c
            .set
            .active(phase, arm)
            .ok_or_else(|| Fail(FlsStatus::InvalidArgument, format!("no band for phase {phase}")))?;
        *z_lo = band.z_lo;
        *z_hi = band.z_hi;
        Ok(())
    })
}

/// Restoring force along z for a commanded depth, `kp` in N/mm.
///
/// # Safety
/// `c` must be live and `force` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fls_constraints_force(
    c: *const FlsConstraints,
    phase: usize,
    arm: u32,
    z_ref: f64,
    kp: f64,
    force: *mut f64,
) -> FlsStatus {
    guard(|| {
        let c = c.as_ref().ok_or_else(|| null("constraints"))?;
        let arm = arm_arg(arm)?;
        if force.is_null() {
            return Err(null("force"));
        }
        if !z_ref.is_finite() || !(kp >= 0.0) {
            return Err(Fail(FlsStatus::InvalidArgument, "z_ref must be finite and kp non-negative".into()));
        }
        let band = c
            .set
            .active(phase, arm)
            .ok_or_else(|| Fail(FlsStatus::InvalidArgument, format!("no band for phase {phase}")))?;
        *force = feedback_force(z_ref, band, kp);
        Ok(())
    })
}

/// Number of phases detected in a demonstration log.
///
/// # Safety
/// `path` must be a NUL-terminated string and `count` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fls_detect_phases(
    path: *const c_char,
    threshold: f64,
    n_thre: usize,
    count: *mut usize,
) -> FlsStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        if count.is_null() {
            return Err(null("count"));
        }
        let demo = DemoRecord::read_log(&path)?;
        *count = detect_phases(&demo.steps, threshold, n_thre)?.phase_count();
        Ok(())
    })
}

/// Runs every stage into `out_dir`. `config` may be null for defaults;
/// a nonzero `seed` replaces the master seed.
///
/// # Safety
/// `out_dir` must be a NUL-terminated string; `config` null or one.
#[no_mangle]
pub unsafe extern "C" fn fls_pipeline_run(
    config: *const c_char,
    out_dir: *const c_char,
    seed: u64,
    resume: bool,
) -> FlsStatus {
    guard(|| {
        let out = path_arg(out_dir, "out_dir")?;
        let mut cfg = if config.is_null() {
            RunConfig::default()
        } else {
            RunConfig::load(&path_arg(config, "config")?)?
        };
        if seed != 0 {
            cfg = cfg.with_seed(seed);
        }
        run_pipeline(&cfg, &out, resume)?;
        Ok(())
    })
}
