//! C interface to the ztflow policy engine, compliance harness and
//! statistics.
//!
//! Every fallible call returns a [`ZtStatus`]; on failure a message is kept
//! per thread and can be read with [`zt_last_error`]. Strings handed out by
//! the library must be released with [`zt_string_free`], policies with
//! [`zt_policy_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ztflow::harness::{self, required_capture_count, run_header, sweep_expectations};
use ztflow::mesh::{EnforcementPoint, Fault, Mesh, SimConfig};
use ztflow::policy::{compile_from_workflow, evaluate, Method, PolicyDocument, RequestContext};
use ztflow::stats::{t_test, SampleSet};
use ztflow::workflow::WorkflowGraph;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZtStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    /// Input could not be parsed (JSON, method, fault, enforcement point).
    Parse = 3,
    /// Input parsed but was rejected, such as a workflow with a cycle.
    Invalid = 4,
    /// Deployment or the sweep failed.
    Simulation = 5,
    /// Samples too small or without variance.
    Stats = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZtVerdict {
    Deny = 0,
    Allow = 1,
}

/// Compiled policy. Opaque to C.
pub struct ZtPolicy {
    doc: PolicyDocument,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ZtTTest {
    pub t: f64,
    pub df: u64,
    pub p: f64,
    pub cohen_d: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(ZtStatus, String);

type Outcome<T> = Result<T, Failure>;

fn fail<E: std::fmt::Display>(status: ZtStatus) -> impl FnOnce(E) -> Failure {
    move |e| Failure(status, e.to_string())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Outcome<()>) -> ZtStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ZtStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ZtStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(Failure(ZtStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ZtStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

fn out_ptr<T>(p: *mut T, what: &str) -> Outcome<()> {
    if p.is_null() {
        Err(Failure(ZtStatus::NullArgument, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).map(CString::into_raw).unwrap_or(ptr::null_mut())
}

fn policy_ref<'a>(p: *const ZtPolicy) -> Outcome<&'a PolicyDocument> {
    // SAFETY: callers pass handles obtained from this library.
    unsafe { p.as_ref() }
        .map(|h| &h.doc)
        .ok_or_else(|| Failure(ZtStatus::NullArgument, "policy is null".into()))
}

fn hand_out(doc: PolicyDocument, out: *mut *mut ZtPolicy) {
    // SAFETY: `out` was checked non-null by the caller.
    unsafe { *out = Box::into_raw(Box::new(ZtPolicy { doc })) };
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn zt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn zt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn zt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses and validates a policy document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zt_policy_from_json(json: *const c_char, out: *mut *mut ZtPolicy) -> ZtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let doc = PolicyDocument::from_json(text(json, "json")?).map_err(fail(ZtStatus::Parse))?;
        hand_out(doc, out);
        Ok(())
    })
}

/// Compiles a workflow into a default-deny policy granting `method` on
/// `path_template` (with `{dst}` replaced by the destination) for each edge.
///
/// # Safety
/// All strings must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zt_policy_compile(
    workflow_json: *const c_char,
    method: *const c_char,
    path_template: *const c_char,
    out: *mut *mut ZtPolicy,
) -> ZtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let graph = WorkflowGraph::from_json(text(workflow_json, "workflow")?).map_err(fail(ZtStatus::Parse))?;
        let method: Method = text(method, "method")?.parse().map_err(fail(ZtStatus::Parse))?;
        let template = text(path_template, "path template")?;
        let doc = compile_from_workflow(&graph, method, template).map_err(fail(ZtStatus::Invalid))?;
        hand_out(doc, out);
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn zt_policy_to_json(policy: *const ZtPolicy, out: *mut *mut c_char) -> ZtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        *out = owned_string(policy_ref(policy)?.to_json());
        Ok(())
    })
}

/// Number of permission lines in the policy, or 0 for a null handle.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn zt_policy_permission_count(policy: *const ZtPolicy) -> usize {
    policy_ref(policy).map_or(0, |p| p.permission_count())
}

/// Decides a request from `user` at `clock_hour`. `out_reason` may be null;
/// otherwise it receives a string to free with `zt_string_free`.
///
/// # Safety
/// Strings must be NUL-terminated; `policy` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn zt_policy_evaluate(
    policy: *const ZtPolicy,
    user: *const c_char,
    method: *const c_char,
    path: *const c_char,
    clock_hour: u8,
    out_verdict: *mut ZtVerdict,
    out_reason: *mut *mut c_char,
) -> ZtStatus {
    guard(|| {
        out_ptr(out_verdict, "out_verdict")?;
        let doc = policy_ref(policy)?;
        let method: Method = text(method, "method")?.parse().map_err(fail(ZtStatus::Parse))?;
        let ctx = RequestContext::new(text(user, "user")?, method, text(path, "path")?, clock_hour)
            .map_err(fail(ZtStatus::Invalid))?;
        let decision = evaluate(doc, &ctx);
        *out_verdict = if decision.is_allow() { ZtVerdict::Allow } else { ZtVerdict::Deny };
        if !out_reason.is_null() {
            *out_reason = owned_string(decision.reason);
        }
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn zt_policy_free(policy: *mut ZtPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Capture checks an exhaustive sweep needs: every case checks both
/// interfaces of every pod.
#[no_mangle]
pub extern "C" fn zt_required_capture_count(services: u64, methods: u64) -> u64 {
    required_capture_count(services, methods)
}

/// Pooled-variance two-sample t-test of `a` against `b`.
///
/// # Safety
/// `a` and `b` must point to `na` and `nb` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn zt_t_test(
    a: *const f64,
    na: usize,
    b: *const f64,
    nb: usize,
    out: *mut ZtTTest,
) -> ZtStatus {
    guard(|| {
        out_ptr(out, "out")?;
        let slice = |p: *const f64, n: usize, what: &str| -> Outcome<Vec<f64>> {
            if p.is_null() {
                return Err(Failure(ZtStatus::NullArgument, format!("{what} is null")));
            }
            Ok(std::slice::from_raw_parts(p, n).to_vec())
        };
        let a = SampleSet::new("a", slice(a, na, "a")?).map_err(fail(ZtStatus::Stats))?;
        let b = SampleSet::new("b", slice(b, nb, "b")?).map_err(fail(ZtStatus::Stats))?;
        let r = t_test(&a, &b).map_err(fail(ZtStatus::Stats))?;
        *out = ZtTTest { t: r.t, df: r.df, p: r.p, cohen_d: r.cohen_d };
        Ok(())
    })
}

/// Deploys the workflow under `policy`, injects the newline-separated
/// `faults` (may be null), sweeps every communication with GET and POST
/// and writes the verification report as JSON to `out_report`.
/// `enforcement` is "source", "destination" or "both"; null means source.
///
/// # Safety
/// Strings must be NUL-terminated or null where allowed; `out_report`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn zt_verify_sweep(
    workflow_json: *const c_char,
    policy: *const ZtPolicy,
    path_template: *const c_char,
    enforcement: *const c_char,
    faults: *const c_char,
    seed: u64,
    out_report: *mut *mut c_char,
) -> ZtStatus {
    guard(|| {
        out_ptr(out_report, "out_report")?;
        let graph = WorkflowGraph::from_json(text(workflow_json, "workflow")?).map_err(fail(ZtStatus::Parse))?;
        let doc = policy_ref(policy)?.clone();
        let template = text(path_template, "path template")?;
        let enforcement_point: EnforcementPoint = if enforcement.is_null() {
            EnforcementPoint::Source
        } else {
            text(enforcement, "enforcement")?.parse().map_err(fail(ZtStatus::Parse))?
        };
        let faults: Vec<Fault> = if faults.is_null() {
            Vec::new()
        } else {
            text(faults, "faults")?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(fail(ZtStatus::Parse))?
        };
        let config = SimConfig { enforcement_point, seed, ..SimConfig::default() };
        let mut mesh = Mesh::deploy(&graph, doc.clone(), config).map_err(fail(ZtStatus::Simulation))?;
        for f in faults {
            mesh.inject_fault(f).map_err(fail(ZtStatus::Simulation))?;
        }
        harness::run_sweep(&mut mesh, &Method::ALL, template).map_err(fail(ZtStatus::Simulation))?;
        let header = run_header(mesh.capture_log())
            .ok_or_else(|| Failure(ZtStatus::Simulation, "capture log has no header".into()))?;
        let exps = sweep_expectations(header, &doc).map_err(fail(ZtStatus::Simulation))?;
        let report = harness::verify(mesh.capture_log(), &exps).map_err(fail(ZtStatus::Simulation))?;
        let json = serde_json::to_string(&report).map_err(fail(ZtStatus::Simulation))?;
        *out_report = owned_string(json);
        Ok(())
    })
}
