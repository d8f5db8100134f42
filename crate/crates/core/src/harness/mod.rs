//! Compliance harness: enumerate every communication, derive what each
//! capture point should observe from the policy alone, and check a capture
//! log against it.

mod matrix;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use matrix::{diff_matrix, extract_matrix, extract_matrix_for, AccessControlMatrix, CellDiff, MatrixContext};

use crate::mesh::{
    CaptureEvent, CapturePoint, CaptureRecord, EnforcementPoint, InterfaceKind, Mesh, RunHeader, Transport,
};
use crate::policy::{evaluate, expand_path, Identity, Method, PolicyDocument, RequestContext};

pub const DEFAULT_PATH_TEMPLATE: &str = "/api/{dst}";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CommunicationCase {
    pub src: String,
    pub dst: String,
    pub method: Method,
}

impl fmt::Display for CommunicationCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}->{} {}", self.src, self.dst, self.method.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error("need at least 2 services, got {0}")]
    TooFewServices(usize),
    #[error("need at least 1 method")]
    NoMethods,
    #[error("duplicate service {0}")]
    DuplicateService(String),
    #[error("policy has no identity {0}")]
    UnknownIdentity(String),
    #[error("invalid path for {0}")]
    InvalidPath(String),
    #[error("capture log has no run header")]
    MissingRunHeader,
    #[error("incomplete run: {} case marker(s) missing, first {}", .0.len(), .0[0])]
    IncompleteRun(Vec<CommunicationCase>),
    #[error("case {0} appears more than once in the capture log")]
    DuplicateCase(CommunicationCase),
}

/// All ordered pairs of distinct services times methods, sorted.
pub fn enumerate_cases(services: &[String], methods: &[Method]) -> Result<Vec<CommunicationCase>, HarnessError> {
    let names: BTreeSet<&String> = services.iter().collect();
    if names.len() != services.len() {
        let mut seen = BTreeSet::new();
        let dup = services.iter().find(|s| !seen.insert(*s)).expect("a duplicate exists");
        return Err(HarnessError::DuplicateService(dup.clone()));
    }
    if names.len() < 2 {
        return Err(HarnessError::TooFewServices(names.len()));
    }
    let methods: BTreeSet<Method> = methods.iter().copied().collect();
    if methods.is_empty() {
        return Err(HarnessError::NoMethods);
    }
    let mut cases = Vec::with_capacity(names.len() * (names.len() - 1) * methods.len());
    for src in &names {
        for dst in &names {
            if src == dst {
                continue;
            }
            for &method in &methods {
                cases.push(CommunicationCase { src: (*src).clone(), dst: (*dst).clone(), method });
            }
        }
    }
    Ok(cases)
}

/// N(N-1)M communications times 2N capture points each.
pub fn required_capture_count(services: u64, methods: u64) -> u64 {
    2 * (services.pow(3) - services.pow(2)) * methods
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptureRole {
    SourceLoopback,
    SourceExternal,
    DestLoopback,
    DestExternal,
    BystanderLoopback,
    BystanderExternal,
}

pub fn classify(pod: &str, interface: InterfaceKind, case: &CommunicationCase) -> CaptureRole {
    use CaptureRole::*;
    use InterfaceKind::*;
    match (pod == case.src, pod == case.dst, interface) {
        (true, _, Loopback) => SourceLoopback,
        (true, _, External) => SourceExternal,
        (_, true, Loopback) => DestLoopback,
        (_, true, External) => DestExternal,
        (_, _, Loopback) => BystanderLoopback,
        (_, _, External) => BystanderExternal,
    }
}

/// What a capture slot must contain.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "want", rename_all = "snake_case")]
pub enum Want {
    Absent,
    /// At least one record, all mTLS, none with readable HTTP.
    Encrypted,
    /// Plaintext request with this method and path, and responses with
    /// exactly this status.
    Plaintext { method: Method, path: String, status: u16 },
}

impl fmt::Display for Want {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Want::Absent => f.write_str("no traffic"),
            Want::Encrypted => f.write_str("mtls traffic only"),
            Want::Plaintext { method, path, status } => {
                write!(f, "plaintext {} {path} answered {status}", method.as_str())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Expectation {
    pub case: CommunicationCase,
    pub point: CapturePoint,
    pub role: CaptureRole,
    pub want: Want,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpectationConfig {
    pub enforcement_point: EnforcementPoint,
    pub clock_hour: u8,
    pub path_template: String,
}

impl Default for ExpectationConfig {
    fn default() -> Self {
        Self { enforcement_point: EnforcementPoint::Source, clock_hour: 8, path_template: DEFAULT_PATH_TEMPLATE.into() }
    }
}

impl From<&RunHeader> for ExpectationConfig {
    fn from(h: &RunHeader) -> Self {
        Self { enforcement_point: h.enforcement_point, clock_hour: h.clock_hour, path_template: h.path_template.clone() }
    }
}

/// One expectation per capture point (2N) for `case`, from the policy and
/// enforcement configuration only.
pub fn expected_behavior(
    case: &CommunicationCase,
    services: &[String],
    policy: &PolicyDocument,
    config: &ExpectationConfig,
) -> Result<Vec<Expectation>, HarnessError> {
    let known: BTreeSet<&Identity> = policy.identities().into_iter().collect();
    for a in [&case.src, &case.dst] {
        if !known.contains(&Identity::from(a.as_str())) {
            return Err(HarnessError::UnknownIdentity(a.clone()));
        }
    }
    let path = expand_path(&config.path_template, &case.dst).map_err(|_| HarnessError::InvalidPath(case.dst.clone()))?;
    let ctx = RequestContext::new(&case.src, case.method, path.as_str(), config.clock_hour)
        .map_err(|_| HarnessError::InvalidPath(case.dst.clone()))?;
    let allowed = evaluate(policy, &ctx).is_allow();
    let plain = |status| Want::Plaintext { method: case.method, path: path.as_str().to_owned(), status };

    let mut out = Vec::with_capacity(services.len() * 2);
    for pod in services {
        for interface in InterfaceKind::ALL {
            let role = classify(pod, interface, case);
            let want = match (role, allowed, config.enforcement_point) {
                (CaptureRole::SourceLoopback, true, _) => plain(case.method.success_status()),
                (CaptureRole::SourceLoopback, false, _) => plain(403),
                (CaptureRole::SourceExternal | CaptureRole::DestExternal, true, _) => Want::Encrypted,
                (CaptureRole::DestLoopback, true, _) => plain(case.method.success_status()),
                (CaptureRole::SourceExternal | CaptureRole::DestExternal, false, EnforcementPoint::Destination) => {
                    Want::Encrypted
                }
                _ => Want::Absent,
            };
            out.push(Expectation {
                case: case.clone(),
                point: CapturePoint { pod: pod.clone(), interface },
                role,
                want,
            });
        }
    }
    Ok(out)
}

/// Expectations for a full sweep described by a run header.
pub fn sweep_expectations(header: &RunHeader, policy: &PolicyDocument) -> Result<Vec<Expectation>, HarnessError> {
    let config = ExpectationConfig::from(header);
    let mut out = Vec::new();
    for case in enumerate_cases(&header.services, &header.methods)? {
        out.extend(expected_behavior(&case, &header.services, policy, &config)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub case: CommunicationCase,
    pub role: CaptureRole,
    pub point: CapturePoint,
    pub observed: String,
    pub expected: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Compliant,
    Violations,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub verdict: Verdict,
    pub total_checks: u64,
    pub required_checks: u64,
    pub passes: u64,
    pub violations: Vec<Violation>,
}

impl VerificationReport {
    pub fn is_compliant(&self) -> bool {
        self.verdict == Verdict::Compliant
    }

    /// Distinct cases with at least one violation.
    pub fn violating_cases(&self) -> BTreeSet<CommunicationCase> {
        self.violations.iter().map(|v| v.case.clone()).collect()
    }
}

fn describe(records: &[&CaptureRecord]) -> String {
    if records.is_empty() {
        return "no traffic".into();
    }
    let parts: Vec<String> = records
        .iter()
        .map(|r| {
            let t = match r.transport {
                Transport::PlaintextHttp => "plaintext",
                Transport::Mtls => "mtls",
            };
            match &r.http {
                Some(h) => match h.status {
                    Some(s) => format!("{t} {s}"),
                    None => format!("{t} {} {}", h.method.as_str(), h.path),
                },
                None => t.to_owned(),
            }
        })
        .collect();
    format!("{} record(s): {}", records.len(), parts.join(", "))
}

fn satisfies(want: &Want, case: &CommunicationCase, records: &[&CaptureRecord]) -> bool {
    let labelled = records.iter().all(|r| r.src_identity == case.src && r.dst_identity == case.dst);
    match want {
        Want::Absent => records.is_empty(),
        Want::Encrypted => {
            !records.is_empty() && labelled && records.iter().all(|r| r.transport == Transport::Mtls && r.http.is_none())
        }
        Want::Plaintext { method, path, status } => {
            let all_plain = records.iter().all(|r| r.transport == Transport::PlaintextHttp && r.http.is_some());
            let https: Vec<_> = records.iter().filter_map(|r| r.http.as_ref()).collect();
            let request = https.iter().any(|h| h.status.is_none() && h.method == *method && h.path == *path);
            let responses: Vec<u16> = https.iter().filter_map(|h| h.status).collect();
            let consistent = https.iter().all(|h| h.method == *method && h.path == *path);
            labelled
                && all_plain
                && consistent
                && request
                && !responses.is_empty()
                && responses.iter().all(|s| s == status)
        }
    }
}

/// Splits a capture log into per-case slots keyed by capture point.
fn slots(
    events: &[CaptureEvent],
) -> Result<BTreeMap<CommunicationCase, BTreeMap<CapturePoint, Vec<&CaptureRecord>>>, HarnessError> {
    let mut out: BTreeMap<CommunicationCase, BTreeMap<CapturePoint, Vec<&CaptureRecord>>> = BTreeMap::new();
    let mut current: Option<CommunicationCase> = None;
    for e in events {
        match e {
            CaptureEvent::Run { .. } => current = None,
            CaptureEvent::Case { case } => {
                let c = CommunicationCase { src: case.src.clone(), dst: case.dst.clone(), method: case.method };
                if out.insert(c.clone(), BTreeMap::new()).is_some() {
                    return Err(HarnessError::DuplicateCase(c));
                }
                current = Some(c);
            }
            CaptureEvent::Capture(r) => {
                if let Some(c) = &current {
                    out.get_mut(c).expect("slot created with marker").entry(r.point.clone()).or_default().push(r);
                }
            }
        }
    }
    Ok(out)
}

pub fn run_header(events: &[CaptureEvent]) -> Option<&RunHeader> {
    events.iter().find_map(|e| match e {
        CaptureEvent::Run { run } => Some(run),
        _ => None,
    })
}

/// Checks every expectation against its capture slot.
pub fn verify(events: &[CaptureEvent], expectations: &[Expectation]) -> Result<VerificationReport, HarnessError> {
    let header = run_header(events).ok_or(HarnessError::MissingRunHeader)?;
    let slots = slots(events)?;

    let missing: BTreeSet<CommunicationCase> =
        expectations.iter().filter(|e| !slots.contains_key(&e.case)).map(|e| e.case.clone()).collect();
    if !missing.is_empty() {
        return Err(HarnessError::IncompleteRun(missing.into_iter().collect()));
    }

    let mut violations = Vec::new();
    let mut passes = 0;
    for exp in expectations {
        let records = slots[&exp.case].get(&exp.point).map(Vec::as_slice).unwrap_or(&[]);
        if satisfies(&exp.want, &exp.case, records) {
            passes += 1;
        } else {
            violations.push(Violation {
                case: exp.case.clone(),
                role: exp.role,
                point: exp.point.clone(),
                observed: describe(records),
                expected: exp.want.to_string(),
            });
        }
    }
    let total_checks = expectations.len() as u64;
    let required_checks = required_capture_count(header.services.len() as u64, header.methods.len() as u64);
    let verdict = if violations.is_empty() && total_checks == required_checks {
        Verdict::Compliant
    } else {
        Verdict::Violations
    };
    Ok(VerificationReport { verdict, total_checks, required_checks, passes, violations })
}

/// Outcome of one communication in a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseOutcome {
    pub case: CommunicationCase,
    pub status: Option<u16>,
    pub error: Option<String>,
}

/// Performs every possible communication on the mesh, marking each case
/// in the capture log.
pub fn run_sweep(mesh: &mut Mesh, methods: &[Method], path_template: &str) -> Result<Vec<CaseOutcome>, HarnessError> {
    let mut services = mesh.graph().agent_names();
    services.sort();
    let cases = enumerate_cases(&services, methods)?;
    let methods: Vec<Method> = methods.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    mesh.mark_run(&methods, path_template);
    let mut out = Vec::with_capacity(cases.len());
    for (i, case) in cases.into_iter().enumerate() {
        let path = expand_path(path_template, &case.dst).map_err(|_| HarnessError::InvalidPath(case.dst.clone()))?;
        mesh.mark_case(i, &case.src, &case.dst, case.method);
        let result = mesh.send(&case.src, &case.dst, case.method, path.as_str(), b"sweep");
        let (status, error) = match result {
            Ok(r) => (Some(r.status), None),
            Err(e) => (None, Some(e.to_string())),
        };
        out.push(CaseOutcome { case, status, error });
    }
    Ok(out)
}
