//! Acceptance criteria, one pass/fail line each. Runs under its own main so
//! the lines are printed regardless of capture settings.

mod common;

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use common::{policies, TEMPLATE};
use ztflow::bench::{self, PolicyLevel, INTER_SCOPE, INTRA_SCOPE, STARTUP_SCOPE};
use ztflow::cli;
use ztflow::harness::{
    enumerate_cases, extract_matrix, required_capture_count, run_header, sweep_expectations, MatrixContext,
};
use ztflow::identity::{BootstrapError, BootstrapSession, ControlPlane, IdentityConfig};
use ztflow::mesh::{EnforcementPoint, Fault, InterfaceKind, Mesh, SimConfig, Transport};
use ztflow::policy::{
    compile_from_workflow, evaluate, expand_path, inflate_policy, poc_policy, Method,
};
use ztflow::stats::{self, f_sf, t_from_summary, t_two_sided_p, SampleSet};
use ztflow::workflow::{movie_workflow, poc_workflow, WorkflowGraph};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

fn poc_services() -> Vec<String> {
    let mut s = poc_workflow().agent_names();
    s.sort();
    s
}

fn capture_count() -> Outcome {
    let start = Instant::now();
    let cases = enumerate_cases(&poc_services(), &Method::ALL).map_err(|e| e.to_string())?;
    let required = required_capture_count(7, 2);
    let mut mesh = Mesh::deploy(&poc_workflow(), poc_policy(), SimConfig::default()).map_err(|e| e.to_string())?;
    mesh.mark_run(&Method::ALL, TEMPLATE);
    let header = run_header(mesh.capture_log()).ok_or("no header")?.clone();
    let planned = sweep_expectations(&header, &poc_policy()).map_err(|e| e.to_string())?.len();
    let elapsed = start.elapsed();
    ensure(cases.len() == 84, || format!("{} communications planned", cases.len()))?;
    ensure(required == 1176 && planned == 1176, || format!("required {required}, planned {planned}"))?;
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("84 communications, 1176 capture checks in {elapsed:.2?}"))
}

fn matrix_reproduction() -> Outcome {
    let fig = movie_workflow();
    let compiled = compile_from_workflow(&fig, Method::Post, TEMPLATE).map_err(|e| e.to_string())?;
    let edges = |g: &WorkflowGraph| -> BTreeSet<(String, String, Method)> {
        g.edges.iter().map(|e| (e.src.clone(), e.dst.clone(), Method::Post)).collect()
    };
    let got = extract_matrix(&compiled, &MatrixContext::default()).triples();
    ensure(got == edges(&fig), || format!("compiled matrix {got:?}"))?;
    let deployed = extract_matrix(&poc_policy(), &MatrixContext::default()).triples();
    ensure(deployed == edges(&poc_workflow()), || format!("deployed matrix {deployed:?}"))?;
    Ok(format!("{} POST cells, exact set equality for the compiled and deployed policies", got.len()))
}

fn clean_compliance() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    for ep in [EnforcementPoint::Source, EnforcementPoint::Destination, EnforcementPoint::Both] {
        let cfg = SimConfig { enforcement_point: ep, ..SimConfig::default() };
        let m = common::swept(&poc_workflow(), &poc_policy(), cfg, &[]);
        let r = common::report(&m, &poc_policy());
        ensure(r.is_compliant() && r.violations.is_empty(), || {
            format!("{ep}: {} violations, first {:?}", r.violations.len(), r.violations.first())
        })?;
        ensure(r.total_checks == 1176, || format!("{ep}: {} checks", r.total_checks))?;
        lines.push(format!("{ep} {}/{}", r.passes, r.required_checks));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("compliant, 0 violations ({}) in {elapsed:.2?}", lines.join(", ")))
}

fn fault_detection() -> Outcome {
    let services = poc_services();
    let policy = poc_policy();
    let hour = SimConfig::default().start_hour;
    let mut faults = Vec::new();
    for a in &services {
        faults.push(Fault::DisablePolicySidecar { agent: a.clone() });
        faults.push(Fault::TamperCertificate { agent: a.clone() });
        for b in &services {
            if a != b {
                faults.push(Fault::RogueEdge { src: a.clone(), dst: b.clone() });
                if a < b {
                    faults.push(Fault::PlaintextChannel { a: a.clone(), b: b.clone() });
                }
            }
        }
    }
    let mut detected_kinds = BTreeSet::new();
    let mut total = 0;
    for f in &faults {
        let m = common::swept(&poc_workflow(), &policy, SimConfig::default(), std::slice::from_ref(f));
        let r = common::report(&m, &policy);
        let got = r.violating_cases();
        let want = common::fault_reach(f, &services, &policy, hour);
        ensure(got == want, || {
            let extra: Vec<_> = got.difference(&want).map(|c| c.to_string()).collect();
            let missed: Vec<_> = want.difference(&got).map(|c| c.to_string()).collect();
            format!("{f}: false positives {extra:?}, missed {missed:?}")
        })?;
        if !got.is_empty() {
            detected_kinds.insert(f.to_string().split(':').next().unwrap_or_default().to_owned());
        }
        total += got.len();
    }
    ensure(detected_kinds.len() == 4, || format!("only {} fault kinds produced violations", detected_kinds.len()))?;
    Ok(format!("{} single-fault runs, {total} violating cases, all exactly the reachable set", faults.len()))
}

fn published_statistics() -> Outcome {
    let r = t_from_summary(7.87, 1.03, 910, 5.93, 0.88, 910).map_err(|e| e.to_string())?;
    ensure((r.t - 43.19).abs() <= 0.05, || format!("t = {}", r.t))?;
    ensure(r.df == 1818, || format!("df = {}", r.df))?;
    ensure((1.93..=2.07).contains(&r.cohen_d), || format!("d = {}", r.cohen_d))?;
    Ok(format!("t({}) = {:.3}, d = {:.3}", r.df, r.t, r.cohen_d))
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn experiment_shape() -> Outcome {
    let base = SimConfig::default();
    let startup = bench::run_startup(
        &poc_workflow(),
        &poc_policy(),
        &[PolicyLevel::NoSidecar, PolicyLevel::Minimal],
        130,
        &base,
    )
    .map_err(|e| e.to_string())?;
    let values = |label: &str, scope: &str| -> Vec<f64> {
        startup.iter().filter(|s| s.label == label && s.scope == scope).map(|s| s.value).collect()
    };
    let (without, with) = (values("no-sidecar", STARTUP_SCOPE), values("minimal", STARTUP_SCOPE));
    ensure(without.len() == 910 && with.len() == 910, || format!("{} / {} startup samples", without.len(), with.len()))?;
    let ratio = mean(&with) / mean(&without);
    ensure((ratio - 1.3272).abs() <= 0.05, || format!("startup ratio {ratio:.4}"))?;

    let request = bench::run_request(&poc_workflow(), &poc_policy(), &PolicyLevel::ALL, 40, Method::Post, TEMPLATE, &base)
        .map_err(|e| e.to_string())?;
    let mut notes = vec![format!("startup ratio {ratio:.3}")];
    for scope in [INTRA_SCOPE, INTER_SCOPE] {
        let groups: Vec<SampleSet> = PolicyLevel::ALL
            .iter()
            .map(|l| {
                let v = request.iter().filter(|s| s.scope == scope && s.label == l.label()).map(|s| s.value).collect();
                SampleSet::new(l.label(), v).unwrap()
            })
            .collect();
        ensure(groups.iter().all(|g| g.values.len() == 160), || format!("{scope}: group sizes differ from 160"))?;
        let pw = stats::pairwise(&groups).map_err(|e| e.to_string())?;
        let find = |a: &str, b: &str| {
            pw.iter()
                .find(|p| (p.pair.0 == a && p.pair.1 == b) || (p.pair.0 == b && p.pair.1 == a))
                .cloned()
                .unwrap()
        };
        let big = find("minimal", "+1000");
        let g = |l: &str| mean(&groups.iter().find(|g| g.label == l).unwrap().values);
        ensure(g("+1000") > g("minimal"), || format!("{scope}: +1000 mean not above minimal"))?;
        ensure(big.p_adjusted < 0.001, || format!("{scope}: minimal vs +1000 p = {}", big.p_adjusted))?;
        let small = find("all-allow", "minimal");
        ensure(!small.significant, || format!("{scope}: all-allow vs minimal p = {}", small.p_adjusted))?;
        notes.push(format!(
            "{scope}: +1000 vs minimal p_adj = {:.1e}, all-allow vs minimal p_adj = {:.2}",
            big.p_adjusted, small.p_adjusted
        ));
    }
    Ok(notes.join("; "))
}

fn oracle_equivalence() -> Outcome {
    let triples = std::cell::Cell::new(0usize);
    runner(200)
        .run(&common::dag(1, 6), |g| {
            let p = compile_from_workflow(&g, Method::Post, TEMPLATE).unwrap();
            let names = g.agent_names();
            for s in &names {
                for d in &names {
                    for m in Method::ALL {
                        let got = common::allowed(&p, s, d, m, 8);
                        triples.set(triples.get() + 1);
                        prop_assert_eq!(got, common::edge_oracle(&g, s, d, m), "{}->{} {:?}", s, d, m);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("200 random DAGs, {} triples, 100% agreement", triples.get()))
}

fn numerical_validation() -> Outcome {
    let mut worst: f64 = 0.0;
    let dfs = [1.0, 2.0, 3.0, 5.0, 10.0, 30.0, 100.0, 500.0, 1000.0, 2000.0];
    for &df in &dfs {
        for &t in &[0.0, 0.1, 0.5, 1.0, 1.96, 3.0, 5.0, 10.0, 30.0, 60.0] {
            let err = (t_two_sided_p(t, df) - common::t_p_oracle(t, df)).abs();
            worst = worst.max(err);
            ensure(err <= 1e-6, || format!("t = {t}, df = {df}: error {err:e}"))?;
        }
    }
    for &d1 in &[1.0, 2.0, 4.0, 10.0] {
        for &d2 in &[1.0, 5.0, 30.0, 795.0, 2000.0] {
            for &f in &[0.05, 0.5, 1.0, 2.5, 10.0, 50.0] {
                let err = (f_sf(f, d1, d2) - common::f_sf_oracle(f, d1, d2)).abs();
                worst = worst.max(err);
                ensure(err <= 1e-6, || format!("F = {f}, d = ({d1}, {d2}): error {err:e}"))?;
            }
        }
    }
    let worst_rel = std::cell::Cell::new(0f64);
    runner(200)
        .run(
            &(prop::collection::vec(-5.0f64..5.0, 2..30), prop::collection::vec(-5.0f64..5.0, 2..30), 0.1f64..3.0),
            |(a, b, shift)| {
                let b: Vec<f64> = b.into_iter().map(|x| x + shift).collect();
                let (a, b) = (SampleSet::new("a", a).unwrap(), SampleSet::new("b", b).unwrap());
                let t = stats::t_test(&a, &b).unwrap();
                let f = stats::anova(&[a, b]).unwrap();
                let rel = ((f.f - t.t * t.t) / f.f.max(1e-300)).abs();
                worst_rel.set(worst_rel.get().max(rel));
                prop_assert!(rel <= 1e-9, "F {} vs t^2 {}", f.f, t.t * t.t);
                Ok(())
            },
        )
        .map_err(|e| e.to_string())?;
    Ok(format!("max p error {worst:.1e}; max |F - t^2|/F {:.1e}", worst_rel.get()))
}

fn invariant_suites() -> Outcome {
    let mut names = Vec::new();

    runner(1000)
        .run(&(common::dag(2, 6), 0usize..3), |(g, ep)| {
            let ep = [EnforcementPoint::Source, EnforcementPoint::Destination, EnforcementPoint::Both][ep];
            let p = compile_from_workflow(&g, Method::Post, TEMPLATE).unwrap();
            let m = common::swept(&g, &p, SimConfig { enforcement_point: ep, ..SimConfig::default() }, &[]);
            for r in m.collect_captures() {
                let want = match r.point.interface {
                    InterfaceKind::External => Transport::Mtls,
                    InterfaceKind::Loopback => Transport::PlaintextHttp,
                };
                prop_assert_eq!(r.transport, want, "{:?}", r);
            }
            Ok(())
        })
        .map_err(|e| format!("encryption: {e}"))?;
    names.push("encryption");

    runner(1000)
        .run(&(policies::policy(), policies::request()), |(p, (u, rc))| {
            let d = evaluate(&p, &rc);
            let has_rule = p.allow_rules.iter().any(|r| r.user.as_str() == u);
            if !has_rule {
                prop_assert!(!d.is_allow());
            }
            prop_assert_eq!(d.is_allow(), policies::decide(&p, &u, &rc));
            Ok(())
        })
        .map_err(|e| format!("default deny: {e}"))?;
    names.push("default-deny");

    runner(1000)
        .run(&(policies::policy(), policies::request(), 0usize..40), |(p, (_, rc), k)| {
            let (before, after) = (evaluate(&p, &rc), evaluate(&inflate_policy(&p, k), &rc));
            prop_assert_eq!(before.verdict, after.verdict);
            prop_assert_eq!(after.rules_evaluated, before.rules_evaluated + k);
            Ok(())
        })
        .map_err(|e| format!("inflate: {e}"))?;
    names.push("inflate decision preservation");

    runner(1000)
        .run(&(common::dag(2, 5), prop::collection::vec((0usize..8, 0usize..8, 0usize..5), 1..12)), |(g, ops)| {
            let p = compile_from_workflow(&g, Method::Post, TEMPLATE).unwrap();
            let mut m = Mesh::deploy(&g, p, SimConfig { capture: false, ..SimConfig::default() }).unwrap();
            let names = g.agent_names();
            let pick = |i: usize| names[i % names.len()].clone();
            let mut tampered = BTreeSet::new();
            for (a, b, op) in ops {
                let (a, b) = (pick(a), pick(b));
                match op {
                    0 => {
                        m.inject_fault(Fault::TamperCertificate { agent: a.clone() }).unwrap();
                        tampered.insert(a);
                    }
                    1 => {
                        if m.rotate_identity(&a).is_ok() {
                            tampered.remove(&a);
                        }
                    }
                    _ => {
                        let path = expand_path(TEMPLATE, &b).unwrap();
                        let _ = m.send(&a, &b, Method::Post, path.as_str(), b"x");
                    }
                }
                let now = m.clock().tick;
                for ch in m.channels() {
                    for (agent, cert) in [(&ch.endpoints.0, &ch.peer_certificates.0), (&ch.endpoints.1, &ch.peer_certificates.1)] {
                        prop_assert!(!tampered.contains(agent), "channel with tampered {}", agent);
                        let proxy = m.proxy(agent).unwrap();
                        prop_assert!(proxy.has_identity());
                        prop_assert!(m.plane().verify_cert(cert, now, None).is_ok(), "{} cert fails", agent);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| format!("channel identity: {e}"))?;
    names.push("no channel before identity");

    runner(1000)
        .run(
            &(1u32..5, 1u64..50, prop::collection::vec((0usize..6, 0u64..60, any::<bool>()), 0..12)),
            |(budget, expiry, attempts)| {
                let plane = ControlPlane::new(IdentityConfig::default(), 7);
                let token = plane.issue_bootstrap_token("t", budget, expiry);
                let mut sessions: Vec<BootstrapSession<'_>> =
                    (0..6).map(|i| BootstrapSession::new(&plane, &format!("n{i}"))).collect();
                let (mut ok, mut live) = (0u32, 0u32);
                for (node, now, forged) in attempts {
                    let mut presented = token.clone();
                    if forged {
                        presented.secret[0] ^= 1;
                    }
                    let s = &mut sessions[node];
                    let fresh = s.step() == ztflow::identity::BootstrapStep::Unauthenticated;
                    match s.authenticate(&presented, now) {
                        Ok(()) => ok += 1,
                        Err(BootstrapError::TokenExhausted) => prop_assert!(!forged && now < expiry && ok == budget),
                        Err(_) => {}
                    }
                    if fresh && !forged && now < expiry {
                        live += 1;
                    }
                }
                prop_assert!(ok <= budget);
                prop_assert_eq!(ok, live.min(budget));
                prop_assert_eq!(plane.remaining_budget("t"), Some(budget - ok));
                Ok(())
            },
        )
        .map_err(|e| format!("token: {e}"))?;
    names.push("token single use");

    Ok(format!("{} x 1000 cases: {}", names.len(), names.join(", ")))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let wf = dir.path().join("workflow.json");
    let pol = dir.path().join("policy.json");
    std::fs::write(&wf, poc_workflow().to_json()).map_err(|e| e.to_string())?;
    std::fs::write(&pol, poc_policy().to_json()).map_err(|e| e.to_string())?;
    let out = dir.path().join("captures.jsonl");
    let args = |out: &std::path::Path| {
        vec![
            "ztflow".to_string(),
            "simulate".into(),
            "--workflow".into(),
            wf.display().to_string(),
            "--policy".into(),
            pol.display().to_string(),
            "--sweep".into(),
            "--seed".into(),
            "1234".into(),
            "--fault".into(),
            "rogue-edge:color,owner".into(),
            "--out".into(),
            out.display().to_string(),
        ]
    };
    let (mut o, mut e) = (Vec::new(), Vec::new());
    ensure(cli::run_with(args(&out), &mut o, &mut e) == 0, || String::from_utf8_lossy(&e).into_owned())?;
    let first = std::fs::read(&out).map_err(|e| e.to_string())?;
    let manifest = cli::manifest_path(&out);
    let code = cli::run_with(["ztflow", "replay", "--manifest", &manifest.display().to_string()], &mut o, &mut e);
    ensure(code == 0, || String::from_utf8_lossy(&e).into_owned())?;
    let replayed = std::fs::read(&out).map_err(|e| e.to_string())?;
    ensure(first == replayed, || "replayed capture file differs".into())?;
    let other = dir.path().join("again.jsonl");
    ensure(cli::run_with(args(&other), &mut o, &mut e) == 0, || String::from_utf8_lossy(&e).into_owned())?;
    ensure(std::fs::read(&other).map_err(|e| e.to_string())? == first, || "second run differs".into())?;
    Ok(format!("replay and rerun byte-identical ({} bytes)", first.len()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("capture-count reproduction", capture_count),
        ("access-control matrix reproduction", matrix_reproduction),
        ("compliance on clean runs", clean_compliance),
        ("fault detection", fault_detection),
        ("statistics from published summaries", published_statistics),
        ("experiment shape", experiment_shape),
        ("policy-engine oracle equivalence", oracle_equivalence),
        ("numerical validation", numerical_validation),
        ("invariant suites", invariant_suites),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{:.1?}]", i + 1, start.elapsed()),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} [{:.1?}]", i + 1, start.elapsed());
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
