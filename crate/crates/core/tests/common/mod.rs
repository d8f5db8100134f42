//! Generators and independent oracles shared by the integration suites.
#![allow(dead_code)]

use std::collections::BTreeSet;

use proptest::prelude::*;
use ztflow::harness::{self, run_header, sweep_expectations, CommunicationCase, VerificationReport};
use ztflow::mesh::{Fault, Mesh, SimConfig};
use ztflow::policy::{evaluate, expand_path, Method, PolicyDocument, RequestContext};
use ztflow::workflow::{AgentId, Edge, WorkflowGraph};

pub const TEMPLATE: &str = "/api/{dst}";

pub fn name(i: usize) -> String {
    format!("s{i}")
}

/// Random workflow on `n` nodes, owner `s0`, every node reachable from the
/// owner. Forward edges only go from lower to higher index, so the only
/// cycles are those closed by return edges into the owner.
pub fn build_dag(n: usize, extra: &[bool], parents: &[usize], actors: &[usize], returns: &[bool]) -> WorkflowGraph {
    let mut edges = BTreeSet::new();
    for j in 1..n {
        edges.insert((parents[j - 1] % j, j));
    }
    let mut k = 0;
    for i in 0..n {
        for j in i + 1..n {
            if extra[k] {
                edges.insert((i, j));
            }
            k += 1;
        }
    }
    for j in 1..n {
        if returns[j - 1] {
            edges.insert((j, 0));
        }
    }
    let agents: Vec<AgentId> = (0..n).map(|i| AgentId::new(format!("A{}", actors[i] % n), name(i))).collect();
    WorkflowGraph::new(
        agents[0].clone(),
        agents,
        edges.into_iter().map(|(a, b)| Edge::new(name(a), name(b))).collect(),
    )
}

pub fn dag(min_nodes: usize, max_nodes: usize) -> impl Strategy<Value = WorkflowGraph> {
    (min_nodes..=max_nodes).prop_flat_map(|n| {
        let pairs = n * (n - 1) / 2;
        (
            Just(n),
            prop::collection::vec(prop::bool::weighted(0.3), pairs),
            prop::collection::vec(0usize..64, n.saturating_sub(1)),
            prop::collection::vec(0usize..64, n),
            prop::collection::vec(prop::bool::weighted(0.3), n.saturating_sub(1)),
        )
            .prop_map(|(n, extra, parents, actors, returns)| build_dag(n, &extra, &parents, &actors, &returns))
    })
}

/// Edge membership, the ground truth a compiled policy must reproduce.
pub fn edge_oracle(g: &WorkflowGraph, src: &str, dst: &str, method: Method) -> bool {
    method == Method::Post && g.edges.iter().any(|e| e.src == src && e.dst == dst)
}

pub fn allowed(policy: &PolicyDocument, src: &str, dst: &str, method: Method, hour: u8) -> bool {
    let path = expand_path(TEMPLATE, dst).unwrap();
    evaluate(policy, &RequestContext::new(src, method, path.as_str(), hour).unwrap()).is_allow()
}

pub fn swept(graph: &WorkflowGraph, policy: &PolicyDocument, config: SimConfig, faults: &[Fault]) -> Mesh {
    let mut m = Mesh::deploy(graph, policy.clone(), config).unwrap();
    for f in faults {
        m.inject_fault(f.clone()).unwrap();
    }
    harness::run_sweep(&mut m, &Method::ALL, TEMPLATE).unwrap();
    m
}

pub fn report(m: &Mesh, policy: &PolicyDocument) -> VerificationReport {
    let header = run_header(m.capture_log()).unwrap().clone();
    let exps = sweep_expectations(&header, policy).unwrap();
    harness::verify(m.capture_log(), &exps).unwrap()
}

/// Cases a single fault can affect under source-side enforcement, written
/// from the fault semantics alone.
pub fn fault_reach(
    fault: &Fault,
    services: &[String],
    policy: &PolicyDocument,
    hour: u8,
) -> BTreeSet<CommunicationCase> {
    let mut out = BTreeSet::new();
    for s in services {
        for d in services {
            if s == d {
                continue;
            }
            for m in Method::ALL {
                let ok = allowed(policy, s, d, m, hour);
                let hit = match fault {
                    Fault::DisablePolicySidecar { agent } => s == agent && !ok,
                    Fault::PlaintextChannel { a, b } => ok && ((s == a && d == b) || (s == b && d == a)),
                    Fault::RogueEdge { src, dst } => s == src && d == dst && !ok,
                    Fault::TamperCertificate { agent } => ok && (s == agent || d == agent),
                };
                if hit {
                    out.insert(CommunicationCase { src: s.clone(), dst: d.clone(), method: m });
                }
            }
        }
    }
    out
}

/// ln Γ by argument shift and the Stirling series; independent of the
/// Lanczos form used by the library.
pub fn lgamma_oracle(x: f64) -> f64 {
    let mut shift = 0.0;
    let mut z = x;
    while z < 15.0 {
        shift += z.ln();
        z += 1.0;
    }
    let z2 = z * z;
    let series = 1.0 / (12.0 * z) - 1.0 / (360.0 * z * z2) + 1.0 / (1260.0 * z * z2 * z2)
        - 1.0 / (1680.0 * z * z2 * z2 * z2);
    (z - 0.5) * z.ln() - z + 0.5 * (2.0 * std::f64::consts::PI).ln() + series - shift
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let k = k as f64;
                let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let rule = gauss_legendre(20);
    let h = (b - a) / panels as f64;
    let mut sum = 0.0;
    for p in 0..panels {
        let mid = a + (p as f64 + 0.5) * h;
        for &(x, w) in &rule {
            sum += w * f(mid + 0.5 * h * x);
        }
    }
    sum * 0.5 * h
}

/// Two-sided Student t tail by quadrature of the density.
pub fn t_p_oracle(t: f64, df: f64) -> f64 {
    let ln_c = lgamma_oracle((df + 1.0) / 2.0) - lgamma_oracle(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let density = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let t = t.abs();
    let panels = ((t * 40.0).ceil() as usize).max(8);
    (1.0 - 2.0 * integrate(density, 0.0, t, panels)).max(0.0)
}

/// F survival by quadrature in u = sqrt(x), which removes the d1 = 1
/// singularity at the origin.
pub fn f_sf_oracle(f: f64, d1: f64, d2: f64) -> f64 {
    let ln_b = lgamma_oracle(d1 / 2.0) + lgamma_oracle(d2 / 2.0) - lgamma_oracle((d1 + d2) / 2.0);
    let ln_c = 0.5 * d1 * (d1 / d2).ln() - ln_b;
    let density_u = |u: f64| {
        if u == 0.0 {
            return if d1 == 1.0 { 2.0 * ln_c.exp() } else { 0.0 };
        }
        let x = u * u;
        let ln = ln_c + (d1 / 2.0 - 1.0) * x.ln() - (d1 + d2) / 2.0 * (1.0 + d1 * x / d2).ln();
        2.0 * u * ln.exp()
    };
    let top = f.sqrt();
    let panels = ((top * 200.0).ceil() as usize).max(16);
    (1.0 - integrate(density_u, 0.0, top, panels)).max(0.0)
}

pub mod policies {
    use proptest::prelude::*;
    use ztflow::policy::{
        AllowRule, AttrValue, AttributeCondition, AttributeSet, Comparator, Identity, Method, Permission,
        PolicyDocument, RequestContext, Resource, TimeWindow,
    };

    pub const USERS: usize = 6;

    pub fn user(i: usize) -> String {
        format!("u{i}")
    }

    pub fn path(i: usize) -> String {
        format!("/api/s{i}")
    }

    fn method() -> impl Strategy<Value = Method> {
        prop::sample::select(Method::ALL.to_vec())
    }

    fn comparator() -> impl Strategy<Value = Comparator> {
        prop::sample::select(vec![Comparator::Lt, Comparator::Le, Comparator::Gt, Comparator::Ge, Comparator::Eq])
    }

    fn condition() -> impl Strategy<Value = AttributeCondition> {
        prop_oneof![
            (comparator(), 0i64..10).prop_map(|(c, v)| AttributeCondition::new("tenure", c, AttrValue::Int(v))),
            prop::sample::select(vec!["fx", "audio"])
                .prop_map(|t| AttributeCondition::new("team", Comparator::Eq, AttrValue::Str(t.into()))),
        ]
    }

    fn window() -> impl Strategy<Value = TimeWindow> {
        (0u8..24, 0u8..24).prop_map(|(a, b)| TimeWindow::new(a, b, "UTC").unwrap())
    }

    fn rule() -> impl Strategy<Value = AllowRule> {
        (
            0..USERS,
            any::<bool>(),
            prop::collection::vec(condition(), 0..3),
            prop::collection::vec(window(), 0..2),
        )
            .prop_map(|(u, rbac, conds, windows)| AllowRule {
                user: Identity::from(user(u).as_str()),
                require_rbac: rbac || (conds.is_empty() && windows.is_empty()),
                attribute_conditions: conds,
                time_windows: windows,
            })
    }

    pub fn policy() -> impl Strategy<Value = PolicyDocument> {
        (
            prop::collection::vec((0..USERS, prop::collection::vec(0usize..3, 0..3)), 0..USERS),
            prop::collection::vec((0usize..3, prop::collection::vec((method(), 0usize..4), 0..4)), 0..4),
            prop::collection::vec((0..USERS, 0i64..10), 0..USERS),
            prop::collection::vec(rule(), 0..7),
        )
            .prop_map(|(bindings, grants, tenure, rules)| {
                let mut p = PolicyDocument::default();
                for (u, roles) in bindings {
                    p.user_roles
                        .insert(Identity::from(user(u).as_str()), roles.iter().map(|r| format!("r{r}")).collect());
                }
                for (r, perms) in grants {
                    p.role_permissions.entry(format!("r{r}")).or_default().extend(
                        perms.into_iter().map(|(m, d)| Permission { method: m, path: Resource::new(&path(d)).unwrap() }),
                    );
                }
                for (u, t) in tenure {
                    p.user_attributes
                        .entry(Identity::from(user(u).as_str()))
                        .or_default()
                        .insert("tenure".into(), AttrValue::Int(t));
                }
                p.allow_rules = rules;
                p
            })
    }

    pub fn request() -> impl Strategy<Value = (String, RequestContext)> {
        (0..USERS + 2, method(), 0usize..4, 0u8..24, prop::option::of(prop::sample::select(vec!["fx", "audio"])))
            .prop_map(|(u, m, d, h, team)| {
                let mut rc = RequestContext::new(&user(u), m, &path(d), h).unwrap();
                if let Some(t) = team {
                    rc.extra_attributes.insert("team".into(), AttrValue::Str(t.into()));
                }
                (user(u), rc)
            })
    }

    fn in_window(w: &TimeWindow, hour: u8) -> bool {
        if w.min_hour <= w.max_hour {
            (w.min_hour..=w.max_hour).contains(&hour)
        } else {
            hour >= w.min_hour || hour <= w.max_hour
        }
    }

    fn cond_holds(c: &AttributeCondition, attrs: &AttributeSet) -> bool {
        let Some(v) = attrs.get(&c.attribute) else { return false };
        let ord = match (v, &c.value) {
            (AttrValue::Int(a), AttrValue::Int(b)) => a.cmp(b),
            (AttrValue::Str(a), AttrValue::Str(b)) => a.cmp(b),
            _ => return false,
        };
        match c.comparator {
            Comparator::Lt => ord.is_lt(),
            Comparator::Le => ord.is_le(),
            Comparator::Gt => ord.is_gt(),
            Comparator::Ge => ord.is_ge(),
            Comparator::Eq => ord.is_eq(),
        }
    }

    /// Allow iff some rule for the user holds, written without the engine.
    pub fn decide(p: &PolicyDocument, u: &str, rc: &RequestContext) -> bool {
        let id = Identity::from(u);
        let mut attrs = p.user_attributes.get(&id).cloned().unwrap_or_default();
        attrs.extend(rc.extra_attributes.clone());
        let rbac = p.user_roles.get(&id).is_some_and(|roles| {
            roles.iter().any(|r| {
                p.role_permissions.get(r).is_some_and(|ps| ps.iter().any(|x| x.method == rc.method && x.path == rc.path))
            })
        });
        p.allow_rules.iter().any(|r| {
            r.user == id
                && (!r.require_rbac || rbac)
                && r.attribute_conditions.iter().all(|c| cond_holds(c, &attrs))
                && r.time_windows.iter().all(|w| in_window(w, rc.clock_hour))
        })
    }
}
