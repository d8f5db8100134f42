use super::{
    AllowRule, AttrValue, AttributeCondition, AttributeSet, Comparator, Identity, Method,
    Permission, PolicyDocument, PolicyError, Resource, TimeWindow,
};
use crate::workflow::WorkflowGraph;

/// Prefix of identities emitted by [`inflate_policy`]. A parsed credential
/// never contains `':'`, so such rules can never match a real request.
pub const INFLATED_PREFIX: &str = "inflated:";

/// Expands `{dst}` in `template` with the destination agent name.
pub fn expand_path(template: &str, dst: &str) -> Result<Resource, PolicyError> {
    Resource::new(&template.replace("{dst}", dst))
}

/// One role per agent, one permission per numbered edge, one RBAC rule per
/// source identity. Permission lines follow edge numbering.
pub fn compile_from_workflow(
    graph: &WorkflowGraph,
    method: Method,
    path_template: &str,
) -> Result<PolicyDocument, PolicyError> {
    let numbered = graph.number_edges()?;
    let mut policy = PolicyDocument::default();
    for agent in &graph.agents {
        policy.user_roles.insert(Identity::new(agent.agent.clone())?, vec![agent.agent.clone()]);
    }
    for edge in &numbered {
        let perm = Permission { method, path: expand_path(path_template, &edge.dst)? };
        let perms = policy.role_permissions.entry(edge.src.clone()).or_default();
        if perms.is_empty() {
            policy.allow_rules.push(AllowRule::rbac(&edge.src));
        }
        perms.push(perm);
    }
    Ok(policy)
}

/// Adds `window` to every rule of `user`. Permissions can only shrink.
pub fn attach_time_constraint(
    policy: &PolicyDocument,
    user: &Identity,
    window: TimeWindow,
) -> Result<PolicyDocument, PolicyError> {
    TimeWindow::new(window.min_hour, window.max_hour, &window.zone_label)?;
    let mut out = policy.clone();
    let mut touched = false;
    for rule in out.allow_rules.iter_mut().filter(|r| &r.user == user) {
        rule.time_windows.push(window.clone());
        touched = true;
    }
    if !touched {
        return Err(PolicyError::UnknownUser(user.to_string()));
    }
    Ok(out)
}

/// Appends `extra` rules that are inspected on every request but can never
/// allow anything.
pub fn inflate_policy(policy: &PolicyDocument, extra: usize) -> PolicyDocument {
    let mut out = policy.clone();
    out.allow_rules.extend((0..extra).map(|i| AllowRule {
        user: Identity::from(format!("{INFLATED_PREFIX}{i:05}").as_str()),
        require_rbac: true,
        attribute_conditions: vec![AttributeCondition::new(
            "inflated",
            Comparator::Lt,
            AttrValue::Int(i64::MIN),
        )],
        time_windows: Vec::new(),
    }));
    out
}

/// The deployed movie-workflow policy: RBAC grants for the seven services,
/// tenure attributes and hour-of-day rules.
pub fn poc_policy() -> PolicyDocument {
    let names = ["owner", "vfx-1", "vfx-2", "vfx-3", "color", "sound", "hdr"];
    let mut p = PolicyDocument::default();
    for n in names {
        p.user_roles.insert(Identity::from(n), vec![n.to_owned()]);
    }
    let grants: [(&str, &[&str]); 7] = [
        ("owner", &["vfx-1"]),
        ("vfx-1", &["vfx-2", "vfx-3"]),
        ("vfx-2", &["color"]),
        ("vfx-3", &["sound"]),
        ("color", &["hdr"]),
        ("hdr", &["owner"]),
        ("sound", &["owner"]),
    ];
    for (role, dsts) in grants {
        let perms = dsts
            .iter()
            .map(|d| Permission {
                method: Method::Post,
                path: Resource::new(&format!("/api/{d}")).expect("static path"),
            })
            .collect();
        p.role_permissions.insert(role.to_owned(), perms);
    }
    let tenure = [
        ("owner", 8),
        ("vfx-1", 3),
        ("vfx-2", 12),
        ("vfx-3", 7),
        ("color", 3),
        ("sound", 4),
        ("hdr", 5),
    ];
    for (n, t) in tenure {
        p.user_attributes
            .insert(Identity::from(n), AttributeSet::from([("tenure".into(), AttrValue::Int(t))]));
    }

    let zone = "Europe/Paris";
    let business = TimeWindow { min_hour: 8, max_hour: 17, zone_label: zone.into() };
    let after_hours = TimeWindow { min_hour: 17, max_hour: 8, zone_label: zone.into() };
    let senior = AttributeCondition::new("tenure", Comparator::Gt, AttrValue::Int(10));
    p.allow_rules = vec![
        AllowRule::rbac("owner"),
        AllowRule::rbac("vfx-1"),
        AllowRule::rbac("vfx-2").with_condition(senior.clone()),
        AllowRule::rbac("vfx-2").with_window(business.clone()),
        AllowRule::rbac("vfx-3").with_condition(senior),
        AllowRule::rbac("vfx-3").with_window(business.clone()),
        AllowRule::rbac("color").with_window(after_hours.clone()),
        AllowRule::rbac("sound").with_window(after_hours),
        AllowRule::rbac("hdr").with_window(business),
    ];
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{evaluate, RequestContext};
    use crate::workflow::{movie_workflow, poc_workflow, AgentId, WorkflowGraph};

    fn allowed(p: &PolicyDocument, user: &str, m: Method, dst: &str, hour: u8) -> bool {
        let ctx = RequestContext::new(user, m, &format!("/api/{dst}"), hour).unwrap();
        evaluate(p, &ctx).is_allow()
    }

    #[test]
    fn compiled_lines_follow_edge_numbers() {
        let g = movie_workflow();
        let p = compile_from_workflow(&g, Method::Post, "/api/{dst}").unwrap();
        let lines: Vec<(String, String)> = p
            .permission_lines()
            .into_iter()
            .map(|(r, perm)| (r.to_owned(), perm.path.to_string()))
            .collect();
        let edges: Vec<(String, String)> = g
            .number_edges()
            .unwrap()
            .into_iter()
            .map(|e| (e.src, format!("/api/{}", e.dst)))
            .collect();
        assert_eq!(lines, edges);
        assert_eq!(p.permission_count(), 8);
        // two permissions for C1_0, one rule each source
        assert_eq!(p.allow_rules.len(), 7);
    }

    #[test]
    fn data_path_template() {
        let p = compile_from_workflow(&movie_workflow(), Method::Post, "/data").unwrap();
        let ctx = RequestContext::new("C1_0", Method::Post, "/data", 0).unwrap();
        assert!(evaluate(&p, &ctx).is_allow());
    }

    #[test]
    fn single_node_denies_everything() {
        let g = WorkflowGraph::new(AgentId::single("O"), vec![], vec![]);
        let p = compile_from_workflow(&g, Method::Post, "/api/{dst}").unwrap();
        assert!(p.role_permissions.is_empty());
        assert!(!allowed(&p, "O", Method::Post, "O", 3));
    }

    #[test]
    fn time_constraint_on_listing_two_edge() {
        let p = compile_from_workflow(&movie_workflow(), Method::Post, "/api/{dst}").unwrap();
        let deadline = TimeWindow::new(0, 11, "UTC").unwrap();
        let q = attach_time_constraint(&p, &"C1_2".into(), deadline).unwrap();
        for h in 0..24 {
            assert_eq!(allowed(&q, "C1_2", Method::Post, "C4", h), h <= 11);
            assert!(allowed(&q, "C1_0", Method::Post, "C1_2", h));
        }
    }

    #[test]
    fn zero_width_window() {
        let p = compile_from_workflow(&poc_workflow(), Method::Post, "/api/{dst}").unwrap();
        let q = attach_time_constraint(&p, &"owner".into(), TimeWindow::new(5, 5, "").unwrap())
            .unwrap();
        let open: Vec<u8> = (0..24).filter(|h| allowed(&q, "owner", Method::Post, "vfx-1", *h)).collect();
        assert_eq!(open, vec![5]);
    }

    #[test]
    fn full_day_window_is_vacuous() {
        let p = poc_policy();
        let q = attach_time_constraint(&p, &"vfx-1".into(), TimeWindow::new(0, 23, "").unwrap())
            .unwrap();
        for h in 0..24 {
            for m in Method::ALL {
                for dst in ["vfx-2", "vfx-3", "owner"] {
                    assert_eq!(allowed(&p, "vfx-1", m, dst, h), allowed(&q, "vfx-1", m, dst, h));
                }
            }
        }
    }

    #[test]
    fn unknown_user_is_an_error() {
        let err = attach_time_constraint(&poc_policy(), &"mallory".into(), TimeWindow::new(1, 2, "").unwrap());
        assert!(matches!(err, Err(PolicyError::UnknownUser(u)) if u == "mallory"));
    }

    #[test]
    fn inflate_zero_is_identity() {
        assert_eq!(inflate_policy(&poc_policy(), 0), poc_policy());
        assert_eq!(inflate_policy(&poc_policy(), 100).allow_rules.len(), 109);
        assert!(inflate_policy(&poc_policy(), 3).validate().is_ok());
    }

    #[test]
    fn poc_table() {
        let p = poc_policy();
        assert!(allowed(&p, "owner", Method::Post, "vfx-1", 12));
        assert!(!allowed(&p, "owner", Method::Get, "vfx-1", 12));
        // color/sound only outside business hours, hdr only inside
        assert!(allowed(&p, "color", Method::Post, "hdr", 20));
        assert!(!allowed(&p, "color", Method::Post, "hdr", 12));
        assert!(allowed(&p, "hdr", Method::Post, "owner", 12));
        let mut literal = p.clone();
        literal.strict_literal_windows = true;
        assert!((0..24).all(|h| !allowed(&literal, "color", Method::Post, "hdr", h)));
    }
}
