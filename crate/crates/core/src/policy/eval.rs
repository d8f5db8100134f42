use std::sync::{Arc, RwLock};

use serde::Serialize;

use super::{
    parse_credential, AllowRule, AttributeSet, Decision, Identity, Method, PolicyDocument,
    RequestContext, Resource, Verdict,
};

/// Evaluates every allow rule (no early exit) and allows iff one is fully
/// satisfied. The clock is taken from the context only.
pub fn evaluate(policy: &PolicyDocument, ctx: &RequestContext) -> Decision {
    let user = parse_credential(&ctx.authorization_header).ok();
    let attrs = user.as_ref().map(|u| merged_attributes(policy, u, ctx)).unwrap_or_default();

    let mut matched = None;
    let mut user_has_rule = false;
    for (i, rule) in policy.allow_rules.iter().enumerate() {
        let is_user = user.as_ref() == Some(&rule.user);
        user_has_rule |= is_user;
        let body = rule_body_holds(policy, rule, user.as_ref(), &attrs, ctx);
        if is_user && body && matched.is_none() {
            matched = Some(i);
        }
    }

    let rules_evaluated = policy.allow_rules.len();
    match (matched, user) {
        (Some(i), _) => Decision {
            verdict: Verdict::Allow,
            matched_rule_index: Some(i),
            reason: format!("allowed by rule {i}"),
            rules_evaluated,
        },
        (None, None) => Decision {
            verdict: Verdict::Deny,
            matched_rule_index: None,
            reason: "unauthenticated".into(),
            rules_evaluated,
        },
        (None, Some(u)) => Decision {
            verdict: Verdict::Deny,
            matched_rule_index: None,
            reason: if user_has_rule {
                format!("default deny: no rule for {u} satisfied")
            } else {
                format!("default deny: no rule for {u}")
            },
            rules_evaluated,
        },
    }
}

fn merged_attributes(policy: &PolicyDocument, user: &Identity, ctx: &RequestContext) -> AttributeSet {
    let mut attrs = policy.user_attributes.get(user).cloned().unwrap_or_default();
    attrs.extend(ctx.extra_attributes.iter().map(|(k, v)| (k.clone(), v.clone())));
    attrs
}

// Non-short-circuiting on purpose: every condition of every rule is computed.
fn rule_body_holds(
    policy: &PolicyDocument,
    rule: &AllowRule,
    user: Option<&Identity>,
    attrs: &AttributeSet,
    ctx: &RequestContext,
) -> bool {
    let rbac = !rule.require_rbac
        | user.is_some_and(|u| policy.rbac_allows(u, ctx.method, &ctx.path));
    let attributes = rule.attribute_conditions.iter().fold(true, |acc, c| acc & c.holds(attrs));
    let hours = rule
        .time_windows
        .iter()
        .fold(true, |acc, w| acc & w.contains(ctx.clock_hour, policy.strict_literal_windows));
    rbac & attributes & hours
}

/// One JSON line per decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DecisionLog {
    pub user: Option<String>,
    pub method: Method,
    pub path: Resource,
    pub verdict: Verdict,
    pub reason: String,
    pub rules_evaluated: usize,
}

impl DecisionLog {
    pub fn new(ctx: &RequestContext, decision: &Decision) -> Self {
        Self {
            user: parse_credential(&ctx.authorization_header).ok().map(|u| u.to_string()),
            method: ctx.method,
            path: ctx.path.clone(),
            verdict: decision.verdict,
            reason: decision.reason.clone(),
            rules_evaluated: decision.rules_evaluated,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("decision log serializes")
    }
}

/// Shared current policy; replacement swaps the whole document at once.
#[derive(Debug, Default)]
pub struct PolicyStore {
    current: RwLock<Arc<PolicyDocument>>,
}

impl PolicyStore {
    pub fn new(policy: PolicyDocument) -> Self {
        Self { current: RwLock::new(Arc::new(policy)) }
    }

    pub fn current(&self) -> Arc<PolicyDocument> {
        Arc::clone(&self.current.read().expect("policy store lock"))
    }

    pub fn replace(&self, policy: PolicyDocument) -> Arc<PolicyDocument> {
        let mut slot = self.current.write().expect("policy store lock");
        std::mem::replace(&mut *slot, Arc::new(policy))
    }

    pub fn evaluate(&self, ctx: &RequestContext) -> Decision {
        evaluate(&self.current(), ctx)
    }
}
