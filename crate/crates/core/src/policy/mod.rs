//! Role-centric RBAC/ABAC policies.
//!
//! A request is authorized when an identity may perform an operation on a
//! resource given a set of attributes. Roles grant permissions; attribute and
//! hour-of-day conditions only ever narrow what roles grant. Everything not
//! explicitly allowed is denied.

mod compile;
mod credential;
mod eval;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

pub use compile::{
    attach_time_constraint, compile_from_workflow, expand_path, inflate_policy, poc_policy, INFLATED_PREFIX,
};
pub use credential::{basic_credential, parse_credential, CredentialError};
pub use eval::{evaluate, DecisionLog, PolicyStore};

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("policy file: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Workflow(#[from] crate::workflow::WorkflowError),
    #[error("allow rule {index} is unconditional (no rbac, attribute or time condition)")]
    UnconditionalRule { index: usize },
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("invalid resource path {0:?}: must begin with '/'")]
    InvalidPath(String),
    #[error("invalid time window {min}..{max}: hours must be 0-23")]
    InvalidWindow { min: u8, max: u8 },
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("empty identity")]
    EmptyIdentity,
}

/// HTTP verb of a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GET")]
    Get,
    #[serde(rename = "POST")]
    Post,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Get, Method::Post];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Get => "GET",
            Method::Post => "POST",
        }
    }

    /// Status a service answers with when the request is let through.
    pub fn success_status(self) -> u16 {
        match self {
            Method::Get => 200,
            Method::Post => 201,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "GET" => Ok(Method::Get),
            "POST" => Ok(Method::Post),
            _ => Err(PolicyError::UnknownMethod(s.to_owned())),
        }
    }
}

/// User or agent name as carried in credentials.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Identity(String);

impl Identity {
    pub fn new(name: impl Into<String>) -> Result<Self, PolicyError> {
        let name = name.into();
        if name.is_empty() {
            return Err(PolicyError::EmptyIdentity);
        }
        Ok(Self(name))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Identity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Identity {
    fn from(s: &str) -> Self {
        Identity(s.to_owned())
    }
}

/// Normalized request path.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Resource(String);

impl Resource {
    pub fn new(path: &str) -> Result<Self, PolicyError> {
        if !path.starts_with('/') {
            return Err(PolicyError::InvalidPath(path.to_owned()));
        }
        let trimmed = path.trim_end_matches('/');
        Ok(Self(if trimmed.is_empty() { "/".to_owned() } else { trimmed.to_owned() }))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Resource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Resource {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Resource {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        Resource::new(&raw).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttrValue {
    Int(i64),
    Str(String),
}

pub type AttributeSet = BTreeMap<String, AttrValue>;

/// Inclusive hour-of-day bounds. `min_hour > max_hour` wraps around
/// midnight unless the policy asks for literal evaluation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub min_hour: u8,
    pub max_hour: u8,
    #[serde(default)]
    pub zone_label: String,
}

impl TimeWindow {
    pub fn new(min_hour: u8, max_hour: u8, zone_label: &str) -> Result<Self, PolicyError> {
        let w = Self { min_hour, max_hour, zone_label: zone_label.to_owned() };
        w.check()?;
        Ok(w)
    }

    fn check(&self) -> Result<(), PolicyError> {
        if self.min_hour > 23 || self.max_hour > 23 {
            return Err(PolicyError::InvalidWindow { min: self.min_hour, max: self.max_hour });
        }
        Ok(())
    }

    pub fn contains(&self, hour: u8, literal: bool) -> bool {
        if self.min_hour <= self.max_hour || literal {
            hour >= self.min_hour && hour <= self.max_hour
        } else {
            hour >= self.min_hour || hour <= self.max_hour
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Permission {
    pub method: Method,
    pub path: Resource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "==")]
    Eq,
}

impl Comparator {
    fn holds(self, actual: &AttrValue, wanted: &AttrValue) -> bool {
        use std::cmp::Ordering::*;
        let ord = match (actual, wanted) {
            (AttrValue::Int(a), AttrValue::Int(b)) => a.cmp(b),
            (AttrValue::Str(a), AttrValue::Str(b)) => a.cmp(b),
            _ => return false,
        };
        match self {
            Comparator::Lt => ord == Less,
            Comparator::Le => ord != Greater,
            Comparator::Gt => ord == Greater,
            Comparator::Ge => ord != Less,
            Comparator::Eq => ord == Equal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeCondition {
    pub attribute: String,
    pub comparator: Comparator,
    pub value: AttrValue,
}

impl AttributeCondition {
    pub fn new(attribute: &str, comparator: Comparator, value: AttrValue) -> Self {
        Self { attribute: attribute.to_owned(), comparator, value }
    }

    /// A missing attribute never satisfies a condition.
    pub fn holds(&self, attrs: &AttributeSet) -> bool {
        attrs.get(&self.attribute).is_some_and(|v| self.comparator.holds(v, &self.value))
    }
}

/// One disjunct of the allow decision. All conditions are conjunctive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AllowRule {
    pub user: Identity,
    #[serde(default)]
    pub require_rbac: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub attribute_conditions: Vec<AttributeCondition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub time_windows: Vec<TimeWindow>,
}

impl AllowRule {
    pub fn rbac(user: &str) -> Self {
        Self {
            user: Identity::from(user),
            require_rbac: true,
            attribute_conditions: Vec::new(),
            time_windows: Vec::new(),
        }
    }

    pub fn with_condition(mut self, c: AttributeCondition) -> Self {
        self.attribute_conditions.push(c);
        self
    }

    pub fn with_window(mut self, w: TimeWindow) -> Self {
        self.time_windows.push(w);
        self
    }

    fn is_unconditional(&self) -> bool {
        !self.require_rbac && self.attribute_conditions.is_empty() && self.time_windows.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefaultDecision {
    #[default]
    Deny,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDocument {
    #[serde(default)]
    pub default_decision: DefaultDecision,
    #[serde(default)]
    pub user_roles: IndexMap<Identity, Vec<String>>,
    #[serde(default)]
    pub role_permissions: IndexMap<String, Vec<Permission>>,
    #[serde(default)]
    pub user_attributes: BTreeMap<Identity, AttributeSet>,
    #[serde(default)]
    pub allow_rules: Vec<AllowRule>,
    /// Evaluate wrap-around windows as the literal (unsatisfiable)
    /// conjunction `hour >= min && hour <= max`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub strict_literal_windows: bool,
}

impl PolicyDocument {
    pub fn validate(&self) -> Result<(), PolicyError> {
        for (index, rule) in self.allow_rules.iter().enumerate() {
            if rule.is_unconditional() {
                return Err(PolicyError::UnconditionalRule { index });
            }
            for w in &rule.time_windows {
                w.check()?;
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let doc: PolicyDocument = crate::object_from_json(text)?;
        doc.validate()?;
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    /// Permissions flattened in document order; for compiled policies line
    /// `k` corresponds to workflow edge `k`.
    pub fn permission_lines(&self) -> Vec<(&str, &Permission)> {
        self.role_permissions
            .iter()
            .flat_map(|(role, perms)| perms.iter().map(move |p| (role.as_str(), p)))
            .collect()
    }

    pub fn permission_count(&self) -> usize {
        self.role_permissions.values().map(Vec::len).sum()
    }

    /// Whether some role of `user` grants `method` on `path`.
    pub fn rbac_allows(&self, user: &Identity, method: Method, path: &Resource) -> bool {
        self.user_roles.get(user).is_some_and(|roles| {
            roles.iter().any(|r| {
                self.role_permissions
                    .get(r)
                    .is_some_and(|ps| ps.iter().any(|p| p.method == method && &p.path == path))
            })
        })
    }

    /// Identities that are named by rules or role bindings.
    pub fn identities(&self) -> Vec<&Identity> {
        let mut ids: Vec<&Identity> = self.user_roles.keys().collect();
        for r in &self.allow_rules {
            if !ids.contains(&&r.user) {
                ids.push(&r.user);
            }
        }
        ids
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestContext {
    pub authorization_header: String,
    pub method: Method,
    pub path: Resource,
    pub clock_hour: u8,
    #[serde(default)]
    pub extra_attributes: AttributeSet,
}

impl RequestContext {
    pub fn new(user: &str, method: Method, path: &str, clock_hour: u8) -> Result<Self, PolicyError> {
        Ok(Self {
            authorization_header: basic_credential(user, "pw"),
            method,
            path: Resource::new(path)?,
            clock_hour,
            extra_attributes: AttributeSet::new(),
        })
    }

    pub fn with_attribute(mut self, name: &str, value: AttrValue) -> Self {
        self.extra_attributes.insert(name.to_owned(), value);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub verdict: Verdict,
    pub matched_rule_index: Option<usize>,
    pub reason: String,
    pub rules_evaluated: usize,
}

impl Decision {
    pub fn is_allow(&self) -> bool {
        self.verdict == Verdict::Allow
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resource_normalization() {
        assert_eq!(Resource::new("/api/x/").unwrap().as_str(), "/api/x");
        assert_eq!(Resource::new("/").unwrap().as_str(), "/");
        assert_eq!(Resource::new("//").unwrap().as_str(), "/");
        assert!(Resource::new("api").is_err());
    }

    #[test]
    fn windows() {
        let business = TimeWindow::new(8, 17, "Europe/Paris").unwrap();
        assert!(business.contains(8, false) && business.contains(17, false));
        assert!(!business.contains(7, false));
        let night = TimeWindow::new(17, 8, "Europe/Paris").unwrap();
        assert!(night.contains(3, false) && night.contains(17, false) && night.contains(8, false));
        assert!(!night.contains(12, false));
        assert!((0..24).all(|h| !night.contains(h, true)));
        assert!(TimeWindow::new(24, 3, "").is_err());
    }

    #[test]
    fn comparators() {
        let attrs = AttributeSet::from([("tenure".into(), AttrValue::Int(12))]);
        let c = |op, v| AttributeCondition::new("tenure", op, AttrValue::Int(v)).holds(&attrs);
        assert!(c(Comparator::Gt, 10));
        assert!(!c(Comparator::Gt, 12));
        assert!(c(Comparator::Ge, 12));
        assert!(c(Comparator::Le, 12) && c(Comparator::Eq, 12) && c(Comparator::Lt, 13));
        let s = AttributeCondition::new("tenure", Comparator::Eq, AttrValue::Str("12".into()));
        assert!(!s.holds(&attrs));
        let missing = AttributeCondition::new("grade", Comparator::Lt, AttrValue::Int(99));
        assert!(!missing.holds(&attrs));
    }

    #[test]
    fn unconditional_rules_are_rejected() {
        let text = r#"{"allow_rules":[{"user":"x"}]}"#;
        assert!(matches!(
            PolicyDocument::from_json(text),
            Err(PolicyError::UnconditionalRule { index: 0 })
        ));
        let unknown = r#"{"allow_rules":[],"default_allow":true}"#;
        assert!(PolicyDocument::from_json(unknown).is_err());
        let allow_default = r#"{"default_decision":"allow"}"#;
        assert!(PolicyDocument::from_json(allow_default).is_err());
        assert!(PolicyDocument::from_json("[]").is_err());
    }

    #[test]
    fn policy_json_round_trip() {
        let p = poc_policy();
        let text = p.to_json();
        assert!(text.contains("\"comparator\": \">\""));
        assert_eq!(PolicyDocument::from_json(&text).unwrap(), p);
    }
}
