use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::policy::{evaluate, expand_path, AttributeSet, Method, PolicyDocument, RequestContext, INFLATED_PREFIX};

use super::DEFAULT_PATH_TEMPLATE;

/// Context every cell is evaluated at.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixContext {
    pub clock_hour: u8,
    pub attributes: AttributeSet,
    pub path_template: String,
}

impl Default for MatrixContext {
    fn default() -> Self {
        Self { clock_hour: 8, attributes: AttributeSet::new(), path_template: DEFAULT_PATH_TEMPLATE.into() }
    }
}

/// Rows are sources, columns destinations; empty cells are omitted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessControlMatrix {
    pub services: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<String, BTreeSet<Method>>>,
}

impl AccessControlMatrix {
    pub fn allows(&self, src: &str, dst: &str, method: Method) -> bool {
        self.cells.get(src).and_then(|row| row.get(dst)).is_some_and(|m| m.contains(&method))
    }

    pub fn insert(&mut self, src: &str, dst: &str, method: Method) {
        self.cells.entry(src.to_owned()).or_default().entry(dst.to_owned()).or_default().insert(method);
    }

    /// Allowed (src, dst, method) triples.
    pub fn triples(&self) -> BTreeSet<(String, String, Method)> {
        self.cells
            .iter()
            .flat_map(|(s, row)| {
                row.iter().flat_map(move |(d, ms)| ms.iter().map(move |m| (s.clone(), d.clone(), *m)))
            })
            .collect()
    }

    pub fn cell_count(&self) -> usize {
        self.cells.values().flat_map(|r| r.values()).map(BTreeSet::len).sum()
    }

    /// Text grid in the style of a source-by-destination table.
    pub fn render(&self) -> String {
        let width = self.services.iter().map(String::len).max().unwrap_or(0).max(4);
        let mut out = format!("{:width$}", "");
        for d in &self.services {
            out.push_str(&format!(" | {d:width$}"));
        }
        out.push('\n');
        for s in &self.services {
            out.push_str(&format!("{s:width$}"));
            for d in &self.services {
                let cell = self
                    .cells
                    .get(s)
                    .and_then(|r| r.get(d))
                    .map(|ms| ms.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(","))
                    .unwrap_or_default();
                out.push_str(&format!(" | {cell:width$}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Services named by the policy, excluding synthetic padding identities.
fn policy_services(policy: &PolicyDocument) -> Vec<String> {
    let mut s: Vec<String> = policy
        .identities()
        .into_iter()
        .map(|i| i.as_str().to_owned())
        .filter(|i| !i.starts_with(INFLATED_PREFIX))
        .collect();
    s.sort();
    s
}

pub fn extract_matrix(policy: &PolicyDocument, ctx: &MatrixContext) -> AccessControlMatrix {
    extract_matrix_for(policy, &policy_services(policy), ctx)
}

/// Evaluates the policy for every (src, dst, method) over `services`.
pub fn extract_matrix_for(policy: &PolicyDocument, services: &[String], ctx: &MatrixContext) -> AccessControlMatrix {
    let mut services = services.to_vec();
    services.sort();
    services.dedup();
    let mut m = AccessControlMatrix { services: services.clone(), cells: BTreeMap::new() };
    for src in &services {
        for dst in &services {
            if src == dst {
                continue;
            }
            let Ok(path) = expand_path(&ctx.path_template, dst) else { continue };
            for method in Method::ALL {
                let Ok(mut rc) = RequestContext::new(src, method, path.as_str(), ctx.clock_hour) else { continue };
                rc.extra_attributes = ctx.attributes.clone();
                if evaluate(policy, &rc).is_allow() {
                    m.insert(src, dst, method);
                }
            }
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellDiff {
    pub src: String,
    pub dst: String,
    pub method: Method,
    /// True when the cell is allowed in the first matrix only.
    pub only_in_first: bool,
}

pub fn diff_matrix(a: &AccessControlMatrix, b: &AccessControlMatrix) -> Vec<CellDiff> {
    let (ta, tb) = (a.triples(), b.triples());
    let mut out: Vec<CellDiff> = ta
        .difference(&tb)
        .map(|(s, d, m)| CellDiff { src: s.clone(), dst: d.clone(), method: *m, only_in_first: true })
        .chain(tb.difference(&ta).map(|(s, d, m)| CellDiff {
            src: s.clone(),
            dst: d.clone(),
            method: *m,
            only_in_first: false,
        }))
        .collect();
    out.sort();
    out
}
