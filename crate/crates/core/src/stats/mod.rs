//! Descriptive statistics, pooled t-test with Cohen's d, one-way ANOVA with
//! partial eta squared, and Bonferroni-adjusted pairwise t-tests.

pub mod dist;

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

pub use dist::{f_sf, inc_beta, ln_gamma, t_cdf, t_two_sided_p};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("sample {label:?} has {n} value(s); at least 2 are required")]
    TooFewValues { label: String, n: usize },
    #[error("sample {0:?} contains a non-finite value")]
    NonFinite(String),
    #[error("at least 2 groups are required, got {0}")]
    TooFewGroups(usize),
    #[error("all values are identical; variance is 0/0")]
    DegenerateVariance,
    #[error("csv: {0}")]
    Csv(String),
}

/// Labelled measurements, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub label: String,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self, StatsError> {
        let s = Self { label: label.into(), values };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<(), StatsError> {
        if self.values.len() < 2 {
            return Err(StatsError::TooFewValues { label: self.label.clone(), n: self.values.len() });
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(self.label.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

pub fn describe(s: &SampleSet) -> Result<Summary, StatsError> {
    s.check()?;
    let n = s.values.len();
    let mean = s.values.iter().sum::<f64>() / n as f64;
    let ss: f64 = s.values.iter().map(|v| (v - mean).powi(2)).sum();
    Ok(Summary { n, mean, sd: (ss / (n - 1) as f64).sqrt() })
}

/// Writes infinities as the strings "inf" / "-inf".
fn finite_or_marker<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTestResult {
    #[serde(serialize_with = "finite_or_marker")]
    pub t: f64,
    pub df: u64,
    pub p: f64,
    #[serde(serialize_with = "finite_or_marker")]
    pub cohen_d: f64,
}

fn check_n(label: &str, n: usize) -> Result<(), StatsError> {
    if n < 2 {
        return Err(StatsError::TooFewValues { label: label.to_owned(), n });
    }
    Ok(())
}

/// Student's pooled-variance t-test from summary statistics.
pub fn t_from_summary(m1: f64, sd1: f64, n1: usize, m2: f64, sd2: f64, n2: usize) -> Result<TTestResult, StatsError> {
    check_n("first", n1)?;
    check_n("second", n2)?;
    let df = (n1 + n2 - 2) as f64;
    let pooled_var = ((n1 - 1) as f64 * sd1 * sd1 + (n2 - 1) as f64 * sd2 * sd2) / df;
    let sp = pooled_var.sqrt();
    let diff = m1 - m2;
    let (t, cohen_d) = if sp == 0.0 {
        if diff == 0.0 {
            (0.0, 0.0)
        } else {
            (f64::INFINITY.copysign(diff), f64::INFINITY.copysign(diff))
        }
    } else {
        (diff / (sp * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt()), diff / sp)
    };
    Ok(TTestResult { t, df: df as u64, p: t_two_sided_p(t, df), cohen_d })
}

pub fn t_test(a: &SampleSet, b: &SampleSet) -> Result<TTestResult, StatsError> {
    let (x, y) = (describe(a)?, describe(b)?);
    t_from_summary(x.mean, x.sd, x.n, y.mean, y.sd, y.n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnovaResult {
    #[serde(rename = "F", serialize_with = "finite_or_marker")]
    pub f: f64,
    pub df_between: u64,
    pub df_within: u64,
    pub p: f64,
    pub eta_sq_partial: f64,
    pub ss_between: f64,
    pub ss_within: f64,
}

pub fn anova(groups: &[SampleSet]) -> Result<AnovaResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    let summaries = groups.iter().map(describe).collect::<Result<Vec<_>, _>>()?;
    let total: usize = summaries.iter().map(|s| s.n).sum();
    let grand = groups.iter().flat_map(|g| &g.values).sum::<f64>() / total as f64;
    let ss_between: f64 = summaries.iter().map(|s| s.n as f64 * (s.mean - grand).powi(2)).sum();
    let ss_within: f64 = groups
        .iter()
        .zip(&summaries)
        .map(|(g, s)| g.values.iter().map(|v| (v - s.mean).powi(2)).sum::<f64>())
        .sum();
    if ss_between + ss_within == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let df_between = (groups.len() - 1) as f64;
    let df_within = (total - groups.len()) as f64;
    let f = if ss_within == 0.0 { f64::INFINITY } else { (ss_between / df_between) / (ss_within / df_within) };
    Ok(AnovaResult {
        f,
        df_between: df_between as u64,
        df_within: df_within as u64,
        p: f_sf(f, df_between, df_within),
        eta_sq_partial: ss_between / (ss_between + ss_within),
        ss_between,
        ss_within,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseResult {
    pub pair: (String, String),
    pub mean_diff: f64,
    #[serde(serialize_with = "finite_or_marker")]
    pub t: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub significant: bool,
}

/// Every unordered pair, in input order, with Bonferroni-adjusted p.
pub fn pairwise(groups: &[SampleSet]) -> Result<Vec<PairwiseResult>, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    let m = (groups.len() * (groups.len() - 1) / 2) as f64;
    let mut out = Vec::new();
    for (i, a) in groups.iter().enumerate() {
        for b in &groups[i + 1..] {
            let r = t_test(a, b)?;
            let p_adjusted = (r.p * m).min(1.0);
            out.push(PairwiseResult {
                pair: (a.label.clone(), b.label.clone()),
                mean_diff: describe(a)?.mean - describe(b)?.mean,
                t: r.t,
                p: r.p,
                p_adjusted,
                significant: p_adjusted < ALPHA,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub label: String,
    #[serde(flatten)]
    pub summary: Summary,
}

/// Full analysis of the groups sharing one scope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopeReport {
    pub scope: String,
    pub groups: Vec<GroupSummary>,
    /// Present when the scope has exactly two groups.
    pub t_test: Option<TTestResult>,
    pub anova: Option<AnovaResult>,
    pub pairwise: Vec<PairwiseResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub scopes: Vec<ScopeReport>,
}

pub fn analyze_scope(scope: &str, groups: &[SampleSet]) -> Result<ScopeReport, StatsError> {
    let summaries = groups
        .iter()
        .map(|g| Ok(GroupSummary { label: g.label.clone(), summary: describe(g)? }))
        .collect::<Result<Vec<_>, StatsError>>()?;
    let t = if groups.len() == 2 { Some(t_test(&groups[0], &groups[1])?) } else { None };
    let a = if groups.len() >= 2 { Some(anova(groups)?) } else { None };
    let pw = if groups.len() >= 2 { pairwise(groups)? } else { Vec::new() };
    Ok(ScopeReport { scope: scope.to_owned(), groups: summaries, t_test: t, anova: a, pairwise: pw })
}

pub fn analyze(scoped: &[(String, Vec<SampleSet>)]) -> Result<StatsReport, StatsError> {
    let scopes = scoped.iter().map(|(s, g)| analyze_scope(s, g)).collect::<Result<_, _>>()?;
    Ok(StatsReport { scopes })
}

#[derive(Debug, Deserialize)]
struct Row {
    label: String,
    value: f64,
    #[serde(default)]
    scope: Option<String>,
}

pub const DEFAULT_SCOPE: &str = "all";

/// Reads `label,value[,scope]` rows. Groups keep first-appearance order
/// within a scope; scopes are sorted.
pub fn read_samples_csv<R: Read>(input: R) -> Result<Vec<(String, Vec<SampleSet>)>, StatsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut scopes: BTreeMap<String, Vec<SampleSet>> = BTreeMap::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| StatsError::Csv(e.to_string()))?;
        let scope = row.scope.filter(|s| !s.is_empty()).unwrap_or_else(|| DEFAULT_SCOPE.to_owned());
        let groups = scopes.entry(scope).or_default();
        match groups.iter_mut().find(|g| g.label == row.label) {
            Some(g) => g.values.push(row.value),
            None => groups.push(SampleSet { label: row.label, values: vec![row.value] }),
        }
    }
    for g in scopes.values().flatten() {
        g.check()?;
    }
    Ok(scopes.into_iter().collect())
}
