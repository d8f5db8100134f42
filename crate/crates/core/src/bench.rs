//! Startup and request-duration experiments over the simulated mesh,
//! producing `label,value,scope` samples for the stats module.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::{DeployError, Mesh, SendError, SimConfig};
use crate::policy::{expand_path, inflate_policy, Method, PolicyDocument};
use crate::workflow::WorkflowGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyLevel {
    #[serde(rename = "no-sidecar")]
    NoSidecar,
    #[serde(rename = "all-allow")]
    AllowAll,
    #[serde(rename = "minimal")]
    Minimal,
    #[serde(rename = "+100")]
    Plus100,
    #[serde(rename = "+1000")]
    Plus1000,
}

impl PolicyLevel {
    pub const ALL: [PolicyLevel; 5] =
        [PolicyLevel::NoSidecar, PolicyLevel::AllowAll, PolicyLevel::Minimal, PolicyLevel::Plus100, PolicyLevel::Plus1000];

    pub fn label(self) -> &'static str {
        match self {
            PolicyLevel::NoSidecar => "no-sidecar",
            PolicyLevel::AllowAll => "all-allow",
            PolicyLevel::Minimal => "minimal",
            PolicyLevel::Plus100 => "+100",
            PolicyLevel::Plus1000 => "+1000",
        }
    }

    /// Mesh configuration and sidecar policy for this level.
    pub fn apply(self, base: &SimConfig, minimal: &PolicyDocument) -> (SimConfig, PolicyDocument) {
        let mut cfg = *base;
        cfg.no_policy_sidecar = self == PolicyLevel::NoSidecar;
        cfg.allow_all = self == PolicyLevel::AllowAll;
        let policy = match self {
            PolicyLevel::NoSidecar | PolicyLevel::AllowAll => PolicyDocument::default(),
            PolicyLevel::Minimal => minimal.clone(),
            PolicyLevel::Plus100 => inflate_policy(minimal, 100),
            PolicyLevel::Plus1000 => inflate_policy(minimal, 1000),
        };
        (cfg, policy)
    }
}

impl fmt::Display for PolicyLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for PolicyLevel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.label() == s)
            .ok_or_else(|| format!("unknown level {s:?}; expected one of no-sidecar, all-allow, minimal, +100, +1000"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    Startup,
    Request,
}

impl FromStr for BenchKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "startup" => Ok(Self::Startup),
            "request" => Ok(Self::Request),
            other => Err(format!("unknown bench kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchSample {
    pub label: String,
    pub value: f64,
    pub scope: String,
}

pub const STARTUP_SCOPE: &str = "startup";
pub const INTRA_SCOPE: &str = "intra-region";
pub const INTER_SCOPE: &str = "inter-region";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("samples per cell must be at least 1")]
    ZeroSamples,
    #[error("no levels selected")]
    NoLevels,
    #[error("level {level}: {source}")]
    Deploy { level: PolicyLevel, source: DeployError },
    #[error("level {level}: {source}")]
    Send { level: PolicyLevel, source: SendError },
    #[error("level {level}: {src}->{dst} answered {status}; only authorized communications are timed")]
    Unauthorized { level: PolicyLevel, src: String, dst: String, status: u16 },
    #[error("workflow has no edges to time")]
    NoCommunications,
}

fn check(levels: &[PolicyLevel], samples: usize) -> Result<(), BenchError> {
    if samples == 0 {
        return Err(BenchError::ZeroSamples);
    }
    if levels.is_empty() {
        return Err(BenchError::NoLevels);
    }
    Ok(())
}

/// `deployments` fresh deploys per level; one sample per pod per deploy.
pub fn run_startup(
    graph: &WorkflowGraph,
    minimal: &PolicyDocument,
    levels: &[PolicyLevel],
    deployments: usize,
    base: &SimConfig,
) -> Result<Vec<BenchSample>, BenchError> {
    check(levels, deployments)?;
    let mut out = Vec::new();
    for (li, &level) in levels.iter().enumerate() {
        let (mut cfg, policy) = level.apply(base, minimal);
        for d in 0..deployments {
            cfg.seed = derive_seed(base.seed, li as u64, d as u64);
            let mesh = Mesh::deploy(graph, policy.clone(), cfg).map_err(|source| BenchError::Deploy { level, source })?;
            out.extend(mesh.pods().values().map(|p| BenchSample {
                label: level.label().into(),
                value: p.startup_duration,
                scope: STARTUP_SCOPE.into(),
            }));
        }
    }
    Ok(out)
}

/// `samples` timed requests per workflow edge per level, scoped by whether
/// both pods share a region.
pub fn run_request(
    graph: &WorkflowGraph,
    minimal: &PolicyDocument,
    levels: &[PolicyLevel],
    samples: usize,
    method: Method,
    path_template: &str,
    base: &SimConfig,
) -> Result<Vec<BenchSample>, BenchError> {
    check(levels, samples)?;
    if graph.edges.is_empty() {
        return Err(BenchError::NoCommunications);
    }
    let mut out = Vec::new();
    for (li, &level) in levels.iter().enumerate() {
        let (mut cfg, policy) = level.apply(base, minimal);
        cfg.seed = derive_seed(base.seed, li as u64, u64::MAX);
        cfg.capture = false;
        let mut mesh = Mesh::deploy(graph, policy, cfg).map_err(|source| BenchError::Deploy { level, source })?;
        for edge in &graph.edges {
            let path = expand_path(path_template, &edge.dst).map_err(|_| BenchError::Send {
                level,
                source: SendError::InvalidPath(path_template.to_owned()),
            })?;
            let scope =
                if graph.region_of(&edge.src) == graph.region_of(&edge.dst) { INTRA_SCOPE } else { INTER_SCOPE };
            for _ in 0..samples {
                let r = mesh
                    .send(&edge.src, &edge.dst, method, path.as_str(), b"bench")
                    .map_err(|source| BenchError::Send { level, source })?;
                if r.status >= 400 {
                    return Err(BenchError::Unauthorized {
                        level,
                        src: edge.src.clone(),
                        dst: edge.dst.clone(),
                        status: r.status,
                    });
                }
                out.push(BenchSample { label: level.label().into(), value: r.latency_s, scope: scope.into() });
            }
        }
    }
    Ok(out)
}

fn derive_seed(seed: u64, level: u64, run: u64) -> u64 {
    let mut x = seed ^ level.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ run.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^= x >> 31;
    x.wrapping_mul(0x94d0_49bb_1331_11eb)
}

pub fn write_samples_csv<W: Write>(out: W, samples: &[BenchSample]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}
