use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Injected misbehaviour for exercising the compliance harness.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Fault {
    /// The agent's proxy fails open: every outbound request is allowed.
    DisablePolicySidecar { agent: String },
    /// Traffic between the two agents (either direction) bypasses mTLS.
    PlaintextChannel { a: String, b: String },
    /// The source proxy allows every method towards `dst`.
    RogueEdge { src: String, dst: String },
    /// The agent's certificate signature is corrupted.
    TamperCertificate { agent: String },
}

impl Fault {
    pub fn targets(&self) -> Vec<&str> {
        match self {
            Fault::DisablePolicySidecar { agent } | Fault::TamperCertificate { agent } => vec![agent],
            Fault::PlaintextChannel { a, b } => vec![a, b],
            Fault::RogueEdge { src, dst } => vec![src, dst],
        }
    }

    pub(crate) fn is_plaintext_between(&self, x: &str, y: &str) -> bool {
        matches!(self, Fault::PlaintextChannel { a, b } if (a == x && b == y) || (a == y && b == x))
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::DisablePolicySidecar { agent } => write!(f, "disable-policy:{agent}"),
            Fault::PlaintextChannel { a, b } => write!(f, "plaintext:{a},{b}"),
            Fault::RogueEdge { src, dst } => write!(f, "rogue-edge:{src},{dst}"),
            Fault::TamperCertificate { agent } => write!(f, "tamper-cert:{agent}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid fault {0:?}; expected disable-policy:A, plaintext:A,B, rogue-edge:A,B or tamper-cert:A")]
pub struct ParseFaultError(pub String);

impl FromStr for Fault {
    type Err = ParseFaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseFaultError(s.to_owned());
        let (kind, args) = s.split_once(':').ok_or_else(err)?;
        let args: Vec<&str> = args.split(',').map(str::trim).collect();
        if args.iter().any(|a| a.is_empty()) {
            return Err(err());
        }
        let owned = |i: usize| args[i].to_owned();
        match (kind.trim(), args.len()) {
            ("disable-policy", 1) => Ok(Fault::DisablePolicySidecar { agent: owned(0) }),
            ("tamper-cert", 1) => Ok(Fault::TamperCertificate { agent: owned(0) }),
            ("plaintext", 2) => Ok(Fault::PlaintextChannel { a: owned(0), b: owned(1) }),
            ("rogue-edge", 2) => Ok(Fault::RogueEdge { src: owned(0), dst: owned(1) }),
            _ => Err(err()),
        }
    }
}
