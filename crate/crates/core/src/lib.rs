//! Zero-trust enforcement of owner-defined workflows.
//!
//! Workflows are compiled into default-deny policies, deployed on a simulated
//! service mesh whose proxies enforce them over mutually authenticated
//! channels, and audited by capturing every interface during an exhaustive
//! sweep of communications.

pub mod bench;
pub mod cli;
pub mod harness;
pub mod identity;
pub mod mesh;
pub mod policy;
pub mod stats;
pub mod workflow;

/// Deserializes a JSON object. serde also accepts a struct written as an
/// array of its fields, which no input file is meant to be.
pub(crate) fn object_from_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, serde_json::Error> {
    if !text.trim_start().starts_with('{') {
        return Err(serde::de::Error::custom("expected a JSON object"));
    }
    serde_json::from_str(text)
}
