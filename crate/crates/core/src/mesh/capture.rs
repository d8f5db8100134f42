use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::EnforcementPoint;
use crate::policy::Method;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InterfaceKind {
    Loopback,
    External,
}

impl InterfaceKind {
    pub const ALL: [InterfaceKind; 2] = [InterfaceKind::Loopback, InterfaceKind::External];
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapturePoint {
    pub pod: String,
    pub interface: InterfaceKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    PlaintextHttp,
    Mtls,
}

/// Readable HTTP fields. `status` is absent on requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpInfo {
    pub method: Method,
    pub path: String,
    pub status: Option<u16>,
}

/// One observed packet exchange at a capture point. HTTP fields are only
/// visible when the transport is plaintext.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureRecord {
    pub point: CapturePoint,
    pub src_identity: String,
    pub dst_identity: String,
    pub transport: Transport,
    pub http: Option<HttpInfo>,
    pub virtual_time: u64,
}

/// Written once at the start of a sweep.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunHeader {
    pub services: Vec<String>,
    pub methods: Vec<Method>,
    pub enforcement_point: EnforcementPoint,
    pub clock_hour: u8,
    pub path_template: String,
    pub seed: u64,
}

/// Records following a marker, up to the next marker, belong to its case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseMarker {
    pub index: usize,
    pub src: String,
    pub dst: String,
    pub method: Method,
    pub virtual_time: u64,
}

/// Line of a capture log. Record lines are bare `CaptureRecord` objects;
/// header and marker lines are wrapped as `{"run": ..}` and `{"case": ..}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CaptureEvent {
    Run { run: RunHeader },
    Case { case: CaseMarker },
    Capture(CaptureRecord),
}

#[derive(Debug, Error)]
pub enum CaptureLogError {
    #[error("capture log line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error("capture log: {0}")]
    Io(#[from] std::io::Error),
}

pub fn write_capture_log<W: Write>(mut out: W, events: &[CaptureEvent]) -> std::io::Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn read_capture_log<R: BufRead>(input: R) -> Result<Vec<CaptureEvent>, CaptureLogError> {
    let mut events = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e = serde_json::from_str(&line)
            .map_err(|source| CaptureLogError::Parse { line: i + 1, source })?;
        events.push(e);
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_line_shape() {
        let e = CaptureEvent::Capture(CaptureRecord {
            point: CapturePoint { pod: "owner".into(), interface: InterfaceKind::External },
            src_identity: "owner".into(),
            dst_identity: "vfx-1".into(),
            transport: Transport::Mtls,
            http: None,
            virtual_time: 3,
        });
        let mut buf = Vec::new();
        write_capture_log(&mut buf, std::slice::from_ref(&e)).unwrap();
        let line = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            line,
            "{\"point\":{\"pod\":\"owner\",\"interface\":\"external\"},\"src_identity\":\"owner\",\"dst_identity\":\"vfx-1\",\"transport\":\"mtls\",\"http\":null,\"virtual_time\":3}\n"
        );
        assert_eq!(read_capture_log(&buf[..]).unwrap(), vec![e]);
    }

    #[test]
    fn markers_round_trip() {
        let e = CaptureEvent::Case {
            case: CaseMarker { index: 4, src: "a".into(), dst: "b".into(), method: Method::Get, virtual_time: 9 },
        };
        let mut buf = Vec::new();
        write_capture_log(&mut buf, std::slice::from_ref(&e)).unwrap();
        assert!(buf.starts_with(b"{\"case\":{"));
        assert_eq!(read_capture_log(&buf[..]).unwrap(), vec![e]);
    }

    #[test]
    fn truncated_line_is_an_error() {
        let text = "{\"case\":{\"index\":0,\"src\":\"a\"";
        assert!(matches!(read_capture_log(text.as_bytes()), Err(CaptureLogError::Parse { line: 1, .. })));
    }
}
