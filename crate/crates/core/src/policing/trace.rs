use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::engine::{FlowId, SimTime};

use super::PolicingError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceEvent {
    DataSent,
    AckReceived,
    LossDetected,
    Timeout,
}

impl TraceEvent {
    pub fn name(self) -> &'static str {
        match self {
            TraceEvent::DataSent => "data-sent",
            TraceEvent::AckReceived => "ack-received",
            TraceEvent::LossDetected => "loss-detected",
            TraceEvent::Timeout => "timeout",
        }
    }
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TraceEvent {
    type Err = PolicingError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "data-sent" => Ok(TraceEvent::DataSent),
            "ack-received" => Ok(TraceEvent::AckReceived),
            "loss-detected" => Ok(TraceEvent::LossDetected),
            "timeout" => Ok(TraceEvent::Timeout),
            other => Err(PolicingError::Io(format!("unknown trace event {other:?}"))),
        }
    }
}

/// One sender-side event. Window fields are present in simulator traces
/// and absent in traces reconstructed from the wire.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(rename = "time_ns")]
    pub time: SimTime,
    #[serde(rename = "flow_id")]
    pub flow: FlowId,
    pub event: TraceEvent,
    pub cwnd_before: Option<f64>,
    pub cwnd_after: Option<f64>,
    pub seq: Option<u64>,
    pub ack: Option<u64>,
}

/// Writes records as CSV with columns
/// `time_ns,flow_id,event,cwnd_before,cwnd_after,seq,ack`.
pub fn write_trace<W: Write>(writer: W, records: &[TraceRecord]) -> Result<(), PolicingError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in records {
        w.serialize(r).map_err(|e| PolicingError::Io(e.to_string()))?;
    }
    if records.is_empty() {
        w.write_record(["time_ns", "flow_id", "event", "cwnd_before", "cwnd_after", "seq", "ack"])
            .map_err(|e| PolicingError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| PolicingError::Io(e.to_string()))
}

pub fn read_trace<R: Read>(reader: R) -> Result<Vec<TraceRecord>, PolicingError> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize()
        .map(|row| row.map_err(|e| PolicingError::Io(e.to_string())))
        .collect()
}
