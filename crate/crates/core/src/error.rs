//! Crate-wide error type.
//!
//! Every failure names the offending entity (bus label, line endpoints, slot
//! index) so callers can act on the message without digging through source.

use std::path::PathBuf;

use thiserror::Error;

use crate::conic::SolveStatus;
use crate::controller::SlotRecord;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("no bus is marked \"root\": true")]
    MissingRoot,

    #[error("buses {0} and {1} are both marked as root")]
    MultipleRoots(usize, usize),

    #[error("duplicate bus id {0}; duplicate rows are kept (first wins) only when every copy is marked suspect")]
    DuplicateBus(usize),

    #[error("line {from}-{to} references unknown bus {unknown}")]
    UnknownBus {
        from: usize,
        to: usize,
        unknown: usize,
    },

    #[error("line {0}-{0} connects a bus to itself")]
    SelfLoop(usize),

    #[error("buses {0} and {1} are connected by more than one line")]
    DuplicateEdge(usize, usize),

    #[error("the feeder graph has a cycle (detected at bus {0})")]
    CycleDetected(usize),

    #[error("bus {0} is not connected to the root")]
    DisconnectedBus(usize),

    #[error("bus {bus}: {what}")]
    BadBusData { bus: usize, what: String },

    #[error("line {from}-{to}: {what}")]
    BadLineData {
        from: usize,
        to: usize,
        what: String,
    },

    #[error("invalid configuration: {0}")]
    BadConfig(String),

    #[error("scenario: {0}")]
    BadScenario(String),

    #[error("trace file {path}: {what}")]
    BadTrace { path: PathBuf, what: String },

    #[error("bus {0} carries load or PV but has no entry in the source-to-bus mapping")]
    UnmappedBus(usize),

    #[error("power flow did not converge after {iterations} iterations (last voltage change {last_delta:.3e})")]
    PfDiverged { iterations: usize, last_delta: f64 },

    #[error("voltage collapse at bus {bus}: squared magnitude {v:.6} is not positive")]
    VoltageCollapse { bus: usize, v: f64 },

    #[error("malformed conic problem: {0}")]
    BadProblem(String),

    #[error("slot {t}: subproblem solve finished with status {status:?}")]
    SlotSolve { t: usize, status: SolveStatus },

    #[error("run aborted at slot {t}: {source}")]
    RunAborted {
        t: usize,
        /// Records for the slots completed before the failure.
        partial: Vec<SlotRecord>,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap a `std::io::Error` with the path it occurred on.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
