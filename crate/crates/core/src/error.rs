use thiserror::Error;

use crate::topology::{BreakerId, IbrId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("unknown IBR `{0}`")]
    UnknownIbr(IbrId),
    #[error("unknown breaker `{0}`")]
    UnknownBreaker(BreakerId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("island has load but no voltage source")]
    NoSource,
    #[error("singular network equations")]
    Singular,
    #[error("line `{0}` has zero impedance")]
    ZeroImpedance(String),
    #[error("constant-power load flow did not converge after {iterations} iterations (mismatch {mismatch:.3e})")]
    NewtonDiverged { iterations: usize, mismatch: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("averaged reactive setpoint is zero while voltage consensus gains are active")]
    ZeroReactiveSetpoint,
    #[error("setpoint reassignment over an empty IBR set")]
    EmptyIsland,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteadyStateError {
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("steady-state Newton did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("parameter count {params} does not match IBR count {ibrs}")]
    ParamMismatch { params: usize, ibrs: usize },
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("syntax error at line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("{}", .0.join("\n"))]
    Semantic(Vec<String>),
    #[error("{0}")]
    Serialize(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("network solve failed at t = {t:.4} s on island [{}]: {source}", .island.join(", "))]
    Network {
        t: f64,
        island: Vec<String>,
        source: NetworkError,
    },
    #[error("non-finite state derivative at t = {t:.4} s (IBR `{ibr}`)")]
    NonFinite { t: f64, ibr: IbrId },
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlotError {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("malformed CSV: {0}")]
    Malformed(String),
    #[error("drawing failed: {0}")]
    Draw(String),
}
