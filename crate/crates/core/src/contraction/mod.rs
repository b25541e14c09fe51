//! Circuit-to-tensor-network conversion, contraction planning and batched
//! execution.

mod execute;
mod network;
mod planner;

pub use execute::{
    amplitude_jacobian, amplitude_jacobian_reexecuted, execute_plan, execute_plan_traced,
    AmplitudeJacobian, Execution,
};
pub use network::{build_network, ParamBatch, StubPayload, TensorNetwork, TensorStub};
pub use planner::{
    plan_order, plan_with_order, ContractionPlan, Heuristic, PlanStep, EXHAUSTIVE_LABEL_LIMIT,
    MAX_EXECUTION_WIDTH,
};

use crate::circuit::{CircuitError, GateKind};
use crate::tensor::TensorError;

#[derive(Debug, thiserror::Error)]
pub enum ContractionError {
    #[error(transparent)]
    Circuit(#[from] CircuitError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("expected {expected} parameters per row, got {got}")]
    Binding { expected: usize, got: usize },
    #[error("network has {0} open legs; only closed networks can be planned")]
    OpenNetwork(usize),
    #[error("invalid elimination order: {0}")]
    InvalidOrder(String),
    #[error("exhaustive search refused: {labels} labels exceeds the limit of {limit}")]
    ExhaustiveTooLarge { labels: usize, limit: usize },
    #[error("plan width {width} exceeds the execution limit of {limit}")]
    WidthExceeded { width: usize, limit: usize },
    #[error("no shift-rule gradient for {0:?} parameters")]
    UnsupportedGradient(GateKind),
    #[error("plan was built for {plan_inputs} inputs but the network has {network_inputs}")]
    TopologyMismatch {
        plan_inputs: usize,
        network_inputs: usize,
    },
}
