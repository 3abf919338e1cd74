use alloc::string::String;

use crate::sim::JointName;
use crate::wtnpb::{Modality, ModalityMask};

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{joint} command {value_deg} deg outside range [{min_deg}, {max_deg}]")]
    JointRange {
        joint: JointName,
        value_deg: f64,
        min_deg: f64,
        max_deg: f64,
    },
    #[error("deflection fixed point did not converge (residual {residual} deg)")]
    DeflectionDiverged { last_deg: [f64; 4], residual: f64 },
    #[error("center of gravity ({0:?}) mm is outside the support polygon")]
    Unstable([f64; 2]),
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("mask requests absent modality {0:?}")]
    AbsentModality(Modality),
    #[error("mask {0} is not in the feasible mask set")]
    InfeasibleMask(ModalityMask),
    #[error("loss mask selects no modality")]
    EmptyLossMask,
    #[error("sensor dimension {0} has zero variance")]
    DegenerateNormalizer(usize),
    #[error("pose sampler accepted {accepted} of {attempts} draws")]
    LowAcceptance { accepted: usize, attempts: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
}
