//! Receding-horizon controller for the CAV.

pub mod chain;
pub mod controller;
pub mod qp;

pub use chain::{build_prediction_chain, AffineSeq, PredictedTrack, PredictionChain, VehiclePrediction};
pub use controller::{
    assemble_qp, build_reference, control_step, fail_safe_input, leader_follower_gap, worst_case_pv_trajectory,
    ControlOutput, ControllerConfig, PvPrediction, Snapshot, StepDiagnostics, StepStatus,
};
pub use qp::{kkt_residual, solve_qp, KktResidual, QpError, QpProblem, QpSettings, QpSolution, QpStatus};
