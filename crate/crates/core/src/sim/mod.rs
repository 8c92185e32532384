//! Deterministic closed-loop simulator, scenarios, presets and sweeps.

pub mod engine;
pub mod presets;
pub mod scenario;
pub mod sweep;

pub use engine::{
    check_feasibility, detect_formation_time, formation_time_from_flags, run, sample_hdv_params, CollisionReport, HdvEstimate, RunMetrics,
    RunResult, StepRecord, VehicleKind, VehicleRecord,
};
pub use presets::{preset, PRESET_NAMES};
pub use scenario::{
    EstimationConfig, HdvPopulation, InitialConditions, PvScript, Scenario, ScheduledLaneChange, SweepAxis, SweepSpec,
};
pub use sweep::{apply_axis, summarize, sweep, thread_cap, SweepCell, SweepSummary, THREADS_ENV};
