//! Feedback synthesis for separable drift control: structure condition,
//! feedback map from the projected gradient, Monte Carlo verification and the
//! frozen linear problem.

mod policy;
mod simulate;
mod structure;

pub use policy::{Action, FeedbackPolicy};
pub use simulate::{
    calibrate_allowance, simulate, verification_gap, GapEntry, GapReport, SimulationEstimate, SimulationParams,
    SEED_SCHEME,
};
pub use structure::{
    drift_span, feedback_map, freeze_and_resolve, nonlinear_argmax, structure_check, FrozenSolution, StructureEntry,
    StructureReport, STRUCTURE_TOL,
};

#[cfg(test)]
mod tests;
