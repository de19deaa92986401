//! Vector fields and integrators for every flow of the model.
//!
//! * [`effective_rhs`] / [`moment_form_rhs`]: one layer driven by its own
//!   cluster, valid when the clusters are separated.
//! * [`general_rhs`]: all layers, all clusters, through the full chain.
//! * [`collapsed_rhs`]: standard cost with fully collapsed clusters.
//! * [`clustered_explicit`]: closed-form output-layer flow.
//! * [`one_dim_flow`]: closed-form scalar bias flow.

mod clustered;
mod collapsed;
mod integrate;
mod oned;
mod rhs;

pub use clustered::{clustered_explicit, clustered_limit, clustered_rhs, GRAM_MIN_RATIO};
pub use collapsed::{
    collapsed_rhs, conserved_quantity, integrate_collapsed, CollapsedSample, CollapsedState, CollapsedTrajectory,
};
pub use integrate::{
    effective_cost, integrate, integrate_effective, integrate_general, Direction, Event, FlowKind, FlowSample,
    IntegratorOptions, LayerDiagnostics, Trajectory,
};
pub use oned::{one_dim_flow, OneDimSolution, Segment};
pub use rhs::{chained_projectors, effective_rhs, general_rhs, moment_form_rhs, ChainedProjectors, LayerRhs};
