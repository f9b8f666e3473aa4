//! The federated protocol: selection, client work, aggregation,
//! communication accounting, and the round engine that ties them together.

pub mod aggregate;
pub mod client;
pub mod comm;
pub mod engine;
pub mod selection;

pub use aggregate::{aggregate, optimized_weights, ClientContribution};
pub use client::{client_update_w_cd, client_update_wo_cd, train_epochs, ClientState, LocalSpec};
pub use comm::{comm_volume, reference_estimates, CommLedger, CommReport, ReferenceEstimates};
pub use engine::{run_experiment, Engine, RoundMetrics, RunOutput, ServerState};
pub use selection::{
    cohort_size, complement_group_for, exploit_probabilities, select_for_exploit,
    select_participants, SelectionOutcome,
};
