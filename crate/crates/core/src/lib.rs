//! Design of on-demand multimodal transit systems under congestion scenarios.
//!
//! A fixed bus/rail backbone between hubs is designed jointly with on-demand
//! shuttle legs. Riders are routed lexicographically (cost, then trip length)
//! under a transfer limit, the backbone is chosen by Benders decomposition,
//! and latent demand is handled by an adoption loop that alternates design
//! and rider choice.

pub mod adoption;
pub mod benders;
pub mod error;
pub mod experiment;
pub mod lp;
pub mod master;
pub mod model;
pub mod report;
pub mod router;
pub mod scenario;

pub use adoption::{solve_bilevel, sweep_adoption_factor, BilevelOptions, BilevelSolution};
pub use benders::{generate_cut, solve_fixed_demand, BendersCut, BendersOptions, BendersState, DesignSolution, FixedDemandInstance};
pub use error::{Error, Result};
pub use model::{arc_fixed_cost, arc_trip_contribution, ticket_benefit, Arc, CostParameters, Instance, Location, LocationKind, Locality, Mode, RiderClass, TransitNetwork, Trip};
pub use router::{apply_wait_postprocessing, evaluate_choice, solve_follower, AdoptionDecision, DesignVector, RoutedPath};
pub use scenario::{apply_congestion, build_scaling_matrix, DblOverlay, QrlSet, ScalingMatrix, ScenarioTag};
