//! Finite element simulation of calcium dynamics in a 2D cell with an
//! endoplasmic reticulum.
//!
//! The cell is a disk of radius `r_outer` whose interior holds a smaller
//! concentric disk (the ER) of radius `r_inner`. Free calcium `u` and a
//! buffer `b` diffuse and react in the cytosol annulus; stored calcium `u_e`
//! diffuses in the ER. The two calcium fields are coupled across the ER
//! membrane by nonlinear fluxes (RyR channels gated by a per-node ODE system,
//! SERCA pumps, leak), and the plasma membrane carries PMCA/NCX pumps, a leak
//! and a stimulus influx. Time stepping is implicit in the diffusion
//! operators and explicit in every nonlinear boundary/reaction term, so each
//! step reduces to three independent SPD solves plus a gating sweep.

pub mod fem;
pub mod flux;
pub mod gating;
pub mod mesh;
pub mod mms;
pub mod output;
pub mod scenario;
pub mod sparse;
pub mod stepper;

pub use flux::{FluxParams, InfluxPulse, ReactionParams};
pub use gating::{ChannelState, GatingField, RateConstants};
pub use mesh::{DomainTag, EdgeMarker, InterfaceMap, Mesh2D};
pub use scenario::ScenarioConfig;
pub use sparse::{SolverHandle, SparseMatrixSym};
pub use stepper::{FieldState, Geometry, RunOutcome, RunSummary, Simulation};

/// Format a float with 17 significant digits, enough to reproduce the exact
/// `f64` on re-parse. Used by every text writer (mesh, CSV, VTK).
pub(crate) fn fmt_full(v: f64) -> String {
    format!("{v:.16e}")
}
