//! Static grid model, admittance assembly and the AC power-flow transition.

mod admittance;
mod case;
pub mod linalg;
mod powerflow;

pub use admittance::{build_admittance, Admittance};
pub use case::{
    load_case, BusKind, BusSpec, GenKind, GeneratorSpec, GridCase, LineSpec, LoadSpec, CASE_FORMAT,
};
pub use powerflow::{mismatch_norm, solve_power_flow, Injections, PfOptions, PowerFlowSolution};
