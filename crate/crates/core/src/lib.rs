//! Stability of planar viscous shock fronts and the cellular bifurcations
//! they undergo in a finite-width duct.

pub mod error;
pub mod duct;
pub mod evans;
pub mod exterior;
pub mod linalg;
pub mod lopatinski;
pub mod ode;
pub mod profiles;
pub mod refined;
pub mod simulate;
pub mod spectral;
pub mod systems;

pub use duct::{cascade, channel_spectrum, CascadeOptions, CascadePrediction, ChannelEigenvalue, Window};
pub use error::{Error, Result};
pub use evans::{EvansFunction, EvansValue};
pub use linalg::C64;
pub use profiles::{solve_profile, solve_profile_with, ProfileOptions, ShockProfile};
pub use refined::{CriticalCurve, EvansFamily, RefinedCoefficients, RefinedOptions};
pub use simulate::{integrate, Diagnostics, Seed, SimConfig, SimResult};
pub use spectral::{Rect, SpectralFamily, SpectralFunction};
pub use systems::{
    axial_jacobians, check_hypotheses, CoupledBurgers, FluxSystem, HypothesisReport, IsentropicEuler, ScalarBurgers,
    SystemSpec,
};
