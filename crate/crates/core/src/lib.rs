//! Mode-switching stability analysis of a PV-battery-CPL DC microgrid.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`); the aliases below fix it
//! to `f64`, which is what the studies and the command-line front end use.

pub mod equilibria;
pub mod error;
pub mod integrator;
pub mod model;
pub mod roa;
pub mod scalar;
pub mod studies;
pub mod switched;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use scalar::Scalar;

pub use equilibria::Stability;
pub use model::Mode;
pub use roa::{CellLabel, Membership};
pub use studies::ModelKind;
pub use switched::{Outcome, StrategyKind, Trigger};

pub type CircuitParams = model::CircuitParams<f64>;
pub type ControlParams = model::ControlParams<f64>;
pub type ModeDef = model::ModeDef<f64>;
pub type ModeTable = model::ModeTable<f64>;
pub type Plant = model::Plant<f64>;
pub type RomState = model::RomState<f64>;
pub type FullState = model::FullState<f64>;
pub type EcplProfile = model::EcplProfile<f64>;
pub type Equilibrium = equilibria::Equilibrium<f64>;
pub type IntegratorConfig = integrator::IntegratorConfig<f64>;
pub type Thresholds = switched::Thresholds<f64>;
pub type SwitchingStrategy = switched::SwitchingStrategy<f64>;
pub type SimConfig = switched::SimConfig<f64>;
pub type Verdict = switched::Verdict<f64>;
pub type RomModel = switched::RomModel<f64>;
pub type FullModel = switched::FullModel<f64>;
pub type RomTrajectory = switched::Trajectory<f64, 2>;
pub type FullTrajectory = switched::Trajectory<f64, 6>;
pub type RoaBox = roa::RoaBox<f64>;
pub type EsepContext = roa::EsepContext<f64>;
pub type RoaBoundary = roa::RoaBoundary<f64>;
pub type MembershipGrid = roa::MembershipGrid<f64>;
pub type TraceConfig = roa::TraceConfig<f64>;
pub type CaseSpec = studies::CaseSpec<f64>;
pub type StudyEnv = studies::StudyEnv<f64>;
pub type CriticalSpec = studies::CriticalSpec<f64>;
pub type SweepSpec = studies::SweepSpec<f64>;
