//! Stage III: kinematic skeleton fitting.

pub mod calibration;
pub mod energy;
pub mod filter;
pub mod limits;
pub mod solver;
pub mod track;

pub use calibration::{calibrate_height, estimate_bone_lengths};
pub use energy::{energy, energy_gradient, Breakdown, EnergyWeights, Model, Targets};
pub use filter::{OneEuro, OneEuroParams};
pub use limits::JointLimits;
pub use solver::{minimize, SolveReport, SolverOptions};
pub use track::{fit_frame, init_track, FitConfig, Measurement, PoseTrack, RecoveryDecision, RecoveryMonitor};
