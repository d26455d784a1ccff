//! Independent reference solutions and distances used to validate flows.

mod ou;
mod particles;
mod w2;
mod zkb;

pub use ou::{ou_moments, OuMoments};
pub use particles::{mean_radius, particle_simulate, ring_deviation};
pub use w2::{empirical_w2, empirical_w2_subsampled, min_cost_assignment, W2Estimate, MAX_EXACT};
pub use zkb::{zkb_density, zkb_sample, ZkbProfile, ZkbReference};
