//! Similarity transforms, closed-form alignment of corresponded point sets,
//! and trimmed scale-aware ICP.

mod icp;
mod least_squares;
mod sim3;

pub use icp::{trimmed_icp, IcpConfig, IcpIteration, IcpOutcome, IcpStop};
pub use least_squares::{rms_residual, sim3_least_squares};
pub use sim3::{rotation_angle_between, yaw_rotation, Sim3};
