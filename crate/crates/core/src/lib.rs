//! Gaussian scene models for 4D radar with view-dependent radar cross section
//! (RCS) and RCS-aware SE(3) scan matching.

pub mod doppler;
pub mod io;
pub mod matcher;
pub mod model;
pub mod scan;
pub mod se3;
pub mod seed;
pub mod sh;
pub mod sweep;
pub mod synth;

pub use model::{Gaussian, GaussianModel, ModelConfig};
pub use scan::{RadarPoint, Scan};
pub use se3::{pose_error, Pose, Twist};
pub use sh::{IncidenceDirection, ShVector};
