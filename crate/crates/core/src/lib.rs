//! Target-pose generation for hanging a mug on a rack: SE(3) diffusion with
//! decoupled translation and rotation chains, a conditional noise-prediction
//! network, and a voxel-based refinement stage that turns near-miss poses
//! into collision-free hanging poses.

pub mod denoiser;
pub mod harness;
pub mod igso3;
pub mod posediff;
pub mod refine;
pub mod rotmath;
pub mod scenegeom;
pub mod schedule;

pub use posediff::{NoisePair, Pose};
pub use rotmath::{AxisAngle, Rotation};
