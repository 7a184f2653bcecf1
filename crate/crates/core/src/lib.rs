//! Task-oriented shape completion and grasp generation from partial point clouds.
//!
//! The pipeline runs in three stages. Candidate generation produces fixed-size
//! completion hypotheses from a partial cloud by aligning (task-weighted scaled
//! ICP) and fusing the output of a pluggable generative backend. A
//! discriminative autoencoder scores each candidate's plausibility against
//! dual Gaussian latent targets and decodes a restored cloud from the best
//! one. A constraint-corrected conditional flow-matching model then generates
//! grasp vectors for a parametric fingertip gripper, conditioned on the
//! restored shape and the task.
//!
//! Crate layout mirrors the stages:
//! - [`geom`]: point-cloud carriers, sampling, visibility, set metrics
//! - [`io`]: PLY/OBJ readers and writers
//! - [`register`]: task-weighted similarity ICP and cloud fusion
//! - [`synth`]: procedural objects, partial views, sabotage datasets
//! - [`candgen`]: candidate generation orchestration and backends
//! - [`nnet`]: dense tensors, layers with analytic gradients, Adam
//! - [`dae`]: discriminative autoencoder training, scoring, restoration
//! - [`flowgrasp`]: gripper kinematics, constraints, flow matching
//! - [`evalx`]: penetration, displacement, contact, completion reports

pub mod candgen;
pub mod dae;
pub mod error;
pub mod geom;
pub mod io;
pub mod nnet;
pub mod register;
pub mod synth;
pub mod rng;

pub use error::{Error, Result};
pub use geom::{PatchSet, PointCloud, Vec3};
pub use register::{RegistrationResult, SimilarityTransform};
