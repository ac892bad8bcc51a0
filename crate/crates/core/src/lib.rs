//! Predictive 3D reconstruction for orthogonal stereo imaging sonar.
//!
//! Two identical imaging sonars, one mounted horizontally and one rotated
//! 90 degrees, view the same scene. Each resolves range plus one angular
//! axis; fusing detections from both inside their shared overlap fan yields
//! full 3D points. Objects outside the overlap only appear in the horizontal
//! image, so a per-class Bayesian height model, trained online from fused
//! points, predicts the missing elevation for those returns. The result is
//! a denser predicted 3D map than stereo overlap alone can provide.

pub mod classification;
pub mod config;
pub mod detection;
pub mod fusion;
pub mod geometry;
pub mod inference;
pub mod mapping;
pub mod pipeline;
pub mod registration;
pub mod sim;
