//! Geometry, networks and verification routines for a vision-based landing
//! controller.
//!
//! The crate is organised bottom-up: camera geometry and rasterization, an
//! exact ReLU encoding of the rasterizer, discrete-time aircraft dynamics, a
//! finite-state abstraction over a grid of image-line coordinates, a bounded
//! model checker for that abstraction, and a branch-and-bound verifier
//! (symbolic linear bounds) for the composed perception and control network.
//! [`pipeline`] ties the stages together behind a TOML configuration.

pub mod abstraction;
pub mod camera;
pub mod chart;
pub mod checker;
pub mod config;
pub mod dynamics;
pub mod interval;
pub mod network;
pub mod perception;
pub mod pipeline;
pub mod report;
pub mod training;
pub mod verifier;

pub use camera::{AircraftState, CameraIntrinsics, MonoImage, RunwayLine, RunwaySpec, ZetaCoords};
pub use interval::Interval;
pub use network::{Activation, Layer, LayeredReluNetwork, NetworkError};
