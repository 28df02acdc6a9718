//! Volumetric potential-field patient model for force-feedback rendering.
//!
//! The pipeline, end to end:
//!
//! 1. [`cloud`] / [`surface`] — merge posed depth scans into a world-frame
//!    point cloud and extract a structured cylindrical surface model with a
//!    rank-weighted Kalman contour filter.
//! 2. [`grid`] / [`field`] — discretize the torso interior into a cylindrical
//!    voxel grid and solve a finite-difference Laplace problem for the
//!    per-voxel potential field (positive inside the body, negative outside).
//! 3. [`shell`] / [`render`] — model the probe as a pointshell (surface points
//!    with inward normals and precomputed moment arms) and render 6-DOF
//!    contact wrenches from pointshell/voxel overlap, emitting the sparse
//!    observation rows used for fitting.
//! 4. [`impedance`] — fuse the Laplace prior with measured wrenches through a
//!    regularized least-squares solve, in batch or recursively.
//! 5. [`phantom`] / [`metrics`] — synthetic ground-truth phantoms, simulated
//!    scan trajectories, and the force magnitude/angle error metrics used to
//!    evaluate fitted models.
//!
//! File formats (clouds, scan manifests, surface models, scan logs, model
//! archives, reports, heatmaps) live in [`formats`].

pub mod cloud;
pub mod config;
pub mod error;
pub mod field;
pub mod formats;
pub mod grid;
pub mod heatmap;
pub mod impedance;
pub mod metrics;
pub mod phantom;
pub mod pose;
pub mod render;
pub mod shell;
pub mod sparse;
pub mod surface;

pub use error::{Error, Result};
