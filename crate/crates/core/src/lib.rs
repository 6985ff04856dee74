//! Desk-scale hand-object interaction reconstruction.
//!
//! The pipeline couples a dual-branch generative model (joint 2D mask
//! completion and 3D occupancy completion trained with conditional flow
//! matching) with classical geometry: render-and-match object pose
//! estimation, contact-based hand alignment, and trajectory/shape metrics.
//! A procedural scene generator provides the training and evaluation data.
//!
//! Modules map onto pipeline stages:
//!
//! - [`geometry`] — shared 3D math: cameras, meshes, rasterization, voxels
//! - [`flow`] — conditional flow matching objective and Euler sampling
//! - [`autodiff`] — reverse-mode tape used by the model
//! - [`model`] — dual-branch denoiser with bidirectional cross-attention
//! - [`synth`] — procedural hand-object scene generator and dataset IO
//! - [`pose`] — reference-view rendering, PnP/RANSAC, trajectory refinement
//! - [`handalign`] — visible-contact hand-to-object alignment
//! - [`metrics`] — Chamfer/F-score and ATE/RPE trajectory metrics
//! - [`config`] — key=value run configuration shared by the CLI

pub mod autodiff;
pub mod cli;
pub mod config;
pub mod flow;
pub mod geometry;
pub mod handalign;
pub mod metrics;
pub mod model;
pub mod pose;
pub mod synth;
