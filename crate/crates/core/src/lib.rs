//! Multi-channel differentiable Gaussian splatting and a semantic RGB-D SLAM
//! pipeline built on it.

pub mod camera;
pub mod config;
pub mod dataset;
pub mod image;
pub mod optim;
pub mod scene;
pub mod rasterizer;
pub mod losses;
pub mod keyframes;
pub mod metrics;
pub mod tracker;
pub mod editor;
pub mod mapper;
pub mod pipeline;
pub mod runner;
