pub mod config;
pub mod dataset;
pub mod evaluation;
pub mod geometry;
pub mod mapping;
pub mod pipeline;
pub mod rng;
pub mod segmentation;
pub mod simulator;
pub mod tracking;
