//! Attention-based deepfake detection toolkit.
//!
//! Landmark-driven attention masks reweight the intermediate features of a
//! small convolutional detector (image-level 2D and sequence-level 3D
//! variants), and the same masks drive an attention-based face fusion that
//! synthesizes labeled fake faces for desk-scale experiments. Includes
//! dataset ingestion, a train/eval harness and checkpointing.

pub mod data;
pub mod fusion;
pub mod geometry;
pub mod model;
pub mod image;
pub mod maskgen;
pub mod oracles;
pub mod synthface;
pub mod tensor;
pub mod trainer;
