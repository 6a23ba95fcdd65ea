//! End-to-end simulator for learned point-cloud transmission over noisy
//! wireless channels.
//!
//! The pipeline tokenizes a point cloud into patch-level latent features,
//! scores each token's reconstruction sensitivity, quantizes and
//! power-normalizes the selected payload, passes it through an AWGN or
//! block-Rayleigh channel model, and reconstructs the cloud with an
//! SNR-conditioned decoder. A classical separate source/channel baseline
//! (octree codec + LDPC + QAM) and point-to-point / point-to-plane PSNR
//! metrics complete the test bench.

pub mod channel;
pub mod checkpoint;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pointcloud;
pub mod quantizer;
pub mod random;
pub mod runner;
pub mod sscc;
pub mod stf;
pub mod tensor;
pub mod trainer;

pub use tensor::{Tape, Tensor};
