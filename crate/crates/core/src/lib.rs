pub mod baseline;
pub mod bench;
pub mod datamodel;
pub mod denoise;
pub mod error;
pub mod fca;
pub mod hull;
pub mod linalg;
pub mod metrics;
pub mod nnls;
pub mod synth;
