pub mod conditioning;
pub mod cascade;
pub mod cli;
pub mod corpus;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod motion;
pub mod netpbm;
pub mod optim;
pub mod schedule;
pub mod video;
