pub mod cli;
pub mod dataset;
pub mod dsp;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod spectrogram;
