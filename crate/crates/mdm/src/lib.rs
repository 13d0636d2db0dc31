//! IO, file formats, configuration and the command-line driver around
//! [`mdm_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod reports;
pub mod streams;
pub mod synth;
pub mod workflow;
pub mod xyz;
