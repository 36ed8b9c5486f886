//! `arst` command line and HTTP service.

pub mod alpha;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod service;
