//! Command-line front end for `blb-core`: config files, the five
//! subcommands and their JSON reports.

pub mod cli;
pub mod commands;
pub mod config;

pub use blb_core;
