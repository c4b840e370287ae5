pub mod cli;
pub mod config;
pub mod harness;
pub mod io;
