//! Command-line driver and HTTP review service for labelwright.

pub mod server;
