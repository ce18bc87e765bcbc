//! Simulation of a buyer-baseline gradient marketplace.

pub mod aggregate;
pub mod attack;
pub mod config;
pub mod data;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod trace;

pub use config::{load_config, load_config_file, load_config_with_overrides, MarketplaceConfig};
pub use error::{Error, Result};
