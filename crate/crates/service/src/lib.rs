//! HTTP API, configuration and persistence wiring for the genedit engine.

pub mod api;
pub mod auth;
pub mod commands;
pub mod config;
pub mod error;
pub mod idempotency;
pub mod state;
pub mod traces;

pub use api::router;
pub use config::{ConfigError, ServiceConfig};
pub use error::{ApiError, ErrorCode};
pub use state::{AppState, Shared, StartupError};
