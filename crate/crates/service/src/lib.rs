//! HTTP query service over the hypergrid indexes.
//!
//! Datasets and their indexes are loaded once at startup and shared
//! read-only, so every request is answered as if it were served alone.
//! Endpoints live under `/v1/<dataset>/<kind>` and take a JSON
//! [`api::QueryRequest`] body; `GET /health` lists the datasets.

pub mod api;
pub mod catalog;
pub mod config;
pub mod error;
pub mod server;

pub use api::{handle, Kind, QueryRequest, QueryResponse};
pub use catalog::{Catalog, Dataset};
pub use config::ServiceConfig;
pub use error::StartupError;
