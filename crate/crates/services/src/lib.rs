//! HTTP services of the data marketplace and blocking clients for them.
//!
//! Three kinds of service take part: the storage service (blobs plus the
//! trust registries), `N` computation nodes and the marketplace broker.
//! [`deploy::LocalDeployment`] runs all of them on loopback ports.

pub mod api;
pub mod storage;
pub mod http;
pub mod node;
pub mod capture;
pub mod marketplace;
pub mod client;
pub mod fixtures;
pub mod deploy;

/// Parses a TOML configuration file body.
pub fn toml_from_str<T: serde::de::DeserializeOwned>(text: &str) -> Result<T, toml::de::Error> {
    toml::from_str(text)
}
