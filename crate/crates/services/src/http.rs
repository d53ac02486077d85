//! HTTP-backed registry fetcher and package source for nodes.
//!
//! Both are called from blocking node code running on the runtime's
//! blocking pool; they drive an async client through a runtime handle.

use std::time::Duration;

use serde_json::Value;
use tokio::runtime::Handle;
use tplmarket_core::builtins::{FetchError, Fetcher, FETCH_TIMEOUT};
use tplmarket_core::crypto::sha256;
use tplmarket_core::node::PackageSource;

use crate::storage::is_blob_id;

/// Timeout for downloading one sealed package.
pub const PACKAGE_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone)]
pub struct HttpFetcher {
    client: reqwest::Client,
    handle: Handle,
}

impl HttpFetcher {
    pub fn new(handle: Handle) -> Self {
        HttpFetcher {
            client: reqwest::Client::builder()
                .timeout(FETCH_TIMEOUT)
                .build()
                .expect("http client"),
            handle,
        }
    }
}

impl Fetcher for HttpFetcher {
    fn fetch_json(&self, url: &str) -> Result<Value, FetchError> {
        self.handle.block_on(async {
            let resp = self
                .client
                .get(url)
                .send()
                .await
                .map_err(|e| FetchError::Unavailable(e.to_string()))?;
            match resp.status() {
                s if s == reqwest::StatusCode::NOT_FOUND => Err(FetchError::NotFound),
                s if !s.is_success() => Err(FetchError::Unavailable(format!("{url}: HTTP {s}"))),
                _ => resp
                    .json::<Value>()
                    .await
                    .map_err(|e| FetchError::Unavailable(format!("{url}: {e}"))),
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct HttpPackages {
    client: reqwest::Client,
    handle: Handle,
}

impl HttpPackages {
    pub fn new(handle: Handle) -> Self {
        HttpPackages {
            client: reqwest::Client::builder()
                .timeout(PACKAGE_TIMEOUT)
                .build()
                .expect("http client"),
            handle,
        }
    }
}

impl PackageSource for HttpPackages {
    /// Content-addressed URLs (last segment a blob id) are checked against
    /// the content hash.
    fn fetch(&self, url: &str) -> Result<Vec<u8>, String> {
        let bytes = self.handle.block_on(async {
            let resp = self.client.get(url).send().await.map_err(|e| format!("{url}: {e}"))?;
            if !resp.status().is_success() {
                return Err(format!("{url}: HTTP {}", resp.status()));
            }
            resp.bytes().await.map_err(|e| format!("{url}: {e}"))
        })?;
        if let Some(id) = url.rsplit('/').next().filter(|id| is_blob_id(id)) {
            if hex::encode(sha256(&bytes)) != id {
                return Err(format!("{url}: content does not match its id"));
            }
        }
        Ok(bytes.to_vec())
    }
}
