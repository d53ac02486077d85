//! The computation node service: `POST /compute`, `GET /health`,
//! `GET /pubkeys`.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::runtime::Handle;
use tplmarket_core::builtins::{FormatSet, RegistryCache, RegistryUrls, SystemClock, TrustServices, DEFAULT_TTL};
use tplmarket_core::crypto::EncryptionKeyPair;
use tplmarket_core::node::{Node, NodeConfig, PackageSource};
use tplmarket_core::protocol::{ComputationRequest, ErrorCode, NodeError, ResultEnvelope};
use tplmarket_core::tpl::{Policy, DEFAULT_BUDGET};

use crate::api::{Health, HttpError, NodeKeys};
use crate::http::{HttpFetcher, HttpPackages};

/// Node configuration file (TOML). Relative paths are resolved against the
/// file's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFileConfig {
    pub index: u32,
    pub nodes: usize,
    /// File holding the base64url X25519 secret key.
    pub key_file: PathBuf,
    #[serde(default = "default_node_listen")]
    pub listen: String,
    /// Base URL of the trust registries.
    pub registry_url: String,
    /// URL prefixes sealed packages may be downloaded from.
    pub storage_allow_list: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub local_policy: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_ttl_secs: Option<u64>,
    /// Format descriptor file; the bundled one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formats: Option<PathBuf>,
}

fn default_node_listen() -> String {
    "127.0.0.1:7101".into()
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn invalid(path: &Path, message: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_owned(),
        message: message.to_string(),
    }
}

impl NodeFileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| invalid(path, e))?;
        let mut config: NodeFileConfig = toml::from_str(&text).map_err(|e| invalid(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut config.key_file);
        config.local_policy.as_mut().map(resolve);
        config.formats.as_mut().map(resolve);
        Ok(config)
    }

    /// Reads the key, local policy and formats named by the file.
    pub fn node_config(&self) -> Result<(NodeConfig, FormatSet), ConfigError> {
        if self.index == 0 || self.index as usize > self.nodes {
            return Err(invalid(&self.key_file, format!("index {} outside 1..={}", self.index, self.nodes)));
        }
        let secret = fs::read_to_string(&self.key_file).map_err(|e| invalid(&self.key_file, e))?;
        let key = EncryptionKeyPair::from_b64(secret.trim()).map_err(|e| invalid(&self.key_file, e))?;
        let mut config = NodeConfig::new(self.index, self.nodes, key, self.storage_allow_list.clone());
        config.budget = self.budget.unwrap_or(DEFAULT_BUDGET);
        if let Some(path) = &self.local_policy {
            let src = fs::read_to_string(path).map_err(|e| invalid(path, e))?;
            config.local_policy = Some(Policy::parse(&src, "node-local").map_err(|e| invalid(path, e))?);
        }
        let formats = match &self.formats {
            Some(path) => FormatSet::from_file(path).map_err(|e| invalid(path, e))?,
            None => FormatSet::bundled(),
        };
        Ok((config, formats))
    }
}

pub struct NodeState {
    pub node: Arc<Node>,
    pub keys: NodeKeys,
}

impl NodeState {
    /// A node fetching registries and packages over HTTP, driven by the
    /// runtime behind `handle`.
    pub fn http(config: NodeConfig, formats: FormatSet, registry_url: &str, ttl: Option<Duration>, handle: Handle) -> Self {
        let cache = RegistryCache::with_clock(
            Arc::new(HttpFetcher::new(handle.clone())),
            Arc::new(SystemClock::default()),
            ttl.unwrap_or(DEFAULT_TTL),
        );
        let services = Arc::new(TrustServices::new(RegistryUrls::at(registry_url), cache, formats));
        NodeState::with_parts(config, services, Arc::new(HttpPackages::new(handle)))
    }

    pub fn from_file(file: &NodeFileConfig, handle: Handle) -> Result<Self, ConfigError> {
        let (config, formats) = file.node_config()?;
        Ok(NodeState::http(
            config,
            formats,
            &file.registry_url,
            file.cache_ttl_secs.map(Duration::from_secs),
            handle,
        ))
    }

    pub fn with_parts(config: NodeConfig, services: Arc<TrustServices>, packages: Arc<dyn PackageSource>) -> Self {
        let keys = NodeKeys {
            index: config.index,
            nodes: config.nodes,
            package_key: config.key.public(),
        };
        NodeState {
            node: Arc::new(Node::new(config, services, packages)),
            keys,
        }
    }
}

async fn compute(State(state): State<Arc<NodeState>>, body: Bytes) -> Response {
    let index = state.keys.index;
    let req: ComputationRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => {
            let env = ResultEnvelope::failure(
                "",
                index,
                NodeError::new(ErrorCode::MalformedRequest, format!("not a computation request: {e}")),
            );
            return (StatusCode::BAD_REQUEST, Json(env)).into_response();
        }
    };
    let node = state.node.clone();
    match tokio::task::spawn_blocking(move || node.respond(&req)).await {
        Ok(env) => {
            match &env.error {
                Some(e) => tracing::info!(node = index, request = %env.request_id, code = %e.code, "refused"),
                None => tracing::info!(node = index, request = %env.request_id, "granted"),
            }
            Json(env).into_response()
        }
        Err(e) => HttpError::internal(e.to_string()).into_response(),
    }
}

async fn health(State(state): State<Arc<NodeState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        index: Some(state.keys.index),
    })
}

async fn pubkeys(State(state): State<Arc<NodeState>>) -> Json<NodeKeys> {
    Json(state.keys.clone())
}

pub fn router(state: Arc<NodeState>) -> Router {
    Router::new()
        .route("/compute", post(compute))
        .route("/health", get(health))
        .route("/pubkeys", get(pubkeys))
        .with_state(state)
}
