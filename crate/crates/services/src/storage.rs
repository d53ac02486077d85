//! Mock public cloud: a content-addressed blob store and the trust
//! registries (trust list, revocation list, DID resolver).

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{DefaultBodyLimit, Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post, put};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tplmarket_core::crypto::sha256;

use crate::api::{BlobRef, HttpError, RevokeRequest};

/// Default upper bound on a blob.
pub const DEFAULT_MAX_BLOB: usize = 64 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("blob of {size} bytes exceeds the {max}-byte limit")]
    TooLarge { size: usize, max: usize },
    #[error("no blob `{0}`")]
    NotFound(String),
    #[error("stored content of `{0}` does not match its id")]
    IntegrityError(String),
    #[error("`{0}` is not a blob id")]
    InvalidId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<StorageError> for HttpError {
    fn from(e: StorageError) -> Self {
        let (status, code) = match &e {
            StorageError::TooLarge { .. } => (StatusCode::PAYLOAD_TOO_LARGE, "too_large"),
            StorageError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
            StorageError::IntegrityError(_) => (StatusCode::INTERNAL_SERVER_ERROR, "integrity_error"),
            StorageError::InvalidId(_) => (StatusCode::BAD_REQUEST, "invalid_id"),
            StorageError::Io(_) => (StatusCode::INTERNAL_SERVER_ERROR, "io_error"),
        };
        HttpError::new(status, code, e.to_string())
    }
}

/// True for 64 lowercase hex digits.
pub fn is_blob_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

/// Blobs as files named by the hex SHA-256 of their content.
#[derive(Debug, Clone)]
pub struct BlobStore {
    dir: PathBuf,
    max_size: usize,
}

impl BlobStore {
    pub fn open(dir: impl Into<PathBuf>, max_size: usize) -> Result<Self, StorageError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(BlobStore { dir, max_size })
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(id)
    }

    /// Stores `content` and returns its id. Idempotent.
    pub fn put(&self, content: &[u8]) -> Result<String, StorageError> {
        if content.len() > self.max_size {
            return Err(StorageError::TooLarge {
                size: content.len(),
                max: self.max_size,
            });
        }
        let id = hex::encode(sha256(content));
        let path = self.path(&id);
        if !path.exists() {
            let tmp = self.dir.join(format!(".{id}.{}", uuid::Uuid::new_v4()));
            fs::write(&tmp, content)?;
            fs::rename(&tmp, &path)?;
        }
        Ok(id)
    }

    /// The content stored under `id`, checked against the id.
    pub fn get(&self, id: &str) -> Result<Vec<u8>, StorageError> {
        if !is_blob_id(id) {
            return Err(StorageError::InvalidId(id.to_owned()));
        }
        let content = match fs::read(self.path(id)) {
            Ok(c) => c,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StorageError::NotFound(id.to_owned())),
            Err(e) => return Err(e.into()),
        };
        if hex::encode(sha256(&content)) != id {
            return Err(StorageError::IntegrityError(id.to_owned()));
        }
        Ok(content)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrustList {
    pub scheme: String,
    pub qualified: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationList {
    pub revoked: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{0}: DID document has no string `id`")]
    MissingId(PathBuf),
}

/// Registry contents. Loaded from a fixture directory:
///
/// ```text
/// trustlist.json    {"scheme": "eIDAS", "qualified": [...]}
/// revocation.json   {"revoked": [...]}
/// did/*.json        one subject document each, keyed by its "id"
/// ```
///
/// Missing files mean empty lists.
#[derive(Debug, Default)]
pub struct Registries {
    trust: RwLock<TrustList>,
    revoked: RwLock<RevocationList>,
    dids: RwLock<BTreeMap<String, Value>>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, FixtureError> {
    match fs::read(path) {
        Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(|source| FixtureError::Json {
            path: path.to_owned(),
            source,
        }),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(source) => Err(FixtureError::Io {
            path: path.to_owned(),
            source,
        }),
    }
}

impl Registries {
    pub fn new(trust: TrustList, revoked: RevocationList, dids: impl IntoIterator<Item = Value>) -> Self {
        let dids = dids
            .into_iter()
            .filter_map(|d| Some((d.get("id")?.as_str()?.to_owned(), d)))
            .collect();
        Registries {
            trust: RwLock::new(trust),
            revoked: RwLock::new(revoked),
            dids: RwLock::new(dids),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, FixtureError> {
        let trust = read_json::<TrustList>(&dir.join("trustlist.json"))?.unwrap_or_else(|| TrustList {
            scheme: "eIDAS".into(),
            qualified: Vec::new(),
        });
        let revoked = read_json::<RevocationList>(&dir.join("revocation.json"))?.unwrap_or_default();
        let mut dids = Vec::new();
        let did_dir = dir.join("did");
        if did_dir.is_dir() {
            let mut paths: Vec<PathBuf> = fs::read_dir(&did_dir)
                .map_err(|source| FixtureError::Io {
                    path: did_dir.clone(),
                    source,
                })?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            paths.sort();
            for p in paths {
                let doc: Value = read_json(&p)?.expect("listed file exists");
                if !doc.get("id").is_some_and(Value::is_string) {
                    return Err(FixtureError::MissingId(p));
                }
                dids.push(doc);
            }
        }
        Ok(Registries::new(trust, revoked, dids))
    }

    pub fn trust_list(&self) -> TrustList {
        self.trust.read().expect("registry lock").clone()
    }

    pub fn revocation_list(&self) -> RevocationList {
        self.revoked.read().expect("registry lock").clone()
    }

    pub fn dids(&self) -> Vec<Value> {
        self.dids.read().expect("registry lock").values().cloned().collect()
    }

    pub fn did(&self, id: &str) -> Option<Value> {
        self.dids.read().expect("registry lock").get(id).cloned()
    }

    pub fn revoke(&self, credential_id: &str) {
        let mut list = self.revoked.write().expect("registry lock");
        if !list.revoked.iter().any(|r| r == credential_id) {
            list.revoked.push(credential_id.to_owned());
        }
    }
}

pub struct StorageState {
    pub blobs: BlobStore,
    pub registries: Registries,
    /// Base URL under which this service is reachable; blob URLs are
    /// `{public_url}/blobs/{id}`.
    pub public_url: RwLock<String>,
}

impl StorageState {
    pub fn new(blobs: BlobStore, registries: Registries, public_url: &str) -> Self {
        StorageState {
            blobs,
            registries,
            public_url: RwLock::new(public_url.trim_end_matches('/').to_owned()),
        }
    }

    pub fn set_public_url(&self, url: &str) {
        *self.public_url.write().expect("url lock") = url.trim_end_matches('/').to_owned();
    }

    pub fn blob_url(&self, id: &str) -> String {
        format!("{}/blobs/{id}", self.public_url.read().expect("url lock"))
    }
}

async fn put_blob(State(state): State<Arc<StorageState>>, body: Body) -> Result<Json<BlobRef>, HttpError> {
    let max = state.blobs.max_size();
    let bytes: Bytes = to_bytes(body, max + 1).await.map_err(|_| {
        HttpError::from(StorageError::TooLarge {
            size: max + 1,
            max,
        })
    })?;
    let blobs = state.blobs.clone();
    let id = tokio::task::spawn_blocking(move || blobs.put(&bytes))
        .await
        .map_err(|e| HttpError::internal(e.to_string()))??;
    Ok(Json(BlobRef {
        url: state.blob_url(&id),
        id,
    }))
}

async fn get_blob(State(state): State<Arc<StorageState>>, UrlPath(id): UrlPath<String>) -> Result<impl IntoResponse, HttpError> {
    let blobs = state.blobs.clone();
    let content = tokio::task::spawn_blocking(move || blobs.get(&id))
        .await
        .map_err(|e| HttpError::internal(e.to_string()))??;
    Ok(([(header::CONTENT_TYPE, "application/octet-stream")], content))
}

async fn trust_list(State(state): State<Arc<StorageState>>) -> Json<TrustList> {
    Json(state.registries.trust_list())
}

async fn revocation(State(state): State<Arc<StorageState>>) -> Json<RevocationList> {
    Json(state.registries.revocation_list())
}

async fn did(State(state): State<Arc<StorageState>>, UrlPath(id): UrlPath<String>) -> Result<Json<Value>, HttpError> {
    state
        .registries
        .did(&id)
        .map(Json)
        .ok_or_else(|| HttpError::new(StatusCode::NOT_FOUND, "not_found", format!("no document for `{id}`")))
}

async fn revoke(State(state): State<Arc<StorageState>>, Json(req): Json<RevokeRequest>) -> Json<Value> {
    state.registries.revoke(&req.credential_id);
    Json(json!({"revoked": req.credential_id}))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok"}))
}

pub fn router(state: Arc<StorageState>) -> Router {
    Router::new()
        .route("/blobs", put(put_blob).layer(DefaultBodyLimit::disable()))
        .route("/blobs/{id}", get(get_blob))
        .route("/trustlist/eidas", get(trust_list))
        .route("/revocation", get(revocation))
        .route("/did/{id}", get(did))
        .route("/admin/revoke", post(revoke))
        .route("/health", get(health))
        .with_state(state)
}

/// Storage service configuration file (TOML). Relative paths are resolved
/// against the file's directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StorageFileConfig {
    #[serde(default = "default_storage_listen")]
    pub listen: String,
    pub blob_dir: PathBuf,
    /// Fixture directory with trustlist.json, revocation.json and did/.
    pub registry_dir: PathBuf,
    /// Base URL written into blob URLs; `http://{listen}` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_url: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_blob_bytes: Option<usize>,
}

fn default_storage_listen() -> String {
    "127.0.0.1:7100".into()
}

impl StorageFileConfig {
    pub fn load(path: &Path) -> Result<Self, FixtureError> {
        let text = fs::read_to_string(path).map_err(|source| FixtureError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut config: StorageFileConfig = toml::from_str(&text).map_err(|e| FixtureError::Io {
            path: path.to_owned(),
            source: io::Error::new(io::ErrorKind::InvalidData, e),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.blob_dir, &mut config.registry_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn state(&self) -> Result<StorageState, FixtureError> {
        let blobs = BlobStore::open(&self.blob_dir, self.max_blob_bytes.unwrap_or(DEFAULT_MAX_BLOB)).map_err(|e| {
            FixtureError::Io {
                path: self.blob_dir.clone(),
                source: io::Error::other(e.to_string()),
            }
        })?;
        let registries = Registries::load(&self.registry_dir)?;
        let url = self.public_url.clone().unwrap_or_else(|| format!("http://{}", self.listen));
        Ok(StorageState::new(blobs, registries, &url))
    }
}
