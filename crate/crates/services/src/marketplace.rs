//! The marketplace broker: accounts, catalog, pre-check and fan-out of
//! computation requests to every node. It never evaluates policies beyond
//! listing required credentials and never opens node responses.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use tplmarket_core::credentials::required_credentials;
use tplmarket_core::protocol::{NodeInfo, Operation};
use tplmarket_core::tpl::{aggregate_policies, Policy};

use crate::api::{
    ApiError, DataProduct, HttpError, NodeKeys, NodeResponse, Precheck, PrecheckRequest, ProductPage, ProductSummary,
    RegisterRequest, Registration, Role, SubmitResponse,
};

/// Per-node timeout of the request fan-out.
pub const SUBMIT_TIMEOUT: Duration = Duration::from_secs(30);
/// Largest request body accepted.
pub const MAX_REQUEST: usize = 64 * 1024 * 1024;
const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 500;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarketplaceFileConfig {
    #[serde(default = "default_market_listen")]
    pub listen: String,
    /// Base URLs of the nodes, in index order.
    pub nodes: Vec<String>,
    /// JSON snapshot of accounts and products; in memory only when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submit_timeout_secs: Option<u64>,
}

fn default_market_listen() -> String {
    "127.0.0.1:7200".into()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub account_id: String,
    pub name: String,
    pub role: Role,
}

/// Everything the marketplace persists.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Db {
    pub accounts: BTreeMap<String, Account>,
    pub products: BTreeMap<String, DataProduct>,
}

fn conflict(code: &str, message: impl Into<String>) -> HttpError {
    HttpError::new(StatusCode::CONFLICT, code, message)
}

fn not_found(code: &str, message: impl Into<String>) -> HttpError {
    HttpError::new(StatusCode::NOT_FOUND, code, message)
}

pub struct Marketplace {
    db: Mutex<Db>,
    data_file: Option<PathBuf>,
    nodes: Vec<String>,
    directory: RwLock<Option<Vec<NodeInfo>>>,
    http: reqwest::Client,
}

impl Marketplace {
    /// Opens the snapshot at `data_file` if it exists.
    pub fn open(nodes: Vec<String>, data_file: Option<PathBuf>, timeout: Duration) -> io::Result<Self> {
        let db = match &data_file {
            Some(path) if path.exists() => {
                serde_json::from_slice(&fs::read(path)?).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?
            }
            _ => Db::default(),
        };
        Ok(Marketplace {
            db: Mutex::new(db),
            data_file,
            nodes: nodes.into_iter().map(|u| u.trim_end_matches('/').to_owned()).collect(),
            directory: RwLock::new(None),
            http: reqwest::Client::builder()
                .timeout(timeout)
                // Fresh connections, so a stopped node is seen as unreachable.
                .pool_max_idle_per_host(0)
                .build()
                .expect("http client"),
        })
    }

    pub fn from_config(config: &MarketplaceFileConfig) -> io::Result<Self> {
        Marketplace::open(
            config.nodes.clone(),
            config.data_file.clone(),
            config.submit_timeout_secs.map_or(SUBMIT_TIMEOUT, Duration::from_secs),
        )
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn snapshot(&self) -> Db {
        self.db.lock().expect("db lock").clone()
    }

    fn save(&self, db: &Db) -> Result<(), HttpError> {
        let Some(path) = &self.data_file else { return Ok(()) };
        write_atomically(path, &serde_json::to_vec_pretty(db).expect("db serializes"))
            .map_err(|e| HttpError::internal(format!("persisting {}: {e}", path.display())))
    }

    /// Node keys, fetched from every node's `/pubkeys` on first use.
    async fn directory(&self) -> Result<Vec<NodeInfo>, HttpError> {
        if let Some(d) = self.directory.read().expect("directory lock").clone() {
            return Ok(d);
        }
        let n = self.nodes.len();
        let mut out = Vec::with_capacity(n);
        for (i, url) in self.nodes.iter().enumerate() {
            let index = i as u32 + 1;
            let unreachable =
                |e: String| HttpError::new(StatusCode::SERVICE_UNAVAILABLE, "node_unreachable", format!("node {index}: {e}"));
            let keys: NodeKeys = self
                .http
                .get(format!("{url}/pubkeys"))
                .send()
                .await
                .map_err(|e| unreachable(e.to_string()))?
                .json()
                .await
                .map_err(|e| unreachable(e.to_string()))?;
            if keys.index != index || keys.nodes != n {
                return Err(HttpError::internal(format!(
                    "node at {url} reports index {} of {}, expected {index} of {n}",
                    keys.index, keys.nodes
                )));
            }
            out.push(NodeInfo {
                index,
                package_key: keys.package_key,
                url: Some(url.clone()),
            });
        }
        *self.directory.write().expect("directory lock") = Some(out.clone());
        Ok(out)
    }

    pub async fn register(&self, req: RegisterRequest) -> Result<Registration, HttpError> {
        let directory = self.directory().await?;
        let name = req.name.trim();
        if name.is_empty() {
            return Err(HttpError::bad_request("empty account name"));
        }
        let mut db = self.db.lock().expect("db lock");
        if db.accounts.values().any(|a| a.name == name) {
            return Err(conflict("duplicate_account", format!("account `{name}` already exists")));
        }
        let account = Account {
            account_id: format!("acct-{}", uuid::Uuid::new_v4()),
            name: name.to_owned(),
            role: req.role,
        };
        db.accounts.insert(account.account_id.clone(), account.clone());
        self.save(&db)?;
        Ok(Registration {
            account_id: account.account_id,
            role: account.role,
            nodes: directory.len(),
            directory,
        })
    }

    pub fn publish(&self, product: DataProduct) -> Result<String, HttpError> {
        Policy::parse(&product.policy, &product.product_id).map_err(|e| {
            HttpError::new(StatusCode::BAD_REQUEST, "policy_syntax_error", e.to_string())
        })?;
        let expected: Vec<u32> = (1..=self.nodes.len() as u32).collect();
        if product.package_urls.keys().copied().collect::<Vec<_>>() != expected {
            let missing: Vec<u32> = expected.iter().copied().filter(|i| !product.package_urls.contains_key(i)).collect();
            return Err(HttpError::new(
                StatusCode::BAD_REQUEST,
                "incomplete_share_set",
                format!("need one package URL per node 1..={}; missing {missing:?}", self.nodes.len()),
            ));
        }
        if product.product_id.trim().is_empty() {
            return Err(HttpError::bad_request("empty product id"));
        }
        let mut db = self.db.lock().expect("db lock");
        match db.accounts.get(&product.seller_id) {
            None => return Err(not_found("unknown_account", format!("no account `{}`", product.seller_id))),
            Some(a) if a.role != Role::Seller => {
                return Err(HttpError::new(StatusCode::FORBIDDEN, "forbidden", "only sellers publish products"));
            }
            Some(_) => {}
        }
        if db.products.contains_key(&product.product_id) {
            return Err(conflict("duplicate_product", format!("product `{}` exists", product.product_id)));
        }
        let id = product.product_id.clone();
        db.products.insert(id.clone(), product);
        self.save(&db)?;
        Ok(id)
    }

    pub fn search(&self, q: &SearchQuery) -> ProductPage {
        let terms: Vec<String> = q
            .query
            .as_deref()
            .unwrap_or("")
            .split_whitespace()
            .map(str::to_lowercase)
            .collect();
        let limit = q.limit.unwrap_or(DEFAULT_PAGE).clamp(1, MAX_PAGE);
        let db = self.db.lock().expect("db lock");
        let mut matches = db
            .products
            .values()
            .filter(|p| q.cursor.as_ref().is_none_or(|c| p.product_id > *c))
            .filter(|p| q.tag.as_ref().is_none_or(|t| p.metadata.tags.contains(t)))
            .filter(|p| {
                let hay = format!(
                    "{} {} {} {}",
                    p.product_id,
                    p.metadata.title,
                    p.metadata.description,
                    p.metadata.tags.join(" ")
                )
                .to_lowercase();
                terms.iter().all(|t| hay.contains(t.as_str()))
            });
        let items: Vec<ProductSummary> = matches
            .by_ref()
            .take(limit)
            .map(|p| ProductSummary {
                product_id: p.product_id.clone(),
                seller_id: p.seller_id.clone(),
                metadata: p.metadata.clone(),
            })
            .collect();
        let next_cursor = match matches.next() {
            Some(_) => items.last().map(|p| p.product_id.clone()),
            None => None,
        };
        ProductPage { items, next_cursor }
    }

    pub fn product(&self, id: &str) -> Result<DataProduct, HttpError> {
        self.db
            .lock()
            .expect("db lock")
            .products
            .get(id)
            .cloned()
            .ok_or_else(|| not_found("unknown_product", format!("no product `{id}`")))
    }

    /// Advisory only: checks that the products exist and the operation is
    /// supported, and lists the credentials the policies ask for.
    pub fn precheck(&self, req: &PrecheckRequest) -> Result<Precheck, HttpError> {
        let mut policies = Vec::with_capacity(req.product_ids.len());
        for id in &req.product_ids {
            let p = self.product(id)?;
            let policy = Policy::parse(&p.policy, &p.product_id).map_err(|e| HttpError::internal(e.to_string()))?;
            policies.push(policy);
        }
        let required = if policies.is_empty() {
            Vec::new()
        } else {
            let aggregate = aggregate_policies(&policies).map_err(|e| HttpError::bad_request(e.to_string()))?;
            required_credentials(&aggregate).map_err(|e| HttpError::bad_request(e.to_string()))?
        };
        let reason = if req.product_ids.is_empty() {
            Some("no products selected".to_owned())
        } else {
            match req.computation.operation() {
                None => Some(format!("operation `{}` is not supported", req.computation.op)),
                Some(Operation::Dot) if req.computation.weights.is_none() => Some("dot needs weights".to_owned()),
                Some(_) => None,
            }
        };
        Ok(Precheck {
            feasible: reason.is_none(),
            required,
            reason,
        })
    }

    /// Sends `body` unchanged to every node's `/compute` in parallel and
    /// collects the answers in index order.
    pub async fn submit(&self, body: Bytes) -> Result<SubmitResponse, HttpError> {
        #[derive(Deserialize)]
        struct Head {
            request_id: String,
        }
        let head: Head = serde_json::from_slice(&body)
            .map_err(|e| HttpError::bad_request(format!("not a computation request: {e}")))?;
        let tasks: Vec<_> = self
            .nodes
            .iter()
            .enumerate()
            .map(|(i, url)| {
                let http = self.http.clone();
                let body = body.clone();
                let url = format!("{url}/compute");
                let index = i as u32 + 1;
                tokio::spawn(async move { (index, forward(&http, &url, body).await) })
            })
            .collect();
        let mut responses = Vec::with_capacity(tasks.len());
        for task in tasks {
            let (node_index, outcome) = task.await.map_err(|e| HttpError::internal(e.to_string()))?;
            responses.push(match outcome {
                Ok((status, raw)) => NodeResponse {
                    node_index,
                    status: Some(status),
                    body: Some(raw),
                    error: None,
                },
                Err(message) => NodeResponse {
                    node_index,
                    status: None,
                    body: None,
                    error: Some(ApiError {
                        code: "node_unreachable".into(),
                        message: format!("node {node_index}: {message}"),
                    }),
                },
            });
        }
        Ok(SubmitResponse {
            request_id: head.request_id,
            responses,
        })
    }
}

async fn forward(http: &reqwest::Client, url: &str, body: Bytes) -> Result<(u16, Box<RawValue>), String> {
    let resp = http
        .post(url)
        .header(reqwest::header::CONTENT_TYPE, "application/json")
        .body(body)
        .send()
        .await
        .map_err(|e| e.to_string())?;
    let status = resp.status().as_u16();
    let bytes = resp.bytes().await.map_err(|e| e.to_string())?;
    let text = String::from_utf8(bytes.to_vec()).map_err(|_| "response is not UTF-8".to_owned())?;
    let raw = RawValue::from_string(text).map_err(|e| format!("response is not JSON: {e}"))?;
    Ok((status, raw))
}

pub fn write_atomically(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SearchQuery {
    pub query: Option<String>,
    pub tag: Option<String>,
    pub cursor: Option<String>,
    pub limit: Option<usize>,
}

async fn register(State(m): State<Arc<Marketplace>>, Json(req): Json<RegisterRequest>) -> Result<Json<Registration>, HttpError> {
    m.register(req).await.map(Json)
}

async fn publish(
    State(m): State<Arc<Marketplace>>,
    Json(product): Json<DataProduct>,
) -> Result<(StatusCode, Json<serde_json::Value>), HttpError> {
    let id = m.publish(product)?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "product_id": id }))))
}

async fn search(State(m): State<Arc<Marketplace>>, Query(q): Query<SearchQuery>) -> Json<ProductPage> {
    Json(m.search(&q))
}

async fn product(State(m): State<Arc<Marketplace>>, UrlPath(id): UrlPath<String>) -> Result<Json<DataProduct>, HttpError> {
    m.product(&id).map(Json)
}

async fn precheck(State(m): State<Arc<Marketplace>>, Json(req): Json<PrecheckRequest>) -> Result<Json<Precheck>, HttpError> {
    m.precheck(&req).map(Json)
}

async fn submit(State(m): State<Arc<Marketplace>>, body: Bytes) -> Result<Json<SubmitResponse>, HttpError> {
    m.submit(body).await.map(Json)
}

async fn directory(State(m): State<Arc<Marketplace>>) -> Result<Json<Vec<NodeInfo>>, HttpError> {
    m.directory().await.map(Json)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

pub fn router(state: Arc<Marketplace>) -> Router {
    Router::new()
        .route("/accounts", post(register))
        .route("/products", post(publish).get(search))
        .route("/products/{id}", get(product))
        .route("/precheck", post(precheck))
        .route("/submit", post(submit).layer(DefaultBodyLimit::max(MAX_REQUEST)))
        .route("/directory", get(directory))
        .route("/health", get(health))
        .with_state(state)
}
