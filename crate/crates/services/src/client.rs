//! Blocking clients for the marketplace and storage services, and the
//! seller and buyer flows built on them. Must not be called from inside an
//! async runtime.

use std::time::Duration;

use rand::rngs::OsRng;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tplmarket_core::client::{build_request, finalize, prepare_packages, BuyError, ResultValue};
use tplmarket_core::credentials::{ClaimValue, Credential, Wallet};
use tplmarket_core::protocol::{Computation, ComputationRequest, NodeInfo, ResultEnvelope};
use tplmarket_core::tpl::{ParseError, Policy};

use crate::api::{
    ApiError, BlobRef, DataProduct, ErrorBody, Precheck, PrecheckRequest, ProductMetadata, ProductPage,
    RegisterRequest, Registration, Role, SubmitResponse,
};

const CLIENT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{url}: {message}")]
    Transport { url: String, message: String },
    #[error("{status} {}: {}", .error.code, .error.message)]
    Api { status: u16, error: ApiError },
    #[error("{url}: unexpected response: {message}")]
    Decode { url: String, message: String },
    #[error(transparent)]
    Prepare(#[from] tplmarket_core::client::ClientError),
    #[error(transparent)]
    Policy(#[from] ParseError),
    #[error("request is not feasible: {0}")]
    Infeasible(String),
    #[error("wallet holds no credentials")]
    EmptyWallet,
}

impl ClientError {
    /// The API error code, if the service answered with one.
    pub fn code(&self) -> Option<&str> {
        match self {
            ClientError::Api { error, .. } => Some(&error.code),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
struct Http {
    base: String,
    client: reqwest::blocking::Client,
}

impl Http {
    fn new(base: &str) -> Self {
        Http {
            base: base.trim_end_matches('/').to_owned(),
            client: reqwest::blocking::Client::builder()
                .timeout(CLIENT_TIMEOUT)
                .build()
                .expect("http client"),
        }
    }

    fn send<T: DeserializeOwned>(&self, rb: reqwest::blocking::RequestBuilder, url: &str) -> Result<T, ClientError> {
        let transport = |e: reqwest::Error| ClientError::Transport {
            url: url.to_owned(),
            message: e.to_string(),
        };
        let resp = rb.send().map_err(transport)?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(transport)?;
        if !status.is_success() {
            return Err(match serde_json::from_slice::<ErrorBody>(&bytes) {
                Ok(body) => ClientError::Api {
                    status: status.as_u16(),
                    error: body.error,
                },
                Err(_) => ClientError::Decode {
                    url: url.to_owned(),
                    message: format!("HTTP {status}"),
                },
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| ClientError::Decode {
            url: url.to_owned(),
            message: e.to_string(),
        })
    }

    fn get<T: DeserializeOwned>(&self, path: &str) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base);
        self.send(self.client.get(&url), &url)
    }

    fn post<B: Serialize + ?Sized, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let url = format!("{}{path}", self.base);
        self.send(self.client.post(&url).json(body), &url)
    }
}

#[derive(Debug, Clone)]
pub struct MarketplaceClient(Http);

impl MarketplaceClient {
    pub fn new(base_url: &str) -> Self {
        MarketplaceClient(Http::new(base_url))
    }

    pub fn register(&self, name: &str, role: Role) -> Result<Registration, ClientError> {
        self.0.post(
            "/accounts",
            &RegisterRequest {
                name: name.to_owned(),
                role,
            },
        )
    }

    pub fn directory(&self) -> Result<Vec<NodeInfo>, ClientError> {
        self.0.get("/directory")
    }

    pub fn publish(&self, product: &DataProduct) -> Result<String, ClientError> {
        #[derive(serde::Deserialize)]
        struct Created {
            product_id: String,
        }
        self.0.post::<_, Created>("/products", product).map(|c| c.product_id)
    }

    pub fn search(&self, query: &str, tag: Option<&str>, cursor: Option<&str>, limit: Option<usize>) -> Result<ProductPage, ClientError> {
        let url = format!("{}/products", self.0.base);
        let mut params: Vec<(&str, String)> = vec![("query", query.to_owned())];
        params.extend(tag.map(|t| ("tag", t.to_owned())));
        params.extend(cursor.map(|c| ("cursor", c.to_owned())));
        params.extend(limit.map(|l| ("limit", l.to_string())));
        self.0.send(self.0.client.get(&url).query(&params), &url)
    }

    pub fn product(&self, id: &str) -> Result<DataProduct, ClientError> {
        self.0.get(&format!("/products/{id}"))
    }

    pub fn precheck(&self, product_ids: &[String], computation: &Computation) -> Result<Precheck, ClientError> {
        self.0.post(
            "/precheck",
            &PrecheckRequest {
                product_ids: product_ids.to_vec(),
                computation: computation.clone(),
            },
        )
    }

    pub fn submit(&self, request: &ComputationRequest) -> Result<SubmitResponse, ClientError> {
        self.0.post("/submit", request)
    }
}

#[derive(Debug, Clone)]
pub struct StorageClient(Http);

impl StorageClient {
    pub fn new(base_url: &str) -> Self {
        StorageClient(Http::new(base_url))
    }

    pub fn put(&self, content: Vec<u8>) -> Result<BlobRef, ClientError> {
        let url = format!("{}/blobs", self.0.base);
        self.0.send(self.0.client.put(&url).body(content), &url)
    }

    pub fn get(&self, id: &str) -> Result<Vec<u8>, ClientError> {
        let url = format!("{}/blobs/{id}", self.0.base);
        let transport = |e: reqwest::Error| ClientError::Transport {
            url: url.clone(),
            message: e.to_string(),
        };
        let resp = self.0.client.get(&url).send().map_err(transport)?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(transport)?;
        if !status.is_success() {
            let error = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or(ApiError {
                    code: "http".into(),
                    message: status.to_string(),
                });
            return Err(ClientError::Api {
                status: status.as_u16(),
                error,
            });
        }
        Ok(bytes.to_vec())
    }
}

/// What a seller publishes.
#[derive(Debug, Clone)]
pub struct Offer {
    pub product_id: String,
    pub policy: String,
    pub records: Vec<i64>,
    pub metadata: ProductMetadata,
}

/// Shares and seals the records for every node, uploads the packages and
/// lists the product. Checks the policy locally first.
pub fn sell(
    market: &MarketplaceClient,
    storage: &StorageClient,
    seller_id: &str,
    directory: &[NodeInfo],
    offer: Offer,
) -> Result<String, ClientError> {
    Policy::parse(&offer.policy, &offer.product_id)?;
    let sealed = prepare_packages(&offer.product_id, &offer.policy, &offer.records, directory, &mut OsRng)?;
    let mut package_urls = std::collections::BTreeMap::new();
    for s in sealed {
        let blob = storage.put(serde_json::to_vec(&s).expect("sealed package serializes"))?;
        package_urls.insert(s.recipient, blob.url);
    }
    market.publish(&DataProduct {
        product_id: offer.product_id,
        seller_id: seller_id.to_owned(),
        metadata: offer.metadata,
        policy: offer.policy,
        package_urls,
    })
}

/// Splits the wallet into the main credential and the additional ones the
/// policies ask for. The first credential is the main one; additional
/// credentials are picked by their `credential_type` claim.
pub fn select_credentials(credentials: &[Credential], required: &[String]) -> Option<(Credential, Vec<Credential>)> {
    let (main, rest) = credentials.split_first()?;
    let additional = rest
        .iter()
        .filter(|c| match c.claims.get("credential_type") {
            Some(ClaimValue::Text(t)) => required.contains(t),
            _ => false,
        })
        .cloned()
        .collect();
    Some((main.clone(), additional))
}

/// One purchase attempt: the request sent, every envelope that came back,
/// and the reconstructed value or why there is none.
#[derive(Debug)]
pub struct Purchase {
    pub request: ComputationRequest,
    pub precheck: Precheck,
    pub envelopes: Vec<ResultEnvelope>,
    pub unreachable: Vec<ApiError>,
    pub outcome: Result<ResultValue, BuyError>,
}

impl Purchase {
    /// Process exit status: 0 granted, 3 denied by policy, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        match &self.outcome {
            Ok(_) => 0,
            Err(e) if e.is_denial() => 3,
            Err(_) => 4,
        }
    }
}

/// Pre-check, credential selection, request, fan-out and reconstruction.
pub fn buy(
    market: &MarketplaceClient,
    wallet: &Wallet,
    credentials: &[Credential],
    product_ids: &[String],
    computation: Computation,
) -> Result<Purchase, ClientError> {
    let precheck = market.precheck(product_ids, &computation)?;
    if !precheck.feasible {
        return Err(ClientError::Infeasible(precheck.reason.unwrap_or_default()));
    }
    let products = product_ids
        .iter()
        .map(|id| market.product(id).map(|p| p.to_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let (main, additional) = select_credentials(credentials, &precheck.required).ok_or(ClientError::EmptyWallet)?;
    let request_id = uuid::Uuid::new_v4().to_string();
    let request = build_request(&request_id, products, computation, wallet, main, additional);
    let submitted = market.submit(&request)?;
    let nodes = submitted.responses.len();
    let mut envelopes = Vec::with_capacity(nodes);
    let mut unreachable = Vec::new();
    for r in submitted.responses {
        match (r.body, r.error) {
            (Some(body), _) => match serde_json::from_str::<ResultEnvelope>(body.get()) {
                Ok(env) => envelopes.push(env),
                Err(e) => unreachable.push(ApiError {
                    code: "bad_response".into(),
                    message: format!("node {}: {e}", r.node_index),
                }),
            },
            (None, Some(error)) => unreachable.push(error),
            (None, None) => {}
        }
    }
    let outcome = finalize(&request, &envelopes, wallet, nodes);
    Ok(Purchase {
        request,
        precheck,
        envelopes,
        unreachable,
        outcome,
    })
}
