//! Fixture material for a local deployment: an issuer, registry contents,
//! node keys and configuration files, buyer wallets and sample data.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use tplmarket_core::builtins::{FormatSet, RegistryCache, RegistryUrls, StaticFetcher, TrustServices};
use tplmarket_core::credentials::{Challenge, ClaimValue, Credential, TestIssuer, Wallet};
use tplmarket_core::crypto::{EncryptionKeyPair, SigningKeyPair};
use tplmarket_core::sandbox::EXAMPLE_POLICY;

use crate::marketplace::MarketplaceFileConfig;
use crate::node::NodeFileConfig;
use crate::storage::{FixtureError, Registries, StorageFileConfig};

pub const ISSUER_DID: &str = "did:ex:issuer";
/// Default first port: storage listens here, node `i` on `base + i` and
/// the marketplace on `base + 100`.
pub const BASE_PORT: u16 = 7100;
/// Where offline evaluation pretends the registries live.
pub const OFFLINE_REGISTRY: &str = "http://registry.offline";

/// The sample buyers: (name, DID, organization type).
pub const BUYERS: [(&str, &str, &str); 2] = [
    ("alice", "did:ex:alice", "public_university"),
    ("bob", "did:ex:bob", "private_research"),
];

#[derive(Debug, thiserror::Error)]
pub enum FixturesError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{0}: {1}")]
    Invalid(PathBuf, String),
}

#[derive(Serialize, Deserialize)]
struct IssuerFile {
    id: String,
    signing_key: String,
}

pub fn save_issuer(path: &Path, issuer: &TestIssuer) -> Result<(), FixturesError> {
    let file = IssuerFile {
        id: issuer.id.clone(),
        signing_key: issuer.key.secret_b64(),
    };
    write(path, &serde_json::to_vec_pretty(&file).expect("issuer serializes"))
}

pub fn load_issuer(path: &Path) -> Result<TestIssuer, FixturesError> {
    let bytes = fs::read(path).map_err(|source| FixturesError::Io {
        path: path.to_owned(),
        source,
    })?;
    let f: IssuerFile = serde_json::from_slice(&bytes).map_err(|e| FixturesError::Invalid(path.to_owned(), e.to_string()))?;
    let key = SigningKeyPair::from_b64(&f.signing_key).map_err(|e| FixturesError::Invalid(path.to_owned(), e.to_string()))?;
    Ok(TestIssuer::with_key(f.id, key))
}

/// A credential naming the holder's organization.
pub fn organization_credential(issuer: &TestIssuer, wallet: &Wallet, organization_type: &str) -> Credential {
    issuer.issue(
        format!("urn:cred:{}:main", wallet.did),
        wallet,
        [
            ("organization_type".to_owned(), ClaimValue::from(organization_type)),
            ("organization_name".to_owned(), ClaimValue::from("Example Org")),
            ("country".to_owned(), ClaimValue::from("de")),
        ],
    )
}

/// Deterministic sample records: 150 integers between 18 and 90.
pub fn sample_records() -> Vec<i64> {
    (0..150).map(|i| 18 + (i * 37 + 11) % 73).collect()
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), FixturesError> {
    let io_err = |source| FixturesError::Io {
        path: path.to_owned(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err)?;
    }
    fs::write(path, bytes).map_err(io_err)
}

/// Paths written by [`init`].
#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub dir: PathBuf,
    pub storage_url: String,
    pub marketplace_url: String,
    pub storage_config: PathBuf,
    pub node_configs: Vec<PathBuf>,
    pub marketplace_config: PathBuf,
    pub registry_dir: PathBuf,
    pub wallets: Vec<PathBuf>,
    pub presentations: Vec<PathBuf>,
    pub policy: PathBuf,
    pub data: PathBuf,
    pub metadata: PathBuf,
}

/// Trust services answering from the registry fixture directory `dir`, or
/// from empty registries, without any network access.
pub fn offline_trust_services(dir: Option<&Path>) -> Result<Arc<TrustServices>, FixtureError> {
    let registries = match dir {
        Some(d) => Registries::load(d)?,
        None => Registries::default(),
    };
    let urls = RegistryUrls::at(OFFLINE_REGISTRY);
    let fetcher = Arc::new(StaticFetcher::new());
    fetcher.insert(urls.trust_list.clone(), json!(registries.trust_list()));
    fetcher.insert(urls.revocation.clone(), json!(registries.revocation_list()));
    for doc in registries.dids() {
        let id = doc["id"].as_str().expect("loaded documents have ids").to_owned();
        fetcher.insert(urls.did_url(&id), doc);
    }
    Ok(Arc::new(TrustServices::new(urls, RegistryCache::new(fetcher), FormatSet::bundled())))
}

/// Writes a complete local setup for `nodes` nodes into `dir`, with
/// services on 127.0.0.1 from `base_port` on (see [`BASE_PORT`]).
pub fn init(dir: &Path, nodes: usize, base_port: u16) -> Result<FixtureSet, FixturesError> {
    if nodes == 0 || nodes > 99 {
        return Err(FixturesError::Invalid(dir.to_owned(), "need between 1 and 99 nodes".into()));
    }
    let storage_port = base_port;
    let storage_url = format!("http://127.0.0.1:{storage_port}");
    let issuer = TestIssuer::new(ISSUER_DID);
    save_issuer(&dir.join("issuer.json"), &issuer)?;

    let registry_dir = dir.join("registry");
    write(
        &registry_dir.join("trustlist.json"),
        &serde_json::to_vec_pretty(&json!({"scheme": "eIDAS", "qualified": [ISSUER_DID]})).expect("json"),
    )?;
    write(
        &registry_dir.join("revocation.json"),
        &serde_json::to_vec_pretty(&json!({"revoked": []})).expect("json"),
    )?;
    write(
        &registry_dir.join("did").join("issuer.json"),
        &serde_json::to_vec_pretty(&issuer.did_document()).expect("json"),
    )?;

    let storage_config = dir.join("storage.toml");
    let storage = StorageFileConfig {
        listen: format!("127.0.0.1:{storage_port}"),
        blob_dir: "blobs".into(),
        registry_dir: "registry".into(),
        public_url: Some(storage_url.clone()),
        max_blob_bytes: None,
    };
    write(&storage_config, toml::to_string(&storage).expect("toml").as_bytes())?;

    let mut node_configs = Vec::with_capacity(nodes);
    let mut node_urls = Vec::with_capacity(nodes);
    let marketplace_url = format!("http://127.0.0.1:{}", base_port + 100);
    for i in 1..=nodes {
        let key = EncryptionKeyPair::generate();
        let key_file = PathBuf::from("keys").join(format!("node{i}.key"));
        write(&dir.join(&key_file), key.secret_b64().as_bytes())?;
        let port = base_port + i as u16;
        let config = NodeFileConfig {
            index: i as u32,
            nodes,
            key_file,
            listen: format!("127.0.0.1:{port}"),
            registry_url: storage_url.clone(),
            storage_allow_list: vec![format!("{storage_url}/blobs/")],
            local_policy: None,
            budget: None,
            cache_ttl_secs: None,
            formats: None,
        };
        let path = dir.join(format!("node{i}.toml"));
        write(&path, toml::to_string(&config).expect("toml").as_bytes())?;
        node_configs.push(path);
        node_urls.push(format!("http://127.0.0.1:{port}"));
    }

    let marketplace_config = dir.join("marketplace.toml");
    let market = MarketplaceFileConfig {
        listen: format!("127.0.0.1:{}", base_port + 100),
        nodes: node_urls,
        data_file: Some("marketplace.json".into()),
        submit_timeout_secs: None,
    };
    write(&marketplace_config, toml::to_string(&market).expect("toml").as_bytes())?;

    let mut wallets = Vec::new();
    let mut presentations = Vec::new();
    for (name, did, org) in BUYERS {
        let wallet = Wallet::generate(did);
        let cred = organization_credential(&issuer, &wallet, org);
        let path = dir.join("wallets").join(format!("{name}.json"));
        write(
            &path,
            &serde_json::to_vec_pretty(&wallet.to_json(std::slice::from_ref(&cred))).expect("json"),
        )?;
        wallets.push(path);
        let presentation = wallet.present(cred, Vec::new(), Challenge([0; 32]));
        let path = dir.join("presentations").join(format!("{name}.json"));
        write(&path, &serde_json::to_vec_pretty(&presentation.to_value()).expect("json"))?;
        presentations.push(path);
    }

    let policy = dir.join("policies").join("example.tpl");
    write(&policy, EXAMPLE_POLICY.as_bytes())?;
    let data = dir.join("data").join("ages.csv");
    let csv: String = std::iter::once("age".to_owned())
        .chain(sample_records().iter().map(i64::to_string))
        .map(|l| l + "\n")
        .collect();
    write(&data, csv.as_bytes())?;
    let metadata = dir.join("data").join("ages.json");
    write(
        &metadata,
        &serde_json::to_vec_pretty(&json!({
            "title": "Patient ages",
            "description": "Ages of 150 patients",
            "record_count": 150,
            "tags": ["health", "age"]
        }))
        .expect("json"),
    )?;

    Ok(FixtureSet {
        dir: dir.to_owned(),
        storage_url,
        marketplace_url,
        storage_config,
        node_configs,
        marketplace_config,
        registry_dir,
        wallets,
        presentations,
        policy,
        data,
        metadata,
    })
}
