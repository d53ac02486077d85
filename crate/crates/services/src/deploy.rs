//! Every service of a deployment on loopback ports inside one process,
//! driven by its own runtime. For tests, benchmarks and the demo.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::Router;
use tempfile::TempDir;
use tokio::runtime::Runtime;
use tokio::task::JoinHandle;
use tplmarket_core::builtins::FormatSet;
use tplmarket_core::credentials::{Credential, TestIssuer, Wallet};
use tplmarket_core::crypto::EncryptionKeyPair;
use tplmarket_core::node::NodeConfig;
use tplmarket_core::tpl::Policy;

use crate::capture::Capture;
use crate::client::{MarketplaceClient, StorageClient};
use crate::fixtures::{organization_credential, ISSUER_DID};
use crate::marketplace::{self, Marketplace, SUBMIT_TIMEOUT};
use crate::node::{self, NodeState};
use crate::storage::{self, BlobStore, Registries, RevocationList, StorageState, TrustList, DEFAULT_MAX_BLOB};

#[derive(Debug, Clone)]
pub struct DeploymentOptions {
    pub nodes: usize,
    /// Extra policy per node; empty means none anywhere.
    pub local_policies: Vec<Option<Policy>>,
    pub capture: bool,
    pub max_blob: usize,
}

impl DeploymentOptions {
    pub fn new(nodes: usize) -> Self {
        DeploymentOptions {
            nodes,
            local_policies: Vec::new(),
            capture: false,
            max_blob: DEFAULT_MAX_BLOB,
        }
    }
}

pub struct LocalDeployment {
    pub storage_url: String,
    pub node_urls: Vec<String>,
    pub marketplace_url: String,
    pub storage: Arc<StorageState>,
    pub nodes: Vec<Arc<NodeState>>,
    pub marketplace: Arc<Marketplace>,
    pub issuer: TestIssuer,
    pub capture: Capture,
    node_tasks: Vec<JoinHandle<()>>,
    _dir: TempDir,
    runtime: Option<Runtime>,
}

impl std::fmt::Debug for LocalDeployment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LocalDeployment")
            .field("storage_url", &self.storage_url)
            .field("node_urls", &self.node_urls)
            .field("marketplace_url", &self.marketplace_url)
            .finish_non_exhaustive()
    }
}

fn serve(rt: &Runtime, router: Router) -> std::io::Result<(String, JoinHandle<()>)> {
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))?;
    let addr: SocketAddr = listener.local_addr()?;
    let task = rt.spawn(async move {
        if let Err(e) = axum::serve(listener, router).await {
            tracing::error!("server on {addr}: {e}");
        }
    });
    Ok((format!("http://{addr}"), task))
}

impl LocalDeployment {
    /// Starts storage (with a qualified issuer `did:ex:issuer`), the nodes
    /// and the marketplace. Must not be called from inside a runtime.
    pub fn start(options: DeploymentOptions) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(4)
            .enable_all()
            .build()?;
        let dir = tempfile::tempdir()?;
        let capture = Capture::default();
        let wrap = |service: &str, r: Router| if options.capture { capture.wrap(service, r) } else { r };

        let issuer = TestIssuer::new(ISSUER_DID);
        let registries = Registries::new(
            TrustList {
                scheme: "eIDAS".into(),
                qualified: vec![issuer.id.clone()],
            },
            RevocationList::default(),
            [issuer.did_document()],
        );
        let blobs = BlobStore::open(dir.path().join("blobs"), options.max_blob).map_err(std::io::Error::other)?;
        let storage = Arc::new(StorageState::new(blobs, registries, "http://unbound"));
        let (storage_url, _) = serve(&runtime, wrap("storage", storage::router(storage.clone())))?;
        storage.set_public_url(&storage_url);

        let n = options.nodes;
        let mut nodes = Vec::with_capacity(n);
        let mut node_urls = Vec::with_capacity(n);
        let mut node_tasks = Vec::with_capacity(n);
        for i in 0..n {
            let index = i as u32 + 1;
            let mut config = NodeConfig::new(index, n, EncryptionKeyPair::generate(), vec![format!("{storage_url}/blobs/")]);
            config.local_policy = options.local_policies.get(i).cloned().flatten();
            let state = Arc::new(NodeState::http(
                config,
                FormatSet::bundled(),
                &storage_url,
                None,
                runtime.handle().clone(),
            ));
            let (url, task) = serve(&runtime, wrap(&format!("node{index}"), node::router(state.clone())))?;
            nodes.push(state);
            node_urls.push(url);
            node_tasks.push(task);
        }

        let marketplace = Arc::new(Marketplace::open(
            node_urls.clone(),
            Some(dir.path().join("marketplace.json")),
            SUBMIT_TIMEOUT,
        )?);
        let (marketplace_url, _) = serve(&runtime, wrap("marketplace", marketplace::router(marketplace.clone())))?;

        Ok(LocalDeployment {
            storage_url,
            node_urls,
            marketplace_url,
            storage,
            nodes,
            marketplace,
            issuer,
            capture,
            node_tasks,
            _dir: dir,
            runtime: Some(runtime),
        })
    }

    pub fn market(&self) -> MarketplaceClient {
        MarketplaceClient::new(&self.marketplace_url)
    }

    pub fn storage_client(&self) -> StorageClient {
        StorageClient::new(&self.storage_url)
    }

    /// A fresh buyer wallet with an organization credential from the
    /// deployment's issuer.
    pub fn buyer(&self, did: &str, organization_type: &str) -> (Wallet, Credential) {
        let wallet = Wallet::generate(did);
        let cred = organization_credential(&self.issuer, &wallet, organization_type);
        (wallet, cred)
    }

    /// Stops node `index` (1-based); it stops accepting connections.
    pub fn stop_node(&mut self, index: u32) {
        self.node_tasks[index as usize - 1].abort();
    }

    pub fn revoke(&self, credential_id: &str) {
        self.storage.registries.revoke(credential_id);
    }
}

impl Drop for LocalDeployment {
    fn drop(&mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}
