//! A whole deployment in one process: trust registries, an issuer, `N`
//! nodes and an in-memory package store. Used by tests, examples and the
//! `demo` command; no network involved.

use std::sync::Arc;

use rand::rngs::OsRng;
use serde_json::{json, Value};

use crate::builtins::{FormatSet, RegistryCache, RegistryUrls, StaticFetcher, TrustServices};
use crate::client::{build_request, finalize, prepare_packages, BuyError, ClientError, ResultValue};
use crate::credentials::{ClaimValue, Credential, TestIssuer, Wallet};
use crate::crypto::EncryptionKeyPair;
use crate::node::{MemoryPackages, Node, NodeConfig};
use crate::protocol::{Computation, ComputationRequest, NodeInfo, ProductRef, ResultEnvelope};
use crate::tpl::Policy;

/// The example policy: qualified issuer, more than 100 records, and an
/// organization type matched to the computation type.
pub const EXAMPLE_POLICY: &str = "\
accept(BuyerCreds, NumRecords, ComputationType) :-
  set_format(BuyerCreds, w3c_verifiablePresentation),
  extract(BuyerCreds, mainCredential, BuyerCredential),
  set_format(BuyerCredential, w3c_verifiableCredential),

  extract(BuyerCredential, issuer, Issuer),
  check_eIDAS_qualified(Issuer),

  NumRecords > 100,
  extract(BuyerCredential, organization_type, OrgType),
  acceptComputation(OrgType, ComputationType).

acceptComputation(OrgType, ComputationType) :-
  OrgType == public_university,
  ComputationType == machine_learning.

acceptComputation(OrgType, ComputationType) :-
  OrgType == private_research,
  ComputationType == simple_statistics.
";

/// Base URL the sandbox registries pretend to live at.
pub const REGISTRY_BASE: &str = "http://registry.sandbox";
/// Prefix of sandbox package URLs.
pub const STORAGE_BASE: &str = "http://storage.sandbox/blobs/";

pub struct Sandbox {
    pub issuer: TestIssuer,
    pub fetcher: Arc<StaticFetcher>,
    pub urls: RegistryUrls,
    pub services: Arc<TrustServices>,
    pub packages: Arc<MemoryPackages>,
    pub nodes: Vec<Node>,
    pub directory: Vec<NodeInfo>,
    pub node_keys: Vec<EncryptionKeyPair>,
    qualified: Vec<String>,
    revoked: Vec<String>,
}

impl std::fmt::Debug for Sandbox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Sandbox").field("nodes", &self.nodes.len()).finish_non_exhaustive()
    }
}

impl Sandbox {
    /// `n` nodes, one eIDAS-qualified issuer `did:ex:issuer`.
    pub fn new(n: usize) -> Sandbox {
        Sandbox::with_local_policies(n, vec![None; n])
    }

    /// Like [`Sandbox::new`], with an extra node-local policy per node.
    pub fn with_local_policies(n: usize, local: Vec<Option<Policy>>) -> Sandbox {
        assert_eq!(local.len(), n, "one entry per node");
        let fetcher = Arc::new(StaticFetcher::new());
        let urls = RegistryUrls::at(REGISTRY_BASE);
        let services = Arc::new(TrustServices::new(
            urls.clone(),
            RegistryCache::new(fetcher.clone()),
            FormatSet::bundled(),
        ));
        let packages = Arc::new(MemoryPackages::default());
        let node_keys: Vec<EncryptionKeyPair> = (0..n).map(|_| EncryptionKeyPair::generate()).collect();
        let mut nodes = Vec::with_capacity(n);
        let mut directory = Vec::with_capacity(n);
        for (i, (key, local_policy)) in node_keys.iter().zip(local).enumerate() {
            let index = i as u32 + 1;
            let mut config = NodeConfig::new(index, n, key.clone(), vec![STORAGE_BASE.to_owned()]);
            config.local_policy = local_policy;
            directory.push(NodeInfo {
                index,
                package_key: key.public(),
                url: None,
            });
            nodes.push(Node::new(config, services.clone(), packages.clone()));
        }
        let issuer = TestIssuer::new("did:ex:issuer");
        let mut sb = Sandbox {
            fetcher,
            urls,
            services,
            packages,
            nodes,
            directory,
            node_keys,
            qualified: Vec::new(),
            revoked: Vec::new(),
            issuer: issuer.clone(),
        };
        sb.add_issuer(&issuer, true);
        sb
    }

    fn publish_lists(&self) {
        self.fetcher.insert(
            self.urls.trust_list.clone(),
            json!({"scheme": "eIDAS", "qualified": self.qualified}),
        );
        self.fetcher
            .insert(self.urls.revocation.clone(), json!({"revoked": self.revoked}));
        self.services.cache.clear();
    }

    /// Makes `issuer`'s key resolvable, and lists it as qualified if asked.
    pub fn add_issuer(&mut self, issuer: &TestIssuer, qualified: bool) {
        self.fetcher.insert(self.urls.did_url(&issuer.id), issuer.did_document());
        if qualified && !self.qualified.contains(&issuer.id) {
            self.qualified.push(issuer.id.clone());
        }
        self.publish_lists();
    }

    pub fn revoke(&mut self, credential_id: &str) {
        self.revoked.push(credential_id.to_owned());
        self.publish_lists();
    }

    /// Serves an arbitrary document at `url` through the registry fetcher.
    pub fn serve(&self, url: &str, doc: Value) {
        self.fetcher.insert(url, doc);
        self.services.cache.clear();
    }

    /// Shares, seals and stores `records` under `product_id`; returns the
    /// reference a buyer puts into a request.
    pub fn publish(&self, product_id: &str, policy: &str, records: &[i64]) -> Result<ProductRef, ClientError> {
        let sealed = prepare_packages(product_id, policy, records, &self.directory, &mut OsRng)?;
        let mut package_urls = std::collections::BTreeMap::new();
        for s in sealed {
            let url = format!("{STORAGE_BASE}{product_id}/{}", s.recipient);
            self.packages
                .insert(url.clone(), serde_json::to_vec(&s).expect("sealed package serializes"));
            package_urls.insert(s.recipient, url);
        }
        Ok(ProductRef {
            product_id: product_id.to_owned(),
            package_urls,
            policy: policy.to_owned(),
        })
    }

    /// A fresh buyer wallet and a credential from the sandbox issuer.
    pub fn buyer(&self, did: &str, organization_type: &str) -> (Wallet, Credential) {
        let wallet = Wallet::generate(did);
        let cred = self.issuer.issue(
            format!("urn:cred:{did}:main"),
            &wallet,
            [
                ("organization_type".to_owned(), ClaimValue::from(organization_type)),
                ("organization_name".to_owned(), ClaimValue::from("Example Org")),
                ("country".to_owned(), ClaimValue::from("de")),
            ],
        );
        (wallet, cred)
    }

    pub fn request(
        &self,
        request_id: &str,
        products: Vec<ProductRef>,
        computation: Computation,
        wallet: &Wallet,
        main: Credential,
        additional: Vec<Credential>,
    ) -> ComputationRequest {
        build_request(request_id, products, computation, wallet, main, additional)
    }

    /// Sends `req` to every node, as the marketplace would.
    pub fn submit(&self, req: &ComputationRequest) -> Vec<ResultEnvelope> {
        self.nodes.iter().map(|n| n.respond(req)).collect()
    }

    pub fn finalize(&self, req: &ComputationRequest, envelopes: &[ResultEnvelope], wallet: &Wallet) -> Result<ResultValue, BuyError> {
        finalize(req, envelopes, wallet, self.nodes.len())
    }

    /// Request, fan-out and reconstruction in one call.
    pub fn buy(
        &self,
        request_id: &str,
        products: Vec<ProductRef>,
        computation: Computation,
        wallet: &Wallet,
        main: Credential,
    ) -> Result<ResultValue, BuyError> {
        let req = self.request(request_id, products, computation, wallet, main, Vec::new());
        let envelopes = self.submit(&req);
        self.finalize(&req, &envelopes, wallet)
    }
}
