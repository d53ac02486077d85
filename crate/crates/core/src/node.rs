//! Request handling on a computation node, independent of transport.
//!
//! The pipeline runs strictly in order and stops at the first failure;
//! nothing is computed or encrypted unless every check passed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::{Arc, Mutex};

use crate::builtins::{standard_registry, TrustServices};
use crate::credentials::{same_subject, verify_presentation, CredentialError};
use crate::crypto::{encrypt_result, hash_policy, open_from_seller, EncryptionKeyPair, PolicyHash, SealedPackage};
use crate::protocol::{
    result_context, ComputationRequest, DataPackage, ErrorCode, NodeError, Operation, ResultEnvelope,
};
use crate::sharing::{check_range, local_sum, Fe, Share, SharingError};
use crate::tpl::{
    aggregate_policies, is_atom_name, BuiltinError, BuiltinRegistry, EvalError, Policy, Program, Session, Term, Trace,
};

/// Trace events kept per evaluation.
pub const TRACE_LIMIT: usize = 2_000;
const PROGRAM_CACHE_CAP: usize = 256;

/// Where sealed packages come from, typically the storage service.
pub trait PackageSource: Send + Sync {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, String>;
}

impl<T: PackageSource + ?Sized> PackageSource for Arc<T> {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, String> {
        (**self).fetch(url)
    }
}

/// In-memory package source keyed by URL.
#[derive(Debug, Default)]
pub struct MemoryPackages(pub Mutex<HashMap<String, Vec<u8>>>);

impl MemoryPackages {
    pub fn insert(&self, url: impl Into<String>, bytes: Vec<u8>) {
        self.0.lock().expect("packages lock").insert(url.into(), bytes);
    }
}

impl PackageSource for MemoryPackages {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, String> {
        self.0
            .lock()
            .expect("packages lock")
            .get(url)
            .cloned()
            .ok_or_else(|| format!("{url}: not found"))
    }
}

#[derive(Clone, Debug)]
pub struct NodeConfig {
    /// 1-based index; also the share evaluation point.
    pub index: u32,
    pub nodes: usize,
    pub key: EncryptionKeyPair,
    /// URL prefixes packages may be fetched from. Empty allows none.
    pub storage_allow_list: Vec<String>,
    /// Policy this node enforces in addition to the sellers' policies.
    pub local_policy: Option<Policy>,
    pub budget: u64,
}

impl NodeConfig {
    pub fn new(index: u32, nodes: usize, key: EncryptionKeyPair, storage_allow_list: Vec<String>) -> Self {
        NodeConfig {
            index,
            nodes,
            key,
            storage_allow_list,
            local_policy: None,
            budget: crate::tpl::DEFAULT_BUDGET,
        }
    }
}

/// Successful evaluation of a request on one node.
#[derive(Clone, Debug)]
pub struct Granted {
    pub share: Share,
    pub public_count: Option<u64>,
    pub trace: Vec<String>,
}

pub struct Node {
    config: NodeConfig,
    registry: BuiltinRegistry,
    services: Arc<TrustServices>,
    packages: Arc<dyn PackageSource>,
    programs: Mutex<HashMap<Vec<PolicyHash>, Arc<(Program, String)>>>,
}

impl std::fmt::Debug for Node {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Node").field("index", &self.config.index).finish_non_exhaustive()
    }
}

fn err(code: ErrorCode, message: impl Into<String>) -> NodeError {
    NodeError::new(code, message)
}

fn credential_error(e: CredentialError) -> NodeError {
    let reason = match &e {
        CredentialError::BadHolderSignature => "bad_holder_signature",
        CredentialError::ChallengeMismatch => "challenge_mismatch",
        CredentialError::BadIssuerSignature(_) => "bad_issuer_signature",
        CredentialError::IssuerKeyUnavailable { .. } => {
            return err(ErrorCode::RegistryUnavailable, e.to_string());
        }
        CredentialError::SubjectMismatch(_) | CredentialError::InvalidSubject { .. } => {
            return err(ErrorCode::SubjectMismatch, e.to_string());
        }
    };
    err(ErrorCode::PresentationInvalid, e.to_string()).with_reason(reason)
}

fn sharing_error(e: SharingError) -> NodeError {
    match e {
        SharingError::LengthMismatch { .. } => err(ErrorCode::LengthMismatch, e.to_string()),
        _ => err(ErrorCode::ResultOutOfRange, e.to_string()),
    }
}

/// Product id of the node-local policy inside the aggregate.
const LOCAL_POLICY_ID: &str = "node-local";

impl Node {
    pub fn new(config: NodeConfig, services: Arc<TrustServices>, packages: Arc<dyn PackageSource>) -> Self {
        Node {
            registry: standard_registry(services.clone()),
            config,
            services,
            packages,
            programs: Mutex::new(HashMap::new()),
        }
    }

    pub fn index(&self) -> u32 {
        self.config.index
    }

    pub fn config(&self) -> &NodeConfig {
        &self.config
    }

    pub fn services(&self) -> &Arc<TrustServices> {
        &self.services
    }

    /// Runs the pipeline and wraps the outcome in a response envelope.
    pub fn respond(&self, req: &ComputationRequest) -> ResultEnvelope {
        let index = self.config.index;
        match self.handle_request(req) {
            Ok(granted) => {
                let plaintext = serde_json::to_vec(&granted.share).expect("share serializes");
                match encrypt_result(
                    &plaintext,
                    &req.presentation.main_credential.encryption_key,
                    &result_context(&req.request_id, index),
                ) {
                    Ok(ct) => ResultEnvelope {
                        request_id: req.request_id.clone(),
                        node_index: index,
                        ciphertext: Some(ct),
                        public_count: granted.public_count,
                        error: None,
                    },
                    Err(e) => ResultEnvelope::failure(
                        &req.request_id,
                        index,
                        err(ErrorCode::PresentationInvalid, format!("buyer encryption key: {e}"))
                            .with_reason("bad_encryption_key"),
                    ),
                }
            }
            Err(e) => ResultEnvelope::failure(&req.request_id, index, e),
        }
    }

    /// Every check and the share-local computation, without encryption.
    pub fn handle_request(&self, req: &ComputationRequest) -> Result<Granted, NodeError> {
        let op = self.validate(req)?;
        let packages = self.open_packages(req)?;
        for (product, package) in req.products.iter().zip(&packages) {
            let h = hash_policy(product.policy.as_bytes());
            if h != package.policy_hash {
                return Err(err(
                    ErrorCode::PolicyHashMismatch,
                    format!(
                        "policy of `{}` hashes to {h}, package is bound to {}",
                        product.product_id, package.policy_hash
                    ),
                ));
            }
        }
        verify_presentation(&req.presentation, &req.digest(), self.services.as_ref()).map_err(credential_error)?;
        same_subject(&req.presentation).map_err(credential_error)?;

        let total: u64 = packages.iter().map(|p| p.record_count).sum();
        let trace = self.authorize(req, total)?;
        let (y, public_count) = self.compute(op, req, &packages, total)?;
        Ok(Granted {
            share: Share { x: self.config.index, y },
            public_count,
            trace,
        })
    }

    fn validate(&self, req: &ComputationRequest) -> Result<Operation, NodeError> {
        if req.products.is_empty() {
            return Err(err(ErrorCode::MalformedRequest, "no products"));
        }
        let mut ids = HashSet::new();
        for p in &req.products {
            if !ids.insert(&p.product_id) {
                return Err(err(ErrorCode::MalformedRequest, format!("product `{}` listed twice", p.product_id)));
            }
        }
        if !is_atom_name(&req.computation.kind) {
            return Err(err(
                ErrorCode::MalformedRequest,
                format!("computation type `{}` is not an atom", req.computation.kind),
            ));
        }
        let op = req.computation.operation().ok_or_else(|| {
            err(
                ErrorCode::UnsupportedComputation,
                format!("operation `{}` is not supported", req.computation.op),
            )
        })?;
        if op == Operation::Dot && req.computation.weights.is_none() {
            return Err(err(ErrorCode::MalformedRequest, "dot needs weights"));
        }
        Ok(op)
    }

    fn allowed(&self, url: &str) -> bool {
        self.config.storage_allow_list.iter().any(|prefix| url.starts_with(prefix.as_str()))
    }

    fn open_packages(&self, req: &ComputationRequest) -> Result<Vec<DataPackage>, NodeError> {
        let me = self.config.index;
        let mut out = Vec::with_capacity(req.products.len());
        for product in &req.products {
            let pid = &product.product_id;
            let url = product
                .package_urls
                .get(&me)
                .ok_or_else(|| err(ErrorCode::MalformedRequest, format!("no package URL for node {me} in `{pid}`")))?;
            if !self.allowed(url) {
                return Err(err(ErrorCode::StorageUnreachable, format!("{url} is not on the storage allow-list")));
            }
            let bytes = self.packages.fetch(url).map_err(|e| err(ErrorCode::StorageUnreachable, e))?;
            let sealed: SealedPackage = serde_json::from_slice(&bytes)
                .map_err(|e| err(ErrorCode::PackageDecryptFailure, format!("{url}: not a sealed package: {e}")))?;
            if sealed.recipient != me || sealed.product_id != *pid {
                return Err(err(
                    ErrorCode::PackageDecryptFailure,
                    format!("{url}: sealed for node {} / product `{}`", sealed.recipient, sealed.product_id),
                ));
            }
            let plain = open_from_seller(&sealed, &self.config.key)
                .map_err(|e| err(ErrorCode::PackageDecryptFailure, format!("{url}: {e}")))?;
            let package: DataPackage = serde_json::from_slice(&plain)
                .map_err(|e| err(ErrorCode::PackageInvalid, format!("{url}: {e}")))?;
            if package.product_id != *pid
                || package.record_count != package.records.len() as u64
                || package.records.iter().any(|s| s.x != me)
            {
                return Err(err(ErrorCode::PackageInvalid, format!("{url}: inconsistent package for `{pid}`")));
            }
            out.push(package);
        }
        Ok(out)
    }

    /// The aggregate of all product policies (sorted by product id) plus
    /// the node-local policy, cached by policy digests.
    fn program(&self, req: &ComputationRequest) -> Result<Arc<(Program, String)>, NodeError> {
        let mut products: Vec<_> = req.products.iter().collect();
        products.sort_by(|a, b| a.product_id.cmp(&b.product_id));
        let mut key: Vec<PolicyHash> = products.iter().map(|p| hash_policy(p.policy.as_bytes())).collect();
        // Product ids shape the namespaces, so they are part of the key.
        key.push(hash_policy(
            products.iter().map(|p| p.product_id.as_str()).collect::<Vec<_>>().join("\n").as_bytes(),
        ));
        if let Some(hit) = self.programs.lock().expect("program cache").get(&key) {
            return Ok(hit.clone());
        }
        let mut policies = Vec::with_capacity(products.len() + 1);
        for p in &products {
            let policy = Policy::parse(&p.policy, &p.product_id)
                .map_err(|e| err(ErrorCode::PolicyInvalid, format!("policy of `{}`: {e}", p.product_id)))?;
            policies.push(policy);
        }
        if let Some(local) = &self.config.local_policy {
            policies.push(Policy::from_parts(
                LOCAL_POLICY_ID.to_owned(),
                local.clauses().to_vec(),
                local.entry_point().clone(),
            ));
        }
        let aggregate = aggregate_policies(&policies).map_err(|e| err(ErrorCode::PolicyInvalid, e.to_string()))?;
        let program =
            Program::load(&[aggregate.clone()], &self.registry).map_err(|e| err(ErrorCode::PolicyInvalid, e.to_string()))?;
        let entry = Arc::new((program, aggregate.entry_point().name.clone()));
        let mut cache = self.programs.lock().expect("program cache");
        if cache.len() >= PROGRAM_CACHE_CAP {
            cache.clear();
        }
        cache.insert(key, entry.clone());
        Ok(entry)
    }

    fn authorize(&self, req: &ComputationRequest, total: u64) -> Result<Vec<String>, NodeError> {
        let entry = self.program(req)?;
        let (program, entry_name) = &*entry;
        let verdict = evaluate(
            program,
            entry_name,
            req.presentation.to_value(),
            total,
            &req.computation.kind,
            self.config.budget,
        );
        let trace = verdict.trace;
        match verdict.outcome {
            Ok(true) => Ok(trace.lines()),
            Ok(false) => Err(NodeError {
                code: ErrorCode::PolicyDenied,
                message: "the aggregated policy does not accept the request".into(),
                reason: None,
                failed_goal: trace.failed_goal.clone(),
                trace: trace.lines(),
            }),
            Err(EvalError::Builtin {
                predicate,
                source: source @ BuiltinError::RegistryUnavailable { .. },
            }) => Err(err(ErrorCode::RegistryUnavailable, format!("{predicate}: {source}"))),
            Err(e) => Err(NodeError {
                trace: trace.lines(),
                ..err(ErrorCode::EvaluationError, e.to_string())
            }),
        }
    }

    fn compute(
        &self,
        op: Operation,
        req: &ComputationRequest,
        packages: &[DataPackage],
        total: u64,
    ) -> Result<(Fe, Option<u64>), NodeError> {
        let records = || packages.iter().flat_map(|p| p.records.iter().map(move |s| (s.y, p.record_bound)));
        match op {
            Operation::Count => Ok((Fe::new(total), None)),
            Operation::Sum | Operation::Mean => {
                check_range::<{ crate::sharing::MERSENNE61 }>(records().map(|(_, b)| (1, b))).map_err(sharing_error)?;
                let ys: Vec<Fe> = records().map(|(y, _)| y).collect();
                let count = (op == Operation::Mean).then_some(total);
                Ok((local_sum(&ys), count))
            }
            Operation::Dot => {
                let weights = req.computation.weights.as_deref().unwrap_or_default();
                if weights.len() as u64 != total {
                    return Err(sharing_error(SharingError::LengthMismatch {
                        records: total as usize,
                        weights: weights.len(),
                    }));
                }
                check_range::<{ crate::sharing::MERSENNE61 }>(
                    records().zip(weights).map(|((_, b), w)| (w.unsigned_abs() as u128, b)),
                )
                .map_err(sharing_error)?;
                Ok((records().zip(weights).map(|((y, _), w)| y * Fe::reduce(*w as i128)).sum(), None))
            }
        }
    }
}

/// Outcome of one policy evaluation with its audit trace.
#[derive(Debug)]
pub struct Verdict {
    pub outcome: Result<bool, EvalError>,
    pub trace: Trace,
}

impl Verdict {
    pub fn granted(&self) -> bool {
        matches!(self.outcome, Ok(true))
    }
}

/// Solves `entry(Presentation, NumRecords, ComputationType)` with the
/// presentation document behind a handle, exactly as nodes do.
pub fn evaluate(
    program: &Program,
    entry: &str,
    presentation: serde_json::Value,
    num_records: u64,
    computation_type: &str,
    budget: u64,
) -> Verdict {
    let mut session = Session::new().with_budget(budget).with_trace(TRACE_LIMIT);
    let handle = session.handles.load(presentation);
    let query = Term::compound(
        entry,
        vec![
            Term::Handle(handle),
            Term::Int(num_records.into()),
            Term::atom(computation_type),
        ],
    );
    let outcome = program.solve(&query, &mut session).map(|b| b.is_some());
    Verdict {
        outcome,
        trace: session.trace.take().unwrap_or_default(),
    }
}

/// Groups envelopes by node, keeping the first per index.
pub fn by_node(envelopes: &[ResultEnvelope]) -> BTreeMap<u32, &ResultEnvelope> {
    let mut out = BTreeMap::new();
    for e in envelopes {
        out.entry(e.node_index).or_insert(e);
    }
    out
}
