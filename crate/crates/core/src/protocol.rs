//! Messages exchanged between sellers, the marketplace, nodes and buyers.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::credentials::{Challenge, Presentation};
use crate::crypto::{PolicyHash, ResultCiphertext};
use crate::sharing::Share;

/// Plaintext sealed for one node: that node's share of every record of a
/// product, plus the digest binding the product's policy.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPackage {
    pub product_id: String,
    pub policy_hash: PolicyHash,
    pub records: Vec<Share>,
    pub record_count: u64,
    /// Seller-declared bound on `|record|`; nodes use it to refuse
    /// computations whose result could wrap around the field.
    pub record_bound: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Operation {
    Sum,
    Count,
    Mean,
    Dot,
}

impl Operation {
    pub const ALL: [Operation; 4] = [Operation::Sum, Operation::Count, Operation::Mean, Operation::Dot];

    pub fn name(self) -> &'static str {
        match self {
            Operation::Sum => "sum",
            Operation::Count => "count",
            Operation::Mean => "mean",
            Operation::Dot => "dot",
        }
    }

    pub fn parse(name: &str) -> Option<Operation> {
        Operation::ALL.into_iter().find(|op| op.name() == name)
    }
}

impl fmt::Display for Operation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// What the buyer wants computed. `op` stays a string on the wire so an
/// unsupported operation reaches the node and is refused there.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Computation {
    /// Computation type handed to policies as an atom, e.g.
    /// `machine_learning`.
    #[serde(rename = "type")]
    pub kind: String,
    pub op: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<i64>>,
}

impl Computation {
    pub fn new(kind: &str, op: Operation) -> Self {
        Computation {
            kind: kind.to_owned(),
            op: op.name().to_owned(),
            weights: None,
        }
    }

    pub fn dot(kind: &str, weights: Vec<i64>) -> Self {
        Computation {
            weights: Some(weights),
            ..Computation::new(kind, Operation::Dot)
        }
    }

    pub fn operation(&self) -> Option<Operation> {
        Operation::parse(&self.op)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductRef {
    pub product_id: String,
    /// Node index → URL of that node's sealed package.
    pub package_urls: BTreeMap<u32, String>,
    /// Policy source text; nodes check it against the hash in the package.
    pub policy: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputationRequest {
    pub request_id: String,
    pub products: Vec<ProductRef>,
    pub computation: Computation,
    pub presentation: Presentation,
}

/// The request minus its presentation: the part the challenge commits to.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestBody {
    pub request_id: String,
    pub products: Vec<ProductRef>,
    pub computation: Computation,
}

impl RequestBody {
    /// SHA-256 of the canonical JSON of the body.
    pub fn digest(&self) -> Challenge {
        Challenge::digest_of(self).expect("request body has no floats")
    }

    pub fn with_presentation(self, presentation: Presentation) -> ComputationRequest {
        ComputationRequest {
            request_id: self.request_id,
            products: self.products,
            computation: self.computation,
            presentation,
        }
    }
}

impl ComputationRequest {
    pub fn body(&self) -> RequestBody {
        RequestBody {
            request_id: self.request_id.clone(),
            products: self.products.clone(),
            computation: self.computation.clone(),
        }
    }

    pub fn digest(&self) -> Challenge {
        self.body().digest()
    }
}

/// Associated data binding a result ciphertext to its request and node.
pub fn result_context(request_id: &str, node_index: u32) -> Vec<u8> {
    format!("{request_id}|{node_index}").into_bytes()
}

/// Why a node refused a request. Exactly one code per refusal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedRequest,
    UnsupportedComputation,
    StorageUnreachable,
    PackageDecryptFailure,
    PackageInvalid,
    PolicyHashMismatch,
    PresentationInvalid,
    SubjectMismatch,
    PolicyInvalid,
    PolicyDenied,
    RegistryUnavailable,
    EvaluationError,
    LengthMismatch,
    ResultOutOfRange,
}

impl ErrorCode {
    /// Refusals caused by the request itself rather than by infrastructure.
    pub fn is_denial(self) -> bool {
        matches!(
            self,
            ErrorCode::PolicyHashMismatch
                | ErrorCode::PresentationInvalid
                | ErrorCode::SubjectMismatch
                | ErrorCode::PolicyDenied
                | ErrorCode::PolicyInvalid
                | ErrorCode::UnsupportedComputation
                | ErrorCode::MalformedRequest
                | ErrorCode::LengthMismatch
                | ErrorCode::ResultOutOfRange
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::MalformedRequest => "malformed_request",
            ErrorCode::UnsupportedComputation => "unsupported_computation",
            ErrorCode::StorageUnreachable => "storage_unreachable",
            ErrorCode::PackageDecryptFailure => "package_decrypt_failure",
            ErrorCode::PackageInvalid => "package_invalid",
            ErrorCode::PolicyHashMismatch => "policy_hash_mismatch",
            ErrorCode::PresentationInvalid => "presentation_invalid",
            ErrorCode::SubjectMismatch => "subject_mismatch",
            ErrorCode::PolicyInvalid => "policy_invalid",
            ErrorCode::PolicyDenied => "policy_denied",
            ErrorCode::RegistryUnavailable => "registry_unavailable",
            ErrorCode::EvaluationError => "evaluation_error",
            ErrorCode::LengthMismatch => "length_mismatch",
            ErrorCode::ResultOutOfRange => "result_out_of_range",
        }
    }
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeError {
    pub code: ErrorCode,
    pub message: String,
    /// Finer reason within the code, e.g. `challenge_mismatch` under
    /// `presentation_invalid`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed_goal: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<String>,
}

impl NodeError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        NodeError {
            code,
            message: message.into(),
            reason: None,
            failed_goal: None,
            trace: Vec::new(),
        }
    }

    pub fn with_reason(mut self, reason: impl Into<String>) -> Self {
        self.reason = Some(reason.into());
        self
    }
}

impl fmt::Display for NodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)?;
        if let Some(g) = &self.failed_goal {
            write!(f, " (failed goal: {g})")?;
        }
        Ok(())
    }
}

impl std::error::Error for NodeError {}

/// One node's answer: either a ciphertext or an error, never both.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultEnvelope {
    pub request_id: String,
    pub node_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ciphertext: Option<ResultCiphertext>,
    /// Total record count, public for `mean` so the buyer can divide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub public_count: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<NodeError>,
}

impl ResultEnvelope {
    pub fn failure(request_id: &str, node_index: u32, error: NodeError) -> Self {
        ResultEnvelope {
            request_id: request_id.to_owned(),
            node_index,
            ciphertext: None,
            public_count: None,
            error: Some(error),
        }
    }
}

/// A node's public identity as listed in the key directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub index: u32,
    pub package_key: crate::crypto::EncryptionPublicKey,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}
