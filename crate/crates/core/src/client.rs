//! Seller and buyer logic that does not touch the network: preparing
//! sealed packages, assembling requests and combining node responses.

use std::fmt;

use num_rational::Ratio;
use rand::{CryptoRng, Rng};
use serde::{Deserialize, Serialize};

use crate::credentials::{Credential, Wallet};
use crate::crypto::{decrypt_result, hash_policy, seal_for_node, CryptoError, SealedPackage};
use crate::protocol::{
    result_context, Computation, ComputationRequest, DataPackage, NodeError, NodeInfo, Operation, ProductRef,
    RequestBody, ResultEnvelope,
};
use crate::sharing::{reconstruct, share, Share, SharingError, SharingParams, MERSENNE61};

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Sharing(#[from] SharingError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error("node directory must list indices 1..={n} exactly once")]
    BadDirectory { n: usize },
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
}

/// Shares every record across the nodes in `directory` and seals one
/// package per node. Returned in directory order.
pub fn prepare_packages<R: Rng + CryptoRng + ?Sized>(
    product_id: &str,
    policy_source: &str,
    records: &[i64],
    directory: &[NodeInfo],
    rng: &mut R,
) -> Result<Vec<SealedPackage>, ClientError> {
    let n = directory.len();
    let mut indices: Vec<u32> = directory.iter().map(|d| d.index).collect();
    indices.sort_unstable();
    if indices != (1..=n as u32).collect::<Vec<_>>() {
        return Err(ClientError::BadDirectory { n });
    }
    let params = SharingParams::new(n)?;
    let record_bound = records.iter().map(|r| r.unsigned_abs()).max().unwrap_or(0);
    let mut per_node: Vec<Vec<Share>> = vec![Vec::with_capacity(records.len()); n];
    for r in records {
        for s in share::<MERSENNE61, _>(*r as i128, params, rng)? {
            per_node[s.x as usize - 1].push(s);
        }
    }
    let policy_hash = hash_policy(policy_source.as_bytes());
    directory
        .iter()
        .map(|node| {
            let package = DataPackage {
                product_id: product_id.to_owned(),
                policy_hash,
                records: std::mem::take(&mut per_node[node.index as usize - 1]),
                record_count: records.len() as u64,
                record_bound,
            };
            let bytes = serde_json::to_vec(&package).expect("package serializes");
            Ok(seal_for_node(&bytes, &node.package_key, node.index, product_id)?)
        })
        .collect()
}

/// Parses a single-column CSV of integers. With `scale = Some(k)` values
/// may carry up to `k` decimal places and are multiplied by `10^k`. A first
/// line that is not a number is taken as a header.
pub fn parse_records(text: &str, scale: Option<u32>) -> Result<Vec<i64>, ClientError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let cell = raw.trim().trim_end_matches(',').trim();
        if cell.is_empty() {
            continue;
        }
        match parse_fixed(cell, scale.unwrap_or(0)) {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(message) => return Err(ClientError::Csv { line: i + 1, message }),
        }
    }
    Ok(out)
}

fn parse_fixed(cell: &str, scale: u32) -> Result<i64, String> {
    let (neg, digits) = match cell.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, cell.strip_prefix('+').unwrap_or(cell)),
    };
    let (int_part, frac_part) = digits.split_once('.').unwrap_or((digits, ""));
    let valid = |s: &str| s.chars().all(|c| c.is_ascii_digit());
    if int_part.is_empty() || !valid(int_part) || !valid(frac_part) {
        return Err(format!("`{cell}` is not a number"));
    }
    if frac_part.len() > scale as usize {
        return Err(format!("`{cell}` has more than {scale} decimal places"));
    }
    let padded = format!("{int_part}{frac_part:0<width$}", width = scale as usize);
    let magnitude: i64 = padded.parse().map_err(|_| format!("`{cell}` is out of range"))?;
    Ok(if neg { -magnitude } else { magnitude })
}

/// Builds a request whose presentation is bound to the request digest.
pub fn build_request(
    request_id: &str,
    products: Vec<ProductRef>,
    computation: Computation,
    wallet: &Wallet,
    main: Credential,
    additional: Vec<Credential>,
) -> ComputationRequest {
    let body = RequestBody {
        request_id: request_id.to_owned(),
        products,
        computation,
    };
    let challenge = body.digest();
    body.with_presentation(wallet.present(main, additional, challenge))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ResultValue {
    Integer(i128),
    /// `mean`: numerator and denominator in lowest terms.
    Rational { numer: i128, denom: i128 },
}

impl fmt::Display for ResultValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResultValue::Integer(v) => write!(f, "{v}"),
            ResultValue::Rational { numer, denom } if *denom == 1 => write!(f, "{numer}"),
            ResultValue::Rational { numer, denom } => write!(f, "{numer}/{denom}"),
        }
    }
}

/// A node that produced no usable share.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Refusal {
    pub node_index: u32,
    /// `None` when the node never answered.
    pub error: Option<NodeError>,
}

#[derive(Debug, thiserror::Error)]
pub enum BuyError {
    #[error("need shares from all {needed} nodes, got {got}")]
    InsufficientShares {
        needed: usize,
        got: usize,
        refusals: Vec<Refusal>,
    },
    #[error("share from node {0} does not decrypt")]
    Decrypt(u32),
    #[error("node responses are inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Sharing(#[from] SharingError),
}

impl BuyError {
    /// True when some node refused for a reason attributable to the
    /// request (as opposed to an outage).
    pub fn is_denial(&self) -> bool {
        match self {
            BuyError::InsufficientShares { refusals, .. } => refusals
                .iter()
                .any(|r| r.error.as_ref().is_some_and(|e| e.code.is_denial())),
            _ => false,
        }
    }
}

/// Decrypts every node's share, reconstructs, and finalizes `mean` as a
/// rational.
pub fn finalize(
    request: &ComputationRequest,
    envelopes: &[ResultEnvelope],
    wallet: &Wallet,
    nodes: usize,
) -> Result<ResultValue, BuyError> {
    let params = SharingParams::new(nodes)?;
    let mut shares = Vec::new();
    let mut refusals = Vec::new();
    let mut count = None;
    for index in 1..=nodes as u32 {
        let Some(env) = envelopes
            .iter()
            .find(|e| e.node_index == index && e.request_id == request.request_id)
        else {
            refusals.push(Refusal {
                node_index: index,
                error: None,
            });
            continue;
        };
        let Some(ct) = &env.ciphertext else {
            refusals.push(Refusal {
                node_index: index,
                error: env.error.clone(),
            });
            continue;
        };
        let plain = decrypt_result(ct, &wallet.encryption, &result_context(&request.request_id, index))
            .map_err(|_| BuyError::Decrypt(index))?;
        let s: Share = serde_json::from_slice(&plain).map_err(|_| BuyError::Decrypt(index))?;
        if s.x != index {
            return Err(BuyError::Inconsistent(format!("node {index} returned a share for x = {}", s.x)));
        }
        match (count, env.public_count) {
            (None, c) => count = Some(c),
            (Some(prev), c) if prev != c => {
                return Err(BuyError::Inconsistent("nodes disagree on the record count".into()));
            }
            _ => {}
        }
        shares.push(s);
    }
    if !refusals.is_empty() {
        return Err(BuyError::InsufficientShares {
            needed: nodes,
            got: shares.len(),
            refusals,
        });
    }
    let value = reconstruct::<MERSENNE61>(&shares, params)?;
    if request.computation.operation() == Some(Operation::Mean) {
        let denom = count
            .flatten()
            .ok_or_else(|| BuyError::Inconsistent("mean without a record count".into()))?;
        if denom == 0 {
            return Err(BuyError::Inconsistent("mean over zero records".into()));
        }
        let r = Ratio::new(value, denom as i128);
        return Ok(ResultValue::Rational {
            numer: *r.numer(),
            denom: *r.denom(),
        });
    }
    Ok(ResultValue::Integer(value))
}

/// Plaintext reference for what a buyer should obtain, for testing.
pub fn plaintext_result(op: Operation, records: &[i64], weights: Option<&[i64]>) -> ResultValue {
    let sum = |it: &mut dyn Iterator<Item = i128>| it.sum::<i128>();
    match op {
        Operation::Sum => ResultValue::Integer(sum(&mut records.iter().map(|&r| r as i128))),
        Operation::Count => ResultValue::Integer(records.len() as i128),
        Operation::Dot => {
            let w = weights.unwrap_or_default();
            ResultValue::Integer(sum(&mut records.iter().zip(w).map(|(&r, &w)| r as i128 * w as i128)))
        }
        Operation::Mean => {
            let r = Ratio::new(sum(&mut records.iter().map(|&r| r as i128)), records.len() as i128);
            ResultValue::Rational {
                numer: *r.numer(),
                denom: *r.denom(),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_parsing() {
        assert_eq!(parse_records("value\n3\n-5\n\n7\n", None).unwrap(), vec![3, -5, 7]);
        assert_eq!(parse_records("1.5\n-0.25\n2\n", Some(2)).unwrap(), vec![150, -25, 200]);
        assert!(matches!(parse_records("1\nx\n", None), Err(ClientError::Csv { line: 2, .. })));
        assert!(matches!(parse_records("1\n1.234\n", Some(2)), Err(ClientError::Csv { line: 2, .. })));
    }

    #[test]
    fn plaintext_oracle() {
        assert_eq!(plaintext_result(Operation::Sum, &[3, 5, 7], None), ResultValue::Integer(15));
        assert_eq!(plaintext_result(Operation::Dot, &[3, 5, 7], Some(&[2, 0, 1])), ResultValue::Integer(13));
        assert_eq!(
            plaintext_result(Operation::Mean, &[1, 2], None),
            ResultValue::Rational { numer: 3, denom: 2 }
        );
        assert_eq!(ResultValue::Rational { numer: 3, denom: 2 }.to_string(), "3/2");
    }
}
