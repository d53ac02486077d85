//! Built-in predicates used by seller policies.
//!
//! | predicate                         | meaning                                           |
//! |-----------------------------------|---------------------------------------------------|
//! | `set_format(H, Format)`           | bind a format to handle `H` if the document fits  |
//! | `extract(H, Field, Out)`          | read a field through the bound format             |
//! | `check_eIDAS_qualified(Issuer)`   | issuer listed as qualified in the trust list      |
//! | `check_not_revoked(Credential)`   | credential id absent from the revocation list     |
//! | `resolve_subject(Did, Doc)`       | resolve a DID to its subject document             |
//!
//! plus the comparison operators from [`BuiltinRegistry::new`]. The set is
//! open: callers can register more predicates on the returned registry.

mod formats;
mod registry;

use std::sync::Arc;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use formats::{FieldPath, FormatDescriptor, FormatError, FormatSet, ValueKind};
pub use registry::{
    Clock, FetchError, Fetcher, ManualClock, RegistryCache, StaticFetcher, SystemClock, DEFAULT_TTL,
    FETCH_TIMEOUT,
};

use crate::tpl::{is_atom_name, BuiltinError, BuiltinRegistry, CallContext, Document, HandleId, Term};

/// Where a node finds its trust information.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryUrls {
    /// `GET` returns `{"scheme": "eIDAS", "qualified": [issuer-id, ...]}`.
    pub trust_list: String,
    /// `GET` returns `{"revoked": [credential-id, ...]}`.
    pub revocation: String,
    /// Base URL; `GET {resolver}/did/{did}` returns the subject document.
    pub resolver: String,
}

impl RegistryUrls {
    /// Conventional layout of the mock registry service at `base`.
    pub fn at(base: &str) -> Self {
        let base = base.trim_end_matches('/');
        RegistryUrls {
            trust_list: format!("{base}/trustlist/eidas"),
            revocation: format!("{base}/revocation"),
            resolver: base.to_owned(),
        }
    }

    pub fn did_url(&self, did: &str) -> String {
        format!("{}/did/{}", self.resolver.trim_end_matches('/'), did)
    }
}

/// True for `did:<method>:<id>` with a lowercase alphanumeric method.
pub fn is_did(s: &str) -> bool {
    let mut parts = s.splitn(3, ':');
    let (Some("did"), Some(method), Some(id)) = (parts.next(), parts.next(), parts.next()) else {
        return false;
    };
    !method.is_empty()
        && method.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit())
        && !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | ':' | '%' | '-'))
}

/// Trust registries plus the format descriptors, shared by every
/// evaluation on a node.
#[derive(Debug)]
pub struct TrustServices {
    pub urls: RegistryUrls,
    pub cache: RegistryCache,
    pub formats: FormatSet,
}

fn unavailable(url: &str, reason: impl Into<String>) -> BuiltinError {
    BuiltinError::RegistryUnavailable {
        url: url.to_owned(),
        reason: reason.into(),
    }
}

impl TrustServices {
    pub fn new(urls: RegistryUrls, cache: RegistryCache, formats: FormatSet) -> Self {
        TrustServices { urls, cache, formats }
    }

    fn list(&self, url: &str, key: &str) -> Result<Arc<Value>, BuiltinError> {
        let doc = self.cache.get(url).map_err(|e| unavailable(url, e.to_string()))?;
        if !doc.get(key).is_some_and(Value::is_array) {
            return Err(unavailable(url, format!("document has no `{key}` list")));
        }
        Ok(doc)
    }

    fn listed(doc: &Value, key: &str, id: &str) -> bool {
        doc[key].as_array().is_some_and(|l| l.iter().any(|v| v.as_str() == Some(id)))
    }

    pub fn is_qualified(&self, issuer: &str) -> Result<bool, BuiltinError> {
        let url = &self.urls.trust_list;
        let doc = self.list(url, "qualified")?;
        if doc.get("scheme").and_then(Value::as_str) != Some("eIDAS") {
            return Err(unavailable(url, "trust list is not an eIDAS scheme list"));
        }
        Ok(Self::listed(&doc, "qualified", issuer))
    }

    pub fn is_revoked(&self, credential_id: &str) -> Result<bool, BuiltinError> {
        let doc = self.list(&self.urls.revocation, "revoked")?;
        Ok(Self::listed(&doc, "revoked", credential_id))
    }

    pub fn resolve(&self, did: &str) -> Result<Arc<Value>, BuiltinError> {
        if !is_did(did) {
            return Err(BuiltinError::InvalidArgument(format!("`{did}` is not a DID")));
        }
        let url = self.urls.did_url(did);
        match self.cache.get(&url) {
            Ok(doc) => Ok(doc),
            Err(FetchError::NotFound) => Err(BuiltinError::UnknownIdentifier(did.to_owned())),
            Err(e) => Err(unavailable(&url, e.to_string())),
        }
    }
}

fn handle_arg(cx: &CallContext<'_>, term: &Term) -> Option<HandleId> {
    match cx.resolve(term) {
        Term::Handle(h) if cx.handles().document(h).is_some() => Some(h),
        _ => None,
    }
}

fn value_to_term(cx: &mut CallContext<'_>, doc: &Document, pointer: &str, kind: ValueKind) -> Option<Term> {
    let value = doc.value().pointer(pointer)?;
    match value {
        Value::String(s) => match kind {
            ValueKind::Atom => is_atom_name(s).then(|| Term::atom(s)),
            ValueKind::Auto | ValueKind::Text => Some(Term::text(s.clone())),
        },
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Some(Term::int(i))
            } else {
                n.as_u64().map(|u| Term::Int(BigInt::from(u)))
            }
        }
        Value::Bool(b) => Some(Term::atom(if *b { "true" } else { "false" })),
        Value::Null => None,
        Value::Object(_) | Value::Array(_) => {
            let child = doc.child(pointer)?;
            Some(Term::Handle(cx.handles_mut().insert(child)))
        }
    }
}

/// Reads `field` through the format bound to `handle`.
fn read_field(
    services: &TrustServices,
    cx: &mut CallContext<'_>,
    handle: HandleId,
    field: &str,
) -> Result<Option<Term>, BuiltinError> {
    let format = cx.handles().format(handle).ok_or(BuiltinError::FormatNotSet)?;
    let descriptor = services
        .formats
        .get(format)
        .ok_or_else(|| BuiltinError::UnknownFormat(format.to_owned()))?
        .clone();
    let Some(path) = descriptor.field(field) else {
        return Ok(None);
    };
    let doc = cx.handles().document(handle).expect("checked handle").clone();
    Ok(value_to_term(cx, &doc, &path.path, path.kind))
}

fn text_of(term: &Term) -> Option<String> {
    match term {
        Term::Text(s) => Some(s.clone()),
        Term::Atom(a) => Some(a.to_string()),
        _ => None,
    }
}

/// Comparison operators plus the trust built-ins bound to `services`.
pub fn standard_registry(services: Arc<TrustServices>) -> BuiltinRegistry {
    let mut reg = BuiltinRegistry::new();

    let s = services.clone();
    reg.register("set_format", 2, move |args: &[Term], cx: &mut CallContext<'_>| {
        let format = match cx.resolve(&args[1]) {
            Term::Atom(a) => a,
            other => return Err(BuiltinError::InvalidArgument(format!("format must be an atom, got {other}"))),
        };
        let name = s
            .formats
            .name_of(&format)
            .ok_or_else(|| BuiltinError::UnknownFormat(format.to_string()))?;
        let Some(handle) = handle_arg(cx, &args[0]) else {
            return Ok(false);
        };
        let fits = s
            .formats
            .get(&name)
            .is_some_and(|d| d.accepts(cx.handles().document(handle).expect("checked handle").value()));
        if fits {
            cx.handles_mut().set_format(handle, name);
        }
        Ok(fits)
    });

    let s = services.clone();
    reg.register("extract", 3, move |args: &[Term], cx: &mut CallContext<'_>| {
        let Some(handle) = handle_arg(cx, &args[0]) else {
            return Ok(false);
        };
        let Term::Atom(field) = cx.resolve(&args[1]) else {
            return Ok(false);
        };
        match read_field(&s, cx, handle, &field)? {
            Some(value) => Ok(cx.unify(&value, &args[2])),
            None => Ok(false),
        }
    });

    let s = services.clone();
    reg.register("check_eIDAS_qualified", 1, move |args: &[Term], cx: &mut CallContext<'_>| {
        let issuer = match cx.resolve(&args[0]) {
            Term::Handle(h) => match cx.handles().document(h).and_then(|d| d.value().get("id")).and_then(Value::as_str) {
                Some(id) => id.to_owned(),
                None => return Ok(false),
            },
            Term::Var(_) => return Err(BuiltinError::InvalidArgument("issuer is unbound".into())),
            other => match text_of(&other) {
                Some(id) => id,
                None => return Ok(false),
            },
        };
        s.is_qualified(&issuer)
    });

    let s = services.clone();
    reg.register("check_not_revoked", 1, move |args: &[Term], cx: &mut CallContext<'_>| {
        let Some(handle) = handle_arg(cx, &args[0]) else {
            return Err(BuiltinError::InvalidArgument("expected a credential handle".into()));
        };
        let id = match read_field(&s, cx, handle, "id")? {
            Some(Term::Text(id)) => id,
            _ => return Err(BuiltinError::InvalidArgument("credential format exposes no `id`".into())),
        };
        Ok(!s.is_revoked(&id)?)
    });

    let s = services;
    reg.register("resolve_subject", 2, move |args: &[Term], cx: &mut CallContext<'_>| {
        let did = match cx.resolve(&args[0]) {
            Term::Var(_) => return Err(BuiltinError::InvalidArgument("identifier is unbound".into())),
            other => text_of(&other)
                .ok_or_else(|| BuiltinError::InvalidArgument(format!("`{other}` is not an identifier")))?,
        };
        let doc = s.resolve(&did)?;
        let handle = cx.handles_mut().insert(Document::from_shared(doc));
        Ok(cx.unify(&Term::Handle(handle), &args[1]))
    });

    reg
}
