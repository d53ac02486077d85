//! Built-in predicate contract and the comparison built-ins every program
//! gets.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use super::bindings::Store;
use super::handle::HandleTable;
use super::term::Term;

/// Errors a built-in may raise. These abort the whole evaluation; ordinary
/// "no" answers are `Ok(false)`.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BuiltinError {
    #[error("unknown format `{0}`")]
    UnknownFormat(String),
    #[error("no format bound to handle")]
    FormatNotSet,
    #[error("registry {url} unavailable: {reason}")]
    RegistryUnavailable { url: String, reason: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// View of the evaluation state handed to a built-in.
pub struct CallContext<'a> {
    pub(crate) store: &'a mut Store,
    pub(crate) handles: &'a mut HandleTable,
}

impl CallContext<'_> {
    /// Fully substituted value of `term`.
    pub fn resolve(&self, term: &Term) -> Term {
        self.store.resolve(term)
    }

    /// Unifies two terms. A failed attempt leaves no bindings behind.
    pub fn unify(&mut self, a: &Term, b: &Term) -> bool {
        let mark = self.store.mark();
        let ok = self.store.unify(a, b);
        if !ok {
            self.store.undo(mark);
        }
        ok
    }

    pub fn handles(&self) -> &HandleTable {
        self.handles
    }

    pub fn handles_mut(&mut self) -> &mut HandleTable {
        self.handles
    }
}

/// A predicate implemented in host code. Built-ins are deterministic and
/// produce at most one solution.
pub trait Builtin: Send + Sync {
    fn call(&self, args: &[Term], cx: &mut CallContext<'_>) -> Result<bool, BuiltinError>;
}

impl<F> Builtin for F
where
    F: Fn(&[Term], &mut CallContext<'_>) -> Result<bool, BuiltinError> + Send + Sync,
{
    fn call(&self, args: &[Term], cx: &mut CallContext<'_>) -> Result<bool, BuiltinError> {
        self(args, cx)
    }
}

#[derive(Clone, Default)]
pub struct BuiltinRegistry {
    entries: HashMap<String, Vec<(usize, Arc<dyn Builtin>)>>,
}

impl fmt::Debug for BuiltinRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<String> = self.names().map(|(n, a)| format!("{n}/{a}")).collect();
        names.sort();
        f.debug_struct("BuiltinRegistry").field("predicates", &names).finish()
    }
}

impl BuiltinRegistry {
    /// Registry holding only the comparison operators.
    pub fn new() -> Self {
        let mut reg = BuiltinRegistry::default();
        reg.register("==", 2, |args: &[Term], cx: &mut CallContext<'_>| {
            Ok(identical(&cx.resolve(&args[0]), &cx.resolve(&args[1])) == Some(true))
        });
        reg.register("\\==", 2, |args: &[Term], cx: &mut CallContext<'_>| {
            Ok(identical(&cx.resolve(&args[0]), &cx.resolve(&args[1])) == Some(false))
        });
        for (op, accept) in [
            (">", &[Ordering::Greater][..]),
            ("<", &[Ordering::Less][..]),
            (">=", &[Ordering::Greater, Ordering::Equal][..]),
            ("=<", &[Ordering::Less, Ordering::Equal][..]),
        ] {
            reg.register(op, 2, move |args: &[Term], cx: &mut CallContext<'_>| {
                let ord = compare(&cx.resolve(&args[0]), &cx.resolve(&args[1]));
                Ok(ord.is_some_and(|o| accept.contains(&o)))
            });
        }
        reg
    }

    /// Registry with no predicates at all.
    pub fn empty() -> Self {
        BuiltinRegistry::default()
    }

    pub fn register(&mut self, name: &str, arity: usize, builtin: impl Builtin + 'static) -> &mut Self {
        let slot = self.entries.entry(name.to_owned()).or_default();
        slot.retain(|(a, _)| *a != arity);
        slot.push((arity, Arc::new(builtin)));
        self
    }

    pub fn get(&self, name: &str, arity: usize) -> Option<&Arc<dyn Builtin>> {
        self.entries
            .get(name)?
            .iter()
            .find(|(a, _)| *a == arity)
            .map(|(_, b)| b)
    }

    pub fn contains(&self, name: &str, arity: usize) -> bool {
        self.get(name, arity).is_some()
    }

    pub fn names(&self) -> impl Iterator<Item = (&str, usize)> {
        self.entries
            .iter()
            .flat_map(|(n, slot)| slot.iter().map(move |(a, _)| (n.as_str(), *a)))
    }
}

/// `Some(equal?)` when both sides are ground, `None` otherwise.
fn identical(a: &Term, b: &Term) -> Option<bool> {
    (a.is_ground() && b.is_ground()).then(|| a == b)
}

/// Ordering for like-typed integers or strings; anything else is
/// incomparable.
fn compare(a: &Term, b: &Term) -> Option<Ordering> {
    match (a, b) {
        (Term::Int(x), Term::Int(y)) => Some(x.cmp(y)),
        (Term::Text(x), Term::Text(y)) => Some(x.cmp(y)),
        _ => None,
    }
}
