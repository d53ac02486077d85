//! Terms of the policy language.

use std::fmt;
use std::sync::Arc;

use num_bigint::BigInt;

/// A variable. Variables read from source text live in scope `0`; the
/// resolver renames clause variables apart by giving them a fresh scope.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    name: Arc<str>,
    scope: u32,
}

impl Var {
    pub fn new(name: impl Into<Arc<str>>) -> Self {
        Var {
            name: name.into(),
            scope: 0,
        }
    }

    pub(crate) fn scoped(&self, scope: u32) -> Self {
        Var {
            name: self.name.clone(),
            scope,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn scope(&self) -> u32 {
        self.scope
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.scope == 0 {
            f.write_str(&self.name)
        } else {
            write!(f, "_G{}_{}", self.scope, self.name)
        }
    }
}

/// Reference to a document held by an evaluation session (see
/// [`HandleTable`](super::HandleTable)). Handles never appear in source text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HandleId(pub u32);

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Atom(Arc<str>),
    Var(Var),
    Int(BigInt),
    Text(String),
    Compound(Arc<str>, Vec<Term>),
    Handle(HandleId),
}

/// Infix comparison operators, in the order the printer and parser try them.
pub const COMPARISON_OPS: [&str; 6] = ["\\==", "==", ">=", "=<", ">", "<"];

pub fn is_comparison_op(name: &str) -> bool {
    COMPARISON_OPS.contains(&name)
}

/// `[a-z][A-Za-z0-9_]*`
pub fn is_atom_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_lowercase())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `[A-Z_][A-Za-z0-9_]*`
pub fn is_var_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_uppercase() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Term {
    pub fn atom(name: &str) -> Term {
        Term::Atom(Arc::from(name))
    }

    pub fn var(name: &str) -> Term {
        Term::Var(Var::new(name))
    }

    pub fn int(value: impl Into<BigInt>) -> Term {
        Term::Int(value.into())
    }

    pub fn text(value: impl Into<String>) -> Term {
        Term::Text(value.into())
    }

    /// Builds a compound term; an empty argument list yields an atom.
    pub fn compound(functor: &str, args: Vec<Term>) -> Term {
        if args.is_empty() {
            Term::atom(functor)
        } else {
            Term::Compound(Arc::from(functor), args)
        }
    }

    /// Predicate name and arity when the term can be used as a goal or head.
    pub fn indicator(&self) -> Option<(&str, usize)> {
        match self {
            Term::Atom(name) => Some((name, 0)),
            Term::Compound(name, args) => Some((name, args.len())),
            _ => None,
        }
    }

    pub fn args(&self) -> &[Term] {
        match self {
            Term::Compound(_, args) => args,
            _ => &[],
        }
    }

    pub fn is_callable(&self) -> bool {
        matches!(self, Term::Atom(_) | Term::Compound(..))
    }

    /// True when the term contains no variables.
    pub fn is_ground(&self) -> bool {
        match self {
            Term::Var(_) => false,
            Term::Compound(_, args) => args.iter().all(Term::is_ground),
            _ => true,
        }
    }

    pub fn contains_var(&self, var: &Var) -> bool {
        match self {
            Term::Var(v) => v == var,
            Term::Compound(_, args) => args.iter().any(|a| a.contains_var(var)),
            _ => false,
        }
    }

    /// Collects variables in first-occurrence order, without duplicates.
    pub fn variables(&self) -> Vec<Var> {
        let mut out = Vec::new();
        self.collect_vars(&mut out);
        out
    }

    pub(crate) fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            Term::Var(v) => {
                if !out.contains(v) {
                    out.push(v.clone());
                }
            }
            Term::Compound(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
            _ => {}
        }
    }

    /// Copy of the term with every source variable moved into `scope`.
    pub(crate) fn rename(&self, scope: u32) -> Term {
        match self {
            Term::Var(v) => Term::Var(v.scoped(scope)),
            Term::Compound(f, args) => {
                Term::Compound(f.clone(), args.iter().map(|a| a.rename(scope)).collect())
            }
            other => other.clone(),
        }
    }

    /// Renames the predicate symbol of a callable term.
    pub(crate) fn with_functor(&self, functor: Arc<str>) -> Term {
        match self {
            Term::Atom(_) => Term::Atom(functor),
            Term::Compound(_, args) => Term::Compound(functor, args.clone()),
            other => other.clone(),
        }
    }
}

fn write_text(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            '\r' => f.write_str("\\r")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Atom(name) => f.write_str(name),
            Term::Var(v) => write!(f, "{v}"),
            Term::Int(i) => write!(f, "{i}"),
            Term::Text(s) => write_text(f, s),
            Term::Handle(h) => write!(f, "<handle:{}>", h.0),
            Term::Compound(op, args) if args.len() == 2 && is_comparison_op(op) => {
                write!(f, "{} {} {}", args[0], op, args[1])
            }
            Term::Compound(name, args) => {
                write!(f, "{name}(")?;
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{arg}")?;
                }
                f.write_str(")")
            }
        }
    }
}
