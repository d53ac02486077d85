use std::fmt;

use super::parser::{parse_clauses, SyntaxError};
use super::term::Term;

/// A horn clause `head :- body`. Facts have an empty body.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Clause {
    pub head: Term,
    pub body: Vec<Term>,
}

impl Clause {
    /// Panics if `head` is not an atom or compound term.
    pub fn new(head: Term, body: Vec<Term>) -> Self {
        assert!(head.is_callable(), "clause head must be callable, got {head}");
        Clause { head, body }
    }

    pub(crate) fn new_unchecked(head: Term, body: Vec<Term>) -> Self {
        Clause { head, body }
    }

    pub fn fact(head: Term) -> Self {
        Clause::new(head, Vec::new())
    }

    pub fn indicator(&self) -> (&str, usize) {
        self.head.indicator().expect("callable head")
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if let Some((last, init)) = self.body.split_last() {
            f.write_str(" :-\n")?;
            for goal in init {
                writeln!(f, "    {goal},")?;
            }
            write!(f, "    {last}")?;
        }
        f.write_str(".")
    }
}

/// Name and arity of the predicate a policy is queried through.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EntryPoint {
    pub name: String,
    pub arity: usize,
}

impl EntryPoint {
    pub fn new(name: impl Into<String>, arity: usize) -> Self {
        EntryPoint {
            name: name.into(),
            arity,
        }
    }
}

impl Default for EntryPoint {
    /// `accept(BuyerCreds, NumRecords, ComputationType)`
    fn default() -> Self {
        EntryPoint::new("accept", 3)
    }
}

impl fmt::Display for EntryPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.name, self.arity)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("policy source is empty")]
    Empty,
    #[error(transparent)]
    Syntax(#[from] SyntaxError),
    #[error("policy defines no clause for entry point {0}")]
    MissingEntryPoint(EntryPoint),
}

/// A parsed policy together with the exact text it was parsed from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Policy {
    id: String,
    source: String,
    clauses: Vec<Clause>,
    entry: EntryPoint,
}

impl Policy {
    /// Parses `source` with the default `accept/3` entry point.
    pub fn parse(source: &str, id: &str) -> Result<Policy, ParseError> {
        Policy::parse_with_entry(source, id, EntryPoint::default())
    }

    pub fn parse_with_entry(source: &str, id: &str, entry: EntryPoint) -> Result<Policy, ParseError> {
        if source.trim().is_empty() {
            return Err(ParseError::Empty);
        }
        let clauses = parse_clauses(source)?;
        if !clauses
            .iter()
            .any(|c| c.indicator() == (entry.name.as_str(), entry.arity))
        {
            return Err(ParseError::MissingEntryPoint(entry));
        }
        Ok(Policy {
            id: id.to_owned(),
            source: source.to_owned(),
            clauses,
            entry,
        })
    }

    pub(crate) fn from_parts(id: String, clauses: Vec<Clause>, entry: EntryPoint) -> Policy {
        let source = print_clauses(&clauses);
        Policy {
            id,
            source,
            clauses,
            entry,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    /// The exact text the policy was parsed from; this is what gets hashed.
    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn clauses(&self) -> &[Clause] {
        &self.clauses
    }

    pub fn entry_point(&self) -> &EntryPoint {
        &self.entry
    }

    /// Canonical pretty-printed form. Re-parsing it yields the same clauses.
    pub fn to_pretty(&self) -> String {
        print_clauses(&self.clauses)
    }

    /// Names and arities of every predicate the policy defines, in first
    /// definition order.
    pub fn defined_predicates(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for c in &self.clauses {
            let (name, arity) = c.indicator();
            if !out.iter().any(|(n, a)| n == name && *a == arity) {
                out.push((name.to_owned(), arity));
            }
        }
        out
    }
}

pub fn print_clauses(clauses: &[Clause]) -> String {
    let mut out = String::new();
    for c in clauses {
        out.push_str(&c.to_string());
        out.push('\n');
    }
    out
}
