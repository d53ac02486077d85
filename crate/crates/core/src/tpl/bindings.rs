//! Substitutions and unification.

use std::cell::Cell;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use super::term::{Term, Var};

/// A normalized substitution: every bound variable maps to a term that
/// mentions no bound variable, so applying it twice equals applying it once.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Bindings {
    map: BTreeMap<Var, Term>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, var: &Var) -> Option<&Term> {
        self.map.get(var)
    }

    /// Looks up a source-level variable by name.
    pub fn get_named(&self, name: &str) -> Option<&Term> {
        self.map.get(&Var::new(name))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Var, &Term)> {
        self.map.iter()
    }

    pub fn apply(&self, term: &Term) -> Term {
        match term {
            Term::Var(v) => match self.map.get(v) {
                Some(t) => t.clone(),
                None => term.clone(),
            },
            Term::Compound(f, args) => {
                Term::Compound(f.clone(), args.iter().map(|a| self.apply(a)).collect())
            }
            other => other.clone(),
        }
    }

    /// Keeps only the given variables.
    pub fn restrict(&self, vars: &[Var]) -> Bindings {
        Bindings {
            map: self
                .map
                .iter()
                .filter(|(v, _)| vars.contains(v))
                .map(|(v, t)| (v.clone(), t.clone()))
                .collect(),
        }
    }
}

impl fmt::Display for Bindings {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (v, t)) in self.map.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{v} = {t}")?;
        }
        f.write_str("}")
    }
}

/// Deepest term the store will traverse through bindings. Keeps every
/// recursive walk over terms (and their drops) within a bounded stack.
pub const MAX_TERM_DEPTH: u32 = 512;

/// Mutable triangular substitution with an undo trail, used by the resolver.
#[derive(Debug, Default)]
pub(crate) struct Store {
    map: HashMap<Var, Term>,
    trail: Vec<Var>,
    /// Set when a traversal passes [`MAX_TERM_DEPTH`]. The traversal gives
    /// up (unification fails, resolution truncates) and the resolver turns
    /// the flag into an error.
    too_deep: Cell<bool>,
}

impl Store {
    pub(crate) fn from_bindings(bindings: &Bindings) -> Self {
        let mut store = Store::default();
        for (v, t) in &bindings.map {
            store.map.insert(v.clone(), t.clone());
        }
        store
    }

    pub(crate) fn too_deep(&self) -> bool {
        self.too_deep.get()
    }

    fn exceeded(&self, depth: u32) -> bool {
        if depth > MAX_TERM_DEPTH {
            self.too_deep.set(true);
            true
        } else {
            false
        }
    }

    pub(crate) fn mark(&self) -> usize {
        self.trail.len()
    }

    pub(crate) fn undo(&mut self, mark: usize) {
        while self.trail.len() > mark {
            let v = self.trail.pop().expect("trail entry");
            self.map.remove(&v);
        }
    }

    fn bind(&mut self, var: Var, term: Term) {
        self.trail.push(var.clone());
        self.map.insert(var, term);
    }

    /// Follows variable chains until reaching a non-variable or an unbound
    /// variable.
    pub(crate) fn walk<'a>(&'a self, mut term: &'a Term) -> &'a Term {
        while let Term::Var(v) = term {
            match self.map.get(v) {
                Some(next) => term = next,
                None => break,
            }
        }
        term
    }

    /// Fully applies the substitution. Subterms below the depth limit are
    /// left unresolved and the store is flagged.
    pub(crate) fn resolve(&self, term: &Term) -> Term {
        self.resolve_at(term, 0)
    }

    fn resolve_at(&self, term: &Term, depth: u32) -> Term {
        match self.walk(term) {
            Term::Compound(f, args) => {
                if self.exceeded(depth + 1) {
                    return term.clone();
                }
                Term::Compound(f.clone(), args.iter().map(|a| self.resolve_at(a, depth + 1)).collect())
            }
            other => other.clone(),
        }
    }

    /// Occurs check; a term too deep to inspect counts as containing `var`.
    fn occurs(&self, var: &Var, term: &Term, depth: u32) -> bool {
        match self.walk(term) {
            Term::Var(v) => v == var,
            Term::Compound(_, args) => {
                self.exceeded(depth + 1) || args.iter().any(|a| self.occurs(var, a, depth + 1))
            }
            _ => false,
        }
    }

    /// Unifies with occurs check. On failure, bindings made so far stay on
    /// the trail; callers undo to a mark taken beforehand.
    pub(crate) fn unify(&mut self, a: &Term, b: &Term) -> bool {
        self.unify_at(a, b, 0)
    }

    fn unify_at(&mut self, a: &Term, b: &Term, depth: u32) -> bool {
        let a = self.walk(a).clone();
        let b = self.walk(b).clone();
        match (&a, &b) {
            (Term::Var(x), Term::Var(y)) if x == y => true,
            (Term::Var(x), other) | (other, Term::Var(x)) => {
                if self.occurs(x, other, 0) {
                    return false;
                }
                self.bind(x.clone(), other.clone());
                true
            }
            (Term::Compound(f, xs), Term::Compound(g, ys)) => {
                if self.exceeded(depth + 1) {
                    return false;
                }
                f == g && xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| self.unify_at(x, y, depth + 1))
            }
            (x, y) => x == y,
        }
    }

    /// Normalized view restricted to the variables bound in this store.
    pub(crate) fn to_bindings(&self) -> Bindings {
        Bindings {
            map: self
                .map
                .keys()
                .map(|v| (v.clone(), self.resolve(&Term::Var(v.clone()))))
                .collect(),
        }
    }

    /// Normalized bindings for the given variables only; unbound variables
    /// are omitted.
    pub(crate) fn bindings_for(&self, vars: &[Var]) -> Bindings {
        Bindings {
            map: vars
                .iter()
                .filter(|v| self.map.contains_key(*v))
                .map(|v| (v.clone(), self.resolve(&Term::Var(v.clone()))))
                .collect(),
        }
    }
}

/// Most general unifier of `a` and `b` extending `bindings`, or `None`.
/// Uses the occurs check.
pub fn unify(a: &Term, b: &Term, bindings: &Bindings) -> Option<Bindings> {
    let mut store = Store::from_bindings(bindings);
    if store.unify(a, b) {
        Some(store.to_bindings())
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(args: Vec<Term>) -> Term {
        Term::compound("f", args)
    }

    #[test]
    fn accept_computation_heads() {
        let a = Term::compound("acceptComputation", vec![Term::atom("public_university"), Term::var("C")]);
        let b = Term::compound("acceptComputation", vec![Term::var("OrgType"), Term::atom("machine_learning")]);
        let s = unify(&a, &b, &Bindings::new()).unwrap();
        assert_eq!(s.get_named("OrgType"), Some(&Term::atom("public_university")));
        assert_eq!(s.get_named("C"), Some(&Term::atom("machine_learning")));
        assert_eq!(s.len(), 2);
        assert_eq!(s.apply(&a), s.apply(&b));
    }

    #[test]
    fn identity_adds_nothing() {
        let s = unify(&Term::var("X"), &Term::var("X"), &Bindings::new()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn occurs_check() {
        assert_eq!(unify(&f(vec![Term::var("X")]), &Term::var("X"), &Bindings::new()), None);
        // Indirect cycle through a chain.
        let a = f(vec![Term::var("X"), Term::var("Y")]);
        let b = f(vec![Term::var("Y"), f(vec![Term::var("X")])]);
        assert_eq!(unify(&a, &b, &Bindings::new()), None);
    }

    #[test]
    fn chains_are_normalized() {
        let a = f(vec![Term::var("X"), Term::var("Y"), Term::var("Z")]);
        let b = f(vec![Term::var("Y"), Term::var("Z"), Term::atom("k")]);
        let s = unify(&a, &b, &Bindings::new()).unwrap();
        for (_, t) in s.iter() {
            assert_eq!(t, &Term::atom("k"));
        }
        let once = s.apply(&a);
        assert_eq!(s.apply(&once), once);
    }

    #[test]
    fn extends_existing_bindings() {
        let base = unify(&Term::var("X"), &Term::atom("a"), &Bindings::new()).unwrap();
        assert_eq!(unify(&Term::var("X"), &Term::atom("b"), &base), None);
        let ext = unify(&Term::var("Y"), &Term::var("X"), &base).unwrap();
        assert_eq!(ext.get_named("Y"), Some(&Term::atom("a")));
        assert_eq!(ext.get_named("X"), Some(&Term::atom("a")));
    }

    #[test]
    fn type_and_arity_clashes() {
        let e = Bindings::new();
        assert_eq!(unify(&Term::int(1), &Term::text("1"), &e), None);
        assert_eq!(unify(&Term::atom("a"), &Term::text("a"), &e), None);
        assert_eq!(unify(&f(vec![Term::atom("a")]), &Term::compound("f", vec![Term::atom("a"), Term::atom("b")]), &e), None);
        assert!(unify(&Term::int(7), &Term::int(7), &e).is_some());
    }
}
