//! The trust policy language: terms, clauses, unification and resolution.

mod aggregate;
mod bindings;
mod builtin;
mod handle;
mod lint;
mod parser;
mod policy;
mod solve;
mod term;

pub use aggregate::{aggregate_policies, namespace, AggregateError, SHARED_PREDICATES};
pub use bindings::{unify, Bindings, MAX_TERM_DEPTH};
pub use builtin::{Builtin, BuiltinError, BuiltinRegistry, CallContext};
pub use handle::{Document, HandleMark, HandleTable};
pub use lint::{lint, Lint};
pub use parser::{parse_clauses, parse_goal, SyntaxError, MAX_NESTING};
pub use policy::{print_clauses, Clause, EntryPoint, ParseError, Policy};
pub use solve::{
    solve, solve_all, EvalError, LoadError, Port, Program, Session, Trace, TraceEvent, DEFAULT_BUDGET,
};
pub use term::{is_atom_name, is_var_name, HandleId, Term, Var};
