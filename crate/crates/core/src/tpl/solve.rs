//! Depth-first, left-to-right SLD resolution with chronological
//! backtracking.
//!
//! Goals are kept in a persistent list so a choice point can share the
//! remaining continuation instead of copying it. Clause alternatives are
//! tried lazily: a choice point records the next clause index and the
//! trail marks to restore, nothing more.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::Arc;

use super::bindings::{Bindings, Store};
use super::builtin::{BuiltinError, BuiltinRegistry, CallContext};
use super::handle::{HandleMark, HandleTable};
use super::policy::{Clause, Policy};
use super::term::Term;

/// Resolution steps allowed per query unless configured otherwise.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LoadError {
    #[error("policy `{policy}` defines {name}/{arity}, which is a built-in predicate")]
    BuiltinCollision {
        policy: String,
        name: String,
        arity: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("resolution budget of {budget} steps exceeded")]
    BudgetExceeded { budget: u64 },
    #[error("unknown predicate {name}/{arity}")]
    UnknownPredicate { name: String, arity: usize },
    #[error("term nesting exceeds {limit} levels")]
    TermTooDeep { limit: u32 },
    #[error("goal `{0}` is not callable")]
    NotCallable(String),
    #[error("{predicate}: {source}")]
    Builtin {
        predicate: String,
        #[source]
        source: BuiltinError,
    },
    #[error(transparent)]
    Load(#[from] LoadError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Port {
    Call,
    Redo,
    Fail,
}

impl fmt::Display for Port {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Port::Call => "call",
            Port::Redo => "redo",
            Port::Fail => "fail",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub port: Port,
    pub depth: u32,
    pub goal: String,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>2} {} {}", self.depth, self.port, self.goal)
    }
}

/// Audit record of an evaluation: the goals visited in order, capped at a
/// fixed number of events.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub truncated: bool,
    /// The last goal that failed outright: a built-in answering no, or a
    /// call no clause head matched.
    pub failed_goal: Option<String>,
    limit: usize,
}

impl Trace {
    pub fn with_limit(limit: usize) -> Self {
        Trace {
            limit,
            ..Trace::default()
        }
    }

    fn record(&mut self, port: Port, depth: u32, goal: String) {
        if port == Port::Fail {
            self.failed_goal = Some(goal.clone());
        }
        if self.events.len() < self.limit {
            self.events.push(TraceEvent { port, depth, goal });
        } else {
            self.truncated = true;
        }
    }

    pub fn lines(&self) -> Vec<String> {
        self.events.iter().map(ToString::to_string).collect()
    }
}

/// Per-query evaluation state: documents reachable through handles, the
/// step budget and an optional trace.
#[derive(Debug)]
pub struct Session {
    pub handles: HandleTable,
    pub budget: u64,
    pub trace: Option<Trace>,
    steps: u64,
}

impl Default for Session {
    fn default() -> Self {
        Session::new()
    }
}

impl Session {
    pub fn new() -> Self {
        Session {
            handles: HandleTable::new(),
            budget: DEFAULT_BUDGET,
            trace: None,
            steps: 0,
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn with_trace(mut self, limit: usize) -> Self {
        self.trace = Some(Trace::with_limit(limit));
        self
    }

    /// Steps consumed by the most recent query.
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// A constant one call argument must match for a clause to have any
/// solution: either the head's argument itself, or `c` in a leading body
/// guard `V == c` where `V` occurs once in the head, as that argument.
/// An unbound call argument is always admitted, since unifying the other
/// arguments could still bind it.
#[derive(Clone, Debug)]
struct ArgFilter(usize, Term);

impl ArgFilter {
    fn admits(&self, args: &[Term], store: &Store) -> bool {
        match store.walk(&args[self.0]) {
            Term::Var(_) => true,
            t => *t == self.1,
        }
    }
}

fn is_constant(t: &Term) -> bool {
    matches!(t, Term::Atom(_) | Term::Int(_) | Term::Text(_))
}

fn filters_for(clause: &Clause) -> Vec<ArgFilter> {
    let args = clause.head.args();
    let mut out: Vec<ArgFilter> = args
        .iter()
        .enumerate()
        .filter(|(_, a)| is_constant(a))
        .map(|(i, a)| ArgFilter(i, a.clone()))
        .collect();
    // Position of a variable occurring exactly once in the head, as a
    // direct argument.
    let lone_arg = |v: &Term| -> Option<usize> {
        let Term::Var(var) = v else { return None };
        let i = args.iter().position(|a| a == v)?;
        let occurrences: usize = args.iter().map(|a| a.variables().iter().filter(|w| *w == var).count()).sum();
        (occurrences == 1).then_some(i)
    };
    for goal in &clause.body {
        let guard = match goal {
            Term::Compound(op, xs) if &**op == "==" && xs.len() == 2 => {
                let (l, r) = (&xs[0], &xs[1]);
                if is_constant(r) {
                    lone_arg(l).map(|i| (i, r))
                } else if is_constant(l) {
                    lone_arg(r).map(|i| (i, l))
                } else {
                    None
                }
            }
            _ => None,
        };
        match guard {
            Some((i, c)) => out.push(ArgFilter(i, c.clone())),
            None => break,
        }
    }
    out
}

#[derive(Debug)]
struct ClauseGroup {
    clauses: Vec<Clause>,
    filters: Vec<Vec<ArgFilter>>,
}

impl ClauseGroup {
    fn new(clauses: Vec<Clause>) -> Self {
        let filters = clauses.iter().map(filters_for).collect();
        ClauseGroup { clauses, filters }
    }

    fn len(&self) -> usize {
        self.clauses.len()
    }

    /// First clause at or after `from` whose filters admit `goal`.
    fn next_candidate(&self, from: usize, goal: &Term, store: &Store) -> Option<usize> {
        let args = goal.args();
        (from..self.len()).find(|&i| self.filters[i].iter().all(|f| f.admits(args, store)))
    }
}

type ClauseSet = Arc<ClauseGroup>;

/// Clauses indexed by predicate, checked against a built-in registry.
/// Immutable once built and shareable between threads.
#[derive(Clone, Debug)]
pub struct Program {
    preds: HashMap<Arc<str>, Vec<(usize, ClauseSet)>>,
    registry: BuiltinRegistry,
}

impl Program {
    pub fn load(policies: &[Policy], registry: &BuiltinRegistry) -> Result<Program, LoadError> {
        let mut grouped: HashMap<Arc<str>, Vec<(usize, Vec<Clause>)>> = HashMap::new();
        for policy in policies {
            for clause in policy.clauses() {
                let (name, arity) = clause.indicator();
                if registry.contains(name, arity) {
                    return Err(LoadError::BuiltinCollision {
                        policy: policy.id().to_owned(),
                        name: name.to_owned(),
                        arity,
                    });
                }
                let slot = grouped.entry(Arc::from(name)).or_default();
                match slot.iter_mut().find(|(a, _)| *a == arity) {
                    Some((_, list)) => list.push(clause.clone()),
                    None => slot.push((arity, vec![clause.clone()])),
                }
            }
        }
        let preds = grouped
            .into_iter()
            .map(|(name, slot)| {
                let slot = slot.into_iter().map(|(a, cs)| (a, Arc::new(ClauseGroup::new(cs)))).collect();
                (name, slot)
            })
            .collect();
        Ok(Program {
            preds,
            registry: registry.clone(),
        })
    }

    pub fn registry(&self) -> &BuiltinRegistry {
        &self.registry
    }

    fn clauses(&self, name: &str, arity: usize) -> Option<&ClauseSet> {
        self.preds
            .get(name)?
            .iter()
            .find(|(a, _)| *a == arity)
            .map(|(_, cs)| cs)
    }

    /// First solution of `query`, as bindings for the query's variables.
    pub fn solve(&self, query: &Term, session: &mut Session) -> Result<Option<Bindings>, EvalError> {
        let mut machine = Machine::new(self, session);
        let vars = query.variables();
        let found = machine.run(Next::Goals(GoalList::single(query.clone())))?;
        if !found {
            return Ok(None);
        }
        let out = machine.store.bindings_for(&vars);
        machine.check_depth()?;
        Ok(Some(out))
    }

    /// Every solution, in resolution order. Duplicates are kept.
    pub fn solve_all(&self, query: &Term, session: &mut Session) -> Result<Vec<Bindings>, EvalError> {
        let mut machine = Machine::new(self, session);
        let vars = query.variables();
        let mut out = Vec::new();
        let mut next = Next::Goals(GoalList::single(query.clone()));
        while machine.run(next)? {
            out.push(machine.store.bindings_for(&vars));
            machine.check_depth()?;
            next = Next::Backtrack;
        }
        Ok(out)
    }
}

/// First solution of `query` against the clauses of `program`.
pub fn solve(
    program: &[Policy],
    query: &Term,
    registry: &BuiltinRegistry,
    budget: u64,
) -> Result<Option<Bindings>, EvalError> {
    let program = Program::load(program, registry)?;
    program.solve(query, &mut Session::new().with_budget(budget))
}

/// All solutions of `query` against the clauses of `program`.
pub fn solve_all(
    program: &[Policy],
    query: &Term,
    registry: &BuiltinRegistry,
    budget: u64,
) -> Result<Vec<Bindings>, EvalError> {
    let program = Program::load(program, registry)?;
    program.solve_all(query, &mut Session::new().with_budget(budget))
}

struct GoalNode {
    goal: Term,
    depth: u32,
    next: GoalList,
}

#[derive(Clone)]
struct GoalList(Option<Rc<GoalNode>>);

impl GoalList {
    fn single(goal: Term) -> Self {
        GoalList(None).push(goal, 0)
    }

    fn push(self, goal: Term, depth: u32) -> Self {
        GoalList(Some(Rc::new(GoalNode {
            goal,
            depth,
            next: self,
        })))
    }
}

enum Next {
    Goals(GoalList),
    Backtrack,
}

struct ChoicePoint {
    goal: Term,
    depth: u32,
    rest: GoalList,
    clauses: ClauseSet,
    next: usize,
    trail: usize,
    handles: HandleMark,
}

struct Machine<'a> {
    program: &'a Program,
    store: Store,
    session: &'a mut Session,
    choices: Vec<ChoicePoint>,
    scope: u32,
}

impl<'a> Machine<'a> {
    fn new(program: &'a Program, session: &'a mut Session) -> Self {
        session.steps = 0;
        // Query variables live in scope 0; clause copies start above it.
        Machine {
            program,
            store: Store::default(),
            session,
            choices: Vec::new(),
            scope: 0,
        }
    }

    fn check_depth(&self) -> Result<(), EvalError> {
        if self.store.too_deep() {
            return Err(EvalError::TermTooDeep {
                limit: super::bindings::MAX_TERM_DEPTH,
            });
        }
        Ok(())
    }

    fn tick(&mut self) -> Result<(), EvalError> {
        self.session.steps += 1;
        if self.session.steps > self.session.budget {
            return Err(EvalError::BudgetExceeded {
                budget: self.session.budget,
            });
        }
        Ok(())
    }

    fn trace(&mut self, port: Port, depth: u32, goal: &Term) {
        if self.session.trace.is_some() {
            let text = self.store.resolve(goal).to_string();
            if let Some(trace) = self.session.trace.as_mut() {
                trace.record(port, depth, text);
            }
        }
    }

    /// Runs until the goal list empties (a solution, `true`) or every
    /// alternative is exhausted (`false`).
    fn run(&mut self, mut next: Next) -> Result<bool, EvalError> {
        loop {
            let goals = match next {
                Next::Goals(goals) => goals,
                Next::Backtrack => match self.backtrack()? {
                    Some(goals) => goals,
                    None => return Ok(false),
                },
            };
            let Some(node) = goals.0 else {
                return Ok(true);
            };
            self.tick()?;
            self.check_depth()?;
            let goal = self.store.walk(&node.goal).clone();
            let Some((name, arity)) = goal.indicator() else {
                return Err(EvalError::NotCallable(self.store.resolve(&goal).to_string()));
            };
            if let Some(builtin) = self.program.registry.get(name, arity).cloned() {
                self.trace(Port::Call, node.depth, &goal);
                let trail = self.store.mark();
                let handles = self.session.handles.mark();
                let mut cx = CallContext {
                    store: &mut self.store,
                    handles: &mut self.session.handles,
                };
                let outcome = builtin.call(goal.args(), &mut cx);
                self.check_depth()?;
                match outcome {
                    Ok(true) => next = Next::Goals(node.next.clone()),
                    Ok(false) => {
                        self.store.undo(trail);
                        self.session.handles.undo(handles);
                        self.trace(Port::Fail, node.depth, &goal);
                        next = Next::Backtrack;
                    }
                    Err(source) => {
                        return Err(EvalError::Builtin {
                            predicate: format!("{name}/{arity}"),
                            source,
                        })
                    }
                }
            } else if let Some(clauses) = self.program.clauses(name, arity).cloned() {
                self.trace(Port::Call, node.depth, &goal);
                next = match self.try_clauses(goal, node.depth, node.next.clone(), clauses, 0)? {
                    Some(goals) => Next::Goals(goals),
                    None => Next::Backtrack,
                };
            } else {
                return Err(EvalError::UnknownPredicate {
                    name: name.to_owned(),
                    arity,
                });
            }
        }
    }

    fn try_clauses(
        &mut self,
        goal: Term,
        depth: u32,
        rest: GoalList,
        clauses: ClauseSet,
        start: usize,
    ) -> Result<Option<GoalList>, EvalError> {
        let mut next = clauses.next_candidate(start, &goal, &self.store);
        let mut first = true;
        while let Some(i) = next {
            if !first {
                self.tick()?;
            }
            first = false;
            self.scope += 1;
            let scope = self.scope;
            let clause = &clauses.clauses[i];
            next = clauses.next_candidate(i + 1, &goal, &self.store);
            let trail = self.store.mark();
            let handles = self.session.handles.mark();
            let unified = self.store.unify(&goal, &clause.head.rename(scope));
            self.check_depth()?;
            if unified {
                let mut goals = rest.clone();
                for g in clause.body.iter().rev() {
                    goals = goals.push(g.rename(scope), depth + 1);
                }
                if let Some(alt) = next {
                    self.choices.push(ChoicePoint {
                        goal,
                        depth,
                        rest,
                        clauses: clauses.clone(),
                        next: alt,
                        trail,
                        handles,
                    });
                }
                return Ok(Some(goals));
            }
            self.store.undo(trail);
        }
        self.trace(Port::Fail, depth, &goal);
        Ok(None)
    }

    fn backtrack(&mut self) -> Result<Option<GoalList>, EvalError> {
        while let Some(cp) = self.choices.pop() {
            self.store.undo(cp.trail);
            self.session.handles.undo(cp.handles);
            self.tick()?;
            self.trace(Port::Redo, cp.depth, &cp.goal);
            if let Some(goals) = self.try_clauses(cp.goal, cp.depth, cp.rest, cp.clauses, cp.next)? {
                return Ok(Some(goals));
            }
        }
        Ok(None)
    }
}
