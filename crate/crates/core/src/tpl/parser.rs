//! Reader for policy source text.
//!
//! The accepted language is a small Prolog subset: facts and rules,
//! atoms, variables, integers, double-quoted strings, compound terms, the
//! infix comparisons `> < >= =< == \==` at goal position, comma
//! conjunction, `.` clause terminators and `%` line comments.

use std::collections::HashSet;
use std::sync::Arc;

use num_bigint::BigInt;

use super::policy::Clause;
use super::term::{Term, Var};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at {line}:{column}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Atom(String),
    Var(String),
    Int(BigInt),
    Str(String),
    LParen,
    RParen,
    Comma,
    End,
    Neck,
    Op(&'static str),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Atom(a) => format!("atom `{a}`"),
            Tok::Var(v) => format!("variable `{v}`"),
            Tok::Int(i) => format!("integer `{i}`"),
            Tok::Str(_) => "string".into(),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::End => "`.`".into(),
            Tok::Neck => "`:-`".into(),
            Tok::Op(op) => format!("`{op}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.char_indices().peekable(),
            src,
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let (_, c) = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn peek_second(&self) -> Option<char> {
        let mut it = self.chars.clone();
        it.next();
        it.next().map(|(_, c)| c)
    }

    fn error(&self, line: usize, column: usize, message: impl Into<String>) -> SyntaxError {
        SyntaxError {
            line,
            column,
            message: message.into(),
        }
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '%' {
                while let Some(c) = self.bump() {
                    if c == '\n' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn word(&mut self) -> String {
        let start = self.chars.peek().map(|&(i, _)| i).unwrap_or(self.src.len());
        let mut end = start;
        while let Some(&(i, c)) = self.chars.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                end = i + c.len_utf8();
                self.bump();
            } else {
                break;
            }
        }
        self.src[start..end].to_owned()
    }

    fn digits(&mut self) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if c.is_ascii_digit() {
                s.push(c);
                self.bump();
            } else {
                break;
            }
        }
        s
    }

    fn next_token(&mut self) -> Result<Spanned, SyntaxError> {
        self.skip_trivia();
        let (line, column) = (self.line, self.column);
        let spanned = |tok| Ok(Spanned { tok, line, column });
        let Some(c) = self.peek() else {
            return spanned(Tok::Eof);
        };
        match c {
            '(' => {
                self.bump();
                spanned(Tok::LParen)
            }
            ')' => {
                self.bump();
                spanned(Tok::RParen)
            }
            ',' => {
                self.bump();
                spanned(Tok::Comma)
            }
            '.' => {
                self.bump();
                match self.peek() {
                    None => spanned(Tok::End),
                    Some(c) if c.is_whitespace() || c == '%' => spanned(Tok::End),
                    Some(c) => Err(self.error(line, column, format!("unexpected `{c}` after `.`"))),
                }
            }
            ':' => {
                self.bump();
                if self.peek() == Some('-') {
                    self.bump();
                    spanned(Tok::Neck)
                } else {
                    Err(self.error(line, column, "expected `:-`"))
                }
            }
            '"' => {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.bump() {
                        None => return Err(self.error(line, column, "unterminated string")),
                        Some('"') => break,
                        Some('\\') => match self.bump() {
                            Some('"') => s.push('"'),
                            Some('\\') => s.push('\\'),
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some('r') => s.push('\r'),
                            Some(other) => {
                                return Err(self.error(
                                    self.line,
                                    self.column - 1,
                                    format!("unknown escape `\\{other}`"),
                                ))
                            }
                            None => return Err(self.error(line, column, "unterminated string")),
                        },
                        Some(c) => s.push(c),
                    }
                }
                spanned(Tok::Str(s))
            }
            '-' if self.peek_second().is_some_and(|c| c.is_ascii_digit()) => {
                self.bump();
                let digits = self.digits();
                spanned(Tok::Int(-digits.parse::<BigInt>().expect("digits")))
            }
            c if c.is_ascii_digit() => {
                let digits = self.digits();
                if self.peek().is_some_and(|c| c.is_ascii_alphabetic() || c == '_') {
                    return Err(self.error(line, column, "malformed number"));
                }
                spanned(Tok::Int(digits.parse::<BigInt>().expect("digits")))
            }
            c if c.is_ascii_lowercase() => spanned(Tok::Atom(self.word())),
            c if c.is_ascii_uppercase() || c == '_' => spanned(Tok::Var(self.word())),
            '>' | '<' | '=' | '\\' => {
                let rest = &self.src[self.chars.peek().map(|&(i, _)| i).unwrap_or(0)..];
                let op = super::term::COMPARISON_OPS
                    .iter()
                    .find(|op| rest.starts_with(**op))
                    .copied();
                match op {
                    Some(op) => {
                        for _ in 0..op.len() {
                            self.bump();
                        }
                        spanned(Tok::Op(op))
                    }
                    None => Err(self.error(line, column, format!("unknown operator starting with `{c}`"))),
                }
            }
            other => Err(self.error(line, column, format!("unexpected character `{other}`"))),
        }
    }
}

struct Parser<'a> {
    lexer: Lexer<'a>,
    current: Spanned,
    anon: usize,
    nesting: usize,
}

/// Deepest compound nesting accepted in source text.
pub const MAX_NESTING: usize = 128;

const ANON_PREFIX: &str = "\u{0}anon";

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Result<Self, SyntaxError> {
        let mut lexer = Lexer::new(src);
        let current = lexer.next_token()?;
        Ok(Parser {
            lexer,
            current,
            anon: 0,
            nesting: 0,
        })
    }

    fn advance(&mut self) -> Result<Spanned, SyntaxError> {
        let next = self.lexer.next_token()?;
        Ok(std::mem::replace(&mut self.current, next))
    }

    fn unexpected(&self, wanted: &str) -> SyntaxError {
        SyntaxError {
            line: self.current.line,
            column: self.current.column,
            message: format!("expected {wanted}, found {}", self.current.tok.describe()),
        }
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> Result<(), SyntaxError> {
        if self.current.tok == tok {
            self.advance()?;
            Ok(())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn term(&mut self) -> Result<Term, SyntaxError> {
        match self.current.tok.clone() {
            Tok::Atom(name) => {
                self.advance()?;
                if self.current.tok != Tok::LParen {
                    return Ok(Term::Atom(Arc::from(name.as_str())));
                }
                if self.nesting == MAX_NESTING {
                    return Err(SyntaxError {
                        line: self.current.line,
                        column: self.current.column,
                        message: format!("terms nested deeper than {MAX_NESTING} levels"),
                    });
                }
                self.advance()?;
                self.nesting += 1;
                let mut args = vec![self.term()?];
                while self.current.tok == Tok::Comma {
                    self.advance()?;
                    args.push(self.term()?);
                }
                self.nesting -= 1;
                self.expect(Tok::RParen, "`,` or `)`")?;
                Ok(Term::Compound(Arc::from(name.as_str()), args))
            }
            Tok::Var(name) => {
                self.advance()?;
                if name == "_" {
                    self.anon += 1;
                    Ok(Term::var(&format!("{ANON_PREFIX}{}", self.anon)))
                } else {
                    Ok(Term::var(&name))
                }
            }
            Tok::Int(i) => {
                self.advance()?;
                Ok(Term::Int(i))
            }
            Tok::Str(s) => {
                self.advance()?;
                Ok(Term::Text(s))
            }
            _ => Err(self.unexpected("a term")),
        }
    }

    fn goal(&mut self) -> Result<Term, SyntaxError> {
        let (line, column) = (self.current.line, self.current.column);
        let lhs = self.term()?;
        if let Tok::Op(op) = self.current.tok {
            self.advance()?;
            let rhs = self.term()?;
            return Ok(Term::Compound(Arc::from(op), vec![lhs, rhs]));
        }
        if !lhs.is_callable() {
            return Err(SyntaxError {
                line,
                column,
                message: format!("`{lhs}` is not a callable goal"),
            });
        }
        Ok(lhs)
    }

    fn clause(&mut self) -> Result<Clause, SyntaxError> {
        let (line, column) = (self.current.line, self.current.column);
        let head = self.term()?;
        if !head.is_callable() {
            return Err(SyntaxError {
                line,
                column,
                message: format!("clause head `{head}` must be an atom or compound term"),
            });
        }
        let mut body = Vec::new();
        if self.current.tok == Tok::Neck {
            self.advance()?;
            body.push(self.goal()?);
            while self.current.tok == Tok::Comma {
                self.advance()?;
                body.push(self.goal()?);
            }
        }
        self.expect(Tok::End, "`,` or `.`")?;
        Ok(name_anonymous(Clause::new_unchecked(head, body)))
    }
}

/// Gives each `_` occurrence a distinct name that does not clash with the
/// clause's own variables.
fn name_anonymous(clause: Clause) -> Clause {
    let mut vars = Vec::new();
    clause.head.collect_vars(&mut vars);
    clause.body.iter().for_each(|g| g.collect_vars(&mut vars));
    if !vars.iter().any(|v| v.name().starts_with(ANON_PREFIX)) {
        return clause;
    }
    let used: HashSet<&str> = vars.iter().map(Var::name).collect();
    let mut counter = 0;
    let mut fresh = std::collections::HashMap::new();
    for v in vars.iter().filter(|v| v.name().starts_with(ANON_PREFIX)) {
        let name = loop {
            counter += 1;
            let candidate = format!("_{counter}");
            if !used.contains(candidate.as_str()) {
                break candidate;
            }
        };
        fresh.insert(v.name().to_owned(), name);
    }
    fn rewrite(t: &Term, fresh: &std::collections::HashMap<String, String>) -> Term {
        match t {
            Term::Var(v) => match fresh.get(v.name()) {
                Some(n) => Term::var(n),
                None => t.clone(),
            },
            Term::Compound(f, args) => {
                Term::Compound(f.clone(), args.iter().map(|a| rewrite(a, fresh)).collect())
            }
            _ => t.clone(),
        }
    }
    Clause::new_unchecked(
        rewrite(&clause.head, &fresh),
        clause.body.iter().map(|g| rewrite(g, &fresh)).collect(),
    )
}

/// Parses a whole program into clauses, preserving their order.
pub fn parse_clauses(src: &str) -> Result<Vec<Clause>, SyntaxError> {
    let mut parser = Parser::new(src)?;
    let mut clauses = Vec::new();
    while parser.current.tok != Tok::Eof {
        clauses.push(parser.clause()?);
    }
    Ok(clauses)
}

/// Parses a single goal such as `accept(X, 150, machine_learning)`; a
/// trailing `.` is optional.
pub fn parse_goal(src: &str) -> Result<Term, SyntaxError> {
    let mut parser = Parser::new(src)?;
    let goal = parser.goal()?;
    if parser.current.tok == Tok::End {
        parser.advance()?;
    }
    if parser.current.tok != Tok::Eof {
        return Err(parser.unexpected("end of goal"));
    }
    Ok(name_anonymous(Clause::new_unchecked(goal, vec![])).head)
}

#[cfg(test)]
pub(crate) fn is_operator_goal(t: &Term) -> bool {
    matches!(t, Term::Compound(op, args) if args.len() == 2 && super::term::is_comparison_op(op))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fact_and_rule() {
        let clauses = parse_clauses("f(a).\ng(X) :- f(X), X == a.").unwrap();
        assert_eq!(clauses.len(), 2);
        assert_eq!(clauses[0].head, Term::compound("f", vec![Term::atom("a")]));
        assert!(clauses[0].body.is_empty());
        assert_eq!(clauses[1].body.len(), 2);
        assert!(is_operator_goal(&clauses[1].body[1]));
    }

    #[test]
    fn literals() {
        let clauses = parse_clauses("p(-12, 340282366920938463463374607431768211456, \"x\\\"y\").").unwrap();
        let args = clauses[0].head.args();
        assert_eq!(args[0], Term::int(-12));
        assert_eq!(args[1], Term::Int("340282366920938463463374607431768211456".parse().unwrap()));
        assert_eq!(args[2], Term::text("x\"y"));
    }

    #[test]
    fn comments_are_skipped() {
        let clauses = parse_clauses("% header\nf(a). % trailing\n% end").unwrap();
        assert_eq!(clauses.len(), 1);
    }

    #[test]
    fn nesting_is_bounded() {
        let deep = |n: usize| format!("t({}a{}).", "f(".repeat(n), ")".repeat(n));
        assert!(parse_clauses(&deep(MAX_NESTING - 1)).is_ok());
        let e = parse_clauses(&deep(MAX_NESTING)).unwrap_err();
        assert!(e.message.contains("nested"), "{e}");
        assert!(parse_clauses(&deep(100_000)).is_err());
    }

    #[test]
    fn malformed_input_reports_position() {
        let err = parse_clauses("f(X :-.").unwrap_err();
        assert_eq!((err.line, err.column), (1, 5));
        let err = parse_clauses("f(a).\ng(b)").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(parse_clauses("f().").is_err());
        assert!(parse_clauses("X :- f(a).").is_err());
        assert!(parse_clauses("1.").is_err());
        assert!(parse_clauses("f(a) :- 3.").is_err());
        assert!(parse_clauses("f(a) :- X = 3.").is_err());
        assert!(parse_clauses("f(\"abc).").is_err());
    }

    #[test]
    fn anonymous_variables_are_distinct() {
        let clauses = parse_clauses("f(_, _, _1).").unwrap();
        let vars = clauses[0].head.variables();
        assert_eq!(vars.len(), 3);
        assert_eq!(vars[2].name(), "_1");
        assert_ne!(vars[0], vars[1]);
        assert!(vars.iter().all(|v| super::super::term::is_var_name(v.name())));
    }

    #[test]
    fn goal_reader() {
        let g = parse_goal("accept(P, 150, machine_learning).").unwrap();
        assert_eq!(g.indicator(), Some(("accept", 3)));
        assert!(parse_goal("N >= 3").is_ok());
        assert!(parse_goal("f(a) g").is_err());
    }
}
