use std::collections::BTreeSet;

use super::{ArityClash, Atom, Cq, Program, Rule, Signature, Term, Ucq, Var};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: unsafe rule: head variable `{var}` does not occur in the body and is not existential")]
    Unsafe { line: usize, col: usize, var: String },
    #[error("{line}:{col}: {source}")]
    Arity {
        line: usize,
        col: usize,
        #[source]
        source: ArityClash,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Quoted(String),
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
    Dot,
    Arrow,
    Eof,
}

#[derive(Clone, Debug)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

fn is_ident_start(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub(crate) fn is_ident_continue(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '#' | '$' | '@' | '~' | ':' | '\'' | '=' | '[' | ']' | ';')
}

fn lex(text: &str) -> Result<Vec<Spanned>, ParseError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let err = |line, col, msg: String| ParseError::Syntax { line, col, msg };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let bump = |i: &mut usize, line: &mut usize, col: &mut usize| {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        };
        if c.is_whitespace() {
            bump(&mut i, &mut line, &mut col);
            continue;
        }
        if c == '%' {
            while i < chars.len() && chars[i] != '\n' {
                bump(&mut i, &mut line, &mut col);
            }
            continue;
        }
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            ',' => Tok::Comma,
            '.' => Tok::Dot,
            '-' if chars.get(i + 1) == Some(&'>') => {
                bump(&mut i, &mut line, &mut col);
                Tok::Arrow
            }
            '"' => {
                bump(&mut i, &mut line, &mut col);
                let mut s = String::new();
                loop {
                    match chars.get(i) {
                        None | Some('\n') => return Err(err(tl, tc, "unterminated quoted name".into())),
                        Some('"') => break,
                        Some('\\') => {
                            bump(&mut i, &mut line, &mut col);
                            match chars.get(i) {
                                Some(&e @ ('"' | '\\')) => s.push(e),
                                _ => return Err(err(line, col, "invalid escape in quoted name".into())),
                            }
                        }
                        Some(&ch) => s.push(ch),
                    }
                    bump(&mut i, &mut line, &mut col);
                }
                if s.is_empty() {
                    return Err(err(tl, tc, "empty quoted name".into()));
                }
                Tok::Quoted(s)
            }
            c if is_ident_start(c) => {
                let mut s = String::new();
                while i < chars.len() && is_ident_continue(chars[i]) {
                    s.push(chars[i]);
                    bump(&mut i, &mut line, &mut col);
                }
                out.push(Spanned { tok: Tok::Ident(s), line: tl, col: tc });
                continue;
            }
            other => return Err(err(tl, tc, format!("unexpected character `{other}`"))),
        };
        bump(&mut i, &mut line, &mut col);
        out.push(Spanned { tok, line: tl, col: tc });
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

/// How bare lowercase identifiers in term position are read.
#[derive(Clone, Copy, PartialEq, Eq)]
enum TermMode {
    Rule,
    Ground,
}

struct Parser<'s> {
    toks: Vec<Spanned>,
    pos: usize,
    sig: &'s mut Signature,
    mode: TermMode,
}

type PResult<T> = Result<T, ParseError>;

impl<'s> Parser<'s> {
    fn new(text: &str, sig: &'s mut Signature, mode: TermMode) -> PResult<Self> {
        Ok(Parser { toks: lex(text)?, pos: 0, sig, mode })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn here(&self) -> (usize, usize) {
        let t = &self.toks[self.pos];
        (t.line, t.col)
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if t.tok != Tok::Eof {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let (line, col) = self.here();
        Err(ParseError::Syntax { line, col, msg: msg.into() })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> PResult<()> {
        if *self.peek() == tok {
            self.next();
            Ok(())
        } else {
            self.error(format!("expected {what}, found {}", describe(self.peek())))
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn name(&mut self, what: &str) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) | Tok::Quoted(s) => {
                self.next();
                Ok(s)
            }
            other => self.error(format!("expected {what}, found {}", describe(&other))),
        }
    }

    fn term(&mut self) -> PResult<Term> {
        match self.peek().clone() {
            Tok::Quoted(s) => {
                self.next();
                Ok(Term::constant(s))
            }
            Tok::Ident(s) => {
                self.next();
                let first = s.chars().next().unwrap();
                let is_var = self.mode == TermMode::Rule && (first.is_lowercase() || first == '_');
                Ok(if is_var { Term::var(s) } else { Term::constant(s) })
            }
            other => self.error(format!("expected a term, found {}", describe(&other))),
        }
    }

    fn atom(&mut self) -> PResult<Atom> {
        let (line, col) = self.here();
        let name = self.name("a predicate name")?;
        let mut args = Vec::new();
        if *self.peek() == Tok::LParen {
            self.next();
            if *self.peek() != Tok::RParen {
                args.push(self.term()?);
                while *self.peek() == Tok::Comma {
                    self.next();
                    args.push(self.term()?);
                }
            }
            self.expect(Tok::RParen, "`)` or `,`")?;
        }
        let pred = self
            .sig
            .intern(&name, args.len())
            .map_err(|source| ParseError::Arity { line, col, source })?;
        Ok(Atom::new(pred, args))
    }

    fn atom_list(&mut self) -> PResult<Vec<Atom>> {
        let mut atoms = vec![self.atom()?];
        while *self.peek() == Tok::Comma {
            self.next();
            atoms.push(self.atom()?);
        }
        Ok(atoms)
    }

    fn rule(&mut self) -> PResult<Rule> {
        let (line, col) = self.here();
        let body = if self.at_keyword("true") && self.toks[self.pos + 1].tok == Tok::Arrow {
            self.next();
            Vec::new()
        } else {
            self.atom_list()?
        };
        self.expect(Tok::Arrow, "`->`")?;
        let mut declared: Vec<Var> = Vec::new();
        if self.at_keyword("exists") && matches!(self.toks[self.pos + 1].tok, Tok::Ident(_)) {
            self.next();
            loop {
                match self.term()? {
                    Term::Var(v) => declared.push(v),
                    _ => return self.error("existential must be a variable"),
                }
                if *self.peek() == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
            self.expect(Tok::Dot, "`.` after existential variables")?;
        }
        let head = self.atom()?;
        if *self.peek() == Tok::Comma {
            return self.error("head must be a single atom");
        }
        self.expect(Tok::Dot, "`.` at end of rule")?;

        let body_vars: BTreeSet<&Var> = body.iter().flat_map(Atom::vars).collect();
        for v in &declared {
            if body_vars.contains(v) {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    msg: format!("existential variable `{v}` also occurs in the body"),
                });
            }
            if !head.vars().any(|h| h == v) {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    msg: format!("existential variable `{v}` does not occur in the head"),
                });
            }
        }
        for v in head.vars() {
            if !body_vars.contains(v) && !declared.contains(v) {
                return Err(ParseError::Unsafe { line, col, var: v.0.clone() });
            }
        }
        Ok(Rule::new(body, head))
    }

    fn query(&mut self) -> PResult<Ucq> {
        if !self.at_keyword("query") {
            return self.error(format!("expected `query`, found {}", describe(self.peek())));
        }
        self.next();
        let name = self.name("a query name")?;
        let mut disjuncts = vec![self.braced()?];
        while self.at_keyword("or") {
            self.next();
            disjuncts.push(self.braced()?);
        }
        self.expect(Tok::Dot, "`.` at end of query")?;
        Ok(Ucq::new(name, disjuncts))
    }

    fn braced(&mut self) -> PResult<Cq> {
        self.expect(Tok::LBrace, "`{`")?;
        let atoms = if *self.peek() == Tok::RBrace { Vec::new() } else { self.atom_list()? };
        self.expect(Tok::RBrace, "`}` or `,`")?;
        Ok(Cq::new(atoms))
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("`{s}`"),
        Tok::Quoted(s) => format!("\"{s}\""),
        Tok::LParen => "`(`".into(),
        Tok::RParen => "`)`".into(),
        Tok::LBrace => "`{`".into(),
        Tok::RBrace => "`}`".into(),
        Tok::Comma => "`,`".into(),
        Tok::Dot => "`.`".into(),
        Tok::Arrow => "`->`".into(),
        Tok::Eof => "end of input".into(),
    }
}

/// Parses a rule file into a fresh program. Predicates are numbered by first
/// occurrence.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let mut sig = Signature::new();
    let rules = {
        let mut p = Parser::new(text, &mut sig, TermMode::Rule)?;
        let mut rules = Vec::new();
        while *p.peek() != Tok::Eof {
            rules.push(p.rule()?);
        }
        rules
    };
    Ok(Program::new(sig, rules))
}

/// Parses queries against `sig`, declaring unseen predicates.
pub fn parse_queries(text: &str, sig: &mut Signature) -> Result<Vec<Ucq>, ParseError> {
    let mut p = Parser::new(text, sig, TermMode::Rule)?;
    let mut out = Vec::new();
    while *p.peek() != Tok::Eof {
        out.push(p.query()?);
    }
    Ok(out)
}

/// Parses a database file: ground atoms terminated by `.`. Every term is a constant.
pub fn parse_instance(text: &str, sig: &mut Signature) -> Result<Vec<Atom>, ParseError> {
    let mut p = Parser::new(text, sig, TermMode::Ground)?;
    let mut out: Vec<Atom> = Vec::new();
    while *p.peek() != Tok::Eof {
        let a = p.atom()?;
        p.expect(Tok::Dot, "`.` after fact")?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    Ok(out)
}

/// A program together with queries and database facts over one signature.
#[derive(Clone, Debug)]
pub struct Problem {
    pub program: Program,
    pub queries: Vec<Ucq>,
    pub database: Vec<Atom>,
}

/// Parses a program, then queries and facts against its signature. Predicates
/// that only occur in queries or facts are added to the program's signature.
pub fn parse_problem(program: &str, queries: &str, database: &str) -> Result<Problem, ParseError> {
    let mut program = parse_program(program)?;
    let mut sig = std::mem::take(&mut program.signature);
    let queries = parse_queries(queries, &mut sig)?;
    let database = parse_instance(database, &mut sig)?;
    program.signature = sig;
    Ok(Problem { program, queries, database })
}
