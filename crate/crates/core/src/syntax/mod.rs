//! Terms, atoms, rules and programs, together with the rule and query
//! language frontends.
//!
//! Predicates live in a [`Signature`] and are referred to by [`PredId`];
//! every other syntactic object is a plain value that can be cloned and
//! shared across threads.

mod parse;
mod print;

use std::collections::BTreeSet;
use std::fmt;

use rustc_hash::FxHashMap;

use crate::family::FamilyPattern;

pub use parse::{parse_instance, parse_problem, parse_program, parse_queries, ParseError, Problem};
pub use print::{display_atom, display_cq, is_bare_ident, write_program, write_queries, write_rule};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PredId(pub u32);

impl PredId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Identifier of an element of a chase instance (a constant or a labeled null).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ElemId(pub u32);

impl ElemId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for ElemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub String);

impl Var {
    pub fn new(name: impl Into<String>) -> Self {
        Var(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Const(pub String);

impl Const {
    pub fn new(name: impl Into<String>) -> Self {
        Const(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(Var),
    Const(Const),
    /// Labeled null; only ever produced by the chase.
    Null(ElemId),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Self {
        Term::Var(Var::new(name))
    }

    pub fn constant(name: impl Into<String>) -> Self {
        Term::Const(Const::new(name))
    }

    pub fn as_var(&self) -> Option<&Var> {
        match self {
            Term::Var(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_const(&self) -> Option<&Const> {
        match self {
            Term::Const(c) => Some(c),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Atom {
    pub pred: PredId,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(pred: PredId, args: Vec<Term>) -> Self {
        Atom { pred, args }
    }

    pub fn vars(&self) -> impl Iterator<Item = &Var> {
        self.args.iter().filter_map(Term::as_var)
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    /// Positions (0-based) holding `var`.
    pub fn positions_of<'a>(&'a self, var: &'a Var) -> impl Iterator<Item = usize> + 'a {
        self.args
            .iter()
            .enumerate()
            .filter(move |(_, t)| t.as_var() == Some(var))
            .map(|(i, _)| i)
    }

    pub fn has_repeated_vars(&self) -> bool {
        let mut seen = BTreeSet::new();
        self.vars().any(|v| !seen.insert(v))
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !matches!(t, Term::Var(_)))
    }
}

/// Rule shape, as far as the chase is concerned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Shape {
    /// Empty body, no existential variable.
    Fact,
    /// One body atom, no existentials, head variables drawn from the body.
    Projection,
    /// At most two body atoms and a single existential at head position 1.
    Parenthood,
    /// Anything else; must be canonicalized before chasing.
    General,
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Shape::Fact => "fact",
            Shape::Projection => "projection",
            Shape::Parenthood => "parenthood",
            Shape::General => "general",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Rule {
    pub body: Vec<Atom>,
    pub head: Atom,
    pub existentials: Vec<Var>,
    pub shape: Shape,
}

impl Rule {
    /// Builds a rule, deriving the existential variables (head variables absent
    /// from the body, in order of first head occurrence) and the shape.
    pub fn new(body: Vec<Atom>, head: Atom) -> Self {
        let body_vars: BTreeSet<&Var> = body.iter().flat_map(Atom::vars).collect();
        let mut existentials: Vec<Var> = Vec::new();
        for v in head.vars() {
            if !body_vars.contains(v) && !existentials.contains(v) {
                existentials.push(v.clone());
            }
        }
        let mut rule = Rule { body, head, existentials, shape: Shape::General };
        rule.shape = classify_shape(&rule);
        rule
    }

    pub fn body_vars(&self) -> BTreeSet<&Var> {
        self.body.iter().flat_map(Atom::vars).collect()
    }

    pub fn is_existential(&self, v: &Var) -> bool {
        self.existentials.contains(v)
    }

    /// Head variables that also occur in the body.
    pub fn frontier(&self) -> Vec<&Var> {
        let mut out: Vec<&Var> = Vec::new();
        for v in self.head.vars() {
            if !self.is_existential(v) && !out.contains(&v) {
                out.push(v);
            }
        }
        out
    }

    /// A variable occurring twice anywhere in the body, if any.
    pub fn join_vars(&self) -> Vec<&Var> {
        let mut seen = BTreeSet::new();
        let mut joins = Vec::new();
        for v in self.body.iter().flat_map(Atom::vars) {
            if !seen.insert(v) && !joins.contains(&v) {
                joins.push(v);
            }
        }
        joins
    }

    pub fn is_joinless(&self) -> bool {
        self.join_vars().is_empty()
    }

    pub fn preds(&self) -> impl Iterator<Item = PredId> + '_ {
        self.body.iter().map(|a| a.pred).chain(std::iter::once(self.head.pred))
    }

    pub fn constants(&self) -> impl Iterator<Item = &Const> {
        self.body
            .iter()
            .chain(std::iter::once(&self.head))
            .flat_map(|a| a.args.iter().filter_map(Term::as_const))
    }
}

/// Classifies a (safe) rule. Parenthood takes precedence over fact: a rule
/// `true -> exists x. N(x)` is a parenthood rule with zero parents.
pub fn classify_shape(rule: &Rule) -> Shape {
    if rule.existentials.len() == 1 && rule.body.len() <= 2 {
        let e = &rule.existentials[0];
        let first_is_e = rule.head.args.first().and_then(Term::as_var) == Some(e);
        let elsewhere = rule.head.args.iter().skip(1).any(|t| t.as_var() == Some(e));
        if first_is_e && !elsewhere {
            return Shape::Parenthood;
        }
    }
    if rule.existentials.is_empty() {
        if rule.body.is_empty() {
            return Shape::Fact;
        }
        if rule.body.len() == 1 {
            return Shape::Projection;
        }
    }
    Shape::General
}

/// Role of a predicate once a program has been family-annotated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    Plain,
    Parenthood,
    Projection,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Predicate {
    pub name: String,
    pub arity: usize,
    pub role: Role,
    pub pattern: Option<FamilyPattern>,
}

impl Predicate {
    pub fn plain(name: impl Into<String>, arity: usize) -> Self {
        Predicate { name: name.into(), arity, role: Role::Plain, pattern: None }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Signature {
    preds: Vec<Predicate>,
    by_name: FxHashMap<String, PredId>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("predicate `{name}` used with arity {found}, declared with arity {expected}")]
pub struct ArityClash {
    pub name: String,
    pub expected: usize,
    pub found: usize,
}

impl Signature {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.preds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.preds.is_empty()
    }

    pub fn get(&self, id: PredId) -> &Predicate {
        &self.preds[id.index()]
    }

    pub fn get_mut(&mut self, id: PredId) -> &mut Predicate {
        &mut self.preds[id.index()]
    }

    pub fn name(&self, id: PredId) -> &str {
        &self.preds[id.index()].name
    }

    pub fn arity(&self, id: PredId) -> usize {
        self.preds[id.index()].arity
    }

    pub fn role(&self, id: PredId) -> Role {
        self.preds[id.index()].role
    }

    pub fn pattern(&self, id: PredId) -> Option<&FamilyPattern> {
        self.preds[id.index()].pattern.as_ref()
    }

    pub fn lookup(&self, name: &str) -> Option<PredId> {
        self.by_name.get(name).copied()
    }

    /// Returns the id of `name`, declaring it with `arity` on first use.
    pub fn intern(&mut self, name: &str, arity: usize) -> Result<PredId, ArityClash> {
        if let Some(id) = self.lookup(name) {
            let expected = self.arity(id);
            if expected != arity {
                return Err(ArityClash { name: name.to_string(), expected, found: arity });
            }
            return Ok(id);
        }
        Ok(self.insert(Predicate::plain(name, arity)))
    }

    /// Adds a predicate; panics if the name is taken.
    pub fn insert(&mut self, pred: Predicate) -> PredId {
        assert!(!self.by_name.contains_key(&pred.name), "duplicate predicate {}", pred.name);
        let id = PredId(self.preds.len() as u32);
        self.by_name.insert(pred.name.clone(), id);
        self.preds.push(pred);
        id
    }

    /// Returns an unused name derived from `base`.
    pub fn fresh_name(&self, base: &str) -> String {
        if self.lookup(base).is_none() {
            return base.to_string();
        }
        (1..).map(|i| format!("{base}{i}")).find(|n| self.lookup(n).is_none()).unwrap()
    }

    pub fn ids(&self) -> impl Iterator<Item = PredId> {
        (0..self.preds.len() as u32).map(PredId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (PredId, &Predicate)> {
        self.preds.iter().enumerate().map(|(i, p)| (PredId(i as u32), p))
    }

    pub fn max_arity(&self) -> usize {
        self.preds.iter().map(|p| p.arity).max().unwrap_or(0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    pub rules: Vec<Rule>,
    pub signature: Signature,
    /// Set once predicates carry family patterns and roles.
    pub annotated: bool,
}

impl Program {
    pub fn new(signature: Signature, rules: Vec<Rule>) -> Self {
        Program { rules, signature, annotated: false }
    }

    pub fn is_joinless(&self) -> bool {
        self.rules.iter().all(Rule::is_joinless)
    }

    pub fn constants(&self) -> BTreeSet<Const> {
        self.rules.iter().flat_map(|r| r.constants().cloned()).collect()
    }

    /// Predicates mentioned by at least one rule, in signature order.
    pub fn used_preds(&self) -> BTreeSet<PredId> {
        self.rules.iter().flat_map(Rule::preds).collect()
    }

    pub fn to_text(&self) -> String {
        write_program(self)
    }
}

/// A Boolean conjunctive query; atoms are kept duplicate-free in first-occurrence order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Default)]
pub struct Cq {
    atoms: Vec<Atom>,
}

impl Cq {
    pub fn new(atoms: impl IntoIterator<Item = Atom>) -> Self {
        let mut out: Vec<Atom> = Vec::new();
        for a in atoms {
            if !out.contains(&a) {
                out.push(a);
            }
        }
        Cq { atoms: out }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Variables in order of first occurrence.
    pub fn vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = Vec::new();
        for v in self.atoms.iter().flat_map(Atom::vars) {
            if !out.contains(v) {
                out.push(v.clone());
            }
        }
        out
    }

    /// Applies a variable substitution and re-establishes set semantics.
    pub fn substitute(&self, f: impl Fn(&Var) -> Term) -> Cq {
        Cq::new(self.atoms.iter().map(|a| Atom {
            pred: a.pred,
            args: a
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => f(v),
                    other => other.clone(),
                })
                .collect(),
        }))
    }
}

/// A named union of conjunctive queries. An empty disjunct list is the
/// constant-false query.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Ucq {
    pub name: String,
    pub disjuncts: Vec<Cq>,
}

impl Ucq {
    pub fn new(name: impl Into<String>, disjuncts: Vec<Cq>) -> Self {
        let mut out: Vec<Cq> = Vec::new();
        for d in disjuncts {
            if !out.contains(&d) {
                out.push(d);
            }
        }
        Ucq { name: name.into(), disjuncts: out }
    }

    pub fn is_false(&self) -> bool {
        self.disjuncts.is_empty()
    }
}
