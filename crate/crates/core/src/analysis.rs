//! Static analyses of rule sets and the constant-elimination reduction.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rustc_hash::FxHashMap;

use crate::facts::{rule_violations, FactIndex, GroundAtom};
use crate::syntax::{Atom, Const, Cq, ElemId, PredId, Program, Rule, Signature, Term, Ucq, Var};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("specialization budget of {budget} exceeded while {what}")]
    Budget { budget: usize, what: String },
}

/// A rule body that mentions `var` more than once.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JoinViolation {
    pub rule: usize,
    pub var: Var,
}

pub fn joinless_violations(program: &Program) -> Vec<JoinViolation> {
    program
        .rules
        .iter()
        .enumerate()
        .flat_map(|(i, r)| r.join_vars().into_iter().map(move |v| JoinViolation { rule: i, var: v.clone() }))
        .collect()
}

pub fn is_joinless(program: &Program) -> (bool, Vec<JoinViolation>) {
    let v = joinless_violations(program);
    (v.is_empty(), v)
}

/// The joinless rules of `program`, over the predicates they mention.
pub fn joinless_subset(program: &Program) -> Program {
    restrict(program, program.rules.iter().filter(|r| r.is_joinless()).cloned().collect())
}

/// Rebuilds a program from `rules` (drawn from `program`) with the signature
/// cut down to the predicates they use, keeping names, arities and order.
fn restrict(program: &Program, rules: Vec<Rule>) -> Program {
    let used: BTreeSet<PredId> = rules.iter().flat_map(Rule::preds).collect();
    let mut sig = Signature::new();
    let mut map = FxHashMap::default();
    for id in used {
        map.insert(id, sig.insert(program.signature.get(id).clone()));
    }
    let rules = rules.iter().map(|r| rename_rule(r, &|p| map[&p])).collect();
    Program { rules, signature: sig, annotated: program.annotated }
}

pub(crate) fn rename_atom(a: &Atom, f: &dyn Fn(PredId) -> PredId) -> Atom {
    Atom::new(f(a.pred), a.args.clone())
}

pub(crate) fn rename_rule(r: &Rule, f: &dyn Fn(PredId) -> PredId) -> Rule {
    Rule {
        body: r.body.iter().map(|a| rename_atom(a, f)).collect(),
        head: rename_atom(&r.head, f),
        existentials: r.existentials.clone(),
        shape: r.shape,
    }
}

/// Removes every rule mentioning a predicate of arity ≥ `l`.
pub fn strip_arity(program: &Program, l: usize) -> Program {
    let keep = program
        .rules
        .iter()
        .filter(|r| r.preds().all(|p| program.signature.arity(p) < l))
        .cloned()
        .collect();
    restrict(program, keep)
}

/// A predicate position, 0-based.
pub type Position = (PredId, usize);

/// Set of immortal positions.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Marking {
    pub immortal: BTreeSet<Position>,
}

/// A requirement of the sticky conditions that a marking fails.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MarkingViolation {
    pub rule: usize,
    pub var: Var,
    /// True if the variable is repeated in the body, false if it sits at an
    /// immortal body position.
    pub repeated: bool,
}

/// Variables of `rule` that the marking forces into an immortal head position.
fn required_vars(rule: &Rule, immortal: &BTreeSet<Position>) -> Vec<(Var, bool)> {
    let joins: Vec<&Var> = rule.join_vars();
    let mut out: Vec<(Var, bool)> = joins.iter().map(|v| ((*v).clone(), true)).collect();
    for a in &rule.body {
        for (i, t) in a.args.iter().enumerate() {
            if let Term::Var(v) = t {
                if immortal.contains(&(a.pred, i)) && !out.iter().any(|(w, _)| w == v) {
                    out.push((v.clone(), false));
                }
            }
        }
    }
    out
}

fn head_positions(rule: &Rule, v: &Var) -> Vec<Position> {
    rule.head.positions_of(v).map(|i| (rule.head.pred, i)).collect()
}

/// Checks both sticky conditions against `marking`.
pub fn verify_marking(program: &Program, marking: &Marking) -> Vec<MarkingViolation> {
    let mut out = Vec::new();
    for (ri, rule) in program.rules.iter().enumerate() {
        for (v, repeated) in required_vars(rule, &marking.immortal) {
            if !head_positions(rule, &v).iter().any(|p| marking.immortal.contains(p)) {
                out.push(MarkingViolation { rule: ri, var: v, repeated });
            }
        }
    }
    out
}

/// Finds a valid sticky marking, or `None` if the program is not sticky.
///
/// Requirements are propagated to a fixpoint. When every head mentions each
/// variable once, each requirement names a single position and the result is
/// the least valid marking. Heads with repeated variables give a choice of
/// positions; those choices are explored depth-first in position order.
pub fn find_sticky_marking(program: &Program) -> Option<Marking> {
    fn solve(program: &Program, mut marked: BTreeSet<Position>) -> Option<BTreeSet<Position>> {
        loop {
            let mut choice: Option<Vec<Position>> = None;
            let mut changed = false;
            for rule in &program.rules {
                for (v, _) in required_vars(rule, &marked) {
                    let heads = head_positions(rule, &v);
                    if heads.iter().any(|p| marked.contains(p)) {
                        continue;
                    }
                    match heads.len() {
                        0 => return None,
                        1 => {
                            marked.insert(heads[0]);
                            changed = true;
                        }
                        _ => {
                            if choice.is_none() {
                                choice = Some(heads);
                            }
                        }
                    }
                }
            }
            if changed {
                continue;
            }
            let Some(options) = choice else { return Some(marked) };
            for p in options {
                let mut next = marked.clone();
                next.insert(p);
                if let Some(found) = solve(program, next) {
                    return Some(found);
                }
            }
            return None;
        }
    }
    let immortal = solve(program, BTreeSet::new())?;
    let marking = Marking { immortal };
    debug_assert!(verify_marking(program, &marking).is_empty());
    Some(marking)
}

/// Interns constants as elements so ground atoms can live in a [`FactIndex`].
#[derive(Clone, Debug, Default)]
pub struct ConstTable {
    names: Vec<Const>,
    ids: FxHashMap<Const, ElemId>,
}

impl ConstTable {
    pub fn intern(&mut self, c: &Const) -> ElemId {
        if let Some(&e) = self.ids.get(c) {
            return e;
        }
        let e = ElemId(self.names.len() as u32);
        self.names.push(c.clone());
        self.ids.insert(c.clone(), e);
        e
    }

    pub fn get(&self, c: &Const) -> Option<ElemId> {
        self.ids.get(c).copied()
    }

    pub fn name(&self, e: ElemId) -> &Const {
        &self.names[e.index()]
    }
}

/// Loads ground atoms into an index. Non-constant terms are rejected by panicking.
pub fn index_instance(instance: &[Atom]) -> (FactIndex, ConstTable) {
    let mut table = ConstTable::default();
    let mut index = FactIndex::new();
    for a in instance {
        let args: Vec<ElemId> = a
            .args
            .iter()
            .map(|t| match t {
                Term::Const(c) => table.intern(c),
                other => panic!("instance atom with non-constant term {other:?}"),
            })
            .collect();
        index.insert(GroundAtom::new(a.pred, args));
    }
    (index, table)
}

/// True iff the instance satisfies every joinless rule of `program`.
pub fn is_weakly_saturated(instance: &[Atom], program: &Program) -> bool {
    let (index, table) = index_instance(instance);
    let resolve = |c: &Const| table.get(c);
    program
        .rules
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_joinless())
        .all(|(i, r)| rule_violations(&index, r, i, &resolve, 1).is_empty())
}

/// Fixed positions of a specialized predicate: `(position, constant)`, sorted by position.
pub type Assignment = Vec<(usize, Const)>;

/// Maps (original predicate, fixed positions) to the predicate of reduced arity
/// that replaces it after constants are eliminated.
#[derive(Clone, Debug, Default)]
pub struct SpecializationDictionary {
    forward: BTreeMap<(String, Assignment), PredId>,
    inverse: BTreeMap<PredId, (String, Assignment)>,
}

impl SpecializationDictionary {
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn get(&self, pred: &str, assignment: &Assignment) -> Option<PredId> {
        self.forward.get(&(pred.to_string(), assignment.clone())).copied()
    }

    pub fn origin(&self, pred: PredId) -> Option<&(String, Assignment)> {
        self.inverse.get(&pred)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(String, Assignment), PredId)> {
        self.forward.iter().map(|(k, &v)| (k, v))
    }

    /// One line per entry, sorted by original predicate then positions.
    pub fn to_text(&self, sig: &Signature) -> String {
        let mut out = String::new();
        for ((name, asg), id) in self.entries() {
            let fixed: Vec<String> = asg.iter().map(|(p, c)| format!("{}={}", p + 1, c.name())).collect();
            let _ = writeln!(out, "{name}\t{}\t{}", fixed.join(","), sig.name(id));
        }
        out
    }
}

pub const DEFAULT_SPECIALIZATION_BUDGET: usize = 100_000;

/// Output of [`specialize_constants`].
#[derive(Clone, Debug)]
pub struct Specialized {
    pub program: Program,
    pub dictionary: SpecializationDictionary,
}

fn specialized_name(name: &str, asg: &Assignment) -> String {
    let fixed: Vec<String> = asg.iter().map(|(p, c)| format!("{}={}", p + 1, c.name())).collect();
    format!("{name}[{}]", fixed.join(";"))
}

struct Folder<'a> {
    source: &'a Signature,
    sig: Signature,
    dict: SpecializationDictionary,
}

impl Folder<'_> {
    /// Moves the constants of `atom` into its predicate name.
    fn fold(&mut self, atom: &Atom) -> Atom {
        let name = self.source.name(atom.pred).to_string();
        let asg: Assignment = atom
            .args
            .iter()
            .enumerate()
            .filter_map(|(i, t)| t.as_const().map(|c| (i, c.clone())))
            .collect();
        let rest: Vec<Term> = atom.args.iter().filter(|t| t.as_const().is_none()).cloned().collect();
        if asg.is_empty() {
            let id = match self.sig.lookup(&name) {
                Some(id) => id,
                None => self.sig.insert(crate::syntax::Predicate::plain(name, rest.len())),
            };
            return Atom::new(id, rest);
        }
        let id = match self.dict.get(&name, &asg) {
            Some(id) => id,
            None => {
                let fresh = self.sig.fresh_name(&specialized_name(&name, &asg));
                let id = self.sig.insert(crate::syntax::Predicate::plain(fresh, rest.len()));
                self.dict.forward.insert((name.clone(), asg.clone()), id);
                self.dict.inverse.insert(id, (name, asg));
                id
            }
        };
        Atom::new(id, rest)
    }
}

/// Calls `f` with every partial map from `vars` to `consts` (the empty map
/// first), stopping early if `f` returns false.
fn for_each_partial(vars: &[Var], consts: &[Const], f: &mut dyn FnMut(&FxHashMap<Var, Const>) -> bool) {
    fn go(
        i: usize,
        vars: &[Var],
        consts: &[Const],
        cur: &mut FxHashMap<Var, Const>,
        f: &mut dyn FnMut(&FxHashMap<Var, Const>) -> bool,
    ) -> bool {
        if i == vars.len() {
            return f(cur);
        }
        if !go(i + 1, vars, consts, cur, f) {
            return false;
        }
        for c in consts {
            cur.insert(vars[i].clone(), c.clone());
            let ok = go(i + 1, vars, consts, cur, f);
            cur.remove(&vars[i]);
            if !ok {
                return false;
            }
        }
        true
    }
    go(0, vars, consts, &mut FxHashMap::default(), f);
}

fn substitute_atom(a: &Atom, s: &FxHashMap<Var, Const>) -> Atom {
    Atom::new(
        a.pred,
        a.args
            .iter()
            .map(|t| match t {
                Term::Var(v) => s.get(v).map_or_else(|| t.clone(), |c| Term::Const(c.clone())),
                other => other.clone(),
            })
            .collect(),
    )
}

fn count_partials(n_vars: usize, n_consts: usize) -> Option<usize> {
    (n_consts + 1).checked_pow(n_vars as u32)
}

/// Eliminates constants: every rule is instantiated under every partial
/// assignment of its body variables to the constants of the instance and the
/// program, constants are folded into predicate names, and every instance
/// atom becomes a fact rule.
pub fn specialize_constants(instance: &[Atom], program: &Program, budget: usize) -> Result<Specialized, AnalysisError> {
    let mut consts: BTreeSet<Const> = program.constants();
    for a in instance {
        consts.extend(a.args.iter().filter_map(Term::as_const).cloned());
    }
    let consts: Vec<Const> = consts.into_iter().collect();
    let mut folder = Folder { source: &program.signature, sig: Signature::new(), dict: SpecializationDictionary::default() };
    let mut rules: Vec<Rule> = Vec::new();
    let mut seen = rustc_hash::FxHashSet::default();
    let over = |what: &str| AnalysisError::Budget { budget, what: what.to_string() };
    let mut total = 0usize;
    for rule in &program.rules {
        let vars: Vec<Var> = rule.body_vars().into_iter().cloned().collect();
        let n = count_partials(vars.len(), consts.len()).ok_or_else(|| over("instantiating rules"))?;
        total = total.checked_add(n).ok_or_else(|| over("instantiating rules"))?;
        if total > budget {
            return Err(over("instantiating rules"));
        }
        for_each_partial(&vars, &consts, &mut |s| {
            let body: Vec<Atom> = rule.body.iter().map(|a| folder.fold(&substitute_atom(a, s))).collect();
            let head = folder.fold(&substitute_atom(&rule.head, s));
            let r = Rule::new(body, head);
            if seen.insert(r.clone()) {
                rules.push(r);
            }
            true
        });
    }
    for a in instance {
        let r = Rule::new(Vec::new(), folder.fold(a));
        if seen.insert(r.clone()) {
            rules.push(r);
        }
    }
    Ok(Specialized { program: Program::new(folder.sig, rules), dictionary: folder.dict })
}

/// Rewrites a query over the original signature into the specialized one.
/// Every disjunct is instantiated under every partial assignment of its
/// variables to the dictionary's constants; instantiations that need a
/// predicate absent from the specialized signature are dropped.
pub fn rewrite_query_specialized(
    query: &Ucq,
    source: &Signature,
    specialized: &Specialized,
    budget: usize,
) -> Result<Ucq, AnalysisError> {
    let consts: Vec<Const> = specialized
        .dictionary
        .entries()
        .flat_map(|((_, asg), _)| asg.iter().map(|(_, c)| c.clone()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let over = || AnalysisError::Budget { budget, what: "rewriting a query".to_string() };
    let sig = &specialized.program.signature;
    let mut out = Vec::new();
    let mut total = 0usize;
    for cq in &query.disjuncts {
        let vars = cq.vars();
        total = total
            .checked_add(count_partials(vars.len(), consts.len()).ok_or_else(over)?)
            .ok_or_else(over)?;
        if total > budget {
            return Err(over());
        }
        for_each_partial(&vars, &consts, &mut |s| {
            let mut atoms = Vec::with_capacity(cq.len());
            for a in cq.atoms() {
                let a = substitute_atom(a, s);
                let name = source.name(a.pred);
                let asg: Assignment = a
                    .args
                    .iter()
                    .enumerate()
                    .filter_map(|(i, t)| t.as_const().map(|c| (i, c.clone())))
                    .collect();
                let target = if asg.is_empty() {
                    sig.lookup(name).filter(|&id| specialized.dictionary.origin(id).is_none())
                } else {
                    specialized.dictionary.get(name, &asg)
                };
                // An atom with no counterpart drops the whole instantiation.
                let Some(target) = target else { return true };
                atoms.push(Atom::new(target, a.args.iter().filter(|t| t.as_const().is_none()).cloned().collect()));
            }
            out.push(Cq::new(atoms));
            true
        });
    }
    Ok(Ucq::new(query.name.clone(), out))
}
