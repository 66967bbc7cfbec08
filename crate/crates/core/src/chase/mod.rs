//! Round-based chase with full provenance.
//!
//! Elements are either constants of the initial database or labeled nulls
//! created by existential rules. A trigger whose head has existential
//! variables fires at most once per (head predicate, frontier values): a later
//! trigger with the same frontier reuses the nulls of the first one.

mod rebase;

use std::fmt::Write as _;
use std::sync::Arc;

use rustc_hash::FxHashMap;

use crate::analysis::ConstTable;
use crate::facts::{compile_atoms, for_each_match, AtomId, FactIndex, GroundAtom, PatternAtom, Slot};
use crate::syntax::{Atom, Const, ElemId, PredId, Program, Role, Term, Var};

pub use rebase::{rebase, verify_claims, Rebased};

pub const DEFAULT_MAX_ELEMENTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ChaseError {
    #[error("element budget of {limit} exceeded in round {round}")]
    Budget { limit: usize, round: u32 },
    #[error("element {elem} would get a second parenthood atom `{atom}`")]
    SecondParenthoodAtom { elem: String, atom: String },
    #[error("database atom `{0}` is not ground")]
    NonGround(String),
    #[error("instance was extended by a rebase and cannot be deepened")]
    Extended,
    #[error("rebase: {0}")]
    Rebase(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChaseConfig {
    pub max_elements: usize,
}

impl Default for ChaseConfig {
    fn default() -> Self {
        ChaseConfig { max_elements: DEFAULT_MAX_ELEMENTS }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Element {
    /// Rule that created the element; `None` for database constants.
    pub birth_rule: Option<usize>,
    /// Non-existential head arguments of the birth atom, in head order.
    pub parents: Vec<ElemId>,
    pub birth_atom: Option<AtomId>,
    pub depth: u32,
    pub constant: Option<Const>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AtomMeta {
    /// 0 for database atoms; `u32::MAX` for atoms added by a rebase.
    pub round: u32,
    pub rule: Option<usize>,
    pub premises: Vec<AtomId>,
}

pub const REBASE_ROUND: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum KeyArg {
    Exist(u8),
    Elem(ElemId),
}

#[derive(Clone, Copy, Debug)]
enum HeadArg {
    Body(usize),
    Exist(u8),
    Elem(ElemId),
}

/// Precompiled rule: body pattern plus head template.
#[derive(Clone, Debug)]
struct Compiled {
    body: Vec<PatternAtom>,
    n_body_vars: usize,
    head_pred: PredId,
    head: Vec<HeadArg>,
    n_exist: usize,
}

fn compile(program: &Program, consts: &ConstTable) -> Vec<Option<Compiled>> {
    program
        .rules
        .iter()
        .map(|r| {
            let mut vars: Vec<Var> = Vec::new();
            let resolve = |c: &Const| consts.get(c);
            let body = compile_atoms(&r.body, &mut vars, &resolve)?;
            let head = r
                .head
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => match vars.iter().position(|w| w == v) {
                        Some(i) => Some(HeadArg::Body(i)),
                        None => Some(HeadArg::Exist(r.existentials.iter().position(|e| e == v)? as u8)),
                    },
                    Term::Const(c) => consts.get(c).map(HeadArg::Elem),
                    Term::Null(e) => Some(HeadArg::Elem(*e)),
                })
                .collect::<Option<Vec<_>>>()?;
            Some(Compiled { body, n_body_vars: vars.len(), head_pred: r.head.pred, head, n_exist: r.existentials.len() })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct ChaseInstance {
    program: Arc<Program>,
    compiled: Vec<Option<Compiled>>,
    consts: ConstTable,
    facts: FactIndex,
    meta: Vec<AtomMeta>,
    elements: Vec<Element>,
    witnesses: FxHashMap<(PredId, Vec<KeyArg>), Vec<ElemId>>,
    /// `round_start[r]` is the first atom id of round `r`.
    round_start: Vec<usize>,
    rounds: u32,
    extended: bool,
    config: ChaseConfig,
}

impl ChaseInstance {
    pub fn new(program: Arc<Program>, config: ChaseConfig) -> Self {
        Self::with_database(program, &[], config).expect("empty database")
    }

    /// Starts a chase from ground database atoms over named constants.
    /// Constants occurring in rules are interned as elements too.
    pub fn with_database(program: Arc<Program>, database: &[Atom], config: ChaseConfig) -> Result<Self, ChaseError> {
        let mut consts = ConstTable::default();
        let mut elements = Vec::new();
        let intern = |c: &Const, consts: &mut ConstTable, elements: &mut Vec<Element>| {
            let e = consts.intern(c);
            if e.index() == elements.len() {
                elements.push(Element { birth_rule: None, parents: Vec::new(), birth_atom: None, depth: 0, constant: Some(c.clone()) });
            }
            e
        };
        for c in program.constants() {
            intern(&c, &mut consts, &mut elements);
        }
        let mut facts = FactIndex::new();
        let mut meta = Vec::new();
        for a in database {
            let mut args = Vec::with_capacity(a.args.len());
            for t in &a.args {
                match t {
                    Term::Const(c) => args.push(intern(c, &mut consts, &mut elements)),
                    _ => return Err(ChaseError::NonGround(crate::syntax::display_atom(&program.signature, a))),
                }
            }
            if facts.insert(GroundAtom::new(a.pred, args)).1 {
                meta.push(AtomMeta { round: 0, rule: None, premises: Vec::new() });
            }
        }
        let compiled = compile(&program, &consts);
        Ok(ChaseInstance {
            program,
            compiled,
            consts,
            facts,
            meta,
            elements,
            witnesses: FxHashMap::default(),
            round_start: vec![0],
            rounds: 0,
            extended: false,
            config,
        })
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn program_arc(&self) -> &Arc<Program> {
        &self.program
    }

    pub fn facts(&self) -> &FactIndex {
        &self.facts
    }

    pub fn atom(&self, id: AtomId) -> &GroundAtom {
        self.facts.get(id)
    }

    pub fn meta(&self, id: AtomId) -> &AtomMeta {
        &self.meta[id.index()]
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, e: ElemId) -> &Element {
        &self.elements[e.index()]
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.facts.len()
    }

    pub fn rounds(&self) -> u32 {
        self.rounds
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    pub fn config(&self) -> ChaseConfig {
        self.config
    }

    pub fn constant(&self, c: &Const) -> Option<ElemId> {
        self.consts.get(c)
    }

    /// Number of atoms derived in rounds `≤ round`.
    pub fn atoms_up_to_round(&self, round: u32) -> usize {
        self.round_start.get(round as usize + 1).copied().unwrap_or(self.facts.len())
    }

    /// Runs rounds until `depth` rounds have been performed or a round adds nothing.
    pub fn run_to(&mut self, depth: u32) -> Result<(), ChaseError> {
        while self.rounds < depth {
            if !self.step()? {
                // Fixpoint: later rounds are empty.
                while self.rounds < depth {
                    self.rounds += 1;
                    self.round_start.push(self.facts.len());
                }
            }
        }
        Ok(())
    }

    /// True if the last round added nothing.
    pub fn is_saturated(&self) -> bool {
        self.rounds > 0 && self.round_start[self.rounds as usize] == self.facts.len()
    }

    /// Performs one parallel round; returns whether anything new was derived.
    pub fn step(&mut self) -> Result<bool, ChaseError> {
        self.step_with(&mut |_, _, _| true)
    }

    /// Like [`step`](Self::step), but a trigger `(rule, premises)` only fires
    /// if `keep` accepts it. Triggers are offered in a fixed order.
    pub fn step_with(&mut self, keep: &mut dyn FnMut(&FactIndex, usize, &[AtomId]) -> bool) -> Result<bool, ChaseError> {
        if self.extended {
            return Err(ChaseError::Extended);
        }
        let round = self.rounds + 1;
        let delta_start = self.round_start[self.rounds as usize];
        let delta_end = self.facts.len();
        // Collect triggers first so the round only sees earlier atoms.
        let mut triggers: Vec<(usize, Vec<ElemId>, Vec<AtomId>)> = Vec::new();
        for (ri, comp) in self.compiled.iter().enumerate() {
            let Some(comp) = comp else { continue };
            let mut found: Vec<(Vec<AtomId>, Vec<ElemId>)> = Vec::new();
            if comp.body.is_empty() {
                if round == 1 {
                    found.push((Vec::new(), Vec::new()));
                }
            } else {
                for k in 0..comp.body.len() {
                    let pat = &comp.body[k];
                    let delta: Vec<AtomId> = self
                        .facts
                        .with_pred(pat.pred)
                        .iter()
                        .copied()
                        .filter(|a| a.index() >= delta_start && a.index() < delta_end)
                        .collect();
                    for d in delta {
                        let mut binding = vec![None; comp.n_body_vars];
                        if !bind(pat, self.facts.get(d), &mut binding) {
                            continue;
                        }
                        let rest: Vec<PatternAtom> =
                            comp.body.iter().enumerate().filter(|&(j, _)| j != k).map(|(_, p)| p.clone()).collect();
                        let _ = for_each_match(&self.facts, &rest, &mut binding, &mut |b, ids| {
                            let mut prem = ids.to_vec();
                            prem.insert(k, d);
                            // Count each match once: earlier atoms must be older than the delta.
                            if prem[..k].iter().all(|p| p.index() < delta_start) {
                                found.push((prem, b.iter().map(|e| e.unwrap()).collect()));
                            }
                            std::ops::ControlFlow::Continue(())
                        });
                    }
                }
            }
            found.sort();
            found.dedup();
            found.retain(|(p, _)| keep(&self.facts, ri, p));
            triggers.extend(found.into_iter().map(|(p, b)| (ri, b, p)));
        }

        let atom_mark = self.facts.len();
        let elem_mark = self.elements.len();
        let mut new_keys = Vec::new();
        for (ri, binding, premises) in triggers {
            if let Err(e) = self.apply(ri, &binding, premises, round, &mut new_keys) {
                self.rollback(atom_mark, elem_mark, &new_keys);
                return Err(e);
            }
        }
        self.rounds = round;
        self.round_start.push(atom_mark);
        Ok(self.facts.len() > atom_mark)
    }

    fn rollback(&mut self, atoms: usize, elems: usize, keys: &[(PredId, Vec<KeyArg>)]) {
        self.facts.truncate(atoms);
        self.meta.truncate(atoms);
        self.elements.truncate(elems);
        for k in keys {
            self.witnesses.remove(k);
        }
    }

    /// Fires rule `ri` under `binding`; returns the head atom.
    fn apply(
        &mut self,
        ri: usize,
        binding: &[ElemId],
        premises: Vec<AtomId>,
        round: u32,
        new_keys: &mut Vec<(PredId, Vec<KeyArg>)>,
    ) -> Result<AtomId, ChaseError> {
        let comp = self.compiled[ri].as_ref().expect("compiled rule");
        let head_pred = comp.head_pred;
        let mut nulls: Vec<ElemId> = Vec::new();
        let mut created = false;
        if comp.n_exist > 0 {
            let key: Vec<KeyArg> = comp
                .head
                .iter()
                .map(|h| match *h {
                    HeadArg::Body(s) => KeyArg::Elem(binding[s]),
                    HeadArg::Exist(x) => KeyArg::Exist(x),
                    HeadArg::Elem(e) => KeyArg::Elem(e),
                })
                .collect();
            let key = (head_pred, key);
            if let Some(w) = self.witnesses.get(&key) {
                nulls = w.clone();
            } else {
                let n_exist = comp.n_exist;
                if self.elements.len() + n_exist > self.config.max_elements {
                    return Err(ChaseError::Budget { limit: self.config.max_elements, round });
                }
                let parents: Vec<ElemId> = comp
                    .head
                    .iter()
                    .filter_map(|h| match *h {
                        HeadArg::Body(s) => Some(binding[s]),
                        HeadArg::Elem(e) => Some(e),
                        HeadArg::Exist(_) => None,
                    })
                    .collect();
                let depth = parents.iter().map(|p| self.elements[p.index()].depth + 1).max().unwrap_or(0);
                for _ in 0..n_exist {
                    nulls.push(ElemId(self.elements.len() as u32));
                    self.elements.push(Element {
                        birth_rule: Some(ri),
                        parents: parents.clone(),
                        birth_atom: None,
                        depth,
                        constant: None,
                    });
                }
                self.witnesses.insert(key.clone(), nulls.clone());
                new_keys.push(key);
                created = true;
            }
        }
        let comp = self.compiled[ri].as_ref().unwrap();
        let args: Vec<ElemId> = comp
            .head
            .iter()
            .map(|h| match *h {
                HeadArg::Body(s) => binding[s],
                HeadArg::Exist(x) => nulls[x as usize],
                HeadArg::Elem(e) => e,
            })
            .collect();
        let (id, new) = self.facts.insert(GroundAtom::new(head_pred, args));
        if new {
            self.meta.push(AtomMeta { round, rule: Some(ri), premises });
            if created {
                for &n in &nulls {
                    self.elements[n.index()].birth_atom = Some(id);
                }
            } else if self.program.annotated && self.program.signature.role(head_pred) == Role::Parenthood {
                let atom = self.facts.get(id);
                if let Some(&child) = atom.args.first() {
                    if self.elements[child.index()].birth_atom != Some(id) {
                        return Err(ChaseError::SecondParenthoodAtom {
                            elem: self.elem_name(child),
                            atom: self.display(id),
                        });
                    }
                }
            }
        }
        Ok(id)
    }

    pub fn elem_name(&self, e: ElemId) -> String {
        match &self.elements[e.index()].constant {
            Some(c) => c.0.clone(),
            None => e.to_string(),
        }
    }

    pub fn display_ground(&self, a: &GroundAtom) -> String {
        let name = self.program.signature.name(a.pred);
        if a.args.is_empty() {
            return name.to_string();
        }
        let args: Vec<String> = a.args.iter().map(|&e| self.elem_name(e)).collect();
        format!("{name}({})", args.join(","))
    }

    pub fn display(&self, id: AtomId) -> String {
        self.display_ground(self.facts.get(id))
    }

    /// One line per atom in derivation order: `round | atom | rule | premises`.
    /// Rules are numbered from 1; database atoms show `-`.
    pub fn trace(&self) -> String {
        let mut out = String::new();
        for (id, _) in self.facts.iter() {
            let m = &self.meta[id.index()];
            let round = if m.round == REBASE_ROUND { "rebase".to_string() } else { m.round.to_string() };
            let rule = m.rule.map_or("-".to_string(), |r| (r + 1).to_string());
            let prem: Vec<String> = m.premises.iter().map(|&p| self.display(p)).collect();
            let _ = writeln!(out, "{round} | {} | {rule} | {}", self.display(id), prem.join(" "));
        }
        out
    }

    /// The parenthood atom of `e`: the atom that created it.
    pub fn parenthood_atom(&self, e: ElemId) -> Option<AtomId> {
        self.elements[e.index()].birth_atom
    }

    pub fn parenthood_pred(&self, e: ElemId) -> Option<PredId> {
        self.parenthood_atom(e).map(|a| self.facts.get(a).pred)
    }

    /// Elements with the same parenthood predicate (constants only to themselves).
    pub fn equiv0(&self, a: ElemId, b: ElemId) -> bool {
        match (self.parenthood_pred(a), self.parenthood_pred(b)) {
            (Some(p), Some(q)) => p == q,
            _ => a == b,
        }
    }

    /// Parents of `e` as they appear in its parenthood atom (positions 2..).
    pub fn parents(&self, e: ElemId) -> &[ElemId] {
        &self.elements[e.index()].parents
    }

    /// Returns `A(older)` for an atom `A` whose pattern has `older <_F younger`,
    /// checking that it sits at the addressed position of the parenthood atom of
    /// `A(younger)`.
    pub fn ancestor_by_address(&self, atom: AtomId, younger: usize, older: usize) -> Result<ElemId, String> {
        let a = self.facts.get(atom);
        let sig = &self.program.signature;
        let pat = sig.pattern(a.pred).ok_or_else(|| format!("{} carries no pattern", sig.name(a.pred)))?;
        let addr = pat
            .address(older, younger)
            .ok_or_else(|| format!("positions {} and {} are not ordered in {}", older + 1, younger + 1, sig.name(a.pred)))?;
        let (y, o) = (a.args[younger], a.args[older]);
        let pp = self.parenthood_atom(y).ok_or_else(|| format!("{} has no parenthood atom", self.elem_name(y)))?;
        let r = self.facts.get(pp);
        match r.args.get(addr) {
            Some(&x) if x == o => Ok(o),
            other => Err(format!(
                "{}: position {} holds {}, but the parenthood atom {} has {:?} at position {}",
                self.display(atom),
                older + 1,
                self.elem_name(o),
                self.display(pp),
                other.map(|&x| self.elem_name(x)),
                addr + 1
            )),
        }
    }

    /// Checks every comparable position pair of every atom against the
    /// parenthood atoms; returns the failures.
    pub fn check_addresses(&self) -> Vec<String> {
        let sig = &self.program.signature;
        let mut bad = Vec::new();
        for (id, a) in self.facts.iter() {
            let Some(pat) = sig.pattern(a.pred) else { continue };
            for &(o, y) in pat.addresses().keys() {
                if let Err(e) = self.ancestor_by_address(id, y, o) {
                    bad.push(e);
                }
                if !self.parents(a.args[y]).contains(&a.args[o]) {
                    bad.push(format!("{}: position {} is not a parent of position {}", self.display(id), o + 1, y + 1));
                }
            }
        }
        bad
    }

    /// Checks that every null has exactly one parenthood atom: its birth atom.
    pub fn check_unique_parenthood(&self) -> Vec<String> {
        let sig = &self.program.signature;
        let mut bad = Vec::new();
        for (id, a) in self.facts.iter() {
            if sig.role(a.pred) != Role::Parenthood {
                continue;
            }
            match a.args.first() {
                Some(&c) if self.parenthood_atom(c) == Some(id) => {}
                _ => bad.push(format!("{} is not the birth atom of its first element", self.display(id))),
            }
        }
        for (i, e) in self.elements.iter().enumerate() {
            if e.constant.is_none() && e.birth_atom.is_none() {
                bad.push(format!("n{i} has no birth atom"));
            }
        }
        bad
    }
}

fn bind(pat: &PatternAtom, atom: &GroundAtom, binding: &mut [Option<ElemId>]) -> bool {
    for (s, &e) in pat.args.iter().zip(atom.args.iter()) {
        match *s {
            Slot::Elem(f) if f != e => return false,
            Slot::Elem(_) => {}
            Slot::Var(v) => match binding[v] {
                Some(f) if f != e => return false,
                _ => binding[v] = Some(e),
            },
        }
    }
    true
}

/// Chases `program` from the empty database for `depth` rounds.
pub fn chase(program: Arc<Program>, depth: u32, config: ChaseConfig) -> Result<ChaseInstance, ChaseError> {
    let mut inst = ChaseInstance::new(program, config);
    inst.run_to(depth)?;
    Ok(inst)
}
