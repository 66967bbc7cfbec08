//! Indexed sets of ground atoms and a backtracking homomorphism search over them.

use std::ops::ControlFlow;

use rustc_hash::FxHashMap;

use crate::syntax::{Atom, Const, ElemId, PredId, Rule, Term, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AtomId(pub u32);

impl AtomId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GroundAtom {
    pub pred: PredId,
    pub args: Box<[ElemId]>,
}

impl GroundAtom {
    pub fn new(pred: PredId, args: impl Into<Box<[ElemId]>>) -> Self {
        GroundAtom { pred, args: args.into() }
    }
}

/// Append-only set of ground atoms with per-predicate and per-position indexes.
#[derive(Clone, Debug, Default)]
pub struct FactIndex {
    atoms: Vec<GroundAtom>,
    ids: FxHashMap<GroundAtom, AtomId>,
    by_pred: Vec<Vec<AtomId>>,
    by_pos: FxHashMap<(PredId, u32, ElemId), Vec<AtomId>>,
}

static EMPTY: [AtomId; 0] = [];

impl FactIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Inserts `atom`, returning its id and whether it was new.
    pub fn insert(&mut self, atom: GroundAtom) -> (AtomId, bool) {
        if let Some(&id) = self.ids.get(&atom) {
            return (id, false);
        }
        let id = AtomId(self.atoms.len() as u32);
        let p = atom.pred.index();
        if self.by_pred.len() <= p {
            self.by_pred.resize_with(p + 1, Vec::new);
        }
        self.by_pred[p].push(id);
        for (i, &e) in atom.args.iter().enumerate() {
            self.by_pos.entry((atom.pred, i as u32, e)).or_default().push(id);
        }
        self.ids.insert(atom.clone(), id);
        self.atoms.push(atom);
        (id, true)
    }

    pub fn get(&self, id: AtomId) -> &GroundAtom {
        &self.atoms[id.index()]
    }

    pub fn lookup(&self, atom: &GroundAtom) -> Option<AtomId> {
        self.ids.get(atom).copied()
    }

    pub fn contains(&self, atom: &GroundAtom) -> bool {
        self.ids.contains_key(atom)
    }

    pub fn iter(&self) -> impl Iterator<Item = (AtomId, &GroundAtom)> {
        self.atoms.iter().enumerate().map(|(i, a)| (AtomId(i as u32), a))
    }

    pub fn with_pred(&self, pred: PredId) -> &[AtomId] {
        self.by_pred.get(pred.index()).map(Vec::as_slice).unwrap_or(&EMPTY)
    }

    pub fn with_arg(&self, pred: PredId, pos: usize, elem: ElemId) -> &[AtomId] {
        self.by_pos.get(&(pred, pos as u32, elem)).map(Vec::as_slice).unwrap_or(&EMPTY)
    }

    /// Drops every atom with id ≥ `len`.
    pub fn truncate(&mut self, len: usize) {
        while self.atoms.len() > len {
            let atom = self.atoms.pop().unwrap();
            let id = AtomId(self.atoms.len() as u32);
            self.ids.remove(&atom);
            self.by_pred[atom.pred.index()].pop();
            for (i, &e) in atom.args.iter().enumerate() {
                let key = (atom.pred, i as u32, e);
                let list = self.by_pos.get_mut(&key).unwrap();
                debug_assert_eq!(list.last(), Some(&id));
                list.pop();
                if list.is_empty() {
                    self.by_pos.remove(&key);
                }
            }
        }
    }
}

/// Argument of a pattern atom: a variable slot or a fixed element.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Slot {
    Var(usize),
    Elem(ElemId),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PatternAtom {
    pub pred: PredId,
    pub args: Vec<Slot>,
}

/// Enumerates homomorphisms from `pattern` into `index`.
///
/// `binding` holds the partial assignment of variable slots and is restored on
/// return. At each step the unmatched atom with the fewest candidates is
/// expanded (ties broken by pattern order), so the enumeration order is
/// deterministic. `visit` receives the full binding and the matched atom ids in
/// pattern order.
pub fn for_each_match<F>(
    index: &FactIndex,
    pattern: &[PatternAtom],
    binding: &mut [Option<ElemId>],
    visit: &mut F,
) -> ControlFlow<()>
where
    F: FnMut(&[Option<ElemId>], &[AtomId]) -> ControlFlow<()>,
{
    let mut matched = vec![None; pattern.len()];
    search(index, pattern, binding, &mut matched, visit)
}

fn candidates<'a>(index: &'a FactIndex, atom: &PatternAtom, binding: &[Option<ElemId>]) -> &'a [AtomId] {
    let mut best = index.with_pred(atom.pred);
    for (i, s) in atom.args.iter().enumerate() {
        let e = match *s {
            Slot::Elem(e) => Some(e),
            Slot::Var(v) => binding[v],
        };
        if let Some(e) = e {
            let c = index.with_arg(atom.pred, i, e);
            if c.len() < best.len() {
                best = c;
            }
        }
    }
    best
}

fn search<F>(
    index: &FactIndex,
    pattern: &[PatternAtom],
    binding: &mut [Option<ElemId>],
    matched: &mut Vec<Option<AtomId>>,
    visit: &mut F,
) -> ControlFlow<()>
where
    F: FnMut(&[Option<ElemId>], &[AtomId]) -> ControlFlow<()>,
{
    let mut pick: Option<(usize, &[AtomId])> = None;
    for (i, atom) in pattern.iter().enumerate() {
        if matched[i].is_some() {
            continue;
        }
        let c = candidates(index, atom, binding);
        if pick.is_none_or(|(_, b)| c.len() < b.len()) {
            pick = Some((i, c));
        }
    }
    let Some((ai, cands)) = pick else {
        let ids: Vec<AtomId> = matched.iter().map(|m| m.unwrap()).collect();
        return visit(binding, &ids);
    };
    let atom = &pattern[ai];
    let mut newly: Vec<usize> = Vec::with_capacity(atom.args.len());
    for &cid in cands {
        let ground = index.get(cid);
        newly.clear();
        let mut ok = true;
        for (s, &e) in atom.args.iter().zip(ground.args.iter()) {
            match *s {
                Slot::Elem(f) => {
                    if f != e {
                        ok = false;
                        break;
                    }
                }
                Slot::Var(v) => match binding[v] {
                    Some(f) if f != e => {
                        ok = false;
                        break;
                    }
                    Some(_) => {}
                    None => {
                        binding[v] = Some(e);
                        newly.push(v);
                    }
                },
            }
        }
        if ok {
            matched[ai] = Some(cid);
            let flow = search(index, pattern, binding, matched, visit);
            matched[ai] = None;
            if flow.is_break() {
                for &v in &newly {
                    binding[v] = None;
                }
                return flow;
            }
        }
        for &v in &newly {
            binding[v] = None;
        }
    }
    ControlFlow::Continue(())
}

/// First homomorphism found, if any.
pub fn find_match(
    index: &FactIndex,
    pattern: &[PatternAtom],
    binding: &mut [Option<ElemId>],
) -> Option<(Vec<Option<ElemId>>, Vec<AtomId>)> {
    let mut found = None;
    let _ = for_each_match(index, pattern, binding, &mut |b, ids| {
        found = Some((b.to_vec(), ids.to_vec()));
        ControlFlow::Break(())
    });
    found
}

/// Compiles `atoms` into pattern atoms, numbering variables through `vars`
/// (existing entries keep their slot). Returns `None` if a constant cannot be
/// resolved, in which case the atoms cannot match anything.
pub fn compile_atoms(
    atoms: &[Atom],
    vars: &mut Vec<Var>,
    resolve: &dyn Fn(&Const) -> Option<ElemId>,
) -> Option<Vec<PatternAtom>> {
    let mut out = Vec::with_capacity(atoms.len());
    for a in atoms {
        let mut args = Vec::with_capacity(a.args.len());
        for t in &a.args {
            args.push(match t {
                Term::Var(v) => Slot::Var(match vars.iter().position(|w| w == v) {
                    Some(i) => i,
                    None => {
                        vars.push(v.clone());
                        vars.len() - 1
                    }
                }),
                Term::Const(c) => Slot::Elem(resolve(c)?),
                Term::Null(e) => Slot::Elem(*e),
            });
        }
        out.push(PatternAtom { pred: a.pred, args });
    }
    Some(out)
}

/// A body match of a rule with no head extension.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub rule: usize,
    pub binding: Vec<(Var, ElemId)>,
}

/// Body matches of `rule` (numbered `rule_index`) that do not extend to the
/// head, at most `limit` of them.
pub fn rule_violations(
    index: &FactIndex,
    rule: &Rule,
    rule_index: usize,
    resolve: &dyn Fn(&Const) -> Option<ElemId>,
    limit: usize,
) -> Vec<Violation> {
    let mut vars = Vec::new();
    let Some(body) = compile_atoms(&rule.body, &mut vars, resolve) else {
        return Vec::new();
    };
    let n_body = vars.len();
    let head = compile_atoms(std::slice::from_ref(&rule.head), &mut vars, resolve);
    let mut out = Vec::new();
    let mut binding = vec![None; vars.len()];
    let _ = for_each_match(index, &body, &mut binding[..n_body], &mut |b, _| {
        let satisfied = match &head {
            None => false,
            Some(head) => {
                let mut full: Vec<Option<ElemId>> = b.to_vec();
                full.resize(vars.len(), None);
                find_match(index, head, &mut full).is_some()
            }
        };
        if !satisfied {
            out.push(Violation {
                rule: rule_index,
                binding: vars[..n_body].iter().cloned().zip(b.iter().map(|e| e.unwrap())).collect(),
            });
            if out.len() >= limit {
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    });
    out
}
