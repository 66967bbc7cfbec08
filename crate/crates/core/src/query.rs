//! Conjunctive queries over chases and finite structures: evaluation, the
//! derivation order between query variables, and normal forms of queries over
//! parenthood predicates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rustc_hash::FxHashSet;

use crate::chase::ChaseInstance;
use crate::facts::{compile_atoms, find_match, FactIndex};
use crate::quotient::{EquivCache, FiniteStructure};
use crate::syntax::{Atom, Const, Cq, ElemId, PredId, Program, Role, Shape, Signature, Term, Ucq, Var};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum QueryError {
    #[error("predicate `{0}` carries no family pattern")]
    NotAnnotated(String),
    #[error("atom over `{0}` is not a parenthood atom")]
    NotParenthood(String),
    #[error("query is cyclic")]
    Cyclic,
    #[error("query contains constants")]
    Constants,
    #[error("more than {0} parenthood choices")]
    Budget(usize),
}

pub type Witness = Vec<(Var, ElemId)>;

/// Searches a homomorphism from `cq` into `index`.
pub fn eval_cq_index(index: &FactIndex, cq: &Cq, resolve: &dyn Fn(&Const) -> Option<ElemId>) -> Option<Witness> {
    let mut vars = Vec::new();
    let pattern = compile_atoms(cq.atoms(), &mut vars, resolve)?;
    let mut binding = vec![None; vars.len()];
    let (found, _) = find_match(index, &pattern, &mut binding)?;
    Some(vars.into_iter().zip(found.into_iter().map(Option::unwrap)).collect())
}

pub fn eval_cq_chase(inst: &ChaseInstance, cq: &Cq) -> Option<Witness> {
    eval_cq_index(inst.facts(), cq, &|c| inst.constant(c))
}

pub fn eval_cq_structure(s: &FiniteStructure, cq: &Cq) -> Option<Witness> {
    eval_cq_index(&s.index(), cq, &|c| s.constant(c))
}

/// First satisfied disjunct with its witness.
pub fn eval_ucq_chase(inst: &ChaseInstance, q: &Ucq) -> Option<(usize, Witness)> {
    q.disjuncts.iter().enumerate().find_map(|(i, d)| eval_cq_chase(inst, d).map(|w| (i, w)))
}

pub fn eval_ucq_structure(s: &FiniteStructure, q: &Ucq) -> Option<(usize, Witness)> {
    let idx = s.index();
    q.disjuncts.iter().enumerate().find_map(|(i, d)| eval_cq_index(&idx, d, &|c| s.constant(c)).map(|w| (i, w)))
}

/// Checks that `witness` maps every atom of `cq` into `index`.
pub fn check_witness(index: &FactIndex, cq: &Cq, witness: &Witness, resolve: &dyn Fn(&Const) -> Option<ElemId>) -> bool {
    let map: BTreeMap<&Var, ElemId> = witness.iter().map(|(v, e)| (v, *e)).collect();
    cq.atoms().iter().all(|a| {
        let args: Option<Vec<ElemId>> = a
            .args
            .iter()
            .map(|t| match t {
                Term::Var(v) => map.get(v).copied(),
                Term::Const(c) => resolve(c),
                Term::Null(e) => Some(*e),
            })
            .collect();
        args.is_some_and(|args| index.contains(&crate::facts::GroundAtom::new(a.pred, args)))
    })
}

/// Searches an assignment of chase atoms to the query atoms such that
/// occurrences of the same variable get `≡ₙ`-equivalent elements.
pub fn n_evaluation_exists(inst: &ChaseInstance, cq: &Cq, n: usize) -> bool {
    if cq.atoms().iter().any(|a| a.args.iter().any(|t| !matches!(t, Term::Var(_)))) {
        return false;
    }
    let mut cache = EquivCache::default();
    let mut reps: BTreeMap<Var, ElemId> = BTreeMap::new();
    n_eval_rec(inst, cq.atoms(), 0, n, &mut reps, &mut cache)
}

fn n_eval_rec(
    inst: &ChaseInstance,
    atoms: &[Atom],
    k: usize,
    n: usize,
    reps: &mut BTreeMap<Var, ElemId>,
    cache: &mut EquivCache,
) -> bool {
    let Some(a) = atoms.get(k) else { return true };
    for &id in inst.facts().with_pred(a.pred) {
        let g = inst.atom(id);
        let mut added = Vec::new();
        let mut ok = true;
        for (t, &e) in a.args.iter().zip(g.args.iter()) {
            let Term::Var(v) = t else { unreachable!() };
            match reps.get(v) {
                Some(&r) => {
                    if !cache.equiv(inst, r, e, n) {
                        ok = false;
                        break;
                    }
                }
                None => {
                    reps.insert(v.clone(), e);
                    added.push(v.clone());
                }
            }
        }
        if ok && n_eval_rec(inst, atoms, k + 1, n, reps, cache) {
            return true;
        }
        for v in added {
            reps.remove(&v);
        }
    }
    false
}

/// The transitive relation `x →* y` between query variables: some atom holds
/// `y` at a position older than the position of `x`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DerivesOrder {
    pub vars: Vec<Var>,
    reach: Vec<Vec<bool>>,
}

impl DerivesOrder {
    fn idx(&self, v: &Var) -> Option<usize> {
        self.vars.iter().position(|w| w == v)
    }

    /// `x →* y`: `y` is strictly below `x`.
    pub fn derives(&self, x: &Var, y: &Var) -> bool {
        match (self.idx(x), self.idx(y)) {
            (Some(i), Some(j)) => self.reach[i][j],
            _ => false,
        }
    }

    pub fn is_cyclic(&self) -> bool {
        (0..self.vars.len()).any(|i| self.reach[i][i])
    }
}

fn pattern_of<'a>(sig: &'a Signature, a: &Atom) -> Result<&'a crate::family::FamilyPattern, QueryError> {
    sig.pattern(a.pred).ok_or_else(|| QueryError::NotAnnotated(sig.name(a.pred).to_string()))
}

fn var_at(a: &Atom, i: usize) -> Option<&Var> {
    match &a.args[i] {
        Term::Var(v) => Some(v),
        _ => None,
    }
}

pub fn derives_order(cq: &Cq, sig: &Signature) -> Result<DerivesOrder, QueryError> {
    let vars = cq.vars();
    let n = vars.len();
    let pos = |v: &Var| vars.iter().position(|w| w == v).unwrap();
    let mut reach = vec![vec![false; n]; n];
    for a in cq.atoms() {
        let pat = pattern_of(sig, a)?;
        for &(older, younger) in pat.addresses().keys() {
            if let (Some(y), Some(x)) = (var_at(a, older), var_at(a, younger)) {
                reach[pos(x)][pos(y)] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    Ok(DerivesOrder { vars, reach })
}

pub fn is_cyclic(cq: &Cq, sig: &Signature) -> Result<bool, QueryError> {
    Ok(derives_order(cq, sig)?.is_cyclic())
}

fn check_parenthood_only(cq: &Cq, sig: &Signature) -> Result<(), QueryError> {
    for a in cq.atoms() {
        if a.args.iter().any(|t| !matches!(t, Term::Var(_))) {
            return Err(QueryError::Constants);
        }
        if sig.role(a.pred) != Role::Parenthood {
            return Err(QueryError::NotParenthood(sig.name(a.pred).to_string()));
        }
        pattern_of(sig, a)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QueryRoles {
    pub order: DerivesOrder,
    pub masters: BTreeSet<Var>,
    pub serfs: BTreeSet<Var>,
    /// Serf -> the masters it is a serf of.
    pub owners: BTreeMap<Var, Vec<Var>>,
    /// Per atom, its maximal master positions (0-based).
    pub maximal_masters: Vec<BTreeSet<usize>>,
}

pub fn roles(cq: &Cq, sig: &Signature) -> Result<QueryRoles, QueryError> {
    check_parenthood_only(cq, sig)?;
    let order = derives_order(cq, sig)?;
    if order.is_cyclic() {
        return Err(QueryError::Cyclic);
    }
    let masters: BTreeSet<Var> = cq.atoms().iter().filter_map(|a| var_at(a, 0).cloned()).collect();
    let serfs: BTreeSet<Var> = order.vars.iter().filter(|v| !masters.contains(*v)).cloned().collect();
    let mut owners = BTreeMap::new();
    for y in &serfs {
        let above: Vec<&Var> = masters.iter().filter(|x| order.derives(x, y)).collect();
        let minimal: Vec<Var> = above
            .iter()
            .filter(|x| !above.iter().any(|z| z != *x && order.derives(x, z)))
            .map(|x| (*x).clone())
            .collect();
        owners.insert(y.clone(), minimal);
    }
    let mut maximal_masters = Vec::new();
    for a in cq.atoms() {
        let pat = pattern_of(sig, a)?;
        let set = (1..a.args.len())
            .filter(|&i| {
                masters.contains(var_at(a, i).unwrap())
                    && (1..a.args.len()).all(|j| !pat.is_older(i, j) || serfs.contains(var_at(a, j).unwrap()))
            })
            .collect();
        maximal_masters.push(set);
    }
    Ok(QueryRoles { order, masters, serfs, owners, maximal_masters })
}

/// Which normal-form condition fails, with the offending atoms (0-based).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NormalFormViolation {
    /// Atom `other` holds `x` at `pos` but disagrees at `older` with the
    /// parenthood atom `parent` of `x`.
    Ancestors { parent: usize, other: usize, pos: usize, older: usize },
    /// A serf has two masters.
    SharedSerf { serf: Var, masters: Vec<Var> },
    /// A variable repeats at a position possibly younger than the maximal masters.
    Repeated { atom: usize, pos: usize, other: usize },
}

impl NormalFormViolation {
    pub fn condition(&self) -> &'static str {
        match self {
            NormalFormViolation::Ancestors { .. } => "i",
            NormalFormViolation::SharedSerf { .. } => "ii",
            NormalFormViolation::Repeated { .. } => "iii",
        }
    }
}

impl fmt::Display for NormalFormViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NormalFormViolation::Ancestors { parent, other, pos, older } => write!(
                f,
                "(i) atom {} disagrees with parenthood atom {} at position {} above position {}",
                other + 1,
                parent + 1,
                older + 1,
                pos + 1
            ),
            NormalFormViolation::SharedSerf { serf, masters } => {
                let m: Vec<&str> = masters.iter().map(|v| v.0.as_str()).collect();
                write!(f, "(ii) {} is a serf of {}", serf.0, m.join(", "))
            }
            NormalFormViolation::Repeated { atom, pos, other } => {
                write!(f, "(iii) atom {} repeats position {} at position {}", atom + 1, pos + 1, other + 1)
            }
        }
    }
}

/// First violation of condition (i), scanning parenthood atoms, then other
/// atoms, then positions in ascending order.
fn first_ancestor_violation(cq: &Cq, sig: &Signature) -> Result<Option<(usize, usize, usize, usize, usize)>, QueryError> {
    let atoms = cq.atoms();
    for (pi, p) in atoms.iter().enumerate() {
        let x = var_at(p, 0).unwrap();
        let ppat = pattern_of(sig, p)?;
        for (ri, r) in atoms.iter().enumerate() {
            if ri == pi {
                continue;
            }
            let rpat = pattern_of(sig, r)?;
            for i in 0..r.args.len() {
                if var_at(r, i) != Some(x) {
                    continue;
                }
                for j in 0..r.args.len() {
                    if !rpat.is_older(j, i) {
                        continue;
                    }
                    let addr = rpat.address(j, i).unwrap();
                    if addr >= p.args.len() || ppat.len() != p.args.len() {
                        continue;
                    }
                    if r.args[j] != p.args[addr] {
                        return Ok(Some((pi, ri, i, j, addr)));
                    }
                }
            }
        }
    }
    Ok(None)
}

pub fn normal_form_violations(cq: &Cq, sig: &Signature) -> Result<Vec<NormalFormViolation>, QueryError> {
    let r = roles(cq, sig)?;
    let atoms = cq.atoms();
    let mut out = Vec::new();
    for (pi, p) in atoms.iter().enumerate() {
        let x = var_at(p, 0).unwrap();
        for (ri, rr) in atoms.iter().enumerate() {
            if ri == pi {
                continue;
            }
            let rpat = pattern_of(sig, rr)?;
            for i in 0..rr.args.len() {
                if var_at(rr, i) != Some(x) {
                    continue;
                }
                for j in 0..rr.args.len() {
                    if rpat.is_older(j, i) {
                        let addr = rpat.address(j, i).unwrap();
                        if p.args.get(addr) != Some(&rr.args[j]) {
                            out.push(NormalFormViolation::Ancestors { parent: pi, other: ri, pos: i, older: j });
                        }
                    }
                }
            }
        }
    }
    for (serf, masters) in &r.owners {
        if masters.len() > 1 {
            out.push(NormalFormViolation::SharedSerf { serf: serf.clone(), masters: masters.clone() });
        }
    }
    for (ai, a) in atoms.iter().enumerate() {
        let pat = pattern_of(sig, a)?;
        let py = pat.ordering().py_set(&r.maximal_masters[ai]).expect("positions in range");
        for &i in &py {
            for j in 0..a.args.len() {
                if j != i && a.args[i] == a.args[j] && (j > i || !py.contains(&j)) {
                    out.push(NormalFormViolation::Repeated { atom: ai, pos: i, other: j });
                }
            }
        }
    }
    Ok(out)
}

pub fn is_normal_form(cq: &Cq, sig: &Signature) -> Result<bool, QueryError> {
    Ok(normal_form_violations(cq, sig)?.is_empty())
}

/// Identifies, for every `j` older than `i` in atom `r`, the variable `r[j]`
/// with the variable at the matching address of atom `p`. Variables of `r` are
/// replaced by those of `p`. Returns the query and the substitution applied.
pub fn unify_step(cq: &Cq, sig: &Signature, p: usize, r: usize, i: usize) -> Result<(Cq, BTreeMap<Var, Var>), QueryError> {
    let mut atoms: Vec<Atom> = cq.atoms().to_vec();
    let rpat = pattern_of(sig, &atoms[r])?.clone();
    let mut subst: BTreeMap<Var, Var> = BTreeMap::new();
    for j in 0..atoms[r].args.len() {
        if !rpat.is_older(j, i) {
            continue;
        }
        let addr = rpat.address(j, i).unwrap();
        let (Some(from), Some(to)) = (var_at(&atoms[r], j).cloned(), atoms[p].args.get(addr).and_then(|_| var_at(&atoms[p], addr)).cloned())
        else {
            continue;
        };
        if from == to {
            continue;
        }
        for a in atoms.iter_mut() {
            for t in a.args.iter_mut() {
                if *t == Term::Var(from.clone()) {
                    *t = Term::Var(to.clone());
                }
            }
        }
        for v in subst.values_mut() {
            if *v == from {
                *v = to.clone();
            }
        }
        subst.insert(from, to);
    }
    Ok((Cq::new(atoms), subst))
}

/// Parenthood predicates whose child may occupy each position of each
/// predicate in some chase of `program`.
pub fn birth_predicates(program: &Program) -> BTreeMap<(PredId, usize), BTreeSet<PredId>> {
    let mut sets: BTreeMap<(PredId, usize), BTreeSet<PredId>> = BTreeMap::new();
    let mut changed = true;
    while changed {
        changed = false;
        for r in &program.rules {
            let head = &r.head;
            for (p, t) in head.args.iter().enumerate() {
                let Term::Var(v) = t else { continue };
                let add: BTreeSet<PredId> = if r.existentials.contains(v) {
                    if r.shape == Shape::Parenthood || program.signature.role(head.pred) == Role::Parenthood {
                        [head.pred].into()
                    } else {
                        BTreeSet::new()
                    }
                } else {
                    let mut s = BTreeSet::new();
                    for b in &r.body {
                        for (q, u) in b.args.iter().enumerate() {
                            if u == t {
                                if let Some(src) = sets.get(&(b.pred, q)) {
                                    s.extend(src.iter().copied());
                                }
                            }
                        }
                    }
                    s
                };
                let entry = sets.entry((head.pred, p)).or_default();
                let before = entry.len();
                entry.extend(add);
                changed |= entry.len() != before;
            }
        }
    }
    sets
}

pub const DEFAULT_CHOICE_BUDGET: usize = 4096;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    /// Chosen parenthood predicate for each variable of the input query.
    pub choice: Vec<(Var, PredId)>,
    pub query: Cq,
    /// Image of every input variable.
    pub substitution: BTreeMap<Var, Var>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Normalized {
    pub candidates: Vec<Candidate>,
    pub discarded: Vec<(Vec<(Var, PredId)>, String)>,
}

/// Adds a parenthood atom for every variable (one choice of predicate per
/// variable, over every combination) and unifies until ancestor agreement
/// holds. Candidates that turn cyclic, give a variable two different
/// parenthood predicates, or fail a normal-form condition are discarded with a
/// reason.
pub fn normalize(cq: &Cq, program: &Program, budget: usize) -> Result<Normalized, QueryError> {
    let sig = &program.signature;
    check_parenthood_only(cq, sig)?;
    if derives_order(cq, sig)?.is_cyclic() {
        return Err(QueryError::Cyclic);
    }
    let births = birth_predicates(program);
    let vars = cq.vars();
    let mut options: Vec<Vec<PredId>> = Vec::new();
    for v in &vars {
        let mut opts: Option<BTreeSet<PredId>> = None;
        for a in cq.atoms() {
            for (i, t) in a.args.iter().enumerate() {
                if *t == Term::Var(v.clone()) {
                    let s = births.get(&(a.pred, i)).cloned().unwrap_or_default();
                    opts = Some(match opts {
                        None => s,
                        Some(o) => o.intersection(&s).copied().collect(),
                    });
                }
            }
        }
        options.push(opts.unwrap_or_default().into_iter().collect());
    }
    let total = options.iter().try_fold(1usize, |acc, o| acc.checked_mul(o.len()));
    match total {
        Some(t) if t <= budget => {}
        _ => return Err(QueryError::Budget(budget)),
    }

    let taken: FxHashSet<String> = vars.iter().map(|v| v.0.clone()).collect();
    let mut fresh_counter = 0usize;
    let mut fresh = || loop {
        fresh_counter += 1;
        let name = format!("_f{fresh_counter}");
        if !taken.contains(&name) {
            return Var(name);
        }
    };

    let mut out = Normalized { candidates: Vec::new(), discarded: Vec::new() };
    let mut idx = vec![0usize; vars.len()];
    if options.iter().any(Vec::is_empty) {
        return Ok(out);
    }
    loop {
        let choice: Vec<(Var, PredId)> = vars.iter().zip(&idx).zip(&options).map(|((v, &k), o)| (v.clone(), o[k])).collect();
        let mut atoms: Vec<Atom> = cq.atoms().to_vec();
        for (v, q) in &choice {
            let mut args = vec![Term::Var(v.clone())];
            for _ in 1..sig.arity(*q) {
                args.push(Term::Var(fresh()));
            }
            atoms.push(Atom { pred: *q, args });
        }
        match run_procedure(Cq::new(atoms), &vars, sig) {
            Ok((query, substitution)) => out.candidates.push(Candidate { choice, query, substitution }),
            Err(reason) => out.discarded.push((choice, reason)),
        }
        // Next choice vector, last variable fastest.
        let mut k = vars.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < options[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn run_procedure(mut beta: Cq, vars: &[Var], sig: &Signature) -> Result<(Cq, BTreeMap<Var, Var>), String> {
    let mut subst: BTreeMap<Var, Var> = vars.iter().map(|v| (v.clone(), v.clone())).collect();
    loop {
        if let Some(reason) = conflicting_parenthood(&beta, sig) {
            return Err(reason);
        }
        let step = first_ancestor_violation(&beta, sig).map_err(|e| e.to_string())?;
        let Some((p, r, i, _, _)) = step else { break };
        let (next, s) = unify_step(&beta, sig, p, r, i).map_err(|e| e.to_string())?;
        if next == beta {
            return Err("unification made no progress".to_string());
        }
        for v in subst.values_mut() {
            if let Some(t) = s.get(v) {
                *v = t.clone();
            }
        }
        beta = next;
    }
    match derives_order(&beta, sig) {
        Ok(o) if o.is_cyclic() => return Err("unification made the query cyclic".to_string()),
        Ok(_) => {}
        Err(e) => return Err(e.to_string()),
    }
    if let Some(reason) = conflicting_parenthood(&beta, sig) {
        return Err(reason);
    }
    match normal_form_violations(&beta, sig) {
        Ok(v) if v.is_empty() => Ok((beta, subst)),
        Ok(v) => Err(format!("not in normal form: {}", v[0])),
        Err(e) => Err(e.to_string()),
    }
}

fn conflicting_parenthood(cq: &Cq, sig: &Signature) -> Option<String> {
    let mut seen: BTreeMap<&Var, PredId> = BTreeMap::new();
    for a in cq.atoms() {
        let x = var_at(a, 0)?;
        if let Some(&q) = seen.get(x) {
            if q != a.pred {
                return Some(format!("{} is the child of both {} and {}", x.0, sig.name(q), sig.name(a.pred)));
            }
        }
        seen.insert(x, a.pred);
    }
    None
}

/// True if the image of `original` under `subst` is contained in `candidate`.
pub fn contains_image(original: &Cq, candidate: &Cq, subst: &BTreeMap<Var, Var>) -> bool {
    let image = original.substitute(|v| Term::Var(subst.get(v).cloned().unwrap_or_else(|| v.clone())));
    image.atoms().iter().all(|a| candidate.atoms().contains(a))
}
