//! Rewriting joinless rules into the two shapes the chase works with:
//! parenthood rules `A ∧ B → ∃z S(z, args(A), args(B))` and single-atom
//! projections, with no variable repeated in any head.

use std::collections::{BTreeMap, VecDeque};

use rustc_hash::{FxHashMap, FxHashSet};

use super::FamilyError;
use crate::analysis::joinless_violations;
use crate::syntax::{Atom, Cq, PredId, Predicate, Program, Rule, Signature, Term, Ucq, Var};

/// Class index per position, classes numbered by first occurrence.
pub type Partition = Vec<usize>;

/// Result of [`canonicalize_rules`].
#[derive(Clone, Debug)]
pub struct Canonical {
    pub program: Program,
    /// For every predicate of the input: the predicates whose atoms stand for
    /// its atoms, each with the equalities it encodes. The predicate itself is
    /// always listed first with the discrete partition.
    pub equalities: BTreeMap<PredId, Vec<(PredId, Partition)>>,
    /// One line per rewritten input rule.
    pub notes: Vec<String>,
}

fn is_direct_parenthood(rule: &Rule) -> bool {
    if rule.existentials.len() != 1 || rule.body.len() > 2 {
        return false;
    }
    let mut expected = vec![Term::Var(rule.existentials[0].clone())];
    for a in &rule.body {
        expected.extend(a.args.iter().cloned());
    }
    rule.head.args == expected
}

fn vars_of(atoms: &[Atom]) -> Vec<Term> {
    atoms.iter().flat_map(|a| a.args.iter().cloned()).collect()
}

fn partition_of(args: &[Term]) -> Partition {
    let mut reps: Vec<&Term> = Vec::new();
    args.iter()
        .map(|t| match reps.iter().position(|r| *r == t) {
            Some(i) => i,
            None => {
                reps.push(t);
                reps.len() - 1
            }
        })
        .collect()
}

fn is_discrete(p: &Partition) -> bool {
    p.iter().enumerate().all(|(i, &c)| c == i)
}

fn partition_suffix(p: &Partition) -> String {
    p.iter().map(|c| (c + 1).to_string()).collect::<Vec<_>>().join("_")
}

/// Keeps the first occurrence of every term.
fn dedup_terms(args: &[Term]) -> Vec<Term> {
    let mut out: Vec<Term> = Vec::new();
    for t in args {
        if !out.contains(t) {
            out.push(t.clone());
        }
    }
    out
}

struct Builder {
    sig: Signature,
    rules: Vec<Rule>,
    notes: Vec<String>,
}

impl Builder {
    fn fresh(&mut self, base: &str, arity: usize) -> PredId {
        let name = self.sig.fresh_name(base);
        self.sig.insert(Predicate::plain(name, arity))
    }

    fn fresh_var(taken: &mut FxHashSet<Var>, base: &str) -> Var {
        let v = (0..)
            .map(|i| Var::new(if i == 0 { base.to_string() } else { format!("{base}{i}") }))
            .find(|v| !taken.contains(v))
            .unwrap();
        taken.insert(v.clone());
        v
    }

    /// Splits a rule whose head predicate cannot be a parenthood predicate into
    /// parenthood steps followed by one projection.
    fn split(&mut self, ri: usize, rule: &Rule) {
        let head_name = self.sig.name(rule.head.pred).to_string();
        let mut taken: FxHashSet<Var> = rule.body_vars().into_iter().cloned().collect();
        taken.extend(rule.existentials.iter().cloned());
        let mut atoms = rule.body.clone();
        let mut steps = Vec::new();
        let mut step = 0;
        while atoms.len() > 2 {
            step += 1;
            let u = Self::fresh_var(&mut taken, "u");
            let mut args = vec![Term::Var(u)];
            args.extend(vars_of(&atoms[..2]));
            let j = self.fresh(&format!("{head_name}$j{ri}_{step}"), args.len());
            let head = Atom::new(j, args);
            let r = Rule::new(atoms[..2].to_vec(), head.clone());
            steps.push(self.sig.name(j).to_string());
            self.rules.push(r);
            atoms.splice(..2, [head]);
        }
        let mut exist: VecDeque<Var> = rule.existentials.iter().cloned().collect();
        let needs_step = !exist.is_empty() || atoms.len() != 1;
        if needs_step {
            let (z, base) = match exist.pop_front() {
                Some(z) => (z, format!("{head_name}$e{ri}_1")),
                None => (Self::fresh_var(&mut taken, "u"), format!("{head_name}$p{ri}")),
            };
            let mut args = vec![Term::Var(z)];
            args.extend(vars_of(&atoms));
            let x = self.fresh(&base, args.len());
            let head = Atom::new(x, args);
            self.rules.push(Rule::new(atoms, head.clone()));
            steps.push(self.sig.name(x).to_string());
            atoms = vec![head];
            let mut t = 1;
            while let Some(z) = exist.pop_front() {
                t += 1;
                let mut args = vec![Term::Var(z)];
                args.extend(atoms[0].args.iter().cloned());
                let x = self.fresh(&format!("{head_name}$e{ri}_{t}"), args.len());
                let head = Atom::new(x, args);
                self.rules.push(Rule::new(atoms, head.clone()));
                steps.push(self.sig.name(x).to_string());
                atoms = vec![head];
            }
        }
        self.rules.push(Rule::new(atoms, rule.head.clone()));
        self.notes.push(format!("rule {}: split through {}", ri + 1, steps.join(", ")));
    }
}

/// Rewrites a joinless, constant-free program into parenthood and projection
/// rules with duplicate-free heads.
///
/// A predicate stays a parenthood predicate when every rule deriving it
/// already has the parenthood shape; any other predicate becomes a projection
/// predicate and its rules are routed through fresh parenthood predicates.
/// Heads repeating a variable are replaced by fresh predicates of smaller
/// arity, one per equality pattern, closed under the rules that consume them.
pub fn canonicalize_rules(program: &Program) -> Result<Canonical, FamilyError> {
    let joins = joinless_violations(program);
    if !joins.is_empty() {
        return Err(FamilyError::NotJoinless(joins));
    }
    for (ri, r) in program.rules.iter().enumerate() {
        if r.constants().next().is_some() {
            return Err(FamilyError::Constants(ri));
        }
    }
    for (_, p) in program.signature.iter() {
        if p.name.contains('#') || p.name.contains('$') {
            return Err(FamilyError::ReservedName(p.name.clone()));
        }
    }

    let mut b = Builder { sig: program.signature.clone(), rules: Vec::new(), notes: Vec::new() };
    let mut parenthood_ok: FxHashMap<PredId, bool> = FxHashMap::default();
    for r in &program.rules {
        let ok = parenthood_ok.entry(r.head.pred).or_insert(true);
        *ok &= is_direct_parenthood(r);
    }
    for (ri, r) in program.rules.iter().enumerate() {
        let keep = if parenthood_ok[&r.head.pred] {
            true
        } else {
            r.existentials.is_empty() && r.body.len() == 1
        };
        if keep {
            b.rules.push(r.clone());
        } else {
            b.split(ri, r);
        }
    }

    let (rules, variants) = close_equalities(&mut b.sig, b.rules);
    for (pred, vs) in &variants {
        for (v, _) in vs.iter().skip(1) {
            b.notes.push(format!("{} stands for {} with equal arguments", b.sig.name(*v), b.sig.name(*pred)));
        }
    }
    let mut equalities = BTreeMap::new();
    for id in program.signature.ids() {
        let ar = program.signature.arity(id);
        let list = variants.get(&id).cloned().unwrap_or_else(|| vec![(id, (0..ar).collect())]);
        equalities.insert(id, list);
    }
    Ok(Canonical { program: Program::new(b.sig, rules), equalities, notes: b.notes })
}

type Variants = BTreeMap<PredId, Vec<(PredId, Partition)>>;

/// Removes repeated head variables by introducing equality variants.
fn close_equalities(sig: &mut Signature, base: Vec<Rule>) -> (Vec<Rule>, Variants) {
    let mut variants: Variants = BTreeMap::new();
    let mut out: Vec<Rule> = Vec::new();
    let mut seen: FxHashSet<(usize, Vec<usize>)> = FxHashSet::default();
    let mut queue: VecDeque<PredId> = VecDeque::new();

    fn variant(sig: &mut Signature, variants: &mut Variants, queue: &mut VecDeque<PredId>, pred: PredId, p: &Partition) -> PredId {
        let list = variants
            .entry(pred)
            .or_insert_with(|| vec![(pred, (0..p.len()).collect())]);
        if let Some((v, _)) = list.iter().find(|(_, q)| q == p) {
            return *v;
        }
        let name = sig.fresh_name(&format!("{}$eq{}", sig.name(pred), partition_suffix(p)));
        let arity = p.iter().max().map_or(0, |m| m + 1);
        let v = sig.insert(Predicate::plain(name, arity));
        list.push((v, p.clone()));
        queue.push_back(pred);
        v
    }

    // Emits every instance of rule `ri` over the currently known variants.
    let mut emit = |ri: usize,
                    sig: &mut Signature,
                    variants: &mut Variants,
                    queue: &mut VecDeque<PredId>,
                    out: &mut Vec<Rule>| {
        let rule = &base[ri];
        let options: Vec<Vec<(PredId, Partition)>> = rule
            .body
            .iter()
            .map(|a| variants.get(&a.pred).cloned().unwrap_or_else(|| vec![(a.pred, (0..a.arity()).collect())]))
            .collect();
        let mut choice = vec![0usize; options.len()];
        loop {
            if seen.insert((ri, choice.clone())) {
                let mut subst: FxHashMap<Var, Term> = FxHashMap::default();
                let mut body = Vec::new();
                for (a, (&c, opts)) in rule.body.iter().zip(choice.iter().zip(&options)) {
                    let (vp, part) = &opts[c];
                    let mut reps: Vec<Term> = Vec::new();
                    for (t, &cls) in a.args.iter().zip(part) {
                        if cls == reps.len() {
                            reps.push(t.clone());
                        } else if let Term::Var(v) = t {
                            subst.insert(v.clone(), reps[cls].clone());
                        }
                    }
                    body.push(Atom::new(*vp, reps));
                }
                let head_args: Vec<Term> =
                    rule.head.args.iter().map(|t| t.as_var().and_then(|v| subst.get(v)).cloned().unwrap_or_else(|| t.clone())).collect();
                let part = partition_of(&head_args);
                let head = if is_discrete(&part) {
                    Atom::new(rule.head.pred, head_args)
                } else {
                    let v = variant(sig, variants, queue, rule.head.pred, &part);
                    Atom::new(v, dedup_terms(&head_args))
                };
                out.push(Rule::new(body, head));
            }
            let mut k = 0;
            loop {
                if k == choice.len() {
                    return;
                }
                choice[k] += 1;
                if choice[k] < options[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
        }
    };

    for ri in 0..base.len() {
        emit(ri, sig, &mut variants, &mut queue, &mut out);
    }
    while let Some(pred) = queue.pop_front() {
        for ri in 0..base.len() {
            if base[ri].body.iter().any(|a| a.pred == pred) {
                emit(ri, sig, &mut variants, &mut queue, &mut out);
            }
        }
    }
    (out, variants)
}

/// Rewrites a query over the input signature into one over the canonical
/// signature, expanding every atom into the disjunction of its equality variants.
pub fn rewrite_query_canonical(query: &Ucq, source: &Signature, canonical: &Canonical, budget: usize) -> Result<Ucq, FamilyError> {
    let target = &canonical.program.signature;
    let mut out = Vec::new();
    for cq in &query.disjuncts {
        let mut options: Vec<Vec<(PredId, Partition)>> = Vec::new();
        for a in cq.atoms() {
            let id = target.lookup(source.name(a.pred));
            let opts = id
                .and_then(|id| canonical.equalities.get(&id).cloned())
                .unwrap_or_default();
            options.push(opts);
        }
        if options.iter().any(Vec::is_empty) {
            continue;
        }
        let count = options.iter().try_fold(1usize, |acc, o| acc.checked_mul(o.len()));
        if count.is_none_or(|c| out.len() + c > budget) {
            return Err(FamilyError::Budget(budget));
        }
        let mut choice = vec![0usize; options.len()];
        'outer: loop {
            let mut subst: FxHashMap<Var, Term> = FxHashMap::default();
            let resolve = |t: &Term, subst: &FxHashMap<Var, Term>| -> Term {
                let mut cur = t.clone();
                while let Term::Var(v) = &cur {
                    match subst.get(v) {
                        Some(n) if n != &cur => cur = n.clone(),
                        _ => break,
                    }
                }
                cur
            };
            let mut staged = Vec::new();
            for (a, (&c, opts)) in cq.atoms().iter().zip(choice.iter().zip(&options)) {
                let (vp, part) = &opts[c];
                let mut reps: Vec<Term> = Vec::new();
                for (t, &cls) in a.args.iter().zip(part) {
                    if cls == reps.len() {
                        reps.push(t.clone());
                    } else {
                        let (x, y) = (resolve(t, &subst), resolve(&reps[cls], &subst));
                        if x != y {
                            if let Term::Var(v) = x {
                                subst.insert(v, y);
                            }
                        }
                    }
                }
                staged.push(Atom::new(*vp, reps));
            }
            let atoms = staged
                .into_iter()
                .map(|a| Atom::new(a.pred, a.args.iter().map(|t| resolve(t, &subst)).collect()));
            out.push(Cq::new(atoms));
            let mut k = 0;
            loop {
                if k == choice.len() {
                    break 'outer;
                }
                choice[k] += 1;
                if choice[k] < options[k].len() {
                    break;
                }
                choice[k] = 0;
                k += 1;
            }
        }
    }
    Ok(Ucq::new(query.name.clone(), out))
}
