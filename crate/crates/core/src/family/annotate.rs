//! Splitting canonical predicates into family-pattern variants.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rustc_hash::{FxHashMap, FxHashSet};

use super::{FamilyError, FamilyPattern};
use crate::syntax::{Atom, Cq, PredId, Predicate, Program, Role, Rule, Shape, Signature, Term, Ucq, Var};

/// Links between a canonical program and its annotated counterpart.
#[derive(Clone, Debug, Default)]
pub struct AnnotationMap {
    /// Canonical predicate → its reachable variants, in discovery order.
    pub variants: BTreeMap<PredId, Vec<PredId>>,
    /// Annotated predicate → canonical predicate it refines. Companion
    /// parenthood predicates map to the canonical predicate of their projection.
    pub origin: BTreeMap<PredId, PredId>,
    /// Projection variant → its companion parenthood predicate.
    pub companion: BTreeMap<PredId, PredId>,
    /// Maximum arity of the annotated signature.
    pub max_arity: usize,
}

impl AnnotationMap {
    pub fn is_companion(&self, pred: PredId) -> bool {
        self.companion.values().any(|&c| c == pred)
    }
}

#[derive(Clone, Debug)]
pub struct Annotated {
    pub program: Program,
    pub map: AnnotationMap,
}

fn head_projection_map(rule: &Rule) -> Result<Vec<usize>, String> {
    let body = &rule.body[0];
    rule.head
        .args
        .iter()
        .map(|t| {
            let v = t.as_var().ok_or("constant in head")?;
            body.positions_of(v).next().ok_or_else(|| format!("head variable {v} missing from body"))
        })
        .collect()
}

fn check_canonical(program: &Program) -> Result<(), FamilyError> {
    let mut roles: FxHashMap<PredId, Shape> = FxHashMap::default();
    for (ri, r) in program.rules.iter().enumerate() {
        let bad = |reason: &str| FamilyError::NonCanonical { rule: ri, reason: reason.to_string() };
        if !r.is_joinless() {
            return Err(bad("body repeats a variable"));
        }
        if r.head.has_repeated_vars() {
            return Err(bad("head repeats a variable"));
        }
        if r.constants().next().is_some() {
            return Err(bad("rule mentions a constant"));
        }
        match r.shape {
            Shape::Parenthood => {
                let mut expected = vec![Term::Var(r.existentials[0].clone())];
                for a in &r.body {
                    expected.extend(a.args.iter().cloned());
                }
                if r.head.args != expected {
                    return Err(bad("parenthood head must list the newborn and then the body arguments in order"));
                }
            }
            Shape::Projection => {}
            _ => return Err(bad("rule is neither a parenthood rule nor a projection")),
        }
        let shape = if r.shape == Shape::Parenthood { Shape::Parenthood } else { Shape::Projection };
        if let Some(prev) = roles.insert(r.head.pred, shape) {
            if prev != shape {
                return Err(bad("predicate is derived both by parenthood and by projection rules"));
            }
        }
    }
    Ok(())
}

struct State<'a> {
    source: &'a Program,
    sig: Signature,
    rules: Vec<Rule>,
    map: AnnotationMap,
    by_key: FxHashMap<(PredId, FamilyPattern), PredId>,
    queue: VecDeque<PredId>,
    /// Companion rules waiting for the rule that introduced their predicate.
    pending: Vec<Rule>,
}

impl State<'_> {
    fn variant(&mut self, canon: PredId, pattern: FamilyPattern, role: Role) -> PredId {
        if let Some(&v) = self.by_key.get(&(canon, pattern.clone())) {
            return v;
        }
        let name = format!("{}#{}", self.source.signature.name(canon), pattern.encode());
        let arity = pattern.len();
        let v = self.sig.insert(Predicate { name, arity, role, pattern: Some(pattern.clone()) });
        self.by_key.insert((canon, pattern.clone()), v);
        self.map.variants.entry(canon).or_default().push(v);
        self.map.origin.insert(v, canon);
        if role == Role::Projection {
            let child = FamilyPattern::child(Some(&pattern), None);
            let cname = format!("{}$pp#{}", self.source.signature.name(canon), child.encode());
            let c = self.sig.insert(Predicate { name: cname, arity: arity + 1, role: Role::Parenthood, pattern: Some(child) });
            self.map.origin.insert(c, canon);
            self.map.companion.insert(v, c);
            let args: Vec<Term> = (1..=arity).map(|i| Term::var(format!("x{i}"))).collect();
            let mut cargs = vec![Term::var("t")];
            cargs.extend(args.iter().cloned());
            self.pending.push(Rule::new(vec![Atom::new(v, args.clone())], Atom::new(c, cargs.clone())));
            self.pending.push(Rule::new(vec![Atom::new(c, cargs)], Atom::new(v, args)));
        }
        self.queue.push_back(v);
        v
    }

    fn push(&mut self, rule: Rule) {
        self.rules.push(rule);
        self.rules.append(&mut self.pending);
    }

    fn role_of(&self, canon: PredId, parenthood_heads: &FxHashSet<PredId>) -> Role {
        if parenthood_heads.contains(&canon) {
            Role::Parenthood
        } else {
            Role::Projection
        }
    }
}

/// Splits every predicate of a canonical program into its family-pattern
/// variants, generating only the variants reachable from the fact rules, and
/// adds a companion parenthood predicate for every projection variant.
pub fn annotate(program: &Program, max_arity: Option<usize>) -> Result<Annotated, FamilyError> {
    check_canonical(program)?;
    let parenthood_heads: FxHashSet<PredId> =
        program.rules.iter().filter(|r| r.shape == Shape::Parenthood).map(|r| r.head.pred).collect();
    let mut st = State {
        source: program,
        sig: Signature::new(),
        rules: Vec::new(),
        map: AnnotationMap::default(),
        by_key: FxHashMap::default(),
        queue: VecDeque::new(),
        pending: Vec::new(),
    };
    let mut fired: FxHashSet<(usize, Vec<PredId>)> = FxHashSet::default();

    for (ri, r) in program.rules.iter().enumerate() {
        if r.body.is_empty() {
            let role = st.role_of(r.head.pred, &parenthood_heads);
            let pattern = FamilyPattern::child(None, None);
            let h = st.variant(r.head.pred, pattern, role);
            fired.insert((ri, Vec::new()));
            st.push(Rule::new(Vec::new(), Atom::new(h, r.head.args.clone())));
        }
    }

    while let Some(v) = st.queue.pop_front() {
        let canon = st.map.origin[&v];
        for (ri, r) in program.rules.iter().enumerate() {
            let slots: Vec<usize> = (0..r.body.len()).filter(|&k| r.body[k].pred == canon).collect();
            if slots.is_empty() {
                continue;
            }
            // Every assignment of known variants to the body with `v` in at least one slot.
            let options: Vec<Vec<PredId>> = r
                .body
                .iter()
                .map(|a| st.map.variants.get(&a.pred).cloned().unwrap_or_default())
                .collect();
            let mut combos: Vec<Vec<PredId>> = vec![Vec::new()];
            for opts in &options {
                combos = combos
                    .into_iter()
                    .flat_map(|c| {
                        opts.iter().map(move |&o| {
                            let mut c = c.clone();
                            c.push(o);
                            c
                        })
                    })
                    .collect();
            }
            for combo in combos {
                if !combo.contains(&v) || !fired.insert((ri, combo.clone())) {
                    continue;
                }
                let body: Vec<Atom> = r.body.iter().zip(&combo).map(|(a, &p)| Atom::new(p, a.args.clone())).collect();
                let pats: Vec<FamilyPattern> = combo.iter().map(|&p| st.sig.pattern(p).unwrap().clone()).collect();
                let role = st.role_of(r.head.pred, &parenthood_heads);
                let (pattern, head_args) = match r.shape {
                    Shape::Parenthood => (FamilyPattern::child(pats.first(), pats.get(1)), r.head.args.clone()),
                    _ => {
                        let map = head_projection_map(r).map_err(|reason| FamilyError::NonCanonical { rule: ri, reason })?;
                        (pats[0].project(&map), r.head.args.clone())
                    }
                };
                let h = st.variant(r.head.pred, pattern, role);
                st.push(Rule::new(body, Atom::new(h, head_args)));
            }
        }
    }

    let l = st.sig.max_arity();
    if let Some(limit) = max_arity {
        if l > limit {
            return Err(FamilyError::ArityLimit { limit, found: l });
        }
    }
    st.map.max_arity = l;
    let mut out = Program::new(st.sig, st.rules);
    out.annotated = true;
    Ok(Annotated { program: out, map: st.map })
}

/// A failed condition of the family-pattern discipline.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RespectViolation {
    pub condition: u8,
    pub rule: Option<usize>,
    pub pred: Option<PredId>,
    pub detail: String,
}

/// Checks the five family-pattern conditions on an annotated program.
pub fn verify_respects(program: &Program) -> Vec<RespectViolation> {
    let sig = &program.signature;
    let mut out = Vec::new();
    let mut v = |condition: u8, rule: Option<usize>, pred: Option<PredId>, detail: String| {
        out.push(RespectViolation { condition, rule, pred, detail })
    };
    let used: BTreeSet<PredId> = program.used_preds();
    for &p in &used {
        match sig.pattern(p) {
            Some(f) if f.len() == sig.arity(p) => {}
            Some(f) => v(1, None, Some(p), format!("pattern has {} positions, arity is {}", f.len(), sig.arity(p))),
            None => v(1, None, Some(p), "predicate carries no pattern".into()),
        }
    }
    let pat = |p: PredId| sig.pattern(p).filter(|f| f.len() == sig.arity(p));
    let mut pp_heads = BTreeSet::new();
    let mut proj_heads = BTreeSet::new();
    for (ri, r) in program.rules.iter().enumerate() {
        if !r.is_joinless() {
            v(3, Some(ri), None, "body repeats a variable".into());
            continue;
        }
        if r.existentials.is_empty() {
            if r.body.len() != 1 {
                v(2, Some(ri), Some(r.head.pred), "rule without existential must have exactly one body atom".into());
                continue;
            }
            proj_heads.insert(r.head.pred);
            let (body, head) = (&r.body[0], &r.head);
            let mut pairs = Vec::new();
            for (j, t) in head.args.iter().enumerate() {
                match t.as_var().and_then(|x| body.positions_of(x).next()) {
                    Some(i) => pairs.push((i, j)),
                    None => v(2, Some(ri), Some(head.pred), format!("head position {} not drawn from the body", j + 1)),
                }
            }
            let (Some(f), Some(g)) = (pat(body.pred), pat(head.pred)) else { continue };
            for &(i, j) in &pairs {
                for &(ip, jp) in &pairs {
                    if i == ip && j == jp {
                        continue;
                    }
                    if f.is_older(i, ip) != g.is_older(j, jp) {
                        v(2, Some(ri), Some(head.pred), format!("order of body positions {},{} not preserved", i + 1, ip + 1));
                    } else if f.is_older(i, ip) && f.address(i, ip) != g.address(j, jp) {
                        v(2, Some(ri), Some(head.pred), format!("address of body positions {},{} not preserved", i + 1, ip + 1));
                    }
                }
            }
        } else {
            pp_heads.insert(r.head.pred);
            let mut expected = vec![Term::Var(r.existentials[0].clone())];
            for a in &r.body {
                expected.extend(a.args.iter().cloned());
            }
            if r.existentials.len() != 1 || r.body.len() > 2 || r.head.args != expected {
                v(3, Some(ri), Some(r.head.pred), "head is not the newborn followed by the body arguments".into());
                continue;
            }
            let pats: Option<Vec<&FamilyPattern>> = r.body.iter().map(|a| pat(a.pred)).collect();
            let (Some(pats), Some(g)) = (pats, pat(r.head.pred)) else { continue };
            let want = FamilyPattern::child(pats.first().copied(), pats.get(1).copied());
            if *g != want {
                v(3, Some(ri), Some(r.head.pred), format!("head pattern {} differs from the required {}", g, want));
            }
        }
    }
    for &p in pp_heads.intersection(&proj_heads) {
        v(4, None, Some(p), "predicate is both a parenthood and a projection predicate".into());
    }
    for &p in &used {
        let role = sig.role(p);
        let expected = if pp_heads.contains(&p) {
            Some(Role::Parenthood)
        } else if proj_heads.contains(&p) {
            Some(Role::Projection)
        } else {
            None
        };
        match expected {
            None => v(4, None, Some(p), "predicate is never derived".into()),
            Some(r) if r != role => v(4, None, Some(p), format!("role {:?} does not match its rules", role)),
            _ => {}
        }
    }
    for &q in &proj_heads {
        let k = sig.arity(q);
        let found = program.rules.iter().any(|r| {
            r.existentials.len() == 1
                && r.body.len() == 1
                && r.body[0].pred == q
                && pp_heads.contains(&r.head.pred)
                && r.head.args.get(1..) == Some(&r.body[0].args[..])
                && program.rules.iter().any(|s| {
                    s.existentials.is_empty()
                        && s.body.len() == 1
                        && s.body[0].pred == r.head.pred
                        && s.head.pred == q
                        && s.body[0].args.len() == k + 1
                        && s.head.args[..] == s.body[0].args[1..]
                })
        });
        if !found {
            v(5, None, Some(q), "projection predicate lacks its companion rules".into());
        }
    }
    out
}

/// Expands each atom into the disjunction of the annotated variants of its
/// predicate. Disjuncts containing an atom with no reachable variant are
/// dropped; if none remain the query is constant false.
pub fn rewrite_query_annotated(query: &Ucq, map: &AnnotationMap, budget: usize) -> Result<Ucq, FamilyError> {
    let mut out = Vec::new();
    for cq in &query.disjuncts {
        let options: Vec<&[PredId]> = cq
            .atoms()
            .iter()
            .map(|a| map.variants.get(&a.pred).map(Vec::as_slice).unwrap_or(&[]))
            .collect();
        if options.iter().any(|o| o.is_empty()) {
            continue;
        }
        let count = options.iter().try_fold(1usize, |acc, o| acc.checked_mul(o.len()));
        if count.is_none_or(|c| out.len() + c > budget) {
            return Err(FamilyError::Budget(budget));
        }
        let mut choice = vec![0usize; options.len()];
        'outer: loop {
            out.push(Cq::new(cq.atoms().iter().zip(&choice).zip(&options).map(|((a, &c), o)| Atom::new(o[c], a.args.clone()))));
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

/// Replaces every projection atom `Q(t̄)` by its companion `Q'(t, t̄)` with a fresh `t`.
pub fn to_parenthood_query(cq: &Cq, program: &Program, map: &AnnotationMap) -> Result<Cq, FamilyError> {
    let taken: FxHashSet<Var> = cq.vars().into_iter().collect();
    let mut n = 0;
    let mut atoms = Vec::with_capacity(cq.len());
    for a in cq.atoms() {
        if program.signature.role(a.pred) != Role::Projection {
            atoms.push(a.clone());
            continue;
        }
        let Some(&c) = map.companion.get(&a.pred) else {
            return Err(FamilyError::MissingCompanion(program.signature.name(a.pred).to_string()));
        };
        let t = loop {
            n += 1;
            let v = Var::new(format!("_t{n}"));
            if !taken.contains(&v) {
                break v;
            }
        };
        let mut args = vec![Term::Var(t)];
        args.extend(a.args.iter().cloned());
        atoms.push(Atom::new(c, args));
    }
    Ok(Cq::new(atoms))
}
