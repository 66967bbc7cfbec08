//! Replaying the derivation of an atom with some of its positions swapped
//! for equivalent elements.

use std::collections::{BTreeMap, BTreeSet};

use super::{bind, ChaseError, ChaseInstance, REBASE_ROUND};
use crate::facts::AtomId;
use crate::syntax::{ElemId, Role, Term};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rebased {
    pub atom: AtomId,
    pub added_atoms: Vec<AtomId>,
    pub added_elements: Vec<ElemId>,
}

struct Node {
    atom: AtomId,
    /// Marked position -> index of the replacement flowing into it.
    marks: BTreeMap<usize, usize>,
    children: Vec<usize>,
}

enum Kind {
    Unmarked,
    Replaced(usize),
    Inner,
}

fn err(msg: impl Into<String>) -> ChaseError {
    ChaseError::Rebase(msg.into())
}

fn kind(inst: &ChaseInstance, n: &Node) -> Kind {
    if n.marks.is_empty() {
        return Kind::Unmarked;
    }
    let pred = inst.atom(n.atom).pred;
    if inst.program().signature.role(pred) == Role::Parenthood && n.marks.len() == 1 {
        if let Some(&m) = n.marks.get(&0) {
            return Kind::Replaced(m);
        }
    }
    Kind::Inner
}

fn build(inst: &ChaseInstance, nodes: &mut Vec<Node>, atom: AtomId, marks: BTreeMap<usize, usize>) -> Result<usize, ChaseError> {
    let me = nodes.len();
    nodes.push(Node { atom, marks, children: Vec::new() });
    if !matches!(kind(inst, &nodes[me]), Kind::Inner) {
        return Ok(me);
    }
    let meta = inst.meta(atom);
    let Some(ri) = meta.rule else {
        return Err(err(format!("marked database atom {}", inst.display(atom))));
    };
    let rule = &inst.program().rules[ri];
    let mut child_marks: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); rule.body.len()];
    for (&p, &m) in &nodes[me].marks {
        let Term::Var(v) = &rule.head.args[p] else {
            return Err(err(format!("marked constant position in {}", inst.display(atom))));
        };
        if rule.existentials.contains(v) {
            return Err(err(format!("marked witness position {} in inner node {}", p + 1, inst.display(atom))));
        }
        for (k, b) in rule.body.iter().enumerate() {
            for (q, t) in b.args.iter().enumerate() {
                if t == &Term::Var(v.clone()) {
                    child_marks[k].insert(q, m);
                }
            }
        }
    }
    let premises = meta.premises.clone();
    for (k, marks) in child_marks.into_iter().enumerate() {
        let c = build(inst, nodes, premises[k], marks)?;
        nodes[me].children.push(c);
    }
    Ok(me)
}

/// Rebuilds atom `a` with `a[positions[m]]` replaced by `replacements[m]`.
///
/// Positions are 0-based, must be pairwise incomparable in the pattern of
/// `a`, and each replacement must have the same parenthood predicate as the
/// element it replaces. Atoms needed along the way are added to `inst`.
pub fn rebase(inst: &mut ChaseInstance, a: AtomId, positions: &[usize], replacements: &[ElemId]) -> Result<Rebased, ChaseError> {
    if positions.len() != replacements.len() {
        return Err(err("positions and replacements differ in length"));
    }
    let atom = inst.atom(a).clone();
    let sig = &inst.program().signature;
    if sig.role(atom.pred) != Role::Parenthood {
        return Err(err(format!("{} is not a parenthood atom", inst.display(a))));
    }
    let pattern = sig.pattern(atom.pred).ok_or_else(|| err("atom has no pattern"))?;
    let mut marks = BTreeMap::new();
    for (m, (&p, &d)) in positions.iter().zip(replacements).enumerate() {
        if p >= atom.args.len() {
            return Err(err(format!("position {} out of range", p + 1)));
        }
        if d.index() >= inst.num_elements() {
            return Err(err(format!("unknown element {d}")));
        }
        if marks.insert(p, m).is_some() {
            return Err(err(format!("position {} given twice", p + 1)));
        }
        for &q in positions {
            if q != p && pattern.is_older(p, q) {
                return Err(err(format!("positions {} and {} are comparable", p + 1, q + 1)));
            }
        }
        if !inst.equiv0(atom.args[p], d) {
            return Err(err(format!(
                "{} and {} have different parenthood predicates",
                inst.elem_name(atom.args[p]),
                inst.elem_name(d)
            )));
        }
    }

    let mut nodes = Vec::new();
    build(inst, &mut nodes, a, marks)?;

    let atom_mark = inst.num_atoms();
    let elem_mark = inst.num_elements();
    let mut new_keys = Vec::new();
    let mut result: Vec<Option<AtomId>> = vec![None; nodes.len()];
    // Children always come after their parent, so a reverse sweep is bottom-up.
    for i in (0..nodes.len()).rev() {
        let out = match kind(inst, &nodes[i]) {
            Kind::Unmarked => Ok(nodes[i].atom),
            Kind::Replaced(m) => inst
                .parenthood_atom(replacements[m])
                .ok_or_else(|| err(format!("{} has no parenthood atom", inst.elem_name(replacements[m])))),
            Kind::Inner => replay(inst, &nodes[i], &result, &mut new_keys),
        };
        match out {
            Ok(id) => result[i] = Some(id),
            Err(e) => {
                inst.rollback(atom_mark, elem_mark, &new_keys);
                return Err(e);
            }
        }
    }
    let added_atoms: Vec<AtomId> = (atom_mark..inst.num_atoms()).map(|i| AtomId(i as u32)).collect();
    let added_elements: Vec<ElemId> = (elem_mark..inst.num_elements()).map(|i| ElemId(i as u32)).collect();
    if !added_atoms.is_empty() {
        inst.extended = true;
    }
    Ok(Rebased { atom: result[0].unwrap(), added_atoms, added_elements })
}

fn replay(
    inst: &mut ChaseInstance,
    node: &Node,
    result: &[Option<AtomId>],
    new_keys: &mut Vec<(crate::syntax::PredId, Vec<super::KeyArg>)>,
) -> Result<AtomId, ChaseError> {
    let ri = inst.meta(node.atom).rule.unwrap();
    let premises: Vec<AtomId> = node.children.iter().map(|&c| result[c].unwrap()).collect();
    let comp = inst.compiled[ri].as_ref().ok_or_else(|| err("rule not compiled"))?;
    let mut binding = vec![None; comp.n_body_vars];
    for (pat, &p) in comp.body.iter().zip(&premises) {
        let g = inst.atom(p);
        if g.pred != pat.pred || !bind(pat, g, &mut binding) {
            return Err(err(format!(
                "rule {} cannot be replayed on {}: premises would have to be unified",
                ri + 1,
                inst.display(p)
            )));
        }
    }
    let binding: Vec<ElemId> = binding.into_iter().map(|b| b.expect("body binds every variable")).collect();
    inst.apply(ri, &binding, premises, REBASE_ROUND, new_keys)
}

/// Checks the four properties of a rebase result; returns the failures.
///
/// 1. `c` is an atom of the instance with the predicate of `a`;
/// 2. `c[positions[m]] = replacements[m]`;
/// 3. at positions neither older than nor equal to any given position, `a` and
///    `c` hold elements with the same parenthood predicate;
/// 4. for every `i` older than `positions[m]`, `a[i]` and `c[i]` sit at the same
///    address in the parenthood atoms of `a[positions[m]]` and `c[positions[m]]`.
pub fn verify_claims(inst: &ChaseInstance, a: AtomId, positions: &[usize], replacements: &[ElemId], c: AtomId) -> Vec<String> {
    let mut bad = Vec::new();
    if c.index() >= inst.num_atoms() {
        bad.push("1: result is not an atom of the instance".to_string());
        return bad;
    }
    let (aa, ca) = (inst.atom(a), inst.atom(c));
    if aa.pred != ca.pred {
        bad.push(format!("1: predicates differ: {} vs {}", inst.display(a), inst.display(c)));
        return bad;
    }
    let Some(pattern) = inst.program().signature.pattern(aa.pred) else {
        bad.push("atom has no pattern".to_string());
        return bad;
    };
    for (&p, &d) in positions.iter().zip(replacements) {
        if ca.args[p] != d {
            bad.push(format!("2: position {} holds {}, expected {}", p + 1, inst.elem_name(ca.args[p]), inst.elem_name(d)));
        }
    }
    let set: BTreeSet<usize> = positions.iter().copied().collect();
    match pattern.ordering().py_set(&set) {
        Ok(py) => {
            for j in py {
                if !inst.equiv0(aa.args[j], ca.args[j]) {
                    bad.push(format!("3: position {} differs in parenthood predicate", j + 1));
                }
            }
        }
        Err(e) => bad.push(format!("3: {e}")),
    }
    for &p in positions {
        for i in 0..aa.args.len() {
            if !pattern.is_older(i, p) {
                continue;
            }
            let addr = pattern.address(i, p).unwrap();
            for (side, atom) in [("original", aa), ("result", ca)] {
                let holds = inst
                    .parenthood_atom(atom.args[p])
                    .map(|pp| inst.atom(pp).args.get(addr) == Some(&atom.args[i]))
                    .unwrap_or(false);
                if !holds {
                    bad.push(format!("4: {side} position {} is not the parent at address {} of position {}", i + 1, addr + 1, p + 1));
                }
            }
        }
    }
    bad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chase::{chase, tests::annotated, ChaseConfig};


    #[test]
    fn empty_rebase_is_identity() {
        let mut inst = chase(annotated(CHAIN), 5, ChaseConfig::default()).unwrap();
        let a = inst.facts().iter().find(|(_, g)| g.args.len() == 2).unwrap().0;
        let r = rebase(&mut inst, a, &[], &[]).unwrap();
        assert_eq!(r.atom, a);
        assert!(r.added_atoms.is_empty());
        assert!(!inst.is_extended());
    }

    const CHAIN: &str = "true -> exists x. N(x).\nN(x) -> exists y. E(y,x).\nE(y,x) -> N(y).";

    #[test]
    fn rejects_inequivalent_replacement() {
        let mut inst = chase(annotated(CHAIN), 6, ChaseConfig::default()).unwrap();
        // n2 was born through E, n0 through the initial fact.
        let a = inst.parenthood_atom(ElemId(4)).unwrap();
        assert_eq!(inst.atom(a).args[1], ElemId(2));
        assert!(matches!(rebase(&mut inst, a, &[1], &[ElemId(0)]), Err(ChaseError::Rebase(_))));
        assert!(matches!(rebase(&mut inst, a, &[0, 1], &[ElemId(4), ElemId(2)]), Err(ChaseError::Rebase(_))));
    }

    #[test]
    fn every_equivalent_swap_satisfies_the_claims() {
        let mut inst = chase(annotated(CHAIN), 8, ChaseConfig::default()).unwrap();
        let n = inst.num_atoms();
        let mut tried = 0;
        for a in 0..n {
            let a = AtomId(a as u32);
            if inst.program().signature.role(inst.atom(a).pred) != Role::Parenthood {
                continue;
            }
            for p in 0..inst.atom(a).args.len() {
                for d in 0..inst.num_elements() {
                    let d = ElemId(d as u32);
                    if !inst.equiv0(inst.atom(a).args[p], d) {
                        continue;
                    }
                    let r = rebase(&mut inst, a, &[p], &[d]).unwrap();
                    assert_eq!(verify_claims(&inst, a, &[p], &[d], r.atom), Vec::<String>::new());
                    tried += 1;
                }
            }
        }
        assert!(tried > 10);
        assert!(inst.check_unique_parenthood().is_empty());
        assert!(inst.check_addresses().is_empty());
    }
}
