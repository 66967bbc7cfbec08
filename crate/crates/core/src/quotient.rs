//! Finite quotients of a chase: histories, colorings, element types, the
//! equivalences between elements and the structures they induce.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::sync::Arc;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::chase::{ChaseConfig, ChaseError, ChaseInstance};
use crate::facts::{rule_violations, AtomId, FactIndex, GroundAtom, Violation};
use crate::syntax::{Const, ElemId, PredId, Program, Signature};

/// `H¹(e)` is the set of parents of `e`; `Hⁿ⁺¹(e) = {e} ∪ ⋃ Hⁿ(p)` over the
/// parents `p`. `H⁰` is empty.
pub fn n_history(inst: &ChaseInstance, e: ElemId, n: usize) -> BTreeSet<ElemId> {
    let mut out = BTreeSet::new();
    history_into(inst, e, n, &mut out);
    out
}

fn history_into(inst: &ChaseInstance, e: ElemId, n: usize, out: &mut BTreeSet<ElemId>) {
    match n {
        0 => {}
        1 => out.extend(inst.parents(e).iter().copied()),
        _ => {
            out.insert(e);
            for &p in inst.parents(e) {
                history_into(inst, p, n - 1, out);
            }
        }
    }
}

/// Greedy coloring in element order: each element takes the least color not
/// used by an element of its k-history other than itself.
pub fn k_color(inst: &ChaseInstance, k: usize) -> Vec<u32> {
    let n = inst.num_elements();
    let mut colors = vec![0u32; n];
    if k == 0 {
        return colors;
    }
    // Histories are built level by level to avoid repeated recursion.
    let mut hist: Vec<Vec<ElemId>> = (0..n).map(|i| inst.parents(ElemId(i as u32)).to_vec()).collect();
    for _ in 1..k {
        let next: Vec<Vec<ElemId>> = (0..n)
            .map(|i| {
                let e = ElemId(i as u32);
                let mut s: FxHashSet<ElemId> = FxHashSet::default();
                s.insert(e);
                for &p in inst.parents(e) {
                    s.extend(hist[p.index()].iter().copied());
                }
                let mut v: Vec<ElemId> = s.into_iter().collect();
                v.sort_unstable();
                v
            })
            .collect();
        hist = next;
    }
    let mut used: Vec<u32> = Vec::new();
    for i in 0..n {
        used.clear();
        used.extend(hist[i].iter().filter(|a| a.index() != i).map(|a| colors[a.index()]));
        used.sort_unstable();
        used.dedup();
        let mut c = 0;
        for &u in &used {
            if u == c {
                c += 1;
            } else if u > c {
                break;
            }
        }
        colors[i] = c;
    }
    colors
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TypeId(pub u32);

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TypeNode {
    pub color: u32,
    pub children: Vec<TypeId>,
}

/// Hash-consed type trees: equal trees get equal ids.
#[derive(Clone, Debug, Default)]
pub struct TypeArena {
    nodes: Vec<TypeNode>,
    ids: HashMap<TypeNode, TypeId>,
}

impl TypeArena {
    pub fn intern(&mut self, node: TypeNode) -> TypeId {
        if let Some(&id) = self.ids.get(&node) {
            return id;
        }
        let id = TypeId(self.nodes.len() as u32);
        self.nodes.push(node.clone());
        self.ids.insert(node, id);
        id
    }

    pub fn get(&self, id: TypeId) -> &TypeNode {
        &self.nodes[id.0 as usize]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `(color, [children])`, leaves as `(color)`.
    pub fn render(&self, id: TypeId) -> String {
        let n = self.get(id);
        if n.children.is_empty() {
            format!("({})", n.color)
        } else {
            let c: Vec<String> = n.children.iter().map(|&c| self.render(c)).collect();
            format!("({}, [{}])", n.color, c.join(", "))
        }
    }
}

/// Types of every element at depth `n` under the given coloring.
pub fn types(inst: &ChaseInstance, colors: &[u32], n: usize, arena: &mut TypeArena) -> Vec<TypeId> {
    let m = inst.num_elements();
    let mut cur: Vec<TypeId> = (0..m).map(|i| arena.intern(TypeNode { color: colors[i], children: Vec::new() })).collect();
    for _ in 0..n {
        cur = (0..m)
            .map(|i| {
                let children = inst.parents(ElemId(i as u32)).iter().map(|p| cur[p.index()]).collect();
                arena.intern(TypeNode { color: colors[i], children })
            })
            .collect();
    }
    cur
}

pub fn type_of(inst: &ChaseInstance, e: ElemId, n: usize, k: usize, arena: &mut TypeArena) -> TypeId {
    let colors = k_color(inst, k);
    types(inst, &colors, n, arena)[e.index()]
}

/// Direct recursive test of `a ≡ₙ b`, using the k = n coloring at each level.
pub fn equiv(inst: &ChaseInstance, a: ElemId, b: ElemId, n: usize) -> bool {
    let mut cache = EquivCache::default();
    cache.equiv(inst, a, b, n)
}

/// Colorings and types shared across many `equiv` calls.
#[derive(Default)]
pub struct EquivCache {
    arena: TypeArena,
    types: FxHashMap<usize, Vec<TypeId>>,
}

impl EquivCache {
    fn type_at(&mut self, inst: &ChaseInstance, e: ElemId, m: usize) -> TypeId {
        if !self.types.contains_key(&m) {
            let colors = k_color(inst, m);
            let t = types(inst, &colors, m, &mut self.arena);
            self.types.insert(m, t);
        }
        self.types[&m][e.index()]
    }

    pub fn equiv(&mut self, inst: &ChaseInstance, a: ElemId, b: ElemId, n: usize) -> bool {
        if a == b {
            return true;
        }
        if !inst.equiv0(a, b) {
            return false;
        }
        if n == 0 {
            return true;
        }
        if self.type_at(inst, a, n) != self.type_at(inst, b, n) {
            return false;
        }
        if !self.equiv(inst, a, b, n - 1) {
            return false;
        }
        let (pa, pb) = (inst.parents(a).to_vec(), inst.parents(b).to_vec());
        pa.len() == pb.len() && pa.iter().zip(&pb).all(|(&x, &y)| self.equiv(inst, x, y, n - 1))
    }
}

/// Class index of every element under `≡ₙ`, computed by refining the
/// parenthood-predicate partition `n` times. Classes are numbered by their
/// smallest element.
pub fn partition(inst: &ChaseInstance, n: usize) -> Vec<u32> {
    let m = inst.num_elements();
    let mut class = renumber((0..m).map(|i| {
        let e = ElemId(i as u32);
        match inst.parenthood_pred(e) {
            Some(p) => (0u8, p.0 as u64),
            // Constants are only equivalent to themselves.
            None => (1u8, i as u64),
        }
    }));
    let mut arena = TypeArena::default();
    for level in 1..=n {
        let colors = k_color(inst, level);
        let ty = types(inst, &colors, level, &mut arena);
        let prev = class.clone();
        class = renumber((0..m).map(|i| {
            let parents: Vec<u32> = inst.parents(ElemId(i as u32)).iter().map(|p| prev[p.index()]).collect();
            (prev[i], ty[i], parents)
        }));
    }
    class
}

fn renumber<K: std::hash::Hash + Eq>(keys: impl Iterator<Item = K>) -> Vec<u32> {
    let mut ids: HashMap<K, u32> = HashMap::new();
    keys.map(|k| {
        let next = ids.len() as u32;
        *ids.entry(k).or_insert(next)
    })
    .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Class {
    pub rep: ElemId,
    /// Parenthood predicate of the members; `None` for a constant.
    pub pred: Option<PredId>,
    pub constant: Option<Const>,
}

/// A finite structure whose elements are numbered `0..domain.len()`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FiniteStructure {
    pub domain: Vec<Class>,
    pub atoms: BTreeSet<GroundAtom>,
}

impl FiniteStructure {
    pub fn index(&self) -> FactIndex {
        let mut idx = FactIndex::new();
        for a in &self.atoms {
            idx.insert(a.clone());
        }
        idx
    }

    pub fn constant(&self, c: &Const) -> Option<ElemId> {
        self.domain.iter().position(|d| d.constant.as_ref() == Some(c)).map(|i| ElemId(i as u32))
    }

    fn atom_text(&self, sig: &Signature, a: &GroundAtom) -> String {
        let name = sig.name(a.pred);
        if a.args.is_empty() {
            return name.to_string();
        }
        let args: Vec<String> = a.args.iter().map(|e| format!("c{}", e.0)).collect();
        format!("{name}({})", args.join(","))
    }

    /// `domain <count>`, one `class` line per element, then the sorted atoms.
    pub fn to_text(&self, sig: &Signature) -> String {
        let mut out = format!("domain {}\n", self.domain.len());
        for (i, c) in self.domain.iter().enumerate() {
            let pred = c.pred.map_or("-", |p| sig.name(p));
            match &c.constant {
                Some(k) => writeln!(out, "class c{i} {pred} \"{}\"", k.0),
                None => writeln!(out, "class c{i} {pred} n{}", c.rep.0),
            }
            .unwrap();
        }
        let mut atoms: Vec<String> = self.atoms.iter().map(|a| self.atom_text(sig, a)).collect();
        atoms.sort();
        for a in atoms {
            let _ = writeln!(out, "atom {a}");
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct Quotient {
    pub structure: FiniteStructure,
    /// Class of every chase element.
    pub class_of: Vec<u32>,
}

/// The chase divided by `≡ₙ`, with the image of every atom.
pub fn quotient(inst: &ChaseInstance, n: usize) -> Quotient {
    let class_of = partition(inst, n);
    let mut domain: Vec<Option<Class>> = Vec::new();
    for (i, &c) in class_of.iter().enumerate() {
        let c = c as usize;
        if c >= domain.len() {
            domain.resize(c + 1, None);
        }
        if domain[c].is_none() {
            let e = ElemId(i as u32);
            domain[c] = Some(Class { rep: e, pred: inst.parenthood_pred(e), constant: inst.element(e).constant.clone() });
        }
    }
    let atoms = inst
        .facts()
        .iter()
        .map(|(_, a)| GroundAtom::new(a.pred, a.args.iter().map(|e| ElemId(class_of[e.index()])).collect::<Vec<_>>()))
        .collect();
    Quotient { structure: FiniteStructure { domain: domain.into_iter().map(Option::unwrap).collect(), atoms }, class_of }
}

/// Rule violations of `program` in `structure`, at most `limit`.
pub fn model_violations(structure: &FiniteStructure, program: &Program, limit: usize) -> Vec<Violation> {
    let idx = structure.index();
    let resolve = |c: &Const| structure.constant(c);
    let mut out = Vec::new();
    for (i, r) in program.rules.iter().enumerate() {
        if out.len() >= limit {
            break;
        }
        out.extend(rule_violations(&idx, r, i, &resolve, limit - out.len()));
    }
    out
}

pub fn is_model(structure: &FiniteStructure, program: &Program) -> bool {
    model_violations(structure, program, 1).is_empty()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub max_rounds: u32,
    pub chase: ChaseConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { max_rounds: 1 << 12, chase: ChaseConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("level-{n} model not built after {rounds} rounds: {reason}")]
    Budget { n: usize, rounds: u32, reason: String },
    #[error("level-{n} quotient violates {violations} rule instance(s)")]
    NotModel { n: usize, violations: usize },
}

#[derive(Clone, Debug)]
pub struct Model {
    pub n: usize,
    /// Rounds of the guided chase.
    pub rounds: u32,
    pub structure: FiniteStructure,
    pub class_of: Vec<u32>,
    /// The guided chase the structure is the quotient of.
    pub chase: ChaseInstance,
}

/// Builds `Mₙ`, the quotient of the chase of `program` by `≡ₙ`.
///
/// The class of an element only depends on its parenthood predicate and the
/// classes of its parents, so the image of an atom only depends on the images
/// of its premises. The chase is therefore run with each rule firing once per
/// tuple of premise images; at its fixpoint every atom of `Mₙ` has a witness.
pub fn build_model(program: Arc<Program>, n: usize, config: ModelConfig) -> Result<Model, ModelError> {
    let mut inst = ChaseInstance::new(program, config.chase);
    let mut fired: FxHashSet<(usize, Vec<GroundAtom>)> = FxHashSet::default();
    loop {
        if inst.rounds() >= config.max_rounds {
            return Err(ModelError::Budget { n, rounds: inst.rounds(), reason: "round limit reached".to_string() });
        }
        let class = partition(&inst, n);
        let image = |facts: &FactIndex, a: AtomId| {
            let g = facts.get(a);
            GroundAtom::new(g.pred, g.args.iter().map(|e| ElemId(class[e.index()])).collect::<Vec<_>>())
        };
        let grew = inst.step_with(&mut |facts, ri, premises| {
            fired.insert((ri, premises.iter().map(|&a| image(facts, a)).collect()))
        });
        match grew {
            Ok(true) => {}
            Ok(false) => break,
            Err(ChaseError::Budget { .. }) => {
                return Err(ModelError::Budget { n, rounds: inst.rounds(), reason: "element budget exceeded".to_string() })
            }
            Err(e) => return Err(ModelError::Budget { n, rounds: inst.rounds(), reason: e.to_string() }),
        }
    }
    let q = quotient(&inst, n);
    let violations = model_violations(&q.structure, inst.program(), usize::MAX).len();
    if violations > 0 {
        return Err(ModelError::NotModel { n, violations });
    }
    Ok(Model { n, rounds: inst.rounds(), structure: q.structure, class_of: q.class_of, chase: inst })
}
