//! Independent oracles shared by the integration and acceptance tests.
//! Nothing here calls the library's evaluator, model checker or marking search.
#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;

use fcchase::chase::ChaseInstance;
use fcchase::facts::GroundAtom;
use fcchase::quotient::FiniteStructure;
use fcchase::syntax::{parse_problem, Atom, Const, Cq, PredId, Problem, Program, Role, Signature, Term, Var};

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

/// Stems of the `.tgd` files in `corpus/<sub>`, sorted.
pub fn corpus_names(sub: &str) -> Vec<String> {
    let mut out: Vec<String> = std::fs::read_dir(corpus_dir().join(sub))
        .unwrap()
        .filter_map(|e| {
            let p = e.unwrap().path();
            (p.extension()? == "tgd").then(|| p.file_stem().unwrap().to_string_lossy().into_owned())
        })
        .collect();
    out.sort();
    out
}

fn read_opt(p: PathBuf) -> String {
    std::fs::read_to_string(p).unwrap_or_default()
}

/// Program, queries and database of `corpus/<sub>/<name>`; missing files are empty.
pub fn load(sub: &str, name: &str) -> Problem {
    let dir = corpus_dir().join(sub);
    let tgd = read_opt(dir.join(format!("{name}.tgd")));
    let cq = read_opt(dir.join(format!("{name}.cq")));
    let db = read_opt(dir.join(format!("{name}.db")));
    parse_problem(&tgd, &cq, &db).unwrap_or_else(|e| panic!("{sub}/{name}: {e}"))
}

/// A bag of ground tuples with a per-position index.
pub struct Db {
    tuples: HashMap<PredId, Vec<Vec<u32>>>,
    by_arg: HashMap<(PredId, usize, u32), Vec<usize>>,
    consts: HashMap<String, u32>,
}

impl Db {
    pub fn new<'a>(atoms: impl IntoIterator<Item = &'a GroundAtom>, consts: HashMap<String, u32>) -> Db {
        let mut db = Db { tuples: HashMap::new(), by_arg: HashMap::new(), consts };
        let mut seen = BTreeSet::new();
        for a in atoms {
            let t: Vec<u32> = a.args.iter().map(|e| e.0).collect();
            if !seen.insert((a.pred, t.clone())) {
                continue;
            }
            let list = db.tuples.entry(a.pred).or_default();
            for (i, &e) in t.iter().enumerate() {
                db.by_arg.entry((a.pred, i, e)).or_default().push(list.len());
            }
            list.push(t);
        }
        db
    }

    pub fn of_structure(s: &FiniteStructure) -> Db {
        let consts = s
            .domain
            .iter()
            .enumerate()
            .filter_map(|(i, c)| Some((c.constant.as_ref()?.0.clone(), i as u32)))
            .collect();
        Db::new(&s.atoms, consts)
    }

    /// The first `atoms` atoms of a chase instance.
    pub fn of_chase_prefix(inst: &ChaseInstance, atoms: usize) -> Db {
        let consts = (0..inst.num_elements())
            .filter_map(|i| Some((inst.elements()[i].constant.as_ref()?.0.clone(), i as u32)))
            .collect();
        Db::new(inst.facts().iter().take(atoms).map(|(_, a)| a), consts)
    }

    pub fn of_chase(inst: &ChaseInstance) -> Db {
        Db::of_chase_prefix(inst, inst.num_atoms())
    }

    pub fn contains(&self, pred: PredId, args: &[u32]) -> bool {
        self.tuples.get(&pred).is_some_and(|l| l.iter().any(|t| t == args))
    }

    fn value(&self, t: &Term, b: &HashMap<Var, u32>) -> Option<Option<u32>> {
        match t {
            Term::Var(v) => Some(b.get(v).copied()),
            Term::Const(c) => self.consts.get(&c.0).map(|&e| Some(e)),
            Term::Null(e) => Some(Some(e.0)),
        }
    }

    /// Calls `f` on every extension of `b` that maps all of `atoms` into the
    /// bag; stops early when `f` returns false. Returns false if stopped.
    pub fn matches(&self, atoms: &[Atom], b: &mut HashMap<Var, u32>, f: &mut dyn FnMut(&HashMap<Var, u32>) -> bool) -> bool {
        if atoms.is_empty() {
            return f(b);
        }
        // Most constrained atom first.
        let bound = |a: &Atom| a.args.iter().filter(|t| !matches!(self.value(t, b), Some(None))).count();
        let k = (0..atoms.len()).max_by_key(|&i| (bound(&atoms[i]), usize::MAX - i)).unwrap();
        let a = &atoms[k];
        let rest: Vec<Atom> = atoms.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, a)| a.clone()).collect();
        let mut vals = Vec::with_capacity(a.args.len());
        for t in &a.args {
            match self.value(t, b) {
                None => return true, // unknown constant: no match
                Some(v) => vals.push(v),
            }
        }
        let Some(list) = self.tuples.get(&a.pred) else { return true };
        let candidates: Vec<usize> = match vals.iter().enumerate().find_map(|(i, v)| v.map(|e| (i, e))) {
            Some((i, e)) => self.by_arg.get(&(a.pred, i, e)).cloned().unwrap_or_default(),
            None => (0..list.len()).collect(),
        };
        for ti in candidates {
            let t = &list[ti];
            let mut added: Vec<Var> = Vec::new();
            let mut ok = true;
            for (i, term) in a.args.iter().enumerate() {
                match term {
                    Term::Const(_) | Term::Null(_) => ok = vals[i] == Some(t[i]),
                    Term::Var(v) => match b.get(v) {
                        Some(&e) => ok = e == t[i],
                        None => {
                            b.insert(v.clone(), t[i]);
                            added.push(v.clone());
                        }
                    },
                }
                if !ok {
                    break;
                }
            }
            let go_on = !ok || self.matches(&rest, b, f);
            for v in added {
                b.remove(&v);
            }
            if !go_on {
                return false;
            }
        }
        true
    }

    /// True if every connected component of `cq` has a match.
    pub fn holds(&self, cq: &Cq) -> bool {
        components(cq.atoms()).iter().all(|part| {
            let mut found = false;
            self.matches(part, &mut HashMap::new(), &mut |_| {
                found = true;
                false
            });
            found
        })
    }

    /// Rules of `program` with a body match but no head extension.
    pub fn violated_rules(&self, program: &Program) -> Vec<usize> {
        let mut out = Vec::new();
        for (ri, r) in program.rules.iter().enumerate() {
            let mut bad = false;
            self.matches(&r.body, &mut HashMap::new(), &mut |b| {
                let mut b2 = b.clone();
                let mut head_ok = false;
                self.matches(std::slice::from_ref(&r.head), &mut b2, &mut |_| {
                    head_ok = true;
                    false
                });
                bad = !head_ok;
                !bad
            });
            if bad {
                out.push(ri);
            }
        }
        out
    }
}

/// Splits atoms into groups connected through shared variables.
pub fn components(atoms: &[Atom]) -> Vec<Vec<Atom>> {
    let mut groups: Vec<(BTreeSet<Var>, Vec<Atom>)> = Vec::new();
    for a in atoms {
        let vars: BTreeSet<Var> = a.vars().cloned().collect();
        let mut merged = (vars, vec![a.clone()]);
        groups.retain(|(vs, at)| {
            if vs.is_disjoint(&merged.0) {
                return true;
            }
            merged.0.extend(vs.iter().cloned());
            merged.1.extend(at.iter().cloned());
            false
        });
        groups.push(merged);
    }
    groups.into_iter().map(|(_, at)| at).collect()
}

/// Cyclicity from first principles: a graph on variables with an edge
/// between the variables at every ordered position pair (and a self-loop
/// when one variable sits at two ordered positions); cyclic if it has a cycle.
pub fn cyclic_oracle(cq: &Cq, sig: &Signature) -> bool {
    let vars = cq.vars();
    let id = |v: &Var| vars.iter().position(|w| w == v).unwrap();
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for a in cq.atoms() {
        let Some(pat) = sig.pattern(a.pred) else { continue };
        for i in 0..a.args.len() {
            for j in 0..a.args.len() {
                if i == j || !pat.is_older(i, j) {
                    continue;
                }
                if let (Term::Var(x), Term::Var(y)) = (&a.args[i], &a.args[j]) {
                    edges.insert((id(y), id(x)));
                }
            }
        }
    }
    // Self-loops are cycles; otherwise look for a directed cycle by DFS.
    if edges.iter().any(|(a, b)| a == b) {
        return true;
    }
    let n = vars.len();
    let mut state = vec![0u8; n];
    fn dfs(u: usize, edges: &BTreeSet<(usize, usize)>, state: &mut [u8]) -> bool {
        state[u] = 1;
        for &(a, b) in edges.range((u, 0)..(u + 1, 0)) {
            debug_assert_eq!(a, u);
            if state[b] == 1 || (state[b] == 0 && dfs(b, edges, state)) {
                return true;
            }
        }
        state[u] = 2;
        false
    }
    (0..n).any(|u| state[u] == 0 && dfs(u, &edges, &mut state))
}

/// Some valid sticky marking by exhaustive search over position subsets:
/// every join variable, and every variable at a marked body position, must
/// occur at a marked head position. Returns all valid markings.
pub fn sticky_oracle(program: &Program) -> Vec<BTreeSet<(PredId, usize)>> {
    let positions: Vec<(PredId, usize)> =
        program.signature.ids().flat_map(|p| (0..program.signature.arity(p)).map(move |i| (p, i))).collect();
    assert!(positions.len() <= 16, "too many positions for exhaustive search");
    let mut out = Vec::new();
    for mask in 0u32..(1 << positions.len()) {
        let marked: BTreeSet<(PredId, usize)> =
            positions.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, p)| *p).collect();
        let valid = program.rules.iter().all(|r| {
            let mut count: HashMap<&Var, usize> = HashMap::new();
            let mut must: BTreeSet<&Var> = BTreeSet::new();
            for a in &r.body {
                for (i, t) in a.args.iter().enumerate() {
                    if let Term::Var(v) = t {
                        *count.entry(v).or_default() += 1;
                        if marked.contains(&(a.pred, i)) {
                            must.insert(v);
                        }
                    }
                }
            }
            must.extend(count.iter().filter(|(_, &c)| c > 1).map(|(v, _)| *v));
            must.iter().all(|v| {
                r.head.args.iter().enumerate().any(|(i, t)| t.as_var() == Some(*v) && marked.contains(&(r.head.pred, i)))
            })
        });
        if valid {
            out.push(marked);
        }
    }
    out
}

pub fn parenthood_preds(sig: &Signature) -> Vec<PredId> {
    sig.ids().filter(|&p| sig.role(p) == Role::Parenthood).collect()
}

/// Every query with `k` atoms over `preds` (multisets of predicates, all
/// variable-sharing patterns); queries that collapse to fewer atoms are kept.
pub fn enumerate_cqs(sig: &Signature, preds: &[PredId], k: usize, f: &mut dyn FnMut(Cq)) {
    fn multisets(preds: &[PredId], k: usize, from: usize, cur: &mut Vec<PredId>, out: &mut Vec<Vec<PredId>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in from..preds.len() {
            cur.push(preds[i]);
            multisets(preds, k, i, cur, out);
            cur.pop();
        }
    }
    fn rgs(len: usize, cur: &mut Vec<usize>, max: usize, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == len {
            f(cur);
            return;
        }
        for v in 0..=max {
            cur.push(v);
            rgs(len, cur, max.max(v + 1), f);
            cur.pop();
        }
    }
    let mut ms = Vec::new();
    multisets(preds, k, 0, &mut Vec::new(), &mut ms);
    for m in ms {
        let total: usize = m.iter().map(|&p| sig.arity(p)).sum();
        rgs(total, &mut Vec::new(), 0, &mut |labels| {
            let mut it = labels.iter();
            let atoms = m.iter().map(|&p| {
                Atom::new(p, (0..sig.arity(p)).map(|_| Term::var(format!("v{}", it.next().unwrap()))).collect())
            });
            f(Cq::new(atoms));
        });
    }
}

pub fn const_name(c: &Const) -> &str {
    &c.0
}
