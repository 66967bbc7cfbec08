//! End-to-end pipeline and the entailment decision loop.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::analysis::{
    joinless_violations, rewrite_query_specialized, specialize_constants, Specialized, DEFAULT_SPECIALIZATION_BUDGET,
};
use crate::chase::{ChaseConfig, ChaseError, ChaseInstance};
use crate::facts::GroundAtom;
use crate::family::{
    annotate, canonicalize_rules, rewrite_query_annotated, rewrite_query_canonical, to_parenthood_query, AnnotationMap,
    Canonical,
};
use crate::quotient::{build_model, is_model, model_violations, Class, FiniteStructure, ModelConfig};
use crate::query::{check_witness, eval_cq_structure, eval_ucq_chase, eval_ucq_structure, is_cyclic, Witness};
use crate::syntax::{Atom, Const, Cq, ElemId, PredId, Program, Term, Ucq};
use crate::Error;

pub const DEFAULT_REWRITE_BUDGET: usize = 100_000;

#[derive(Clone, Debug)]
pub struct PipelineQuery {
    pub source: Ucq,
    /// Over the annotated signature.
    pub annotated: Ucq,
    /// Same, with projection atoms replaced by parenthood atoms.
    pub parenthood: Ucq,
}

impl PipelineQuery {
    /// True if every disjunct of the parenthood form is cyclic (and there is at least one).
    pub fn is_cyclic(&self, sig: &crate::syntax::Signature) -> bool {
        !self.parenthood.disjuncts.is_empty()
            && self.parenthood.disjuncts.iter().all(|d| is_cyclic(d, sig).unwrap_or(false))
    }
}

#[derive(Clone, Debug)]
pub struct Pipeline {
    pub source: Program,
    pub database: Vec<Atom>,
    /// Present when constants had to be folded into predicate names.
    pub specialized: Option<Specialized>,
    pub canonical: Canonical,
    pub annotated: Arc<Program>,
    pub map: AnnotationMap,
    pub queries: Vec<PipelineQuery>,
}

/// Specializes constants (if any), canonicalizes, annotates and rewrites the
/// queries. The source program must be joinless.
pub fn pipeline(source: &Program, database: &[Atom], queries: &[Ucq]) -> Result<Pipeline, Error> {
    let joins = joinless_violations(source);
    if !joins.is_empty() {
        return Err(Error::Family(crate::family::FamilyError::NotJoinless(joins)));
    }
    let has_constants = !database.is_empty()
        || !source.constants().is_empty()
        || queries.iter().flat_map(|q| &q.disjuncts).flat_map(|d| d.atoms()).any(|a| a.args.iter().any(|t| t.as_const().is_some()));
    let specialized = if has_constants {
        Some(specialize_constants(database, source, DEFAULT_SPECIALIZATION_BUDGET)?)
    } else {
        None
    };
    let base = specialized.as_ref().map_or(source, |s| &s.program);
    let canonical = canonicalize_rules(base)?;
    let annotated = annotate(&canonical.program, None)?;
    let mut out = Vec::new();
    for q in queries {
        let q1 = match &specialized {
            Some(s) => rewrite_query_specialized(q, &source.signature, s, DEFAULT_REWRITE_BUDGET)?,
            None => q.clone(),
        };
        let q2 = rewrite_query_canonical(&q1, &base.signature, &canonical, DEFAULT_REWRITE_BUDGET)?;
        let q3 = rewrite_query_annotated(&q2, &annotated.map, DEFAULT_REWRITE_BUDGET)?;
        let pp = q3
            .disjuncts
            .iter()
            .map(|d| to_parenthood_query(d, &annotated.program, &annotated.map))
            .collect::<Result<Vec<_>, _>>()?;
        let parenthood = Ucq::new(q.name.clone(), pp);
        out.push(PipelineQuery { source: q.clone(), annotated: q3, parenthood });
    }
    Ok(Pipeline {
        source: source.clone(),
        database: database.to_vec(),
        specialized,
        canonical,
        annotated: Arc::new(annotated.program),
        map: annotated.map,
        queries: out,
    })
}

impl Pipeline {
    /// Maps a structure over the annotated signature to one over the source
    /// signature: annotations and equality variants are undone, helper
    /// predicates dropped, and folded constants put back as elements.
    pub fn project(&self, s: &FiniteStructure) -> FiniteStructure {
        let base_sig = self.specialized.as_ref().map_or(&self.source.signature, |sp| &sp.program.signature);
        let mut variant_of: BTreeMap<PredId, (PredId, Vec<usize>)> = BTreeMap::new();
        for (&input, list) in &self.canonical.equalities {
            for (v, part) in list {
                variant_of.insert(*v, (input, part.clone()));
            }
        }
        // Class predicates belong to the annotated signature.
        let mut domain: Vec<Class> = s.domain.iter().map(|c| Class { pred: None, ..c.clone() }).collect();
        let mut const_elem: BTreeMap<Const, ElemId> = BTreeMap::new();
        let mut elem_for = |c: &Const, domain: &mut Vec<Class>| {
            *const_elem.entry(c.clone()).or_insert_with(|| {
                domain.push(Class { rep: ElemId(u32::MAX), pred: None, constant: Some(c.clone()) });
                ElemId(domain.len() as u32 - 1)
            })
        };
        let mut atoms = BTreeSet::new();
        for a in &s.atoms {
            if self.map.is_companion(a.pred) {
                continue;
            }
            let Some(&canon) = self.map.origin.get(&a.pred) else { continue };
            let Some((input, part)) = variant_of.get(&canon) else { continue };
            if input.index() >= base_sig.len() {
                continue;
            }
            let args: Vec<ElemId> = part.iter().map(|&c| a.args[c]).collect();
            match &self.specialized {
                None => {
                    atoms.insert(GroundAtom::new(*input, args));
                }
                Some(sp) => {
                    let base_name = base_sig.name(*input);
                    let (name, asg) = match sp.dictionary.origin(*input) {
                        Some((name, asg)) => (name.as_str(), asg.as_slice()),
                        None => (base_name, &[][..]),
                    };
                    let Some(src) = self.source.signature.lookup(name) else { continue };
                    let mut full = Vec::with_capacity(self.source.signature.arity(src));
                    let mut rest = args.into_iter();
                    for pos in 0..self.source.signature.arity(src) {
                        match asg.iter().find(|(p, _)| *p == pos) {
                            Some((_, c)) => full.push(elem_for(c, &mut domain)),
                            None => full.push(rest.next().expect("arity matches")),
                        }
                    }
                    atoms.insert(GroundAtom::new(src, full));
                }
            }
        }
        // Keep constants of the program and the database even when no atom uses them.
        let mut consts: BTreeSet<Const> = self.source.constants();
        for a in &self.database {
            consts.extend(a.args.iter().filter_map(Term::as_const).cloned());
        }
        for c in &consts {
            elem_for(c, &mut domain);
        }
        FiniteStructure { domain, atoms }
    }

    /// Checks that `s` (over the source signature) satisfies the program and
    /// the database and refutes `query`; returns the problems found.
    pub fn verify_countermodel(&self, s: &FiniteStructure, query: &Ucq) -> Vec<String> {
        let mut bad: Vec<String> = model_violations(s, &self.source, 5)
            .into_iter()
            .map(|v| format!("rule {} violated", v.rule + 1))
            .collect();
        let idx = s.index();
        for a in &self.database {
            let args: Option<Vec<ElemId>> = a.args.iter().map(|t| t.as_const().and_then(|c| s.constant(c))).collect();
            if !args.is_some_and(|args| idx.contains(&GroundAtom::new(a.pred, args))) {
                bad.push(format!("database atom {} missing", crate::syntax::display_atom(&self.source.signature, a)));
            }
        }
        if eval_ucq_structure(s, query).is_some() {
            bad.push("query holds".to_string());
        }
        bad
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Outcome {
    Entailed,
    NotEntailed,
    Unknown,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Entailed => "entailed",
            Outcome::NotEntailed => "not-entailed",
            Outcome::Unknown => "unknown",
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Entailed => 0,
            Outcome::NotEntailed => 1,
            Outcome::Unknown => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Countermodel {
    pub n: usize,
    /// Quotient over the annotated signature.
    pub structure: FiniteStructure,
    /// The same model over the source signature.
    pub source: FiniteStructure,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundStat {
    pub round: u32,
    pub depth: u32,
    pub elements: usize,
    pub atoms: usize,
    /// `(n, classes, usable)` for every level built; a level is unusable if
    /// building it failed or its countermodel failed verification.
    pub levels: Vec<(usize, usize, bool)>,
}

#[derive(Clone, Debug)]
pub struct Verdict {
    pub outcome: Outcome,
    pub depth: u32,
    pub max_n: Option<usize>,
    /// Satisfied disjunct and homomorphism into the chase.
    pub witness: Option<(usize, Witness)>,
    pub countermodel: Option<Countermodel>,
    pub rounds: Vec<RoundStat>,
    pub reason: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecideConfig {
    pub initial_depth: u32,
    pub max_elements: usize,
    pub max_time: Option<Duration>,
    pub max_rounds: u32,
}

impl Default for DecideConfig {
    fn default() -> Self {
        DecideConfig { initial_depth: 2, max_elements: 1_000_000, max_time: None, max_rounds: 16 }
    }
}

/// Alternates chase deepening (looking for a homomorphism) with building the
/// level-n models (looking for a finite countermodel). Round `r` chases to
/// depth `initial_depth · 2^r` and tries levels `0..=r`; each level is built
/// once and reused by later rounds.
pub fn decide(p: &Pipeline, query: &PipelineQuery, config: DecideConfig) -> Verdict {
    let start = Instant::now();
    let chase_config = ChaseConfig { max_elements: config.max_elements };
    let mut inst = ChaseInstance::new(p.annotated.clone(), chase_config);
    let mut rounds = Vec::new();
    let mut max_n = None;
    // Level n: built model, or None if building it failed.
    let mut models: Vec<Option<FiniteStructure>> = Vec::new();
    let out_of_time = |start: Instant| config.max_time.is_some_and(|t| start.elapsed() > t);
    for r in 1..=config.max_rounds {
        let depth = config.initial_depth.saturating_mul(1 << r.min(30));
        if let Err(e) = inst.run_to(depth) {
            let reason = match e {
                ChaseError::Budget { limit, .. } => format!("element budget of {limit} exhausted"),
                e => e.to_string(),
            };
            return unknown(&inst, max_n, rounds, reason);
        }
        let mut stat = RoundStat { round: r, depth, elements: inst.num_elements(), atoms: inst.num_atoms(), levels: Vec::new() };
        if let Some((d, w)) = eval_ucq_chase(&inst, &query.annotated) {
            let ok = check_witness(inst.facts(), &query.annotated.disjuncts[d], &w, &|c| inst.constant(c));
            rounds.push(stat);
            if !ok {
                return unknown(&inst, max_n, rounds, "witness failed re-verification".to_string());
            }
            return Verdict {
                outcome: Outcome::Entailed,
                depth: inst.rounds(),
                max_n,
                witness: Some((d, w)),
                countermodel: None,
                rounds,
                reason: format!("disjunct {} holds in the chase", d + 1),
            };
        }
        for n in 0..=r as usize {
            if out_of_time(start) {
                rounds.push(stat);
                return unknown(&inst, max_n, rounds, "time budget exhausted".to_string());
            }
            if n < models.len() {
                continue;
            }
            let model = build_model(p.annotated.clone(), n, ModelConfig { chase: chase_config, ..ModelConfig::default() });
            let Ok(model) = model else {
                models.push(None);
                stat.levels.push((n, 0, false));
                continue;
            };
            let s = model.structure;
            stat.levels.push((n, s.domain.len(), true));
            max_n = Some(n);
            if eval_ucq_structure(&s, &query.annotated).is_none() {
                let source = p.project(&s);
                if p.verify_countermodel(&source, &query.source).is_empty() {
                    rounds.push(stat);
                    return Verdict {
                        outcome: Outcome::NotEntailed,
                        depth: inst.rounds(),
                        max_n,
                        witness: None,
                        countermodel: Some(Countermodel { n, structure: s, source }),
                        rounds,
                        reason: format!("refuted by the level-{n} model"),
                    };
                }
                stat.levels.last_mut().unwrap().2 = false;
            }
            models.push(Some(s));
        }
        rounds.push(stat);
        if out_of_time(start) {
            return unknown(&inst, max_n, rounds, "time budget exhausted".to_string());
        }
    }
    unknown(&inst, max_n, rounds, "round limit reached".to_string())
}

fn unknown(inst: &ChaseInstance, max_n: Option<usize>, rounds: Vec<RoundStat>, reason: String) -> Verdict {
    Verdict { outcome: Outcome::Unknown, depth: inst.rounds(), max_n, witness: None, countermodel: None, rounds, reason }
}

/// Tab-separated table of query truth in the level-n quotients and in the
/// bounded chase, with checks of model validity and monotone falsity.
pub fn convergence_report(p: &Pipeline, name: &str, n_max: usize, k_max: u32, config: ModelConfig) -> String {
    let mut out = String::new();
    let sig = &p.annotated.signature;
    let mut models = Vec::new();
    let mut all_models = true;
    for n in 0..=n_max {
        match build_model(p.annotated.clone(), n, config) {
            Ok(m) => {
                let _ = writeln!(
                    out,
                    "{name}\tmodel\t{n}\trounds={}\tclasses={}\tatoms={}\tis_model={}",
                    m.rounds,
                    m.structure.domain.len(),
                    m.structure.atoms.len(),
                    is_model(&m.structure, &p.annotated)
                );
                models.push(Some(m.structure));
            }
            Err(e) => {
                all_models = false;
                let _ = writeln!(out, "{name}\tmodel\t{n}\terror={e}");
                models.push(None);
            }
        }
    }
    let chase = crate::chase::chase(p.annotated.clone(), k_max, config.chase);
    let mut monotone = true;
    for q in &p.queries {
        let qn = &q.source.name;
        let holds: Vec<Option<bool>> =
            models.iter().map(|m| m.as_ref().map(|m| eval_ucq_structure(m, &q.annotated).is_some())).collect();
        let cells: Vec<String> =
            holds.iter().map(|h| h.map_or("?".to_string(), |b| (b as u8).to_string())).collect();
        for w in holds.windows(2) {
            if let [Some(false), Some(true)] = w {
                monotone = false;
            }
        }
        let in_chase = match &chase {
            Ok(c) => (eval_ucq_chase(c, &q.annotated).is_some() as u8).to_string(),
            Err(_) => "?".to_string(),
        };
        let least = match &chase {
            Ok(c) if eval_ucq_chase(c, &q.annotated).is_none() => {
                holds.iter().position(|h| *h == Some(false)).map_or("-".to_string(), |n| n.to_string())
            }
            _ => "-".to_string(),
        };
        // Some disjunct true in every level whenever the union is.
        let disjunct_ok = if holds.iter().all(|h| *h == Some(true)) {
            q.annotated.disjuncts.iter().any(|d| {
                models.iter().all(|m| m.as_ref().is_some_and(|m| eval_cq_structure(m, d).is_some()))
            })
        } else {
            true
        };
        let _ = writeln!(
            out,
            "{name}\tquery\t{qn}\tlevels={}\tchase@{k_max}={in_chase}\tleast_refuting={least}\tcyclic={}\tdisjunct={}",
            cells.join(","),
            q.is_cyclic(sig) as u8,
            if disjunct_ok { "ok" } else { "FAIL" }
        );
    }
    let _ = writeln!(out, "{name}\tcheck\tmodels={}\tmonotone={}", ok(all_models), ok(monotone));
    out
}

fn ok(b: bool) -> &'static str {
    if b {
        "ok"
    } else {
        "FAIL"
    }
}

/// Parenthood-only form of a single conjunctive query over annotated predicates.
pub fn parenthood_form(p: &Pipeline, cq: &Cq) -> Result<Cq, Error> {
    Ok(to_parenthood_query(cq, &p.annotated, &p.map)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::syntax::{parse_instance, parse_program, parse_queries};

    fn setup(program: &str, db: &str, queries: &str) -> Pipeline {
        let mut prog = parse_program(program).unwrap();
        let mut sig = prog.signature.clone();
        let qs = parse_queries(queries, &mut sig).unwrap();
        let db = parse_instance(db, &mut sig).unwrap();
        prog.signature = sig;
        pipeline(&prog, &db, &qs).unwrap()
    }

    const CHAIN: &str = "true -> exists x. N(x).\nN(x) -> exists y. E(y,x).\nE(y,x) -> N(y).";

    #[test]
    fn chain_verdicts() {
        let p = setup(
            CHAIN,
            "",
            "query edge { E(u,v) }.\nquery loop { E(u,u) }.\nquery path { E(u,v), E(v,w) }.\nquery back { E(u,v), E(v,u) }.",
        );
        let v: Vec<Outcome> = p.queries.iter().map(|q| decide(&p, q, DecideConfig::default()).outcome).collect();
        assert_eq!(v, vec![Outcome::Entailed, Outcome::NotEntailed, Outcome::Entailed, Outcome::NotEntailed]);
        assert!(p.queries[1].is_cyclic(&p.annotated.signature));
        assert!(!p.queries[0].is_cyclic(&p.annotated.signature));
    }

    #[test]
    fn countermodel_is_projected_and_verified() {
        let p = setup(CHAIN, "", "query loop { E(u,u) }.");
        let v = decide(&p, &p.queries[0], DecideConfig::default());
        let cm = v.countermodel.unwrap();
        assert!(p.verify_countermodel(&cm.source, &p.queries[0].source).is_empty());
        assert!(is_model(&cm.source, &p.source));
    }

    #[test]
    fn database_and_constants() {
        let p = setup(
            "R(x, y) -> exists z. R(z, x).\nR(x, A) -> S(x).",
            "R(B, A).",
            "query s { S(B) }.\nquery t { S(A) }.\nquery r { R(u, B) }.",
        );
        let v: Vec<Outcome> = p.queries.iter().map(|q| decide(&p, q, DecideConfig::default()).outcome).collect();
        assert_eq!(v, vec![Outcome::Entailed, Outcome::NotEntailed, Outcome::Entailed]);
    }

    #[test]
    fn refuses_joins() {
        let prog = parse_program("A(x), B(x) -> C(x).").unwrap();
        assert!(matches!(pipeline(&prog, &[], &[]), Err(Error::Family(_))));
    }

    #[test]
    fn report_is_deterministic() {
        let p = setup(CHAIN, "", "query edge { E(u,v) }.\nquery loop { E(u,u) }.");
        let a = convergence_report(&p, "chain", 2, 6, ModelConfig::default());
        let b = convergence_report(&p, "chain", 2, 6, ModelConfig::default());
        assert_eq!(a, b);
        assert!(a.contains("chain\tquery\tloop\tlevels=1,0,0"), "{a}");
        assert!(a.ends_with("chain\tcheck\tmodels=ok\tmonotone=ok\n"));
    }
}
