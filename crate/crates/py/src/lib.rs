//! Python bindings for `fcchase`.

use std::sync::Arc;
use std::time::Duration;

use fcchase::analysis::{find_sticky_marking, is_joinless, specialize_constants, DEFAULT_SPECIALIZATION_BUDGET};
use fcchase::chase::{ChaseConfig, ChaseInstance};
use fcchase::driver::{self, DecideConfig, PipelineQuery};
use fcchase::query::{eval_ucq_structure, is_cyclic, normalize, QueryError, DEFAULT_CHOICE_BUDGET};
use fcchase::quotient::{build_model, FiniteStructure, ModelConfig};
use fcchase::syntax::{parse_problem, write_program, write_queries, Signature, Ucq};
use pyo3::exceptions::{PyKeyError, PyValueError};
use pyo3::prelude::*;

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A parsed program with its queries and database.
#[pyclass(frozen)]
struct Problem {
    inner: fcchase::syntax::Problem,
}

#[pymethods]
impl Problem {
    #[new]
    #[pyo3(signature = (program, queries = "", database = ""))]
    fn new(program: &str, queries: &str, database: &str) -> PyResult<Self> {
        Ok(Problem { inner: parse_problem(program, queries, database).map_err(err)? })
    }

    #[getter]
    fn program(&self) -> String {
        write_program(&self.inner.program)
    }

    #[getter]
    fn query_names(&self) -> Vec<String> {
        self.inner.queries.iter().map(|q| q.name.clone()).collect()
    }

    /// `(rule, variable)` for every variable repeated in a rule body; rules count from 1.
    fn join_violations(&self) -> Vec<(usize, String)> {
        is_joinless(&self.inner.program).1.into_iter().map(|v| (v.rule + 1, v.var.to_string())).collect()
    }

    fn is_joinless(&self) -> bool {
        is_joinless(&self.inner.program).0
    }

    /// Immortal positions as `(predicate, position)` with positions from 1, or None.
    fn sticky_marking(&self) -> Option<Vec<(String, usize)>> {
        let sig = &self.inner.program.signature;
        find_sticky_marking(&self.inner.program)
            .map(|m| m.immortal.iter().map(|(p, i)| (sig.name(*p).to_string(), i + 1)).collect())
    }

    /// The constant-free program and its dictionary.
    fn specialize(&self) -> PyResult<(String, String)> {
        let s = specialize_constants(&self.inner.database, &self.inner.program, DEFAULT_SPECIALIZATION_BUDGET).map_err(err)?;
        Ok((write_program(&s.program), s.dictionary.to_text(&s.program.signature)))
    }

    fn pipeline(&self) -> PyResult<Pipeline> {
        let p = &self.inner;
        Ok(Pipeline { inner: Arc::new(driver::pipeline(&p.program, &p.database, &p.queries).map_err(err)?) })
    }
}

/// Specialized, canonicalized and annotated form of a problem.
#[pyclass(frozen)]
struct Pipeline {
    inner: Arc<driver::Pipeline>,
}

impl Pipeline {
    fn query(&self, name: &str) -> PyResult<&PipelineQuery> {
        self.inner.queries.iter().find(|q| q.source.name == name).ok_or_else(|| PyKeyError::new_err(name.to_string()))
    }
}

#[pymethods]
impl Pipeline {
    #[getter]
    fn annotated(&self) -> String {
        write_program(&self.inner.annotated)
    }

    #[getter]
    fn query_names(&self) -> Vec<String> {
        self.inner.queries.iter().map(|q| q.source.name.clone()).collect()
    }

    /// The query over the annotated signature, in parenthood form.
    fn parenthood_query(&self, name: &str) -> PyResult<String> {
        Ok(write_queries(&self.inner.annotated.signature, &[self.query(name)?.parenthood.clone()]))
    }

    fn is_cyclic(&self, name: &str) -> PyResult<bool> {
        Ok(self.query(name)?.is_cyclic(&self.inner.annotated.signature))
    }

    /// Normal-form candidates of every acyclic disjunct, as query text.
    #[pyo3(signature = (name, budget = DEFAULT_CHOICE_BUDGET))]
    fn normalize(&self, name: &str, budget: usize) -> PyResult<Vec<String>> {
        let q = self.query(name)?;
        let sig = &self.inner.annotated.signature;
        let mut out = Vec::new();
        for cq in &q.parenthood.disjuncts {
            if is_cyclic(cq, sig).map_err(err)? {
                continue;
            }
            match normalize(cq, &self.inner.annotated, budget) {
                Ok(n) => {
                    for c in n.candidates {
                        out.push(write_queries(sig, &[Ucq::new(name, vec![c.query])]));
                    }
                }
                Err(QueryError::Cyclic) => {}
                Err(e) => return Err(err(e)),
            }
        }
        Ok(out)
    }

    #[pyo3(signature = (max_elements = fcchase::chase::DEFAULT_MAX_ELEMENTS))]
    fn chase(&self, max_elements: usize) -> Chase {
        Chase { inner: ChaseInstance::new(self.inner.annotated.clone(), ChaseConfig { max_elements }) }
    }

    #[pyo3(signature = (n, max_elements = fcchase::chase::DEFAULT_MAX_ELEMENTS))]
    fn model(&self, n: usize, max_elements: usize) -> PyResult<Model> {
        let config = ModelConfig { chase: ChaseConfig { max_elements }, ..ModelConfig::default() };
        let m = build_model(self.inner.annotated.clone(), n, config).map_err(err)?;
        Ok(Model { n, structure: m.structure, pipeline: self.inner.clone() })
    }

    #[pyo3(signature = (name, max_elements = 1_000_000, max_seconds = None, max_rounds = 16))]
    fn decide(&self, name: &str, max_elements: usize, max_seconds: Option<f64>, max_rounds: u32) -> PyResult<Verdict> {
        let q = self.query(name)?;
        let config = DecideConfig {
            max_elements,
            max_time: max_seconds.map(Duration::from_secs_f64),
            max_rounds,
            ..DecideConfig::default()
        };
        let v = driver::decide(&self.inner, q, config);
        let countermodel = v.countermodel.as_ref().map(|c| c.source.to_text(&self.inner.source.signature));
        let witness = v
            .witness
            .as_ref()
            .map(|(_, w)| w.iter().map(|(x, e)| (x.to_string(), e.0)).collect())
            .unwrap_or_default();
        Ok(Verdict {
            outcome: v.outcome.as_str().to_string(),
            depth: v.depth,
            max_n: v.max_n,
            reason: v.reason,
            countermodel,
            witness,
        })
    }

    /// Tab-separated convergence table for every query.
    #[pyo3(signature = (name = "problem", nmax = 3, kmax = 8))]
    fn report(&self, name: &str, nmax: usize, kmax: u32) -> String {
        driver::convergence_report(&self.inner, name, nmax, kmax, ModelConfig::default())
    }
}

/// A bounded chase of the annotated program.
#[pyclass]
struct Chase {
    inner: ChaseInstance,
}

#[pymethods]
impl Chase {
    fn run_to(&mut self, depth: u32) -> PyResult<()> {
        self.inner.run_to(depth).map_err(err)
    }

    #[getter]
    fn rounds(&self) -> u32 {
        self.inner.rounds()
    }

    #[getter]
    fn num_atoms(&self) -> usize {
        self.inner.num_atoms()
    }

    #[getter]
    fn num_elements(&self) -> usize {
        self.inner.num_elements()
    }

    fn trace(&self) -> String {
        self.inner.trace()
    }
}

/// A level-n quotient model.
#[pyclass(frozen)]
struct Model {
    #[pyo3(get)]
    n: usize,
    structure: FiniteStructure,
    pipeline: Arc<driver::Pipeline>,
}

impl Model {
    fn sig(&self) -> &Signature {
        &self.pipeline.annotated.signature
    }
}

#[pymethods]
impl Model {
    #[getter]
    fn domain_size(&self) -> usize {
        self.structure.domain.len()
    }

    #[getter]
    fn num_atoms(&self) -> usize {
        self.structure.atoms.len()
    }

    /// Truth of a named query of the pipeline.
    fn holds(&self, name: &str) -> PyResult<bool> {
        let q = self
            .pipeline
            .queries
            .iter()
            .find(|q| q.source.name == name)
            .ok_or_else(|| PyKeyError::new_err(name.to_string()))?;
        Ok(eval_ucq_structure(&self.structure, &q.annotated).is_some())
    }

    #[pyo3(signature = (source = false))]
    fn text(&self, source: bool) -> String {
        if source {
            self.pipeline.project(&self.structure).to_text(&self.pipeline.source.signature)
        } else {
            self.structure.to_text(self.sig())
        }
    }
}

#[pyclass(frozen, get_all)]
struct Verdict {
    outcome: String,
    depth: u32,
    max_n: Option<usize>,
    reason: String,
    /// The countermodel over the source signature, for refuted queries.
    countermodel: Option<String>,
    /// Variable to chase element, for entailed queries.
    witness: Vec<(String, u32)>,
}

#[pymethods]
impl Verdict {
    fn __repr__(&self) -> String {
        format!("Verdict({}, depth={}, reason={:?})", self.outcome, self.depth, self.reason)
    }
}

#[pymodule]
fn pyfcchase(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Pipeline>()?;
    m.add_class::<Chase>()?;
    m.add_class::<Model>()?;
    m.add_class::<Verdict>()?;
    Ok(())
}
