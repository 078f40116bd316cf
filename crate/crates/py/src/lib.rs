//! Python module `crowdlabel_py`. Structured results come back as plain
//! dicts and lists (decoded from the same JSON the service returns).

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use crowdlabel::aggregation::{self, dawid_skene as ds, AggregationMethod, DsInit};
use crowdlabel::annotators::Connectors;
use crowdlabel::config::load_config;
use crowdlabel::export::export_dataset;
use crowdlabel::model::{ConfusionMatrix, LabelRecord};
use crowdlabel::orchestration::VerificationSize;
use crowdlabel::persist::{load_snapshot, persist_snapshot};
use crowdlabel::scenario::{format_round_table, Scenario};
use crowdlabel::selection::{coreset_select, Candidate};
use crowdlabel::slm::gmm::fit_gmm_1d;
use crowdlabel::{Error, StepOutcome};

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(_) | Error::Transport(_) | Error::Internal(_) => PyRuntimeError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn outcome<'py>(py: Python<'py>, o: &StepOutcome) -> PyResult<Bound<'py, PyAny>> {
    let v = match o {
        StepOutcome::Completed(s) => serde_json::json!({"status": "completed", "summary": s}),
        StepOutcome::AwaitingHuman { batch_id } => serde_json::json!({"status": "awaiting_human", "batch_id": batch_id}),
        StepOutcome::Terminated(r) => serde_json::json!({"status": "terminated", "reason": r}),
    };
    to_py(py, &v)
}

/// Exact amount in micro-dollars.
#[pyclass(name = "Money", frozen, eq, ord, hash, from_py_object)]
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct PyMoney(crowdlabel::Money);

#[pymethods]
impl PyMoney {
    #[new]
    fn new(amount: &str) -> PyResult<Self> {
        amount.parse().map(PyMoney).map_err(|e| PyValueError::new_err(format!("{e}")))
    }

    #[staticmethod]
    fn from_micros(micros: i64) -> Self {
        PyMoney(crowdlabel::Money::from_micros(micros))
    }

    #[getter]
    fn micros(&self) -> i64 {
        self.0.micros()
    }

    fn __add__(&self, other: &PyMoney) -> PyResult<PyMoney> {
        self.0.checked_add(other.0).map(PyMoney).ok_or_else(|| PyValueError::new_err("overflow"))
    }

    fn __sub__(&self, other: &PyMoney) -> PyMoney {
        PyMoney(self.0 - other.0)
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("Money('{}')", self.0)
    }
}

/// Synthetic run definition; keyword arguments override the defaults.
#[pyclass(name = "Scenario", skip_from_py_object)]
#[derive(Clone)]
struct PyScenario(Scenario);

#[pymethods]
impl PyScenario {
    #[new]
    #[pyo3(signature = (samples=None, classes=None, seed=None, budget=None, max_rounds=None, confidence_threshold=None))]
    fn new(
        samples: Option<usize>,
        classes: Option<usize>,
        seed: Option<u64>,
        budget: Option<&str>,
        max_rounds: Option<u32>,
        confidence_threshold: Option<f64>,
    ) -> PyResult<Self> {
        let mut sc = Scenario::default();
        if let Some(v) = samples {
            sc.samples = v;
        }
        if let Some(v) = classes {
            sc.classes = v;
        }
        if let Some(v) = seed {
            sc.seed = v;
        }
        if let Some(v) = budget {
            sc.budget = v.parse().map_err(|e| PyValueError::new_err(format!("{e}")))?;
        }
        if let Some(v) = max_rounds {
            sc.max_rounds = v;
        }
        if let Some(v) = confidence_threshold {
            sc.confidence_threshold = v;
        }
        Ok(PyScenario(sc))
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Scenario::from_toml(text).map(PyScenario).map_err(err)
    }

    #[getter]
    fn samples(&self) -> usize {
        self.0.samples
    }

    #[getter]
    fn classes(&self) -> usize {
        self.0.classes
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn class_names(&self) -> Vec<String> {
        self.0.class_names()
    }

    fn engine(&self) -> PyResult<PyEngine> {
        let state = self.0.build().map_err(err)?;
        crowdlabel::Engine::new(state, &Connectors::default()).map(PyEngine).map_err(err)
    }
}

/// One task's round loop.
#[pyclass(name = "Engine", unsendable)]
struct PyEngine(crowdlabel::Engine);

#[pymethods]
impl PyEngine {
    /// Task TOML whose `dataset` path is relative to the file.
    #[staticmethod]
    fn from_config(path: PathBuf) -> PyResult<Self> {
        let state = load_config(&path).map_err(err)?;
        crowdlabel::Engine::new(state, &Connectors::default()).map(PyEngine).map_err(err)
    }

    #[staticmethod]
    fn from_snapshot(path: PathBuf) -> PyResult<Self> {
        let state = load_snapshot(&path).map_err(err)?;
        crowdlabel::Engine::new(state, &Connectors::default()).map(PyEngine).map_err(err)
    }

    fn save_snapshot(&self, path: PathBuf) -> PyResult<()> {
        persist_snapshot(self.0.state(), &path).map_err(err)
    }

    #[getter]
    fn round(&self) -> u32 {
        self.0.state().round
    }

    #[getter]
    fn termination(&self) -> Option<String> {
        self.0.state().termination.map(|t| t.to_string())
    }

    fn step<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let o = self.0.step().map_err(err)?;
        outcome(py, &o)
    }

    #[pyo3(signature = (max_rounds=None))]
    fn run<'py>(&mut self, py: Python<'py>, max_rounds: Option<u32>) -> PyResult<Vec<Bound<'py, PyAny>>> {
        let outs = self.0.run(max_rounds).map_err(err)?;
        outs.iter().map(|o| outcome(py, o)).collect()
    }

    fn history<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.state().history)
    }

    fn round_table(&self) -> String {
        format_round_table(&self.0.state().history)
    }

    fn beliefs<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        let m: BTreeMap<&str, &Vec<f64>> = self.0.state().beliefs.iter().map(|(k, b)| (k.as_str(), &b.probs)).collect();
        to_py(py, &m)
    }

    /// `(budget, spent, remaining)`.
    fn budget(&self) -> (PyMoney, PyMoney, PyMoney) {
        let l = &self.0.state().ledger;
        (PyMoney(l.budget), PyMoney(l.spent), PyMoney(l.remaining()))
    }

    #[pyo3(signature = (since=0))]
    fn messages<'py>(&self, py: Python<'py>, since: u64) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.state().messages.since(since))
    }

    /// JSON lines, one per sample, ordered by sample id.
    fn export(&self) -> PyResult<String> {
        export_dataset(self.0.state()).map_err(err)
    }

    fn export_human_batch(&self, batch_id: &str) -> PyResult<String> {
        self.0.export_human_batch(batch_id).map_err(err)
    }

    fn import_human_batch<'py>(&mut self, py: Python<'py>, content: &str) -> PyResult<Bound<'py, PyAny>> {
        let o = self.0.import_human_batch(content).map_err(err)?;
        outcome(py, &o)
    }

    #[pyo3(signature = (count=None, fraction=None))]
    fn flag_final_verification(&mut self, count: Option<usize>, fraction: Option<f64>) -> PyResult<Vec<String>> {
        let size = match (count, fraction) {
            (Some(c), None) => VerificationSize::Count(c),
            (None, Some(f)) => VerificationSize::Fraction(f),
            _ => return Err(PyValueError::new_err("give exactly one of count or fraction")),
        };
        let batch = self.0.flag_final_verification(size).map_err(err)?;
        Ok(batch.items.into_iter().map(|i| i.sample_id.0).collect())
    }
}

fn records_from(rows: Vec<(String, String, usize)>) -> Vec<LabelRecord> {
    rows.into_iter()
        .enumerate()
        .map(|(i, (sample, annotator, label))| LabelRecord {
            sample_id: sample.as_str().into(),
            annotator_id: annotator.as_str().into(),
            round: 1,
            label,
            cost: crowdlabel::Money::ZERO,
            timestamp: i as u64,
        })
        .collect()
}

/// Dawid-Skene EM over `(sample_id, annotator_id, label)` rows. Returns
/// `beliefs`, `matrices`, `prior`, `iterations` and `objective`.
#[pyfunction]
#[pyo3(signature = (records, classes, max_iters=100, tolerance=1e-6, smoothing=true, init=None))]
fn dawid_skene<'py>(
    py: Python<'py>,
    records: Vec<(String, String, usize)>,
    classes: usize,
    max_iters: usize,
    tolerance: f64,
    smoothing: bool,
    init: Option<BTreeMap<String, Vec<Vec<f64>>>>,
) -> PyResult<Bound<'py, PyAny>> {
    let method = AggregationMethod { ds_max_iters: max_iters, ds_tolerance: tolerance, smoothing, ..Default::default() };
    let init = init.map(|m| DsInit {
        matrices: m
            .into_iter()
            .map(|(id, rows)| {
                let support = vec![0; rows.len()];
                (id.as_str().into(), ConfusionMatrix { annotator_id: id.as_str().into(), rows, support })
            })
            .collect(),
        prior: None,
    });
    let out = ds(&records_from(records), classes, init.as_ref(), &method).map_err(err)?;
    let matrices: BTreeMap<String, Vec<Vec<f64>>> = out.matrices.into_iter().map(|(k, m)| (k.0, m.rows)).collect();
    let beliefs: BTreeMap<String, Vec<f64>> = out.beliefs.into_iter().map(|(k, v)| (k.0, v)).collect();
    to_py(
        py,
        &serde_json::json!({
            "beliefs": beliefs,
            "matrices": matrices,
            "prior": out.prior,
            "iterations": out.iterations,
            "converged": out.converged,
            "objective": out.objective,
        }),
    )
}

/// One Bayes step with confusion matrix rows indexed by true class.
#[pyfunction]
fn bayesian_update(prior: Vec<f64>, matrix: Vec<Vec<f64>>, observed: usize) -> PyResult<Vec<f64>> {
    let m = ConfusionMatrix { annotator_id: "m".into(), support: vec![0; matrix.len()], rows: matrix };
    aggregation::bayesian_update(&prior, &m, observed).map_err(err)
}

#[pyfunction]
fn majority_vote(labels: Vec<usize>) -> PyResult<usize> {
    aggregation::majority_vote(&labels).map_err(err)
}

/// Greedy k-center picks among `(id, embedding, confidence)` candidates.
#[pyfunction]
fn coreset(candidates: Vec<(String, Vec<f64>, f64)>, labeled: Vec<Vec<f64>>, budget: usize) -> PyResult<Vec<String>> {
    let cands: Vec<Candidate> = candidates
        .into_iter()
        .map(|(id, embedding, confidence)| Candidate { sample_id: id.as_str().into(), embedding, confidence })
        .collect();
    Ok(coreset_select(&cands, &labeled, budget).map_err(err)?.into_iter().map(|s| s.0).collect())
}

/// Two-component GMM over per-sample losses; returns the clean mask.
#[pyfunction]
#[pyo3(signature = (losses, max_iters=100))]
fn gmm_clean_mask(losses: Vec<f64>, max_iters: usize) -> Vec<bool> {
    fit_gmm_1d(&losses, max_iters).clean
}

#[pymodule]
fn crowdlabel_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMoney>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(dawid_skene, m)?)?;
    m.add_function(wrap_pyfunction!(bayesian_update, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote, m)?)?;
    m.add_function(wrap_pyfunction!(coreset, m)?)?;
    m.add_function(wrap_pyfunction!(gmm_clean_mask, m)?)?;
    Ok(())
}
