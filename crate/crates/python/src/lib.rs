//! Python bindings: corpora, training, incremental inference and metrics.
//!
//! Tokens and labels cross the boundary as strings; timelines come back as
//! lists of label lists, one per step.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyIOError, PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use tapir_core::config::Config;
use tapir_core::corpus::synth::{generate, SynthConfig};
use tapir_core::corpus::{load_conll, write_conll};
use tapir_core::engine::PrefixTimeline;
use tapir_core::evalkit::{self, metrics_report, SpanCounts};
use tapir_core::layers::{Action, AttnMode};
use tapir_core::signal::{self, ActionsFile};
use tapir_core::{corpus, engine, trainer, Error};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Config(_)
        | Error::Data(_)
        | Error::Parse { .. }
        | Error::HashMismatch { .. }
        | Error::LabelMismatch(_)
        | Error::Empty(_)
        | Error::Checkpoint(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for tapir_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn config(path: Option<PathBuf>) -> PyResult<Config> {
    match path {
        Some(p) => Config::load(p).py(),
        None => Ok(Config::default()),
    }
}

fn json_to_py(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Labelled sentences.
#[pyclass(module = "tapir")]
struct Corpus {
    inner: corpus::Corpus,
}

#[pymethods]
impl Corpus {
    /// Reads a CoNLL file: one `token label` pair per line, blank lines between sentences.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Corpus {
            inner: load_conll(path).py()?,
        })
    }

    /// Synthetic travel/social slot-filling requests.
    #[staticmethod]
    #[pyo3(signature = (sentences=2000, seed=42119392, min_len=0))]
    fn synthetic(sentences: usize, seed: u64, min_len: usize) -> Self {
        Corpus {
            inner: generate(&SynthConfig {
                sentences,
                seed,
                min_len,
                ..Default::default()
            }),
        }
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_conll(&self.inner, path).py()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(tokens, labels)` of sentence `i`.
    fn __getitem__(&self, i: usize) -> PyResult<(Vec<String>, Vec<String>)> {
        let s = self
            .inner
            .sentences
            .get(i)
            .ok_or_else(|| PyIndexError::new_err(format!("sentence {i} out of range")))?;
        Ok((s.tokens.clone(), s.labels.clone()))
    }

    /// SHA-256 of the corpus contents, as recorded in actions files.
    fn hash(&self) -> String {
        self.inner.hash()
    }

    fn __repr__(&self) -> String {
        format!("Corpus(sentences={}, tokens={})", self.inner.len(), self.inner.tokens())
    }
}

/// WRITE/REVISE sequences bound to a corpus hash.
#[pyclass(module = "tapir")]
struct Actions {
    inner: ActionsFile,
}

#[pymethods]
impl Actions {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Actions {
            inner: ActionsFile::load(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    #[getter]
    fn corpus_hash(&self) -> String {
        self.inner.corpus_hash.clone()
    }

    #[getter]
    fn sequences(&self) -> Vec<Vec<char>> {
        self.inner.sequences.iter().map(|s| symbols(s)).collect()
    }

    /// `(write_share, revise_share)`.
    fn distribution(&self) -> (f64, f64) {
        self.inner.distribution()
    }

    fn __len__(&self) -> usize {
        self.inner.sequences.len()
    }
}

fn symbols(actions: &[Action]) -> Vec<char> {
    actions.iter().map(|a| a.symbol()).collect()
}

/// Committed output after every step of one sentence.
#[pyclass(module = "tapir")]
struct Timeline {
    inner: PrefixTimeline,
    labels: corpus::LabelSet,
}

#[pymethods]
impl Timeline {
    #[getter]
    fn rows(&self) -> Vec<Vec<String>> {
        self.inner.rows.iter().map(|r| self.labels.decode(r)).collect()
    }

    #[getter]
    fn actions(&self) -> Vec<char> {
        symbols(&self.inner.actions)
    }

    #[getter]
    fn scores(&self) -> Vec<f64> {
        self.inner.scores.clone()
    }

    #[getter]
    fn reviser_calls(&self) -> usize {
        self.inner.counters.reviser_calls
    }

    /// Final labels.
    fn output(&self) -> PyResult<Vec<String>> {
        Ok(self.labels.decode(&engine::finalize(&self.inner).py()?))
    }

    /// `(edit_overhead, correction_time, relative_correctness)`.
    fn scores_eo_ct_rc(&self) -> PyResult<(f64, f64, f64)> {
        evalkit::incremental_scores(&self.inner).py()
    }

    fn dump(&self) -> String {
        self.inner.dump(&self.labels)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// A full-sequence labeller: reviser, restart reference or action generator.
#[pyclass(module = "tapir")]
struct Labeler {
    inner: engine::Labeler,
}

#[pymethods]
impl Labeler {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Labeler {
            inner: engine::Labeler::load(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.names().to_vec()
    }

    /// Labels for a whole sentence; `causal=True` masks future tokens.
    #[pyo3(signature = (tokens, causal=false))]
    fn predict(&self, tokens: Vec<String>, causal: bool) -> PyResult<Vec<String>> {
        let ids = self.ids(&tokens);
        let mode = if causal { AttnMode::Causal } else { AttnMode::Full };
        Ok(self.inner.labels.decode(&self.inner.predict(&ids, mode).py()?))
    }

    /// Reruns the labeller on every prefix of `tokens`.
    fn restart_incremental(&self, tokens: Vec<String>) -> PyResult<Timeline> {
        let ids = self.ids(&tokens);
        Ok(Timeline {
            inner: self.inner.run_restart_incremental(&ids, AttnMode::Full).py()?,
            labels: self.inner.labels.clone(),
        })
    }

    fn evaluate(&self, py: Python<'_>, corpus: &Corpus) -> PyResult<Py<PyAny>> {
        let mut tls = Vec::with_capacity(corpus.inner.len());
        let mut gold = Vec::with_capacity(corpus.inner.len());
        for s in &corpus.inner.sentences {
            tls.push(self.inner.run_restart_incremental(&corpus::encode(s, &self.inner.vocab), AttnMode::Full).py()?);
            gold.push(self.inner.labels.encode(&s.labels).py()?);
        }
        json_to_py(py, &metrics_report(&tls, &gold, &self.inner.labels).py()?.to_json())
    }
}

impl Labeler {
    fn ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.inner.vocab.id(t)).collect()
    }
}

/// The incremental labeller with its revision policy.
#[pyclass(module = "tapir")]
struct Model {
    inner: engine::TapirModel,
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Model {
            inner: engine::TapirModel::load(path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).py()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels.names().to_vec()
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.config.tau
    }

    #[getter]
    fn delay(&self) -> usize {
        self.inner.delay
    }

    /// Processes `tokens` one at a time. `tau` defaults to the configured threshold.
    #[pyo3(signature = (tokens, tau=None))]
    fn run(&self, tokens: Vec<String>, tau: Option<f64>) -> PyResult<Timeline> {
        let ids: Vec<usize> = tokens.iter().map(|t| self.inner.vocab.id(t)).collect();
        let tau = self.check_tau(tau)?;
        Ok(Timeline {
            inner: self.inner.run_sentence(&ids, tau, self.inner.delay).py()?,
            labels: self.inner.labels.clone(),
        })
    }

    /// Incremental metrics over a corpus, as a dict.
    #[pyo3(signature = (corpus, tau=None))]
    fn evaluate(&self, py: Python<'_>, corpus: &Corpus, tau: Option<f64>) -> PyResult<Py<PyAny>> {
        let tau = self.check_tau(tau)?;
        let mut tls = Vec::with_capacity(corpus.inner.len());
        let mut gold = Vec::with_capacity(corpus.inner.len());
        for s in &corpus.inner.sentences {
            tls.push(self.inner.run_sentence(&corpus::encode(s, &self.inner.vocab), tau, self.inner.delay).py()?);
            gold.push(self.inner.labels.encode(&s.labels).py()?);
        }
        json_to_py(py, &metrics_report(&tls, &gold, &self.inner.labels).py()?.to_json())
    }

    /// The reviser inside this model, as a standalone labeller.
    fn reviser(&self) -> PyResult<Labeler> {
        Ok(Labeler {
            inner: self.inner.reviser_labeler().py()?,
        })
    }
}

impl Model {
    fn check_tau(&self, tau: Option<f64>) -> PyResult<f64> {
        let tau = tau.unwrap_or(self.inner.config.tau);
        if !(0.0..=1.0).contains(&tau) {
            return Err(PyValueError::new_err(format!("tau must be in [0, 1], got {tau}")));
        }
        Ok(tau)
    }
}

/// Trains the one-layer linear-attention generator and derives actions for `corpus`.
#[pyfunction]
#[pyo3(signature = (corpus, config=None))]
fn gen_actions(corpus: &Corpus, config: Option<PathBuf>) -> PyResult<(Actions, Labeler)> {
    let cfg = self::config(config)?;
    let (lt, _) = signal::train_action_generator(&corpus.inner, &cfg, &mut |_| {}).py()?;
    let actions = signal::generate_actions(&lt, &corpus.inner).py()?;
    Ok((Actions { inner: actions }, Labeler { inner: lt }))
}

#[pyfunction]
#[pyo3(signature = (corpus, config=None))]
fn train_reviser(corpus: &Corpus, config: Option<PathBuf>) -> PyResult<Labeler> {
    let cfg = self::config(config)?;
    let (m, _) = trainer::train_reviser(&corpus.inner, &cfg, &mut |_| {}).py()?;
    Ok(Labeler { inner: m })
}

#[pyfunction]
#[pyo3(signature = (corpus, config=None))]
fn train_reference(corpus: &Corpus, config: Option<PathBuf>) -> PyResult<Labeler> {
    let cfg = self::config(config)?;
    let (m, _) = trainer::train_reference(&corpus.inner, &cfg, &mut |_| {}).py()?;
    Ok(Labeler { inner: m })
}

#[pyfunction]
#[pyo3(signature = (corpus, actions, reviser, config=None))]
fn train_tapir(corpus: &Corpus, actions: &Actions, reviser: &Labeler, config: Option<PathBuf>) -> PyResult<Model> {
    let cfg = self::config(config)?;
    let (m, _) = trainer::train_tapir(&corpus.inner, &actions.inner, &reviser.inner, &cfg, &mut |_| {}).py()?;
    Ok(Model { inner: m })
}

/// `W`/`R` for each step of a timeline given as label-id rows.
#[pyfunction]
fn derive_actions(rows: Vec<Vec<usize>>) -> PyResult<Vec<char>> {
    Ok(symbols(&signal::derive_actions(&rows).py()?))
}

#[pyfunction]
fn edit_overhead(rows: Vec<Vec<usize>>) -> PyResult<f64> {
    evalkit::edit_overhead(&rows).py()
}

#[pyfunction]
fn correction_time(rows: Vec<Vec<usize>>) -> PyResult<f64> {
    evalkit::correction_time(&rows).py()
}

#[pyfunction]
fn relative_correctness(rows: Vec<Vec<usize>>) -> PyResult<f64> {
    evalkit::relative_correctness(&rows).py()
}

/// Exact-match span F1 over IOB label sequences.
#[pyfunction]
fn span_f1(pred: Vec<Vec<String>>, gold: Vec<Vec<String>>) -> PyResult<f64> {
    if pred.len() != gold.len() {
        return Err(PyValueError::new_err("pred and gold differ in length"));
    }
    let mut c = SpanCounts::default();
    for (p, g) in pred.iter().zip(&gold) {
        c.add(p, g).py()?;
    }
    Ok(c.f1())
}

#[pymodule]
fn tapir(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Corpus>()?;
    m.add_class::<Actions>()?;
    m.add_class::<Timeline>()?;
    m.add_class::<Labeler>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(gen_actions, m)?)?;
    m.add_function(wrap_pyfunction!(train_reviser, m)?)?;
    m.add_function(wrap_pyfunction!(train_reference, m)?)?;
    m.add_function(wrap_pyfunction!(train_tapir, m)?)?;
    m.add_function(wrap_pyfunction!(derive_actions, m)?)?;
    m.add_function(wrap_pyfunction!(edit_overhead, m)?)?;
    m.add_function(wrap_pyfunction!(correction_time, m)?)?;
    m.add_function(wrap_pyfunction!(relative_correctness, m)?)?;
    m.add_function(wrap_pyfunction!(span_f1, m)?)?;
    Ok(())
}
