//! Python bindings. Structured results cross the boundary as JSON-shaped
//! Python objects, so dicts mirror the Rust serde layout exactly.

use pyo3::exceptions::{PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;

use emoforge::boosting;
use emoforge::corpus::{self, EmotionLabel, SplitSpec};
use emoforge::evalkit::{self, GridSpec};
use emoforge::manifest::RunManifest;
use emoforge::pipeline::{self, ExperimentConfig, FeatureKind, ModelKind};
use emoforge::synth::{synth_corpus, SynthConfig};
use emoforge::textprep;
use emoforge::Error;

pub fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Lookup(_) => PyKeyError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| py_err(e.into()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn label(name: &str) -> PyResult<EmotionLabel> {
    name.parse().map_err(py_err)
}

fn experiment_config(json: Option<&str>) -> PyResult<ExperimentConfig> {
    match json {
        None => Ok(ExperimentConfig::default()),
        Some(text) => serde_json::from_str(text).map_err(|e| py_err(e.into())),
    }
}

/// The eight label names in index order.
#[pyfunction]
fn labels() -> Vec<&'static str> {
    EmotionLabel::ALL.iter().map(|l| l.as_str()).collect()
}

#[pyclass(name = "Corpus", module = "emoforge_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyCorpus {
    pub inner: corpus::Corpus,
}

#[pymethods]
impl PyCorpus {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: corpus::load_corpus(path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: corpus::parse_corpus(text).map_err(py_err)?,
        })
    }

    fn to_jsonl(&self) -> PyResult<String> {
        corpus::corpus_to_jsonl(&self.inner).map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        corpus::save_corpus(&self.inner, path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn samples<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.samples())
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &corpus::corpus_stats(&self.inner))
    }

    /// Returns a new corpus; the receiver is left untouched.
    fn record_vote(&self, sample_id: &str, annotator: &str, vote: &str) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: self.inner.record_vote(sample_id, annotator, label(vote)?).map_err(py_err)?,
        })
    }

    fn adjudicate(&self, sample_id: &str, vote: &str) -> PyResult<Self> {
        Ok(PyCorpus {
            inner: self
                .inner
                .adjudicate(sample_id, corpus::AnnotatorRole::Lead, label(vote)?)
                .map_err(py_err)?,
        })
    }

    #[pyo3(signature = (ratios = (0.7, 0.15, 0.15), seed = 42))]
    fn split(&self, ratios: (f64, f64, f64), seed: u64) -> PyResult<Self> {
        let spec = SplitSpec::new([ratios.0, ratios.1, ratios.2], seed).map_err(py_err)?;
        Ok(PyCorpus {
            inner: corpus::stratified_split(&self.inner, &spec).map_err(py_err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Corpus({} samples)", self.inner.len())
    }
}

/// Seeded synthetic corpus; `skewed` uses sizes 200 down to 25.
#[pyfunction]
#[pyo3(signature = (seed = 2024, skewed = false, per_class = None))]
fn synth(seed: u64, skewed: bool, per_class: Option<Vec<usize>>) -> PyResult<PyCorpus> {
    let mut cfg = if skewed {
        SynthConfig::skewed(seed)
    } else {
        SynthConfig {
            seed,
            ..SynthConfig::default()
        }
    };
    if let Some(sizes) = per_class {
        cfg.per_class = sizes;
    }
    Ok(PyCorpus {
        inner: synth_corpus(&cfg).map_err(py_err)?,
    })
}

#[pyclass(name = "Preprocessor", module = "emoforge_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyPreprocessor {
    pub inner: textprep::Preprocessor,
}

#[pymethods]
impl PyPreprocessor {
    #[new]
    #[pyo3(signature = (stopwords = None, emoji_map = None))]
    fn new(stopwords: Option<&str>, emoji_map: Option<&str>) -> PyResult<Self> {
        let mut inner = textprep::Preprocessor::default();
        if let Some(path) = stopwords {
            inner.stopwords = textprep::StopWordList::load(path).map_err(py_err)?;
        }
        if let Some(path) = emoji_map {
            inner.emoji = textprep::EmojiMap::load(path).map_err(py_err)?;
        }
        Ok(PyPreprocessor { inner })
    }

    fn process(&self, text: &str) -> String {
        self.inner.process(text)
    }

    fn tokens(&self, text: &str) -> Vec<String> {
        self.inner.tokens(text).tokens().to_vec()
    }
}

#[pyclass(name = "Pipeline", module = "emoforge_py", frozen, skip_from_py_object)]
pub struct PyPipeline {
    pub inner: pipeline::Pipeline,
}

#[pymethods]
impl PyPipeline {
    /// `config` is an experiment config as JSON text; omitted fields keep their defaults.
    #[staticmethod]
    #[pyo3(signature = (corpus, feature, model, balance = false, seed = 0, config = None, preprocessor = None))]
    fn train(
        py: Python<'_>,
        corpus: &PyCorpus,
        feature: &str,
        model: &str,
        balance: bool,
        seed: u64,
        config: Option<&str>,
        preprocessor: Option<&PyPreprocessor>,
    ) -> PyResult<Self> {
        let feature: FeatureKind = feature.parse().map_err(py_err)?;
        let model: ModelKind = model.parse().map_err(py_err)?;
        let cfg = experiment_config(config)?;
        let pre = preprocessor.map_or_else(textprep::Preprocessor::default, |p| p.inner.clone());
        let manifest = RunManifest::new(
            "python-train",
            serde_json::json!({"feature": feature, "model": model, "balance": balance, "experiment": cfg}),
        )
        .with_seed("seed", seed);
        let data = &corpus.inner;
        let inner = py
            .detach(|| pipeline::Pipeline::train(data, pre, feature, model, balance, &cfg, seed, manifest))
            .map_err(py_err)?;
        Ok(PyPipeline { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyPipeline {
            inner: pipeline::Pipeline::load(path).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyPipeline {
            inner: pipeline::Pipeline::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    /// `(label, [(label, probability), ...])` in label-index order.
    fn predict(&self, text: &str) -> PyResult<(String, Vec<(String, f64)>)> {
        let p = self.inner.predict_text(text).map_err(py_err)?;
        let dist = EmotionLabel::ALL
            .iter()
            .zip(&p.distribution)
            .map(|(l, v)| (l.as_str().to_string(), *v))
            .collect();
        Ok((p.label.as_str().to_string(), dist))
    }

    fn evaluate<'py>(&self, py: Python<'py>, corpus: &PyCorpus) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &evalkit::evaluate_pipeline(&self.inner, &corpus.inner).map_err(py_err)?)
    }

    #[getter]
    fn feature(&self) -> String {
        self.inner.feature.to_string()
    }

    #[getter]
    fn model(&self) -> String {
        self.inner.model_kind.to_string()
    }

    #[getter]
    fn flags(&self) -> Vec<String> {
        self.inner.flags.clone()
    }
}

/// Macro-averaged report from label indices.
#[pyfunction]
#[pyo3(signature = (y_true, y_pred, num_classes = 8))]
fn evaluate_labels<'py>(
    py: Python<'py>,
    y_true: Vec<usize>,
    y_pred: Vec<usize>,
    num_classes: usize,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &evalkit::evaluate_labels(&y_true, &y_pred, num_classes).map_err(py_err)?)
}

/// Feature by model grid; returns the full result as a dict.
#[pyfunction]
#[pyo3(signature = (corpus, features = None, models = None, seed = 0, balance = false, config = None))]
fn run_grid<'py>(
    py: Python<'py>,
    corpus: &PyCorpus,
    features: Option<Vec<String>>,
    models: Option<Vec<String>>,
    seed: u64,
    balance: bool,
    config: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut spec = GridSpec {
        seed,
        balance,
        config: experiment_config(config)?,
        ..GridSpec::default()
    };
    if let Some(f) = features {
        spec.features = f.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(py_err)?;
    }
    if let Some(m) = models {
        spec.models = m.iter().map(|s| s.parse()).collect::<Result<_, _>>().map_err(py_err)?;
    }
    let data = &corpus.inner;
    let result = py.detach(|| evalkit::run_grid(data, &spec)).map_err(py_err)?;
    to_py(py, &result)
}

/// Capped multiclass weight of a member with weighted error `error`; None when rejected.
#[pyfunction]
#[pyo3(signature = (error, num_classes, cap = None))]
fn alpha_from_error(error: f64, num_classes: usize, cap: Option<f64>) -> Option<f64> {
    let cap = cap.unwrap_or(boosting::BoostConfig::default().alpha_cap);
    boosting::alpha_from_error(error, num_classes, cap)
}

#[pyfunction]
fn update_weights(weights: Vec<f64>, correct: Vec<bool>, alpha: f64) -> PyResult<Vec<f64>> {
    if weights.len() != correct.len() {
        return Err(PyValueError::new_err(format!(
            "{} weights but {} correctness flags",
            weights.len(),
            correct.len()
        )));
    }
    Ok(boosting::update_weights_from_correct(&weights, &correct, alpha))
}

/// Alpha-weighted vote; ties go to the lower class index.
#[pyfunction]
fn weighted_vote(alphas: Vec<f64>, votes: Vec<usize>, num_classes: usize) -> PyResult<usize> {
    if alphas.len() != votes.len() || votes.iter().any(|&v| v >= num_classes) {
        return Err(PyValueError::new_err("votes must pair with alphas and lie below num_classes"));
    }
    Ok(boosting::weighted_vote(&alphas, &votes, num_classes))
}

#[pymodule]
pub fn emoforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_class::<PyPreprocessor>()?;
    m.add_class::<PyPipeline>()?;
    m.add_function(wrap_pyfunction!(labels, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_labels, m)?)?;
    m.add_function(wrap_pyfunction!(run_grid, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_from_error, m)?)?;
    m.add_function(wrap_pyfunction!(update_weights, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_vote, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
