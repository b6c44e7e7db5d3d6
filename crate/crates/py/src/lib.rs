//! Python bindings for the domainrc toolkit: corpus loading and statistics,
//! marker-augmented encoding, scoring, PCA, and tiny-encoder experiments.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use domainrc::analysis;
use domainrc::corpus::{
    self, Corpus, DomainId, EntitySpan, Manifest, RelationInstance, Split, TypeMapping,
    ValidationOptions,
};
use domainrc::encoding::{EncodingContext, EncodingStrategy};
use domainrc::evaluation::{self, PredictionRecord};
use domainrc::tokenizer::Tokenizer;
use domainrc::training::{self, TrainConfig, TrainData};

fn to_py(err: domainrc::Error) -> PyErr {
    if err.is_data_error() {
        PyIOError::new_err(err.to_string())
    } else {
        PyValueError::new_err(err.to_string())
    }
}

fn parse_domain(name: &str) -> PyResult<DomainId> {
    name.parse().map_err(to_py)
}

fn parse_split(name: &str) -> PyResult<Split> {
    name.parse().map_err(to_py)
}

fn parse_strategy(name: &str) -> PyResult<EncodingStrategy> {
    name.parse().map_err(to_py)
}

fn span(raw: (usize, usize, String)) -> EntitySpan {
    EntitySpan::new(raw.0, raw.1, raw.2)
}

/// A loaded corpus.
#[pyclass(name = "Corpus")]
struct PyCorpus {
    inner: Corpus,
}

#[pymethods]
impl PyCorpus {
    /// Corpus statistics as a JSON string (same layout as `stats --json`).
    fn stats_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner.stats().to_json())
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// The statistics table as printed by the CLI.
    fn stats_table(&self) -> String {
        self.inner.stats().render_table()
    }

    fn num_sentences(&self, split: &str) -> PyResult<usize> {
        Ok(self.inner.sentences(parse_split(split)?).count())
    }

    fn num_instances(&self, split: &str) -> PyResult<usize> {
        Ok(self.inner.instances(parse_split(split)?).len())
    }

    /// Sorted relation-label vocabulary over all splits.
    fn labels(&self) -> PyResult<Vec<String>> {
        Ok(self
            .inner
            .label_vocabulary()
            .map_err(to_py)?
            .labels()
            .to_vec())
    }

    /// The `k` most frequent labels of a split, ties broken alphabetically.
    fn top_relations(&self, split: &str, k: usize) -> PyResult<Vec<String>> {
        let instances = self.inner.instances(parse_split(split)?);
        analysis::select_top_relations(&instances, k).map_err(to_py)
    }
}

/// Loads a corpus from a manifest JSON file or a corpus directory.
#[pyfunction]
fn load_corpus(path: &str) -> PyResult<PyCorpus> {
    let manifest = Manifest::from_path(path).map_err(to_py)?;
    let inner = Corpus::load(&manifest, &ValidationOptions::default()).map_err(to_py)?;
    Ok(PyCorpus { inner })
}

/// The six strategy names.
#[pyfunction]
fn strategies() -> Vec<&'static str> {
    EncodingStrategy::ALL.iter().map(|s| s.name()).collect()
}

/// Coarse type of a fine-grained entity type under the default mapping.
#[pyfunction]
fn map_fine_to_coarse(fine_type: &str) -> PyResult<String> {
    TypeMapping::default_mapping()
        .map(fine_type)
        .map(str::to_string)
        .map_err(to_py)
}

/// Surrounds head/tail spans (start, end, fine_type) with entity markers.
#[pyfunction]
#[pyo3(signature = (tokens, head, tail, strategy = "baseline"))]
fn insert_entity_markers(
    tokens: Vec<String>,
    head: (usize, usize, String),
    tail: (usize, usize, String),
    strategy: &str,
) -> PyResult<Vec<String>> {
    let instance = RelationInstance {
        id: "py#0".to_string(),
        domain: DomainId::News,
        tokens,
        head: span(head),
        tail: span(tail),
        label: String::new(),
    };
    let (tokens, _) = domainrc::encoding::insert_entity_markers(
        &instance,
        parse_strategy(strategy)?,
        TypeMapping::default_mapping(),
    )
    .map_err(to_py)?;
    Ok(tokens)
}

/// Prepends the domain marker token, e.g. `[MUSIC]`.
#[pyfunction]
fn prepend_domain_marker(tokens: Vec<String>, domain: &str) -> PyResult<Vec<String>> {
    Ok(domainrc::encoding::prepend_domain_marker(
        &tokens,
        parse_domain(domain)?,
    ))
}

fn records_from(gold: Vec<String>, predicted: Vec<String>) -> PyResult<Vec<PredictionRecord>> {
    if gold.len() != predicted.len() {
        return Err(PyValueError::new_err(format!(
            "gold has {} entries but predicted has {}",
            gold.len(),
            predicted.len()
        )));
    }
    Ok(gold
        .into_iter()
        .zip(predicted)
        .enumerate()
        .map(|(i, (g, p))| PredictionRecord {
            instance_id: format!("py{i}"),
            domain: DomainId::News,
            gold: g,
            predicted: p,
        })
        .collect())
}

/// Unweighted mean of per-label F1 over the labels present in gold or
/// predictions.
#[pyfunction]
fn macro_f1(gold: Vec<String>, predicted: Vec<String>) -> PyResult<f64> {
    evaluation::macro_f1(&records_from(gold, predicted)?).map_err(to_py)
}

/// Per-label precision/recall/F1/support as a nested dict.
#[pyfunction]
fn per_label_prf(
    py: Python<'_>,
    gold: Vec<String>,
    predicted: Vec<String>,
) -> PyResult<Py<PyAny>> {
    let records = records_from(gold, predicted)?;
    let labels = evaluation::present_labels(&records);
    let scores = evaluation::per_label_prf(&records, &labels);
    let json = serde_json::to_string(&scores).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let loads = py.import("json")?.getattr("loads")?;
    Ok(loads.call1((json,))?.unbind())
}

/// Mean-centered PCA; returns (points, explained_variance_ratio, axes).
#[pyfunction]
fn pca_fit_transform(
    vectors: Vec<Vec<f64>>,
    k: usize,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<Vec<f64>>)> {
    let projection = analysis::pca_fit_transform(&vectors, k).map_err(to_py)?;
    Ok((
        projection.points,
        projection.explained_variance_ratio,
        projection.axes,
    ))
}

/// Writes a small synthetic six-domain corpus in the release layout and
/// returns the manifest path.
#[pyfunction]
#[pyo3(signature = (dir, train = 6, dev = 3, test = 3, seed = 0))]
fn write_synthetic_corpus(
    dir: &str,
    train: usize,
    dev: usize,
    test: usize,
    seed: u64,
) -> PyResult<String> {
    let corpus = domainrc::synth::generate(&domainrc::synth::tiny_rows(train, dev, test), seed);
    domainrc::synth::write_corpus(&corpus, dir).map_err(to_py)?;
    Ok(std::path::Path::new(dir)
        .join("manifest.json")
        .display()
        .to_string())
}

/// Encodes relation instances of a corpus under one strategy; returns the
/// augmented token list and start-marker subword positions for the first
/// `limit` dev instances.
#[pyfunction]
#[pyo3(signature = (manifest, strategy = "marker_plus_coarse", split = "dev", limit = 4))]
fn encode_examples(
    py: Python<'_>,
    manifest: &str,
    strategy: &str,
    split: &str,
    limit: usize,
) -> PyResult<Py<PyAny>> {
    let manifest = Manifest::from_path(manifest).map_err(to_py)?;
    let corpus = Corpus::load(&manifest, &ValidationOptions::default()).map_err(to_py)?;
    let labels = corpus.label_vocabulary().map_err(to_py)?;
    let tokenizer = Tokenizer::from_words(
        corpus
            .sentences(Split::Train)
            .flat_map(|s| s.tokens.iter().map(String::as_str)),
        2,
    );
    let ctx = EncodingContext::new(
        parse_strategy(strategy)?,
        tokenizer,
        TypeMapping::default_mapping().clone(),
        labels,
        512,
    );

    let mut rows = Vec::new();
    for instance in corpus.instances(parse_split(split)?).iter().take(limit) {
        let aug = ctx.encode(instance).map_err(to_py)?;
        rows.push(serde_json::json!({
            "instance_id": aug.instance_id,
            "tokens": aug.tokens,
            "subword_ids": aug.subword_ids,
            "domain": instance.domain.name(),
            "e1_start_pos": aug.e1_start_pos,
            "e2_start_pos": aug.e2_start_pos,
            "gold_label": ctx.labels.label(aug.gold_label),
        }));
    }
    let json = serde_json::to_string(&rows).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let loads = py.import("json")?.getattr("loads")?;
    Ok(loads.call1((json,))?.unbind())
}

/// Trains the tiny encoder on a corpus and returns the aggregated dev report
/// as a JSON string. Meant for smoke tests and demos, not full-scale runs.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, strategy = "baseline", seeds = vec![1], max_epochs = 2,
                    learning_rate = 5e-3, encoder = "tiny:hidden=16,layers=1,heads=2,feed_forward=32,min_word_freq=1"))]
#[allow(clippy::too_many_arguments)]
fn run_tiny_experiment(
    manifest: &str,
    out_dir: &str,
    strategy: &str,
    seeds: Vec<u64>,
    max_epochs: usize,
    learning_rate: f64,
    encoder: &str,
) -> PyResult<String> {
    let manifest = Manifest::from_path(manifest).map_err(to_py)?;
    let corpus = Corpus::load(&manifest, &ValidationOptions::default()).map_err(to_py)?;
    let data = TrainData::from_corpus(&corpus).map_err(to_py)?;

    let mut config = TrainConfig {
        strategy: parse_strategy(strategy)?,
        encoder: encoder.to_string(),
        learning_rate,
        max_epochs,
        seeds,
        out_dir: out_dir.into(),
        overwrite: true,
        ..TrainConfig::default()
    };
    config.batch_size = 16;
    config.validate().map_err(to_py)?;

    let outcome = training::run_experiment(&config, &data).map_err(to_py)?;
    if let Some((seed, err)) = outcome.failures.first() {
        return Err(PyValueError::new_err(format!("seed {seed} failed: {err}")));
    }
    let aggregate = evaluation::aggregate_seeds(&outcome.reports()).map_err(to_py)?;
    serde_json::to_string_pretty(&aggregate).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Final-layer hidden states of a pretrained encoder directory for one
/// subword id sequence (inference mode). Lets converter scripts verify
/// their output against the source model.
#[pyfunction]
fn pretrained_encoder_states(dir: &str, ids: Vec<u32>) -> PyResult<Vec<Vec<f64>>> {
    let (encoder, _) = domainrc::model::load_pretrained_encoder(dir).map_err(to_py)?;
    let states = encoder.forward(&ids, None).map_err(to_py)?;
    Ok(states.outer_iter().map(|row| row.to_vec()).collect())
}

/// Loads and validates one corpus file; returns the sentence count.
#[pyfunction]
fn validate_corpus_file(path: &str, domain: &str) -> PyResult<usize> {
    let sentences =
        corpus::load_corpus_file(path, parse_domain(domain)?, &ValidationOptions::default())
            .map_err(to_py)?;
    Ok(sentences.len())
}

#[pymodule]
fn domainrc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCorpus>()?;
    m.add_function(wrap_pyfunction!(load_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(strategies, m)?)?;
    m.add_function(wrap_pyfunction!(map_fine_to_coarse, m)?)?;
    m.add_function(wrap_pyfunction!(insert_entity_markers, m)?)?;
    m.add_function(wrap_pyfunction!(prepend_domain_marker, m)?)?;
    m.add_function(wrap_pyfunction!(macro_f1, m)?)?;
    m.add_function(wrap_pyfunction!(per_label_prf, m)?)?;
    m.add_function(wrap_pyfunction!(pca_fit_transform, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(encode_examples, m)?)?;
    m.add_function(wrap_pyfunction!(run_tiny_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(pretrained_encoder_states, m)?)?;
    m.add_function(wrap_pyfunction!(validate_corpus_file, m)?)?;
    Ok(())
}
