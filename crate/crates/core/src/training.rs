//! Multi-domain training: seed handling, the training loop with early
//! stopping, and checkpointing.
//!
//! Experiments run over a list of seeds; each seed trains on the shuffled
//! mix of the six per-domain training sets, selects the best epoch by dev
//! macro-F1 averaged over domains, and writes a checkpoint plus its logs and
//! report under `<out>/<strategy>/<seed>/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DomainId, LabelVocabulary, RelationInstance, Split, TypeMapping};
use crate::encoding::{AugmentedInstance, EncodingContext, EncodingStrategy};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_encoded, EvalReport};
use crate::model::{
    load_pretrained_encoder, load_tensors, save_tensors, AdamW, DatasetEmbeddingInit, Encoder,
    EncoderConfig, EncoderSpec, RelationModel, VisitParams,
};
use crate::tokenizer::Tokenizer;

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

static GLOBAL_SEED: Mutex<Option<u64>> = Mutex::new(None);

/// Sets the process-global seed from which every stochastic component
/// (parameter init, shuffling, dropout) derives its stream.
pub fn set_global_seed(seed: u64) {
    *GLOBAL_SEED.lock().expect("seed lock") = Some(seed);
}

pub fn global_seed() -> Option<u64> {
    *GLOBAL_SEED.lock().expect("seed lock")
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// A named stream derived from the global seed, so independent components
/// (init vs. shuffling) do not perturb each other's draws.
pub fn seeded_rng(label: &str) -> ChaCha8Rng {
    let seed = global_seed().unwrap_or(0);
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a(label.as_bytes()))
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Experiment configuration. The file format is flat `key = value` text with
/// `#` comments; every key matches a field name here.
///
/// The learning defaults mirror the published baseline configuration this
/// pipeline reproduces (reference-repo defaults; confirm against that
/// repository's published configuration when matching its numbers exactly).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub strategy: EncodingStrategy,
    /// Encoder selector: `tiny[:key=value,...]`, a pretrained directory, or
    /// `bert-base-cased` (resolved via `DOMAINRC_PRETRAINED`).
    pub encoder: String,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early stopping: stop after this many non-improving epochs.
    pub patience: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Manifest JSON or corpus directory.
    pub data_manifest: PathBuf,
    /// Optional fine-to-coarse mapping override.
    pub type_mapping: Option<PathBuf>,
    pub dataset_embedding_init: DatasetEmbeddingInit,
    /// Overwrite existing run directories instead of erroring.
    pub overwrite: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            strategy: EncodingStrategy::Baseline,
            encoder: "bert-base-cased".to_string(),
            learning_rate: 2e-5,
            weight_decay: 0.01,
            batch_size: 32,
            max_epochs: 10,
            patience: 3,
            seeds: vec![1, 2, 3, 4, 5],
            out_dir: PathBuf::from("runs"),
            data_manifest: PathBuf::from("data"),
            type_mapping: None,
            dataset_embedding_init: DatasetEmbeddingInit::Zeros,
            overwrite: false,
        }
    }
}

impl TrainConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let contents =
            std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        let mut config = TrainConfig::default();
        for (i, raw_line) in contents.lines().enumerate() {
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: "expected `key = value`".to_string(),
            })?;
            config.set(key.trim(), value.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    /// Applies one override; flag overrides win over file values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
        }
        match key {
            "strategy" => self.strategy = value.parse()?,
            "encoder" => self.encoder = value.to_string(),
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "max_epochs" => self.max_epochs = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "seeds" => self.seeds = parse_seed_list(value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "data_manifest" => self.data_manifest = PathBuf::from(value),
            "type_mapping" => self.type_mapping = Some(PathBuf::from(value)),
            "dataset_embedding_init" => self.dataset_embedding_init = value.parse()?,
            "overwrite" => self.overwrite = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must not be empty".to_string()));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config(
                "batch_size and max_epochs must be positive".to_string(),
            ));
        }
        Ok(())
    }

    pub fn mapping(&self) -> Result<TypeMapping> {
        match &self.type_mapping {
            Some(path) => TypeMapping::from_file(path),
            None => Ok(TypeMapping::default_mapping().clone()),
        }
    }

    pub fn seed_dir(&self, strategy: EncodingStrategy, seed: u64) -> PathBuf {
        self.out_dir.join(strategy.name()).join(seed.to_string())
    }
}

/// Comma-separated seed values, e.g. `1,2,3,4,5`.
pub fn parse_seed_list(value: &str) -> Result<Vec<u64>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| Error::Config(format!("invalid seed `{s}`")))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Data plumbing
// ---------------------------------------------------------------------------

/// Instances and vocabularies a training run needs.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub train_by_domain: BTreeMap<DomainId, Vec<RelationInstance>>,
    pub dev_by_domain: BTreeMap<DomainId, Vec<RelationInstance>>,
    pub labels: LabelVocabulary,
}

impl TrainData {
    pub fn from_corpus(corpus: &Corpus) -> Result<TrainData> {
        Ok(TrainData {
            train_by_domain: corpus.instances_by_domain(Split::Train),
            dev_by_domain: corpus.instances_by_domain(Split::Dev),
            labels: corpus.label_vocabulary()?,
        })
    }

    /// For in-memory fixtures: the label vocabulary is derived from the
    /// given instances.
    pub fn from_instances(
        train: Vec<RelationInstance>,
        dev: Vec<RelationInstance>,
    ) -> Result<TrainData> {
        let labels = LabelVocabulary::from_labels(
            train.iter().chain(dev.iter()).map(|i| i.label.clone()),
        );
        if labels.is_empty() {
            return Err(Error::EmptyCorpus("no labels in training data".to_string()));
        }
        let mut train_by_domain: BTreeMap<DomainId, Vec<RelationInstance>> = BTreeMap::new();
        for instance in train {
            train_by_domain.entry(instance.domain).or_default().push(instance);
        }
        let mut dev_by_domain: BTreeMap<DomainId, Vec<RelationInstance>> = BTreeMap::new();
        for instance in dev {
            dev_by_domain.entry(instance.domain).or_default().push(instance);
        }
        Ok(TrainData {
            train_by_domain,
            dev_by_domain,
            labels,
        })
    }

    fn train_words(&self) -> impl Iterator<Item = &str> {
        self.train_by_domain
            .values()
            .flatten()
            .flat_map(|i| i.tokens.iter().map(String::as_str))
    }
}

/// Concatenates the six per-domain training sets and shuffles them with the
/// seed-determined permutation. Every domain must be present and non-empty;
/// instances keep their domain ids.
pub fn mix_training_sets(
    per_domain: &BTreeMap<DomainId, Vec<RelationInstance>>,
    seed: u64,
) -> Result<Vec<RelationInstance>> {
    let mut mixed = Vec::new();
    for domain in DomainId::ALL {
        match per_domain.get(&domain) {
            Some(instances) if !instances.is_empty() => mixed.extend(instances.iter().cloned()),
            _ => return Err(Error::MissingDomain(domain.name().to_string())),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    mixed.shuffle(&mut rng);
    Ok(mixed)
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

const PARAMS_FILE: &str = "params.bin";
const META_FILE: &str = "manifest.json";
const VOCAB_FILE: &str = "vocab.txt";
const MARKERS_FILE: &str = "markers.txt";
const MAPPING_FILE: &str = "mapping.json";

/// The plain-text manifest stored next to the parameter snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub strategy: EncodingStrategy,
    pub seed: u64,
    pub labels: Vec<String>,
    pub encoder_config: EncoderConfig,
    pub max_seq_len: usize,
    pub dataset_embedding_init: DatasetEmbeddingInit,
    pub type_mapping_source: String,
    pub train_config: TrainConfig,
}

/// Writes the parameter snapshot, tokenizer vocabulary, marker sidecar,
/// mapping table and manifest into `dir`.
pub fn save_checkpoint(
    dir: impl AsRef<Path>,
    model: &mut RelationModel,
    ctx: &EncodingContext,
    meta: &CheckpointMeta,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    save_tensors(dir.join(PARAMS_FILE), model)?;
    ctx.tokenizer.save(dir.join(VOCAB_FILE))?;
    let markers: Vec<&str> = ctx.markers.all().collect();
    std::fs::write(dir.join(MARKERS_FILE), markers.join("\n") + "\n")?;
    std::fs::write(dir.join(MAPPING_FILE), ctx.mapping.to_json())?;
    std::fs::write(dir.join(META_FILE), serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

/// Restores a checkpoint directory into a model and its encoding context.
pub fn load_checkpoint(
    dir: impl AsRef<Path>,
) -> Result<(RelationModel, EncodingContext, CheckpointMeta)> {
    let dir = dir.as_ref();
    let meta_path = dir.join(META_FILE);
    let contents =
        std::fs::read_to_string(&meta_path).map_err(|_| Error::MissingFile(meta_path))?;
    let meta: CheckpointMeta = serde_json::from_str(&contents)?;

    let tokenizer = Tokenizer::from_vocab_file(dir.join(VOCAB_FILE))?;
    let mapping = TypeMapping::from_file(dir.join(MAPPING_FILE))?;
    let labels = LabelVocabulary::from_labels(meta.labels.iter().cloned());
    let ctx = EncodingContext::new(
        meta.strategy,
        tokenizer,
        mapping,
        labels,
        meta.max_seq_len,
    );
    if ctx.tokenizer.vocab_size() != meta.encoder_config.vocab_size {
        return Err(Error::Checkpoint(format!(
            "checkpoint vocabulary has {} entries but the encoder expects {}",
            ctx.tokenizer.vocab_size(),
            meta.encoder_config.vocab_size
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0); // overwritten by the snapshot
    let encoder = Encoder::new(meta.encoder_config.clone(), &mut rng)?;
    let mut model = RelationModel::new(
        encoder,
        meta.labels.len(),
        meta.strategy.uses_dataset_embedding(),
        DatasetEmbeddingInit::Zeros,
        &mut rng,
    )?;
    load_tensors(dir.join(PARAMS_FILE), &mut model)?;
    Ok((model, ctx, meta))
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_macro_f1: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainLog> {
        let path = path.as_ref();
        let contents =
            std::fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Ok(serde_json::from_str(&contents)?)
    }
}

/// Outcome of one seed's training run.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    pub log: TrainLog,
    pub best_dev_macro_f1: f64,
    pub report: EvalReport,
    pub train_skipped: usize,
}

fn build_model_and_ctx(
    config: &TrainConfig,
    data: &TrainData,
    init_rng: &mut ChaCha8Rng,
) -> Result<(RelationModel, EncodingContext)> {
    let spec = EncoderSpec::parse(&config.encoder)?;
    let mapping = config.mapping()?;

    let (encoder, ctx) = match spec {
        EncoderSpec::Tiny(opts) => {
            let tokenizer = Tokenizer::from_words(data.train_words(), opts.min_word_freq);
            let ctx = EncodingContext::new(
                config.strategy,
                tokenizer,
                mapping,
                data.labels.clone(),
                opts.max_len,
            );
            let encoder = Encoder::new(opts.to_config(ctx.tokenizer.vocab_size()), init_rng)?;
            (encoder, ctx)
        }
        EncoderSpec::Pretrained(dir) => {
            let (mut encoder, tokenizer) = load_pretrained_encoder(&dir)?;
            let max_len = encoder.config().max_len;
            let ctx = EncodingContext::new(
                config.strategy,
                tokenizer,
                mapping,
                data.labels.clone(),
                max_len,
            );
            encoder.resize_vocab(ctx.tokenizer.vocab_size(), init_rng)?;
            (encoder, ctx)
        }
    };

    let model = RelationModel::new(
        encoder,
        data.labels.len(),
        config.strategy.uses_dataset_embedding(),
        config.dataset_embedding_init,
        init_rng,
    )?;
    Ok((model, ctx))
}

/// Trains one seed: mixes the training sets, runs epochs with early
/// stopping, restores the best-dev checkpoint and persists everything under
/// `<out>/<strategy>/<seed>/`.
pub fn train_one_seed(config: &TrainConfig, seed: u64, data: &TrainData) -> Result<SeedRun> {
    let run_dir = config.seed_dir(config.strategy, seed);
    if run_dir.join("report.json").exists() && !config.overwrite {
        return Err(Error::OutputExists(run_dir));
    }

    set_global_seed(seed);
    let mut init_rng = seeded_rng("init");
    let mut train_rng = seeded_rng("train");

    let (mut model, ctx) = build_model_and_ctx(config, data, &mut init_rng)?;

    let mixed = mix_training_sets(&data.train_by_domain, seed)?;
    let (mut train_encoded, train_skipped) = ctx.encode_all(&mixed)?;
    if train_encoded.is_empty() {
        return Err(Error::EmptyCorpus(
            "no encodable training instances".to_string(),
        ));
    }

    // Pre-encode the dev set once per domain.
    let mut dev_encoded: BTreeMap<DomainId, (Vec<AugmentedInstance>, usize)> = BTreeMap::new();
    for (domain, instances) in &data.dev_by_domain {
        let (encoded, skipped) = ctx.encode_all(instances)?;
        if !encoded.is_empty() {
            dev_encoded.insert(*domain, (encoded, skipped));
        }
    }
    if dev_encoded.is_empty() {
        return Err(Error::EmptyCorpus("no encodable dev instances".to_string()));
    }

    let dev_average = |model: &RelationModel| -> Result<f64> {
        let mut total = 0.0;
        for (encoded, skipped) in dev_encoded.values() {
            let (report, _) = evaluate_encoded(model, &ctx, encoded, *skipped)?;
            total += report.macro_f1;
        }
        Ok(total / dev_encoded.len() as f64)
    };

    let mut optimizer = AdamW::new(config.learning_rate, config.weight_decay);
    let mut log = TrainLog::default();
    let mut best_score = f64::NEG_INFINITY;
    let mut best_model: Option<RelationModel> = None;
    let mut epochs_since_best = 0usize;

    for epoch in 1..=config.max_epochs {
        let started = Instant::now();
        train_encoded.shuffle(&mut train_rng);

        let mut loss_sum = 0.0;
        for batch in train_encoded.chunks(config.batch_size) {
            let refs: Vec<&AugmentedInstance> = batch.iter().collect();
            model.zero_grads();
            let loss = model.accumulate_batch(&refs, &mut train_rng)?;
            optimizer.step(&mut model);
            loss_sum += loss * batch.len() as f64;
        }
        let train_loss = loss_sum / train_encoded.len() as f64;

        let dev_macro_f1 = dev_average(&model)?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss,
            dev_macro_f1,
            seconds: started.elapsed().as_secs_f64(),
        });

        if dev_macro_f1 > best_score {
            best_score = dev_macro_f1;
            best_model = Some(model.clone());
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= config.patience {
                break;
            }
        }
    }

    let mut model = best_model.expect("at least one epoch ran");

    // Final per-domain dev report at the selected checkpoint.
    let mut domain_reports = BTreeMap::new();
    for (domain, (encoded, skipped)) in &dev_encoded {
        let (report, records) = evaluate_encoded(&model, &ctx, encoded, *skipped)?;
        domain_reports.insert(*domain, (report, records));
    }
    let report = EvalReport::from_domain_records(
        config.strategy,
        seed,
        Split::Dev.name(),
        domain_reports,
        ctx.mapping.source().describe(),
    )?;

    let checkpoint_dir = run_dir.join("checkpoint");
    let meta = CheckpointMeta {
        strategy: config.strategy,
        seed,
        labels: ctx.labels.labels().to_vec(),
        encoder_config: model.encoder.config().clone(),
        max_seq_len: ctx.max_seq_len,
        dataset_embedding_init: config.dataset_embedding_init,
        type_mapping_source: ctx.mapping.source().describe(),
        train_config: config.clone(),
    };
    save_checkpoint(&checkpoint_dir, &mut model, &ctx, &meta)?;
    log.save(run_dir.join("trainlog.json"))?;
    report.save(run_dir.join("report.json"))?;

    Ok(SeedRun {
        seed,
        checkpoint_dir,
        log,
        best_dev_macro_f1: best_score,
        report,
        train_skipped,
    })
}

/// Result of a multi-seed experiment. Failed seeds are recorded and do not
/// abort the remaining ones.
#[derive(Debug)]
pub struct ExperimentOutcome {
    pub strategy: EncodingStrategy,
    pub runs: Vec<SeedRun>,
    pub failures: Vec<(u64, Error)>,
}

impl ExperimentOutcome {
    pub fn reports(&self) -> Vec<EvalReport> {
        self.runs.iter().map(|r| r.report.clone()).collect()
    }
}

/// Trains and evaluates every configured seed.
pub fn run_experiment(config: &TrainConfig, data: &TrainData) -> Result<ExperimentOutcome> {
    config.validate()?;
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for &seed in &config.seeds {
        match train_one_seed(config, seed, data) {
            Ok(run) => runs.push(run),
            Err(err) => failures.push((seed, err)),
        }
    }
    Ok(ExperimentOutcome {
        strategy: config.strategy,
        runs,
        failures,
    })
}
