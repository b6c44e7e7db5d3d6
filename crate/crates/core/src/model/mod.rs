//! Encoder wrapper with optional dataset-embedding injection and the
//! pair-classification head.
//!
//! Classification reads the final-layer states at the two start markers,
//! concatenates them and applies a linear layer over the label set. When the
//! dataset-embedding strategy is active, a per-domain vector is added to
//! every input position's combined embedding before the first encoder layer.

mod param;
mod transformer;

pub use param::{load_tensors, read_tensor_file, save_tensors, Param, ParamAccess, VisitParams};
pub use transformer::{Encoder, EncoderConfig, EncoderTrace};

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::DomainId;
use crate::encoding::AugmentedInstance;
use crate::error::{Error, Result};
use crate::tokenizer::Tokenizer;

use transformer::Linear;

/// How the dataset-embedding table is initialized. Zeros make the
/// dataset-embedding setup exactly equivalent to the baseline at step 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetEmbeddingInit {
    Zeros,
    Gaussian,
}

impl std::str::FromStr for DatasetEmbeddingInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zeros" => Ok(DatasetEmbeddingInit::Zeros),
            "gaussian" => Ok(DatasetEmbeddingInit::Gaussian),
            other => Err(Error::Config(format!(
                "unknown dataset-embedding init `{other}` (expected zeros or gaussian)"
            ))),
        }
    }
}

/// One trainable vector per domain, dimension equal to the encoder hidden
/// size.
#[derive(Debug, Clone)]
pub struct DatasetEmbeddingTable {
    table: Param<ndarray::Ix2>,
}

impl DatasetEmbeddingTable {
    pub const ROWS: usize = DomainId::ALL.len();

    /// Six zero vectors of length `hidden_size`.
    pub fn zeros(hidden_size: usize) -> DatasetEmbeddingTable {
        DatasetEmbeddingTable {
            table: Param::new(Array2::zeros((Self::ROWS, hidden_size))),
        }
    }

    pub fn gaussian(hidden_size: usize, std: f64, rng: &mut ChaCha8Rng) -> DatasetEmbeddingTable {
        use rand_distr::{Distribution, Normal};
        let normal = Normal::new(0.0, std).expect("valid normal");
        DatasetEmbeddingTable {
            table: Param::new(Array2::from_shape_fn((Self::ROWS, hidden_size), |_| {
                normal.sample(rng)
            })),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.table.value.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.table.value.nrows(), self.table.value.ncols())
    }

    /// Row lookup by raw index; ids beyond the six domains error.
    pub fn row(&self, index: usize) -> Result<ArrayView1<'_, f64>> {
        if index >= Self::ROWS {
            return Err(Error::Model(format!(
                "dataset-embedding row {index} out of range (six domains)"
            )));
        }
        Ok(self.table.value.row(index))
    }

    pub fn row_for(&self, domain: DomainId) -> ArrayView1<'_, f64> {
        self.table.value.row(domain.index())
    }

    pub fn grad_row(&self, domain: DomainId) -> ArrayView1<'_, f64> {
        self.table.grad.row(domain.index())
    }
}

/// Six zero vectors of length `hidden_size`, ready to be trained.
pub fn init_dataset_embedding_table(hidden_size: usize) -> DatasetEmbeddingTable {
    DatasetEmbeddingTable::zeros(hidden_size)
}

/// The relation classification model: encoder, dataset-embedding table and
/// the pair-classification head.
#[derive(Debug, Clone)]
pub struct RelationModel {
    pub encoder: Encoder,
    head: Linear,
    dataset_embeddings: DatasetEmbeddingTable,
    dataset_embeddings_enabled: bool,
    num_labels: usize,
}

impl RelationModel {
    /// Builds a model with a freshly initialized head. The zero table draws
    /// nothing from the RNG stream, so a baseline model and a
    /// dataset-embedding model created from identical seeds share every
    /// other parameter bit-for-bit.
    pub fn new(
        encoder: Encoder,
        num_labels: usize,
        dataset_embeddings_enabled: bool,
        init: DatasetEmbeddingInit,
        rng: &mut ChaCha8Rng,
    ) -> Result<RelationModel> {
        if num_labels == 0 {
            return Err(Error::Model("cannot classify over zero labels".to_string()));
        }
        let hidden = encoder.hidden_size();
        let head = Linear::new(2 * hidden, num_labels, encoder.config().init_std, rng);
        let dataset_embeddings = match init {
            DatasetEmbeddingInit::Zeros => DatasetEmbeddingTable::zeros(hidden),
            DatasetEmbeddingInit::Gaussian => {
                DatasetEmbeddingTable::gaussian(hidden, encoder.config().init_std, rng)
            }
        };
        Ok(RelationModel {
            encoder,
            head,
            dataset_embeddings,
            dataset_embeddings_enabled,
            num_labels,
        })
    }

    pub fn num_labels(&self) -> usize {
        self.num_labels
    }

    pub fn dataset_embeddings(&self) -> &DatasetEmbeddingTable {
        &self.dataset_embeddings
    }

    pub fn dataset_embeddings_enabled(&self) -> bool {
        self.dataset_embeddings_enabled
    }

    fn extra_for(&self, domain: DomainId) -> Option<ArrayView1<'_, f64>> {
        self.dataset_embeddings_enabled
            .then(|| self.dataset_embeddings.row_for(domain))
    }

    fn check_positions(&self, aug: &AugmentedInstance) -> Result<()> {
        let len = aug.subword_ids.len();
        if aug.e1_start_pos >= len || aug.e2_start_pos >= len {
            return Err(Error::Model(format!(
                "marker position out of range for instance `{}` (length {len})",
                aug.instance_id
            )));
        }
        Ok(())
    }

    /// The classifier input: final-layer states at the two start markers,
    /// concatenated (dimension 2H).
    pub fn pair_representation(&self, aug: &AugmentedInstance) -> Result<Array1<f64>> {
        self.check_positions(aug)?;
        let states = self
            .encoder
            .forward(&aug.subword_ids, self.extra_for(aug.domain))?;
        Ok(concat_pair(&states, aug.e1_start_pos, aug.e2_start_pos))
    }

    /// Logits over the label vocabulary, inference mode. Deterministic.
    pub fn logits(&self, aug: &AugmentedInstance) -> Result<Array1<f64>> {
        let pair = self.pair_representation(aug)?;
        let input = pair.insert_axis(Axis(0));
        Ok(self.head.forward(&input).remove_axis(Axis(0)))
    }

    /// Logits for a batch, one row per instance.
    pub fn logits_batch(&self, batch: &[AugmentedInstance]) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((batch.len(), self.num_labels));
        for (i, aug) in batch.iter().enumerate() {
            out.row_mut(i).assign(&self.logits(aug)?);
        }
        Ok(out)
    }

    pub fn predict(&self, aug: &AugmentedInstance) -> Result<usize> {
        let logits = self.logits(aug)?;
        predict_label(logits.view())
    }

    /// One training forward/backward over a batch: accumulates gradients for
    /// the mean cross-entropy loss and returns it. Call `zero_grads` before
    /// and an optimizer step after.
    pub fn accumulate_batch(
        &mut self,
        batch: &[&AugmentedInstance],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Model("empty training batch".to_string()));
        }
        let scale = 1.0 / batch.len() as f64;
        let mut total_loss = 0.0;
        for aug in batch {
            self.check_positions(aug)?;
            let extra = self
                .dataset_embeddings_enabled
                .then(|| self.dataset_embeddings.row_for(aug.domain).to_owned());
            let (states, trace) =
                self.encoder
                    .forward_train(&aug.subword_ids, extra.as_ref().map(|e| e.view()), rng)?;
            let pair = concat_pair(&states, aug.e1_start_pos, aug.e2_start_pos);

            let input = pair.insert_axis(Axis(0));
            let logits = self.head.forward(&input).remove_axis(Axis(0));
            let (loss, mut dlogits) = cross_entropy(logits.view(), aug.gold_label)?;
            total_loss += loss * scale;
            dlogits *= scale;

            let dpair = self
                .head
                .backward(&input, &dlogits.insert_axis(Axis(0)))
                .remove_axis(Axis(0));

            let hidden = self.encoder.hidden_size();
            let mut dstates = Array2::zeros(states.raw_dim());
            {
                let mut row = dstates.row_mut(aug.e1_start_pos);
                row += &dpair.slice(ndarray::s![..hidden]);
            }
            {
                let mut row = dstates.row_mut(aug.e2_start_pos);
                row += &dpair.slice(ndarray::s![hidden..]);
            }

            let dextra = self.encoder.backward(&aug.subword_ids, &trace, dstates);
            if self.dataset_embeddings_enabled {
                let mut grad_row = self
                    .dataset_embeddings
                    .table
                    .grad
                    .row_mut(aug.domain.index());
                grad_row += &dextra;
            }
        }
        if !total_loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {total_loss}")));
        }
        Ok(total_loss)
    }
}

impl VisitParams for RelationModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut dyn ParamAccess)) {
        self.encoder.visit_params(f);
        f("head.weight", &mut self.head.w);
        f("head.bias", &mut self.head.b);
        f("dataset_embeddings", &mut self.dataset_embeddings.table);
    }
}

fn concat_pair(states: &Array2<f64>, e1: usize, e2: usize) -> Array1<f64> {
    let hidden = states.ncols();
    let mut pair = Array1::zeros(2 * hidden);
    pair.slice_mut(ndarray::s![..hidden]).assign(&states.row(e1));
    pair.slice_mut(ndarray::s![hidden..]).assign(&states.row(e2));
    pair
}

/// Logits over the label set for one encoded instance.
pub fn classify_pair(model: &RelationModel, aug: &AugmentedInstance) -> Result<Array1<f64>> {
    model.logits(aug)
}

/// Argmax decoding with ties broken by the lowest label index. Non-finite
/// logits are an error.
pub fn predict_label(logits: ArrayView1<'_, f64>) -> Result<usize> {
    if logits.is_empty() {
        return Err(Error::Model("empty logits".to_string()));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("logit value {bad}")));
    }
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Cross-entropy loss for a single instance with its gradient w.r.t. the
/// logits (softmax minus one-hot).
pub fn cross_entropy(logits: ArrayView1<'_, f64>, gold: usize) -> Result<(f64, Array1<f64>)> {
    if gold >= logits.len() {
        return Err(Error::Model(format!(
            "gold label {gold} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::NonFinite("logits".to_string()));
    }
    let exp: Array1<f64> = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    let log_sum_exp = max + sum.ln();
    let loss = log_sum_exp - logits[gold];
    let mut dlogits = exp / sum;
    dlogits[gold] -= 1.0;
    Ok((loss, dlogits))
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with decoupled weight decay. Biases and layer-norm parameters are
/// exempt from decay.
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    slots: Vec<(ndarray::ArrayD<f64>, ndarray::ArrayD<f64>)>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> AdamW {
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            slots: Vec::new(),
        }
    }

    fn decays(name: &str) -> bool {
        !(name.ends_with(".bias") || name.ends_with(".gamma") || name.ends_with(".beta"))
    }

    pub fn step(&mut self, model: &mut dyn VisitParams) {
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let lr = self.learning_rate;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let wd = self.weight_decay;
        let slots = &mut self.slots;

        let mut index = 0;
        model.visit_params(&mut |name, p| {
            if slots.len() == index {
                let shape = p.value().raw_dim();
                slots.push((
                    ndarray::ArrayD::zeros(shape.clone()),
                    ndarray::ArrayD::zeros(shape),
                ));
            }
            let (m, v) = &mut slots[index];
            index += 1;
            let decay = if Self::decays(name) { wd } else { 0.0 };
            let grad = p.grad().to_owned();
            m.zip_mut_with(&grad, |m, &g| *m = b1 * *m + (1.0 - b1) * g);
            v.zip_mut_with(&grad, |v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            let mut value = p.value_mut();
            ndarray::Zip::from(&mut value)
                .and(&*m)
                .and(&*v)
                .for_each(|w, &m, &v| {
                    let m_hat = m / bias1;
                    let v_hat = v / bias2;
                    *w -= lr * (m_hat / (v_hat.sqrt() + eps) + decay * *w);
                });
        });
    }
}

// ---------------------------------------------------------------------------
// Encoder selection
// ---------------------------------------------------------------------------

/// Hyperparameters of the self-contained test encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyEncoderOptions {
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub feed_forward: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub min_word_freq: usize,
}

impl Default for TinyEncoderOptions {
    fn default() -> Self {
        TinyEncoderOptions {
            hidden: 32,
            layers: 2,
            heads: 2,
            feed_forward: 64,
            max_len: 128,
            dropout: 0.0,
            min_word_freq: 2,
        }
    }
}

impl TinyEncoderOptions {
    pub fn to_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden: self.hidden,
            layers: self.layers,
            heads: self.heads,
            feed_forward: self.feed_forward,
            max_len: self.max_len,
            dropout: self.dropout,
            layer_norm_eps: 1e-12,
            init_std: 0.02,
        }
    }
}

/// Parsed encoder selector. `tiny` (optionally with `key=value` overrides,
/// e.g. `tiny:hidden=16,layers=1`) builds a deterministic randomly
/// initialized encoder with a corpus-built vocabulary; anything else is a
/// directory holding a pretrained encoder in this crate's format.
/// `bert-base-cased` resolves through the `DOMAINRC_PRETRAINED` environment
/// variable.
#[derive(Debug, Clone, PartialEq)]
pub enum EncoderSpec {
    Tiny(TinyEncoderOptions),
    Pretrained(PathBuf),
}

impl EncoderSpec {
    pub fn parse(s: &str) -> Result<EncoderSpec> {
        if s == "tiny" {
            return Ok(EncoderSpec::Tiny(TinyEncoderOptions::default()));
        }
        if let Some(rest) = s.strip_prefix("tiny:") {
            let mut opts = TinyEncoderOptions::default();
            for pair in rest.split(',').filter(|p| !p.is_empty()) {
                let (key, value) = pair.split_once('=').ok_or_else(|| {
                    Error::Config(format!("malformed encoder option `{pair}` (expected key=value)"))
                })?;
                let parse_usize = |v: &str| {
                    v.parse::<usize>()
                        .map_err(|_| Error::Config(format!("invalid value `{v}` for `{key}`")))
                };
                match key {
                    "hidden" => opts.hidden = parse_usize(value)?,
                    "layers" => opts.layers = parse_usize(value)?,
                    "heads" => opts.heads = parse_usize(value)?,
                    "feed_forward" => opts.feed_forward = parse_usize(value)?,
                    "max_len" => opts.max_len = parse_usize(value)?,
                    "min_word_freq" => opts.min_word_freq = parse_usize(value)?,
                    "dropout" => {
                        opts.dropout = value.parse::<f64>().map_err(|_| {
                            Error::Config(format!("invalid value `{value}` for `dropout`"))
                        })?;
                    }
                    other => {
                        return Err(Error::Config(format!("unknown encoder option `{other}`")));
                    }
                }
            }
            return Ok(EncoderSpec::Tiny(opts));
        }
        if s == "bert-base-cased" {
            return match std::env::var("DOMAINRC_PRETRAINED") {
                Ok(dir) => Ok(EncoderSpec::Pretrained(PathBuf::from(dir))),
                Err(_) => Err(Error::Config(
                    "encoder `bert-base-cased` needs pretrained weights: set \
                     DOMAINRC_PRETRAINED to a directory produced by \
                     python/convert_hf_encoder.py, or use `tiny` for a \
                     self-contained encoder"
                        .to_string(),
                )),
            };
        }
        Ok(EncoderSpec::Pretrained(PathBuf::from(s)))
    }
}

const ENCODER_CONFIG_FILE: &str = "config.json";
const ENCODER_PARAMS_FILE: &str = "params.bin";
const ENCODER_VOCAB_FILE: &str = "vocab.txt";

/// Loads a pretrained encoder directory (`config.json`, `vocab.txt`,
/// `params.bin`).
pub fn load_pretrained_encoder(dir: impl AsRef<Path>) -> Result<(Encoder, Tokenizer)> {
    let dir = dir.as_ref();
    let config_path = dir.join(ENCODER_CONFIG_FILE);
    let contents = std::fs::read_to_string(&config_path)
        .map_err(|_| Error::MissingFile(config_path.clone()))?;
    let cfg: EncoderConfig = serde_json::from_str(&contents)?;
    let tokenizer = Tokenizer::from_vocab_file(dir.join(ENCODER_VOCAB_FILE))?;
    if tokenizer.vocab_size() != cfg.vocab_size {
        return Err(Error::Checkpoint(format!(
            "vocabulary has {} entries but the encoder config declares {}",
            tokenizer.vocab_size(),
            cfg.vocab_size
        )));
    }
    // Parameters are overwritten wholesale, so the init RNG is irrelevant.
    let mut encoder = Encoder::new(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    load_tensors(dir.join(ENCODER_PARAMS_FILE), &mut encoder)?;
    Ok(encoder)
        .map(|encoder| (encoder, tokenizer))
}

/// Writes an encoder (and its vocabulary) in the pretrained-directory format.
pub fn save_pretrained_encoder(
    dir: impl AsRef<Path>,
    encoder: &mut Encoder,
    tokenizer: &Tokenizer,
) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(ENCODER_CONFIG_FILE),
        serde_json::to_string_pretty(encoder.config())?,
    )?;
    tokenizer.save(dir.join(ENCODER_VOCAB_FILE))?;
    save_tensors(dir.join(ENCODER_PARAMS_FILE), encoder)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{DomainId, EntitySpan, LabelVocabulary, RelationInstance, TypeMapping};
    use crate::encoding::{EncodingContext, EncodingStrategy};
    use ndarray::arr1;

    fn tiny_model(strategy: EncodingStrategy, seed: u64) -> (RelationModel, EncodingContext) {
        let words = [
            "Lennon", "founded", "the", "Beatles", "in", "Liverpool", "band", "played",
        ];
        let tokenizer = Tokenizer::from_words(words.iter().copied(), 1);
        let labels = LabelVocabulary::from_labels(["physical", "role", "social"]);
        let ctx = EncodingContext::new(
            strategy,
            tokenizer,
            TypeMapping::default_mapping().clone(),
            labels,
            64,
        );
        let opts = TinyEncoderOptions {
            hidden: 16,
            layers: 1,
            heads: 2,
            feed_forward: 32,
            max_len: 64,
            dropout: 0.0,
            min_word_freq: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = Encoder::new(opts.to_config(ctx.tokenizer.vocab_size()), &mut rng).unwrap();
        let model = RelationModel::new(
            encoder,
            ctx.labels.len(),
            strategy.uses_dataset_embedding(),
            DatasetEmbeddingInit::Zeros,
            &mut rng,
        )
        .unwrap();
        (model, ctx)
    }

    fn instance() -> RelationInstance {
        RelationInstance {
            id: "t#0".to_string(),
            domain: DomainId::Music,
            tokens: ["Lennon", "founded", "the", "Beatles"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            head: EntitySpan::new(0, 0, "musicalartist"),
            tail: EntitySpan::new(3, 3, "band"),
            label: "role".to_string(),
        }
    }

    #[test]
    fn dataset_embedding_table_shape_and_lookup() {
        let table = init_dataset_embedding_table(768);
        assert_eq!(table.shape(), (6, 768));
        for domain in DomainId::ALL {
            let row = table.row_for(domain);
            assert!(row.iter().all(|&v| v == 0.0));
        }
        for index in 0..6 {
            assert!(table.row(index).is_ok());
        }
        assert!(table.row(6).is_err());
    }

    #[test]
    fn logits_have_label_dimension_and_are_deterministic() {
        let (model, ctx) = tiny_model(EncodingStrategy::Baseline, 42);
        let aug = ctx.encode(&instance()).unwrap();
        let a = model.logits(&aug).unwrap();
        let b = model.logits(&aug).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(a, b);
        let batch = vec![aug.clone(), aug];
        let logits = model.logits_batch(&batch).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
    }

    #[test]
    fn zero_head_outputs_bias() {
        let (mut model, ctx) = tiny_model(EncodingStrategy::Baseline, 42);
        model.head.w.value.fill(0.0);
        model.head.b.value.assign(&arr1(&[0.5, -1.0, 2.0]));
        let aug = ctx.encode(&instance()).unwrap();
        let logits = model.logits(&aug).unwrap();
        assert_eq!(logits, arr1(&[0.5, -1.0, 2.0]));
    }

    #[test]
    fn pair_representation_has_dimension_2h() {
        let (model, ctx) = tiny_model(EncodingStrategy::Baseline, 42);
        let aug = ctx.encode(&instance()).unwrap();
        let pair = model.pair_representation(&aug).unwrap();
        assert_eq!(pair.len(), 2 * model.encoder.hidden_size());
    }

    #[test]
    fn swapping_entities_changes_logits() {
        let (model, ctx) = tiny_model(EncodingStrategy::Baseline, 42);
        let mut swapped = instance();
        std::mem::swap(&mut swapped.head, &mut swapped.tail);
        let a = model.logits(&ctx.encode(&instance()).unwrap()).unwrap();
        let b = model.logits(&ctx.encode(&swapped).unwrap()).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn predict_label_rules() {
        assert_eq!(predict_label(arr1(&[0.1, 3.0, -1.0]).view()).unwrap(), 1);
        // All-equal logits: lowest index wins.
        assert_eq!(predict_label(arr1(&[0.5, 0.5, 0.5]).view()).unwrap(), 0);
        // Adding a constant leaves the prediction unchanged.
        let base = arr1(&[0.2, -0.3, 1.7, 1.1]);
        let shifted = base.mapv(|v| v + 123.0);
        assert_eq!(
            predict_label(base.view()).unwrap(),
            predict_label(shifted.view()).unwrap()
        );
        assert!(predict_label(arr1(&[f64::NAN, 0.0]).view()).is_err());
        assert!(predict_label(arr1(&[f64::INFINITY, 0.0]).view()).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let logits = arr1(&[0.3, -1.2, 2.0, 0.0]);
        let (_, grad) = cross_entropy(logits.view(), 2).unwrap();
        let eps = 1e-6;
        for i in 0..4 {
            let mut up = logits.clone();
            up[i] += eps;
            let mut down = logits.clone();
            down[i] -= eps;
            let fd = (cross_entropy(up.view(), 2).unwrap().0
                - cross_entropy(down.view(), 2).unwrap().0)
                / (2.0 * eps);
            assert!((grad[i] - fd).abs() < 1e-8, "{i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn zero_table_matches_baseline_bit_for_bit() {
        let (baseline, ctx_a) = tiny_model(EncodingStrategy::Baseline, 7);
        let (with_table, ctx_b) = tiny_model(EncodingStrategy::DatasetEmbedding, 7);
        assert!(with_table.dataset_embeddings_enabled());
        assert!(!baseline.dataset_embeddings_enabled());
        let a = baseline.logits(&ctx_a.encode(&instance()).unwrap()).unwrap();
        let b = with_table.logits(&ctx_b.encode(&instance()).unwrap()).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn training_batch_reduces_loss_and_fills_gradients() {
        let (mut model, ctx) = tiny_model(EncodingStrategy::DatasetEmbedding, 9);
        let aug = ctx.encode(&instance()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut optimizer = AdamW::new(1e-2, 0.0);
        let mut first = None;
        let mut last = 0.0;
        for _ in 0..30 {
            model.zero_grads();
            last = model.accumulate_batch(&[&aug], &mut rng).unwrap();
            if first.is_none() {
                first = Some(last);
            }
            optimizer.step(&mut model);
        }
        assert!(last < first.unwrap() * 0.5, "{last} vs {first:?}");
        // The active domain's row received gradient; inactive rows did not.
        model.zero_grads();
        model.accumulate_batch(&[&aug], &mut rng).unwrap();
        let active: f64 = model
            .dataset_embeddings()
            .grad_row(DomainId::Music)
            .iter()
            .map(|v| v.abs())
            .sum();
        assert!(active > 0.0);
        for domain in DomainId::ALL {
            if domain != DomainId::Music {
                let norm: f64 = model
                    .dataset_embeddings()
                    .grad_row(domain)
                    .iter()
                    .map(|v| v.abs())
                    .sum();
                assert_eq!(norm, 0.0);
            }
        }
    }

    #[test]
    fn encoder_spec_parsing() {
        assert_eq!(
            EncoderSpec::parse("tiny").unwrap(),
            EncoderSpec::Tiny(TinyEncoderOptions::default())
        );
        match EncoderSpec::parse("tiny:hidden=16,layers=1,dropout=0.1").unwrap() {
            EncoderSpec::Tiny(opts) => {
                assert_eq!(opts.hidden, 16);
                assert_eq!(opts.layers, 1);
                assert!((opts.dropout - 0.1).abs() < 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(EncoderSpec::parse("tiny:bogus=1").is_err());
        assert!(matches!(
            EncoderSpec::parse("/some/dir").unwrap(),
            EncoderSpec::Pretrained(_)
        ));
    }

    #[test]
    fn pretrained_roundtrip() {
        let (mut model, ctx) = tiny_model(EncodingStrategy::Baseline, 21);
        let dir = tempfile::tempdir().unwrap();
        save_pretrained_encoder(dir.path(), &mut model.encoder, &ctx.tokenizer).unwrap();
        let (encoder, tokenizer) = load_pretrained_encoder(dir.path()).unwrap();
        assert_eq!(tokenizer.vocab_size(), ctx.tokenizer.vocab_size());
        let ids = [1u32, 4, 9];
        let a = model.encoder.forward(&ids, None).unwrap();
        let b = encoder.forward(&ids, None).unwrap();
        assert_eq!(a, b);
    }
}
