//! A compact BERT-style transformer encoder in f64 with explicit backward
//! passes.
//!
//! Input embeddings are the sum of word, segment and position embeddings
//! (plus an optional extra vector, used for dataset embeddings, added to
//! every position), followed by layer norm. Each layer is post-norm
//! multi-head self-attention and a GELU feed-forward block with residual
//! connections. Everything is f64 so gradient checks and bit-exact
//! equivalence tests are meaningful.

use ndarray::{s, Array1, Array2, ArrayView1, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::param::{Param, ParamAccess, VisitParams};

type Param1 = Param<ndarray::Ix1>;
type Param2 = Param<ndarray::Ix2>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
    pub feed_forward: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub layer_norm_eps: f64,
    pub init_std: f64,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.hidden % self.heads != 0 {
            return Err(Error::Config(format!(
                "hidden size {} must be a positive multiple of the head count {}",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

fn sample_matrix(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let normal = Normal::new(0.0, std).expect("valid normal");
    Array2::from_shape_fn((rows, cols), |_| normal.sample(rng))
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub w: Param2, // in x out
    pub b: Param1,
}

impl Linear {
    pub(crate) fn new(inputs: usize, outputs: usize, std: f64, rng: &mut ChaCha8Rng) -> Linear {
        Linear {
            w: Param::new(sample_matrix(inputs, outputs, std, rng)),
            b: Param::new(Array1::zeros(outputs)),
        }
    }

    pub(crate) fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.value) + &self.b.value
    }

    /// Accumulates gradients given the cached input; returns dL/dx.
    pub(crate) fn backward(&mut self, input: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.w.grad += &input.t().dot(dy);
        self.b.grad += &dy.sum_axis(Axis(0));
        dy.dot(&self.w.value.t())
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut dyn ParamAccess)) {
        f(&format!("{prefix}.weight"), &mut self.w);
        f(&format!("{prefix}.bias"), &mut self.b);
    }
}

#[derive(Debug, Clone)]
struct LayerNorm {
    gamma: Param1,
    beta: Param1,
    eps: f64,
}

#[derive(Debug, Clone)]
struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

impl LayerNorm {
    fn new(hidden: usize, eps: f64) -> LayerNorm {
        LayerNorm {
            gamma: Param::new(Array1::ones(hidden)),
            beta: Param::new(Array1::zeros(hidden)),
            eps,
        }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LnCache) {
        let h = x.ncols() as f64;
        let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
        let mut xhat = x.clone();
        for (mut row, &mu) in xhat.outer_iter_mut().zip(mean.iter()) {
            row.mapv_inplace(|v| v - mu);
        }
        let var = xhat.mapv(|v| v * v).sum_axis(Axis(1)) / h;
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        for (mut row, &is) in xhat.outer_iter_mut().zip(inv_std.iter()) {
            row.mapv_inplace(|v| v * is);
        }
        let y = &xhat * &self.gamma.value + &self.beta.value;
        (y, LnCache { xhat, inv_std })
    }

    fn backward(&mut self, cache: &LnCache, dy: &Array2<f64>) -> Array2<f64> {
        let h = dy.ncols() as f64;
        self.gamma.grad += &(dy * &cache.xhat).sum_axis(Axis(0));
        self.beta.grad += &dy.sum_axis(Axis(0));

        let dxhat = dy * &self.gamma.value;
        let sum_dxhat = dxhat.sum_axis(Axis(1));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(1));

        let mut dx = Array2::zeros(dy.raw_dim());
        Zip::from(dx.outer_iter_mut())
            .and(dxhat.outer_iter())
            .and(cache.xhat.outer_iter())
            .and(&cache.inv_std)
            .and(&sum_dxhat)
            .and(&sum_dxhat_xhat)
            .for_each(|mut dx_row, dxhat_row, xhat_row, &inv_std, &s1, &s2| {
                Zip::from(&mut dx_row)
                    .and(&dxhat_row)
                    .and(&xhat_row)
                    .for_each(|d, &dxh, &xh| {
                        *d = inv_std / h * (h * dxh - s1 - xh * s2);
                    });
            });
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut dyn ParamAccess)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

fn softmax_rows(mut scores: Array2<f64>) -> Array2<f64> {
    for mut row in scores.outer_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    scores
}

/// dL/dscores for `probs = softmax_rows(scores)` given dL/dprobs.
fn softmax_rows_backward(probs: &Array2<f64>, dprobs: &Array2<f64>) -> Array2<f64> {
    let dot = (probs * dprobs).sum_axis(Axis(1));
    let mut ds = dprobs.clone();
    for (mut row, (p_row, &d)) in ds.outer_iter_mut().zip(probs.outer_iter().zip(dot.iter())) {
        Zip::from(&mut row).and(&p_row).for_each(|r, &p| {
            *r = p * (*r - d);
        });
    }
    ds
}

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, 0.5 x (1 + erf(x / sqrt(2))).
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_prime(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    let pdf = FRAC_1_SQRT_2PI * (-0.5 * x * x).exp();
    cdf + x * pdf
}

/// Inverted dropout mask: entries are 0 with probability p, else 1/(1-p).
fn dropout_mask(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let keep = 1.0 - p;
    Array2::from_shape_fn((rows, cols), |_| {
        if rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    })
}

// ---------------------------------------------------------------------------
// Attention and encoder layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct Attention {
    query: Linear,
    key: Linear,
    value: Linear,
    output: Linear,
    heads: usize,
}

#[derive(Debug, Clone)]
struct AttentionCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    ctx: Array2<f64>,
}

impl Attention {
    fn new(hidden: usize, heads: usize, std: f64, rng: &mut ChaCha8Rng) -> Attention {
        Attention {
            query: Linear::new(hidden, hidden, std, rng),
            key: Linear::new(hidden, hidden, std, rng),
            value: Linear::new(hidden, hidden, std, rng),
            output: Linear::new(hidden, hidden, std, rng),
            heads,
        }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, AttentionCache) {
        let hidden = x.ncols();
        let dh = hidden / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let q = self.query.forward(x);
        let k = self.key.forward(x);
        let v = self.value.forward(x);

        let mut ctx = Array2::zeros((x.nrows(), hidden));
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let q_h = q.slice(cols);
            let k_h = k.slice(cols);
            let v_h = v.slice(cols);
            let scores = q_h.dot(&k_h.t()) * scale;
            let p = softmax_rows(scores);
            ctx.slice_mut(cols).assign(&p.dot(&v_h));
            probs.push(p);
        }

        let out = self.output.forward(&ctx);
        (out, AttentionCache { q, k, v, probs, ctx })
    }

    fn backward(
        &mut self,
        x: &Array2<f64>,
        cache: &AttentionCache,
        dy: &Array2<f64>,
    ) -> Array2<f64> {
        let hidden = x.ncols();
        let dh = hidden / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();

        let dctx = self.output.backward(&cache.ctx, dy);

        let mut dq = Array2::zeros((x.nrows(), hidden));
        let mut dk = Array2::zeros((x.nrows(), hidden));
        let mut dv = Array2::zeros((x.nrows(), hidden));
        for h in 0..self.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let q_h = cache.q.slice(cols);
            let k_h = cache.k.slice(cols);
            let v_h = cache.v.slice(cols);
            let p = &cache.probs[h];
            let dctx_h = dctx.slice(cols);

            let dp = dctx_h.dot(&v_h.t());
            dv.slice_mut(cols).assign(&p.t().dot(&dctx_h));
            let ds = softmax_rows_backward(p, &dp) * scale;
            dq.slice_mut(cols).assign(&ds.dot(&k_h));
            dk.slice_mut(cols).assign(&ds.t().dot(&q_h));
        }

        let mut dx = self.query.backward(x, &dq);
        dx += &self.key.backward(x, &dk);
        dx += &self.value.backward(x, &dv);
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut dyn ParamAccess)) {
        self.query.visit(&format!("{prefix}.query"), f);
        self.key.visit(&format!("{prefix}.key"), f);
        self.value.visit(&format!("{prefix}.value"), f);
        self.output.visit(&format!("{prefix}.output"), f);
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: Attention,
    ln1: LayerNorm,
    lin1: Linear,
    lin2: Linear,
    ln2: LayerNorm,
}

#[derive(Debug, Clone)]
struct LayerTrace {
    x_in: Array2<f64>,
    attn: AttentionCache,
    attn_mask: Option<Array2<f64>>,
    ln1: LnCache,
    y: Array2<f64>,
    ffn_pre: Array2<f64>,
    ffn_act: Array2<f64>,
    ffn_mask: Option<Array2<f64>>,
    ln2: LnCache,
}

impl EncoderLayer {
    fn new(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> EncoderLayer {
        EncoderLayer {
            attn: Attention::new(cfg.hidden, cfg.heads, cfg.init_std, rng),
            ln1: LayerNorm::new(cfg.hidden, cfg.layer_norm_eps),
            lin1: Linear::new(cfg.hidden, cfg.feed_forward, cfg.init_std, rng),
            lin2: Linear::new(cfg.feed_forward, cfg.hidden, cfg.init_std, rng),
            ln2: LayerNorm::new(cfg.hidden, cfg.layer_norm_eps),
        }
    }

    fn forward(
        &self,
        x: Array2<f64>,
        dropout: f64,
        rng: Option<&mut ChaCha8Rng>,
    ) -> (Array2<f64>, LayerTrace) {
        let (mut attn_out, attn_cache) = self.attn.forward(&x);
        let mut attn_mask = None;
        let mut ffn_mask = None;
        let mut rng = rng;
        if dropout > 0.0 {
            if let Some(rng) = rng.as_deref_mut() {
                let mask = dropout_mask(attn_out.nrows(), attn_out.ncols(), dropout, rng);
                attn_out *= &mask;
                attn_mask = Some(mask);
            }
        }
        let r1 = &x + &attn_out;
        let (y, ln1_cache) = self.ln1.forward(&r1);

        let ffn_pre = self.lin1.forward(&y);
        let ffn_act = ffn_pre.mapv(gelu);
        let mut ffn_out = self.lin2.forward(&ffn_act);
        if dropout > 0.0 {
            if let Some(rng) = rng.as_deref_mut() {
                let mask = dropout_mask(ffn_out.nrows(), ffn_out.ncols(), dropout, rng);
                ffn_out *= &mask;
                ffn_mask = Some(mask);
            }
        }
        let r2 = &y + &ffn_out;
        let (out, ln2_cache) = self.ln2.forward(&r2);

        let trace = LayerTrace {
            x_in: x,
            attn: attn_cache,
            attn_mask,
            ln1: ln1_cache,
            y,
            ffn_pre,
            ffn_act,
            ffn_mask,
            ln2: ln2_cache,
        };
        (out, trace)
    }

    fn backward(&mut self, trace: &LayerTrace, dy: &Array2<f64>) -> Array2<f64> {
        let dr2 = self.ln2.backward(&trace.ln2, dy);
        let mut dffn_out = dr2.clone();
        if let Some(mask) = &trace.ffn_mask {
            dffn_out *= mask;
        }
        let dact = self.lin2.backward(&trace.ffn_act, &dffn_out);
        let dpre = dact * trace.ffn_pre.mapv(gelu_prime);
        let mut dyy = dr2; // gradient wrt y through the residual branch
        dyy += &self.lin1.backward(&trace.y, &dpre);

        let dr1 = self.ln1.backward(&trace.ln1, &dyy);
        let mut dattn = dr1.clone();
        if let Some(mask) = &trace.attn_mask {
            dattn *= mask;
        }
        let mut dx = dr1;
        dx += &self.attn.backward(&trace.x_in, &trace.attn, &dattn);
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut dyn ParamAccess)) {
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.ln1.visit(&format!("{prefix}.attn.ln"), f);
        self.lin1.visit(&format!("{prefix}.ffn.lin1"), f);
        self.lin2.visit(&format!("{prefix}.ffn.lin2"), f);
        self.ln2.visit(&format!("{prefix}.ffn.ln"), f);
    }
}

// ---------------------------------------------------------------------------
// The encoder
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    word: Param2,
    position: Param2,
    segment: Param2,
    emb_ln: LayerNorm,
    layers: Vec<EncoderLayer>,
}

/// Forward-pass activations needed by `Encoder::backward`.
pub struct EncoderTrace {
    emb_ln: LnCache,
    emb_mask: Option<Array2<f64>>,
    layers: Vec<LayerTrace>,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, rng: &mut ChaCha8Rng) -> Result<Encoder> {
        cfg.validate()?;
        let word = Param::new(sample_matrix(cfg.vocab_size, cfg.hidden, cfg.init_std, rng));
        let position = Param::new(sample_matrix(cfg.max_len, cfg.hidden, cfg.init_std, rng));
        let segment = Param::new(sample_matrix(2, cfg.hidden, cfg.init_std, rng));
        let emb_ln = LayerNorm::new(cfg.hidden, cfg.layer_norm_eps);
        let layers = (0..cfg.layers).map(|_| EncoderLayer::new(&cfg, rng)).collect();
        Ok(Encoder {
            cfg,
            word,
            position,
            segment,
            emb_ln,
            layers,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn hidden_size(&self) -> usize {
        self.cfg.hidden
    }

    /// Appends freshly initialized rows to the word-embedding table, e.g.
    /// after registering marker tokens on a pretrained vocabulary.
    pub fn resize_vocab(&mut self, new_size: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        if new_size < self.cfg.vocab_size {
            return Err(Error::Model(format!(
                "cannot shrink vocabulary from {} to {new_size}",
                self.cfg.vocab_size
            )));
        }
        let extra = new_size - self.cfg.vocab_size;
        if extra == 0 {
            return Ok(());
        }
        let new_rows = sample_matrix(extra, self.cfg.hidden, self.cfg.init_std, rng);
        self.word.value.append(Axis(0), new_rows.view()).expect("row append");
        self.word.grad.append(Axis(0), Array2::zeros((extra, self.cfg.hidden)).view())
            .expect("row append");
        self.cfg.vocab_size = new_size;
        Ok(())
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Model("empty input sequence".to_string()));
        }
        if ids.len() > self.cfg.max_len {
            return Err(Error::Model(format!(
                "sequence of length {} exceeds the encoder maximum {}",
                ids.len(),
                self.cfg.max_len
            )));
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.cfg.vocab_size) {
            return Err(Error::Model(format!(
                "subword id {bad} out of range for vocabulary of size {}",
                self.cfg.vocab_size
            )));
        }
        Ok(())
    }

    /// The combined word + segment + position input embeddings, with `extra`
    /// (when given) added to every position before the embedding layer norm.
    pub fn compose_input_embeddings(
        &self,
        ids: &[u32],
        extra: Option<ArrayView1<'_, f64>>,
    ) -> Result<Array2<f64>> {
        self.check_ids(ids)?;
        let mut e = Array2::zeros((ids.len(), self.cfg.hidden));
        for (t, &id) in ids.iter().enumerate() {
            let mut row = e.row_mut(t);
            row.assign(&self.word.value.row(id as usize));
            row += &self.position.value.row(t);
            row += &self.segment.value.row(0);
            if let Some(extra) = extra {
                row += &extra;
            }
        }
        Ok(e)
    }

    /// Final-layer hidden states in inference mode (no dropout).
    pub fn forward(&self, ids: &[u32], extra: Option<ArrayView1<'_, f64>>) -> Result<Array2<f64>> {
        let e = self.compose_input_embeddings(ids, extra)?;
        let (mut h, _) = self.emb_ln.forward(&e);
        for layer in &self.layers {
            let (out, _) = layer.forward(h, 0.0, None);
            h = out;
        }
        Ok(h)
    }

    /// Training-mode forward pass: dropout is active when configured, and the
    /// returned trace enables `backward`.
    pub fn forward_train(
        &self,
        ids: &[u32],
        extra: Option<ArrayView1<'_, f64>>,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Array2<f64>, EncoderTrace)> {
        let e = self.compose_input_embeddings(ids, extra)?;
        let (mut h, emb_ln_cache) = self.emb_ln.forward(&e);
        let mut emb_mask = None;
        if self.cfg.dropout > 0.0 {
            let mask = dropout_mask(h.nrows(), h.ncols(), self.cfg.dropout, rng);
            h *= &mask;
            emb_mask = Some(mask);
        }

        let mut layer_traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let rng_opt = if self.cfg.dropout > 0.0 { Some(&mut *rng) } else { None };
            let (out, trace) = layer.forward(h, self.cfg.dropout, rng_opt);
            layer_traces.push(trace);
            h = out;
        }

        Ok((
            h,
            EncoderTrace {
                emb_ln: emb_ln_cache,
                emb_mask,
                layers: layer_traces,
            },
        ))
    }

    /// Backpropagates `dstates` (gradient of the loss w.r.t. the final
    /// hidden states), accumulating parameter gradients. Returns the gradient
    /// w.r.t. a vector added uniformly to every input position — the
    /// dataset-embedding row gradient.
    pub fn backward(
        &mut self,
        ids: &[u32],
        trace: &EncoderTrace,
        dstates: Array2<f64>,
    ) -> Array1<f64> {
        let mut grad = dstates;
        for (layer, layer_trace) in self.layers.iter_mut().zip(&trace.layers).rev() {
            grad = layer.backward(layer_trace, &grad);
        }
        if let Some(mask) = &trace.emb_mask {
            grad *= mask;
        }
        let de = self.emb_ln.backward(&trace.emb_ln, &grad);

        for (t, &id) in ids.iter().enumerate() {
            let row = de.row(t);
            let mut wrow = self.word.grad.row_mut(id as usize);
            wrow += &row;
            let mut prow = self.position.grad.row_mut(t);
            prow += &row;
        }
        let summed = de.sum_axis(Axis(0));
        let mut srow = self.segment.grad.row_mut(0);
        srow += &summed;
        summed
    }
}

impl VisitParams for Encoder {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut dyn ParamAccess)) {
        f("embeddings.word", &mut self.word);
        f("embeddings.position", &mut self.position);
        f("embeddings.segment", &mut self.segment);
        self.emb_ln.visit("embeddings.ln", f);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit(&format!("layer{i}"), f);
        }
    }
}
