//! The three encoder–decoder architectures.
//!
//! * `rnn` — the encoder's last hidden state is the context at every decode
//!   step.
//! * `arnn` — the context at step i is a weighted sum of all encoder states,
//!   weighted by a softmax over cosine similarities with the previous
//!   decoder state.
//! * `arnn_err` — attention weights are additionally scaled by a per-token
//!   correctness estimate e_j = σ(w·h_j + b), read straight off the encoder
//!   and trained jointly against corruption labels. The weighted sum is not
//!   renormalized; a diagnostic flag restores renormalization for ablations.
//!
//! One graph-building path serves training, validation, and decoding, so
//! batched training and single-sequence inference cannot drift apart.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::confusion::CorruptedSample;
use crate::numerics::optim::init_uniform_seeded;
use crate::numerics::{
    load_checkpoint, save_checkpoint, CheckpointError, Graph, LstmLayer, NumericsError, ParamSet,
    Tensor, Var,
};
use crate::seed::stream_seed;
use crate::vocab::{Special, TokenId, TokenSeq, Vocabulary};

/// Epsilon guarding the renormalized-attention denominator.
const RENORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input sequence is empty")]
    EmptyInput,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("correctness labels are required in arnn_err mode")]
    MissingLabels,
    #[error("checkpoint was built for a different vocabulary ({0})")]
    VocabMismatch(String),
    #[error("checkpoint header is malformed: {0}")]
    BadHeader(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Architecture selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Rnn,
    Arnn,
    ArnnErr,
}

impl Mode {
    pub fn uses_attention(self) -> bool {
        !matches!(self, Mode::Rnn)
    }

    pub fn uses_error_estimator(self) -> bool {
        matches!(self, Mode::ArnnErr)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Rnn => "rnn",
            Mode::Arnn => "arnn",
            Mode::ArnnErr => "arnn_err",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rnn" => Ok(Mode::Rnn),
            "arnn" => Ok(Mode::Arnn),
            "arnn_err" => Ok(Mode::ArnnErr),
            other => Err(format!("unknown mode {other:?} (expected rnn|arnn|arnn_err)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub mode: Mode,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub max_decode_len: usize,
    /// Diagnostic: renormalize e-weighted attention back to a probability
    /// vector instead of using the plain weighted sum.
    pub renormalize_error_weights: bool,
    pub source_vocab: Arc<Vocabulary>,
    pub target_vocab: Arc<Vocabulary>,
}

impl ModelConfig {
    /// Desk-scale defaults: 2 layers, 64 hidden units, 32-dim embeddings.
    pub fn new(mode: Mode, source_vocab: Arc<Vocabulary>, target_vocab: Arc<Vocabulary>) -> ModelConfig {
        ModelConfig {
            mode,
            num_layers: 2,
            hidden_dim: 64,
            embed_dim: 32,
            max_decode_len: 30,
            renormalize_error_weights: false,
            source_vocab,
            target_vocab,
        }
    }
}

/// Checkpoint header contents.
#[derive(Debug, Serialize, Deserialize)]
struct ConfigHeader {
    mode: Mode,
    num_layers: usize,
    hidden_dim: usize,
    embed_dim: usize,
    max_decode_len: usize,
    renormalize_error_weights: bool,
    source_vocab_len: usize,
    source_vocab_checksum: String,
    target_vocab_len: usize,
    target_vocab_checksum: String,
}

/// Parameter slots for one model instance.
#[derive(Debug, Clone)]
struct Layout {
    src_embed: usize,
    tgt_embed: usize,
    enc: Vec<LstmLayer>,
    dec: Vec<LstmLayer>,
    err_head: Option<(usize, usize)>,
    out_w: usize,
    out_b: usize,
}

pub struct Model {
    pub config: ModelConfig,
    pub params: ParamSet,
    layout: Layout,
}

impl Model {
    /// Builds a model with every parameter drawn uniformly from
    /// [−0.1, 0.1], each from a stream derived from its own name. Two modes
    /// built from the same seed therefore share identical values for their
    /// common parameters.
    pub fn new(config: ModelConfig, init_seed: u64) -> Model {
        let mut params = ParamSet::new();
        let add = |params: &mut ParamSet, name: &str, shape: &[usize]| {
            let value = init_uniform_seeded(shape, stream_seed(init_seed, name));
            params.add(name, value)
        };
        let h = config.hidden_dim;
        let e = config.embed_dim;
        let src_embed = add(&mut params, "src_embed", &[config.source_vocab.len(), e]);
        let tgt_embed = add(&mut params, "tgt_embed", &[config.target_vocab.len(), e]);
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        for l in 0..config.num_layers {
            let in_dim = if l == 0 { e } else { h };
            enc.push(LstmLayer::register(&mut params, &format!("enc.l{l}"), in_dim, h, init_seed));
        }
        let err_head = config.mode.uses_error_estimator().then(|| {
            (
                add(&mut params, "err.w", &[h, 1]),
                add(&mut params, "err.b", &[1]),
            )
        });
        for l in 0..config.num_layers {
            let in_dim = if l == 0 { e + h } else { h };
            dec.push(LstmLayer::register(&mut params, &format!("dec.l{l}"), in_dim, h, init_seed));
        }
        let out_w = add(&mut params, "out.w", &[h, config.target_vocab.len()]);
        let out_b = add(&mut params, "out.b", &[config.target_vocab.len()]);
        let layout = Layout { src_embed, tgt_embed, enc, dec, err_head, out_w, out_b };
        Model { config, params, layout }
    }

    fn rebuild_layout(config: &ModelConfig, params: &ParamSet) -> Result<Layout, ModelError> {
        let slot = |name: &str| {
            params
                .slot(name)
                .ok_or_else(|| ModelError::BadHeader(format!("missing parameter {name:?}")))
        };
        let h = config.hidden_dim;
        let e = config.embed_dim;
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        for l in 0..config.num_layers {
            let in_dim = if l == 0 { e } else { h };
            enc.push(lookup_layer(params, &format!("enc.l{l}"), in_dim, h)?);
            let in_dim = if l == 0 { e + h } else { h };
            dec.push(lookup_layer(params, &format!("dec.l{l}"), in_dim, h)?);
        }
        Ok(Layout {
            src_embed: slot("src_embed")?,
            tgt_embed: slot("tgt_embed")?,
            enc,
            dec,
            err_head: if config.mode.uses_error_estimator() {
                Some((slot("err.w")?, slot("err.b")?))
            } else {
                None
            },
            out_w: slot("out.w")?,
            out_b: slot("out.b")?,
        })
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<(), ModelError> {
        let header = ConfigHeader {
            mode: self.config.mode,
            num_layers: self.config.num_layers,
            hidden_dim: self.config.hidden_dim,
            embed_dim: self.config.embed_dim,
            max_decode_len: self.config.max_decode_len,
            renormalize_error_weights: self.config.renormalize_error_weights,
            source_vocab_len: self.config.source_vocab.len(),
            source_vocab_checksum: self.config.source_vocab.checksum(),
            target_vocab_len: self.config.target_vocab.len(),
            target_vocab_checksum: self.config.target_vocab.checksum(),
        };
        let header = serde_json::to_string(&header).expect("header serializes");
        save_checkpoint(path, &header, &self.params)?;
        Ok(())
    }

    /// Loads a checkpoint and checks it against the supplied vocabularies.
    pub fn load<P: AsRef<Path>>(
        path: P,
        source_vocab: Arc<Vocabulary>,
        target_vocab: Arc<Vocabulary>,
    ) -> Result<Model, ModelError> {
        let (header, params) = load_checkpoint(path)?;
        let header: ConfigHeader =
            serde_json::from_str(&header).map_err(|e| ModelError::BadHeader(e.to_string()))?;
        if header.source_vocab_checksum != source_vocab.checksum() {
            return Err(ModelError::VocabMismatch("source".into()));
        }
        if header.target_vocab_checksum != target_vocab.checksum() {
            return Err(ModelError::VocabMismatch("target".into()));
        }
        let config = ModelConfig {
            mode: header.mode,
            num_layers: header.num_layers,
            hidden_dim: header.hidden_dim,
            embed_dim: header.embed_dim,
            max_decode_len: header.max_decode_len,
            renormalize_error_weights: header.renormalize_error_weights,
            source_vocab,
            target_vocab,
        };
        let layout = Model::rebuild_layout(&config, &params)?;
        Ok(Model { config, params, layout })
    }
}

fn lookup_layer(
    params: &ParamSet,
    prefix: &str,
    input_dim: usize,
    hidden_dim: usize,
) -> Result<LstmLayer, ModelError> {
    LstmLayer::lookup(params, prefix, input_dim, hidden_dim)
        .ok_or_else(|| ModelError::BadHeader(format!("missing LSTM parameters under {prefix:?}")))
}

/// Per-pass knobs; `eval` freezes everything stochastic.
#[derive(Debug, Clone, Copy)]
pub struct ForwardOpts {
    /// Architecture to run. Usually the model's own mode; an `arnn_err`
    /// parameter set can also be run as plain `arnn` (the error head is
    /// simply unused).
    pub mode: Mode,
    /// Diagnostic: replace every e_j by 1 inside the context sum.
    pub force_e_one: bool,
    pub dropout: f64,
    /// Probability that each decoder input token is the reference rather
    /// than the model's previous argmax.
    pub teacher_forcing: f64,
    /// Weight of the correctness-estimation loss term.
    pub lambda_err: f64,
}

impl ForwardOpts {
    pub fn eval(mode: Mode) -> ForwardOpts {
        ForwardOpts { mode, force_e_one: false, dropout: 0.0, teacher_forcing: 1.0, lambda_err: 0.0 }
    }

    pub fn train(mode: Mode, dropout: f64, teacher_forcing: f64, lambda_err: f64) -> ForwardOpts {
        ForwardOpts { mode, force_e_one: false, dropout, teacher_forcing, lambda_err }
    }
}

/// One training batch: equal-width PAD-padded rows. Targets carry EOS.
#[derive(Debug, Clone)]
pub struct Batch {
    pub src: Vec<TokenSeq>,
    pub src_len: Vec<usize>,
    pub tgt: Vec<TokenSeq>,
    pub tgt_len: Vec<usize>,
    pub labels: Option<Vec<Vec<f64>>>,
}

/// One sample before padding. `target` must not yet carry EOS.
#[derive(Debug, Clone)]
pub struct BatchItem {
    pub source: TokenSeq,
    pub target: TokenSeq,
    pub labels: Option<Vec<bool>>,
}

impl BatchItem {
    pub fn clean(source: TokenSeq, target: TokenSeq) -> BatchItem {
        BatchItem { source, target, labels: None }
    }

    pub fn corrupted(sample: &CorruptedSample, target: TokenSeq) -> BatchItem {
        BatchItem {
            source: sample.corrupted.clone(),
            target,
            labels: Some(sample.labels.clone()),
        }
    }
}

impl Batch {
    pub fn new(items: &[BatchItem]) -> Result<Batch, ModelError> {
        if items.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let pad = Special::Pad.id();
        let max_src = items.iter().map(|it| it.source.len()).max().unwrap();
        let max_tgt = items.iter().map(|it| it.target.len()).max().unwrap() + 1; // EOS
        let mut batch = Batch {
            src: Vec::with_capacity(items.len()),
            src_len: Vec::with_capacity(items.len()),
            tgt: Vec::with_capacity(items.len()),
            tgt_len: Vec::with_capacity(items.len()),
            labels: items.iter().any(|it| it.labels.is_some()).then(Vec::new),
        };
        for it in items {
            if it.source.is_empty() || it.target.is_empty() {
                return Err(ModelError::EmptyInput);
            }
            if let Some(l) = &it.labels {
                if l.len() != it.source.len() {
                    return Err(ModelError::LengthMismatch(format!(
                        "{} labels for a {}-token source",
                        l.len(),
                        it.source.len()
                    )));
                }
            }
            let mut s = it.source.clone();
            s.resize(max_src, pad);
            batch.src.push(s);
            batch.src_len.push(it.source.len());

            let mut t = it.target.clone();
            t.push(Special::Eos.id());
            let tlen = t.len();
            t.resize(max_tgt, pad);
            batch.tgt.push(t);
            batch.tgt_len.push(tlen);

            if let Some(rows) = &mut batch.labels {
                let mut l: Vec<f64> = it
                    .labels
                    .as_ref()
                    .ok_or(ModelError::MissingLabels)?
                    .iter()
                    .map(|&b| f64::from(b))
                    .collect();
                l.resize(max_src, 1.0);
                rows.push(l);
            }
        }
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    pub fn src_width(&self) -> usize {
        self.src[0].len()
    }

    pub fn tgt_width(&self) -> usize {
        self.tgt[0].len()
    }
}

/// Encoder results as graph variables.
pub struct EncGraph {
    /// Top-layer hidden state per input step, each `[B,H]`.
    pub hidden: Vec<Var>,
    /// Correctness estimates per input step, each `[B]` (arnn_err only).
    pub error_est: Option<Vec<Var>>,
    /// (h, c) per layer after the last real step of every sequence.
    pub final_layers: Vec<(Var, Var)>,
    /// Top-layer hidden state after the last real step, `[B,H]`.
    pub top_final: Var,
}

impl Model {
    /// Unrolls the encoder over a padded batch. Sequences shorter than the
    /// batch width stop updating their state at their own last token: each
    /// padded step blends the fresh state with the carried one under the
    /// position mask.
    pub fn build_encoder(
        &self,
        g: &mut Graph,
        src: &[TokenSeq],
        src_len: &[usize],
        opts: &ForwardOpts,
        rng_drop: &mut ChaCha12Rng,
    ) -> Result<EncGraph, ModelError> {
        let batch = src.len();
        let width = src[0].len();
        if width == 0 {
            return Err(ModelError::EmptyInput);
        }
        let h = self.config.hidden_dim;
        let embed = g.param(&self.params, self.layout.src_embed)?;
        let enc_layers: Vec<_> = self
            .layout
            .enc
            .iter()
            .map(|l| l.bind(g, &self.params))
            .collect::<Result<_, _>>()?;
        let err_head = match self.layout.err_head {
            Some((w, b)) if opts.mode.uses_error_estimator() => {
                Some((g.param(&self.params, w)?, g.param(&self.params, b)?))
            }
            _ => None,
        };

        let zero = g.input(Tensor::zeros(&[batch, h]))?;
        let mut states: Vec<(Var, Var)> = vec![(zero, zero); self.layout.enc.len()];
        let mut hidden = Vec::with_capacity(width);
        let mut error_est: Option<Vec<Var>> = err_head.map(|_| Vec::with_capacity(width));

        for j in 0..width {
            let ids: Vec<TokenId> = src.iter().map(|row| row[j]).collect();
            let all_live = src_len.iter().all(|&l| j < l);
            let step_mask = if all_live {
                None
            } else {
                let m: Vec<f64> = src_len.iter().map(|&l| f64::from(j < l)).collect();
                let inv: Vec<f64> = m.iter().map(|v| 1.0 - v).collect();
                let mv = g.input(Tensor::from_vec(&[batch], m)?)?;
                let iv = g.input(Tensor::from_vec(&[batch], inv)?)?;
                Some((mv, iv))
            };

            let mut x = g.embedding(embed, &ids)?;
            for (layer, state) in enc_layers.iter().zip(states.iter_mut()) {
                let dropped = g.dropout(x, opts.dropout, rng_drop)?;
                let (mut nh, mut nc) = layer.step(g, dropped, state.0, state.1)?;
                if let Some((m, inv)) = step_mask {
                    let kept_h = g.row_scale(state.0, inv)?;
                    let new_h = g.row_scale(nh, m)?;
                    nh = g.add(new_h, kept_h)?;
                    let kept_c = g.row_scale(state.1, inv)?;
                    let new_c = g.row_scale(nc, m)?;
                    nc = g.add(new_c, kept_c)?;
                }
                *state = (nh, nc);
                x = nh;
            }
            hidden.push(x);
            if let (Some((w, b)), Some(est)) = (err_head, error_est.as_mut()) {
                let proj = g.matmul(x, w)?;
                let biased = g.add(proj, b)?;
                let act = g.sigmoid(biased)?;
                est.push(g.reshape(act, &[batch])?);
            }
        }

        let top_final = states.last().unwrap().0;
        Ok(EncGraph { hidden, error_est, final_layers: states, top_final })
    }

    /// Attention weights for one decode step: a softmax over the cosine
    /// similarity between the previous decoder state and every encoder
    /// state, with padded positions masked out.
    fn build_attention(
        &self,
        g: &mut Graph,
        prev_top: Var,
        enc: &EncGraph,
        src_mask: Option<&Tensor>,
    ) -> Result<Var, ModelError> {
        let batch = g.value(prev_top).shape()[0];
        let mut scores = Vec::with_capacity(enc.hidden.len());
        for &hj in &enc.hidden {
            let c = g.cosine(prev_top, hj)?;
            scores.push(g.reshape(c, &[batch, 1])?);
        }
        let m = g.concat(&scores)?;
        let a = match src_mask {
            Some(mask) => g.masked_softmax(m, mask)?,
            None => g.softmax(m)?,
        };
        Ok(a)
    }

    /// The context vector for one decode step under the given mode:
    /// `rnn` returns the final encoder state, `arnn` the attention-weighted
    /// sum, `arnn_err` the e-weighted attention sum (no renormalization
    /// unless the diagnostic flag is set).
    fn build_context(
        &self,
        g: &mut Graph,
        enc: &EncGraph,
        attention: Option<Var>,
        opts: &ForwardOpts,
    ) -> Result<Var, ModelError> {
        if !opts.mode.uses_attention() {
            return Ok(enc.top_final);
        }
        let a = attention.expect("attention weights required in attentive modes");
        let use_err = opts.mode.uses_error_estimator() && !opts.force_e_one;
        let mut weights = Vec::with_capacity(enc.hidden.len());
        for j in 0..enc.hidden.len() {
            let mut w = g.col(a, j)?;
            if use_err {
                let e = enc
                    .error_est
                    .as_ref()
                    .expect("error estimates exist in arnn_err mode")[j];
                w = g.mul(w, e)?;
            }
            weights.push(w);
        }
        if use_err && self.config.renormalize_error_weights {
            let total = g.add_n(&weights)?;
            let inv = g.recip(total, RENORM_EPS)?;
            for w in &mut weights {
                *w = g.mul(*w, inv)?;
            }
        }
        let mut terms = Vec::with_capacity(weights.len());
        for (j, &w) in weights.iter().enumerate() {
            terms.push(g.row_scale(enc.hidden[j], w)?);
        }
        Ok(g.add_n(&terms)?)
    }

    /// Runs the decoder LSTM stack one step. Returns the top hidden state;
    /// layer states advance in place.
    fn build_decoder_step(
        &self,
        g: &mut Graph,
        states: &mut [(Var, Var)],
        input_ids: &[TokenId],
        context: Var,
        opts: &ForwardOpts,
        rng_drop: &mut ChaCha12Rng,
    ) -> Result<Var, ModelError> {
        let embed = g.param(&self.params, self.layout.tgt_embed)?;
        let emb = g.embedding(embed, input_ids)?;
        let mut x = g.concat(&[emb, context])?;
        let dec_layers: Vec<_> = self
            .layout
            .dec
            .iter()
            .map(|l| l.bind(g, &self.params))
            .collect::<Result<_, _>>()?;
        for (layer, state) in dec_layers.iter().zip(states.iter_mut()) {
            let dropped = g.dropout(x, opts.dropout, rng_drop)?;
            let (nh, nc) = layer.step(g, dropped, state.0, state.1)?;
            *state = (nh, nc);
            x = nh;
        }
        Ok(x)
    }

    /// Output distribution from a decoder state: a softmax over the target
    /// vocabulary with the structural tokens PAD and BOS masked off.
    fn build_output(&self, g: &mut Graph, dec_top: Var) -> Result<Var, ModelError> {
        let w = g.param(&self.params, self.layout.out_w)?;
        let b = g.param(&self.params, self.layout.out_b)?;
        let proj = g.matmul(dec_top, w)?;
        let logits = g.add(proj, b)?;
        let batch = g.value(logits).shape()[0];
        let mask = output_mask(batch, self.config.target_vocab.len());
        Ok(g.masked_softmax(logits, &mask)?)
    }

    /// Builds the joint loss for one batch:
    ///   headline NLL (per-sequence mean over real target positions,
    ///   averaged over the batch) + λ · correctness BCE (same averaging over
    ///   source positions), the latter only in `arnn_err` mode.
    ///
    /// Decoder inputs follow scheduled sampling: at each step past the
    /// first, every sequence independently feeds the reference token with
    /// probability `opts.teacher_forcing`, otherwise the model's previous
    /// argmax.
    pub fn build_batch_loss(
        &self,
        g: &mut Graph,
        batch: &Batch,
        opts: &ForwardOpts,
        rng_drop: &mut ChaCha12Rng,
        rng_ss: &mut ChaCha12Rng,
    ) -> Result<BatchLoss, ModelError> {
        if opts.mode.uses_error_estimator() && batch.labels.is_none() {
            return Err(ModelError::MissingLabels);
        }
        let b = batch.len();
        let enc = self.build_encoder(g, &batch.src, &batch.src_len, opts, rng_drop)?;
        let src_mask = attention_mask(b, batch.src_width(), &batch.src_len);

        let mut states = enc.final_layers.clone();
        let mut prev_top = enc.top_final;
        let mut prev_probs: Option<Var> = None;
        let mut ce_terms = Vec::with_capacity(batch.tgt_width());

        for i in 0..batch.tgt_width() {
            let attention = if opts.mode.uses_attention() {
                Some(self.build_attention(g, prev_top, &enc, Some(&src_mask))?)
            } else {
                None
            };
            let context = self.build_context(g, &enc, attention, opts)?;

            let input_ids: Vec<TokenId> = if i == 0 {
                vec![Special::Bos.id(); b]
            } else {
                let sampled = prev_probs.map(|p| argmax_rows(g.value(p)));
                (0..b)
                    .map(|row| {
                        let reference = batch.tgt[row][i - 1];
                        let use_ref = rng_ss.random::<f64>() < opts.teacher_forcing;
                        match (&sampled, use_ref) {
                            (Some(s), false) => s[row],
                            _ => reference,
                        }
                    })
                    .collect()
            };

            let dec_top = self.build_decoder_step(g, &mut states, &input_ids, context, opts, rng_drop)?;
            let probs = self.build_output(g, dec_top)?;

            let targets: Vec<TokenId> = batch.tgt.iter().map(|row| row[i]).collect();
            let weights: Vec<f64> = batch
                .tgt_len
                .iter()
                .map(|&n| if i < n { 1.0 / (b as f64 * n as f64) } else { 0.0 })
                .collect();
            let w = Tensor::from_vec(&[b], weights)?;
            ce_terms.push(g.cross_entropy(probs, &targets, &w)?);

            prev_probs = Some(probs);
            prev_top = dec_top;
        }

        let nll = g.add_n(&ce_terms)?;
        let mut loss = nll;
        let mut err_bce = None;
        if opts.mode.uses_error_estimator() {
            let labels = batch.labels.as_ref().expect("checked above");
            let est = enc.error_est.as_ref().expect("arnn_err encoder emits estimates");
            let mut bce_terms = Vec::with_capacity(est.len());
            for (j, &e) in est.iter().enumerate() {
                let l: Vec<f64> = labels.iter().map(|row| row[j]).collect();
                let w: Vec<f64> = batch
                    .src_len
                    .iter()
                    .map(|&m| if j < m { 1.0 / (b as f64 * m as f64) } else { 0.0 })
                    .collect();
                let lt = Tensor::from_vec(&[b], l)?;
                let wt = Tensor::from_vec(&[b], w)?;
                bce_terms.push(g.binary_cross_entropy(e, &lt, &wt)?);
            }
            let bce = g.add_n(&bce_terms)?;
            err_bce = Some(g.value(bce).item());
            if opts.lambda_err != 0.0 {
                let scaled = g.scale(bce, opts.lambda_err)?;
                loss = g.add(nll, scaled)?;
            }
        }

        Ok(BatchLoss { loss, nll: g.value(nll).item(), err_bce })
    }
}

/// Loss variables and their current values for one batch.
pub struct BatchLoss {
    pub loss: Var,
    /// Headline negative log-likelihood component.
    pub nll: f64,
    /// Unweighted correctness-estimation BCE component, when present.
    pub err_bce: Option<f64>,
}

/// `[B,V]` 0/1 mask that forbids PAD and BOS as outputs.
fn output_mask(batch: usize, vocab_len: usize) -> Tensor {
    let mut row = vec![1.0; vocab_len];
    row[Special::Pad.id()] = 0.0;
    row[Special::Bos.id()] = 0.0;
    let data: Vec<f64> = row
        .iter()
        .cycle()
        .take(batch * vocab_len)
        .copied()
        .collect();
    Tensor::from_vec(&[batch, vocab_len], data).expect("mask matches shape")
}

/// `[B,M]` 0/1 mask with 1 at real source positions.
fn attention_mask(batch: usize, width: usize, src_len: &[usize]) -> Tensor {
    let mut data = vec![0.0; batch * width];
    for (row, &len) in src_len.iter().enumerate() {
        for j in 0..len.min(width) {
            data[row * width + j] = 1.0;
        }
    }
    Tensor::from_vec(&[batch, width], data).expect("mask matches shape")
}

/// Row-wise argmax with ties broken toward the lowest id.
pub(crate) fn argmax_rows(probs: &Tensor) -> Vec<TokenId> {
    let (rows, _) = probs.dims2().expect("probs are [B,V]");
    (0..rows)
        .map(|r| {
            let row = probs.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Single-sequence (inference-facing) views over the same graph path.
// ---------------------------------------------------------------------------

/// Encoder results for one sequence, extracted to plain tensors.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// Top-layer hidden state per input step, each `[H]`.
    pub hidden: Vec<Tensor>,
    /// (h, c) per layer after the last step, each `[H]`.
    pub final_layers: Vec<(Tensor, Tensor)>,
    /// Correctness estimates e_j (arnn_err only).
    pub error_est: Option<Vec<f64>>,
}

impl EncoderOutput {
    pub fn top_final(&self) -> &Tensor {
        &self.final_layers.last().expect("at least one layer").0
    }
}

/// Rolling decoder state for stepwise decoding.
#[derive(Debug, Clone)]
pub struct DecoderState {
    pub step_index: usize,
    /// (h, c) per layer, each `[H]`.
    pub layers: Vec<(Tensor, Tensor)>,
    /// Top-layer hidden state feeding the next step's attention.
    pub prev_top: Tensor,
    /// The context used by the most recent step.
    pub last_context: Option<Tensor>,
}

impl Model {
    /// Encodes one sequence (no padding, no dropout).
    pub fn encode(&self, source: &[TokenId], opts: &ForwardOpts) -> Result<EncoderOutput, ModelError> {
        if source.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        let mut g = Graph::new();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let enc = self.build_encoder(&mut g, &[source.to_vec()], &[source.len()], opts, &mut rng)?;
        let row = |g: &Graph, v: Var| Tensor::row_vector(g.value(v).row(0).to_vec());
        Ok(EncoderOutput {
            hidden: enc.hidden.iter().map(|&v| row(&g, v)).collect(),
            final_layers: enc
                .final_layers
                .iter()
                .map(|&(h, c)| (row(&g, h), row(&g, c)))
                .collect(),
            error_est: enc
                .error_est
                .as_ref()
                .map(|es| es.iter().map(|&e| g.value(e).data()[0]).collect()),
        })
    }

    /// Fresh decoder state seeded from the encoder's final state.
    pub fn init_decoder(&self, enc: &EncoderOutput) -> DecoderState {
        DecoderState {
            step_index: 0,
            layers: enc.final_layers.clone(),
            prev_top: enc.top_final().clone(),
            last_context: None,
        }
    }

    /// One decode step: probabilities over the target vocabulary plus the
    /// advanced state. Deterministic; runs the same graph ops as training.
    pub fn decode_step(
        &self,
        enc: &EncoderOutput,
        state: &DecoderState,
        y_prev: TokenId,
        opts: &ForwardOpts,
    ) -> Result<(Vec<f64>, DecoderState), ModelError> {
        let mut g = Graph::new();
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let h = self.config.hidden_dim;

        let hidden: Vec<Var> = enc
            .hidden
            .iter()
            .map(|t| g.input(Tensor::from_vec(&[1, h], t.data().to_vec())?))
            .collect::<Result<_, _>>()?;
        let error_est = match (&enc.error_est, opts.mode.uses_error_estimator()) {
            (Some(es), true) => Some(
                es.iter()
                    .map(|&e| g.input(Tensor::from_vec(&[1], vec![e])?))
                    .collect::<Result<Vec<_>, _>>()?,
            ),
            _ => None,
        };
        let final_top = g.input(Tensor::from_vec(&[1, h], enc.top_final().data().to_vec())?)?;
        let enc_graph = EncGraph {
            hidden,
            error_est,
            final_layers: Vec::new(),
            top_final: final_top,
        };

        let prev_top = g.input(Tensor::from_vec(&[1, h], state.prev_top.data().to_vec())?)?;
        let attention = if opts.mode.uses_attention() {
            Some(self.build_attention(&mut g, prev_top, &enc_graph, None)?)
        } else {
            None
        };
        let context = self.build_context(&mut g, &enc_graph, attention, opts)?;

        let mut states: Vec<(Var, Var)> = state
            .layers
            .iter()
            .map(|(hh, cc)| {
                Ok::<_, NumericsError>((
                    g.input(Tensor::from_vec(&[1, h], hh.data().to_vec())?)?,
                    g.input(Tensor::from_vec(&[1, h], cc.data().to_vec())?)?,
                ))
            })
            .collect::<Result<_, _>>()?;

        let dec_top = self.build_decoder_step(&mut g, &mut states, &[y_prev], context, opts, &mut rng)?;
        let probs = self.build_output(&mut g, dec_top)?;

        let next = DecoderState {
            step_index: state.step_index + 1,
            layers: states
                .iter()
                .map(|&(hh, cc)| {
                    (
                        Tensor::row_vector(g.value(hh).row(0).to_vec()),
                        Tensor::row_vector(g.value(cc).row(0).to_vec()),
                    )
                })
                .collect(),
            prev_top: Tensor::row_vector(g.value(dec_top).row(0).to_vec()),
            last_context: Some(Tensor::row_vector(g.value(context).row(0).to_vec())),
        };
        Ok((g.value(probs).row(0).to_vec(), next))
    }

    /// One decode step over an existing batched graph: attention from the
    /// previous top state, context, decoder stack, masked output softmax.
    /// Advances `states`/`prev_top` in place and returns the probability
    /// rows. Drives batched greedy decoding.
    pub fn step_for_decode(
        &self,
        g: &mut Graph,
        enc: &EncGraph,
        states: &mut [(Var, Var)],
        prev_top: &mut Var,
        input_ids: &[TokenId],
        src_mask: &Tensor,
        opts: &ForwardOpts,
    ) -> Result<Tensor, ModelError> {
        let attention = if opts.mode.uses_attention() {
            Some(self.build_attention(g, *prev_top, enc, Some(src_mask))?)
        } else {
            None
        };
        let context = self.build_context(g, enc, attention, opts)?;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let dec_top = self.build_decoder_step(g, states, input_ids, context, opts, &mut rng)?;
        let probs = self.build_output(g, dec_top)?;
        *prev_top = dec_top;
        Ok(g.value(probs).clone())
    }

    /// The same architecture over a different parameter set (shapes and
    /// names must match, e.g. a perturbed clone of this model's own set).
    pub fn with_params(&self, params: ParamSet) -> Model {
        Model {
            config: self.config.clone(),
            params,
            layout: self.layout.clone(),
        }
    }

    /// Forward-only batch loss value; stochastic choices are fixed by
    /// `seed`, so the result is a pure function of the parameters.
    pub fn batch_loss_value(&self, batch: &Batch, opts: &ForwardOpts, seed: u64) -> Result<f64, ModelError> {
        let mut g = if opts.dropout > 0.0 { Graph::new_train() } else { Graph::new() };
        let mut rng_drop = ChaCha12Rng::seed_from_u64(stream_seed(seed, "dropout"));
        let mut rng_ss = ChaCha12Rng::seed_from_u64(stream_seed(seed, "scheduled-sampling"));
        let parts = self.build_batch_loss(&mut g, batch, opts, &mut rng_drop, &mut rng_ss)?;
        Ok(g.value(parts.loss).item())
    }

    /// Forward + backward over a batch; gradients accumulate into the
    /// model's parameters. Returns the loss value.
    pub fn batch_backward(&mut self, batch: &Batch, opts: &ForwardOpts, seed: u64) -> Result<f64, ModelError> {
        let mut g = if opts.dropout > 0.0 { Graph::new_train() } else { Graph::new() };
        let mut rng_drop = ChaCha12Rng::seed_from_u64(stream_seed(seed, "dropout"));
        let mut rng_ss = ChaCha12Rng::seed_from_u64(stream_seed(seed, "scheduled-sampling"));
        let parts = self.build_batch_loss(&mut g, batch, opts, &mut rng_drop, &mut rng_ss)?;
        g.backward(parts.loss)?;
        g.flush_grads(&mut self.params);
        Ok(g.value(parts.loss).item())
    }

    /// Joint loss and gradients for a single sample; a convenience wrapper
    /// over the batched path with batch size 1. Gradients accumulate into
    /// the model's parameter set.
    pub fn sequence_nll(
        &mut self,
        item: &BatchItem,
        opts: &ForwardOpts,
        seed: u64,
    ) -> Result<f64, ModelError> {
        let batch = Batch::new(std::slice::from_ref(item))?;
        let mut g = if opts.dropout > 0.0 { Graph::new_train() } else { Graph::new() };
        let mut rng_drop = ChaCha12Rng::seed_from_u64(stream_seed(seed, "dropout"));
        let mut rng_ss = ChaCha12Rng::seed_from_u64(stream_seed(seed, "scheduled-sampling"));
        let parts = self.build_batch_loss(&mut g, &batch, opts, &mut rng_drop, &mut rng_ss)?;
        g.backward(parts.loss)?;
        g.flush_grads(&mut self.params);
        Ok(g.value(parts.loss).item())
    }
}

/// Softmax of cosine similarities between a decoder state and the encoder
/// states, as plain numbers.
pub fn attention_weights(s_prev: &Tensor, hidden: &[Tensor]) -> Vec<f64> {
    assert!(!hidden.is_empty(), "attention needs at least one encoder state");
    let h = s_prev.len();
    let mut g = Graph::new();
    let s = g
        .input(Tensor::from_vec(&[1, h], s_prev.data().to_vec()).expect("state is [H]"))
        .expect("finite state");
    let mut scores = Vec::with_capacity(hidden.len());
    for t in hidden {
        let hv = g
            .input(Tensor::from_vec(&[1, h], t.data().to_vec()).expect("hidden is [H]"))
            .expect("finite hidden");
        let c = g.cosine(s, hv).expect("shapes agree");
        scores.push(g.reshape(c, &[1, 1]).expect("reshape"));
    }
    let m = g.concat(&scores).expect("concat");
    let a = g.softmax(m).expect("softmax");
    g.value(a).row(0).to_vec()
}

/// The context vector as a plain weighted sum, mirroring the graph path:
/// `rnn` ignores the weights and returns the final state, `arnn` computes
/// Σ aⱼhⱼ, `arnn_err` Σ eⱼaⱼhⱼ with no renormalization.
pub fn context(
    mode: Mode,
    encoder_out: &EncoderOutput,
    attention: &[f64],
    error_est: Option<&[f64]>,
) -> Result<Tensor, ModelError> {
    if !mode.uses_attention() {
        return Ok(encoder_out.top_final().clone());
    }
    let m = encoder_out.hidden.len();
    if attention.len() != m {
        return Err(ModelError::LengthMismatch(format!(
            "{} attention weights for {m} encoder states",
            attention.len()
        )));
    }
    let e = match (mode.uses_error_estimator(), error_est) {
        (true, Some(e)) => {
            if e.len() != m {
                return Err(ModelError::LengthMismatch(format!(
                    "{} correctness estimates for {m} encoder states",
                    e.len()
                )));
            }
            Some(e)
        }
        (true, None) => return Err(ModelError::MissingLabels),
        (false, _) => None,
    };
    let h = encoder_out.hidden[0].len();
    let mut out = vec![0.0; h];
    for j in 0..m {
        let w = attention[j] * e.map_or(1.0, |e| e[j]);
        for (o, &v) in out.iter_mut().zip(encoder_out.hidden[j].data()) {
            *o += w * v;
        }
    }
    Ok(Tensor::row_vector(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn vocab(n: usize) -> Arc<Vocabulary> {
        let tokens: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
        Arc::new(Vocabulary::from_content_tokens(tokens))
    }

    fn tiny_model(mode: Mode, seed: u64) -> Model {
        let v = vocab(6);
        let mut cfg = ModelConfig::new(mode, v.clone(), v);
        cfg.hidden_dim = 8;
        cfg.embed_dim = 4;
        Model::new(cfg, seed)
    }

    #[test]
    fn encode_shape_contract() {
        let m = tiny_model(Mode::Arnn, 1);
        let out = m.encode(&[5, 6, 7, 5], &ForwardOpts::eval(Mode::Arnn)).unwrap();
        assert_eq!(out.hidden.len(), 4);
        assert_eq!(out.final_layers.len(), 2);
        assert!(out.error_est.is_none());
        assert!(matches!(
            m.encode(&[], &ForwardOpts::eval(Mode::Arnn)),
            Err(ModelError::EmptyInput)
        ));
    }

    #[test]
    fn zero_params_estimate_half() {
        let mut m = tiny_model(Mode::ArnnErr, 2);
        for p in m.params.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let out = m.encode(&[5, 6], &ForwardOpts::eval(Mode::ArnnErr)).unwrap();
        for &e in out.error_est.as_ref().unwrap() {
            assert!((e - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let m = tiny_model(Mode::ArnnErr, 3);
        let opts = ForwardOpts::eval(Mode::ArnnErr);
        let a = m.encode(&[5, 7, 6], &opts).unwrap();
        let b = m.encode(&[5, 7, 6], &opts).unwrap();
        assert_eq!(a.hidden, b.hidden);
        assert_eq!(a.error_est, b.error_est);
    }

    #[test]
    fn attention_uniform_for_identical_states() {
        let h = Tensor::row_vector(vec![0.3, -0.5, 0.8]);
        let s = Tensor::row_vector(vec![1.0, 0.0, 0.2]);
        let a = attention_weights(&s, &[h.clone(), h.clone(), h.clone()]);
        for &w in &a {
            assert!((w - 1.0 / 3.0).abs() < 1e-12);
        }
        let single = attention_weights(&s, &[h]);
        assert_eq!(single.len(), 1);
        assert!((single[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn context_hand_example() {
        let enc = EncoderOutput {
            hidden: vec![
                Tensor::row_vector(vec![2.0, 0.0]),
                Tensor::row_vector(vec![4.0, 4.0]),
            ],
            final_layers: vec![(
                Tensor::row_vector(vec![9.0, 9.0]),
                Tensor::row_vector(vec![0.0, 0.0]),
            )],
            error_est: Some(vec![1.0, 0.0]),
        };
        let c = context(Mode::ArnnErr, &enc, &[0.5, 0.5], Some(&[1.0, 0.0])).unwrap();
        assert_eq!(c.data(), &[1.0, 0.0]);

        // a zeroed estimate makes the context invariant to that state
        let mut enc2 = enc.clone();
        enc2.hidden[1] = Tensor::row_vector(vec![-100.0, 55.0]);
        let c2 = context(Mode::ArnnErr, &enc2, &[0.5, 0.5], Some(&[1.0, 0.0])).unwrap();
        assert_eq!(c.data(), c2.data());

        // rnn mode ignores weights entirely
        let cr = context(Mode::Rnn, &enc, &[0.5, 0.5], None).unwrap();
        assert_eq!(cr.data(), &[9.0, 9.0]);

        assert!(matches!(
            context(Mode::Arnn, &enc, &[1.0], None),
            Err(ModelError::LengthMismatch(_))
        ));
    }

    #[test]
    fn arnn_err_with_unit_estimates_reduces_to_arnn() {
        let m = tiny_model(Mode::ArnnErr, 4);
        let source = vec![5, 6, 7];
        let enc_err = m.encode(&source, &ForwardOpts::eval(Mode::ArnnErr)).unwrap();
        let enc_plain = m.encode(&source, &ForwardOpts::eval(Mode::Arnn)).unwrap();

        let mut opts_err = ForwardOpts::eval(Mode::ArnnErr);
        opts_err.force_e_one = true;
        let opts_plain = ForwardOpts::eval(Mode::Arnn);

        let s_err = m.init_decoder(&enc_err);
        let s_plain = m.init_decoder(&enc_plain);
        let (p_err, st_err) = m.decode_step(&enc_err, &s_err, Special::Bos.id(), &opts_err).unwrap();
        let (p_plain, st_plain) = m.decode_step(&enc_plain, &s_plain, Special::Bos.id(), &opts_plain).unwrap();
        for (a, b) in p_err.iter().zip(&p_plain) {
            assert!((a - b).abs() <= 1e-12);
        }
        for (a, b) in st_err.prev_top.data().iter().zip(st_plain.prev_top.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn decode_step_contract() {
        let m = tiny_model(Mode::Rnn, 5);
        let opts = ForwardOpts::eval(Mode::Rnn);
        let enc = m.encode(&[5, 6, 7], &opts).unwrap();
        let mut state = m.init_decoder(&enc);
        let mut contexts = Vec::new();
        let mut y = Special::Bos.id();
        for _ in 0..3 {
            let (probs, next) = m.decode_step(&enc, &state, y, &opts).unwrap();
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert_eq!(probs[Special::Pad.id()], 0.0);
            assert_eq!(probs[Special::Bos.id()], 0.0);
            y = argmax_rows(&Tensor::from_vec(&[1, probs.len()], probs.clone()).unwrap())[0];
            contexts.push(next.last_context.clone().unwrap());
            state = next;
        }
        assert_eq!(state.step_index, 3);
        // rnn context is the final encoder state at every step
        for c in &contexts {
            assert_eq!(c.data(), contexts[0].data());
        }

        // determinism
        let (p1, _) = m.decode_step(&enc, &m.init_decoder(&enc), Special::Bos.id(), &opts).unwrap();
        let (p2, _) = m.decode_step(&enc, &m.init_decoder(&enc), Special::Bos.id(), &opts).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn uniform_model_nll_is_log_vocab() {
        let mut m = tiny_model(Mode::Arnn, 6);
        for p in m.params.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        let item = BatchItem::clean(vec![5, 6], vec![7, 8]);
        let opts = ForwardOpts::eval(Mode::Arnn);
        let loss = m.sequence_nll(&item, &opts, 0).unwrap();
        // zero logits -> uniform over the vocabulary minus the two masked
        // structural tokens
        let legal = (m.config.target_vocab.len() - 2) as f64;
        assert!((loss - legal.ln()).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn full_teacher_forcing_ignores_argmax_path() {
        let mut m = tiny_model(Mode::Arnn, 7);
        let item = BatchItem::clean(vec![5, 6, 7], vec![8, 9]);
        let mut opts = ForwardOpts::eval(Mode::Arnn);
        opts.teacher_forcing = 1.0;
        let a = m.sequence_nll(&item, &opts, 1).unwrap();
        m.params.zero_grads();
        let b = m.sequence_nll(&item, &opts, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_labels_is_an_error() {
        let mut m = tiny_model(Mode::ArnnErr, 8);
        let item = BatchItem::clean(vec![5, 6], vec![7]);
        let opts = ForwardOpts::eval(Mode::ArnnErr);
        assert!(matches!(
            m.sequence_nll(&item, &opts, 0),
            Err(ModelError::MissingLabels)
        ));
    }

    #[test]
    fn error_head_feeds_the_headline_loss() {
        // with λ = 0 the only path from the error head to the loss is the
        // attention weighting of Σ e·a·h; its gradient must be nonzero
        let mut m = tiny_model(Mode::ArnnErr, 9);
        let item = BatchItem {
            source: vec![5, 6, 7],
            target: vec![8, 9],
            labels: Some(vec![true, false, true]),
        };
        let mut opts = ForwardOpts::eval(Mode::ArnnErr);
        opts.lambda_err = 0.0;
        m.sequence_nll(&item, &opts, 0).unwrap();
        let g = m.params.by_name("err.w").unwrap().grad.data();
        assert!(g.iter().any(|&v| v.abs() > 1e-12), "error-head gradient is zero");
    }

    #[test]
    fn estimates_stay_in_open_unit_interval() {
        let m = tiny_model(Mode::ArnnErr, 10);
        let out = m.encode(&[5, 6, 7, 8, 9], &ForwardOpts::eval(Mode::ArnnErr)).unwrap();
        for &e in out.error_est.as_ref().unwrap() {
            assert!(e > 0.0 && e < 1.0);
        }
    }

    #[test]
    fn batched_and_single_forward_agree() {
        // padding plus state carry must not change a sequence's loss:
        // compare a 2-sample ragged batch against its single-sample parts
        let items = [
            BatchItem {
                source: vec![5, 6, 7, 8],
                target: vec![9, 5],
                labels: Some(vec![true, true, false, true]),
            },
            BatchItem {
                source: vec![7, 9],
                target: vec![6, 8, 5],
                labels: Some(vec![false, true]),
            },
        ];
        let opts = ForwardOpts::train(Mode::ArnnErr, 0.0, 1.0, 1.0);

        let mut m = tiny_model(Mode::ArnnErr, 11);
        let batch = Batch::new(&items).unwrap();
        let mut g = Graph::new();
        let mut r1 = ChaCha12Rng::seed_from_u64(0);
        let mut r2 = ChaCha12Rng::seed_from_u64(0);
        let joint = m.build_batch_loss(&mut g, &batch, &opts, &mut r1, &mut r2).unwrap();
        let joint_loss = g.value(joint.loss).item();

        let mut sum = 0.0;
        for it in &items {
            sum += m.sequence_nll(it, &opts, 0).unwrap();
        }
        m.params.zero_grads();
        assert!(
            (joint_loss - sum / 2.0).abs() < 1e-12,
            "batched {joint_loss} vs mean of singles {}",
            sum / 2.0
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = tiny_model(Mode::ArnnErr, 12);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        m.save(&path).unwrap();
        let loaded = Model::load(
            &path,
            m.config.source_vocab.clone(),
            m.config.target_vocab.clone(),
        )
        .unwrap();
        assert_eq!(loaded.config.mode, Mode::ArnnErr);

        let opts = ForwardOpts::eval(Mode::ArnnErr);
        let a = m.encode(&[5, 6, 7], &opts).unwrap();
        let b = loaded.encode(&[5, 6, 7], &opts).unwrap();
        assert_eq!(a.hidden, b.hidden);

        let wrong = vocab(9);
        assert!(matches!(
            Model::load(&path, wrong.clone(), wrong),
            Err(ModelError::VocabMismatch(_))
        ));
    }

    #[test]
    fn scheduled_sampling_coin_flips_are_seeded() {
        let mut m = tiny_model(Mode::Arnn, 13);
        let item = BatchItem::clean(vec![5, 6, 7], vec![8, 9, 5]);
        let mut opts = ForwardOpts::eval(Mode::Arnn);
        opts.teacher_forcing = 0.5;
        let a = m.sequence_nll(&item, &opts, 42).unwrap();
        m.params.zero_grads();
        let b = m.sequence_nll(&item, &opts, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_inputs_do_not_break_probability_sums() {
        let m = tiny_model(Mode::Arnn, 15);
        let opts = ForwardOpts::eval(Mode::Arnn);
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..10 {
            let len = rng.random_range(1..6usize);
            let src: Vec<TokenId> = (0..len).map(|_| rng.random_range(5..11)).collect();
            let enc = m.encode(&src, &opts).unwrap();
            let (probs, _) = m
                .decode_step(&enc, &m.init_decoder(&enc), Special::Bos.id(), &opts)
                .unwrap();
            let sum: f64 = probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
    }
}
