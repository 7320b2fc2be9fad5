//! Transformer encoder classifier over clip tensors.
//!
//! Pipeline: linear embedding, sinusoidal positions, dropout, a stack of
//! post-norm self-attention encoder layers, a final layer norm, mean pooling
//! over non-padding positions and a linear classification head.

mod params;

pub use params::{init_params, LayerTensors, ModelParams, ModelTensors};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::landmark::ClipTensor;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub ffn_dim: usize,
    pub dropout_p: f64,
    pub num_classes: usize,
    pub max_seq_len: usize,
    /// Dropout after embedding + positional encoding.
    pub embed_dropout: bool,
    /// Dropout on the attention and feed-forward residual branches.
    pub sublayer_dropout: bool,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 144,
            hidden_dim: 512,
            num_heads: 4,
            num_layers: 2,
            ffn_dim: 2048,
            dropout_p: 0.2,
            num_classes: 226,
            max_seq_len: 17,
            embed_dropout: true,
            sublayer_dropout: true,
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("num_layers", self.num_layers),
            ("ffn_dim", self.ffn_dim),
            ("num_classes", self.num_classes),
            ("max_seq_len", self.max_seq_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::InvalidConfig(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if !self.hidden_dim.is_multiple_of(2) {
            return Err(Error::OddDimension(self.hidden_dim));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::BadProbability(self.dropout_p));
        }
        if !(self.layer_norm_eps >= 0.0) {
            return Err(Error::InvalidConfig("layer_norm_eps must be non-negative".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Sinusoidal position table: even columns `sin(pos / 10000^(2i/d))`, odd
/// columns the matching cosine.
pub fn positional_encoding<R: Real>(seq_len: usize, dim: usize) -> Result<Tensor<R>> {
    if !dim.is_multiple_of(2) {
        return Err(Error::OddDimension(dim));
    }
    let mut values = Vec::with_capacity(seq_len * dim);
    for pos in 0..seq_len {
        for i in 0..dim / 2 {
            let angle = pos as f64 / 10000f64.powf(2.0 * i as f64 / dim as f64);
            values.push(R::from_f64_lossy(angle.sin()));
            values.push(R::from_f64_lossy(angle.cos()));
        }
    }
    Tensor::new(vec![seq_len, dim], values)
}

/// Per-clip attention masks for a batch laid out as consecutive row blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLayout {
    pub seq_len: usize,
    pub masks: Vec<Vec<bool>>,
}

impl BatchLayout {
    pub fn batch_size(&self) -> usize {
        self.masks.len()
    }

    /// Row indices of the attendable positions of each clip.
    pub fn pool_groups(&self) -> Vec<Vec<usize>> {
        self.masks
            .iter()
            .enumerate()
            .map(|(b, m)| (0..self.seq_len).filter(|&t| m[t]).map(|t| b * self.seq_len + t).collect())
            .collect()
    }
}

/// Output of [`multi_head_attention`]: the projected context and the
/// attention probabilities of every `(clip, head)` pair, each `[T, T]`.
pub struct Attention {
    pub output: Var,
    pub weights: Vec<Vec<Var>>,
}

/// Scaled dot-product self-attention with padding keys masked out.
pub fn multi_head_attention<R: Real>(
    tape: &mut Tape<R>,
    x: Var,
    layout: &BatchLayout,
    layer: &LayerTensors<Var>,
    heads: usize,
) -> Result<Attention> {
    let d = tape.value(x).cols();
    if !d.is_multiple_of(heads) || d != tape.value(layer.query_weight).shape()[0] {
        return Err(Error::ShapeMismatch {
            op: "attention",
            lhs: tape.value(x).shape().to_vec(),
            rhs: tape.value(layer.query_weight).shape().to_vec(),
        });
    }
    let dh = d / heads;
    let t = layout.seq_len;
    let project = |tape: &mut Tape<R>, w: Var, b: Var| -> Result<Var> {
        let p = tape.matmul(x, w)?;
        tape.add_row(p, b)
    };
    let q = project(tape, layer.query_weight, layer.query_bias)?;
    let k = project(tape, layer.key_weight, layer.key_bias)?;
    let v = project(tape, layer.value_weight, layer.value_bias)?;
    let scale = R::one() / R::from_usize(dh).unwrap().sqrt();

    let mut clips = Vec::with_capacity(layout.batch_size());
    let mut weights = Vec::with_capacity(layout.batch_size());
    for (b, mask) in layout.masks.iter().enumerate() {
        let rows = b * t..(b + 1) * t;
        let mut head_out = Vec::with_capacity(heads);
        let mut head_weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = tape.slice(q, rows.clone(), cols.clone())?;
            let kh = tape.slice(k, rows.clone(), cols.clone())?;
            let vh = tape.slice(v, rows.clone(), cols)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, Some(mask)).map_err(|e| match e {
                Error::EmptyMask(_) => Error::EmptyMask(b),
                other => other,
            })?;
            head_out.push(tape.matmul(attn, vh)?);
            head_weights.push(attn);
        }
        clips.push(tape.concat_cols(&head_out)?);
        weights.push(head_weights);
    }
    let context = tape.concat_rows(&clips)?;
    let out = tape.matmul(context, layer.output_weight)?;
    let output = tape.add_row(out, layer.output_bias)?;
    Ok(Attention { output, weights })
}

/// Dropout switches shared by every stage of a forward pass.
pub struct DropoutCtx<'r, G> {
    pub p: f64,
    pub mode: Mode,
    pub rng: &'r mut G,
}

impl<G: Rng> DropoutCtx<'_, G> {
    fn apply<R: Real>(&mut self, tape: &mut Tape<R>, x: Var, enabled: bool) -> Result<Var> {
        tape.dropout(x, self.p, enabled && self.mode == Mode::Train, self.rng)
    }
}

/// Post-norm encoder layer:
/// `y = LN(x + drop(MHA(x)))`, `out = LN(y + drop(FFN(y)))`, FFN = affine, ReLU, affine.
pub fn encoder_layer<R: Real, G: Rng>(
    tape: &mut Tape<R>,
    x: Var,
    layout: &BatchLayout,
    layer: &LayerTensors<Var>,
    config: &ModelConfig,
    dropout: &mut DropoutCtx<'_, G>,
) -> Result<Var> {
    let eps = R::from_f64_lossy(config.layer_norm_eps);
    let attn = multi_head_attention(tape, x, layout, layer, config.num_heads)?.output;
    let attn = dropout.apply(tape, attn, config.sublayer_dropout)?;
    let res = tape.add(x, attn)?;
    let y = tape.layer_norm(res, layer.norm1_gain, layer.norm1_bias, eps)?;

    let hidden = tape.matmul(y, layer.ffn_in_weight)?;
    let hidden = tape.add_row(hidden, layer.ffn_in_bias)?;
    let hidden = tape.relu(hidden);
    let ffn = tape.matmul(hidden, layer.ffn_out_weight)?;
    let ffn = tape.add_row(ffn, layer.ffn_out_bias)?;
    let ffn = dropout.apply(tape, ffn, config.sublayer_dropout)?;
    let res = tape.add(y, ffn)?;
    tape.layer_norm(res, layer.norm2_gain, layer.norm2_bias, eps)
}

/// Mean of the rows each clip may attend to; `x` is `[B*T, d]`.
pub fn masked_mean_pool<R: Real>(tape: &mut Tape<R>, x: Var, layout: &BatchLayout) -> Result<Var> {
    tape.group_mean(x, layout.pool_groups())
}

/// Stacks clips into one `[B*T, F]` input, padding shorter clips to the
/// longest sequence in the batch.
pub fn stack_batch<R: Real>(clips: &[ClipTensor], config: &ModelConfig) -> Result<(Tensor<R>, BatchLayout)> {
    if clips.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let seq_len = clips.iter().map(ClipTensor::seq_len).max().unwrap();
    if seq_len > config.max_seq_len {
        return Err(Error::SequenceTooLong { len: seq_len, max: config.max_seq_len });
    }
    let mut values = Vec::with_capacity(clips.len() * seq_len * config.input_dim);
    let mut masks = Vec::with_capacity(clips.len());
    for clip in clips {
        if clip.feature_count() != config.input_dim {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: clip.features().shape().to_vec(),
                rhs: vec![config.input_dim],
            });
        }
        let clip = if clip.seq_len() < seq_len { clip.pad_to(seq_len)? } else { clip.clone() };
        values.extend(clip.features().values().iter().map(|&v| R::from_f64_lossy(v as f64)));
        masks.push(clip.attention_mask());
    }
    let x = Tensor::new(vec![clips.len() * seq_len, config.input_dim], values)?;
    Ok((x, BatchLayout { seq_len, masks }))
}

/// Records the full classifier on `tape` and returns the `[B, C]` logits.
pub fn forward<R: Real, G: Rng>(
    tape: &mut Tape<R>,
    params: &ModelTensors<Var>,
    config: &ModelConfig,
    clips: &[ClipTensor],
    mode: Mode,
    rng: &mut G,
) -> Result<Var> {
    let (input, layout) = stack_batch::<R>(clips, config)?;
    let mut dropout = DropoutCtx { p: config.dropout_p, mode, rng };

    let x = tape.constant(input);
    let h = tape.matmul(x, params.embed_weight)?;
    let h = tape.add_row(h, params.embed_bias)?;
    let pe = positional_encoding::<R>(layout.seq_len, config.hidden_dim)?;
    let tiled: Vec<R> = pe.values().repeat(layout.batch_size());
    let pe = tape.constant(Tensor::new(tape.value(h).shape().to_vec(), tiled)?);
    let h = tape.add(h, pe)?;
    let mut h = dropout.apply(tape, h, config.embed_dropout)?;

    for layer in &params.layers {
        h = encoder_layer(tape, h, &layout, layer, config, &mut dropout)?;
    }
    let eps = R::from_f64_lossy(config.layer_norm_eps);
    let h = tape.layer_norm(h, params.final_norm_gain, params.final_norm_bias, eps)?;
    let pooled = masked_mean_pool(tape, h, &layout)?;
    let logits = tape.matmul(pooled, params.classifier_weight)?;
    tape.add_row(logits, params.classifier_bias)
}

/// Registers `params` as trainable leaves on `tape`.
pub fn register_params<R: Real>(tape: &mut Tape<R>, params: &ModelParams<R>) -> ModelTensors<Var> {
    params.map(|_, t| tape.param(t.clone()))
}

/// Registers `params` as constants on `tape` (no gradients kept).
pub fn register_constants<R: Real>(tape: &mut Tape<R>, params: &ModelParams<R>) -> ModelTensors<Var> {
    params.map(|_, t| tape.constant(t.clone()))
}

/// Eval-mode logits for a batch, `[B, C]`.
pub fn logits<R: Real>(params: &ModelParams<R>, config: &ModelConfig, clips: &[ClipTensor]) -> Result<Tensor<R>> {
    let mut tape = Tape::new();
    let vars = register_constants(&mut tape, params);
    // eval mode never draws from the generator
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let out = forward(&mut tape, &vars, config, clips, Mode::Eval, &mut rng)?;
    Ok(tape.value(out).clone())
}

/// Mean cross-entropy over the batch and its gradient for every parameter.
pub fn loss_and_grads<R: Real, G: Rng>(
    params: &ModelParams<R>,
    config: &ModelConfig,
    clips: &[ClipTensor],
    labels: &[usize],
    mode: Mode,
    rng: &mut G,
) -> Result<(R, ModelParams<R>)> {
    let mut tape = Tape::new();
    let vars = register_params(&mut tape, params);
    let out = forward(&mut tape, &vars, config, clips, mode, rng)?;
    let loss = tape.cross_entropy(out, labels)?;
    let mut grads = tape.backward(loss)?;
    let loss_value = tape.value(loss).values()[0];
    let grads = vars.map(|_, v| grads.take(*v).expect("every parameter is a leaf"));
    Ok((loss_value, grads))
}

/// Softmax over `logits`, then the `k` most probable classes; ties go to the
/// lower class index.
pub fn predict_topk(logits: &[f32], k: usize) -> Result<Vec<(usize, f32)>> {
    if k == 0 || k > logits.len() {
        return Err(Error::BadK { k, classes: logits.len() });
    }
    let row = Tensor::new(vec![1, logits.len()], logits.to_vec())?;
    let probs = crate::tensor::softmax(&row).into_values();
    let mut ranked: Vec<(usize, f32)> = probs.into_iter().enumerate().collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

#[cfg(test)]
mod tests;
