//! A small transformer encoder used as a deterministic stand-in for
//! pretrained single-cell models.
//!
//! Each block is pre-norm: `x + Attn(LN1 x)` followed by `x + FFN(LN2 x)`
//! with a tanh-approximated GELU. Tokens get a learned embedding plus a
//! learned positional row. Padding positions are masked out as attention
//! keys. All arithmetic is `f64`; exported cell embeddings are narrowed to
//! `f32`.
//!
//! The forward pass optionally routes the six projection matrices of each
//! block through LoRA adapters (see [`crate::lora`]), and [`ToyEncoder::backward`]
//! propagates gradients to those adapters and to the block input.

use std::fs;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CellProfile, Dataset};
use crate::embedding::{pool, AdapterDescriptor, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::Strategy;
use crate::lora::{AdapterGrads, AdapterSet, LoraAdapter};
use crate::rng::{self, DetRng};
use crate::tokens::{prep_rank_sequence, TokenSequence};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyEncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl ToyEncoderConfig {
    /// Defaults: 32-wide, two heads, two layers, feed-forward width 64.
    pub fn new(vocab_size: usize, max_len: usize, seed: u64) -> Self {
        Self {
            vocab_size,
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            d_ff: 64,
            max_len,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_ff", self.d_ff),
            ("max_len", self.max_len),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Parameter(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Parameter(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count of the layout built by [`ToyEncoder::init`].
    pub fn parameter_count(&self) -> usize {
        let d = self.d_model;
        let per_layer = 4 * d + 4 * d * d + 2 * d * self.d_ff + self.d_ff + d;
        self.vocab_size * d + self.max_len * d + self.n_layers * per_layer
    }
}

/// The six matrices of a block that adapters can wrap.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Proj {
    Query,
    Key,
    Value,
    Out,
    FfnIn,
    FfnOut,
}

impl Proj {
    pub const ALL: [Proj; 6] = [
        Proj::Query,
        Proj::Key,
        Proj::Value,
        Proj::Out,
        Proj::FfnIn,
        Proj::FfnOut,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Proj::Query => "query",
            Proj::Key => "key",
            Proj::Value => "value",
            Proj::Out => "out_proj",
            Proj::FfnIn => "ffn_in",
            Proj::FfnOut => "ffn_out",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1_gamma: Array1<f64>,
    pub ln1_beta: Array1<f64>,
    pub w_query: Array2<f64>,
    pub w_key: Array2<f64>,
    pub w_value: Array2<f64>,
    pub w_out: Array2<f64>,
    pub ln2_gamma: Array1<f64>,
    pub ln2_beta: Array1<f64>,
    /// `d_ff x d_model`
    pub w_ffn_in: Array2<f64>,
    pub b_ffn_in: Array1<f64>,
    /// `d_model x d_ff`
    pub w_ffn_out: Array2<f64>,
    pub b_ffn_out: Array1<f64>,
}

impl EncoderLayer {
    /// Weight of `proj`, shaped `out x in`.
    pub fn weight(&self, proj: Proj) -> &Array2<f64> {
        match proj {
            Proj::Query => &self.w_query,
            Proj::Key => &self.w_key,
            Proj::Value => &self.w_value,
            Proj::Out => &self.w_out,
            Proj::FfnIn => &self.w_ffn_in,
            Proj::FfnOut => &self.w_ffn_out,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    pub config: ToyEncoderConfig,
    /// `vocab_size x d_model`
    pub token_embedding: Array2<f64>,
    /// `max_len x d_model`
    pub positional: Array2<f64>,
    pub layers: Vec<EncoderLayer>,
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

/// Saved state of one adapted projection.
struct LinCache {
    /// Adapter input after dropout.
    x_drop: Array2<f64>,
    /// Dropout multipliers, `None` when dropout is off.
    mask: Option<Array2<f64>>,
    /// `x_drop · Bᵀ`
    u: Array2<f64>,
}

struct LayerCache {
    ln1: LnCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per head, `T x n_valid` softmax weights.
    probs: Vec<Array2<f64>>,
    ln2: LnCache,
    u: Array2<f64>,
    lin: [Option<LinCache>; 6],
}

/// Activations retained by [`ToyEncoder::forward`] for the backward pass.
pub struct ForwardPass {
    pub output: Array2<f64>,
    n_valid: usize,
    layers: Vec<LayerCache>,
}

impl ForwardPass {
    /// Attention weights of `head` in `layer`, `T x n_valid`.
    pub fn attention(&self, layer: usize, head: usize) -> &Array2<f64> {
        &self.layers[layer].probs[head]
    }
}

fn gelu(u: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
    0.5 * u * (1.0 + (C * (u + 0.044715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    let t = (C * (u + 0.044715 * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * u * u)
}

fn layer_norm(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.dot(&row) / d;
        *r = 1.0 / (var + LN_EPS).sqrt();
        row *= *r;
    }
    let y = &xhat * gamma + beta;
    (y, LnCache { xhat, rstd })
}

fn layer_norm_back(dy: &Array2<f64>, gamma: &Array1<f64>, cache: &LnCache) -> Array2<f64> {
    let d = dy.ncols() as f64;
    let mut dx = dy * gamma;
    for ((mut row, xhat), &rstd) in dx
        .rows_mut()
        .into_iter()
        .zip(cache.xhat.rows())
        .zip(cache.rstd.iter())
    {
        let mean_g = row.sum() / d;
        let mean_gx = row.dot(&xhat) / d;
        Zip::from(&mut row)
            .and(&xhat)
            .for_each(|g, &xh| *g = rstd * (*g - mean_g - xh * mean_gx));
    }
    dx
}

fn project(
    x: &Array2<f64>,
    w: &Array2<f64>,
    adapter: Option<&LoraAdapter>,
    dropout: Option<(&mut DetRng, f64)>,
) -> (Array2<f64>, Option<LinCache>) {
    let mut y = x.dot(&w.t());
    let Some(ad) = adapter else {
        return (y, None);
    };
    let (x_drop, mask) = match dropout {
        Some((rng, p)) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
                if rng.random::<f64>() < p {
                    0.0
                } else {
                    keep
                }
            });
            (x * &mask, Some(mask))
        }
        _ => (x.clone(), None),
    };
    let u = x_drop.dot(&ad.b.t());
    y.scaled_add(ad.scale, &u.dot(&ad.a.t()));
    (y, Some(LinCache { x_drop, mask, u }))
}

fn project_back(
    dy: &Array2<f64>,
    w: &Array2<f64>,
    adapter: Option<&LoraAdapter>,
    cache: Option<&LinCache>,
    grad: Option<&mut (Array2<f64>, Array2<f64>)>,
) -> Array2<f64> {
    let mut dx = dy.dot(w);
    if let (Some(ad), Some(c)) = (adapter, cache) {
        let du = dy.dot(&ad.a) * ad.scale;
        if let Some((da, db)) = grad {
            da.scaled_add(ad.scale, &dy.t().dot(&c.u));
            *db += &du.t().dot(&c.x_drop);
        }
        let mut dxd = du.dot(&ad.b);
        if let Some(mask) = &c.mask {
            dxd *= mask;
        }
        dx += &dxd;
    }
    dx
}

impl ToyEncoder {
    /// Builds an encoder with every weight matrix and both embedding tables
    /// drawn from `uniform(-1/sqrt(d_model), 1/sqrt(d_model))` under the
    /// config seed, layer norms at identity and biases at zero.
    pub fn init(config: &ToyEncoderConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let bound = 1.0 / (d as f64).sqrt();
        let mut rng = rng::seeded(config.seed);
        let mut draw = |rows: usize, cols: usize| {
            Array2::from_shape_simple_fn((rows, cols), || rng::uniform(&mut rng, -bound, bound))
        };
        let token_embedding = draw(config.vocab_size, d);
        let positional = draw(config.max_len, d);
        let layers = (0..config.n_layers)
            .map(|_| EncoderLayer {
                ln1_gamma: Array1::ones(d),
                ln1_beta: Array1::zeros(d),
                w_query: draw(d, d),
                w_key: draw(d, d),
                w_value: draw(d, d),
                w_out: draw(d, d),
                ln2_gamma: Array1::ones(d),
                ln2_beta: Array1::zeros(d),
                w_ffn_in: draw(config.d_ff, d),
                b_ffn_in: Array1::zeros(config.d_ff),
                w_ffn_out: draw(d, config.d_ff),
                b_ffn_out: Array1::zeros(d),
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            token_embedding,
            positional,
            layers,
        })
    }

    pub fn d_model(&self) -> usize {
        self.config.d_model
    }

    /// Every parameter tensor in storage order.
    pub fn named_parameters(&self) -> Vec<(String, &[f64])> {
        fn sl<D: ndarray::Dimension>(a: &ndarray::Array<f64, D>) -> &[f64] {
            a.as_slice().expect("parameters are stored contiguously")
        }
        let mut out = vec![
            ("token_embedding".to_string(), sl(&self.token_embedding)),
            ("positional".to_string(), sl(&self.positional)),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let named: [(&str, &[f64]); 12] = [
                ("ln1_gamma", sl(&l.ln1_gamma)),
                ("ln1_beta", sl(&l.ln1_beta)),
                ("query", sl(&l.w_query)),
                ("key", sl(&l.w_key)),
                ("value", sl(&l.w_value)),
                ("out_proj", sl(&l.w_out)),
                ("ln2_gamma", sl(&l.ln2_gamma)),
                ("ln2_beta", sl(&l.ln2_beta)),
                ("ffn_in", sl(&l.w_ffn_in)),
                ("ffn_in_bias", sl(&l.b_ffn_in)),
                ("ffn_out", sl(&l.w_ffn_out)),
                ("ffn_out_bias", sl(&l.b_ffn_out)),
            ];
            out.extend(named.into_iter().map(|(n, v)| (format!("layers.{i}.{n}"), v)));
        }
        out
    }

    fn check_sequence(&self, seq: &TokenSequence) -> Result<()> {
        if seq.len() > self.config.max_len {
            return Err(Error::Input(format!(
                "sequence of length {} exceeds encoder max_len {}",
                seq.len(),
                self.config.max_len
            )));
        }
        if let Some(t) = seq.tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(Error::Input(format!(
                "token {t} outside vocabulary of size {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Token embeddings of the final block, `T x d_model`.
    pub fn encode(&self, seq: &TokenSequence) -> Result<Array2<f64>> {
        Ok(self.forward(seq, None, None)?.output)
    }

    /// Forward pass keeping the activations needed by [`Self::backward`].
    /// `dropout` switches on adapter-input dropout with the adapters' rate.
    pub fn forward(
        &self,
        seq: &TokenSequence,
        adapters: Option<&AdapterSet>,
        mut dropout: Option<&mut DetRng>,
    ) -> Result<ForwardPass> {
        self.check_sequence(seq)?;
        let d = self.config.d_model;
        let t = seq.len();
        let n_valid = seq.specials.pad_from.min(t);
        let n_heads = self.config.n_heads;
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let p_drop = adapters.map_or(0.0, |a| a.dropout());

        let mut x = Array2::zeros((t, d));
        for (i, (&tok, mut row)) in seq.tokens.iter().zip(x.rows_mut()).enumerate() {
            row.assign(&self.token_embedding.row(tok as usize));
            row += &self.positional.row(i);
        }

        let mut caches = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let mut lin: [Option<LinCache>; 6] = Default::default();
            let mut proj = |p: Proj, input: &Array2<f64>| {
                let ad = adapters.and_then(|a| a.get(li, p));
                let drop = dropout.as_deref_mut().map(|r| (r, p_drop));
                let (y, c) = project(input, layer.weight(p), ad, drop);
                lin[p.index()] = c;
                y
            };

            let (h1, ln1) = layer_norm(&x, &layer.ln1_gamma, &layer.ln1_beta);
            let q = proj(Proj::Query, &h1);
            let k = proj(Proj::Key, &h1);
            let v = proj(Proj::Value, &h1);
            let mut ctx = Array2::zeros((t, d));
            let mut probs = Vec::with_capacity(n_heads);
            for h in 0..n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let kh = k.slice(s![..n_valid, h * dh..(h + 1) * dh]);
                let vh = v.slice(s![..n_valid, h * dh..(h + 1) * dh]);
                let mut p = q.slice(cols).dot(&kh.t()) * scale;
                for mut row in p.rows_mut() {
                    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|z| (z - m).exp());
                    let sum = row.sum();
                    row /= sum;
                }
                ctx.slice_mut(cols).assign(&p.dot(&vh));
                probs.push(p);
            }
            let attn = proj(Proj::Out, &ctx);
            x += &attn;

            let (h2, ln2) = layer_norm(&x, &layer.ln2_gamma, &layer.ln2_beta);
            let mut u = proj(Proj::FfnIn, &h2);
            u += &layer.b_ffn_in;
            let g = u.mapv(gelu);
            let mut f = proj(Proj::FfnOut, &g);
            f += &layer.b_ffn_out;
            x += &f;

            caches.push(LayerCache {
                ln1,
                q,
                k,
                v,
                probs,
                ln2,
                u,
                lin,
            });
        }
        Ok(ForwardPass {
            output: x,
            n_valid,
            layers: caches,
        })
    }

    /// Back-propagates `d_output` (same shape as the forward output).
    /// Adapter gradients are accumulated into `grads`; the return value is
    /// the gradient with respect to the summed token and positional
    /// embeddings.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        d_output: ArrayView2<f64>,
        adapters: Option<&AdapterSet>,
        mut grads: Option<&mut AdapterGrads>,
    ) -> Array2<f64> {
        let d = self.config.d_model;
        let n_heads = self.config.n_heads;
        let dh = d / n_heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let n_valid = pass.n_valid;
        let mut dx = d_output.to_owned();

        for (li, (layer, c)) in self.layers.iter().zip(&pass.layers).enumerate().rev() {
            let mut back = |p: Proj, dy: &Array2<f64>| {
                let ad = adapters.and_then(|a| a.get(li, p));
                let g = grads.as_deref_mut().and_then(|g| g.get_mut(li, p));
                project_back(dy, layer.weight(p), ad, c.lin[p.index()].as_ref(), g)
            };

            // feed-forward residual branch
            let dg = back(Proj::FfnOut, &dx);
            let du = dg * &c.u.mapv(gelu_grad);
            let dh2 = back(Proj::FfnIn, &du);
            dx += &layer_norm_back(&dh2, &layer.ln2_gamma, &c.ln2);

            // attention residual branch
            let dctx = back(Proj::Out, &dx);
            let t = dctx.nrows();
            let mut dq = Array2::zeros((t, d));
            let mut dk = Array2::zeros((t, d));
            let mut dv = Array2::zeros((t, d));
            for h in 0..n_heads {
                let cols = s![.., h * dh..(h + 1) * dh];
                let valid = s![..n_valid, h * dh..(h + 1) * dh];
                let p = &c.probs[h];
                let dctx_h = dctx.slice(cols);
                let dp = dctx_h.dot(&c.v.slice(valid).t());
                dv.slice_mut(valid).assign(&p.t().dot(&dctx_h));
                let mut ds = &dp * p;
                let row_dot = ds.sum_axis(Axis(1));
                for ((mut ds_row, p_row), r) in ds.rows_mut().into_iter().zip(p.rows()).zip(row_dot.iter()) {
                    ds_row.scaled_add(-r, &p_row);
                }
                ds *= scale;
                dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(valid)));
                dk.slice_mut(valid).assign(&ds.t().dot(&c.q.slice(cols)));
            }
            let mut dh1 = back(Proj::Query, &dq);
            dh1 += &back(Proj::Key, &dk);
            dh1 += &back(Proj::Value, &dv);
            dx += &layer_norm_back(&dh1, &layer.ln1_gamma, &c.ln1);
        }
        dx
    }

    /// Token sequence → final-layer token embeddings → pooled cell vector.
    pub fn embed_cell(&self, profile: &CellProfile, descriptor: &AdapterDescriptor) -> Result<Array1<f64>> {
        self.embed_cell_with(profile, descriptor, None)
    }

    pub(crate) fn embed_cell_with(
        &self,
        profile: &CellProfile,
        descriptor: &AdapterDescriptor,
        adapters: Option<&AdapterSet>,
    ) -> Result<Array1<f64>> {
        self.check_descriptor(descriptor)?;
        let seq = prep_rank_sequence(profile, &descriptor.prep_rule())?;
        let pass = self.forward(&seq, adapters, None)?;
        pool(pass.output.view(), descriptor.pooling, &seq.specials)
    }

    pub(crate) fn check_descriptor(&self, descriptor: &AdapterDescriptor) -> Result<()> {
        let expected = descriptor.pooling.pooled_dim(self.config.d_model);
        if descriptor.output_dim != expected {
            return Err(Error::Shape(format!(
                "descriptor {} declares output_dim {} but {} pooling of a {}-wide encoder gives {}",
                descriptor.model_id,
                descriptor.output_dim,
                descriptor.pooling,
                self.config.d_model,
                expected
            )));
        }
        Ok(())
    }

    /// Embeds every cell of `dataset` in dataset order.
    pub fn embed_dataset(&self, dataset: &Dataset, descriptor: &AdapterDescriptor) -> Result<EmbeddingMatrix> {
        self.embed_dataset_with(dataset, descriptor, None, Strategy::Frozen)
    }

    pub(crate) fn embed_dataset_with(
        &self,
        dataset: &Dataset,
        descriptor: &AdapterDescriptor,
        adapters: Option<&AdapterSet>,
        strategy: Strategy,
    ) -> Result<EmbeddingMatrix> {
        self.check_descriptor(descriptor)?;
        let rows = dataset
            .cells
            .par_iter()
            .map(|c| self.embed_cell_with(c, descriptor, adapters))
            .collect::<Result<Vec<_>>>()?;
        let data = rows.iter().flat_map(|r| r.iter().map(|&v| v as f32)).collect();
        EmbeddingMatrix::new(
            descriptor.model_id.clone(),
            strategy,
            descriptor.pooling,
            descriptor.output_dim,
            data,
            dataset.cells.iter().map(|c| c.cell_id.clone()).collect(),
        )
    }

    /// Versioned little-endian serialization: magic, version, the seven
    /// config counts as `u64`, then every parameter as `f64` in
    /// [`Self::named_parameters`] order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut buf = Vec::with_capacity(80 + 8 * c.parameter_count());
        buf.extend_from_slice(ENCODER_MAGIC);
        buf.extend_from_slice(&ENCODER_VERSION.to_le_bytes());
        for v in [c.vocab_size, c.d_model, c.n_heads, c.n_layers, c.d_ff, c.max_len] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        buf.extend_from_slice(&c.seed.to_le_bytes());
        for (_, values) in self.named_parameters() {
            for v in values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..8] != ENCODER_MAGIC {
            return Err(Error::Format("not an encoder weight file (bad magic)".into()));
        }
        let version = u16::from_le_bytes([bytes[8], bytes[9]]);
        if version != ENCODER_VERSION {
            return Err(Error::Format(format!("unsupported encoder file version {version}")));
        }
        let header_end = 10 + 7 * 8;
        if bytes.len() < header_end {
            return Err(Error::Corruption("truncated encoder header".into()));
        }
        let word = |i: usize| u64::from_le_bytes(bytes[10 + 8 * i..18 + 8 * i].try_into().unwrap());
        let as_count = |i: usize| {
            usize::try_from(word(i)).map_err(|_| Error::Corruption("count does not fit".into()))
        };
        let config = ToyEncoderConfig {
            vocab_size: as_count(0)?,
            d_model: as_count(1)?,
            n_heads: as_count(2)?,
            n_layers: as_count(3)?,
            d_ff: as_count(4)?,
            max_len: as_count(5)?,
            seed: word(6),
        };
        config
            .validate()
            .map_err(|e| Error::Corruption(format!("invalid stored config: {e}")))?;
        let payload = &bytes[header_end..];
        let expected = config
            .parameter_count()
            .checked_mul(8)
            .ok_or_else(|| Error::Corruption("parameter count overflows".into()))?;
        if payload.len() != expected {
            return Err(Error::Corruption(format!(
                "expected {expected} parameter bytes, found {}",
                payload.len()
            )));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        let mut enc = Self::init(&config)?;
        let mut fill = |a: &mut [f64]| a.iter_mut().for_each(|v| *v = values.next().unwrap());
        fill(enc.token_embedding.as_slice_mut().unwrap());
        fill(enc.positional.as_slice_mut().unwrap());
        for l in &mut enc.layers {
            for a in [&mut l.ln1_gamma, &mut l.ln1_beta] {
                fill(a.as_slice_mut().unwrap());
            }
            for a in [&mut l.w_query, &mut l.w_key, &mut l.w_value, &mut l.w_out] {
                fill(a.as_slice_mut().unwrap());
            }
            for a in [&mut l.ln2_gamma, &mut l.ln2_beta] {
                fill(a.as_slice_mut().unwrap());
            }
            fill(l.w_ffn_in.as_slice_mut().unwrap());
            fill(l.b_ffn_in.as_slice_mut().unwrap());
            fill(l.w_ffn_out.as_slice_mut().unwrap());
            fill(l.b_ffn_out.as_slice_mut().unwrap());
        }
        Ok(enc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub const ENCODER_MAGIC: &[u8; 8] = b"SCDMENC1";
pub const ENCODER_VERSION: u16 = 1;
