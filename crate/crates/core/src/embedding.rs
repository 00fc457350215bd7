//! Cell embeddings: the adapter registry, pooling of token embeddings into
//! cell vectors, and the binary exchange format that carries embeddings
//! from model inference into evaluation.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Strategy;
use crate::tokens::{PrepRule, Representation, SpecialPositions, SpecialScheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolingKind {
    MeanTokens,
    ClsToken,
    /// `[S, T, max, mean]`, four times the token dimension.
    Concat4,
    LastLayerMean,
}

impl PoolingKind {
    pub fn name(self) -> &'static str {
        match self {
            PoolingKind::MeanTokens => "mean_tokens",
            PoolingKind::ClsToken => "cls_token",
            PoolingKind::Concat4 => "concat4",
            PoolingKind::LastLayerMean => "last_layer_mean",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [
            PoolingKind::MeanTokens,
            PoolingKind::ClsToken,
            PoolingKind::Concat4,
            PoolingKind::LastLayerMean,
        ]
        .into_iter()
        .find(|k| k.name() == name)
    }

    /// Cell-embedding width for token width `token_dim`.
    pub fn pooled_dim(self, token_dim: usize) -> usize {
        match self {
            PoolingKind::Concat4 => 4 * token_dim,
            _ => token_dim,
        }
    }
}

impl fmt::Display for PoolingKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterDescriptor {
    pub model_id: String,
    pub output_dim: usize,
    pub pooling: PoolingKind,
    pub lora_targets: Vec<String>,
    pub max_len: usize,
}

pub const TOY_MODEL_ID: &str = "toy_scfm";

impl AdapterDescriptor {
    /// Descriptor for the built-in toy encoder with token width `d_model`.
    pub fn toy(d_model: usize, pooling: PoolingKind, max_len: usize) -> Self {
        Self {
            model_id: TOY_MODEL_ID.to_string(),
            output_dim: pooling.pooled_dim(d_model),
            pooling,
            lora_targets: ["query", "key", "value", "out_proj"].map(String::from).to_vec(),
            max_len,
        }
    }

    /// The input rule used when this descriptor drives the toy encoder.
    pub fn prep_rule(&self) -> PrepRule {
        let specials = match self.pooling {
            PoolingKind::ClsToken => SpecialScheme::ClsFirst,
            PoolingKind::Concat4 => SpecialScheme::SourceTarget,
            PoolingKind::MeanTokens | PoolingKind::LastLayerMean => {
                match PrepRule::for_family(&self.model_id) {
                    Some(r) if r.specials == SpecialScheme::StartEndPad => r.specials,
                    _ => SpecialScheme::None,
                }
            }
        };
        PrepRule {
            family: self.model_id.clone(),
            max_len: self.max_len,
            specials,
            representation: Representation::RankTokens,
        }
    }
}

/// One row of the model-property table: architecture, size, output width
/// and the throughput figures reported for the original checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelCard {
    pub model_id: &'static str,
    pub encoder_decoder: bool,
    pub input_embedding: &'static str,
    pub single_cell_llm: bool,
    pub params_millions: Option<f64>,
    pub output_dim: Option<usize>,
    pub inference_speed: Option<f64>,
    pub inference_time: Option<f64>,
    pub training_speed: Option<f64>,
    pub training_time: Option<f64>,
    pub published: &'static str,
    pub pooling: Option<PoolingKind>,
    pub lora_targets: &'static [&'static str],
}

macro_rules! card {
    ($id:expr, $ed:expr, $inp:expr, $sc:expr, $p:expr, $dim:expr, $is:expr, $it:expr, $ts:expr, $tt:expr, $date:expr, $pool:expr, $targets:expr) => {
        ModelCard {
            model_id: $id,
            encoder_decoder: $ed,
            input_embedding: $inp,
            single_cell_llm: $sc,
            params_millions: $p,
            output_dim: $dim,
            inference_speed: $is,
            inference_time: $it,
            training_speed: $ts,
            training_time: $tt,
            published: $date,
            pooling: $pool,
            lora_targets: $targets,
        }
    };
}

use PoolingKind::*;

/// All ten benchmarked models, in order of publication.
pub static MODEL_CARDS: [ModelCard; 10] = [
    card!("tGPT", false, "Genes", true, Some(124.5), Some(1024), Some(9.02), Some(1154.56), Some(4.4), Some(563.2), "Feb-22", Some(MeanTokens), &["c_attn"]),
    card!("scBERT", false, "Expressions and genes", true, Some(8.9), Some(200), Some(14.31), Some(42.93), Some(6.19), Some(18.57), "Sep-22", Some(MeanTokens), &["to_k", "to_v", "to_q"]),
    card!("Geneformer", false, "Genes", true, Some(10.7), Some(256), Some(1.89), Some(378.0), Some(1.3), Some(260.0), "May-23", Some(LastLayerMean), &["key", "value", "query"]),
    card!("CellLM", false, "Expressions and genes", true, Some(62.8), Some(512), Some(3.34), Some(13.36), Some(1.38), Some(5.52), "Jun-23", Some(MeanTokens), &["to_k", "to_v", "to_q"]),
    card!("scFoundation", true, "Expressions and genes", true, Some(121.2), Some(3072), Some(69.98), Some(69.98), Some(23.26), Some(23.26), "Jun-23", Some(Concat4), &["output_layer"]),
    card!("scGPT", true, "Expressions and genes", true, Some(52.5), Some(512), Some(1.44), Some(368.64), Some(1.43), Some(366.08), "Jul-23", Some(ClsToken), &["out_proj"]),
    card!("CellPLM", true, "Expressions", true, Some(66.6), Some(512), Some(51.74), Some(51.74), Some(29.37), Some(29.37), "Oct-23", Some(LastLayerMean), &["query_projection", "key_projection", "value_projection"]),
    card!("UCE", true, "Expressions", true, Some(849.9), Some(1280), Some(1.71), Some(102.6), Some(1.06), Some(63.6), "Nov-23", Some(ClsToken), &["out_proj"]),
    card!("LLaMa3-8B", false, "NLP", false, None, Some(4096), None, None, None, None, "-", Some(LastLayerMean), &[]),
    card!("GPT4o-mini", false, "NLP", false, None, None, None, None, None, None, "-", None, &[]),
];

pub fn model_card(model_id: &str) -> Option<&'static ModelCard> {
    MODEL_CARDS.iter().find(|c| c.model_id == model_id)
}

/// Embedding adapter for `model_id`: one of the nine embedding-producing
/// models or the built-in toy encoder.
pub fn registry_lookup(model_id: &str) -> Result<AdapterDescriptor> {
    if model_id == TOY_MODEL_ID {
        return Ok(AdapterDescriptor::toy(32, PoolingKind::MeanTokens, 64));
    }
    let card = model_card(model_id);
    match card.and_then(|c| Some((c, c.output_dim?, c.pooling?))) {
        Some((card, output_dim, pooling)) => Ok(AdapterDescriptor {
            model_id: card.model_id.to_string(),
            output_dim,
            pooling,
            lora_targets: card.lora_targets.iter().map(|s| s.to_string()).collect(),
            max_len: PrepRule::for_family(card.model_id).map_or(0, |r| r.max_len),
        }),
        None => {
            let known: Vec<&str> = MODEL_CARDS
                .iter()
                .filter(|c| c.output_dim.is_some())
                .map(|c| c.model_id)
                .chain([TOY_MODEL_ID])
                .collect();
            let why = if card.is_some() {
                "is prompt-only and has no embedding adapter"
            } else {
                "is not registered"
            };
            Err(Error::Lookup(format!(
                "model {model_id:?} {why}; embedding models: {}",
                known.join(", ")
            )))
        }
    }
}

fn valid_rows(tokens: usize, specials: &SpecialPositions) -> usize {
    specials.pad_from.min(tokens)
}

/// Pools a `T x d` token-embedding matrix into one cell vector.
///
/// Pad positions never contribute. Mean pooling also skips the CLS slot.
/// `Concat4` takes the S and T rows (positions 0 and 1 unless the sequence
/// marks them) followed by the elementwise max and mean over all non-pad
/// rows.
pub fn pool(
    token_embeddings: ArrayView2<f64>,
    kind: PoolingKind,
    specials: &SpecialPositions,
) -> Result<Array1<f64>> {
    let (t, d) = token_embeddings.dim();
    let n = valid_rows(t, specials);
    if n == 0 {
        return Err(Error::EmptyPool);
    }
    match kind {
        PoolingKind::MeanTokens | PoolingKind::LastLayerMean => {
            let rows = mean_rows(n, specials);
            if rows.is_empty() {
                return Err(Error::EmptyPool);
            }
            let mut acc = Array1::zeros(d);
            for &r in &rows {
                acc += &token_embeddings.row(r);
            }
            Ok(acc / rows.len() as f64)
        }
        PoolingKind::ClsToken => {
            let pos = cls_position(n, specials)?;
            Ok(token_embeddings.row(pos).to_owned())
        }
        PoolingKind::Concat4 => {
            let (s, tgt) = source_target(n, specials);
            let valid = token_embeddings.slice(ndarray::s![..n, ..]);
            let max = valid.fold_axis(Axis(0), f64::NEG_INFINITY, |&a, &b| a.max(b));
            let mean = valid.sum_axis(Axis(0)) / n as f64;
            let mut out = Array1::zeros(4 * d);
            out.slice_mut(ndarray::s![..d]).assign(&token_embeddings.row(s));
            out.slice_mut(ndarray::s![d..2 * d]).assign(&token_embeddings.row(tgt));
            out.slice_mut(ndarray::s![2 * d..3 * d]).assign(&max);
            out.slice_mut(ndarray::s![3 * d..]).assign(&mean);
            Ok(out)
        }
    }
}

/// Gradient of [`pool`] with respect to the token embeddings.
pub fn pool_backward(
    token_embeddings: ArrayView2<f64>,
    kind: PoolingKind,
    specials: &SpecialPositions,
    grad_out: &Array1<f64>,
) -> Result<Array2<f64>> {
    let (t, d) = token_embeddings.dim();
    let n = valid_rows(t, specials);
    if n == 0 {
        return Err(Error::EmptyPool);
    }
    let mut grad = Array2::zeros((t, d));
    match kind {
        PoolingKind::MeanTokens | PoolingKind::LastLayerMean => {
            let rows = mean_rows(n, specials);
            if rows.is_empty() {
                return Err(Error::EmptyPool);
            }
            let share = grad_out / rows.len() as f64;
            for &r in &rows {
                grad.row_mut(r).assign(&share);
            }
        }
        PoolingKind::ClsToken => {
            let pos = cls_position(n, specials)?;
            grad.row_mut(pos).assign(grad_out);
        }
        PoolingKind::Concat4 => {
            let (s, tgt) = source_target(n, specials);
            let g = |k: usize| grad_out.slice(ndarray::s![k * d..(k + 1) * d]);
            {
                let mut row = grad.row_mut(s);
                row += &g(0);
            }
            {
                let mut row = grad.row_mut(tgt);
                row += &g(1);
            }
            for j in 0..d {
                // first maximal row takes the gradient
                let mut arg = 0;
                for r in 1..n {
                    if token_embeddings[[r, j]] > token_embeddings[[arg, j]] {
                        arg = r;
                    }
                }
                grad[[arg, j]] += g(2)[j];
            }
            let mean_share = g(3).to_owned() / n as f64;
            for r in 0..n {
                let mut row = grad.row_mut(r);
                row += &mean_share;
            }
        }
    }
    Ok(grad)
}

fn mean_rows(n: usize, specials: &SpecialPositions) -> Vec<usize> {
    (0..n).filter(|&r| Some(r) != specials.cls).collect()
}

fn cls_position(n: usize, specials: &SpecialPositions) -> Result<usize> {
    let pos = specials.cls.unwrap_or(0);
    if pos >= n {
        return Err(Error::Input(format!("CLS position {pos} outside {n} valid rows")));
    }
    Ok(pos)
}

fn source_target(n: usize, specials: &SpecialPositions) -> (usize, usize) {
    let s = specials.source.unwrap_or(0).min(n - 1);
    let t = specials.target.unwrap_or(1).min(n - 1);
    (s, t)
}

/// Dense `n_cells x dim` cell embeddings with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub model_id: String,
    pub strategy: Strategy,
    pub pooling: PoolingKind,
    pub n_cells: usize,
    pub dim: usize,
    /// Row-major values.
    pub data: Vec<f32>,
    pub cell_ids: Vec<String>,
}

impl EmbeddingMatrix {
    pub fn new(
        model_id: impl Into<String>,
        strategy: Strategy,
        pooling: PoolingKind,
        dim: usize,
        data: Vec<f32>,
        cell_ids: Vec<String>,
    ) -> Result<Self> {
        let m = Self {
            model_id: model_id.into(),
            strategy,
            pooling,
            n_cells: cell_ids.len(),
            dim,
            data,
            cell_ids,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategy == Strategy::Fewshot {
            return Err(Error::Input("few-shot prompting produces no embeddings".into()));
        }
        if self.cell_ids.len() != self.n_cells {
            return Err(Error::Shape(format!(
                "{} cell ids for {} rows",
                self.cell_ids.len(),
                self.n_cells
            )));
        }
        if self.data.len() != self.n_cells * self.dim {
            return Err(Error::Shape(format!(
                "payload has {} values, expected {} x {}",
                self.data.len(),
                self.n_cells,
                self.dim
            )));
        }
        if let Some(i) = self.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite embedding value in row {}",
                i / self.dim.max(1)
            )));
        }
        Ok(())
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Values widened to `f64`, shape `n_cells x dim`.
    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.n_cells, self.dim), |(i, j)| {
            self.data[i * self.dim + j] as f64
        })
    }
}

pub const EXCHANGE_MAGIC: &[u8; 8] = b"SCDMEMB1";
pub const EXCHANGE_VERSION: u16 = 1;

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

/// Serializes `m` in the exchange layout (see `docs/exchange-format.md`).
pub fn encode_embeddings(m: &EmbeddingMatrix) -> Result<Vec<u8>> {
    m.validate()?;
    let mut buf = Vec::with_capacity(64 + m.data.len() * 4);
    buf.extend_from_slice(EXCHANGE_MAGIC);
    buf.extend_from_slice(&EXCHANGE_VERSION.to_le_bytes());
    put_str(&mut buf, &m.model_id);
    put_str(&mut buf, m.pooling.name());
    put_str(&mut buf, m.strategy.name());
    buf.extend_from_slice(&(m.n_cells as u64).to_le_bytes());
    buf.extend_from_slice(&(m.dim as u64).to_le_bytes());
    for id in &m.cell_ids {
        put_str(&mut buf, id);
    }
    for v in &m.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    Ok(buf)
}

pub fn write_embeddings(m: &EmbeddingMatrix, path: &Path) -> Result<()> {
    let bytes = encode_embeddings(m)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Corruption(format!("truncated while reading {what}"))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let raw = self.take(n, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Corruption(format!("{what} is not valid UTF-8")))
    }
}

pub fn decode_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if bytes.len() < 10 || &bytes[..8] != EXCHANGE_MAGIC {
        return Err(Error::Format("not an embedding exchange file (bad magic)".into()));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != EXCHANGE_VERSION {
        return Err(Error::Format(format!(
            "unsupported exchange version {version}, expected {EXCHANGE_VERSION}"
        )));
    }
    let mut c = Cursor { bytes, pos: 10 };
    let model_id = c.string("model id")?;
    let pooling_name = c.string("pooling")?;
    let pooling = PoolingKind::from_name(&pooling_name)
        .ok_or_else(|| Error::Format(format!("unknown pooling {pooling_name:?}")))?;
    let strategy_name = c.string("strategy")?;
    let strategy = Strategy::from_name(&strategy_name)
        .ok_or_else(|| Error::Format(format!("unknown strategy {strategy_name:?}")))?;
    let n_cells = c.u64("n_cells")? as usize;
    let dim = c.u64("dim")? as usize;
    // every cell id costs at least its 4-byte length prefix
    if n_cells > (bytes.len() - c.pos) / 4 {
        return Err(Error::Corruption("cell count exceeds file size".into()));
    }
    let mut cell_ids = Vec::with_capacity(n_cells);
    for _ in 0..n_cells {
        cell_ids.push(c.string("cell id")?);
    }
    let n_values = n_cells
        .checked_mul(dim)
        .ok_or_else(|| Error::Corruption("payload size overflows".into()))?;
    let payload = c.take(
        n_values
            .checked_mul(4)
            .ok_or_else(|| Error::Corruption("payload size overflows".into()))?,
        "payload",
    )?;
    if c.pos != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after payload",
            bytes.len() - c.pos
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(model_id, strategy, pooling, dim, data, cell_ids)
}

pub fn read_embeddings(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embeddings(&bytes)
}
