//! Low-rank adaptation of the toy encoder and joint fine-tuning of the
//! adapters with the classifier head.
//!
//! An adapter on a weight `W` (`out x in`) holds `A` (`out x r`) and `B`
//! (`r x in`) and contributes `scale * A B` with `scale = alpha / r`. `A`
//! starts gaussian with std 0.02 and `B` at zero, so a freshly attached
//! encoder computes exactly what the base encoder computes. Dropout acts on
//! the adapter input during training only.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::{CellProfile, Dataset};
use crate::embedding::{pool, pool_backward, AdapterDescriptor, EmbeddingMatrix};
use crate::encoder::{ForwardPass, Proj, ToyEncoder};
use crate::error::{Error, Result};
use crate::eval::Strategy;
use crate::head::{self, require_both_classes, MlpParams, Optimizer, Standardizer, TrainConfig, TrainedHead};
use crate::rng;
use crate::tokens::{prep_rank_sequence, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub dropout: f64,
    pub target_names: Vec<String>,
    pub seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 8,
            alpha: 8.0,
            dropout: 0.05,
            target_names: ["query", "key", "value", "out_proj"].map(String::from).to_vec(),
            seed: 0,
        }
    }
}

impl LoraConfig {
    pub fn with_targets<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.target_names = names.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::Config("LoRA rank must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("LoRA dropout must be in [0, 1), got {}", self.dropout)));
        }
        if !self.alpha.is_finite() {
            return Err(Error::Config("LoRA alpha must be finite".into()));
        }
        if self.target_names.is_empty() {
            return Err(Error::Config("LoRA needs at least one target module".into()));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

/// Maps a module name used by one of the benchmarked models onto the toy
/// encoder's projections.
pub fn resolve_target(name: &str) -> Option<&'static [Proj]> {
    Some(match name {
        "query" | "to_q" | "query_projection" | "q_proj" => &[Proj::Query],
        "key" | "to_k" | "key_projection" | "k_proj" => &[Proj::Key],
        "value" | "to_v" | "value_projection" | "v_proj" => &[Proj::Value],
        "c_attn" => &[Proj::Query, Proj::Key, Proj::Value],
        "out_proj" | "output_layer" | "o_proj" => &[Proj::Out],
        "ffn_in" => &[Proj::FfnIn],
        "ffn_out" => &[Proj::FfnOut],
        _ => return None,
    })
}

const TARGET_NAMES: [&str; 18] = [
    "query", "to_q", "query_projection", "q_proj", "key", "to_k", "key_projection", "k_proj",
    "value", "to_v", "value_projection", "v_proj", "c_attn", "out_proj", "output_layer", "o_proj",
    "ffn_in", "ffn_out",
];

/// Projections targeted by `names`, each exactly once, in encoder order.
pub fn resolve_targets<S: AsRef<str>>(names: &[S]) -> Result<Vec<Proj>> {
    let mut seen = BTreeMap::new();
    for name in names {
        let name = name.as_ref();
        let projs = resolve_target(name).ok_or_else(|| {
            Error::Config(format!(
                "unknown LoRA target {name:?}; available: {}",
                TARGET_NAMES.join(", ")
            ))
        })?;
        for &p in projs {
            if let Some(prev) = seen.insert(p, name) {
                return Err(Error::Config(format!(
                    "LoRA targets {prev:?} and {name:?} both resolve to {}",
                    p.name()
                )));
            }
        }
    }
    Ok(seen.into_keys().collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    /// `out x r`
    pub a: Array2<f64>,
    /// `r x in`
    pub b: Array2<f64>,
    pub scale: f64,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.a.nrows(), self.b.ncols())
    }

    pub fn parameter_count(&self) -> usize {
        self.a.len() + self.b.len()
    }

    /// `scale * A B`
    pub fn delta(&self) -> Array2<f64> {
        self.a.dot(&self.b) * self.scale
    }
}

/// `W + scale * A B`.
pub fn effective_weight(adapter: &LoraAdapter, w: &Array2<f64>) -> Result<Array2<f64>> {
    if w.dim() != adapter.shape() {
        return Err(Error::Shape(format!(
            "adapter is {:?} but weight is {:?}",
            adapter.shape(),
            w.dim()
        )));
    }
    Ok(w + &adapter.delta())
}

/// Adapters indexed by block and projection.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSet {
    slots: Vec<[Option<LoraAdapter>; 6]>,
    dropout: f64,
}

impl AdapterSet {
    pub fn get(&self, layer: usize, proj: Proj) -> Option<&LoraAdapter> {
        self.slots.get(layer)?[proj.index()].as_ref()
    }

    pub fn get_mut(&mut self, layer: usize, proj: Proj) -> Option<&mut LoraAdapter> {
        self.slots.get_mut(layer)?[proj.index()].as_mut()
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    /// `("layers.{i}.{name}", adapter)` in block, then projection order.
    pub fn iter(&self) -> impl Iterator<Item = (String, &LoraAdapter)> {
        self.slots.iter().enumerate().flat_map(|(i, slot)| {
            Proj::ALL
                .iter()
                .filter_map(move |&p| slot[p.index()].as_ref().map(|a| (format!("layers.{i}.{}", p.name()), a)))
        })
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parameter_count(&self) -> usize {
        self.iter().map(|(_, a)| a.parameter_count()).sum()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for slot in &mut self.slots {
            for ad in slot.iter_mut().flatten() {
                out.push(ad.a.as_slice_mut().expect("contiguous"));
                out.push(ad.b.as_slice_mut().expect("contiguous"));
            }
        }
        out
    }
}

type GradPair = (Array2<f64>, Array2<f64>);

/// Accumulated `(dA, dB)` per adapter, laid out like its [`AdapterSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterGrads {
    slots: Vec<[Option<GradPair>; 6]>,
}

impl AdapterGrads {
    pub fn zeros_like(set: &AdapterSet) -> Self {
        let slots = set
            .slots
            .iter()
            .map(|slot| {
                let mut g: [Option<(Array2<f64>, Array2<f64>)>; 6] = Default::default();
                for p in Proj::ALL {
                    g[p.index()] = slot[p.index()]
                        .as_ref()
                        .map(|a| (Array2::zeros(a.a.raw_dim()), Array2::zeros(a.b.raw_dim())));
                }
                g
            })
            .collect();
        Self { slots }
    }

    pub fn get(&self, layer: usize, proj: Proj) -> Option<&(Array2<f64>, Array2<f64>)> {
        self.slots.get(layer)?[proj.index()].as_ref()
    }

    pub fn get_mut(&mut self, layer: usize, proj: Proj) -> Option<&mut (Array2<f64>, Array2<f64>)> {
        self.slots.get_mut(layer)?[proj.index()].as_mut()
    }

    fn tensors(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for slot in &self.slots {
            for (a, b) in slot.iter().flatten() {
                out.push(a.as_slice().expect("contiguous"));
                out.push(b.as_slice().expect("contiguous"));
            }
        }
        out
    }
}

/// A frozen base encoder plus trainable adapters.
#[derive(Debug, Clone)]
pub struct AdaptedEncoder {
    pub base: Arc<ToyEncoder>,
    pub adapters: AdapterSet,
    pub config: LoraConfig,
}

/// Wraps every resolved target of every block with a fresh adapter.
pub fn attach(base: Arc<ToyEncoder>, config: &LoraConfig) -> Result<AdaptedEncoder> {
    config.validate()?;
    let targets = resolve_targets(&config.target_names)?;
    let mut rng = rng::seeded(config.seed);
    let r = config.rank;
    let slots = base
        .layers
        .iter()
        .map(|layer| {
            let mut slot: [Option<LoraAdapter>; 6] = Default::default();
            for &p in &targets {
                let (out, inp) = layer.weight(p).dim();
                slot[p.index()] = Some(LoraAdapter {
                    a: Array2::from_shape_simple_fn((out, r), || 0.02 * rng::normal(&mut rng)),
                    b: Array2::zeros((r, inp)),
                    scale: config.scale(),
                });
            }
            slot
        })
        .collect();
    Ok(AdaptedEncoder {
        base,
        adapters: AdapterSet {
            slots,
            dropout: config.dropout,
        },
        config: config.clone(),
    })
}

impl AdaptedEncoder {
    pub fn encode(&self, seq: &TokenSequence) -> Result<Array2<f64>> {
        Ok(self.base.forward(seq, Some(&self.adapters), None)?.output)
    }

    pub fn embed_cell(&self, profile: &CellProfile, descriptor: &AdapterDescriptor) -> Result<Array1<f64>> {
        self.base.embed_cell_with(profile, descriptor, Some(&self.adapters))
    }

    pub fn embed_dataset(&self, dataset: &Dataset, descriptor: &AdapterDescriptor) -> Result<EmbeddingMatrix> {
        self.base
            .embed_dataset_with(dataset, descriptor, Some(&self.adapters), Strategy::Finetuned)
    }

    /// Copy of the base encoder with every adapted weight replaced by `W'`.
    pub fn merged(&self) -> ToyEncoder {
        let mut enc = (*self.base).clone();
        for (i, layer) in enc.layers.iter_mut().enumerate() {
            for p in Proj::ALL {
                if let Some(ad) = self.adapters.get(i, p) {
                    let w = match p {
                        Proj::Query => &mut layer.w_query,
                        Proj::Key => &mut layer.w_key,
                        Proj::Value => &mut layer.w_value,
                        Proj::Out => &mut layer.w_out,
                        Proj::FfnIn => &mut layer.w_ffn_in,
                        Proj::FfnOut => &mut layer.w_ffn_out,
                    };
                    *w += &ad.delta();
                }
            }
        }
        enc
    }

    /// Versioned little-endian adapter file: magic, version, adapter count,
    /// then per adapter its block (`u64`), projection index (`u8`), `out`,
    /// `r`, `in` (`u64`), scale, and the `A` and `B` values (`f64`).
    pub fn adapters_to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(ADAPTER_MAGIC);
        buf.extend_from_slice(&ADAPTER_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.adapters.len() as u64).to_le_bytes());
        for (i, slot) in self.adapters.slots.iter().enumerate() {
            for p in Proj::ALL {
                if let Some(ad) = &slot[p.index()] {
                    buf.extend_from_slice(&(i as u64).to_le_bytes());
                    buf.push(p.index() as u8);
                    for v in [ad.a.nrows(), ad.rank(), ad.b.ncols()] {
                        buf.extend_from_slice(&(v as u64).to_le_bytes());
                    }
                    buf.extend_from_slice(&ad.scale.to_le_bytes());
                    for v in ad.a.iter().chain(ad.b.iter()) {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        buf
    }

    /// Restores adapters written by [`Self::adapters_to_bytes`] onto `base`.
    pub fn adapters_from_bytes(base: Arc<ToyEncoder>, config: &LoraConfig, bytes: &[u8]) -> Result<Self> {
        let mut adapted = attach(base, config)?;
        if bytes.len() < 18 || &bytes[..8] != ADAPTER_MAGIC {
            return Err(Error::Format("not an adapter file (bad magic)".into()));
        }
        if u16::from_le_bytes([bytes[8], bytes[9]]) != ADAPTER_VERSION {
            return Err(Error::Format("unsupported adapter file version".into()));
        }
        let mut pos = 10;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(pos..pos + n)
                .ok_or_else(|| Error::Corruption("truncated adapter file".into()))?;
            pos += n;
            Ok(s)
        };
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().unwrap()) as usize;
        let count = u64_at(take(8)?);
        if count != adapted.adapters.len() {
            return Err(Error::Consistency(format!(
                "file holds {count} adapters, configuration expects {}",
                adapted.adapters.len()
            )));
        }
        for _ in 0..count {
            let layer = u64_at(take(8)?);
            let proj = *Proj::ALL
                .get(take(1)?[0] as usize)
                .ok_or_else(|| Error::Corruption("bad projection index".into()))?;
            let (out, r, inp) = (u64_at(take(8)?), u64_at(take(8)?), u64_at(take(8)?));
            let scale = f64::from_le_bytes(take(8)?.try_into().unwrap());
            let ad = adapted
                .adapters
                .get_mut(layer, proj)
                .ok_or_else(|| Error::Consistency(format!("no adapter slot at layers.{layer}.{}", proj.name())))?;
            if (out, r, inp) != (ad.a.nrows(), ad.rank(), ad.b.ncols()) {
                return Err(Error::Consistency(format!(
                    "adapter layers.{layer}.{} has shape {out}x{r}x{inp}",
                    proj.name()
                )));
            }
            ad.scale = scale;
            for v in ad.a.iter_mut().chain(ad.b.iter_mut()) {
                *v = f64::from_le_bytes(take(8)?.try_into().unwrap());
            }
        }
        if pos != bytes.len() {
            return Err(Error::Corruption("trailing bytes in adapter file".into()));
        }
        Ok(adapted)
    }
}

pub const ADAPTER_MAGIC: &[u8; 8] = b"SCDMLRA1";
pub const ADAPTER_VERSION: u16 = 1;

/// Adapter parameters plus, when given, the head's.
pub fn trainable_parameter_count(adapted: Option<&AdaptedEncoder>, head: Option<&MlpParams>) -> usize {
    adapted.map_or(0, |a| a.adapters.parameter_count()) + head.map_or(0, MlpParams::parameter_count)
}

/// Mean loss over a batch together with adapter and head gradients.
#[derive(Debug, Clone)]
pub struct PipelineGradients {
    pub loss: f64,
    pub adapters: AdapterGrads,
    pub head: MlpParams,
}

struct CellPass {
    pass: ForwardPass,
    seq_index: usize,
}

/// Loss and gradients of `prep -> encode -> pool -> standardize -> MLP ->
/// BCE` over `batch`, indices into `seqs`. Dropout is applied when `dropout`
/// is given.
#[allow(clippy::too_many_arguments)]
fn pipeline_gradients(
    adapted: &AdaptedEncoder,
    head: &MlpParams,
    standardizer: Option<&Standardizer>,
    descriptor: &AdapterDescriptor,
    seqs: &[TokenSequence],
    y: &[f64],
    batch: &[usize],
    mut dropout: Option<&mut rng::DetRng>,
) -> Result<PipelineGradients> {
    let dim = descriptor.output_dim;
    let mut passes = Vec::with_capacity(batch.len());
    let mut features = Array2::zeros((batch.len(), dim));
    for (row, &i) in batch.iter().enumerate() {
        let pass = adapted
            .base
            .forward(&seqs[i], Some(&adapted.adapters), dropout.as_deref_mut())?;
        let pooled = pool(pass.output.view(), descriptor.pooling, &seqs[i].specials)?;
        let z = match standardizer {
            Some(s) => s.apply_row(pooled.view()),
            None => pooled,
        };
        features.row_mut(row).assign(&z);
        passes.push(CellPass { pass, seq_index: i });
    }
    let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
    let bp = head::backprop(head, features.view(), &yb)?;
    let mut grads = AdapterGrads::zeros_like(&adapted.adapters);
    for (row, cp) in passes.iter().enumerate() {
        let mut d_pooled = bp.d_input.row(row).to_owned();
        if let Some(s) = standardizer {
            d_pooled /= &s.scale;
        }
        let seq = &seqs[cp.seq_index];
        let d_tokens = pool_backward(cp.pass.output.view(), descriptor.pooling, &seq.specials, &d_pooled)?;
        adapted
            .base
            .backward(&cp.pass, d_tokens.view(), Some(&adapted.adapters), Some(&mut grads));
    }
    Ok(PipelineGradients {
        loss: bp.loss,
        adapters: grads,
        head: bp.grads,
    })
}

/// Dropout-free batch loss and gradients for every cell in `cells`; the
/// reference the training loop differentiates.
pub fn batch_gradients(
    adapted: &AdaptedEncoder,
    head: &MlpParams,
    standardizer: Option<&Standardizer>,
    descriptor: &AdapterDescriptor,
    cells: &[&CellProfile],
) -> Result<PipelineGradients> {
    adapted.base.check_descriptor(descriptor)?;
    let (seqs, y) = prepare(cells, descriptor)?;
    let all: Vec<usize> = (0..cells.len()).collect();
    pipeline_gradients(adapted, head, standardizer, descriptor, &seqs, &y, &all, None)
}

/// Dropout-free batch-mean loss.
pub fn batch_loss(
    adapted: &AdaptedEncoder,
    head: &MlpParams,
    standardizer: Option<&Standardizer>,
    descriptor: &AdapterDescriptor,
    cells: &[&CellProfile],
) -> Result<f64> {
    let (seqs, y) = prepare(cells, descriptor)?;
    let mut total = 0.0;
    for (seq, &t) in seqs.iter().zip(&y) {
        let out = adapted.encode(seq)?;
        let pooled = pool(out.view(), descriptor.pooling, &seq.specials)?;
        let z = match standardizer {
            Some(s) => s.apply_row(pooled.view()),
            None => pooled,
        };
        total += head::bce_loss(head::forward(head, z.view())?, t);
    }
    Ok(total / y.len() as f64)
}

fn prepare(cells: &[&CellProfile], descriptor: &AdapterDescriptor) -> Result<(Vec<TokenSequence>, Vec<f64>)> {
    let rule = descriptor.prep_rule();
    let seqs = cells
        .iter()
        .map(|c| prep_rank_sequence(c, &rule))
        .collect::<Result<Vec<_>>>()?;
    let y = cells
        .iter()
        .map(|c| {
            c.label
                .map(|l| l.as_f64())
                .ok_or_else(|| Error::Data(format!("cell {} has no label", c.cell_id)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((seqs, y))
}

/// Jointly trained adapters and head.
#[derive(Debug, Clone)]
pub struct FineTuned {
    pub adapted: AdaptedEncoder,
    /// Standardizer fit on attach-time embeddings of the training cells.
    /// The loss curve holds the mean mini-batch loss of each epoch.
    pub head: TrainedHead,
    pub steps: usize,
}

impl FineTuned {
    /// Dropout-free probabilities for `cells`.
    pub fn predict(&self, cells: &[&CellProfile], descriptor: &AdapterDescriptor) -> Result<Array1<f64>> {
        let mut x = Array2::zeros((cells.len(), descriptor.output_dim));
        for (mut row, c) in x.rows_mut().into_iter().zip(cells) {
            row.assign(&self.adapted.embed_cell(c, descriptor)?);
        }
        self.head.predict_array(x.view())
    }
}

/// Mini-batch Adam over all adapter matrices and the head against BCE
/// through the full pipeline. The base encoder is never written.
pub fn fine_tune(
    adapted: AdaptedEncoder,
    head: MlpParams,
    cells: &[&CellProfile],
    descriptor: &AdapterDescriptor,
    config: &TrainConfig,
) -> Result<FineTuned> {
    config.validate()?;
    adapted.base.check_descriptor(descriptor)?;
    if head.input_dim() != descriptor.output_dim {
        return Err(Error::Shape(format!(
            "head expects {} features, descriptor produces {}",
            head.input_dim(),
            descriptor.output_dim
        )));
    }
    let (seqs, y) = prepare(cells, descriptor)?;
    require_both_classes(&y)?;

    let standardizer = if config.standardize {
        let mut x = Array2::zeros((cells.len(), descriptor.output_dim));
        for (mut row, seq) in x.rows_mut().into_iter().zip(&seqs) {
            let out = adapted.encode(seq)?;
            row.assign(&pool(out.view(), descriptor.pooling, &seq.specials)?);
        }
        Some(Standardizer::fit(x.view())?)
    } else {
        None
    };

    let mut adapted = adapted;
    let mut head = head;
    let mut opt = Optimizer::new(config);
    let mut shuffle_rng = rng::stream(config.seed, 1);
    let mut dropout_rng = rng::stream(config.seed, 2);
    let mut curve = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;
    'epochs: for _ in 0..config.epochs {
        let order = rng::permutation(&mut shuffle_rng, y.len());
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break 'epochs;
            }
            let g = pipeline_gradients(
                &adapted,
                &head,
                standardizer.as_ref(),
                descriptor,
                &seqs,
                &y,
                batch,
                Some(&mut dropout_rng),
            )?;
            if !g.loss.is_finite() {
                return Err(Error::Divergence { step: steps, loss: g.loss });
            }
            let mut params = adapted.adapters.tensors_mut();
            params.extend(head.tensors_mut());
            let mut grads = g.adapters.tensors();
            grads.extend(g.head.tensors());
            opt.step(params, grads);
            epoch_loss += g.loss;
            batches += 1;
            steps += 1;
        }
        curve.push(epoch_loss / batches as f64);
    }
    Ok(FineTuned {
        adapted,
        head: TrainedHead {
            params: head,
            standardizer,
            train_loss_curve: curve,
            config: config.clone(),
        },
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ToyEncoderConfig;
    use crate::tokens::{gene_token, SpecialPositions};

    fn base(n_layers: usize) -> Arc<ToyEncoder> {
        let cfg = ToyEncoderConfig { n_layers, ..ToyEncoderConfig::new(40, 16, 11) };
        Arc::new(ToyEncoder::init(&cfg).unwrap())
    }

    #[test]
    fn init_equivalence() {
        let enc = base(2);
        let adapted = attach(enc.clone(), &LoraConfig::default().with_targets(&["c_attn", "out_proj", "ffn_in", "ffn_out"])).unwrap();
        let seq = TokenSequence {
            tokens: (6..14).collect(),
            specials: SpecialPositions::unpadded(8),
            max_len: 16,
        };
        assert_eq!(adapted.encode(&seq).unwrap(), enc.encode(&seq).unwrap());
    }

    #[test]
    fn count_fixture() {
        let adapted = attach(base(1), &LoraConfig::default().with_targets(&["query"])).unwrap();
        assert_eq!(adapted.adapters.parameter_count(), 512);
        let mlp = MlpParams::zeros(32, 4, 2);
        assert_eq!(trainable_parameter_count(Some(&adapted), Some(&mlp)), 657);
        assert_eq!(trainable_parameter_count(None, Some(&mlp)), 145);
        let doubled = attach(base(1), &LoraConfig { rank: 16, ..LoraConfig::default().with_targets(&["query"]) }).unwrap();
        assert_eq!(doubled.adapters.parameter_count(), 1024);
    }

    #[test]
    fn target_resolution() {
        assert_eq!(resolve_targets(&["key", "value", "query"]).unwrap(), vec![Proj::Query, Proj::Key, Proj::Value]);
        assert_eq!(resolve_targets(&["c_attn"]).unwrap().len(), 3);
        assert!(matches!(resolve_targets(&["query", "to_q"]), Err(Error::Config(_))));
        let Err(Error::Config(msg)) = resolve_targets(&["dense"]) else { panic!() };
        assert!(msg.contains("query") && msg.contains("out_proj"));
        assert!(attach(base(1), &LoraConfig::default().with_targets::<&str>(&[])).is_err());
        assert!(attach(base(1), &LoraConfig { rank: 0, ..LoraConfig::default() }).is_err());
    }

    #[test]
    fn effective_weight_cases() {
        let adapted = attach(base(1), &LoraConfig::default()).unwrap();
        let ad = adapted.adapters.get(0, Proj::Query).unwrap();
        let w = &adapted.base.layers[0].w_query;
        assert_eq!(&effective_weight(ad, w).unwrap(), w);
        assert_eq!(ad.scale, 1.0);
        assert!(effective_weight(ad, &Array2::zeros((3, 3))).is_err());
    }

    #[test]
    fn adapter_sidecar_round_trip() {
        let cfg = LoraConfig::default();
        let mut adapted = attach(base(2), &cfg).unwrap();
        adapted.adapters.get_mut(1, Proj::Value).unwrap().b[[2, 3]] = 0.75;
        let bytes = adapted.adapters_to_bytes();
        let back = AdaptedEncoder::adapters_from_bytes(adapted.base.clone(), &cfg, &bytes).unwrap();
        assert_eq!(back.adapters, adapted.adapters);
        assert!(AdaptedEncoder::adapters_from_bytes(adapted.base.clone(), &cfg, &bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn merged_weights_match_adapted_forward() {
        let cfg = LoraConfig::default().with_targets(&["c_attn", "ffn_out"]);
        let mut adapted = attach(base(2), &cfg).unwrap();
        let mut r = rng::seeded(1);
        for l in 0..2 {
            for p in [Proj::Query, Proj::Key, Proj::Value, Proj::FfnOut] {
                let ad = adapted.adapters.get_mut(l, p).unwrap();
                ad.b.mapv_inplace(|_| 0.1 * rng::normal(&mut r));
            }
        }
        let seq = TokenSequence {
            tokens: vec![gene_token(1), gene_token(5), gene_token(2)],
            specials: SpecialPositions::unpadded(3),
            max_len: 16,
        };
        let a = adapted.encode(&seq).unwrap();
        let b = adapted.merged().encode(&seq).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
