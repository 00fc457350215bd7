//! Writing embedding exchange files from any cell embedder.
//!
//! External model shims only have to produce one vector per cell; the
//! writer checks widths against the registry, streams rows in chunks and
//! emits the same bytes as [`encode_embeddings`](crate::embedding::encode_embeddings)
//! regardless of the chunk size.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::dataset::{CellProfile, Dataset, GeneVocabulary};
use crate::embedding::{registry_lookup, PoolingKind, EXCHANGE_MAGIC, EXCHANGE_VERSION, MODEL_CARDS};
use crate::error::{Error, Result};
use crate::eval::Strategy;

/// Produces one pooled vector per cell.
pub trait CellEmbedder {
    fn model_id(&self) -> &str;

    /// Width of every returned vector.
    fn output_dim(&self) -> usize;

    fn embed_batch(&self, cells: &[&CellProfile], vocabulary: &GeneVocabulary) -> Result<Vec<Vec<f32>>>;
}

/// Exports `dataset` through `embedder` into `path`, `chunk_size` cells at
/// a time. The embedder's width must equal the registry width of its
/// model. The file appears only once every row has been written.
pub fn export_embeddings(
    dataset: &Dataset,
    embedder: &dyn CellEmbedder,
    strategy: Strategy,
    path: &Path,
    chunk_size: usize,
) -> Result<ExportSummary> {
    if chunk_size == 0 {
        return Err(Error::Parameter("chunk size must be at least 1".into()));
    }
    if strategy == Strategy::Fewshot {
        return Err(Error::Input("few-shot prompting produces no embeddings".into()));
    }
    let descriptor = registry_lookup(embedder.model_id())?;
    let dim = descriptor.output_dim;
    if embedder.output_dim() != dim {
        return Err(Error::Shape(format!(
            "{} is registered with output dim {dim}, exporter declares {}",
            descriptor.model_id,
            embedder.output_dim()
        )));
    }

    let partial = partial_path(path);
    let result = write_stream(dataset, embedder, strategy, descriptor.pooling, dim, &partial, chunk_size);
    if let Err(e) = result {
        let _ = fs::remove_file(&partial);
        return Err(e);
    }
    fs::rename(&partial, path).map_err(|e| Error::io(path, e))?;
    Ok(ExportSummary {
        model_id: descriptor.model_id,
        n_cells: dataset.cells.len(),
        dim,
        chunks: dataset.cells.len().div_ceil(chunk_size),
        path: path.to_path_buf(),
    })
}

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

fn write_stream(
    dataset: &Dataset,
    embedder: &dyn CellEmbedder,
    strategy: Strategy,
    pooling: PoolingKind,
    dim: usize,
    path: &Path,
    chunk_size: usize,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let put_str = |w: &mut BufWriter<fs::File>, s: &str| -> Result<()> {
        w.write_all(&(s.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(s.as_bytes()).map_err(io)
    };

    w.write_all(EXCHANGE_MAGIC).map_err(io)?;
    w.write_all(&EXCHANGE_VERSION.to_le_bytes()).map_err(io)?;
    put_str(&mut w, embedder.model_id())?;
    put_str(&mut w, pooling.name())?;
    put_str(&mut w, strategy.name())?;
    w.write_all(&(dataset.cells.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&(dim as u64).to_le_bytes()).map_err(io)?;
    for c in &dataset.cells {
        put_str(&mut w, &c.cell_id)?;
    }

    let cells: Vec<&CellProfile> = dataset.cells.iter().collect();
    for (k, chunk) in cells.chunks(chunk_size).enumerate() {
        let rows = embedder.embed_batch(chunk, &dataset.vocabulary)?;
        if rows.len() != chunk.len() {
            return Err(Error::Shape(format!(
                "embedder returned {} rows for {} cells",
                rows.len(),
                chunk.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            let cell = &chunk[i].cell_id;
            if row.len() != dim {
                return Err(Error::Shape(format!("cell {cell}: vector of width {}, expected {dim}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("cell {cell} (chunk {k}): non-finite embedding value")));
            }
            for v in row {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
    }
    w.flush().map_err(io)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExportSummary {
    pub model_id: String,
    pub n_cells: usize,
    pub dim: usize,
    pub chunks: usize,
    pub path: PathBuf,
}

/// One row of [`list_supported`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupportedModel {
    pub model_id: &'static str,
    pub checkpoint: &'static str,
    pub pooling: Option<PoolingKind>,
    pub output_dim: Option<usize>,
    pub published: &'static str,
}

fn checkpoint_hint(model_id: &str) -> &'static str {
    match model_id {
        "tGPT" => "https://huggingface.co/lixiangchun/transcriptome-gpt-1024-8-16-64",
        "scBERT" => "https://github.com/TencentAILabHealthcare/scBERT",
        "Geneformer" => "https://huggingface.co/ctheodoris/Geneformer",
        "CellLM" => "https://github.com/PharMolix/OpenBioMed",
        "scFoundation" => "https://github.com/biomap-research/scFoundation",
        "scGPT" => "https://github.com/bowang-lab/scGPT",
        "CellPLM" => "https://github.com/OmicsML/CellPLM (20230926_85M)",
        "UCE" => "https://github.com/snap-stanford/UCE",
        "LLaMa3-8B" => "https://huggingface.co/meta-llama/Meta-Llama-3-8B (access-gated)",
        _ => "hosted API, no checkpoint",
    }
}

/// Every registry model in publication order, undated models last.
pub fn list_supported() -> Vec<SupportedModel> {
    MODEL_CARDS
        .iter()
        .map(|c| SupportedModel {
            model_id: c.model_id,
            checkpoint: checkpoint_hint(c.model_id),
            pooling: c.pooling,
            output_dim: c.output_dim,
            published: c.published,
        })
        .collect()
}
