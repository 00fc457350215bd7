//! On-disk dataset formats.
//!
//! Dense matrices are comma-delimited text with a `cell_id,sample_id,<genes>`
//! header and one row per cell. Files ending in `.sparse` hold a
//! `#SPARSE n_cells n_genes` header followed by `row col value` triplets,
//! with cell and gene names in a `<matrix>.sidecar` file. Manifests are JSON.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{assign_labels, CellProfile, Dataset, DatasetManifest, GeneVocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixFormat {
    Dense,
    Sparse,
}

impl MatrixFormat {
    pub fn for_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("sparse") => MatrixFormat::Sparse,
            _ => MatrixFormat::Dense,
        }
    }
}

pub fn sidecar_path(matrix: &Path) -> PathBuf {
    let mut s = matrix.as_os_str().to_owned();
    s.push(".sidecar");
    PathBuf::from(s)
}

/// Loads a matrix and its manifest. If the manifest carries a sample table,
/// cells are labeled from it.
pub fn load_dataset(matrix_path: &Path, manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let (vocabulary, cells) = match MatrixFormat::for_path(matrix_path) {
        MatrixFormat::Dense => read_dense(matrix_path)?,
        MatrixFormat::Sparse => read_sparse(matrix_path)?,
    };
    let cells = if manifest.samples.is_empty() {
        cells
    } else {
        assign_labels(cells, &manifest.samples)?
    };
    let ds = Dataset {
        manifest,
        vocabulary,
        cells,
    };
    ds.validate()?;
    Ok(ds)
}

/// Writes `dataset` so that [`load_dataset`] reproduces it exactly. Cell
/// labels are not stored in the matrix; they must follow from the
/// manifest's sample table.
pub fn write_dataset(dataset: &Dataset, matrix_path: &Path, manifest_path: &Path) -> Result<()> {
    dataset.validate()?;
    for cell in &dataset.cells {
        let expected = dataset.manifest.samples.get(&cell.sample_id).map(|s| s.label());
        if cell.label.is_some() && cell.label != expected {
            return Err(Error::Consistency(format!(
                "label of cell {} does not follow from the manifest sample table",
                cell.cell_id
            )));
        }
    }
    match MatrixFormat::for_path(matrix_path) {
        MatrixFormat::Dense => write_dense(dataset, matrix_path)?,
        MatrixFormat::Sparse => write_sparse(dataset, matrix_path)?,
    }
    let json = serde_json::to_string_pretty(&dataset.manifest)
        .map_err(|e| Error::Format(e.to_string()))?;
    fs::write(manifest_path, json + "\n").map_err(|e| Error::io(manifest_path, e))
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("manifest {}: {e}", path.display())))
}

pub const MANIFEST_SUFFIX: &str = ".manifest.json";

/// Matrix and manifest paths of dataset `stem` inside a collection directory.
pub fn collection_paths(dir: &Path, stem: &str, format: MatrixFormat) -> (PathBuf, PathBuf) {
    let ext = match format {
        MatrixFormat::Dense => "csv",
        MatrixFormat::Sparse => "sparse",
    };
    (
        dir.join(format!("{stem}.{ext}")),
        dir.join(format!("{stem}{MANIFEST_SUFFIX}")),
    )
}

/// Every `<stem>.manifest.json` in `dir` paired with `<stem>.csv` or
/// `<stem>.sparse`, in file-name order.
pub fn discover_collection(dir: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifests: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(MANIFEST_SUFFIX)) {
            manifests.push(path);
        }
    }
    manifests.sort();
    if manifests.is_empty() {
        return Err(Error::Data(format!(
            "{} holds no *{MANIFEST_SUFFIX} files",
            dir.display()
        )));
    }
    manifests
        .into_iter()
        .map(|manifest| {
            let name = manifest.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let stem = &name[..name.len() - MANIFEST_SUFFIX.len()];
            [MatrixFormat::Dense, MatrixFormat::Sparse]
                .into_iter()
                .map(|f| collection_paths(dir, stem, f).0)
                .find(|m| m.is_file())
                .map(|m| (m, manifest.clone()))
                .ok_or_else(|| {
                    Error::Data(format!(
                        "manifest {} has no {stem}.csv or {stem}.sparse next to it",
                        manifest.display()
                    ))
                })
        })
        .collect()
}

/// Loads every dataset of a collection directory.
pub fn load_collection(dir: &Path) -> Result<Vec<Dataset>> {
    discover_collection(dir)?
        .iter()
        .map(|(matrix, manifest)| load_dataset(matrix, manifest))
        .collect()
}

fn parse_value(field: &str, cell_id: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Format(format!("cell {cell_id}: cannot parse {field:?} as a number")))?;
    if !v.is_finite() || v < 0.0 {
        return Err(Error::Data(format!("cell {cell_id}: invalid expression value {field}")));
    }
    Ok(v)
}

fn read_dense(path: &Path) -> Result<(GeneVocabulary, Vec<CellProfile>)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(BufReader::new(file));
    let mut records = reader.records();
    let header = match records.next() {
        Some(h) => h.map_err(|e| Error::Format(e.to_string()))?,
        None => return Err(Error::Format(format!("{} is empty", path.display()))),
    };
    if header.len() < 3 || &header[0] != "cell_id" || &header[1] != "sample_id" {
        return Err(Error::Format(
            "header must start with cell_id,sample_id followed by gene symbols".into(),
        ));
    }
    let vocabulary = GeneVocabulary::new(header.iter().skip(2).map(str::to_string).collect())?;
    let mut cells = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::Format(e.to_string()))?;
        let cell_id = &rec[0];
        let mut entries = Vec::new();
        for (g, field) in rec.iter().skip(2).enumerate() {
            let v = parse_value(field, cell_id)?;
            if v > 0.0 {
                entries.push((g as u32, v));
            }
        }
        cells.push(CellProfile::new(cell_id, &rec[1], entries, None)?);
    }
    Ok((vocabulary, cells))
}

fn write_dense(ds: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    let mut header = vec!["cell_id".to_string(), "sample_id".to_string()];
    header.extend(ds.vocabulary.symbols().iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    let n_genes = ds.vocabulary.len();
    let mut row: Vec<String> = Vec::with_capacity(n_genes + 2);
    for cell in &ds.cells {
        row.clear();
        row.push(cell.cell_id.clone());
        row.push(cell.sample_id.clone());
        let mut dense = vec![0.0; n_genes];
        for &(g, v) in cell.expression() {
            dense[g as usize] = v;
        }
        row.extend(dense.iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_sparse(path: &Path) -> Result<(GeneVocabulary, Vec<CellProfile>)> {
    let (vocabulary, names) = read_sidecar(&sidecar_path(path))?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = match lines.next() {
        Some(l) => l.map_err(|e| Error::io(path, e))?,
        None => return Err(Error::Format(format!("{} is empty", path.display()))),
    };
    let dims: Vec<&str> = header.split_whitespace().collect();
    let (n_cells, n_genes) = match dims.as_slice() {
        ["#SPARSE", c, g] => (
            c.parse::<usize>()
                .map_err(|_| Error::Format("bad n_cells in #SPARSE header".into()))?,
            g.parse::<usize>()
                .map_err(|_| Error::Format("bad n_genes in #SPARSE header".into()))?,
        ),
        _ => return Err(Error::Format("expected `#SPARSE n_cells n_genes` header".into())),
    };
    if n_cells != names.len() || n_genes != vocabulary.len() {
        return Err(Error::Consistency(format!(
            "sparse header says {n_cells}x{n_genes} but sidecar lists {} cells and {} genes",
            names.len(),
            vocabulary.len()
        )));
    }
    let mut entries: Vec<Vec<(u32, f64)>> = vec![Vec::new(); n_cells];
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [r, c, v] = parts.as_slice() else {
            return Err(Error::Format(format!("triplet line {} malformed", lineno + 2)));
        };
        let bad = || Error::Format(format!("triplet line {} malformed", lineno + 2));
        let row: usize = r.parse().map_err(|_| bad())?;
        let col: usize = c.parse().map_err(|_| bad())?;
        if row >= n_cells || col >= n_genes {
            return Err(Error::Data(format!(
                "triplet ({row}, {col}) outside a {n_cells}x{n_genes} matrix"
            )));
        }
        let value = parse_value(v, &names[row].0)?;
        entries[row].push((col as u32, value));
    }
    let cells = names
        .into_iter()
        .zip(entries)
        .map(|((cell_id, sample_id), e)| CellProfile::new(cell_id, sample_id, e, None))
        .collect::<Result<Vec<_>>>()?;
    Ok((vocabulary, cells))
}

fn read_sidecar(path: &Path) -> Result<(GeneVocabulary, Vec<(String, String)>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let count = |line: Option<&str>, tag: &str| -> Result<usize> {
        line.and_then(|l| l.strip_prefix(tag))
            .and_then(|n| n.trim().parse().ok())
            .ok_or_else(|| Error::Format(format!("sidecar: expected `{tag} <count>`")))
    };
    let n_genes = count(lines.next(), "#GENES")?;
    let genes: Vec<String> = lines.by_ref().take(n_genes).map(str::to_string).collect();
    if genes.len() != n_genes {
        return Err(Error::Format("sidecar: gene list truncated".into()));
    }
    let n_cells = count(lines.next(), "#CELLS")?;
    let mut cells = Vec::with_capacity(n_cells);
    for line in lines.by_ref().take(n_cells) {
        let (c, s) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("sidecar: bad cell line {line:?}")))?;
        cells.push((c.to_string(), s.to_string()));
    }
    if cells.len() != n_cells {
        return Err(Error::Format("sidecar: cell list truncated".into()));
    }
    Ok((GeneVocabulary::new(genes)?, cells))
}

fn write_sparse(ds: &Dataset, path: &Path) -> Result<()> {
    for cell in &ds.cells {
        if cell.cell_id.contains(['\t', '\n']) || cell.sample_id.contains(['\t', '\n']) {
            return Err(Error::Format(format!(
                "cell {:?}: ids may not contain tabs or newlines",
                cell.cell_id
            )));
        }
    }
    let side = sidecar_path(path);
    let mut s = String::new();
    s.push_str(&format!("#GENES {}\n", ds.vocabulary.len()));
    for g in ds.vocabulary.symbols() {
        s.push_str(g);
        s.push('\n');
    }
    s.push_str(&format!("#CELLS {}\n", ds.cells.len()));
    for c in &ds.cells {
        s.push_str(&format!("{}\t{}\n", c.cell_id, c.sample_id));
    }
    fs::write(&side, s).map_err(|e| Error::io(&side, e))?;

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "#SPARSE {} {}", ds.cells.len(), ds.vocabulary.len()).map_err(io)?;
    for (row, cell) in ds.cells.iter().enumerate() {
        for &(g, v) in cell.expression() {
            writeln!(w, "{row} {g} {v}").map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
