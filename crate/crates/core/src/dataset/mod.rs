//! Dataset model: gene vocabularies, cell profiles with drug-response labels,
//! study manifests, and category grouping.

mod io;
mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    collection_paths, discover_collection, load_collection, load_dataset, read_manifest, write_dataset, MatrixFormat,
    MANIFEST_SUFFIX,
};
pub use synthetic::{synthesize_dataset, LabelRule, SyntheticSpec};

/// Ordered, duplicate-free list of gene symbols.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneVocabulary {
    symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl GeneVocabulary {
    pub fn new(symbols: Vec<String>) -> Result<Self> {
        if symbols.is_empty() {
            return Err(Error::Format("gene vocabulary is empty".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, s) in symbols.iter().enumerate() {
            if s.is_empty() {
                return Err(Error::Format(format!("empty gene symbol at column {i}")));
            }
            if index.insert(s.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate gene symbol {s:?}")));
            }
        }
        Ok(Self { symbols, index })
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn symbol(&self, gene: usize) -> Option<&str> {
        self.symbols.get(gene).map(String::as_str)
    }

    pub fn position(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }
}

/// Binary drug-response label. Sensitivity is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Resistant = 0,
    Sensitive = 1,
}

impl Label {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Label::Resistant),
            1 => Some(Label::Sensitive),
            _ => None,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Sensitive
    }

    pub fn as_f64(self) -> f64 {
        self as u8 as f64
    }
}

/// One cell: sparse expression over vocabulary indices, its sample of origin
/// and (once assigned) its response label.
///
/// Expression entries are kept sorted by gene index with strictly positive
/// values; zeros are implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct CellProfile {
    pub cell_id: String,
    pub sample_id: String,
    expression: Vec<(u32, f64)>,
    pub label: Option<Label>,
}

impl CellProfile {
    /// Builds a profile, dropping zero entries and sorting by gene index.
    /// Rejects negative or non-finite values and repeated gene indices.
    pub fn new(
        cell_id: impl Into<String>,
        sample_id: impl Into<String>,
        entries: impl IntoIterator<Item = (u32, f64)>,
        label: Option<Label>,
    ) -> Result<Self> {
        let cell_id = cell_id.into();
        let mut expression: Vec<(u32, f64)> = Vec::new();
        for (g, v) in entries {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Data(format!(
                    "cell {cell_id}: invalid expression value {v} for gene {g}"
                )));
            }
            if v > 0.0 {
                expression.push((g, v));
            }
        }
        expression.sort_by_key(|&(g, _)| g);
        if expression.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Data(format!("cell {cell_id}: repeated gene index")));
        }
        Ok(Self {
            cell_id,
            sample_id: sample_id.into(),
            expression,
            label,
        })
    }

    /// Nonzero `(gene index, value)` pairs in ascending gene order.
    pub fn expression(&self) -> &[(u32, f64)] {
        &self.expression
    }

    pub fn value(&self, gene: u32) -> f64 {
        self.expression
            .binary_search_by_key(&gene, |&(g, _)| g)
            .map(|i| self.expression[i].1)
            .unwrap_or(0.0)
    }

    pub fn n_expressed(&self) -> usize {
        self.expression.len()
    }

    pub fn max_gene_index(&self) -> Option<u32> {
        self.expression.last().map(|&(g, _)| g)
    }

    pub fn with_label(mut self, label: Label) -> Self {
        self.label = Some(label);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseStatus {
    Responsive,
    Nonresponsive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timepoint {
    Pre,
    Post,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleStatus {
    pub response: ResponseStatus,
    pub timepoint: Timepoint,
}

impl SampleStatus {
    /// Nonresponsive samples yield resistant cells regardless of timepoint;
    /// responsive samples yield sensitive cells.
    pub fn label(&self) -> Label {
        match self.response {
            ResponseStatus::Responsive => Label::Sensitive,
            ResponseStatus::Nonresponsive => Label::Resistant,
        }
    }
}

/// Sample-level response annotations, keyed by sample id.
pub type SampleResponseTable = BTreeMap<String, SampleStatus>;

/// Labels every cell from its sample's response status.
pub fn assign_labels(
    cells: Vec<CellProfile>,
    table: &SampleResponseTable,
) -> Result<Vec<CellProfile>> {
    cells
        .into_iter()
        .map(|cell| {
            let status = table.get(&cell.sample_id).ok_or_else(|| {
                Error::Lookup(format!(
                    "sample {:?} of cell {:?} is not in the response table",
                    cell.sample_id, cell.cell_id
                ))
            })?;
            let label = status.label();
            Ok(cell.with_label(label))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collection {
    Primary,
    Validation,
}

/// Study-level metadata for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub study_id: String,
    pub tissue: String,
    pub cancer_type: String,
    pub therapy_type: String,
    pub regimen: String,
    pub n_cells: usize,
    pub collection: Collection,
    /// Optional sample annotations; when present, labels are assigned on load.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub samples: SampleResponseTable,
}

impl DatasetManifest {
    pub fn category(&self, axis: CategoryAxis) -> &str {
        match axis {
            CategoryAxis::Tissue => &self.tissue,
            CategoryAxis::Therapy => &self.therapy_type,
            CategoryAxis::Cancer => &self.cancer_type,
            CategoryAxis::Regimen => &self.regimen,
        }
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("study_id", &self.study_id),
            ("tissue", &self.tissue),
            ("cancer_type", &self.cancer_type),
            ("therapy_type", &self.therapy_type),
            ("regimen", &self.regimen),
        ];
        for (name, value) in fields {
            if value.trim().is_empty() {
                return Err(Error::Format(format!("manifest field {name} is empty")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub vocabulary: GeneVocabulary,
    pub cells: Vec<CellProfile>,
}

impl Dataset {
    /// Checks every cross-field invariant: manifest completeness, cell count,
    /// gene indices within the vocabulary, unique cell ids.
    pub fn validate(&self) -> Result<()> {
        self.manifest.validate()?;
        if self.manifest.n_cells != self.cells.len() {
            return Err(Error::Consistency(format!(
                "manifest for {} declares {} cells but the matrix has {}",
                self.manifest.study_id,
                self.manifest.n_cells,
                self.cells.len()
            )));
        }
        let n_genes = self.vocabulary.len();
        let mut seen = HashSet::with_capacity(self.cells.len());
        for cell in &self.cells {
            if let Some(g) = cell.max_gene_index() {
                if g as usize >= n_genes {
                    return Err(Error::Data(format!(
                        "cell {} references gene {g} outside a {n_genes}-gene vocabulary",
                        cell.cell_id
                    )));
                }
            }
            if !seen.insert(cell.cell_id.as_str()) {
                return Err(Error::Data(format!("duplicate cell id {:?}", cell.cell_id)));
            }
        }
        Ok(())
    }

    /// Labels of all cells; errors if any cell is unlabeled.
    pub fn labels(&self) -> Result<Vec<Label>> {
        self.cells
            .iter()
            .map(|c| {
                c.label.ok_or_else(|| {
                    Error::Data(format!(
                        "cell {} in {} has no response label",
                        c.cell_id, self.manifest.study_id
                    ))
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryAxis {
    Tissue,
    Therapy,
    Cancer,
    Regimen,
}

impl fmt::Display for CategoryAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CategoryAxis::Tissue => "tissue",
            CategoryAxis::Therapy => "therapy",
            CategoryAxis::Cancer => "cancer",
            CategoryAxis::Regimen => "regimen",
        })
    }
}

impl std::str::FromStr for CategoryAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tissue" => Ok(CategoryAxis::Tissue),
            "therapy" => Ok(CategoryAxis::Therapy),
            "cancer" => Ok(CategoryAxis::Cancer),
            "regimen" => Ok(CategoryAxis::Regimen),
            other => Err(Error::Parameter(format!("unknown category axis {other:?}"))),
        }
    }
}

/// Datasets sharing one value along a category axis.
#[derive(Debug, Clone)]
pub struct CategoryGroup<'a> {
    pub axis: CategoryAxis,
    pub value: String,
    pub datasets: Vec<&'a Dataset>,
}

impl CategoryGroup<'_> {
    pub fn n_cells(&self) -> usize {
        self.datasets.iter().map(|d| d.cells.len()).sum()
    }

    /// Distinct study ids, sorted.
    pub fn studies(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self
            .datasets
            .iter()
            .map(|d| d.manifest.study_id.as_str())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Partitions `datasets` by their value on `axis`; groups come back sorted
/// by category name and keep input order within a group.
pub fn group_by_category(datasets: &[Dataset], axis: CategoryAxis) -> Vec<CategoryGroup<'_>> {
    let mut groups: BTreeMap<&str, Vec<&Dataset>> = BTreeMap::new();
    for ds in datasets {
        groups.entry(ds.manifest.category(axis)).or_default().push(ds);
    }
    groups
        .into_iter()
        .map(|(value, datasets)| CategoryGroup {
            axis,
            value: value.to_string(),
            datasets,
        })
        .collect()
}
