//! Seeded synthetic datasets for desk-scale checks.
//!
//! Every cell expresses the same number of genes (a quarter of the
//! vocabulary, at least four), each at a gene-specific base level with
//! small multiplicative jitter. The label rule decides what the classes
//! depend on:
//!
//! * `Linear`: the top half of cells by a noisy linear score over expression
//!   are sensitive. Any representation that retains which genes are
//!   expressed separates the classes.
//! * `Interaction`: two fixed gene pairs; a pair is *active* when both of its
//!   genes are expressed. Cells are sensitive when exactly one pair is
//!   active. Each pair alone is independent of the label, so no single gene
//!   and no linear combination of expression carries signal.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    CellProfile, Collection, Dataset, DatasetManifest, GeneVocabulary, Label, ResponseStatus,
    SampleStatus, Timepoint,
};
use crate::error::{Error, Result};
use crate::rng::{self, DetRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    Linear,
    Interaction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_cells: usize,
    pub n_genes: usize,
    pub label_rule: LabelRule,
    /// Linear rule: std of score noise relative to the score std.
    /// Interaction rule: probability of flipping a label.
    #[serde(default)]
    pub noise_level: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(n_cells: usize, n_genes: usize, label_rule: LabelRule, seed: u64) -> Self {
        Self {
            n_cells,
            n_genes,
            label_rule,
            noise_level: 0.0,
            seed,
        }
    }

    pub fn with_noise(mut self, noise_level: f64) -> Self {
        self.noise_level = noise_level;
        self
    }

    pub fn n_expressed(&self) -> usize {
        (self.n_genes / 4).max(4).min(self.n_genes)
    }

    fn validate(&self) -> Result<()> {
        if self.n_cells < 2 {
            return Err(Error::Parameter("synthetic dataset needs at least 2 cells".into()));
        }
        if self.n_genes < 4 {
            return Err(Error::Parameter("synthetic dataset needs at least 4 genes".into()));
        }
        if !(0.0..1.0).contains(&self.noise_level) {
            return Err(Error::Parameter(format!(
                "noise_level must be in [0, 1), got {}",
                self.noise_level
            )));
        }
        Ok(())
    }
}

const RESPONSIVE_SAMPLES: [&str; 2] = ["R1", "R2"];
const NONRESPONSIVE_SAMPLES: [&str; 2] = ["N1", "N2"];

pub fn synthesize_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = rng::seeded(spec.seed);
    let base: Vec<f64> = (0..spec.n_genes)
        .map(|_| rng::uniform(&mut rng, 2f64.ln(), 50f64.ln()).exp())
        .collect();
    let (expressed, labels) = match spec.label_rule {
        LabelRule::Linear => linear_cells(spec, &base, &mut rng),
        LabelRule::Interaction => interaction_cells(spec, &base, &mut rng),
    };

    let mut samples = BTreeMap::new();
    for s in RESPONSIVE_SAMPLES {
        samples.insert(
            s.to_string(),
            SampleStatus {
                response: ResponseStatus::Responsive,
                timepoint: Timepoint::Pre,
            },
        );
    }
    for (s, tp) in NONRESPONSIVE_SAMPLES.iter().zip([Timepoint::Pre, Timepoint::Post]) {
        samples.insert(
            s.to_string(),
            SampleStatus {
                response: ResponseStatus::Nonresponsive,
                timepoint: tp,
            },
        );
    }

    let mut per_label = [0usize; 2];
    let cells = expressed
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (values, label))| {
            let k = per_label[label as usize];
            per_label[label as usize] += 1;
            let sample = match label {
                Label::Sensitive => RESPONSIVE_SAMPLES[k % 2],
                Label::Resistant => NONRESPONSIVE_SAMPLES[k % 2],
            };
            CellProfile::new(format!("cell{i:05}"), sample, values, Some(label))
        })
        .collect::<Result<Vec<_>>>()?;

    let width = (spec.n_genes - 1).to_string().len().max(4);
    let symbols = (0..spec.n_genes)
        .map(|j| format!("GENE{j:0width$}"))
        .collect();
    let ds = Dataset {
        manifest: DatasetManifest {
            study_id: format!("synthetic-{}", spec.seed),
            tissue: "cell line".into(),
            cancer_type: "synthetic".into(),
            therapy_type: "targeted".into(),
            regimen: "synthetic".into(),
            n_cells: cells.len(),
            collection: Collection::Primary,
            samples,
        },
        vocabulary: GeneVocabulary::new(symbols)?,
        cells,
    };
    ds.validate()?;
    Ok(ds)
}

fn jittered(base: f64, rng: &mut DetRng) -> f64 {
    let v = base * (0.1 * rng::normal(rng)).exp();
    // three decimals keeps text files short and exact
    ((v * 1000.0).round() / 1000.0).max(0.001)
}

type Cells = (Vec<Vec<(u32, f64)>>, Vec<Label>);

fn linear_cells(spec: &SyntheticSpec, base: &[f64], rng: &mut DetRng) -> Cells {
    let weights: Vec<f64> = base.iter().map(|b| rng::normal(rng) / b).collect();
    let k = spec.n_expressed();
    let mut cells = Vec::with_capacity(spec.n_cells);
    let mut scores = Vec::with_capacity(spec.n_cells);
    for _ in 0..spec.n_cells {
        let mut genes = index::sample(rng, spec.n_genes, k).into_vec();
        genes.sort_unstable();
        let values: Vec<(u32, f64)> = genes
            .iter()
            .map(|&g| (g as u32, jittered(base[g], rng)))
            .collect();
        scores.push(values.iter().map(|&(g, v)| weights[g as usize] * v).sum::<f64>());
        cells.push(values);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let sd = (scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / scores.len() as f64).sqrt();
    for s in scores.iter_mut() {
        *s += spec.noise_level * sd * rng::normal(rng);
    }
    // top half by score is sensitive, which pins the class balance
    let mut order: Vec<usize> = (0..spec.n_cells).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut labels = vec![Label::Resistant; spec.n_cells];
    for &i in &order[..spec.n_cells / 2] {
        labels[i] = Label::Sensitive;
    }
    (cells, labels)
}

fn interaction_cells(spec: &SyntheticSpec, base: &[f64], rng: &mut DetRng) -> Cells {
    let signal = index::sample(rng, spec.n_genes, 4).into_vec();
    let pairs = [(signal[0], signal[1]), (signal[2], signal[3])];
    let background: Vec<usize> = (0..spec.n_genes).filter(|g| !signal.contains(g)).collect();
    let k = spec.n_expressed();

    let mut labels = vec![Label::Resistant; spec.n_cells];
    for &i in &rng::permutation(rng, spec.n_cells)[..spec.n_cells / 2] {
        labels[i] = Label::Sensitive;
    }
    let mut cells = Vec::with_capacity(spec.n_cells);
    for label in labels.iter_mut() {
        let first_active: bool = rng.random();
        let second_active = first_active ^ label.is_positive();
        let mut genes = Vec::with_capacity(k);
        for (&(ga, gb), active) in pairs.iter().zip([first_active, second_active]) {
            if active {
                genes.extend([ga, gb]);
            } else {
                match rng.random_range(0..3) {
                    0 => {}
                    1 => genes.push(ga),
                    _ => genes.push(gb),
                }
            }
        }
        let fill = k - genes.len();
        genes.extend(
            index::sample(rng, background.len(), fill)
                .into_iter()
                .map(|i| background[i]),
        );
        genes.sort_unstable();
        cells.push(
            genes
                .iter()
                .map(|&g| (g as u32, jittered(base[g], rng)))
                .collect(),
        );
        if spec.noise_level > 0.0 && rng.random::<f64>() < spec.noise_level {
            *label = match label {
                Label::Sensitive => Label::Resistant,
                Label::Resistant => Label::Sensitive,
            };
        }
    }
    (cells, labels)
}
