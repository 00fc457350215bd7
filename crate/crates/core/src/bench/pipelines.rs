//! [`Pipeline`] implementations for the three strategies.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use ndarray::{Array2, Axis};
use rayon::prelude::*;

use crate::dataset::CellProfile;
use crate::embedding::{read_embeddings, AdapterDescriptor};
use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::eval::{Pipeline, PooledData, Strategy};
use crate::head::{train_head, MlpParams, TrainConfig};
use crate::lora::{attach, fine_tune, LoraConfig};
use crate::prompt::{answer_cells, BatchFailure, FewshotOptions, LlmClient, PromptTemplate};
use crate::rng;

/// Head training on a fixed feature matrix aligned with the pooled cells.
pub struct FrozenPipeline {
    model_id: String,
    features: Array2<f64>,
    train: TrainConfig,
}

impl FrozenPipeline {
    pub fn new(model_id: impl Into<String>, features: Array2<f64>, train: TrainConfig) -> Self {
        Self {
            model_id: model_id.into(),
            features,
            train,
        }
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }
}

impl Pipeline for FrozenPipeline {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn strategy(&self) -> Strategy {
        Strategy::Frozen
    }

    fn fit_predict(&self, data: &PooledData, train: &[usize], test: &[usize]) -> Result<Vec<Option<f64>>> {
        if self.features.nrows() != data.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} cells",
                self.features.nrows(),
                data.len()
            )));
        }
        let y: Vec<f64> = train.iter().map(|&i| data.labels[i].as_f64()).collect();
        let head = train_head(self.features.select(Axis(0), train).view(), &y, &self.train)?;
        let probs = head.predict_array(self.features.select(Axis(0), test).view())?;
        Ok(probs.into_iter().map(Some).collect())
    }
}

/// Frozen toy-encoder embeddings of every pooled cell.
pub fn toy_features(encoder: &ToyEncoder, descriptor: &AdapterDescriptor, data: &PooledData) -> Result<Array2<f64>> {
    let rows = data
        .cells
        .par_iter()
        .map(|c| encoder.embed_cell(c, descriptor))
        .collect::<Result<Vec<_>>>()?;
    let mut x = Array2::zeros((rows.len(), descriptor.output_dim));
    for (mut dst, src) in x.rows_mut().into_iter().zip(&rows) {
        dst.assign(src);
    }
    Ok(x)
}

/// `<root>/<model_id>/<study_id>.emb`
pub fn exchange_path(root: &Path, model_id: &str, study_id: &str) -> PathBuf {
    root.join(model_id).join(format!("{study_id}.emb"))
}

/// Exported embeddings of every pooled cell, looked up by study and cell
/// id. Each study's file must exist, name the model, and have the
/// registered width.
pub fn external_features(
    root: &Path,
    model_id: &str,
    output_dim: usize,
    data: &PooledData,
) -> Result<Array2<f64>> {
    let mut x = Array2::zeros((data.len(), output_dim));
    let mut by_study: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.studies.iter().enumerate() {
        by_study.entry(s).or_default().push(i);
    }
    for (study, rows) in by_study {
        let path = exchange_path(root, model_id, study);
        if !path.is_file() {
            return Err(Error::MissingEmbeddings {
                model_id: model_id.to_string(),
                study_id: study.to_string(),
                path,
            });
        }
        let emb = read_embeddings(&path)?;
        if emb.model_id != model_id {
            return Err(Error::Consistency(format!(
                "{} holds embeddings of {}, expected {model_id}",
                path.display(),
                emb.model_id
            )));
        }
        if emb.dim != output_dim {
            return Err(Error::Shape(format!(
                "{} has width {}, {model_id} is registered with {output_dim}",
                path.display(),
                emb.dim
            )));
        }
        let index: HashMap<&str, usize> = emb.cell_ids.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
        for r in rows {
            let id = &data.cells[r].cell_id;
            let src = *index.get(id.as_str()).ok_or_else(|| {
                Error::Consistency(format!("{} has no embedding for cell {id}", path.display()))
            })?;
            for (dst, &v) in x.row_mut(r).iter_mut().zip(emb.row(src)) {
                *dst = f64::from(v);
            }
        }
    }
    Ok(x)
}

/// Attaches fresh adapters to the base encoder and trains them jointly
/// with a fresh head on each split.
pub struct FinetunePipeline {
    base: Arc<ToyEncoder>,
    descriptor: AdapterDescriptor,
    lora: LoraConfig,
    train: TrainConfig,
}

impl FinetunePipeline {
    pub fn new(base: Arc<ToyEncoder>, descriptor: AdapterDescriptor, lora: LoraConfig, train: TrainConfig) -> Self {
        Self {
            base,
            descriptor,
            lora,
            train,
        }
    }
}

impl Pipeline for FinetunePipeline {
    fn model_id(&self) -> &str {
        &self.descriptor.model_id
    }

    fn strategy(&self) -> Strategy {
        Strategy::Finetuned
    }

    fn fit_predict(&self, data: &PooledData, train: &[usize], test: &[usize]) -> Result<Vec<Option<f64>>> {
        let adapted = attach(self.base.clone(), &self.lora)?;
        let head = MlpParams::init(
            self.descriptor.output_dim,
            self.train.hidden1,
            self.train.hidden2,
            &mut rng::stream(self.train.seed, 0),
        )?;
        let cells: Vec<&CellProfile> = train.iter().map(|&i| &data.cells[i]).collect();
        let tuned = fine_tune(adapted, head, &cells, &self.descriptor, &self.train)?;
        let test_cells: Vec<&CellProfile> = test.iter().map(|&i| &data.cells[i]).collect();
        Ok(tuned.predict(&test_cells, &self.descriptor)?.into_iter().map(Some).collect())
    }
}

/// Prompts a hosted model for the test cells; the training split is
/// unused. Failed batches are kept for the run's failure log.
pub struct FewshotPipeline {
    model_id: String,
    client: Arc<dyn LlmClient + Send>,
    template: PromptTemplate,
    options: FewshotOptions,
    /// Data-source line of each study.
    sources: BTreeMap<String, String>,
    failures: FailureLog,
}

/// Shared list of skipped prompt batches.
pub type FailureLog = Arc<Mutex<Vec<BatchFailure>>>;

impl FewshotPipeline {
    pub fn new(
        model_id: impl Into<String>,
        client: Arc<dyn LlmClient + Send>,
        template: PromptTemplate,
        options: FewshotOptions,
        sources: BTreeMap<String, String>,
    ) -> Self {
        Self {
            model_id: model_id.into(),
            client,
            template,
            options,
            sources,
            failures: FailureLog::default(),
        }
    }

    pub fn failure_log(&self) -> FailureLog {
        self.failures.clone()
    }
}

impl Pipeline for FewshotPipeline {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn strategy(&self) -> Strategy {
        Strategy::Fewshot
    }

    fn fit_predict(&self, data: &PooledData, _train: &[usize], test: &[usize]) -> Result<Vec<Option<f64>>> {
        // batches never mix studies, so each prompt has one source line
        let mut by_study: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (pos, &i) in test.iter().enumerate() {
            by_study.entry(&data.studies[i]).or_default().push(pos);
        }
        let mut out = vec![None; test.len()];
        for (study, positions) in by_study {
            let source = self
                .sources
                .get(study)
                .ok_or_else(|| Error::Lookup(format!("no source description for study {study}")))?;
            let cells: Vec<&CellProfile> = positions.iter().map(|&p| &data.cells[test[p]]).collect();
            let answers = answer_cells(
                &cells,
                &data.vocabulary,
                source,
                self.client.as_ref(),
                &self.template,
                &self.options,
            )?;
            for (&p, a) in positions.iter().zip(&answers.labels) {
                out[p] = a.map(|l| l.as_f64());
            }
            self.failures
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .extend(answers.failures);
        }
        Ok(out)
    }
}
