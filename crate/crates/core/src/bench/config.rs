use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::CategoryAxis;
use crate::embedding::{model_card, PoolingKind, TOY_MODEL_ID};
use crate::encoder::ToyEncoderConfig;
use crate::error::{Error, Result};
use crate::eval::{ScenarioKind, Strategy};
use crate::head::TrainConfig;
use crate::lora::LoraConfig;
use crate::prompt::{LlmConfig, PromptTemplate};
use crate::tokens;

pub const CONFIG_VERSION: u32 = 1;

/// Architecture of the built-in toy encoder. The vocabulary is sized from
/// the data of each category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyEncoderSettings {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub pooling: PoolingKind,
    pub seed: u64,
}

impl Default for ToyEncoderSettings {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_heads: 2,
            n_layers: 2,
            d_ff: 64,
            max_len: 64,
            pooling: PoolingKind::MeanTokens,
            seed: 0,
        }
    }
}

impl ToyEncoderSettings {
    pub fn encoder_config(&self, n_genes: usize) -> ToyEncoderConfig {
        ToyEncoderConfig {
            vocab_size: tokens::vocab_size(n_genes),
            d_model: self.d_model,
            n_heads: self.n_heads,
            n_layers: self.n_layers,
            d_ff: self.d_ff,
            max_len: self.max_len,
            seed: self.seed,
        }
    }
}

fn default_scenario() -> ScenarioKind {
    ScenarioKind::Pooled
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_folds() -> usize {
    10
}

/// Defaults for joint adapter and head training.
pub fn default_finetune() -> TrainConfig {
    TrainConfig {
        learning_rate: 5e-3,
        epochs: 20,
        batch_size: 32,
        ..TrainConfig::default()
    }
}

/// A benchmark run, read from JSON. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    /// Collection directories of `<study>.csv|.sparse` plus
    /// `<study>.manifest.json` pairs.
    pub collections: Vec<PathBuf>,
    #[serde(default = "default_scenario")]
    pub scenario: ScenarioKind,
    pub axis: CategoryAxis,
    /// Restricts the run to these categories; empty means all.
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default)]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub stratified: bool,
    /// Head training for the frozen strategy.
    #[serde(default)]
    pub head: TrainConfig,
    /// Joint adapter and head training for the fine-tune strategy.
    #[serde(default = "default_finetune")]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub lora: LoraConfig,
    #[serde(default)]
    pub toy_encoder: ToyEncoderSettings,
    /// Root of exported embeddings, laid out as
    /// `<embeddings_dir>/<model_id>/<study_id>.emb`.
    #[serde(default)]
    pub embeddings_dir: Option<PathBuf>,
    #[serde(default)]
    pub llm: Option<LlmConfig>,
    #[serde(default)]
    pub prompt_template: Option<PromptTemplate>,
    /// Profile the toy pipelines on the first category with this many
    /// repeats.
    #[serde(default)]
    pub profile_repeats: Option<usize>,
    #[serde(default)]
    pub workers: Option<usize>,
    pub out_dir: PathBuf,
}

/// Where a model's frozen embeddings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Toy,
    External { output_dim: usize },
    PromptOnly,
}

pub fn model_kind(model_id: &str) -> Result<ModelKind> {
    if model_id == TOY_MODEL_ID {
        return Ok(ModelKind::Toy);
    }
    match model_card(model_id) {
        Some(card) => Ok(match card.output_dim {
            Some(output_dim) => ModelKind::External { output_dim },
            None => ModelKind::PromptOnly,
        }),
        None => Err(Error::Lookup(format!("unknown model {model_id:?}"))),
    }
}

fn supports(kind: ModelKind, strategy: Strategy) -> bool {
    matches!(
        (kind, strategy),
        (ModelKind::Toy, Strategy::Frozen | Strategy::Finetuned)
            | (ModelKind::External { .. }, Strategy::Frozen)
            | (ModelKind::PromptOnly, Strategy::Fewshot)
    )
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Every problem found, joined into one configuration error.
    pub fn validate(&self) -> Result<()> {
        let mut problems: Vec<String> = Vec::new();
        if self.config_version != CONFIG_VERSION {
            problems.push(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            ));
        }
        if self.collections.is_empty() {
            problems.push("no collections listed".into());
        }
        for c in &self.collections {
            if !c.is_dir() {
                problems.push(format!("collection {} does not exist", c.display()));
            }
        }
        if self.models.is_empty() {
            problems.push("model list is empty".into());
        }
        for m in &self.models {
            if let Err(e) = model_kind(m) {
                problems.push(e.to_string());
            }
        }
        if self.strategies.is_empty() {
            problems.push("strategy list is empty".into());
        }
        if self.seeds.is_empty() {
            problems.push("seed list is empty".into());
        }
        if self.folds < 2 {
            problems.push(format!("folds must be at least 2, got {}", self.folds));
        }
        for (name, tc) in [("head", &self.head), ("finetune", &self.finetune)] {
            if let Err(e) = tc.validate() {
                problems.push(format!("{name}: {e}"));
            }
        }
        if let Err(e) = self.lora.validate() {
            problems.push(e.to_string());
        }
        if let Err(e) = self.toy_encoder.encoder_config(1).validate() {
            problems.push(format!("toy_encoder: {e}"));
        }
        if let Some(dir) = &self.embeddings_dir {
            if !dir.is_dir() {
                problems.push(format!("embeddings_dir {} does not exist", dir.display()));
            }
        }
        if let Some(llm) = &self.llm {
            if let Err(e) = llm.validate() {
                problems.push(e.to_string());
            }
        }
        if let Some(t) = &self.prompt_template {
            if let Err(e) = t.validate() {
                problems.push(e.to_string());
            }
        }
        if self.profile_repeats.is_some_and(|r| r < 3) {
            problems.push("profile_repeats must be at least 3".into());
        }
        if self.workers == Some(0) {
            problems.push("workers must be at least 1".into());
        }
        if problems.is_empty() && self.pairs().0.is_empty() {
            problems.push("no listed model supports any listed strategy".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Runnable (model, strategy) pairs in listed order, and the skipped
    /// combinations.
    pub fn pairs(&self) -> (Vec<(String, Strategy)>, Vec<String>) {
        let mut run = Vec::new();
        let mut skipped = Vec::new();
        for m in &self.models {
            let Ok(kind) = model_kind(m) else { continue };
            for &s in &self.strategies {
                if supports(kind, s) {
                    run.push((m.clone(), s));
                } else {
                    skipped.push(format!("{m} does not support the {s} strategy"));
                }
            }
        }
        (run, skipped)
    }
}
