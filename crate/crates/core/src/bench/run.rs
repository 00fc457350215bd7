//! Orchestration of a benchmark run into a timestamped run directory.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{SecondsFormat, Utc};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::config::{model_kind, ModelKind, RunConfig};
use super::pipelines::{
    exchange_path, external_features, toy_features, FailureLog, FewshotPipeline, FinetunePipeline, FrozenPipeline,
};
use super::profile::{profile_toy, Hardware, ProfilePair, ProfileRow};
use super::report::{profile_csv, records_csv, records_jsonl, summary_csv, summary_json};
use crate::dataset::{group_by_category, load_collection, CategoryGroup, CellProfile, Dataset};
use crate::embedding::{model_card, AdapterDescriptor, TOY_MODEL_ID};
use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate, cross_evaluate, pooled_evaluate, EvalOptions, Pipeline, PooledData, ResultRecord, ScenarioKind,
    SplitPlan, Strategy, SummaryRow,
};
use crate::head::TrainConfig;
use crate::prompt::{describe_source, BatchFailure, FewshotOptions, LlmClient};

pub const CONFIG_FILE: &str = "config.json";
pub const RUN_FILE: &str = "run.json";
pub const RECORDS_FILE: &str = "records.jsonl";
pub const RECORDS_CSV_FILE: &str = "records.csv";
pub const SUMMARY_CSV_FILE: &str = "summary.csv";
pub const SUMMARY_JSON_FILE: &str = "summary.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const FAILURES_FILE: &str = "failures.json";
pub const PROMPT_FAILURES_FILE: &str = "prompt_failures.json";
pub const PROFILES_FILE: &str = "profiles.json";
pub const PROFILE_ROWS_FILE: &str = "profile_rows.json";
pub const PROFILE_CSV_FILE: &str = "profiles.csv";

/// Sole writer of one run directory.
#[derive(Debug)]
pub struct RunWriter {
    dir: PathBuf,
}

impl RunWriter {
    /// Creates `<out_dir>/run-<UTC timestamp>`, suffixed if the name is
    /// taken.
    pub fn create(out_dir: &Path) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let stamp = Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string();
        let mut dir = out_dir.join(format!("run-{stamp}"));
        let mut n = 1;
        loop {
            match fs::create_dir(&dir) {
                Ok(()) => return Ok(Self { dir }),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    n += 1;
                    dir = out_dir.join(format!("run-{stamp}-{n}"));
                }
                Err(e) => return Err(Error::io(&dir, e)),
            }
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Some (category, model, strategy, seed) evaluations failed.
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryFailure {
    pub category: String,
    pub model_id: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub started_at: String,
    pub finished_at: String,
    pub status: RunStatus,
    pub hardware: Hardware,
    pub n_records: usize,
    pub skipped: Vec<String>,
    pub failures: Vec<CategoryFailure>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitEntry {
    pub category: String,
    pub seed: u64,
    pub plan: SplitPlan,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub status: RunStatus,
    pub records: Vec<ResultRecord>,
    pub summaries: Vec<SummaryRow>,
    pub failures: Vec<CategoryFailure>,
    pub splits: Vec<SplitEntry>,
    pub profiles: Vec<ProfilePair>,
}

/// Loads every dataset of the listed collections, in listed order.
pub fn load_collections(paths: &[PathBuf]) -> Result<Vec<Dataset>> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(load_collection(p)?);
    }
    Ok(all)
}

/// Runs the configured matrix without a language-model client.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    run_with_client(config, None)
}

struct Toy {
    encoder: Arc<ToyEncoder>,
    descriptor: AdapterDescriptor,
}

fn toy_for(config: &RunConfig, data: &PooledData) -> Result<Toy> {
    let settings = &config.toy_encoder;
    let encoder = Arc::new(ToyEncoder::init(&settings.encoder_config(data.vocabulary.len()))?);
    let descriptor = AdapterDescriptor::toy(settings.d_model, settings.pooling, settings.max_len);
    Ok(Toy { encoder, descriptor })
}

fn seeded(tc: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..tc.clone() }
}

/// Executes model x strategy x category x seed and writes every artifact
/// into a fresh run directory. Evaluations that fail are recorded and the
/// run continues; a run where all fail is an error.
pub fn run_with_client(config: &RunConfig, client: Option<Arc<dyn LlmClient + Send>>) -> Result<RunOutcome> {
    config.validate()?;
    let started_at = Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true);
    let (pairs, mut skipped) = config.pairs();
    if pairs.iter().any(|(_, s)| *s == Strategy::Fewshot) && client.is_none() {
        return Err(Error::Config(
            "the fewshot strategy needs a language-model client; none was provided".into(),
        ));
    }
    let datasets = load_collections(&config.collections)?;
    let groups = select_groups(config, &datasets)?;
    check_exchange_files(config, &pairs, &groups)?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;

    let writer = RunWriter::create(&config.out_dir)?;
    writer.write(CONFIG_FILE, &config.to_json())?;

    let mut state = Accumulator::default();
    pool.install(|| -> Result<()> {
        for group in &groups {
            evaluate_group(config, &pairs, client.as_ref(), group, &mut state, &mut skipped)?;
        }
        if let (Some(repeats), Some(group)) = (config.profile_repeats, groups.first()) {
            if pairs.iter().any(|(m, _)| m == TOY_MODEL_ID) {
                profile_group(config, repeats, group, &writer, &mut state)?;
            }
        }
        Ok(())
    })?;

    let status = if state.records.is_empty() {
        RunStatus::Failed
    } else if state.failures.is_empty() {
        RunStatus::Complete
    } else {
        RunStatus::Partial
    };
    let summaries = if state.records.is_empty() {
        Vec::new()
    } else {
        aggregate(&state.records)?
    };
    writer.write(RECORDS_FILE, &records_jsonl(&state.records))?;
    writer.write(RECORDS_CSV_FILE, &records_csv(&state.records)?)?;
    writer.write(SUMMARY_CSV_FILE, &summary_csv(&summaries)?)?;
    writer.write(SUMMARY_JSON_FILE, &summary_json(&summaries))?;
    writer.write_json(SPLITS_FILE, &state.splits)?;
    if !state.failures.is_empty() {
        writer.write_json(FAILURES_FILE, &state.failures)?;
    }
    if !state.prompt_failures.is_empty() {
        writer.write_json(PROMPT_FAILURES_FILE, &state.prompt_failures)?;
    }
    let manifest = RunManifest {
        tool: "cellbench".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        started_at,
        finished_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        status,
        hardware: Hardware::current(),
        n_records: state.records.len(),
        skipped,
        failures: state.failures.clone(),
    };
    writer.write_json(RUN_FILE, &manifest)?;

    if status == RunStatus::Failed {
        let first = state
            .failures
            .first()
            .map(|f| format!(": {} {} on {}: {}", f.model_id, f.strategy, f.category, f.message))
            .unwrap_or_default();
        return Err(Error::Evaluation(format!(
            "no evaluation succeeded (details in {}){first}",
            writer.dir().display()
        )));
    }
    Ok(RunOutcome {
        dir: writer.dir().to_path_buf(),
        status,
        records: state.records,
        summaries,
        failures: state.failures,
        splits: state.splits,
        profiles: state.profiles,
    })
}

/// Profiles the toy pipeline on the first selected category without
/// evaluating anything. Writes the config snapshot, the measured records,
/// the model-property rows and `profiles.csv`; returns the run directory.
pub fn profile_run(config: &RunConfig, repeats: usize) -> Result<PathBuf> {
    config.validate()?;
    let datasets = load_collections(&config.collections)?;
    let groups = select_groups(config, &datasets)?;
    let group = groups
        .first()
        .ok_or_else(|| Error::Config("no category to profile on".into()))?;
    let writer = RunWriter::create(&config.out_dir)?;
    writer.write(CONFIG_FILE, &config.to_json())?;
    let mut state = Accumulator::default();
    let rows = profile_group(config, repeats, group, &writer, &mut state)?;
    writer.write(PROFILE_CSV_FILE, &profile_csv(&rows)?)?;
    Ok(writer.dir().to_path_buf())
}

#[derive(Default)]
struct Accumulator {
    records: Vec<ResultRecord>,
    failures: Vec<CategoryFailure>,
    splits: Vec<SplitEntry>,
    prompt_failures: Vec<BatchFailure>,
    profiles: Vec<ProfilePair>,
}

fn select_groups<'a>(config: &RunConfig, datasets: &'a [Dataset]) -> Result<Vec<CategoryGroup<'a>>> {
    let groups = group_by_category(datasets, config.axis);
    if config.categories.is_empty() {
        return Ok(groups);
    }
    let available: Vec<&str> = groups.iter().map(|g| g.value.as_str()).collect();
    if let Some(missing) = config.categories.iter().find(|c| !available.contains(&c.as_str())) {
        return Err(Error::Config(format!(
            "category {missing:?} not found on the {} axis (available: {})",
            config.axis,
            available.join(", ")
        )));
    }
    Ok(groups
        .into_iter()
        .filter(|g| config.categories.contains(&g.value))
        .collect())
}

/// Fails before any work if an external model lacks the exchange file of
/// a study it is asked to cover.
fn check_exchange_files(config: &RunConfig, pairs: &[(String, Strategy)], groups: &[CategoryGroup<'_>]) -> Result<()> {
    for (model, _) in pairs {
        if !matches!(model_kind(model)?, ModelKind::External { .. }) {
            continue;
        }
        for group in groups {
            for study in group.studies() {
                let missing = |path: PathBuf| Error::MissingEmbeddings {
                    model_id: model.clone(),
                    study_id: study.to_string(),
                    path,
                };
                let Some(root) = &config.embeddings_dir else {
                    return Err(missing(exchange_path(Path::new("<embeddings_dir>"), model, study)));
                };
                let path = exchange_path(root, model, study);
                if !path.is_file() {
                    return Err(missing(path));
                }
            }
        }
    }
    Ok(())
}

fn evaluate_group(
    config: &RunConfig,
    pairs: &[(String, Strategy)],
    client: Option<&Arc<dyn LlmClient + Send>>,
    group: &CategoryGroup<'_>,
    state: &mut Accumulator,
    skipped: &mut Vec<String>,
) -> Result<()> {
    let category = group.value.as_str();
    let fail_all = |state: &mut Accumulator, message: String| {
        for seed in &config.seeds {
            for (m, s) in pairs {
                state.failures.push(CategoryFailure {
                    category: category.to_string(),
                    model_id: m.clone(),
                    strategy: *s,
                    seed: *seed,
                    message: message.clone(),
                });
            }
        }
    };
    let data = match PooledData::from_group(group) {
        Ok(d) => d,
        Err(e) => {
            fail_all(state, e.to_string());
            return Ok(());
        }
    };
    if config.scenario == ScenarioKind::Cross && group.studies().len() < 2 {
        skipped.push(format!("category {category} has a single study, nothing to hold out"));
        return Ok(());
    }
    log::info!("category {category}: {} cells from {} studies", data.len(), group.studies().len());

    let needs_toy = pairs.iter().any(|(m, _)| m == TOY_MODEL_ID);
    let toy = needs_toy.then(|| toy_for(config, &data)).transpose()?;
    // frozen features do not depend on the seed
    let mut features: HashMap<&str, Result<Array2<f64>>> = HashMap::new();
    for (m, s) in pairs {
        if *s != Strategy::Frozen || features.contains_key(m.as_str()) {
            continue;
        }
        let f = match model_kind(m)? {
            ModelKind::Toy => {
                let t = toy.as_ref().expect("toy built when listed");
                toy_features(&t.encoder, &t.descriptor, &data)
            }
            ModelKind::External { output_dim } => {
                let root = config.embeddings_dir.as_ref().expect("checked before the run");
                external_features(root, m, output_dim, &data)
            }
            ModelKind::PromptOnly => unreachable!("prompt-only models have no frozen strategy"),
        };
        features.insert(m, f);
    }
    let sources: BTreeMap<String, String> = group
        .datasets
        .iter()
        .map(|d| (d.manifest.study_id.clone(), describe_source(d)))
        .collect();
    let llm = config.llm.clone().unwrap_or_default();
    let template = config.prompt_template.clone().unwrap_or_default();

    for &seed in &config.seeds {
        let options = EvalOptions {
            k: config.folds,
            seed,
            stratified: config.stratified,
        };
        let mut plan_seen: Option<SplitPlan> = None;
        for (model, strategy) in pairs {
            let mut log: Option<FailureLog> = None;
            let pipeline: Box<dyn Pipeline> = match strategy {
                Strategy::Frozen => match &features[model.as_str()] {
                    Ok(x) => Box::new(FrozenPipeline::new(model, x.clone(), seeded(&config.head, seed))),
                    Err(e) => {
                        state.failures.push(failure(category, model, *strategy, seed, e));
                        continue;
                    }
                },
                Strategy::Finetuned => {
                    let t = toy.as_ref().expect("only the toy model fine-tunes");
                    let mut lora = config.lora.clone();
                    lora.seed ^= seed;
                    Box::new(FinetunePipeline::new(
                        t.encoder.clone(),
                        t.descriptor.clone(),
                        lora,
                        seeded(&config.finetune, seed),
                    ))
                }
                Strategy::Fewshot => {
                    let p = FewshotPipeline::new(
                        model,
                        client.expect("checked before the run").clone(),
                        template.clone(),
                        FewshotOptions::from_config(&llm),
                        sources.clone(),
                    );
                    log = Some(p.failure_log());
                    Box::new(p)
                }
            };
            let pipeline = pipeline.as_ref();
            let result = match config.scenario {
                ScenarioKind::Pooled => {
                    pooled_evaluate(&data, config.axis, category, pipeline, &options).and_then(|(plan, recs)| {
                        match &plan_seen {
                            Some(p) if *p != plan => Err(Error::Consistency(format!(
                                "split plan for {category} differs between models at seed {seed}"
                            ))),
                            Some(_) => Ok(recs),
                            None => {
                                plan_seen = Some(plan);
                                Ok(recs)
                            }
                        }
                    })
                }
                ScenarioKind::Cross => cross_evaluate(&data, config.axis, category, pipeline, seed),
            };
            if let Some(log) = log {
                state
                    .prompt_failures
                    .extend(std::mem::take(&mut *log.lock().unwrap_or_else(|p| p.into_inner())));
            }
            match result {
                Ok(recs) => state.records.extend(recs),
                Err(e) => {
                    log::error!("{model} {strategy} on {category} (seed {seed}): {e}");
                    state.failures.push(failure(category, model, *strategy, seed, &e));
                }
            }
        }
        if let Some(plan) = plan_seen {
            state.splits.push(SplitEntry {
                category: category.to_string(),
                seed,
                plan,
            });
        }
    }
    Ok(())
}

fn failure(category: &str, model: &str, strategy: Strategy, seed: u64, e: &Error) -> CategoryFailure {
    CategoryFailure {
        category: category.to_string(),
        model_id: model.to_string(),
        strategy,
        seed,
        message: e.to_string(),
    }
}

fn profile_group(
    config: &RunConfig,
    repeats: usize,
    group: &CategoryGroup<'_>,
    writer: &RunWriter,
    state: &mut Accumulator,
) -> Result<Vec<ProfileRow>> {
    let data = PooledData::from_group(group)?;
    let toy = toy_for(config, &data)?;
    let cells: Vec<&CellProfile> = data.cells.iter().collect();
    let seed = config.seeds[0];
    let (pair, _) = profile_toy(
        toy.encoder.clone(),
        &toy.descriptor,
        &config.lora,
        &seeded(&config.finetune, seed),
        &cells,
        repeats,
    )?;
    let mut rows = vec![ProfileRow::measured(&toy.encoder, &toy.descriptor, &pair)];
    rows.extend(
        config
            .models
            .iter()
            .filter_map(|m| model_card(m))
            .map(ProfileRow::from_card),
    );
    writer.write_json(PROFILES_FILE, &[&pair.training, &pair.inference])?;
    writer.write_json(PROFILE_ROWS_FILE, &rows)?;
    state.profiles.push(pair);
    Ok(rows)
}
