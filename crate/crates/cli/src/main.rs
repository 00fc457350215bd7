mod http;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use cellbench::bench::config::default_finetune;
use cellbench::bench::pipelines::{exchange_path, toy_features};
use cellbench::bench::profile::MIN_REPEATS;
use cellbench::bench::{profile_run, report, run, run_with_client, ReportFormat, RunConfig, RunStatus, ToyEncoderSettings};
use cellbench::dataset::{
    collection_paths, group_by_category, load_dataset, synthesize_dataset, write_dataset, CategoryAxis,
    CategoryGroup, CellProfile, Dataset, LabelRule, MatrixFormat, SyntheticSpec,
};
use cellbench::embedding::{write_embeddings, AdapterDescriptor, EmbeddingMatrix, TOY_MODEL_ID};
use cellbench::encoder::ToyEncoder;
use cellbench::eval::{PooledData, ScenarioKind, Strategy};
use cellbench::head::{train_head, MlpParams, TrainConfig};
use cellbench::lora::{attach, fine_tune, LoraConfig};
use cellbench::prompt::{LlmClient, LlmConfig};
use cellbench::{rng, Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

/// Benchmark harness for cell-level drug-response prediction.
#[derive(Debug, Parser)]
#[command(name = "cellbench", version)]
struct Cli {
    #[command(flatten)]
    global: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Flags that override fields of the run configuration.
#[derive(Debug, Args)]
struct Overrides {
    /// Run configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Comma-separated model ids.
    #[arg(long, global = true, value_delimiter = ',', value_name = "a,b,c")]
    models: Option<Vec<String>>,
    #[arg(long, global = true)]
    strategy: Option<StrategyArg>,
    #[arg(long, global = true)]
    axis: Option<AxisArg>,
    #[arg(long, global = true)]
    scenario: Option<ScenarioArg>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Frozen,
    #[value(alias = "finetuned")]
    Finetune,
    Fewshot,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Frozen => Strategy::Frozen,
            StrategyArg::Finetune => Strategy::Finetuned,
            StrategyArg::Fewshot => Strategy::Fewshot,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Tissue,
    Therapy,
    Cancer,
    Regimen,
}

impl From<AxisArg> for CategoryAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Tissue => CategoryAxis::Tissue,
            AxisArg::Therapy => CategoryAxis::Therapy,
            AxisArg::Cancer => CategoryAxis::Cancer,
            AxisArg::Regimen => CategoryAxis::Regimen,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Pooled,
    Cross,
}

impl From<ScenarioArg> for ScenarioKind {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Pooled => ScenarioKind::Pooled,
            ScenarioArg::Cross => ScenarioKind::Cross,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RuleArg {
    Linear,
    Interaction,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Dense,
    Sparse,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ReportArg {
    Csv,
    Structured,
    Plotdata,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate a matrix and manifest and copy them into a collection directory.
    Ingest {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Storage format inside the collection (default: that of the input).
        #[arg(long)]
        format: Option<FormatArg>,
    },
    /// Write synthetic studies into a collection directory.
    Synth {
        #[arg(long, default_value_t = 200)]
        cells: usize,
        #[arg(long, default_value_t = 24)]
        genes: usize,
        #[arg(long, value_enum, default_value = "linear")]
        rule: RuleArg,
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        #[arg(long, default_value_t = 1)]
        studies: usize,
        #[arg(long, default_value = "tumor")]
        tissue: String,
        #[arg(long, default_value = "synthetic")]
        prefix: String,
    },
    /// Embed collections with the toy encoder into exchange files.
    Embed {
        /// Collection directories (default: those of --config).
        #[arg(long = "collection")]
        collections: Vec<PathBuf>,
    },
    /// Train a head (frozen) or adapters and head (finetune) on one category.
    Train {
        #[arg(long = "collection")]
        collections: Vec<PathBuf>,
        /// Category value on the axis (default: the first).
        #[arg(long)]
        category: Option<String>,
    },
    /// Run the evaluation matrix of a configuration.
    Eval,
    /// Run the few-shot strategy against a hosted language model.
    PromptEval,
    /// Measure training and inference speed of the toy pipeline.
    Profile {
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Write summary tables or plot series for a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "all")]
        format: ReportArg,
    },
    /// List the registered models.
    Models,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Parameter(_) | Error::Input(_) | Error::Lookup(_) => EXIT_VALIDATION,
        _ => EXIT_RUNTIME,
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    let o = &cli.global;
    match cli.command {
        Command::Ingest {
            matrix,
            manifest,
            format,
        } => ingest(o, &matrix, &manifest, format),
        Command::Synth {
            cells,
            genes,
            rule,
            noise,
            studies,
            tissue,
            prefix,
        } => {
            let rule = match rule {
                RuleArg::Linear => LabelRule::Linear,
                RuleArg::Interaction => LabelRule::Interaction,
            };
            synth(o, cells, genes, rule, noise, studies, &tissue, &prefix)
        }
        Command::Embed { collections } => embed(o, collections),
        Command::Train { collections, category } => train(o, collections, category),
        Command::Eval => {
            let outcome = run(&run_config(o, None)?)?;
            finish(outcome.status, &outcome.dir)
        }
        Command::PromptEval => prompt_eval(o),
        Command::Profile { repeats } => {
            let config = run_config(o, None)?;
            let repeats = repeats.or(config.profile_repeats).unwrap_or(MIN_REPEATS);
            let dir = profile_run(&config, repeats)?;
            println!("{}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { run, format } => {
            let formats: Vec<ReportFormat> = match format {
                ReportArg::Csv => vec![ReportFormat::Csv],
                ReportArg::Structured => vec![ReportFormat::Structured],
                ReportArg::Plotdata => vec![ReportFormat::Plotdata],
                ReportArg::All => ReportFormat::ALL.to_vec(),
            };
            for f in formats {
                for path in report(&run, f, o.out.as_deref())? {
                    println!("{}", path.display());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Models => {
            for m in cellbench::export::list_supported() {
                println!("{}", serde_json::to_string(&m).expect("model rows serialize"));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Loads `--config` and applies the override flags. `strategy` replaces
/// the configured strategies unless `--strategy` is given.
fn run_config(o: &Overrides, strategy: Option<Strategy>) -> Result<RunConfig> {
    let path = o
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut config = RunConfig::from_path(path)?;
    if let Some(seed) = o.seed {
        config.seeds = vec![seed];
    }
    if o.workers.is_some() {
        config.workers = o.workers;
    }
    if let Some(out) = &o.out {
        config.out_dir = out.clone();
    }
    if let Some(models) = &o.models {
        config.models = models.iter().filter(|m| !m.is_empty()).cloned().collect();
    }
    if let Some(s) = o.strategy.map(Strategy::from).or(strategy) {
        config.strategies = vec![s];
    }
    if let Some(a) = o.axis {
        config.axis = a.into();
    }
    if let Some(s) = o.scenario {
        config.scenario = s.into();
    }
    config.validate()?;
    Ok(config)
}

fn finish(status: RunStatus, dir: &Path) -> Result<ExitCode> {
    println!("{}", dir.display());
    Ok(match status {
        RunStatus::Complete => ExitCode::SUCCESS,
        RunStatus::Partial => {
            eprintln!("warning: some categories failed; see {}", dir.join("failures.json").display());
            ExitCode::from(EXIT_PARTIAL)
        }
        RunStatus::Failed => ExitCode::from(EXIT_RUNTIME),
    })
}

fn prompt_eval(o: &Overrides) -> Result<ExitCode> {
    let mut config = run_config(o, Some(Strategy::Fewshot))?;
    let llm: LlmConfig = config.llm.clone().unwrap_or_default().with_env()?;
    let client: Arc<dyn LlmClient + Send> = Arc::new(http::HttpClient::new(&llm)?);
    config.llm = Some(llm);
    let outcome = run_with_client(&config, Some(client))?;
    finish(outcome.status, &outcome.dir)
}

fn out_dir(o: &Overrides) -> Result<&Path> {
    o.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn ingest(o: &Overrides, matrix: &Path, manifest: &Path, format: Option<FormatArg>) -> Result<ExitCode> {
    let out = out_dir(o)?;
    let ds = load_dataset(matrix, manifest)?;
    ds.validate()?;
    let format = match format {
        Some(FormatArg::Dense) => MatrixFormat::Dense,
        Some(FormatArg::Sparse) => MatrixFormat::Sparse,
        None => MatrixFormat::for_path(matrix),
    };
    fs::create_dir_all(out).map_err(|e| Error::Input(format!("{}: {e}", out.display())))?;
    let (m, j) = collection_paths(out, &ds.manifest.study_id, format);
    for p in [&m, &j] {
        if p.exists() {
            return Err(Error::Input(format!("{} already exists; refusing to overwrite", p.display())));
        }
    }
    write_dataset(&ds, &m, &j)?;
    println!("{}", m.display());
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn synth(
    o: &Overrides,
    cells: usize,
    genes: usize,
    rule: LabelRule,
    noise: f64,
    studies: usize,
    tissue: &str,
    prefix: &str,
) -> Result<ExitCode> {
    let out = out_dir(o)?;
    if studies == 0 {
        return Err(Error::Parameter("--studies must be at least 1".into()));
    }
    fs::create_dir_all(out).map_err(|e| Error::Input(format!("{}: {e}", out.display())))?;
    let seed = o.seed.unwrap_or(0);
    for i in 0..studies {
        let spec = SyntheticSpec::new(cells, genes, rule, seed + i as u64).with_noise(noise);
        let mut ds = synthesize_dataset(&spec)?;
        ds.manifest.study_id = format!("{prefix}-{i}");
        ds.manifest.tissue = tissue.to_string();
        let (m, j) = collection_paths(out, &ds.manifest.study_id, MatrixFormat::Dense);
        write_dataset(&ds, &m, &j)?;
        println!("{}", m.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Model settings for `embed` and `train`: from `--config` if given,
/// defaults otherwise.
struct ModelSettings {
    collections: Vec<PathBuf>,
    axis: CategoryAxis,
    toy: ToyEncoderSettings,
    head: TrainConfig,
    finetune: TrainConfig,
    lora: LoraConfig,
    seed: u64,
}

fn model_settings(o: &Overrides, collections: Vec<PathBuf>) -> Result<ModelSettings> {
    let mut s = match &o.config {
        Some(path) => {
            let c = RunConfig::from_path(path)?;
            ModelSettings {
                collections: c.collections,
                axis: c.axis,
                toy: c.toy_encoder,
                head: c.head,
                finetune: c.finetune,
                lora: c.lora,
                seed: c.seeds.first().copied().unwrap_or(0),
            }
        }
        None => ModelSettings {
            collections: Vec::new(),
            axis: CategoryAxis::Tissue,
            toy: ToyEncoderSettings::default(),
            head: TrainConfig::default(),
            finetune: default_finetune(),
            lora: LoraConfig::default(),
            seed: 0,
        },
    };
    if !collections.is_empty() {
        s.collections = collections;
    }
    if s.collections.is_empty() {
        return Err(Error::Config("no collection given (--collection or --config)".into()));
    }
    if let Some(a) = o.axis {
        s.axis = a.into();
    }
    if let Some(seed) = o.seed {
        s.seed = seed;
    }
    Ok(s)
}

fn load(collections: &[PathBuf]) -> Result<Vec<Dataset>> {
    for c in collections {
        if !c.is_dir() {
            return Err(Error::Config(format!("collection {} does not exist", c.display())));
        }
    }
    cellbench::bench::run::load_collections(collections)
}

fn toy_encoder(settings: &ToyEncoderSettings, data: &PooledData) -> Result<(ToyEncoder, AdapterDescriptor)> {
    let encoder = ToyEncoder::init(&settings.encoder_config(data.vocabulary.len()))?;
    let descriptor = AdapterDescriptor::toy(settings.d_model, settings.pooling, settings.max_len);
    Ok((encoder, descriptor))
}

/// Writes `<out>/toy_scfm/<study>.emb` for every study, embedding each
/// category on its pooled vocabulary as evaluation runs do.
fn embed(o: &Overrides, collections: Vec<PathBuf>) -> Result<ExitCode> {
    let out = out_dir(o)?.to_path_buf();
    let s = model_settings(o, collections)?;
    let datasets = load(&s.collections)?;
    for group in group_by_category(&datasets, s.axis) {
        let data = PooledData::from_group(&group)?;
        let (encoder, descriptor) = toy_encoder(&s.toy, &data)?;
        let x = toy_features(&encoder, &descriptor, &data)?;
        for study in group.studies() {
            let rows: Vec<usize> = (0..data.len()).filter(|&i| data.studies[i] == study).collect();
            let values = rows
                .iter()
                .flat_map(|&i| x.row(i).iter().map(|&v| v as f32).collect::<Vec<_>>())
                .collect();
            let ids = rows.iter().map(|&i| data.cells[i].cell_id.clone()).collect();
            let m = EmbeddingMatrix::new(
                TOY_MODEL_ID,
                Strategy::Frozen,
                descriptor.pooling,
                descriptor.output_dim,
                values,
                ids,
            )?;
            let path = exchange_path(&out, TOY_MODEL_ID, study);
            let parent = path.parent().expect("exchange path has a parent");
            fs::create_dir_all(parent).map_err(|e| Error::Input(format!("{}: {e}", parent.display())))?;
            write_embeddings(&m, &path)?;
            println!("{}", path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    strategy: Strategy,
    axis: CategoryAxis,
    category: &'a str,
    n_cells: usize,
    seed: u64,
    loss_curve: &'a [f64],
    files: Vec<String>,
}

fn pick_group<'a>(groups: Vec<CategoryGroup<'a>>, category: Option<&str>) -> Result<CategoryGroup<'a>> {
    let names: Vec<String> = groups.iter().map(|g| g.value.clone()).collect();
    let found = match category {
        Some(c) => groups.into_iter().find(|g| g.value == c),
        None => groups.into_iter().next(),
    };
    found.ok_or_else(|| Error::Config(format!("category not found (available: {})", names.join(", "))))
}

/// Trains on every cell of one category and saves the encoder, the head
/// and, for fine-tuning, the adapters under `--out`.
fn train(o: &Overrides, collections: Vec<PathBuf>, category: Option<String>) -> Result<ExitCode> {
    let out = out_dir(o)?.to_path_buf();
    let strategy: Strategy = o.strategy.map(Into::into).unwrap_or(Strategy::Frozen);
    if strategy == Strategy::Fewshot {
        return Err(Error::Config("train supports the frozen and finetune strategies".into()));
    }
    let s = model_settings(o, collections)?;
    let datasets = load(&s.collections)?;
    let group = pick_group(group_by_category(&datasets, s.axis), category.as_deref())?;
    let data = PooledData::from_group(&group)?;
    let (encoder, descriptor) = toy_encoder(&s.toy, &data)?;
    fs::create_dir_all(&out).map_err(|e| Error::Input(format!("{}: {e}", out.display())))?;
    let write = |name: &str, bytes: &[u8]| -> Result<String> {
        let path = out.join(name);
        fs::write(&path, bytes).map_err(|e| Error::Evaluation(format!("{}: {e}", path.display())))?;
        Ok(name.to_string())
    };
    let mut files = vec![write("encoder.bin", &encoder.to_bytes())?];
    let labels: Vec<f64> = data.labels.iter().map(|l| l.as_f64()).collect();

    let loss_curve = match strategy {
        Strategy::Frozen => {
            let cfg = TrainConfig { seed: s.seed, ..s.head };
            let x = toy_features(&encoder, &descriptor, &data)?;
            let head = train_head(x.view(), &labels, &cfg)?;
            files.push(write("head.bin", &head.to_bytes())?);
            head.train_loss_curve
        }
        _ => {
            let cfg = TrainConfig { seed: s.seed, ..s.finetune };
            let lora = LoraConfig {
                seed: s.lora.seed ^ s.seed,
                ..s.lora
            };
            let adapted = attach(Arc::new(encoder), &lora)?;
            let head = MlpParams::init(
                descriptor.output_dim,
                cfg.hidden1,
                cfg.hidden2,
                &mut rng::stream(cfg.seed, 0),
            )?;
            let cells: Vec<&CellProfile> = data.cells.iter().collect();
            let tuned = fine_tune(adapted, head, &cells, &descriptor, &cfg)?;
            files.push(write("adapters.bin", &tuned.adapted.adapters_to_bytes())?);
            files.push(write("head.bin", &tuned.head.to_bytes())?);
            tuned.head.train_loss_curve
        }
    };
    let summary = TrainSummary {
        strategy,
        axis: s.axis,
        category: &group.value,
        n_cells: data.len(),
        seed: s.seed,
        loss_curve: &loss_curve,
        files,
    };
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    write("train.json", text.as_bytes())?;
    println!("{}", out.display());
    Ok(ExitCode::SUCCESS)
}
