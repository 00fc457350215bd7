//! Few-shot prompting of a hosted language model.
//!
//! A prompt is the concatenation of four fixed template segments around a
//! data-source description and one content line per cell:
//!
//! ```text
//! pre + source_intro + source + gene_intro + "<n>: G1, G2, ..." lines + post
//! ```
//!
//! Cells are sent in batches of at most ten, each listed by ordinal and its
//! ten most expressed gene symbols. Replies must contain one
//! `<index>: <sensitive|resistant>` line per cell.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{LazyLock, Mutex};
use std::time::Duration;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::{CellProfile, Dataset, GeneVocabulary, Label};
use crate::error::{Error, Result};
use crate::eval::{compute_metrics, MetricSet, DEFAULT_THRESHOLD};
use crate::tokens::top_k_gene_names;

pub const MAX_BATCH_ITEMS: usize = 10;
pub const GENES_PER_ITEM: usize = 10;
/// Must appear verbatim in [`PromptTemplate::post`].
pub const ANSWER_SCHEMA_MARKER: &str = "<index>: <sensitive|resistant>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub pre: String,
    pub source_intro: String,
    pub gene_intro: String,
    pub post: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            pre: "You are helping to predict how individual cancer cells respond to a drug treatment. \
For each cell, first think about which pathways and cell states its most highly expressed \
genes suggest, then about whether those states are known to make cells sensitive or \
resistant to the treatment, and only then decide.\n\n"
                .into(),
            source_intro: "Data source: ".into(),
            gene_intro: "\n\nEach line below is one cell: its number, then its ten most highly \
expressed genes from highest to lowest.\n"
                .into(),
            post: "\nClassify every cell above as sensitive or resistant to the treatment. \
Reply with exactly one line per cell in the form `<index>: <sensitive|resistant>`, \
using the cell numbers given above, for example `1: sensitive`.\n"
                .into(),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<()> {
        for (name, seg) in [
            ("pre", &self.pre),
            ("source_intro", &self.source_intro),
            ("gene_intro", &self.gene_intro),
            ("post", &self.post),
        ] {
            if seg.is_empty() {
                return Err(Error::Config(format!("prompt template segment '{name}' is empty")));
            }
        }
        if !self.post.contains(ANSWER_SCHEMA_MARKER) {
            return Err(Error::Config(format!(
                "prompt template 'post' segment must contain the answer schema {ANSWER_SCHEMA_MARKER}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptItem {
    pub cell_id: String,
    pub genes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBatch {
    source: String,
    items: Vec<PromptItem>,
}

fn check_symbol(symbol: &str) -> Result<()> {
    if symbol.is_empty() || symbol.chars().any(|c| c == ',' || c.is_whitespace() || c.is_control()) {
        return Err(Error::Parameter(format!(
            "gene symbol {symbol:?} cannot be listed in a prompt"
        )));
    }
    Ok(())
}

impl PromptBatch {
    /// At most ten items, each with at most ten symbols free of commas and
    /// whitespace; the source is a single line.
    pub fn new(source: impl Into<String>, items: Vec<PromptItem>) -> Result<Self> {
        let source = source.into();
        if source.contains(['\n', '\r']) {
            return Err(Error::Parameter("prompt source must be a single line".into()));
        }
        if items.len() > MAX_BATCH_ITEMS {
            return Err(Error::Parameter(format!(
                "prompt batch holds {} items, limit is {MAX_BATCH_ITEMS}",
                items.len()
            )));
        }
        for item in &items {
            if item.genes.len() > GENES_PER_ITEM {
                return Err(Error::Parameter(format!(
                    "cell {} lists {} genes, limit is {GENES_PER_ITEM}",
                    item.cell_id,
                    item.genes.len()
                )));
            }
            item.genes.iter().try_for_each(|g| check_symbol(g))?;
        }
        Ok(Self { source, items })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn items(&self) -> &[PromptItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

pub fn build_prompt(template: &PromptTemplate, batch: &PromptBatch) -> Result<String> {
    if batch.is_empty() {
        return Err(Error::Parameter("cannot build a prompt for an empty batch".into()));
    }
    let mut out = String::new();
    out.push_str(&template.pre);
    out.push_str(&template.source_intro);
    out.push_str(&batch.source);
    out.push_str(&template.gene_intro);
    for (i, item) in batch.items.iter().enumerate() {
        out.push_str(&format!("{}: {}\n", i + 1, item.genes.join(", ")));
    }
    out.push_str(&template.post);
    Ok(out)
}

/// Consecutive chunks of `size` cells in input order, each item carrying the
/// cell's top expressed gene symbols.
pub fn batch_cells(
    cells: &[&CellProfile],
    vocabulary: &GeneVocabulary,
    source: &str,
    size: usize,
) -> Result<Vec<PromptBatch>> {
    if size == 0 || size > MAX_BATCH_ITEMS {
        return Err(Error::Parameter(format!(
            "batch size must be in 1..={MAX_BATCH_ITEMS}, got {size}"
        )));
    }
    cells
        .chunks(size)
        .map(|chunk| {
            let items = chunk
                .iter()
                .map(|c| {
                    Ok(PromptItem {
                        cell_id: c.cell_id.clone(),
                        genes: top_k_gene_names(c, vocabulary, GENES_PER_ITEM)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            PromptBatch::new(source, items)
        })
        .collect()
}

/// Source line for a dataset: tissue, cancer type, therapy and regimen.
pub fn describe_source(dataset: &Dataset) -> String {
    let m = &dataset.manifest;
    format!(
        "{} from {} patients, {} ({})",
        m.tissue, m.cancer_type, m.therapy_type, m.regimen
    )
    .replace(['\n', '\r'], " ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedResponse {
    pub labels: Vec<Label>,
    pub raw: String,
}

static ANSWER_LINE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*(?:[-*]\s*)?(\d+)\s*:\s*([A-Za-z]+)([^\n]*)$").expect("valid regex")
});
static TRAILER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[\s.,;!*`]*$").expect("valid regex"));

pub fn parse_response(reply: &str, expected_n: usize) -> Result<ParsedResponse> {
    let fail = |reason: String| Error::Parse {
        reason,
        raw: reply.to_string(),
    };
    if expected_n == 0 {
        return Err(Error::Parameter("expected_n must be at least 1".into()));
    }
    let mut found: BTreeMap<usize, Label> = BTreeMap::new();
    for line in reply.lines() {
        let Some(caps) = ANSWER_LINE.captures(line) else {
            continue;
        };
        let index: usize = caps[1]
            .parse()
            .map_err(|_| fail(format!("index {} out of range", &caps[1])))?;
        let label = match caps[2].to_ascii_lowercase().as_str() {
            "sensitive" => Label::Sensitive,
            "resistant" => Label::Resistant,
            other => return Err(fail(format!("unrecognized label '{other}' for index {index}"))),
        };
        if !TRAILER.is_match(&caps[3]) {
            return Err(fail(format!("unexpected text after label on line {line:?}")));
        }
        if index == 0 || index > expected_n {
            return Err(fail(format!("index {index} outside 1..={expected_n}")));
        }
        if found.insert(index, label).is_some() {
            return Err(fail(format!("index {index} answered more than once")));
        }
    }
    if found.len() != expected_n {
        let missing: Vec<String> = (1..=expected_n)
            .filter(|i| !found.contains_key(i))
            .map(|i| i.to_string())
            .collect();
        return Err(fail(format!("no answer for index {}", missing.join(", "))));
    }
    Ok(ParsedResponse {
        labels: found.into_values().collect(),
        raw: reply.to_string(),
    })
}

/// Renders labels in the reply grammar.
pub fn format_answers(labels: &[Label]) -> String {
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let word = match l {
                Label::Sensitive => "sensitive",
                Label::Resistant => "resistant",
            };
            format!("{}: {word}\n", i + 1)
        })
        .collect()
}

/// The only side-effecting call in this module. Implementations enforce
/// their own per-request timeout.
pub trait LlmClient: Sync {
    fn send(&self, prompt: &str) -> Result<String>;
}

pub const ENV_ENDPOINT: &str = "CELLBENCH_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "CELLBENCH_LLM_API_KEY";
pub const ENV_MODEL: &str = "CELLBENCH_LLM_MODEL";
pub const ENV_TIMEOUT: &str = "CELLBENCH_LLM_TIMEOUT_SECS";
pub const ENV_MAX_IN_FLIGHT: &str = "CELLBENCH_LLM_MAX_IN_FLIGHT";

/// Connection settings for a hosted model. The credential is never
/// serialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub endpoint: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub model: String,
    pub timeout_secs: f64,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub audit_log: Option<PathBuf>,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            api_key: None,
            model: "gpt-4o-mini".into(),
            timeout_secs: 60.0,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            audit_log: None,
        }
    }
}

impl LlmConfig {
    /// Applies `CELLBENCH_LLM_*` variables from the process environment on
    /// top of `self`.
    pub fn with_env(self) -> Result<Self> {
        self.with_vars(|k| std::env::var(k).ok())
    }

    pub fn with_vars(mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<Self> {
        if let Some(v) = lookup(ENV_ENDPOINT) {
            self.endpoint = v;
        }
        if let Some(v) = lookup(ENV_API_KEY) {
            self.api_key = Some(v);
        }
        if let Some(v) = lookup(ENV_MODEL) {
            self.model = v;
        }
        if let Some(v) = lookup(ENV_TIMEOUT) {
            self.timeout_secs = v
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_TIMEOUT}={v} is not a number")))?;
        }
        if let Some(v) = lookup(ENV_MAX_IN_FLIGHT) {
            self.max_in_flight = v
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_MAX_IN_FLIGHT}={v} is not an integer")))?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.endpoint.is_empty() {
            return Err(Error::Config("LLM endpoint is empty".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config(format!("LLM timeout must be positive, got {}", self.timeout_secs)));
        }
        if self.max_in_flight == 0 {
            return Err(Error::Config("max_in_flight must be at least 1".into()));
        }
        self.retry.validate()
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

/// Attempt `k` (0-based) that fails waits `base_delay_ms * 2^k` before the
/// next one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 1000,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.max_attempts == 0 {
            return Err(Error::Config("retry policy needs at least one attempt".into()));
        }
        Ok(())
    }

    pub fn delay(&self, attempt: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms.saturating_mul(1u64 << attempt.min(20)))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewshotOptions {
    pub batch_size: usize,
    pub max_in_flight: usize,
    pub retry: RetryPolicy,
    pub audit_log: Option<PathBuf>,
}

impl Default for FewshotOptions {
    fn default() -> Self {
        Self {
            batch_size: MAX_BATCH_ITEMS,
            max_in_flight: 4,
            retry: RetryPolicy::default(),
            audit_log: None,
        }
    }
}

impl FewshotOptions {
    pub fn from_config(config: &LlmConfig) -> Self {
        Self {
            batch_size: MAX_BATCH_ITEMS,
            max_in_flight: config.max_in_flight,
            retry: config.retry,
            audit_log: config.audit_log.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    Send,
    Parse,
}

/// A batch skipped after exhausting its attempts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchFailure {
    pub batch: usize,
    pub cell_ids: Vec<String>,
    pub attempts: u32,
    pub kind: FailureKind,
    pub message: String,
    /// Last raw reply, for parse failures.
    pub raw: Option<String>,
}

/// Per-cell answers aligned with the input cells; `None` for cells whose
/// batch failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FewshotAnswers {
    pub labels: Vec<Option<Label>>,
    pub failures: Vec<BatchFailure>,
    pub n_batches: usize,
}

impl FewshotAnswers {
    pub fn failure_rate(&self) -> f64 {
        if self.n_batches == 0 {
            0.0
        } else {
            self.failures.len() as f64 / self.n_batches as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct FewshotReport {
    pub metrics: MetricSet,
    pub answers: FewshotAnswers,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    batch: usize,
    attempt: u32,
    prompt: &'a str,
    reply: Option<&'a str>,
    error: Option<String>,
}

struct AuditLog(Mutex<File>);

impl AuditLog {
    fn open(path: &PathBuf) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self(Mutex::new(file)))
    }

    fn record(&self, entry: &AuditEntry<'_>) {
        let line = serde_json::to_string(entry).expect("audit entry serializes");
        let mut f = self.0.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = writeln!(f, "{line}") {
            log::warn!("audit log write failed: {e}");
        }
    }
}

fn run_batch(
    index: usize,
    batch: &PromptBatch,
    template: &PromptTemplate,
    client: &dyn LlmClient,
    retry: RetryPolicy,
    audit: Option<&AuditLog>,
) -> std::result::Result<Vec<Label>, BatchFailure> {
    let prompt = build_prompt(template, batch).expect("batches are non-empty");
    let mut last: Option<(FailureKind, String, Option<String>)> = None;
    for attempt in 0..retry.max_attempts {
        if attempt > 0 {
            std::thread::sleep(retry.delay(attempt - 1));
        }
        match client.send(&prompt) {
            Ok(reply) => {
                if let Some(a) = audit {
                    a.record(&AuditEntry {
                        batch: index,
                        attempt,
                        prompt: &prompt,
                        reply: Some(&reply),
                        error: None,
                    });
                }
                match parse_response(&reply, batch.len()) {
                    Ok(parsed) => return Ok(parsed.labels),
                    Err(e) => {
                        log::warn!("batch {index} attempt {}: {e}", attempt + 1);
                        last = Some((FailureKind::Parse, e.to_string(), Some(reply)));
                    }
                }
            }
            Err(e) => {
                if let Some(a) = audit {
                    a.record(&AuditEntry {
                        batch: index,
                        attempt,
                        prompt: &prompt,
                        reply: None,
                        error: Some(e.to_string()),
                    });
                }
                log::warn!("batch {index} attempt {}: {e}", attempt + 1);
                last = Some((FailureKind::Send, e.to_string(), None));
            }
        }
    }
    let (kind, message, raw) = last.expect("at least one attempt");
    log::error!("batch {index} skipped after {} attempts", retry.max_attempts);
    Err(BatchFailure {
        batch: index,
        cell_ids: batch.items.iter().map(|i| i.cell_id.clone()).collect(),
        attempts: retry.max_attempts,
        kind,
        message,
        raw,
    })
}

/// Sends every batch with bounded retries and at most `max_in_flight`
/// requests outstanding.
pub fn query_batches(
    batches: &[PromptBatch],
    template: &PromptTemplate,
    client: &dyn LlmClient,
    options: &FewshotOptions,
) -> Result<Vec<std::result::Result<Vec<Label>, BatchFailure>>> {
    template.validate()?;
    options.retry.validate()?;
    if options.max_in_flight == 0 {
        return Err(Error::Config("max_in_flight must be at least 1".into()));
    }
    if let Some(i) = batches.iter().position(PromptBatch::is_empty) {
        return Err(Error::Parameter(format!("batch {i} is empty")));
    }
    let audit = options.audit_log.as_ref().map(AuditLog::open).transpose()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.max_in_flight)
        .build()
        .map_err(|e| Error::Config(format!("cannot start request pool: {e}")))?;
    Ok(pool.install(|| {
        batches
            .par_iter()
            .enumerate()
            .map(|(i, b)| run_batch(i, b, template, client, options.retry, audit.as_ref()))
            .collect()
    }))
}

/// Answers for `cells`, failures logged and left unanswered.
pub fn answer_cells(
    cells: &[&CellProfile],
    vocabulary: &GeneVocabulary,
    source: &str,
    client: &dyn LlmClient,
    template: &PromptTemplate,
    options: &FewshotOptions,
) -> Result<FewshotAnswers> {
    let batches = batch_cells(cells, vocabulary, source, options.batch_size)?;
    let results = query_batches(&batches, template, client, options)?;
    let mut labels = Vec::with_capacity(cells.len());
    let mut failures = Vec::new();
    for (batch, result) in batches.iter().zip(results) {
        match result {
            Ok(ls) => labels.extend(ls.into_iter().map(Some)),
            Err(f) => {
                labels.extend(std::iter::repeat_n(None, batch.len()));
                failures.push(f);
            }
        }
    }
    Ok(FewshotAnswers {
        labels,
        failures,
        n_batches: batches.len(),
    })
}

/// Few-shot evaluation of a labeled dataset. Cells in failed batches are
/// left out of the metrics and listed in the failure log.
pub fn evaluate_fewshot(
    dataset: &Dataset,
    client: &dyn LlmClient,
    template: &PromptTemplate,
    options: &FewshotOptions,
) -> Result<FewshotReport> {
    let truth = dataset.labels()?;
    let cells: Vec<&CellProfile> = dataset.cells.iter().collect();
    let answers = answer_cells(
        &cells,
        &dataset.vocabulary,
        &describe_source(dataset),
        client,
        template,
        options,
    )?;
    let metrics = score_answers(&answers, &truth)?;
    Ok(FewshotReport { metrics, answers })
}

/// Metrics over answered cells only.
pub fn score_answers(answers: &FewshotAnswers, truth: &[Label]) -> Result<MetricSet> {
    if answers.labels.len() != truth.len() {
        return Err(Error::Shape(format!(
            "{} answers for {} cells",
            answers.labels.len(),
            truth.len()
        )));
    }
    let (probs, labels): (Vec<f64>, Vec<Label>) = answers
        .labels
        .iter()
        .zip(truth)
        .filter_map(|(a, &t)| a.map(|l| (l.as_f64(), t)))
        .unzip();
    if probs.is_empty() {
        return Err(Error::Evaluation(format!(
            "all {} prompt batches failed",
            answers.n_batches
        )));
    }
    compute_metrics(&probs, &labels, DEFAULT_THRESHOLD)
}
