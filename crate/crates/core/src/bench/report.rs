//! Summary tables and plot-ready series from a run directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::profile::{ProfileRow, PROFILE_COLUMNS};
use super::run::{PROFILE_ROWS_FILE, RECORDS_FILE};
use crate::dataset::CategoryAxis;
use crate::error::{Error, Result};
use crate::eval::{aggregate, Metric, ResultRecord, ScenarioKind, Strategy, SummaryRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Structured,
    Plotdata,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Csv, ReportFormat::Structured, ReportFormat::Plotdata];

    pub fn name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "csv",
            ReportFormat::Structured => "structured",
            ReportFormat::Plotdata => "plotdata",
        }
    }
}

impl fmt::Display for ReportFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown report format {s:?} (csv, structured, plotdata)")))
    }
}

fn csv_string(rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).map_err(|e| Error::Format(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv of utf-8 fields"))
}

/// Column names of [`summary_csv`].
pub fn summary_header() -> Vec<String> {
    let mut h: Vec<String> = ["model_id", "strategy", "scenario", "axis", "category", "n_splits"]
        .map(String::from)
        .to_vec();
    for m in Metric::ALL {
        h.push(format!("{}_mean", m.name()));
        h.push(format!("{}_std", m.name()));
    }
    h
}

/// Mean and population std of every metric per row. Floats use the
/// shortest representation that reads back to the same value; an
/// undefined metric leaves both cells empty.
pub fn summary_csv(rows: &[SummaryRow]) -> Result<String> {
    let body = rows.iter().map(|r| {
        let mut f = vec![
            r.model_id.clone(),
            r.strategy.to_string(),
            r.scenario.name().to_string(),
            r.axis.to_string(),
            r.category.clone(),
            r.n_splits.to_string(),
        ];
        for m in Metric::ALL {
            match r.metrics.get(&m) {
                Some(ms) => f.extend([ms.mean.to_string(), ms.std.to_string()]),
                None => f.extend([String::new(), String::new()]),
            }
        }
        f
    });
    csv_string(std::iter::once(summary_header()).chain(body))
}

pub fn summary_json(rows: &[SummaryRow]) -> String {
    serde_json::to_string_pretty(rows).expect("summary serializes") + "\n"
}

pub fn records_csv(records: &[ResultRecord]) -> Result<String> {
    let header: Vec<String> = [
        "model_id", "strategy", "scenario", "axis", "category", "split", "seed", "n_train", "n_test", "n_failed",
        "accuracy", "precision", "recall", "f1", "auroc", "tp", "fp", "tn", "fn", "seconds",
    ]
    .map(String::from)
    .to_vec();
    let body = records.iter().map(|r| {
        let m = &r.metrics;
        vec![
            r.model_id.clone(),
            r.strategy.to_string(),
            r.scenario.name().to_string(),
            r.axis.to_string(),
            r.category.clone(),
            r.split.clone(),
            r.seed.to_string(),
            r.n_train.to_string(),
            r.n_test.to_string(),
            r.n_failed.to_string(),
            m.accuracy.to_string(),
            m.precision.to_string(),
            m.recall.to_string(),
            m.f1.to_string(),
            m.auroc.map(|a| a.to_string()).unwrap_or_default(),
            m.tp.to_string(),
            m.fp.to_string(),
            m.tn.to_string(),
            m.fn_.to_string(),
            r.seconds.to_string(),
        ]
    });
    csv_string(std::iter::once(header).chain(body))
}

pub fn records_jsonl(records: &[ResultRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
        .collect()
}

pub fn profile_csv(rows: &[ProfileRow]) -> Result<String> {
    let header = PROFILE_COLUMNS.map(String::from).to_vec();
    csv_string(std::iter::once(header).chain(rows.iter().map(ProfileRow::csv_fields)))
}

pub fn read_records(run_dir: &Path) -> Result<Vec<ResultRecord>> {
    let path = run_dir.join(RECORDS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Format(format!("{} line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarPoint {
    pub model_id: String,
    pub strategy: Strategy,
    pub scenario: ScenarioKind,
    pub axis: CategoryAxis,
    pub category: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadarSeries {
    pub model_id: String,
    pub strategy: Strategy,
    /// One value per radar axis; `null` where the combination has no row.
    pub values: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Radar {
    pub scenario: ScenarioKind,
    pub axis: CategoryAxis,
    pub metric: Metric,
    /// Sorted category names.
    pub categories: Vec<String>,
    pub series: Vec<RadarSeries>,
}

/// Series for bar charts with error bars and radar charts over categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub bars: Vec<BarPoint>,
    pub radars: Vec<Radar>,
}

pub fn plotdata(rows: &[SummaryRow]) -> PlotData {
    let bars = rows
        .iter()
        .flat_map(|r| {
            Metric::ALL.into_iter().filter_map(move |m| {
                r.metrics.get(&m).map(|ms| BarPoint {
                    model_id: r.model_id.clone(),
                    strategy: r.strategy,
                    scenario: r.scenario,
                    axis: r.axis,
                    category: r.category.clone(),
                    metric: m,
                    mean: ms.mean,
                    std: ms.std,
                })
            })
        })
        .collect();

    let mut panels: BTreeMap<(ScenarioKind, CategoryAxis), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        panels.entry((r.scenario, r.axis)).or_default().push(r);
    }
    let mut radars = Vec::new();
    for ((scenario, axis), members) in panels {
        let categories: Vec<String> = members
            .iter()
            .map(|r| r.category.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let models: BTreeSet<(&str, Strategy)> = members.iter().map(|r| (r.model_id.as_str(), r.strategy)).collect();
        for metric in Metric::ALL {
            let series = models
                .iter()
                .map(|&(model, strategy)| RadarSeries {
                    model_id: model.to_string(),
                    strategy,
                    values: categories
                        .iter()
                        .map(|c| {
                            members
                                .iter()
                                .find(|r| r.model_id == model && r.strategy == strategy && &r.category == c)
                                .and_then(|r| r.metrics.get(&metric))
                                .map(|ms| ms.mean)
                        })
                        .collect(),
                })
                .collect();
            radars.push(Radar {
                scenario,
                axis,
                metric,
                categories: categories.clone(),
                series,
            });
        }
    }
    PlotData { bars, radars }
}

/// Writes the report files for `run_dir` into `out` (default
/// `<run_dir>/report`) and returns their paths. Only the output directory
/// is written.
pub fn report(run_dir: &Path, format: ReportFormat, out: Option<&Path>) -> Result<Vec<PathBuf>> {
    let records = read_records(run_dir)?;
    if records.is_empty() {
        return Err(Error::Evaluation(format!("{} holds no result records", run_dir.display())));
    }
    let rows = aggregate(&records)?;
    let out = out.map(Path::to_path_buf).unwrap_or_else(|| run_dir.join("report"));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    match format {
        ReportFormat::Csv => {
            put("summary.csv", summary_csv(&rows)?)?;
            let profiles = run_dir.join(PROFILE_ROWS_FILE);
            if profiles.is_file() {
                let text = fs::read_to_string(&profiles).map_err(|e| Error::io(&profiles, e))?;
                let rows: Vec<ProfileRow> = serde_json::from_str(&text)
                    .map_err(|e| Error::Format(format!("{}: {e}", profiles.display())))?;
                put("profiles.csv", profile_csv(&rows)?)?;
            }
        }
        ReportFormat::Structured => put("summary.json", summary_json(&rows))?,
        ReportFormat::Plotdata => put(
            "plotdata.json",
            serde_json::to_string_pretty(&plotdata(&rows)).expect("plot data serializes") + "\n",
        )?,
    }
    Ok(written)
}
