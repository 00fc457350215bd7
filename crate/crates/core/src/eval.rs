//! Cross-validated evaluation: fold plans, metrics, pooled and cross-study
//! scenarios, and aggregation into summary tables.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CategoryAxis, CategoryGroup, CellProfile, GeneVocabulary, Label};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Frozen,
    #[serde(alias = "finetune")]
    Finetuned,
    Fewshot,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Frozen => "frozen",
            Strategy::Finetuned => "finetuned",
            Strategy::Fewshot => "fewshot",
        }
    }

    /// Accepts the canonical names plus `finetune`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "frozen" => Some(Strategy::Frozen),
            "finetuned" | "finetune" => Some(Strategy::Finetuned),
            "fewshot" => Some(Strategy::Fewshot),
            _ => None,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Assignment of `n` items to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub n: usize,
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub fold_assignment: Vec<usize>,
}

impl SplitPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_assignment[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.fold_assignment[i] != fold).collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.fold_assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

fn check_kfold(n: usize, k: usize) -> Result<()> {
    if k < 2 {
        return Err(Error::Parameter(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::Parameter(format!("cannot split {n} items into {k} folds")));
    }
    Ok(())
}

fn assign_round_robin(order: &[usize], k: usize) -> Vec<usize> {
    let mut assignment = vec![0; order.len()];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % k;
    }
    assignment
}

/// Plain random folds: a seeded shuffle dealt round-robin, so fold sizes
/// differ by at most one.
pub fn make_kfold(n: usize, k: usize, seed: u64) -> Result<SplitPlan> {
    check_kfold(n, k)?;
    let order = rng::permutation(&mut rng::seeded(seed), n);
    Ok(SplitPlan {
        n,
        k,
        seed,
        stratified: false,
        fold_assignment: assign_round_robin(&order, k),
    })
}

/// Class-stratified folds: each class shuffled separately, then the
/// concatenated order dealt round-robin.
pub fn make_stratified_kfold(labels: &[Label], k: usize, seed: u64) -> Result<SplitPlan> {
    let n = labels.len();
    check_kfold(n, k)?;
    let mut rng = rng::seeded(seed);
    let mut order = Vec::with_capacity(n);
    for class in [Label::Resistant, Label::Sensitive] {
        let members: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
        order.extend(rng::permutation(&mut rng, members.len()).into_iter().map(|j| members[j]));
    }
    Ok(SplitPlan {
        n,
        k,
        seed,
        stratified: true,
        fold_assignment: assign_round_robin(&order, k),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the labels hold a single class.
    pub auroc: Option<f64>,
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl MetricSet {
    /// Threshold metrics from confusion counts; zero denominators give 0.
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64, auroc: Option<f64>) -> Self {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            accuracy: ratio(tp + tn, tp + fp + tn + fn_),
            precision,
            recall,
            f1,
            auroc,
            tp,
            fp,
            tn,
            fn_,
        }
    }

    pub fn n(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Value of a summary column by name.
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Accuracy => Some(self.accuracy),
            Metric::Precision => Some(self.precision),
            Metric::Recall => Some(self.recall),
            Metric::F1 => Some(self.f1),
            Metric::Auroc => self.auroc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    Precision,
    Recall,
    F1,
    Auroc,
}

impl Metric {
    pub const ALL: [Metric; 5] = [Metric::Accuracy, Metric::Precision, Metric::Recall, Metric::F1, Metric::Auroc];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
            Metric::Auroc => "auroc",
        }
    }
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed by a sorted sweep over tied score groups.
pub fn auroc(scores: &[f64], labels: &[Label]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("NaN score".into()));
    }
    let n_pos = labels.iter().filter(|l| l.is_positive()).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AUROC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the statistic's numerator: 2 per won pair, 1 per tie
    let mut doubled: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]].is_positive() {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        doubled += 2 * pos * neg_below + pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(doubled as f64 / (2 * n_pos * n_neg) as f64)
}

/// Confusion counts at `probs >= threshold`, the derived rates, and AUROC
/// when both classes are present.
pub fn compute_metrics(probs: &[f64], labels: &[Label], threshold: f64) -> Result<MetricSet> {
    if probs.is_empty() {
        return Err(Error::Parameter("no predictions to score".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!("{} predictions but {} labels", probs.len(), labels.len())));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&p, l) in probs.iter().zip(labels) {
        match (p >= threshold, l.is_positive()) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let auc = match auroc(probs, labels) {
        Ok(v) => Some(v),
        Err(Error::UndefinedMetric(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(MetricSet::from_counts(tp, fp, tn, fn_, auc))
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Cells of a category group merged onto one gene vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PooledData {
    pub vocabulary: GeneVocabulary,
    pub cells: Vec<CellProfile>,
    pub labels: Vec<Label>,
    /// Study id of each cell.
    pub studies: Vec<String>,
}

impl PooledData {
    /// Concatenates the group's datasets in order. Gene indices are mapped
    /// onto the union vocabulary, symbols ordered by first appearance.
    pub fn from_group(group: &CategoryGroup<'_>) -> Result<Self> {
        let mut symbols: Vec<String> = Vec::new();
        let mut index: HashMap<String, u32> = HashMap::new();
        let mut cells = Vec::with_capacity(group.n_cells());
        let mut studies = Vec::with_capacity(group.n_cells());
        for ds in &group.datasets {
            let map: Vec<u32> = ds
                .vocabulary
                .symbols()
                .iter()
                .map(|s| {
                    *index.entry(s.clone()).or_insert_with(|| {
                        symbols.push(s.clone());
                        (symbols.len() - 1) as u32
                    })
                })
                .collect();
            for c in &ds.cells {
                let expr = c.expression().iter().map(|&(g, v)| (map[g as usize], v)).collect();
                let mut expr: Vec<(u32, f64)> = expr;
                expr.sort_unstable_by_key(|&(g, _)| g);
                cells.push(CellProfile::new(c.cell_id.clone(), c.sample_id.clone(), expr, c.label)?);
                studies.push(ds.manifest.study_id.clone());
            }
        }
        let labels = cells
            .iter()
            .zip(&studies)
            .map(|(c, s)| {
                c.label
                    .ok_or_else(|| Error::Data(format!("cell {} in {s} has no response label", c.cell_id)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            vocabulary: GeneVocabulary::new(symbols)?,
            cells,
            labels,
            studies,
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }
}

/// One model under one strategy, trainable on any subset of pooled cells.
pub trait Pipeline: Sync {
    fn model_id(&self) -> &str;
    fn strategy(&self) -> Strategy;
    /// Sensitivity probabilities for `test` after training on `train`
    /// (indices into `data`). `None` marks a cell the model gave no answer
    /// for; such cells are left out of the metrics and counted.
    fn fit_predict(&self, data: &PooledData, train: &[usize], test: &[usize]) -> Result<Vec<Option<f64>>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Pooled,
    Cross,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Pooled => "pooled",
            ScenarioKind::Cross => "cross",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub model_id: String,
    pub strategy: Strategy,
    pub scenario: ScenarioKind,
    pub axis: CategoryAxis,
    pub category: String,
    /// `fold-NN` for pooled runs, the held-out study id for cross runs.
    pub split: String,
    /// Seed of the split plan and of model training.
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// Test cells without a prediction.
    pub n_failed: usize,
    pub metrics: MetricSet,
    pub seconds: f64,
}

fn score_split(
    data: &PooledData,
    pipeline: &dyn Pipeline,
    train: &[usize],
    test: &[usize],
) -> Result<(MetricSet, usize, f64)> {
    let start = Instant::now();
    let preds = pipeline.fit_predict(data, train, test)?;
    let seconds = start.elapsed().as_secs_f64();
    if preds.len() != test.len() {
        return Err(Error::Evaluation(format!(
            "{} returned {} predictions for {} cells",
            pipeline.model_id(),
            preds.len(),
            test.len()
        )));
    }
    let (probs, labels): (Vec<f64>, Vec<Label>) = preds
        .iter()
        .zip(test)
        .filter_map(|(p, &i)| p.map(|p| (p, data.labels[i])))
        .unzip();
    let failed = test.len() - probs.len();
    if probs.is_empty() {
        return Err(Error::Evaluation(format!(
            "{} produced no usable predictions for {} test cells",
            pipeline.model_id(),
            test.len()
        )));
    }
    Ok((compute_metrics(&probs, &labels, DEFAULT_THRESHOLD)?, failed, seconds))
}

/// Options shared by the evaluation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 10,
            seed: 0,
            stratified: false,
        }
    }
}

/// The fold plan a pooled evaluation of `data` uses; it depends only on the
/// data and the options, never on the model.
pub fn plan_for(data: &PooledData, options: &EvalOptions) -> Result<SplitPlan> {
    if options.stratified {
        make_stratified_kfold(&data.labels, options.k, options.seed)
    } else {
        make_kfold(data.len(), options.k, options.seed)
    }
}

/// k-fold cross-validation over the pooled cells of one category. Folds
/// run in parallel; records come back in fold order.
pub fn pooled_evaluate(
    data: &PooledData,
    axis: CategoryAxis,
    category: &str,
    pipeline: &dyn Pipeline,
    options: &EvalOptions,
) -> Result<(SplitPlan, Vec<ResultRecord>)> {
    let plan = plan_for(data, options)?;
    let records = (0..plan.k)
        .into_par_iter()
        .map(|fold| {
            let train = plan.train_indices(fold);
            let test = plan.test_indices(fold);
            let (metrics, n_failed, seconds) = score_split(data, pipeline, &train, &test)?;
            Ok(ResultRecord {
                model_id: pipeline.model_id().to_string(),
                strategy: pipeline.strategy(),
                scenario: ScenarioKind::Pooled,
                axis,
                category: category.to_string(),
                split: format!("fold-{fold:02}"),
                seed: options.seed,
                n_train: train.len(),
                n_test: test.len(),
                n_failed,
                metrics,
                seconds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((plan, records))
}

/// Leave-one-study-out: each study in turn is the test set and the rest of
/// the group trains. Records come back sorted by held-out study.
pub fn cross_evaluate(
    data: &PooledData,
    axis: CategoryAxis,
    category: &str,
    pipeline: &dyn Pipeline,
    seed: u64,
) -> Result<Vec<ResultRecord>> {
    let mut studies: Vec<&str> = data.studies.iter().map(String::as_str).collect();
    studies.sort_unstable();
    studies.dedup();
    if studies.len() < 2 {
        return Err(Error::Parameter(format!(
            "cross-study evaluation of {category} needs at least 2 studies, found {}",
            studies.len()
        )));
    }
    studies
        .par_iter()
        .map(|&held_out| {
            let (test, train): (Vec<usize>, Vec<usize>) =
                (0..data.len()).partition(|&i| data.studies[i] == held_out);
            let (metrics, n_failed, seconds) = score_split(data, pipeline, &train, &test)?;
            Ok(ResultRecord {
                model_id: pipeline.model_id().to_string(),
                strategy: pipeline.strategy(),
                scenario: ScenarioKind::Cross,
                axis,
                category: category.to_string(),
                split: held_out.to_string(),
                seed,
                n_train: train.len(),
                n_test: test.len(),
                n_failed,
                metrics,
                seconds,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model_id: String,
    pub strategy: Strategy,
    pub scenario: ScenarioKind,
    pub axis: CategoryAxis,
    pub category: String,
    pub n_splits: usize,
    /// Keyed by metric name; AUROC is absent when undefined in every split.
    pub metrics: BTreeMap<Metric, MeanStd>,
}

/// Mean and population std of every metric per (model, strategy, scenario,
/// category), ordered by model, then category, then strategy.
pub fn aggregate(records: &[ResultRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::Parameter("no records to aggregate".into()));
    }
    type Key<'a> = (&'a str, &'a str, Strategy, ScenarioKind, CategoryAxis);
    let mut groups: BTreeMap<Key<'_>, Vec<&ResultRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((&r.model_id, &r.category, r.strategy, r.scenario, r.axis))
            .or_default()
            .push(r);
    }
    Ok(groups
        .into_iter()
        .map(|((model, category, strategy, scenario, axis), rs)| {
            let metrics = Metric::ALL
                .iter()
                .filter_map(|&m| {
                    let vals: Vec<f64> = rs.iter().filter_map(|r| r.metrics.get(m)).collect();
                    MeanStd::of(&vals).map(|s| (m, s))
                })
                .collect();
            SummaryRow {
                model_id: model.to_string(),
                strategy,
                scenario,
                axis,
                category: category.to_string(),
                n_splits: rs.len(),
                metrics,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_assume, proptest};

    use super::*;

    fn labels(bits: &[u8]) -> Vec<Label> {
        bits.iter().map(|&b| Label::from_bit(b).unwrap()).collect()
    }

    #[test]
    fn fold_examples() {
        let p = make_kfold(10, 10, 3).unwrap();
        assert!(p.fold_sizes().iter().all(|&s| s == 1));
        let p = make_kfold(103, 10, 3).unwrap();
        let sizes = p.fold_sizes();
        assert_eq!(sizes.iter().filter(|&&s| s == 10).count(), 7);
        assert_eq!(sizes.iter().filter(|&&s| s == 11).count(), 3);
        assert_eq!(make_kfold(103, 10, 3).unwrap(), p);
        assert_ne!(make_kfold(103, 10, 4).unwrap(), p);
        assert!(matches!(make_kfold(5, 10, 0), Err(Error::Parameter(_))));
        assert!(make_kfold(5, 1, 0).is_err());
    }

    #[test]
    fn stratified_folds_spread_classes() {
        let l: Vec<Label> = (0..100).map(|i| Label::from_bit((i < 30) as u8).unwrap()).collect();
        let p = make_stratified_kfold(&l, 10, 1).unwrap();
        for f in 0..10 {
            let pos = p.test_indices(f).iter().filter(|&&i| l[i].is_positive()).count();
            assert_eq!(pos, 3);
        }
    }

    #[test]
    fn confusion_fixture() {
        let m = MetricSet::from_counts(3, 1, 4, 2, None);
        assert_eq!(m.precision, 0.75);
        assert_eq!(m.recall, 0.6);
        assert!((m.f1 - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-15);
        assert_eq!(m.accuracy, 0.7);
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.4, 0.35, 0.8], &labels(&[0, 0, 1, 1])).unwrap(), 0.75);
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &labels(&[0, 0, 1, 1])).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 4], &labels(&[0, 1, 0, 1])).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &labels(&[1, 1])), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn degenerate_metrics() {
        let m = compute_metrics(&[0.1, 0.2, 0.3], &labels(&[1, 0, 1]), 0.5).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let perfect = compute_metrics(&[0.9, 0.1], &labels(&[1, 0]), 0.5).unwrap();
        assert_eq!((perfect.accuracy, perfect.f1, perfect.auroc), (1.0, 1.0, Some(1.0)));
        let single = compute_metrics(&[0.9, 0.7], &labels(&[1, 1]), 0.5).unwrap();
        assert_eq!(single.auroc, None);
        assert!(compute_metrics(&[], &[], 0.5).is_err());
    }

    fn record(model: &str, category: &str, f1: f64) -> ResultRecord {
        ResultRecord {
            model_id: model.into(),
            strategy: Strategy::Frozen,
            scenario: ScenarioKind::Pooled,
            axis: CategoryAxis::Tissue,
            category: category.into(),
            split: "fold-00".into(),
            seed: 0,
            n_train: 1,
            n_test: 1,
            n_failed: 0,
            metrics: MetricSet { f1, ..MetricSet::from_counts(1, 0, 1, 0, None) },
            seconds: 0.0,
        }
    }

    #[test]
    fn aggregate_examples() {
        let one = aggregate(&[record("m", "a", 0.8)]).unwrap();
        assert_eq!(one[0].metrics[&Metric::F1], MeanStd { mean: 0.8, std: 0.0, n: 1 });
        assert!(!one[0].metrics.contains_key(&Metric::Auroc));
        let two = aggregate(&[record("m", "a", 0.9), record("m", "a", 1.0)]).unwrap();
        let f1 = two[0].metrics[&Metric::F1];
        assert!((f1.mean - 0.95).abs() < 1e-15 && (f1.std - 0.05).abs() < 1e-15);
        let order = aggregate(&[record("z", "a", 0.5), record("b", "y", 0.5), record("b", "c", 0.5)]).unwrap();
        let keys: Vec<_> = order.iter().map(|r| (r.model_id.as_str(), r.category.as_str())).collect();
        assert_eq!(keys, [("b", "c"), ("b", "y"), ("z", "a")]);
        assert!(aggregate(&[]).is_err());
    }

    proptest! {
        #[test]
        fn folds_partition(n in 2usize..300, k in 2usize..20, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let p = make_kfold(n, k, seed).unwrap();
            let sizes = p.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            let mut all: Vec<usize> = (0..k).flat_map(|f| p.test_indices(f)).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }

        #[test]
        fn auroc_invariant_under_monotone_transform(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..60),
            seed in any::<u64>(),
        ) {
            let mut r = rng::seeded(seed);
            let mut l: Vec<Label> = (0..scores.len()).map(|_| Label::from_bit(rand::Rng::random::<bool>(&mut r) as u8).unwrap()).collect();
            l[0] = Label::Resistant;
            l[1] = Label::Sensitive;
            let a = auroc(&scores, &l).unwrap();
            let t: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 3.0).collect();
            prop_assert_eq!(a, auroc(&t, &l).unwrap());
        }

        #[test]
        fn metric_consistency(
            probs in proptest::collection::vec(0.0f64..1.0, 1..100),
            seed in any::<u64>(),
        ) {
            let mut r = rng::seeded(seed);
            let l: Vec<Label> = (0..probs.len()).map(|_| Label::from_bit(rand::Rng::random::<bool>(&mut r) as u8).unwrap()).collect();
            let m = compute_metrics(&probs, &l, 0.5).unwrap();
            prop_assert_eq!(m.n(), probs.len() as u64);
            prop_assert_eq!(m.accuracy, (m.tp + m.tn) as f64 / probs.len() as f64);
            if m.precision + m.recall > 0.0 {
                prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-12);
            }
        }
    }
}
