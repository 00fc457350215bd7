use std::collections::BTreeMap;

use cellbench::dataset::{
    group_by_category, read_manifest, synthesize_dataset, CategoryAxis, Collection, Dataset, DatasetManifest,
    LabelRule, SyntheticSpec,
};
use cellbench::eval::make_kfold;

/// Cell counts per study of a 36-study collection totalling 326,751 cells.
fn study_sizes() -> Vec<usize> {
    let mut sizes: Vec<usize> = (0..35).map(|i| 4000 + 300 * i).collect();
    let used: usize = sizes.iter().sum();
    sizes.push(326_751 - used);
    sizes
}

fn manifest(i: usize, n_cells: usize, tissue: &str, therapy: &str) -> DatasetManifest {
    DatasetManifest {
        study_id: format!("study-{i:02}"),
        tissue: tissue.into(),
        cancer_type: "melanoma".into(),
        therapy_type: therapy.into(),
        regimen: "regimen".into(),
        n_cells,
        collection: Collection::Primary,
        samples: BTreeMap::new(),
    }
}

#[test]
fn primary_collection_manifests_parse_and_sum() {
    let dir = tempfile::tempdir().unwrap();
    let therapies = ["targeted", "chemotherapy", "immunotherapy"];
    let sizes = study_sizes();
    assert!(sizes.iter().all(|&n| n > 0));
    for (i, &n) in sizes.iter().enumerate() {
        let m = manifest(i, n, "tumor", therapies[i % 3]);
        std::fs::write(dir.path().join(format!("s{i}.json")), serde_json::to_string(&m).unwrap()).unwrap();
    }
    let mut parsed = Vec::new();
    for i in 0..36 {
        parsed.push(read_manifest(&dir.path().join(format!("s{i}.json"))).unwrap());
    }
    assert_eq!(parsed.len(), 36);
    assert_eq!(parsed.iter().map(|m| m.n_cells).sum::<usize>(), 326_751);

    let datasets: Vec<Dataset> = parsed
        .into_iter()
        .map(|manifest| {
            let mut ds = synthesize_dataset(&SyntheticSpec::new(2, 4, LabelRule::Linear, 0)).unwrap();
            ds.manifest = manifest;
            ds
        })
        .collect();
    let groups = group_by_category(&datasets, CategoryAxis::Therapy);
    let names: Vec<&str> = groups.iter().map(|g| g.value.as_str()).collect();
    assert_eq!(names, vec!["chemotherapy", "immunotherapy", "targeted"]);
    assert!(groups.iter().all(|g| g.datasets.len() == 12));
}

/// Logistic regression by full-batch gradient descent on standardized
/// expression, scored by 10-fold F1.
fn logistic_oracle_f1(ds: &Dataset) -> f64 {
    let n_genes = ds.vocabulary.len();
    let x: Vec<Vec<f64>> = ds
        .cells
        .iter()
        .map(|c| (0..n_genes as u32).map(|g| c.value(g)).collect())
        .collect();
    let y: Vec<f64> = ds.cells.iter().map(|c| c.label.unwrap().as_f64()).collect();
    let plan = make_kfold(x.len(), 10, 0).unwrap();
    let mut f1s = Vec::new();
    for fold in 0..10 {
        let train = plan.train_indices(fold);
        let test = plan.test_indices(fold);
        let mean: Vec<f64> = (0..n_genes)
            .map(|j| train.iter().map(|&i| x[i][j]).sum::<f64>() / train.len() as f64)
            .collect();
        let sd: Vec<f64> = (0..n_genes)
            .map(|j| {
                let v = train.iter().map(|&i| (x[i][j] - mean[j]).powi(2)).sum::<f64>() / train.len() as f64;
                if v > 0.0 {
                    v.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let z = |i: usize| -> Vec<f64> { (0..n_genes).map(|j| (x[i][j] - mean[j]) / sd[j]).collect() };
        let zs: Vec<Vec<f64>> = (0..x.len()).map(z).collect();
        let mut w = vec![0.0; n_genes];
        let mut b = 0.0;
        for _ in 0..500 {
            let mut gw = vec![0.0; n_genes];
            let mut gb = 0.0;
            for &i in &train {
                let s: f64 = b + w.iter().zip(&zs[i]).map(|(a, v)| a * v).sum::<f64>();
                let err = 1.0 / (1.0 + (-s).exp()) - y[i];
                gb += err;
                for (g, v) in gw.iter_mut().zip(&zs[i]) {
                    *g += err * v;
                }
            }
            let scale = 0.5 / train.len() as f64;
            b -= scale * gb;
            for (wj, g) in w.iter_mut().zip(&gw) {
                *wj -= scale * g;
            }
        }
        let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
        for &i in &test {
            let s: f64 = b + w.iter().zip(&zs[i]).map(|(a, v)| a * v).sum::<f64>();
            match (s >= 0.0, y[i] == 1.0) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        f1s.push(if tp > 0.0 { 2.0 * tp / (2.0 * tp + fp + fn_) } else { 0.0 });
    }
    f1s.iter().sum::<f64>() / f1s.len() as f64
}

#[test]
fn linear_rule_is_linearly_learnable() {
    for n_genes in [8, 32] {
        let ds = synthesize_dataset(&SyntheticSpec::new(1000, n_genes, LabelRule::Linear, 1)).unwrap();
        let f1 = logistic_oracle_f1(&ds);
        assert!(f1 >= 0.95, "{n_genes} genes: logistic F1 {f1}");
    }
}

#[test]
fn interaction_rule_defeats_a_linear_model() {
    let ds = synthesize_dataset(&SyntheticSpec::new(1000, 32, LabelRule::Interaction, 1)).unwrap();
    let f1 = logistic_oracle_f1(&ds);
    assert!(f1 <= 0.75, "logistic F1 {f1}");
}

#[test]
fn two_tissues_group_as_four_and_two() {
    let tissues = ["tumor", "PBMC", "tumor", "tumor", "PBMC", "tumor"];
    let datasets: Vec<Dataset> = tissues
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut ds = synthesize_dataset(&SyntheticSpec::new(3, 4, LabelRule::Linear, i as u64)).unwrap();
            ds.manifest.tissue = t.to_string();
            ds
        })
        .collect();
    let groups = group_by_category(&datasets, CategoryAxis::Tissue);
    let sizes: BTreeMap<&str, usize> = groups.iter().map(|g| (g.value.as_str(), g.datasets.len())).collect();
    let mut oracle: BTreeMap<&str, usize> = BTreeMap::new();
    for t in tissues {
        *oracle.entry(t).or_default() += 1;
    }
    assert_eq!(sizes, oracle);
    assert_eq!(sizes["tumor"], 4);
    assert_eq!(sizes["PBMC"], 2);
}
