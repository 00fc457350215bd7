use std::sync::Arc;

use cellbench::dataset::{synthesize_dataset, CellProfile, Dataset, GeneVocabulary, LabelRule, SyntheticSpec};
use cellbench::embedding::{
    model_card, read_embeddings, registry_lookup, write_embeddings, AdapterDescriptor, EmbeddingMatrix, PoolingKind,
    MODEL_CARDS,
};
use cellbench::encoder::{Proj, ToyEncoder, ToyEncoderConfig};
use cellbench::eval::{compute_metrics, Strategy};
use cellbench::export::{export_embeddings, list_supported, CellEmbedder};
use cellbench::head::{self, train_head, MlpParams, TrainConfig};
use cellbench::lora::{
    attach, effective_weight, fine_tune, resolve_targets, trainable_parameter_count, LoraAdapter, LoraConfig,
};
use cellbench::rng;
use cellbench::tokens::{vocab_size, SpecialPositions, TokenSequence};
use cellbench::{Error, Result};
use nalgebra::DMatrix;
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use sha2::{Digest, Sha256};

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn toy_encoder_golden_checksum() {
    let enc = ToyEncoder::init(&ToyEncoderConfig::new(40, 8, 7)).unwrap();
    let seq = TokenSequence {
        tokens: vec![6, 13, 9, 21, 7, 30, 11, 18],
        specials: SpecialPositions::unpadded(8),
        max_len: 8,
    };
    let out = enc.encode(&seq).unwrap();
    assert_eq!(out.dim(), (8, 32));
    let bytes: Vec<u8> = out.iter().flat_map(|v| v.to_le_bytes()).collect();
    assert_eq!(
        sha256_hex(&bytes),
        "277b5d7138bcd6ea39269881db3d737203733b05df970765f7934918dcf0c061"
    );
}

#[test]
fn hundred_cells_embed_to_finite_rows() {
    let ds = synthesize_dataset(&SyntheticSpec::new(100, 24, LabelRule::Linear, 3)).unwrap();
    let enc = ToyEncoder::init(&ToyEncoderConfig::new(vocab_size(24), 12, 1)).unwrap();
    for pooling in [PoolingKind::MeanTokens, PoolingKind::ClsToken, PoolingKind::Concat4] {
        let desc = AdapterDescriptor::toy(32, pooling, 12);
        let m = enc.embed_dataset(&ds, &desc).unwrap();
        assert_eq!(m.n_cells, 100);
        assert_eq!(m.dim, if pooling == PoolingKind::Concat4 { 128 } else { 32 });
        assert!(m.data.iter().all(|v| v.is_finite()));
        let ids: Vec<&str> = ds.cells.iter().map(|c| c.cell_id.as_str()).collect();
        assert!(m.cell_ids.iter().map(String::as_str).eq(ids));
    }
}

#[test]
fn large_exchange_file_checksum_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (n, dim) = (10_000, 512);
    let mut r = rng::seeded(99);
    let data: Vec<f32> = (0..n * dim).map(|_| rng::normal(&mut r) as f32).collect();
    let ids = (0..n).map(|i| format!("cell{i:05}")).collect();
    let m = EmbeddingMatrix::new("CellLM", Strategy::Frozen, PoolingKind::MeanTokens, dim, data, ids).unwrap();
    let path = dir.path().join("big.emb");
    write_embeddings(&m, &path).unwrap();
    let written = sha256_hex(&std::fs::read(&path).unwrap());

    let back = read_embeddings(&path).unwrap();
    let payload = |m: &EmbeddingMatrix| -> Vec<u8> { m.data.iter().flat_map(|v| v.to_le_bytes()).collect() };
    assert_eq!(sha256_hex(&payload(&back)), sha256_hex(&payload(&m)));
    let again = dir.path().join("again.emb");
    write_embeddings(&back, &again).unwrap();
    assert_eq!(sha256_hex(&std::fs::read(&again).unwrap()), written);
}

#[test]
fn model_card_table() {
    assert_eq!(MODEL_CARDS.len(), 10);
    assert_eq!(model_card("scGPT").unwrap().pooling, Some(PoolingKind::ClsToken));
    let supported = list_supported();
    assert_eq!(supported.len(), 10);
    let key = |d: &str| -> (u32, u32) {
        // undated models sort last
        let Some((mon, yy)) = d.split_once('-').filter(|(m, _)| !m.is_empty()) else { return (u32::MAX, 0) };
        let months = ["Jan", "Feb", "Mar", "Apr", "May", "Jun", "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"];
        (yy.parse().unwrap(), months.iter().position(|m| *m == mon).unwrap() as u32)
    };
    let dates: Vec<(u32, u32)> = supported.iter().map(|s| key(s.published)).collect();
    assert!(dates.windows(2).all(|w| w[0] <= w[1]), "{dates:?}");
    for s in &supported {
        match registry_lookup(s.model_id) {
            Ok(d) => {
                assert_eq!(Some(d.output_dim), s.output_dim);
                assert_eq!(Some(d.pooling), s.pooling);
            }
            Err(_) => assert_eq!(s.model_id, "GPT4o-mini"),
        }
    }
}

/// Vectors derived from each cell's expression, so chunking mistakes would
/// show up as changed bytes.
struct StubEmbedder {
    model_id: &'static str,
    dim: usize,
    row_width: usize,
}

impl CellEmbedder for StubEmbedder {
    fn model_id(&self) -> &str {
        self.model_id
    }

    fn output_dim(&self) -> usize {
        self.dim
    }

    fn embed_batch(&self, cells: &[&CellProfile], _: &GeneVocabulary) -> Result<Vec<Vec<f32>>> {
        Ok(cells
            .iter()
            .map(|c| {
                let total: f64 = c.expression().iter().map(|e| e.1).sum();
                (0..self.row_width).map(|j| (total * (j + 1) as f64).sin() as f32).collect()
            })
            .collect())
    }
}

fn hundred_cells() -> Dataset {
    synthesize_dataset(&SyntheticSpec::new(100, 16, LabelRule::Linear, 4)).unwrap()
}

#[test]
fn stub_export_is_readable_and_chunk_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let ds = hundred_cells();
    let stub = StubEmbedder {
        model_id: "scGPT",
        dim: 512,
        row_width: 512,
    };
    let one = dir.path().join("one.emb");
    let two = dir.path().join("two.emb");
    let s1 = export_embeddings(&ds, &stub, Strategy::Frozen, &one, 100).unwrap();
    let s2 = export_embeddings(&ds, &stub, Strategy::Frozen, &two, 50).unwrap();
    assert_eq!((s1.chunks, s2.chunks), (1, 2));
    assert_eq!(std::fs::read(&one).unwrap(), std::fs::read(&two).unwrap());

    let m = read_embeddings(&one).unwrap();
    assert_eq!(m.model_id, "scGPT");
    assert_eq!(m.pooling, PoolingKind::ClsToken);
    assert!(m.cell_ids.iter().zip(&ds.cells).all(|(a, c)| a == &c.cell_id));
    let whole = stub.embed_batch(&ds.cells.iter().collect::<Vec<_>>(), &ds.vocabulary).unwrap();
    assert_eq!(m.row(7), whole[7].as_slice());
}

#[test]
fn export_enforces_registry_dims() {
    let dir = tempfile::tempdir().unwrap();
    let ds = hundred_cells();
    let path = dir.path().join("x.emb");
    let declared_wrong = StubEmbedder {
        model_id: "scFoundation",
        dim: 512,
        row_width: 512,
    };
    assert!(matches!(
        export_embeddings(&ds, &declared_wrong, Strategy::Frozen, &path, 10),
        Err(Error::Shape(_))
    ));
    let rows_wrong = StubEmbedder {
        model_id: "scFoundation",
        dim: 3072,
        row_width: 3071,
    };
    assert!(matches!(
        export_embeddings(&ds, &rows_wrong, Strategy::Frozen, &path, 10),
        Err(Error::Shape(_))
    ));
    assert!(!path.exists());
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    let ok = StubEmbedder {
        model_id: "scFoundation",
        dim: 3072,
        row_width: 3072,
    };
    export_embeddings(&ds, &ok, Strategy::Frozen, &path, 30).unwrap();
    assert_eq!(read_embeddings(&path).unwrap().dim, 3072);
    let prompt_only = StubEmbedder {
        model_id: "GPT4o-mini",
        dim: 1,
        row_width: 1,
    };
    assert!(matches!(
        export_embeddings(&ds, &prompt_only, Strategy::Frozen, &path, 10),
        Err(Error::Lookup(_))
    ));
}

// ---- LoRA ----

fn small_base(n_layers: usize) -> Arc<ToyEncoder> {
    let cfg = ToyEncoderConfig {
        n_layers,
        ..ToyEncoderConfig::new(vocab_size(24), 12, 5)
    };
    Arc::new(ToyEncoder::init(&cfg).unwrap())
}

#[test]
fn geneformer_targets_are_attention_inputs() {
    let d = registry_lookup("Geneformer").unwrap();
    assert_eq!(resolve_targets(&d.lora_targets).unwrap(), vec![Proj::Query, Proj::Key, Proj::Value]);
    let d = registry_lookup("tGPT").unwrap();
    assert_eq!(resolve_targets(&d.lora_targets).unwrap(), vec![Proj::Query, Proj::Key, Proj::Value]);
}

#[test]
fn scale_and_merge() {
    let cfg = LoraConfig::default();
    assert_eq!((cfg.rank, cfg.alpha, cfg.scale()), (8, 8.0, 1.0));
    let mut r = rng::seeded(2);
    let w = Array2::from_shape_simple_fn((16, 16), || rng::normal(&mut r));
    let a = Array2::from_shape_simple_fn((16, 8), || rng::normal(&mut r));
    let b = Array2::from_shape_simple_fn((8, 16), || rng::normal(&mut r));
    let adapter = LoraAdapter {
        a: a.clone(),
        b: b.clone(),
        scale: cfg.scale(),
    };
    assert_eq!(effective_weight(&adapter, &w).unwrap(), &w + &a.dot(&b));
    let zero = LoraAdapter {
        a,
        b: Array2::zeros((8, 16)),
        scale: 1.0,
    };
    assert_eq!(effective_weight(&zero, &w).unwrap(), w);
}

#[test]
fn rank_two_update_has_rank_two() {
    let mut r = rng::seeded(8);
    for _ in 0..10 {
        let adapter = LoraAdapter {
            a: Array2::from_shape_simple_fn((16, 2), || rng::normal(&mut r)),
            b: Array2::from_shape_simple_fn((2, 16), || rng::normal(&mut r)),
            scale: r.random_range(0.1..4.0),
        };
        let delta = adapter.delta();
        let dm = DMatrix::from_row_slice(16, 16, delta.as_slice().unwrap());
        let mut s: Vec<f64> = dm.svd(false, false).singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[2] < 1e-8 * s[0], "sigma3 {} sigma1 {}", s[2], s[0]);
    }
}

#[test]
fn zero_steps_leave_the_attach_state() {
    let ds = synthesize_dataset(&SyntheticSpec::new(40, 24, LabelRule::Linear, 2)).unwrap();
    let cells: Vec<&CellProfile> = ds.cells.iter().collect();
    let base = small_base(2);
    let desc = AdapterDescriptor::toy(32, PoolingKind::MeanTokens, 12);
    let adapted = attach(base.clone(), &LoraConfig::default()).unwrap();
    let head = MlpParams::init(32, 8, 4, &mut rng::seeded(0)).unwrap();
    let train = TrainConfig {
        hidden1: 8,
        hidden2: 4,
        max_steps: Some(0),
        ..TrainConfig::default()
    };
    let tuned = fine_tune(adapted.clone(), head.clone(), &cells, &desc, &train).unwrap();
    assert_eq!(tuned.steps, 0);
    assert_eq!(tuned.adapted.adapters, adapted.adapters);
    assert_eq!(tuned.head.params, head);
    for c in &cells {
        assert_eq!(tuned.adapted.embed_cell(c, &desc).unwrap(), base.embed_cell(c, &desc).unwrap());
    }
}

#[test]
fn trainable_count_contracts() {
    let mlp = MlpParams::zeros(32, 4, 2);
    assert_eq!(trainable_parameter_count(None, Some(&mlp)), mlp.parameter_count());
    let targets = ["query", "value", "ffn_in"];
    let count = |rank: usize| {
        let adapted = attach(small_base(2), &LoraConfig { rank, ..LoraConfig::default() }.with_targets(&targets)).unwrap();
        adapted.adapters.parameter_count()
    };
    assert_eq!(count(8), 2 * count(4));
    assert_eq!(count(4), 2 * count(2));
    // two blocks: query and value are 32x32, ffn_in is 64x32
    assert_eq!(count(4), 2 * (4 * 64 + 4 * 64 + 4 * 96));
}

// ---- head ----

fn expression_matrix(ds: &Dataset) -> (Array2<f64>, Vec<f64>) {
    let n_genes = ds.vocabulary.len();
    let x = Array2::from_shape_fn((ds.cells.len(), n_genes), |(i, j)| ds.cells[i].value(j as u32));
    let y = ds.cells.iter().map(|c| c.label.unwrap().as_f64()).collect();
    (x, y)
}

#[test]
fn head_separates_the_linear_rule() {
    let ds = synthesize_dataset(&SyntheticSpec::new(1000, 8, LabelRule::Linear, 21)).unwrap();
    let (x, y) = expression_matrix(&ds);
    let train: Vec<usize> = (0..900).collect();
    let test: Vec<usize> = (900..1000).collect();
    let cfg = TrainConfig {
        epochs: 60,
        batch_size: 32,
        hidden1: 32,
        hidden2: 8,
        ..TrainConfig::default()
    };
    let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
    let trained = train_head(x.select(Axis(0), &train).view(), &y_train, &cfg).unwrap();
    let probs = trained.predict_array(x.select(Axis(0), &test).view()).unwrap();
    let labels: Vec<_> = test.iter().map(|&i| ds.cells[i].label.unwrap()).collect();
    let m = compute_metrics(probs.as_slice().unwrap(), &labels, 0.5).unwrap();
    assert!(m.f1 >= 0.95, "held-out F1 {}", m.f1);

    let again = train_head(x.select(Axis(0), &train).view(), &y_train, &cfg).unwrap();
    let bits = |p: &MlpParams| -> Vec<u64> { p.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect() };
    assert_eq!(bits(&again.params), bits(&trained.params));
}

#[test]
fn batch_predict_equals_row_forward() {
    let mut r = rng::seeded(17);
    let x = Array2::from_shape_simple_fn((100, 6), || 3.0 * rng::normal(&mut r));
    let y: Vec<f64> = (0..100).map(|i| (i % 2) as f64).collect();
    let trained = train_head(x.view(), &y, &TrainConfig { epochs: 3, hidden1: 8, hidden2: 4, ..TrainConfig::default() }).unwrap();
    let batch = trained.predict_array(x.view()).unwrap();
    let std = trained.standardizer.as_ref().unwrap();
    for (i, row) in x.rows().into_iter().enumerate() {
        let single = head::forward(&trained.params, std.apply_row(row).view()).unwrap();
        // matrix products may sum in a different order than the row path
        assert!((batch[i] - single).abs() <= 1e-12, "row {i}: {} vs {single}", batch[i]);
    }
    assert_eq!(trained.predict_array(Array2::zeros((0, 6)).view()).unwrap(), Array1::<f64>::zeros(0));
}

#[test]
fn training_leaves_inputs_untouched() {
    let mut r = rng::seeded(5);
    let x = Array2::from_shape_simple_fn((50, 4), || rng::normal(&mut r));
    let y: Vec<f64> = (0..50).map(|i| (i % 2) as f64).collect();
    let (x0, y0) = (x.clone(), y.clone());
    let trained = train_head(x.view(), &y, &TrainConfig { epochs: 30, hidden1: 8, hidden2: 4, ..TrainConfig::default() }).unwrap();
    assert_eq!((x, y), (x0, y0));
    let curve = &trained.train_loss_curve;
    assert_eq!(curve.len(), 30);
    assert!(curve.last().unwrap() < curve.first().unwrap());
}
