//! Analytic gradients against central finite differences.

use std::sync::Arc;

use cellbench::dataset::{CellProfile, Label};
use cellbench::embedding::{AdapterDescriptor, PoolingKind};
use cellbench::encoder::{Proj, ToyEncoder, ToyEncoderConfig};
use cellbench::head::{self, MlpParams, Standardizer};
use cellbench::lora::{self, AdaptedEncoder, LoraConfig};
use cellbench::rng::{self, DetRng};
use ndarray::{Array1, Array2};
use rand::Rng;

const STEP: f64 = 1e-6;
pub const TOL: f64 = 1e-4;

/// Norm-wise relative error between two gradient vectors.
fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|b| b * b).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn random_mlp(d: usize, rng: &mut DetRng) -> MlpParams {
    let h1 = rng.random_range(1..7);
    let h2 = rng.random_range(1..5);
    let mut p = MlpParams::init(d, h1, h2, rng).unwrap();
    // wider weights keep most units active and gradients well away from zero
    for t in p.tensors_mut() {
        t.iter_mut().for_each(|v| *v *= 2.0);
    }
    p
}

/// Relative error of the head gradient for one random draw.
pub fn mlp_draw_error(draw: u64) -> f64 {
    let mut r = rng::seeded(1000 + draw);
    let d = r.random_range(1..9);
    let n = r.random_range(1..7);
    let params = random_mlp(d, &mut r);
    let x = Array2::from_shape_simple_fn((n, d), || rng::normal(&mut r));
    let y: Vec<f64> = (0..n).map(|_| r.random_range(0..2) as f64).collect();
    let analytic = head::grad(&params, x.view(), &y).unwrap();
    let loss = |p: &MlpParams| head::backprop(p, x.view(), &y).unwrap().loss;

    let mut a_flat = Vec::new();
    let mut n_flat = Vec::new();
    for t in 0..6 {
        let len = params.tensors()[t].len();
        for j in 0..len {
            let mut plus = params.clone();
            plus.tensors_mut()[t][j] += STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[t][j] -= STEP;
            n_flat.push((loss(&plus) - loss(&minus)) / (2.0 * STEP));
            a_flat.push(analytic.tensors()[t][j]);
        }
    }
    rel_error(&a_flat, &n_flat)
}

fn random_cells(n: usize, n_genes: u32, rng: &mut DetRng) -> Vec<CellProfile> {
    (0..n)
        .map(|i| {
            let k = rng.random_range(1..6);
            let genes = rand::seq::index::sample(rng, n_genes as usize, k).into_vec();
            let mut expr: Vec<(u32, f64)> = genes.iter().map(|&g| (g as u32, rng.random_range(0.5..10.0))).collect();
            expr.sort_by_key(|e| e.0);
            let label = Label::from_bit((i % 2) as u8).unwrap();
            CellProfile::new(format!("c{i}"), "s", expr, Some(label)).unwrap()
        })
        .collect()
}

const TARGET_POOL: [&str; 6] = ["query", "key", "value", "out_proj", "ffn_in", "ffn_out"];

struct Draw {
    adapted: AdaptedEncoder,
    head: MlpParams,
    standardizer: Option<Standardizer>,
    descriptor: AdapterDescriptor,
    cells: Vec<CellProfile>,
}

fn random_pipeline(seed: u64) -> Draw {
    let mut r = rng::seeded(seed);
    let n_genes = 12;
    let n_heads = [1usize, 2][r.random_range(0..2)];
    let d_model = n_heads * [2usize, 3, 4][r.random_range(0..3)];
    let cfg = ToyEncoderConfig {
        vocab_size: cellbench::tokens::vocab_size(n_genes as usize),
        d_model,
        n_heads,
        n_layers: r.random_range(1..3),
        d_ff: r.random_range(2..9),
        max_len: 10,
        seed,
    };
    let base = Arc::new(ToyEncoder::init(&cfg).unwrap());
    let mut targets: Vec<&str> = TARGET_POOL.iter().copied().filter(|_| r.random_bool(0.5)).collect();
    if targets.is_empty() {
        targets.push("value");
    }
    let lora_cfg = LoraConfig {
        rank: r.random_range(1..4),
        alpha: r.random_range(0.5..4.0),
        dropout: 0.0,
        seed,
        ..LoraConfig::default()
    }
    .with_targets(&targets);
    let mut adapted = lora::attach(base, &lora_cfg).unwrap();
    for l in 0..cfg.n_layers {
        for p in Proj::ALL {
            if let Some(ad) = adapted.adapters.get_mut(l, p) {
                ad.a.mapv_inplace(|_| 0.5 * rng::normal(&mut r));
                ad.b.mapv_inplace(|_| 0.5 * rng::normal(&mut r));
            }
        }
    }
    let pooling = [
        PoolingKind::MeanTokens,
        PoolingKind::ClsToken,
        PoolingKind::Concat4,
        PoolingKind::LastLayerMean,
    ][r.random_range(0..4)];
    let descriptor = AdapterDescriptor::toy(d_model, pooling, 10);
    let dim = descriptor.output_dim;
    let head = random_mlp(dim, &mut r);
    let standardizer = r.random_bool(0.5).then(|| Standardizer {
        mean: Array1::from_shape_simple_fn(dim, || 0.1 * rng::normal(&mut r)),
        scale: Array1::from_shape_simple_fn(dim, || r.random_range(0.2..2.0)),
    });
    let cells = random_cells(3, n_genes, &mut r);
    Draw {
        adapted,
        head,
        standardizer,
        descriptor,
        cells,
    }
}

/// Relative error of the adapter and head gradients of one random
/// adapted pipeline.
pub fn pipeline_draw_error(draw: u64) -> f64 {
    let Draw { adapted, head, standardizer, descriptor, cells } = random_pipeline(7000 + draw);
    let refs: Vec<&CellProfile> = cells.iter().collect();
    let g = lora::batch_gradients(&adapted, &head, standardizer.as_ref(), &descriptor, &refs).unwrap();
    let loss = |a: &AdaptedEncoder, h: &MlpParams| {
        lora::batch_loss(a, h, standardizer.as_ref(), &descriptor, &refs).unwrap()
    };
    assert!((loss(&adapted, &head) - g.loss).abs() < 1e-12);

    let mut a_flat = Vec::new();
    let mut n_flat = Vec::new();
    let n_layers = adapted.base.layers.len();
    for l in 0..n_layers {
        for p in Proj::ALL {
            let Some((da, db)) = g.adapters.get(l, p) else { continue };
            for (which, grad) in [(0, da), (1, db)] {
                for idx in 0..grad.len() {
                    let bump = |delta: f64| {
                        let mut a = adapted.clone();
                        let ad = a.adapters.get_mut(l, p).unwrap();
                        let m = if which == 0 { &mut ad.a } else { &mut ad.b };
                        m.as_slice_mut().unwrap()[idx] += delta;
                        loss(&a, &head)
                    };
                    n_flat.push((bump(STEP) - bump(-STEP)) / (2.0 * STEP));
                    a_flat.push(grad.as_slice().unwrap()[idx]);
                }
            }
        }
    }
    for t in 0..6 {
        for j in 0..head.tensors()[t].len() {
            let bump = |delta: f64| {
                let mut h = head.clone();
                h.tensors_mut()[t][j] += delta;
                loss(&adapted, &h)
            };
            n_flat.push((bump(STEP) - bump(-STEP)) / (2.0 * STEP));
            a_flat.push(g.head.tensors()[t][j]);
        }
    }
    rel_error(&a_flat, &n_flat)
}
