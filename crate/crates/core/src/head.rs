//! Three-layer MLP classifier over cell embeddings, binary cross-entropy,
//! and head-only training on frozen embeddings.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Label;
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::rng::{self, DetRng};

/// Probability clamp applied before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// `sigmoid(w3 · relu(W2 · relu(W1 x + b1) + b2) + b3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    /// `h1 x d`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// `h2 x h1`
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub w3: Array1<f64>,
    pub b3: f64,
}

impl MlpParams {
    pub fn zeros(d: usize, h1: usize, h2: usize) -> Self {
        Self {
            w1: Array2::zeros((h1, d)),
            b1: Array1::zeros(h1),
            w2: Array2::zeros((h2, h1)),
            b2: Array1::zeros(h2),
            w3: Array1::zeros(h2),
            b3: 0.0,
        }
    }

    /// Every weight and bias drawn from `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(d: usize, h1: usize, h2: usize, rng: &mut DetRng) -> Result<Self> {
        if d == 0 || h1 == 0 || h2 == 0 {
            return Err(Error::Parameter("MLP widths must be at least 1".into()));
        }
        let mut layer = |fan_out: usize, fan_in: usize| {
            let b = 1.0 / (fan_in as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || rng::uniform(rng, -b, b));
            let bias = Array1::from_shape_simple_fn(fan_out, || rng::uniform(rng, -b, b));
            (w, bias)
        };
        let (w1, b1) = layer(h1, d);
        let (w2, b2) = layer(h2, h1);
        let (w3, b3) = layer(1, h2);
        Ok(Self {
            w1,
            b1,
            w2,
            b2,
            w3: w3.row(0).to_owned(),
            b3: b3[0],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn widths(&self) -> (usize, usize, usize) {
        (self.w1.ncols(), self.w1.nrows(), self.w2.nrows())
    }

    pub fn parameter_count(&self) -> usize {
        let (d, h1, h2) = self.widths();
        h1 * d + h1 + h2 * h1 + h2 + h2 + 1
    }

    /// Parameter tensors as flat slices, in declaration order.
    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.w1.as_slice().expect("contiguous"),
            self.b1.as_slice().expect("contiguous"),
            self.w2.as_slice().expect("contiguous"),
            self.b2.as_slice().expect("contiguous"),
            self.w3.as_slice().expect("contiguous"),
            std::slice::from_ref(&self.b3),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.w1.as_slice_mut().expect("contiguous"),
            self.b1.as_slice_mut().expect("contiguous"),
            self.w2.as_slice_mut().expect("contiguous"),
            self.b2.as_slice_mut().expect("contiguous"),
            self.w3.as_slice_mut().expect("contiguous"),
            std::slice::from_mut(&mut self.b3),
        ]
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {d} features, head expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn forward(params: &MlpParams, x: ArrayView1<f64>) -> Result<f64> {
    params.check_dim(x.len())?;
    let a1 = (params.w1.dot(&x) + &params.b1).mapv(|v| v.max(0.0));
    let a2 = (params.w2.dot(&a1) + &params.b2).mapv(|v| v.max(0.0));
    Ok(sigmoid(params.w3.dot(&a2) + params.b3))
}

/// Row-wise [`forward`].
pub fn forward_batch(params: &MlpParams, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    params.check_dim(x.ncols())?;
    Ok(Activations::compute(params, x).prob)
}

pub fn bce_loss(prob: f64, y: f64) -> f64 {
    let p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

struct Activations {
    z1: Array2<f64>,
    a1: Array2<f64>,
    z2: Array2<f64>,
    a2: Array2<f64>,
    prob: Array1<f64>,
}

impl Activations {
    fn compute(params: &MlpParams, x: ArrayView2<f64>) -> Self {
        let z1 = x.dot(&params.w1.t()) + &params.b1;
        let a1 = z1.mapv(|v| v.max(0.0));
        let z2 = a1.dot(&params.w2.t()) + &params.b2;
        let a2 = z2.mapv(|v| v.max(0.0));
        let prob = (a2.dot(&params.w3) + params.b3).mapv(sigmoid);
        Self { z1, a1, z2, a2, prob }
    }
}

/// Batch-mean loss, its gradient, and the gradient with respect to the inputs.
#[derive(Debug, Clone)]
pub struct Backprop {
    pub loss: f64,
    pub grads: MlpParams,
    pub d_input: Array2<f64>,
}

/// Mean BCE over the batch and its exact gradient. Samples whose
/// probability falls outside the clamp band contribute no gradient.
pub fn backprop(params: &MlpParams, x: ArrayView2<f64>, y: &[f64]) -> Result<Backprop> {
    params.check_dim(x.ncols())?;
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if y.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let n = y.len() as f64;
    let act = Activations::compute(params, x);
    let loss = act.prob.iter().zip(y).map(|(&p, &t)| bce_loss(p, t)).sum::<f64>() / n;
    let dz3: Array1<f64> = act
        .prob
        .iter()
        .zip(y)
        .map(|(&p, &t)| {
            if p > PROB_EPS && p < 1.0 - PROB_EPS {
                (p - t) / n
            } else {
                0.0
            }
        })
        .collect();
    let w3 = act.a2.t().dot(&dz3);
    let b3 = dz3.sum();
    let relu_mask = |z: &Array2<f64>| z.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let dz2 = dz3.insert_axis(Axis(1)).dot(&params.w3.view().insert_axis(Axis(0))) * relu_mask(&act.z2);
    let w2 = dz2.t().dot(&act.a1).as_standard_layout().into_owned();
    let b2 = dz2.sum_axis(Axis(0));
    let dz1 = dz2.dot(&params.w2) * relu_mask(&act.z1);
    let w1 = dz1.t().dot(&x).as_standard_layout().into_owned();
    let b1 = dz1.sum_axis(Axis(0));
    let d_input = dz1.dot(&params.w1);
    Ok(Backprop {
        loss,
        grads: MlpParams { w1, b1, w2, b2, w3, b3 },
        d_input,
    })
}

/// Gradient of the batch-mean BCE with respect to every parameter.
pub fn grad(params: &MlpParams, x: ArrayView2<f64>, y: &[f64]) -> Result<MlpParams> {
    Ok(backprop(params, x, y)?.grads)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    /// Per-feature z-scoring fit on the training rows.
    pub standardize: bool,
    /// Stop after this many optimizer steps.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 64,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            hidden1: 256,
            hidden2: 64,
            standardize: true,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Parameter(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be at least 1".into()));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::Parameter("hidden widths must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Parameter("Adam betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// First-order optimizer over a fixed list of flat parameter tensors.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(config: &TrainConfig) -> Self {
        Self {
            kind: config.optimizer,
            lr: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.epsilon,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update; `params` and `grads` must list the same tensors
    /// in the same order on every call.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient lists differ");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            match self.kind {
                OptimizerKind::Sgd => p.iter_mut().zip(g).for_each(|(p, g)| *p -= self.lr * g),
                OptimizerKind::Adam => {
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..p.len() {
                        m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                        v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                        let mh = m[j] / bc1;
                        let vh = v[j] / bc2;
                        p[j] -= self.lr * mh / (vh.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

/// Per-feature z-score transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl Standardizer {
    /// Population statistics of `x`; constant features keep scale 1.
    pub fn fit(x: ArrayView2<f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(Error::Parameter("cannot fit a standardizer on zero rows".into()));
        }
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let scale = x
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s > 1e-12 { s } else { 1.0 });
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.scale
    }

    pub fn apply_row(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (&x - &self.mean) / &self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedHead {
    pub params: MlpParams,
    pub standardizer: Option<Standardizer>,
    /// Full-pass training loss after each epoch.
    pub train_loss_curve: Vec<f64>,
    pub config: TrainConfig,
}

impl TrainedHead {
    /// Probabilities for each row of `x` (raw, unstandardized features).
    pub fn predict_array(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        match &self.standardizer {
            Some(s) => {
                self.params.check_dim(x.ncols())?;
                forward_batch(&self.params, s.apply(x).view())
            }
            None => forward_batch(&self.params, x),
        }
    }
}

pub fn predict(head: &TrainedHead, embeddings: &EmbeddingMatrix) -> Result<Array1<f64>> {
    head.predict_array(embeddings.to_array().view())
}

pub(crate) fn require_both_classes(y: &[f64]) -> Result<()> {
    let pos = y.iter().filter(|&&v| v > 0.5).count();
    if y.len() < 2 || pos == 0 || pos == y.len() {
        return Err(Error::DegenerateData(format!(
            "training labels need both classes ({} of {} positive)",
            pos,
            y.len()
        )));
    }
    Ok(())
}

/// Trains a fresh head on fixed features.
pub fn train_head(x: ArrayView2<f64>, y: &[f64], config: &TrainConfig) -> Result<TrainedHead> {
    config.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    require_both_classes(y)?;
    let standardizer = config.standardize.then(|| Standardizer::fit(x)).transpose()?;
    let xs = match &standardizer {
        Some(s) => s.apply(x),
        None => x.to_owned(),
    };
    let mut params = MlpParams::init(x.ncols(), config.hidden1, config.hidden2, &mut rng::stream(config.seed, 0))?;
    let mut opt = Optimizer::new(config);
    let mut shuffle_rng = rng::stream(config.seed, 1);
    let mut curve = Vec::with_capacity(config.epochs);
    let mut steps = 0usize;
    'epochs: for _ in 0..config.epochs {
        let order = rng::permutation(&mut shuffle_rng, y.len());
        for batch in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| steps >= m) {
                break 'epochs;
            }
            let xb = xs.select(Axis(0), batch);
            let yb: Vec<f64> = batch.iter().map(|&i| y[i]).collect();
            let bp = backprop(&params, xb.view(), &yb)?;
            if !bp.loss.is_finite() {
                return Err(Error::Divergence { step: steps, loss: bp.loss });
            }
            opt.step(params.tensors_mut().into(), bp.grads.tensors().into());
            steps += 1;
        }
        let probs = forward_batch(&params, xs.view())?;
        let loss = probs.iter().zip(y).map(|(&p, &t)| bce_loss(p, t)).sum::<f64>() / y.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Divergence { step: steps, loss });
        }
        curve.push(loss);
    }
    Ok(TrainedHead {
        params,
        standardizer,
        train_loss_curve: curve,
        config: config.clone(),
    })
}

/// Head-only training on frozen embeddings.
pub fn train_frozen(embeddings: &EmbeddingMatrix, labels: &[Label], config: &TrainConfig) -> Result<TrainedHead> {
    if embeddings.n_cells != labels.len() {
        return Err(Error::Shape(format!(
            "{} embeddings but {} labels",
            embeddings.n_cells,
            labels.len()
        )));
    }
    let y: Vec<f64> = labels.iter().map(|l| l.as_f64()).collect();
    train_head(embeddings.to_array().view(), &y, config)
}

pub const HEAD_MAGIC: &[u8; 8] = b"SCDMHED1";
pub const HEAD_VERSION: u16 = 1;

impl TrainedHead {
    /// Versioned little-endian layout: magic, version, `d`, `h1`, `h2` as
    /// `u64`, a standardizer flag byte followed by its mean and scale, then
    /// the parameters in [`MlpParams::tensors`] order, all `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let (d, h1, h2) = self.params.widths();
        let mut buf = Vec::new();
        buf.extend_from_slice(HEAD_MAGIC);
        buf.extend_from_slice(&HEAD_VERSION.to_le_bytes());
        for v in [d, h1, h2] {
            buf.extend_from_slice(&(v as u64).to_le_bytes());
        }
        let put = |vals: &[f64], buf: &mut Vec<u8>| vals.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
        match &self.standardizer {
            Some(s) => {
                buf.push(1);
                put(s.mean.as_slice().expect("contiguous"), &mut buf);
                put(s.scale.as_slice().expect("contiguous"), &mut buf);
            }
            None => buf.push(0),
        }
        for t in self.params.tensors() {
            put(t, &mut buf);
        }
        buf
    }

    /// Inverse of [`Self::to_bytes`]; the loss curve and config are not stored.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 10 || &bytes[..8] != HEAD_MAGIC {
            return Err(Error::Format("not a classifier head file (bad magic)".into()));
        }
        if u16::from_le_bytes([bytes[8], bytes[9]]) != HEAD_VERSION {
            return Err(Error::Format("unsupported classifier head version".into()));
        }
        if bytes.len() < 10 + 24 + 1 {
            return Err(Error::Corruption("truncated head header".into()));
        }
        let dim = |i: usize| u64::from_le_bytes(bytes[10 + 8 * i..18 + 8 * i].try_into().unwrap()) as usize;
        let (d, h1, h2) = (dim(0), dim(1), dim(2));
        let flag = bytes[34];
        let mut params = MlpParams::zeros(d, h1, h2);
        let n_std = if flag == 1 { 2 * d } else { 0 };
        let expected = (n_std + params.parameter_count()) * 8;
        let payload = &bytes[35..];
        if flag > 1 || payload.len() != expected {
            return Err(Error::Corruption(format!(
                "head payload is {} bytes, expected {expected}",
                payload.len()
            )));
        }
        let mut values = payload.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
        let standardizer = (flag == 1).then(|| Standardizer {
            mean: values.by_ref().take(d).collect(),
            scale: values.by_ref().take(d).collect(),
        });
        for t in params.tensors_mut() {
            t.iter_mut().for_each(|v| *v = values.next().unwrap());
        }
        Ok(Self {
            params,
            standardizer,
            train_loss_curve: Vec::new(),
            config: TrainConfig::default(),
        })
    }
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    fn tiny() -> MlpParams {
        MlpParams {
            w1: array![[1.0, 1.0]],
            b1: array![0.0],
            w2: array![[1.0]],
            b2: array![0.0],
            w3: array![1.0],
            b3: 0.0,
        }
    }

    #[test]
    fn forward_examples() {
        let z = MlpParams::zeros(3, 4, 2);
        assert_eq!(forward(&z, array![1.0, -2.0, 3.0].view()).unwrap(), 0.5);
        let s3 = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((forward(&tiny(), array![1.0, 2.0].view()).unwrap() - s3).abs() < 1e-15);
        assert!((s3 - 0.95257).abs() < 1e-5);
        assert_eq!(forward(&tiny(), array![-5.0, 0.0].view()).unwrap(), 0.5);
        assert!(matches!(forward(&tiny(), array![1.0].view()), Err(Error::Shape(_))));
    }

    #[test]
    fn bce_examples() {
        assert!((bce_loss(0.5, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.5, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((bce_loss(0.9, 1.0) - 0.105_360_515_657_826_3).abs() < 1e-12);
        assert!((bce_loss(1.0, 0.0) + PROB_EPS.ln()).abs() < 1e-6);
    }

    #[test]
    fn monotone_in_output_bias() {
        let mut rng = rng::seeded(4);
        let mut p = MlpParams::init(5, 6, 3, &mut rng).unwrap();
        let x = array![0.3, -1.0, 2.0, 0.0, 0.5];
        let mut last = forward(&p, x.view()).unwrap();
        for _ in 0..10 {
            p.b3 += 0.25;
            let now = forward(&p, x.view()).unwrap();
            assert!(now > last);
            last = now;
        }
    }

    #[test]
    fn duplicated_sample_gradient_is_single_gradient() {
        let mut rng = rng::seeded(5);
        let p = MlpParams::init(4, 5, 3, &mut rng).unwrap();
        let x = array![[0.5, -0.2, 1.0, 0.3]];
        let xx = array![[0.5, -0.2, 1.0, 0.3], [0.5, -0.2, 1.0, 0.3]];
        let g1 = grad(&p, x.view(), &[1.0]).unwrap();
        let g2 = grad(&p, xx.view(), &[1.0, 1.0]).unwrap();
        for (a, b) in g1.tensors().iter().zip(g2.tensors().iter()) {
            for (u, v) in a.iter().zip(b.iter()) {
                assert!((u - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn saturated_output_has_zero_output_gradient() {
        let mut p = tiny();
        p.b3 = 50.0;
        let g = grad(&p, array![[1.0, 2.0]].view(), &[1.0]).unwrap();
        assert_eq!(g.b3, 0.0);
        assert!(g.w3.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_epochs_and_single_class_rejected() {
        let x = array![[0.0], [1.0]];
        let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
        assert!(matches!(train_head(x.view(), &[0.0, 1.0], &cfg), Err(Error::Parameter(_))));
        let cfg = TrainConfig::default();
        assert!(matches!(train_head(x.view(), &[1.0, 1.0], &cfg), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn empty_predict_and_row_consistency() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [0.5, -1.0]];
        let cfg = TrainConfig { epochs: 2, hidden1: 4, hidden2: 3, ..TrainConfig::default() };
        let head = train_head(x.view(), &[0.0, 1.0, 1.0, 0.0], &cfg).unwrap();
        assert_eq!(head.predict_array(Array2::zeros((0, 2)).view()).unwrap().len(), 0);
        let all = head.predict_array(x.view()).unwrap();
        let s = head.standardizer.as_ref().unwrap();
        let one = forward(&head.params, s.apply_row(x.row(2)).view()).unwrap();
        assert_eq!(all[2], one);
    }

    #[test]
    fn head_sidecar_round_trip() {
        let x = array![[0.0, 1.0], [1.0, 0.0], [2.0, 2.0], [0.5, -1.0]];
        let cfg = TrainConfig { epochs: 1, hidden1: 4, hidden2: 3, ..TrainConfig::default() };
        let head = train_head(x.view(), &[0.0, 1.0, 1.0, 0.0], &cfg).unwrap();
        let back = TrainedHead::from_bytes(&head.to_bytes()).unwrap();
        assert_eq!(back.params, head.params);
        assert_eq!(back.standardizer, head.standardizer);
        assert!(TrainedHead::from_bytes(&head.to_bytes()[..40]).is_err());
    }

    #[test]
    fn standardizer_constant_feature() {
        let x = array![[1.0, 5.0], [3.0, 5.0]];
        let s = Standardizer::fit(x.view()).unwrap();
        assert_eq!(s.mean, array![2.0, 5.0]);
        assert_eq!(s.scale, array![1.0, 1.0]);
    }
}
