//! Throughput profiling in iterations per second.

use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::CellProfile;
use crate::embedding::{AdapterDescriptor, ModelCard};
use crate::encoder::ToyEncoder;
use crate::error::{Error, Result};
use crate::head::{MlpParams, TrainConfig};
use crate::lora::{attach, fine_tune, trainable_parameter_count, FineTuned, LoraConfig};
use crate::rng;

pub const MIN_REPEATS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    Inference,
}

/// `speed` is `iterations / seconds`, in it/s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub model_id: String,
    pub phase: Phase,
    pub iterations: u64,
    pub seconds: f64,
    pub speed: f64,
}

impl ProfileRecord {
    pub fn new(model_id: impl Into<String>, phase: Phase, iterations: u64, seconds: f64) -> Result<Self> {
        if !(seconds > 0.0 && seconds.is_finite()) {
            return Err(Error::Parameter(format!("profile time must be positive, got {seconds}")));
        }
        Ok(Self {
            model_id: model_id.into(),
            phase,
            iterations,
            seconds,
            speed: iterations as f64 / seconds,
        })
    }
}

/// Median of a non-empty sample; the mean of the middle pair for even
/// sizes.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Machine the timings were taken on. Timings are only comparable within
/// one machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hardware {
    pub os: String,
    pub arch: String,
    pub logical_cpus: usize,
    pub worker_threads: usize,
}

impl Hardware {
    pub fn current() -> Self {
        Self {
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            logical_cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            worker_threads: rayon::current_num_threads(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePair {
    pub training: ProfileRecord,
    pub inference: ProfileRecord,
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    // a zero reading would make the speed infinite
    Ok((out, start.elapsed().as_secs_f64().max(1e-9)))
}

/// Fine-tunes the toy pipeline on `cells` and then runs batched inference
/// over them, `repeats` times each. Training iterations are optimizer
/// steps; inference iterations are batch forwards of `train.batch_size`
/// cells. Times are medians over the repeats.
pub fn profile_toy(
    base: Arc<ToyEncoder>,
    descriptor: &AdapterDescriptor,
    lora: &LoraConfig,
    train: &TrainConfig,
    cells: &[&CellProfile],
    repeats: usize,
) -> Result<(ProfilePair, FineTuned)> {
    if repeats < MIN_REPEATS {
        return Err(Error::Parameter(format!(
            "profiling needs at least {MIN_REPEATS} repeats, got {repeats}"
        )));
    }
    if cells.is_empty() {
        return Err(Error::Parameter("profiling needs at least one cell".into()));
    }
    let mut train_times = Vec::with_capacity(repeats);
    let mut tuned: Option<FineTuned> = None;
    for _ in 0..repeats {
        let (ft, secs) = timed(|| {
            let adapted = attach(base.clone(), lora)?;
            let head = MlpParams::init(
                descriptor.output_dim,
                train.hidden1,
                train.hidden2,
                &mut rng::stream(train.seed, 0),
            )?;
            fine_tune(adapted, head, cells, descriptor, train)
        })?;
        train_times.push(secs);
        tuned = Some(ft);
    }
    let tuned = tuned.expect("repeats >= 3");
    let steps = tuned.steps as u64;

    let batches: Vec<&[&CellProfile]> = cells.chunks(train.batch_size).collect();
    let mut infer_times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let ((), secs) = timed(|| {
            for b in &batches {
                tuned.predict(b, descriptor)?;
            }
            Ok(())
        })?;
        infer_times.push(secs);
    }
    let model_id = &descriptor.model_id;
    Ok((
        ProfilePair {
            training: ProfileRecord::new(model_id, Phase::Training, steps, median(&train_times))?,
            inference: ProfileRecord::new(model_id, Phase::Inference, batches.len() as u64, median(&infer_times))?,
        },
        tuned,
    ))
}

/// One row of the model-property table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRow {
    pub model_id: String,
    pub params_millions: Option<f64>,
    pub output_dim: Option<usize>,
    pub inference_speed: Option<f64>,
    pub inference_time: Option<f64>,
    pub training_speed: Option<f64>,
    pub training_time: Option<f64>,
}

pub const PROFILE_COLUMNS: [&str; 7] = [
    "model_id",
    "params_millions",
    "output_dim",
    "inference_speed_its",
    "inference_time_s",
    "training_speed_its",
    "training_time_s",
];

impl ProfileRow {
    /// Measured row for the toy pipeline. The parameter count covers the
    /// base encoder.
    pub fn measured(base: &ToyEncoder, descriptor: &AdapterDescriptor, pair: &ProfilePair) -> Self {
        Self {
            model_id: descriptor.model_id.clone(),
            params_millions: Some(base.config.parameter_count() as f64 / 1e6),
            output_dim: Some(descriptor.output_dim),
            inference_speed: Some(pair.inference.speed),
            inference_time: Some(pair.inference.seconds),
            training_speed: Some(pair.training.speed),
            training_time: Some(pair.training.seconds),
        }
    }

    /// Published row of a registry model.
    pub fn from_card(card: &ModelCard) -> Self {
        Self {
            model_id: card.model_id.to_string(),
            params_millions: card.params_millions,
            output_dim: card.output_dim,
            inference_speed: card.inference_speed,
            inference_time: card.inference_time,
            training_speed: card.training_speed,
            training_time: card.training_time,
        }
    }

    pub fn csv_fields(&self) -> Vec<String> {
        let f = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        vec![
            self.model_id.clone(),
            f(self.params_millions),
            self.output_dim.map(|d| d.to_string()).unwrap_or_default(),
            f(self.inference_speed),
            f(self.inference_time),
            f(self.training_speed),
            f(self.training_time),
        ]
    }
}

/// Trainable parameters of a fine-tuned toy pipeline.
pub fn trainable_count(tuned: &FineTuned) -> usize {
    trainable_parameter_count(Some(&tuned.adapted), Some(&tuned.head.params))
}
