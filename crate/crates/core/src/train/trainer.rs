use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::blocks::{build_backbone, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::params::HasParams;
use crate::tensor::{no_grad, Tensor};

use super::data::{synth_dataset, SynthSample};
use super::optim::{cosine_lr, AdamW, AdamWConfig};

/// `-log softmax(logits)[label]`, recorded on the tape.
pub fn cross_entropy(logits: &Tensor, label: usize) -> Result<Tensor> {
    logits.cross_entropy(label)
}

/// Synthetic dataset parameters; see [`synth_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub seed: u64,
    pub num_samples: usize,
    pub resolution: usize,
    pub num_classes: usize,
}

impl DataConfig {
    /// 64 two-class images at 32², matching the `tiny` preset.
    pub fn demo(seed: u64) -> DataConfig {
        DataConfig { seed, num_samples: 64, resolution: 32, num_classes: 2 }
    }
}

/// Optimization schedule of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    /// Seeds both the initialization and the batch order.
    pub seed: u64,
    /// Evaluate on the whole training set every this many steps (and after the last).
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 300, batch_size: 8, optimizer: AdamWConfig::default(), seed: 0, eval_every: 25 }
    }
}

/// Loss and accuracy on the training set after `step` updates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub step: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

/// Outcome of [`train_loop`].
#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Evaluation before the first update.
    pub initial: MetricsRow,
    /// One row per evaluation interval, in step order.
    pub rows: Vec<MetricsRow>,
}

impl TrainReport {
    pub fn final_metrics(&self) -> MetricsRow {
        self.rows.last().copied().unwrap_or(self.initial)
    }

    /// Writes `step,loss,train_accuracy` rows; a run without updates gives a
    /// header-only file.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf)?;
        std::fs::write(path, buf).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }

    pub fn write_csv_to<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(["step", "loss", "train_accuracy"])?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}

/// Model, optimizer and data of a training run, advanced one batch at a time.
pub struct Trainer {
    pub model: Model,
    pub optimizer: AdamW,
    pub data: Vec<SynthSample>,
    pub config: TrainConfig,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    step: usize,
}

impl Trainer {
    pub fn new(mut model: Model, data: Vec<SynthSample>, config: TrainConfig) -> Result<Trainer> {
        if data.is_empty() || config.batch_size == 0 {
            return Err(Error::Usage("training needs data and a positive batch size".into()));
        }
        if let Some(s) = data.iter().find(|s| s.label >= model.config.num_classes) {
            return Err(Error::Usage(format!(
                "label {} out of range for {} classes",
                s.label, model.config.num_classes
            )));
        }
        model.track_params();
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_ba7c);
        let optimizer = AdamW::new(config.optimizer);
        let order = (0..data.len()).collect();
        let mut t = Trainer { model, optimizer, data, config, rng, order, cursor: 0, step: 0 };
        t.reshuffle();
        Ok(t)
    }

    fn reshuffle(&mut self) {
        self.order.shuffle(&mut self.rng);
        self.cursor = 0;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        (0..self.config.batch_size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.reshuffle();
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }

    /// Updates applied so far.
    pub fn steps_done(&self) -> usize {
        self.step
    }

    /// One forward/backward/update on the next batch; returns the batch loss.
    ///
    /// Any failure is reported as [`Error::Training`] carrying the 1-based
    /// index of the step that failed.
    pub fn step(&mut self) -> Result<f64> {
        let step = self.step + 1;
        self.try_step(step).map_err(|source| Error::Training { step, source: Box::new(source) })
    }

    fn try_step(&mut self, step: usize) -> Result<f64> {
        let batch = self.next_batch();
        let mut total: Option<Tensor> = None;
        for &i in &batch {
            let sample = &self.data[i];
            let loss = cross_entropy(&self.model.forward(&sample.image)?, sample.label)?;
            total = Some(match total {
                Some(t) => t.add(&loss)?,
                None => loss,
            });
        }
        let loss = total.expect("non-empty batch").scale(1.0 / batch.len() as f64)?;
        let value = loss.item()?;
        if !value.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        loss.backward()?;
        let lr = cosine_lr(self.config.optimizer.lr, step - 1, self.config.steps);
        self.optimizer.set_lr(lr);
        self.optimizer.step_model(&mut self.model)?;
        self.step = step;
        Ok(value)
    }

    /// Mean loss and accuracy over the whole training set.
    pub fn evaluate(&self) -> Result<MetricsRow> {
        let (mut loss, mut correct) = (0.0, 0);
        no_grad(|| -> Result<()> {
            for s in &self.data {
                let logits = self.model.forward(&s.image)?;
                loss += cross_entropy(&logits, s.label)?.item()?;
                if argmax(logits.data()) == s.label {
                    correct += 1;
                }
            }
            Ok(())
        })?;
        let n = self.data.len() as f64;
        Ok(MetricsRow { step: self.step, loss: loss / n, train_accuracy: correct as f64 / n })
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}

/// Builds the model and dataset, then trains for `train.steps` updates.
pub fn train_loop(model_config: &ModelConfig, data: &DataConfig, train: &TrainConfig) -> Result<TrainReport> {
    if data.resolution != model_config.input_resolution || data.num_classes != model_config.num_classes {
        return Err(Error::Config(format!(
            "data ({} classes at {}²) does not match the model ({} classes at {}²)",
            data.num_classes, data.resolution, model_config.num_classes, model_config.input_resolution
        )));
    }
    let model = build_backbone(model_config, train.seed)?;
    let samples = synth_dataset(data.seed, data.num_samples, data.resolution, data.num_classes)?;
    let mut trainer = Trainer::new(model, samples, train.clone())?;
    let initial = trainer.evaluate()?;
    let mut rows = Vec::new();
    let every = train.eval_every.max(1);
    for step in 1..=train.steps {
        trainer.step()?;
        if step % every == 0 || step == train.steps {
            rows.push(trainer.evaluate().map_err(|source| Error::Training { step, source: Box::new(source) })?);
        }
    }
    Ok(TrainReport { initial, rows })
}
