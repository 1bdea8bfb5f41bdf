//! Joint NAWP + ECR training.
//!
//! Each iteration draws a batch of videos, runs one forward pass per video
//! (videos have different clip counts, so nothing is padded), accumulates the
//! gradients of the batch loss and takes one Adam step under a cosine
//! learning-rate schedule. Batch composition is a pure function of
//! `(seed, step)`, which makes a resumed run identical to an uninterrupted one.

mod checkpoint;
mod data;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalkit;
use crate::model::{trace, ModelConfig, ModelParams};
use crate::numcore::{adam_step, cosine_lr, AdamConfig, AdamState, Tensor};

pub use checkpoint::{config_hash, Checkpoint};
pub use data::{split_dataset, Dataset, Sample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Joint,
    NawpOnly,
    EcrOnly,
}

impl Mode {
    pub fn trains_first_head(self) -> bool {
        self != Mode::EcrOnly
    }

    pub fn trains_ecr_head(self) -> bool {
        self != Mode::NawpOnly
    }
}

/// What the first head regresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Nawp,
    Awt,
    Awp,
}

impl Target {
    /// Labels are divided by this before training so they fit the sigmoid
    /// range; predictions are multiplied back.
    pub fn label_scale(self) -> f64 {
        match self {
            Target::Nawp => 1.0,
            Target::Awt => 60.0,
            Target::Awp => 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub seed: u64,
    pub mode: Mode,
    pub target: Target,
    pub duration_as_input: bool,
    pub split_ratio: f64,
    /// Log train loss and held-out SRCC every this many steps (and after
    /// the last step).
    pub eval_interval: u64,
    pub adam: AdamConfig,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 8,
            iterations: 3000,
            lr_max: 1e-4,
            lr_min: 1e-7,
            seed: 0,
            mode: Mode::Joint,
            target: Target::Nawp,
            duration_as_input: false,
            split_ratio: 0.9,
            eval_interval: 250,
            adam: AdamConfig::default(),
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::invalid(format!("split_ratio {} outside (0, 1)", self.split_ratio)));
        }
        if !(self.lr_max >= self.lr_min && self.lr_min >= 0.0) {
            return Err(Error::invalid("need lr_max >= lr_min >= 0"));
        }
        if self.eval_interval == 0 {
            return Err(Error::invalid("eval_interval must be at least 1"));
        }
        self.effective_model().validate()
    }

    /// The model configuration with training-level switches applied.
    pub fn effective_model(&self) -> ModelConfig {
        ModelConfig { duration_as_input: self.duration_as_input, ..self.model.clone() }
    }

    /// Learning rate for the 0-based `step`: `lr_max` on the first update,
    /// `lr_min` on the last.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        cosine_lr(step, self.iterations.saturating_sub(1), self.lr_max, self.lr_min)
    }
}

/// Batch loss: per-metric mean squared error, summed over the metrics the
/// mode trains. `predictions` and `labels` hold `(first head, ECR)` pairs.
pub fn loss(predictions: &[(f64, f64)], labels: &[(f64, f64)], mode: Mode) -> Result<f64> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::invalid("predictions and labels must be aligned and non-empty"));
    }
    let n = predictions.len() as f64;
    let mse = |pick: fn(&(f64, f64)) -> f64| {
        predictions.iter().zip(labels).map(|(p, l)| (pick(p) - pick(l)).powi(2)).sum::<f64>() / n
    };
    let mut total = 0.0;
    if mode.trains_first_head() {
        total += mse(|x| x.0);
    }
    if mode.trains_ecr_head() {
        total += mse(|x| x.1);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub eval_srcc_nawp: Option<f64>,
    pub eval_srcc_ecr: Option<f64>,
}

/// One held-out prediction in label units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub video_id: String,
    pub nawp_hat: f64,
    pub ecr_hat: f64,
}

pub struct Trainer<'d> {
    config: TrainConfig,
    model: ModelConfig,
    data: &'d Dataset,
    train_idx: Vec<usize>,
    test_idx: Vec<usize>,
    params: ModelParams,
    adam: AdamState,
    step: u64,
}

impl<'d> Trainer<'d> {
    pub fn new(data: &'d Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config.effective_model(), config.seed)?;
        let adam = AdamState::new(params.iter().map(|(_, t)| t));
        Self::assemble(data, config, params, adam, 0)
    }

    /// Continues from a checkpoint produced under the same configuration.
    pub fn resume(data: &'d Dataset, config: TrainConfig, checkpoint: Checkpoint) -> Result<Self> {
        config.validate()?;
        checkpoint.check_config(&config)?;
        if checkpoint.step > config.iterations {
            return Err(Error::invalid("checkpoint is past the configured iteration count"));
        }
        Self::assemble(data, config, checkpoint.params, checkpoint.adam, checkpoint.step)
    }

    fn assemble(
        data: &'d Dataset,
        config: TrainConfig,
        params: ModelParams,
        adam: AdamState,
        step: u64,
    ) -> Result<Self> {
        data.check_labels(config.mode, config.target)?;
        let (train, test) = split_dataset(&data.ids(), config.split_ratio, config.seed)?;
        let index = |ids: Vec<String>| -> Vec<usize> {
            ids.iter().map(|id| data.position(id).expect("split ids come from the dataset")).collect()
        };
        let model = config.effective_model();
        for s in data.samples() {
            s.bundle.check_config(&model)?;
        }
        Ok(Trainer {
            model,
            data,
            train_idx: index(train),
            test_idx: index(test),
            params,
            adam,
            step,
            config,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn test_ids(&self) -> Vec<&str> {
        self.test_idx.iter().map(|&i| self.data.samples()[i].row.video_id.as_str()).collect()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            adam: self.adam.clone(),
            step: self.step,
            config_hash: config_hash(&self.config),
        }
    }

    /// Dataset indices for the batch taken at `step`. Each epoch is a fresh
    /// permutation of the training set drawn from `(seed, epoch)`.
    fn batch_at(&self, step: u64) -> Vec<usize> {
        let n = self.train_idx.len() as u64;
        let b = self.config.batch_size as u64;
        let mut perm_epoch = u64::MAX;
        let mut perm: Vec<usize> = Vec::new();
        (step * b..(step + 1) * b)
            .map(|pos| {
                let epoch = pos / n;
                if epoch != perm_epoch {
                    let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                    rng.set_stream(epoch + 1);
                    perm = self.train_idx.clone();
                    perm.shuffle(&mut rng);
                    perm_epoch = epoch;
                }
                perm[(pos % n) as usize]
            })
            .collect()
    }

    fn scaled_labels(&self, i: usize) -> (f64, f64) {
        let s = &self.data.samples()[i];
        let first = s.target_label(self.config.target).unwrap_or(0.0) / self.config.target.label_scale();
        (first, s.ecr_label().unwrap_or(0.0))
    }

    /// Runs one optimisation step and returns the batch loss.
    pub fn train_step(&mut self) -> Result<f64> {
        if self.step >= self.config.iterations {
            return Err(Error::invalid("training already finished"));
        }
        let lr = self.config.lr_at(self.step)?;
        let batch = self.batch_at(self.step);
        let inv_b = 1.0 / batch.len() as f64;
        let mut acc: Vec<Tensor> = self.params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect();
        let mut batch_loss = 0.0;
        for &i in &batch {
            let sample = &self.data.samples()[i];
            let mut tr = trace(&sample.bundle, &self.params, &self.model, Some(sample.row.duration_s))?;
            let (y1, y2) = self.scaled_labels(i);
            let g = &mut tr.graph;
            let mut terms = Vec::with_capacity(2);
            if self.config.mode.trains_first_head() {
                let t = g.constant(Tensor::scalar(y1));
                terms.push(g.squared_error(tr.nawp_hat, t)?);
            }
            if self.config.mode.trains_ecr_head() {
                let t = g.constant(Tensor::scalar(y2));
                terms.push(g.squared_error(tr.ecr_hat, t)?);
            }
            let mut total = terms[0];
            for &t in &terms[1..] {
                total = g.add(total, t)?;
            }
            let total = g.scale(total, inv_b)?;
            let value = g.value(total).item();
            if !value.is_finite() {
                return Err(Error::NonFinite("training loss"));
            }
            batch_loss += value;
            let grads = g.backward(total)?;
            for (a, &v) in acc.iter_mut().zip(&tr.param_vars) {
                if let Some(gr) = grads.get(v) {
                    for (x, y) in a.data_mut().iter_mut().zip(gr.data()) {
                        *x += y;
                    }
                }
            }
        }
        let grad_refs: Vec<&Tensor> = acc.iter().collect();
        let mut params = self.params.tensors_mut();
        adam_step(&mut params, &grad_refs, &mut self.adam, lr, &self.config.adam)?;
        self.step += 1;
        Ok(batch_loss)
    }

    /// Predictions in label units for the given dataset indices.
    fn predict_indices(&self, idx: &[usize]) -> Result<Vec<PredictionRow>> {
        let scale = self.config.target.label_scale();
        idx.iter()
            .map(|&i| {
                let s = &self.data.samples()[i];
                let tr = trace(&s.bundle, &self.params, &self.model, Some(s.row.duration_s))?;
                let p = tr.prediction();
                Ok(PredictionRow { video_id: s.row.video_id.clone(), nawp_hat: p.nawp_hat * scale, ecr_hat: p.ecr_hat })
            })
            .collect()
    }

    pub fn predict_test(&self) -> Result<Vec<PredictionRow>> {
        self.predict_indices(&self.test_idx)
    }

    /// Held-out SRCC for both heads; `None` where labels are missing or
    /// degenerate.
    pub fn evaluate(&self) -> Result<(Option<f64>, Option<f64>)> {
        let preds = self.predict_test()?;
        let samples: Vec<&Sample> = self.test_idx.iter().map(|&i| &self.data.samples()[i]).collect();
        let score = |pick: &dyn Fn(&PredictionRow) -> f64, label: &dyn Fn(&Sample) -> Option<f64>| {
            let truth: Option<Vec<f64>> = samples.iter().map(|s| label(s)).collect();
            let pred: Vec<f64> = preds.iter().map(pick).collect();
            truth.and_then(|t| evalkit::srcc(&pred, &t).ok())
        };
        let target = self.config.target;
        Ok((
            score(&|p| p.nawp_hat, &|s| s.target_label(target)),
            score(&|p| p.ecr_hat, &|s| s.ecr_label()),
        ))
    }

    /// Trains until `until` steps are complete (capped at the configured
    /// iteration count), calling `on_log` at every evaluation point.
    pub fn run_until(&mut self, until: u64, mut on_log: impl FnMut(&LogRecord)) -> Result<Vec<LogRecord>> {
        let until = until.min(self.config.iterations);
        let mut log = Vec::new();
        while self.step < until {
            let lr = self.config.lr_at(self.step)?;
            let train_loss = self.train_step()?;
            if self.step.is_multiple_of(self.config.eval_interval) || self.step == self.config.iterations {
                let (eval_srcc_nawp, eval_srcc_ecr) = self.evaluate()?;
                let rec = LogRecord { step: self.step, lr, train_loss, eval_srcc_nawp, eval_srcc_ecr };
                on_log(&rec);
                log.push(rec);
            }
        }
        Ok(log)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRecord>,
    pub test_predictions: Vec<PredictionRow>,
}

/// Full training run from initialisation.
pub fn train(data: &Dataset, config: TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(data, config)?;
    let iterations = trainer.config.iterations;
    let log = trainer.run_until(iterations, |_| {})?;
    Ok(TrainOutcome {
        checkpoint: trainer.checkpoint(),
        log,
        test_predictions: trainer.predict_test()?,
    })
}

/// Predictions for every sample in `data` under trained `params`.
pub fn predict(data: &Dataset, params: &ModelParams, config: &TrainConfig) -> Result<Vec<PredictionRow>> {
    let model = config.effective_model();
    params.check_config(&model)?;
    let scale = config.target.label_scale();
    data.samples()
        .iter()
        .map(|s| {
            let tr = trace(&s.bundle, params, &model, Some(s.row.duration_s))?;
            let p = tr.prediction();
            Ok(PredictionRow { video_id: s.row.video_id.clone(), nawp_hat: p.nawp_hat * scale, ecr_hat: p.ecr_hat })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let p = [(0.3, 0.4)];
        let l = [(0.0, 0.0)];
        assert!((loss(&p, &l, Mode::Joint).unwrap() - 0.25).abs() < 1e-15);
        assert!((loss(&p, &l, Mode::NawpOnly).unwrap() - 0.09).abs() < 1e-15);
        assert!((loss(&p, &l, Mode::EcrOnly).unwrap() - 0.16).abs() < 1e-15);
        assert_eq!(loss(&p, &p, Mode::Joint).unwrap(), 0.0);
        assert!(loss(&p, &[], Mode::Joint).is_err());
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig { iterations: 101, ..TrainConfig::default() };
        assert_eq!(cfg.lr_at(0).unwrap(), 1e-4);
        assert!((cfg.lr_at(100).unwrap() - 1e-7).abs() < 1e-20);
        assert!(cfg.lr_at(101).is_err());
    }

    #[test]
    fn config_json_uses_defaults_for_missing_fields() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"iterations": 10, "mode": "nawp_only"}"#).unwrap();
        assert_eq!(cfg.iterations, 10);
        assert_eq!(cfg.mode, Mode::NawpOnly);
        assert_eq!(cfg.batch_size, 8);
        assert!(TrainConfig { split_ratio: 1.0, ..cfg }.validate().is_err());
    }
}
