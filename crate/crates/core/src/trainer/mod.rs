//! Mini-batch training, evaluation and the synthetic data generator.

mod synth;

pub use synth::{synth_dataset, synth_generate, SynthClass, SynthSpec, SYNTH_JOINTS};

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsig::Dsig;
use crate::model::{IgFormer, ParamSet};
use crate::optim::SgdNesterov;
use crate::skeleton::InteractionSample;
use crate::tensor::{Tensor, TensorError};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Joint noise added to training samples, metres.
    pub noise_sigma_m: f64,
    pub weight_decay: f64,
    /// Global gradient norm cap; off when absent.
    pub clip_grad_norm: Option<f64>,
    /// Share of the training set held out for validation when no separate
    /// validation set is given.
    pub val_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            momentum: 0.9,
            milestones: vec![30, 40],
            lr_decay: 0.1,
            epochs: 60,
            batch_size: 32,
            seed: 0,
            noise_sigma_m: 0.0,
            weight_decay: 0.0,
            clip_grad_norm: None,
            val_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return fail("epochs and batch_size must be positive".into());
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!("milestones {:?} must be strictly increasing", self.milestones));
        }
        if self.milestones.last().is_some_and(|&m| m >= self.epochs) {
            return fail(format!("milestones {:?} must lie below epochs = {}", self.milestones, self.epochs));
        }
        if !(self.noise_sigma_m >= 0.0) {
            return fail(format!("noise_sigma_m must be non-negative, got {}", self.noise_sigma_m));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail(format!("val_fraction must be in [0, 1), got {}", self.val_fraction));
        }
        if self.clip_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return fail("clip_grad_norm must be positive".into());
        }
        Ok(())
    }
}

/// `lr · decay^(milestones passed)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let passed = cfg.milestones.iter().filter(|&&m| epoch >= m).count();
    cfg.lr * cfg.lr_decay.powi(passed as i32)
}

/// A padded sample with its distance graphs.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub sample: InteractionSample,
    pub dsig: Dsig,
}

impl Example {
    /// Pads to the model's frame count and builds the distance graphs.
    pub fn prepare(sample: &InteractionSample, model: &IgFormer) -> Result<Self> {
        let sample = sample.padded(model.config.spm.frames)?;
        let dsig = model.graphs(&sample)?.dsig;
        Ok(Self { sample, dsig })
    }
}

pub fn prepare_examples(samples: &[InteractionSample], model: &IgFormer) -> Result<Vec<Example>> {
    samples.iter().map(|s| Example::prepare(s, model)).collect()
}

/// Seeded split into `(train, held_out)`, keeping at least one training item.
pub fn split_holdout<T: Clone>(items: &[T], fraction: f64, seed: u64) -> (Vec<T>, Vec<T>) {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0f_5911));
    let held = ((items.len() as f64 * fraction).round() as usize).min(items.len().saturating_sub(1));
    let (val, train) = order.split_at(held);
    let mut train = train.to_vec();
    let mut val = val.to_vec();
    train.sort_unstable();
    val.sort_unstable();
    (
        train.iter().map(|&i| items[i].clone()).collect(),
        val.iter().map(|&i| items[i].clone()).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

impl fmt::Display for EpochMetrics {
    /// Tab-separated `epoch, lr, train_loss, train_acc, val_acc`; a missing
    /// validation accuracy prints as `-`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{:e}\t{:.6}\t{:.4}\t", self.epoch, self.lr, self.train_loss, self.train_acc)?;
        match self.val_acc {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("-"),
        }
    }
}

pub const METRICS_HEADER: &str = "epoch\tlr\ttrain_loss\ttrain_acc\tval_acc";

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochMetrics>,
    pub steps: usize,
}

impl TrainReport {
    pub fn metrics_log(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for m in &self.epochs {
            out += &format!("{m}\n");
        }
        out
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed ^ a.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ b.wrapping_mul(0xc2b2_ae3d_27d4_eb4f);
    x ^= x >> 31;
    x = x.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x ^ (x >> 29)
}

fn global_norm(grads: &ParamSet) -> f64 {
    grads.values().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
}

fn divergence_report(model: &IgFormer, grads: Option<&ParamSet>, what: &str) -> Error {
    let mut msg = format!("{what}; parameter norm {:.4e}", global_norm(&model.params));
    if let Some(g) = grads {
        msg += &format!(", gradient norm {:.4e}", global_norm(g));
        let worst = g
            .iter()
            .map(|(n, t)| (n, t.norm()))
            .filter(|(_, v)| !v.is_finite() || *v > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((name, v)) = worst {
            msg += &format!(", largest gradient {name} ({v:.4e})");
        }
    }
    Error::Diverged(msg)
}

/// Trains in place. Batches are summed in a fixed order so a run is fully
/// determined by the seed, configuration and data. `on_epoch` sees each
/// epoch's metrics as soon as they are known.
pub fn train(
    model: &mut IgFormer,
    cfg: &TrainConfig,
    train_set: &[Example],
    val_set: &[Example],
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut opt = SgdNesterov::new(cfg.momentum);
    opt.weight_decay = cfg.weight_decay;
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 1, 0));
    let use_dropout = model.config.dropout > 0.0;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut report = TrainReport {
        epochs: Vec::with_capacity(cfg.epochs),
        steps: 0,
    };

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut order_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut total: Option<ParamSet> = None;
            for &i in batch {
                let ex = &train_set[i];
                let noisy;
                let (sample, dsig) = if cfg.noise_sigma_m > 0.0 {
                    let s = ex.sample.with_noise(cfg.noise_sigma_m, mix(cfg.seed, epoch as u64 + 2, i as u64))?;
                    let g = model.graphs(&s)?.dsig;
                    noisy = (s, g);
                    (&noisy.0, &noisy.1)
                } else {
                    (&ex.sample, &ex.dsig)
                };
                let rng = use_dropout.then_some(&mut dropout_rng);
                let step = match model.sample_grad(sample, dsig, rng) {
                    Err(Error::Tensor(TensorError::NonFinite { op })) => {
                        return Err(divergence_report(model, total.as_ref(), &format!("non-finite value in {op} at epoch {epoch}")))
                    }
                    other => other?,
                };
                if !step.loss.is_finite() {
                    return Err(divergence_report(model, Some(&step.grads), &format!("loss is {} at epoch {epoch}", step.loss)));
                }
                loss_sum += step.loss;
                if argmax(&step.logits) == ex.sample.label {
                    correct += 1;
                }
                match total.as_mut() {
                    None => total = Some(step.grads),
                    Some(t) => {
                        for (name, g) in step.grads {
                            t.get_mut(&name).expect("same parameter set").add_assign(&g);
                        }
                    }
                }
            }
            let mut grads = total.expect("non-empty batch");
            let inv = 1.0 / batch.len() as f64;
            for g in grads.values_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            let norm = global_norm(&grads);
            if !norm.is_finite() {
                return Err(divergence_report(model, Some(&grads), &format!("gradient is not finite at epoch {epoch}")));
            }
            if let Some(cap) = cfg.clip_grad_norm.filter(|&c| norm > c) {
                let s = cap / norm;
                for g in grads.values_mut() {
                    g.data_mut().iter_mut().for_each(|v| *v *= s);
                }
            }
            opt.step(&mut model.params, &grads, lr)?;
            report.steps += 1;
        }
        let val_acc = if val_set.is_empty() {
            None
        } else {
            Some(evaluate(model, val_set)?.accuracy)
        };
        let metrics = EpochMetrics {
            epoch,
            lr,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
        };
        log::info!("{metrics}");
        on_epoch(&metrics);
        report.epochs.push(metrics);
    }
    Ok(report)
}

pub fn argmax(logits: &Tensor) -> usize {
    logits
        .data()
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// `None` for classes absent from the evaluated set.
    pub per_class: Vec<Option<f64>>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub total: usize,
}

impl EvalReport {
    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Config("cannot evaluate an empty dataset".into()));
        }
        if labels.len() != predictions.len() {
            return Err(Error::Config("label and prediction counts differ".into()));
        }
        let mut confusion = vec![vec![0usize; classes]; classes];
        for (&l, &p) in labels.iter().zip(predictions) {
            if l >= classes || p >= classes {
                return Err(Error::Config(format!("class index {} outside {classes} classes", l.max(p))));
            }
            confusion[l][p] += 1;
        }
        let trace: usize = (0..classes).map(|c| confusion[c][c]).sum();
        let per_class = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let n: usize = row.iter().sum();
                (n > 0).then(|| row[c] as f64 / n as f64)
            })
            .collect();
        Ok(Self {
            accuracy: trace as f64 / labels.len() as f64,
            per_class,
            confusion,
            total: labels.len(),
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "accuracy\t{:.4}\t({} samples)", self.accuracy, self.total)?;
        for (c, acc) in self.per_class.iter().enumerate() {
            match acc {
                Some(a) => writeln!(f, "class {c}\t{a:.4}")?,
                None => writeln!(f, "class {c}\t-")?,
            }
        }
        writeln!(f, "confusion (rows: true, columns: predicted)")?;
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(f, "{}", cells.join("\t"))?;
        }
        Ok(())
    }
}

pub fn evaluate(model: &IgFormer, examples: &[Example]) -> Result<EvalReport> {
    let mut labels = Vec::with_capacity(examples.len());
    let mut preds = Vec::with_capacity(examples.len());
    for ex in examples {
        labels.push(ex.sample.label);
        preds.push(argmax(&model.logits(&ex.sample, &ex.dsig)?));
    }
    EvalReport::from_predictions(&labels, &preds, model.config.num_classes)
}

/// Evaluates with joint noise of standard deviation `sigma_m` added to every
/// sample; graphs are rebuilt from the noisy coordinates.
pub fn evaluate_noisy(model: &IgFormer, examples: &[Example], sigma_m: f64, seed: u64) -> Result<EvalReport> {
    if sigma_m == 0.0 {
        return evaluate(model, examples);
    }
    let noisy = examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let sample = ex.sample.with_noise(sigma_m, mix(seed, 1 << 32, i as u64))?;
            let dsig = model.graphs(&sample)?.dsig;
            Ok(Example { sample, dsig })
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate(model, &noisy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::skeleton::builtin_part_map;
    use crate::spm::SpmConfig;

    pub(crate) fn tiny_model(seed: u64) -> IgFormer {
        let cfg = ModelConfig {
            itb_layers: 1,
            hidden: 8,
            heads: 2,
            num_classes: 4,
            k: 5,
            spm: SpmConfig {
                patch: 4,
                stride: 4,
                padding: 0,
                frames: 16,
                per_part_projection: false,
            },
            ..ModelConfig::default()
        };
        IgFormer::new(cfg, builtin_part_map(15).unwrap(), seed).unwrap()
    }

    #[test]
    fn schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.01);
        assert_eq!(lr_at(29, &cfg), 0.01);
        assert!((lr_at(30, &cfg) - 0.001).abs() < 1e-15);
        assert!((lr_at(40, &cfg) - 0.0001).abs() < 1e-15);
        assert!((lr_at(59, &cfg) - 0.0001).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let bad = [
            TrainConfig { milestones: vec![40, 30], ..Default::default() },
            TrainConfig { milestones: vec![30, 60], ..Default::default() },
            TrainConfig { lr: 0.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn step_count_and_determinism() {
        let model = tiny_model(1);
        let samples = synth_dataset(4, 4, 16, 3).unwrap();
        let data = prepare_examples(&samples, &model).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            milestones: vec![],
            ..Default::default()
        };
        let mut a = model.clone();
        let ra = train(&mut a, &cfg, &data, &data[..2], |_| {}).unwrap();
        assert_eq!(ra.steps, 2);
        let mut b = model.clone();
        let rb = train(&mut b, &cfg, &data, &data[..2], |_| {}).unwrap();
        assert_eq!(ra.metrics_log(), rb.metrics_log());
        assert_eq!(a, b);
        assert_ne!(a.params, model.params);
    }

    #[test]
    fn overfit_one_batch() {
        let mut model = tiny_model(2);
        let samples = synth_dataset(2, 2, 16, 5).unwrap();
        let data = prepare_examples(&samples, &model).unwrap();
        let loss = |m: &IgFormer| -> f64 {
            data.iter().map(|e| m.sample_grad(&e.sample, &e.dsig, None).unwrap().loss).sum()
        };
        let before = loss(&model);
        let cfg = TrainConfig {
            lr: 0.005,
            epochs: 1,
            batch_size: 2,
            milestones: vec![],
            ..Default::default()
        };
        train(&mut model, &cfg, &data, &[], |_| {}).unwrap();
        assert!(loss(&model) < before);
    }

    #[test]
    fn evaluation_fixtures() {
        let labels = [0, 1, 2, 3, 0, 1, 2, 3];
        let perfect = EvalReport::from_predictions(&labels, &labels, 4).unwrap();
        assert_eq!(perfect.accuracy, 1.0);
        for (i, row) in perfect.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v, if i == j { 2 } else { 0 });
            }
        }
        let constant = EvalReport::from_predictions(&labels, &[2; 8], 4).unwrap();
        assert_eq!(constant.accuracy, 0.25);
        let trace: usize = (0..4).map(|c| constant.confusion[c][c]).sum();
        assert_eq!(constant.accuracy, trace as f64 / 8.0);
        assert!(EvalReport::from_predictions(&[], &[], 4).is_err());
    }

    #[test]
    fn holdout_split() {
        let items: Vec<usize> = (0..10).collect();
        let (t, v) = split_holdout(&items, 0.2, 1);
        assert_eq!((t.len(), v.len()), (8, 2));
        assert_eq!(split_holdout(&items, 0.2, 1), (t, v));
        let (t, v) = split_holdout(&[1], 0.5, 1);
        assert_eq!((t.len(), v.len()), (1, 0));
    }

    #[test]
    fn metrics_line_format() {
        let m = EpochMetrics {
            epoch: 3,
            lr: 0.01,
            train_loss: 1.25,
            train_acc: 0.5,
            val_acc: Some(0.75),
        };
        assert_eq!(m.to_string(), "3\t1e-2\t1.250000\t0.5000\t0.7500");
    }
}
