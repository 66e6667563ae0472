//! Loss, optimization loop, evaluation and map export.

mod map;
mod metrics;
mod optim;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use map::{class_color, render_ppm, write_ppm, PALETTE};
pub use metrics::Metrics;
pub use optim::Adam;

use crate::autograd::Graph;
use crate::backbone::{argmax, SfNet};
use crate::data::{RasterPair, SplitSpec};
use crate::error::{Error, Result};
use crate::tensor::{Precision, Scalar, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Seeds the per-epoch shuffle.
    pub seed: u64,
    pub precision: Precision,
    /// Written after the last epoch when set.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 7,
            precision: Precision::Standard,
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!("learning rate {} must be finite and non-negative", self.learning_rate)));
        }
        for (b, name) in [(self.beta1, "beta1"), (self.beta2, "beta2")] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} must lie in [0, 1)")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps {} must be positive", self.eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|r| r.loss)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,train_accuracy\n");
        for r in &self.epochs {
            let _ = writeln!(out, "{},{},{}", r.epoch, r.loss, r.train_accuracy);
        }
        out
    }
}

/// Model inputs and 0-based class for one pixel.
pub struct Sample<T: Scalar> {
    pub index: usize,
    pub hsi: Tensor<T>,
    pub aux: Tensor<T>,
    pub class: usize,
}

/// Builds samples for `indices` from a raster already passed through
/// [`SfNet::reduce`]. Unlabeled pixels get class `usize::MAX`.
pub fn prepare_samples<T: Scalar>(model: &SfNet<T>, reduced: &RasterPair, indices: &[usize]) -> Result<Vec<Sample<T>>> {
    indices
        .iter()
        .map(|&index| {
            let (hsi, aux) = model.sample(reduced, index)?;
            let class = (reduced.labels()[index] as usize).wrapping_sub(1);
            Ok(Sample { index, hsi, aux, class })
        })
        .collect()
}

/// `−log softmax(logits)[label]`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> Result<T> {
    let g = Graph::new();
    Ok(g.constant(logits.clone()).cross_entropy(label)?.value().item())
}

struct SampleStep<T: Scalar> {
    loss: T,
    correct: bool,
    grads: Vec<Option<Tensor<T>>>,
}

fn sample_step<T: Scalar>(model: &SfNet<T>, s: &Sample<T>) -> Result<SampleStep<T>> {
    let g = Graph::new();
    let p = model.store().bind(&g, true);
    let logits = model.forward(&p, g.constant(s.hsi.clone()), g.constant(s.aux.clone()))?;
    let correct = argmax(logits.value().data()) == s.class;
    let loss = logits.cross_entropy(s.class)?;
    g.backward(loss)?;
    Ok(SampleStep {
        loss: loss.value().item(),
        correct,
        grads: p.grads(),
    })
}

fn accumulate<T: Scalar>(total: &mut [Option<Vec<T>>], grads: Vec<Option<Tensor<T>>>) {
    for (acc, g) in total.iter_mut().zip(grads) {
        let Some(g) = g else { continue };
        match acc {
            Some(a) => a.iter_mut().zip(g.data()).for_each(|(x, &y)| *x = *x + y),
            None => *acc = Some(g.to_vec()),
        }
    }
}

/// Trains on `split.train` with minibatch Adam. Per-sample gradients are
/// computed in parallel and reduced in batch order, so results depend only
/// on the seeds.
pub fn train<T: Scalar>(model: &mut SfNet<T>, raster: &RasterPair, split: &SplitSpec, cfg: &TrainConfig) -> Result<History> {
    train_with(model, raster, split, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Scalar>(
    model: &mut SfNet<T>,
    raster: &RasterPair,
    split: &SplitSpec,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<History> {
    cfg.validate()?;
    if cfg.precision != T::PRECISION {
        return Err(Error::Config(format!(
            "training asks for {} precision, model scalar is {}",
            cfg.precision,
            T::PRECISION
        )));
    }
    if split.train.is_empty() {
        return Err(Error::Split("training split is empty".into()));
    }
    let reduced = model.reduce(raster)?;
    let samples = prepare_samples(model, &reduced, &split.train)?;
    if let Some(s) = samples.iter().find(|s| s.class >= model.config().n_classes) {
        return Err(Error::Split(format!("training pixel {} is unlabeled", s.index)));
    }

    let shapes: Vec<Vec<usize>> = model.store().iter().map(|(_, t)| t.shape().to_vec()).collect();
    let mut adam = Adam::new(model.store(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps);
    let mut history = History::default();
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let net = &*model;
            let results: Vec<Result<SampleStep<T>>> = batch.par_iter().map(|&i| sample_step(net, &samples[i])).collect();
            let mut total: Vec<Option<Vec<T>>> = vec![None; shapes.len()];
            let mut batch_loss = 0.0f64;
            for (&i, r) in batch.iter().zip(results) {
                let r = r?;
                let value = r.loss.to_f64().unwrap_or(f64::NAN);
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch,
                        step,
                        sample: samples[i].index,
                        value,
                    });
                }
                batch_loss += value;
                correct += r.correct as usize;
                accumulate(&mut total, r.grads);
            }
            loss_sum += batch_loss;
            let inv = T::lit(1.0 / batch.len() as f64);
            let grads = total
                .into_iter()
                .zip(&shapes)
                .map(|(g, shape)| {
                    g.map(|v| Tensor::new(shape.clone(), v.into_iter().map(|x| x * inv).collect()))
                        .transpose()
                })
                .collect::<Result<Vec<_>>>()?;
            adam.update(model.store_mut(), &grads)?;
        }
        let record = EpochRecord {
            epoch,
            loss: loss_sum / samples.len() as f64,
            train_accuracy: correct as f64 / samples.len() as f64,
        };
        on_epoch(&record);
        history.epochs.push(record);
    }
    if let Some(path) = &cfg.checkpoint {
        model.save(path)?;
    }
    Ok(history)
}

/// 0-based predicted class for each pixel index, in input order.
pub fn predict_pixels<T: Scalar>(model: &SfNet<T>, raster: &RasterPair, indices: &[usize]) -> Result<Vec<usize>> {
    let reduced = model.reduce(raster)?;
    indices
        .par_iter()
        .map(|&i| {
            let (hsi, aux) = model.sample(&reduced, i)?;
            model.predict(&hsi, &aux)
        })
        .collect()
}

/// Metrics over the labeled pixels among `indices`.
pub fn evaluate<T: Scalar>(model: &SfNet<T>, raster: &RasterPair, indices: &[usize]) -> Result<Metrics> {
    let labeled: Vec<usize> = indices.iter().copied().filter(|&i| raster.labels()[i] > 0).collect();
    if labeled.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let predicted = predict_pixels(model, raster, &labeled)?;
    let truth: Vec<usize> = labeled.iter().map(|&i| raster.labels()[i] as usize - 1).collect();
    Metrics::from_predictions(&truth, &predicted, model.config().n_classes)
}

/// Row-major map of 1-based predicted classes for every labeled pixel, 0
/// elsewhere.
pub fn classification_map<T: Scalar>(model: &SfNet<T>, raster: &RasterPair) -> Result<Vec<usize>> {
    let labeled = raster.labeled_pixels();
    let mut map = vec![0usize; raster.labels().len()];
    for (i, c) in labeled.iter().zip(predict_pixels(model, raster, &labeled)?) {
        map[*i] = c + 1;
    }
    Ok(map)
}

pub fn export_map<T: Scalar>(model: &SfNet<T>, raster: &RasterPair, path: impl AsRef<Path>) -> Result<()> {
    let map = classification_map(model, raster)?;
    write_ppm(path, raster.height(), raster.width(), &map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cross_entropy_reference_values() {
        let uniform = Tensor::<f64>::zeros([5]);
        assert!((cross_entropy(&uniform, 3).unwrap() - 5f64.ln()).abs() < 1e-12);
        let sat = Tensor::<f64>::from_f64([3], &[-20.0, 20.0, -20.0]).unwrap();
        assert!(cross_entropy(&sat, 1).unwrap() < 1e-8);
        let t = Tensor::<f64>::from_f64([3], &[1.0, 2.0, 3.0]).unwrap();
        assert!((cross_entropy(&t, 2).unwrap() - 0.40761).abs() < 1e-4);
        assert!(cross_entropy(&t, 3).is_err());
    }

    #[test]
    fn config_contract() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -1.0, ..TrainConfig::default() },
            TrainConfig { learning_rate: f64::NAN, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
