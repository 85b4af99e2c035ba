//! Mini-batch SGD on cross-entropy.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{LayerParams, LayeredModel, ParamSet};
use crate::rng::{self, Domain};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    Mlp,
    Cnn,
}

impl Architecture {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(Self::Mlp),
            "cnn" => Ok(Self::Cnn),
            other => Err(Error::Config(format!("unknown architecture '{other}'"))),
        }
    }

    pub fn build(self, input_shape: [usize; 3], classes: usize, seed: u64) -> Result<LayeredModel> {
        match self {
            Self::Mlp => LayeredModel::reference_mlp(input_shape, classes, seed),
            Self::Cnn => LayeredModel::reference_cnn(input_shape, classes, seed),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub architecture: Architecture,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::Cnn,
            epochs: 8,
            learning_rate: 0.05,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

/// Plain SGD. Each epoch shuffles with the `(seed, epoch)` stream, averages
/// per-sample gradients over each batch (summed in batch order) and takes one
/// step of the learning rate.
pub fn train_model(
    mut model: LayeredModel,
    images: &[Image],
    labels: &[usize],
    config: &TrainConfig,
) -> Result<(LayeredModel, Vec<EpochLog>)> {
    if images.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if images.len() != labels.len() {
        return Err(Error::InvalidInput("images and labels differ in length".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Config("learning rate must be finite and >= 0".into()));
    }
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..images.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, Domain::Shuffle, epoch as u64, 0));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in order.chunks(config.batch_size) {
            let grads = batch
                .par_iter()
                .map(|&i| model.loss_gradients(&images[i], labels[i]))
                .collect::<Result<Vec<_>>>()?;
            let mut total: ParamSet = model
                .params()
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| LayerParams {
                        weight: crate::tensor::Tensor::zeros(p.weight.shape()),
                        bias: crate::tensor::Tensor::zeros(p.bias.shape()),
                    })
                })
                .collect();
            for (g, &i) in grads.iter().zip(batch) {
                if !g.loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "loss diverged at epoch {epoch} (non-finite value {}); lower the learning rate",
                        g.loss
                    )));
                }
                loss_sum += g.loss;
                correct += (g.predicted_class == labels[i]) as usize;
                for (t, p) in total.iter_mut().zip(&g.params) {
                    if let (Some(t), Some(p)) = (t, p) {
                        add_into(t.weight.data_mut(), p.weight.data());
                        add_into(t.bias.data_mut(), p.bias.data());
                    }
                }
            }
            if config.learning_rate == 0.0 {
                continue;
            }
            let step = config.learning_rate / batch.len() as f64;
            let mut params = model.params().to_vec();
            for (p, g) in params.iter_mut().zip(&total) {
                if let (Some(p), Some(g)) = (p, g) {
                    sub_scaled(p.weight.data_mut(), g.weight.data(), step);
                    sub_scaled(p.bias.data_mut(), g.bias.data(), step);
                }
            }
            if params.iter().flatten().any(|p| !p.weight.is_finite() || !p.bias.is_finite()) {
                return Err(Error::Numeric(format!("parameters diverged at epoch {epoch}")));
            }
            model = model.with_params(params)?;
        }
        let log = EpochLog {
            epoch,
            loss: loss_sum / images.len() as f64,
            accuracy: correct as f64 / images.len() as f64,
        };
        log::info!("epoch {} loss {:.4} accuracy {:.3}", log.epoch, log.loss, log.accuracy);
        logs.push(log);
    }
    Ok((model, logs))
}

fn add_into(acc: &mut [f64], v: &[f64]) {
    acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
}

fn sub_scaled(p: &mut [f64], g: &[f64], s: f64) {
    p.iter_mut().zip(g).for_each(|(a, b)| *a -= s * b);
}

/// Fraction of `images` predicted as their label.
pub fn accuracy(model: &LayeredModel, images: &[Image], labels: &[usize]) -> Result<f64> {
    if images.is_empty() {
        return Ok(0.0);
    }
    let hits = images
        .par_iter()
        .zip(labels)
        .map(|(img, &l)| Ok((model.predict(img)? == l) as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / images.len() as f64)
}
