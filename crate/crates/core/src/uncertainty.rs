//! Gradient-sensitivity uncertainty under adaptive weight perturbation.
//!
//! For an input `x` the model's parametric layers are perturbed `T` times as
//! `θ + α·σ_ℓ·u(x)·ε`, where `σ_ℓ` is the layer's weight standard deviation
//! and `u(x) = 1 + β·tanh(γ(‖φ(x) − φ̄‖ − ρ₀))` grows with the distance of the
//! penultimate feature from the training centroid. Each pass records the
//! norm of `∂ŷ/∂a_k` for every selected layer; the pass-averaged norms form
//! the sample's descriptor, which is scored by a ridge-regularized
//! Mahalanobis distance to the training descriptors and min-max normalized.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::{population_std, LayerParams, LayeredModel};
use crate::rng::{self, Domain};
use crate::scores::ClassPrototype;

pub const STATS_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Ridge added to the descriptor covariance. `None` picks
    /// `1e-4 · trace(Σ) / K`, floored at `1e-8`.
    pub lambda_ridge: Option<f64>,
    pub passes: usize,
    pub seed: u64,
    pub layers: Vec<String>,
}

impl UncertaintyConfig {
    /// Defaults over every parametric layer of `model`.
    pub fn for_model(model: &LayeredModel) -> Self {
        Self {
            alpha: 0.05,
            beta: 0.5,
            gamma: 1.0,
            lambda_ridge: None,
            passes: 8,
            seed: 0,
            layers: model.parametric_layers(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must lie in [0, 1), got {}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if let Some(l) = self.lambda_ridge {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(Error::Config(format!("lambda must be >= 0, got {l}")));
            }
        }
        if self.passes == 0 {
            return Err(Error::Config("at least one stochastic pass is required".into()));
        }
        if self.layers.is_empty() {
            return Err(Error::Config("no layers selected for the descriptor".into()));
        }
        Ok(())
    }

    /// Model layer indices of the selected layers.
    pub fn layer_indices(&self, model: &LayeredModel) -> Result<Vec<usize>> {
        self.validate()?;
        self.layers
            .iter()
            .map(|name| {
                let idx = model.layer_index(name)?;
                if !model.specs()[idx].trainable() {
                    return Err(Error::Config(format!("layer '{name}' has no parameters")));
                }
                Ok(idx)
            })
            .collect()
    }
}

/// Penultimate-feature centroid and median distance to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub centroid: Vec<f64>,
    pub rho0: f64,
}

impl FeatureStats {
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let first = features
            .first()
            .ok_or_else(|| Error::Data("no features to fit".into()))?;
        let dim = first.len();
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::Shape("feature dimensions differ".into()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite penultimate feature".into()));
        }
        let n = features.len() as f64;
        let mut centroid = vec![0.0; dim];
        for f in features {
            for (c, v) in centroid.iter_mut().zip(f) {
                *c += v;
            }
        }
        centroid.iter_mut().for_each(|c| *c /= n);
        let mut dists: Vec<f64> = features.iter().map(|f| euclidean(f, &centroid)).collect();
        dists.sort_by(f64::total_cmp);
        let rho0 = dists[(dists.len() - 1) / 2];
        Ok(Self { centroid, rho0 })
    }

    pub fn distance(&self, feature: &[f64]) -> Result<f64> {
        if feature.len() != self.centroid.len() {
            return Err(Error::Shape(format!(
                "feature has {} dims, centroid {}",
                feature.len(),
                self.centroid.len()
            )));
        }
        Ok(euclidean(feature, &self.centroid))
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `1 + β·tanh(γ(‖feature − φ̄‖₂ − ρ₀))`, strictly inside `(1 − β, 1 + β)`
/// when `β > 0`.
pub fn modulation_factor(stats: &FeatureStats, feature: &[f64], beta: f64, gamma: f64) -> Result<f64> {
    let dist = stats.distance(feature)?;
    Ok(modulation_from_distance(dist - stats.rho0, beta, gamma))
}

pub(crate) fn modulation_from_distance(offset: f64, beta: f64, gamma: f64) -> f64 {
    if beta == 0.0 {
        return 1.0;
    }
    let u = 1.0 + beta * (gamma * offset).tanh();
    // tanh rounds to ±1 for large arguments
    let (lo, hi) = (1.0 - beta, 1.0 + beta);
    if u >= hi {
        hi.next_down()
    } else if u <= lo {
        lo.next_up()
    } else {
        u
    }
}

/// `θ + α·σ·u·ε` for weights and biases, `ε` standard normal from `rng`
/// (weights drawn first, then biases).
pub fn perturb_weights<R: Rng>(
    params: &LayerParams,
    sigma: f64,
    modulation: f64,
    alpha: f64,
    rng: &mut R,
) -> LayerParams {
    let scale = alpha * sigma * modulation;
    let mut out = params.clone();
    if scale == 0.0 {
        return out;
    }
    for v in out.weight.data_mut().iter_mut().chain(out.bias.data_mut().iter_mut()) {
        let eps: f64 = rng.sample(StandardNormal);
        *v += scale * eps;
    }
    out
}

/// Per-layer gradient-norm descriptor of one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub values: Vec<f64>,
}

/// Clean-pass quantities shared by every stochastic pass of one image.
#[derive(Clone, Debug)]
pub struct PassContext {
    pub class: usize,
    pub modulation: f64,
    layer_indices: Vec<usize>,
    sigmas: Vec<f64>,
}

impl PassContext {
    pub fn new(
        model: &LayeredModel,
        image: &Image,
        features: &FeatureStats,
        config: &UncertaintyConfig,
    ) -> Result<Self> {
        Self::with_class(model, image, features, config, None)
    }

    /// As [`PassContext::new`], but differentiating `class` instead of the
    /// clean prediction when one is given.
    pub fn with_class(
        model: &LayeredModel,
        image: &Image,
        features: &FeatureStats,
        config: &UncertaintyConfig,
        class: Option<usize>,
    ) -> Result<Self> {
        let layer_indices = config.layer_indices(model)?;
        let (feature, logits) = model.feature_and_logits(image)?;
        let class = match class {
            Some(c) if c >= logits.len() => {
                return Err(Error::InvalidInput(format!("class {c} out of range")))
            }
            Some(c) => c,
            None => crate::model::argmax_lowest(&logits),
        };
        let modulation = modulation_factor(features, &feature, config.beta, config.gamma)?;
        let sigmas = layer_indices
            .iter()
            .map(|&i| {
                let p = model.params()[i].as_ref().expect("parametric layer");
                population_std(p.weight.data())
            })
            .collect();
        Ok(Self {
            class,
            modulation,
            layer_indices,
            sigmas,
        })
    }

    /// Gradient norms of the clean (unperturbed) model.
    pub fn clean_norms(&self, model: &LayeredModel, image: &Image) -> Result<Vec<f64>> {
        let g = model.class_gradients(image, self.class, model.params())?;
        Ok(self
            .layer_indices
            .iter()
            .map(|&i| g.activation_grad_norm(model, i))
            .collect())
    }

    /// `η^(t)`: perturb the selected layers with the `(seed, pass, layer)`
    /// stream and take `‖∂ŷ/∂a_k‖₂` for each of them.
    pub fn pass_norms(
        &self,
        model: &LayeredModel,
        image: &Image,
        config: &UncertaintyConfig,
        pass_index: usize,
    ) -> Result<Vec<f64>> {
        let mut params = model.params().to_vec();
        for (&layer, &sigma) in self.layer_indices.iter().zip(&self.sigmas) {
            let mut rng = rng::stream(config.seed, Domain::Perturbation, pass_index as u64, layer as u64);
            let base = params[layer].as_ref().expect("parametric layer");
            params[layer] = Some(perturb_weights(base, sigma, self.modulation, config.alpha, &mut rng));
        }
        let g = model.class_gradients(image, self.class, &params)?;
        Ok(self
            .layer_indices
            .iter()
            .map(|&i| g.activation_grad_norm(model, i))
            .collect())
    }
}

pub fn stochastic_pass(
    model: &LayeredModel,
    image: &Image,
    features: &FeatureStats,
    config: &UncertaintyConfig,
    pass_index: usize,
) -> Result<Vec<f64>> {
    PassContext::new(model, image, features, config)?.pass_norms(model, image, config, pass_index)
}

/// Average of the `T` pass norm vectors, summed in pass order.
pub fn compute_descriptor(
    model: &LayeredModel,
    image: &Image,
    features: &FeatureStats,
    config: &UncertaintyConfig,
) -> Result<Descriptor> {
    descriptor_with_class(model, image, features, config, None)
}

pub fn descriptor_with_class(
    model: &LayeredModel,
    image: &Image,
    features: &FeatureStats,
    config: &UncertaintyConfig,
    class: Option<usize>,
) -> Result<Descriptor> {
    let ctx = PassContext::with_class(model, image, features, config, class)?;
    let passes: Vec<Vec<f64>> = (0..config.passes)
        .into_par_iter()
        .map(|t| ctx.pass_norms(model, image, config, t))
        .collect::<Result<_>>()?;
    let mut values = vec![0.0; ctx.layer_indices.len()];
    for eta in &passes {
        for (v, e) in values.iter_mut().zip(eta) {
            *v += e;
        }
    }
    let t = config.passes as f64;
    values.iter_mut().for_each(|v| *v /= t);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite descriptor".into()));
    }
    Ok(Descriptor { values })
}

/// Mean and ridge-regularized covariance of training descriptors, with the
/// Cholesky factor of `Σ + λI` cached.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "DescriptorStatsRepr", into = "DescriptorStatsRepr")]
pub struct DescriptorStats {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    lambda: f64,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

#[derive(Serialize, Deserialize)]
struct DescriptorStatsRepr {
    mean: Vec<f64>,
    cov: Vec<Vec<f64>>,
    lambda: f64,
}

impl TryFrom<DescriptorStatsRepr> for DescriptorStats {
    type Error = Error;

    fn try_from(r: DescriptorStatsRepr) -> Result<Self> {
        DescriptorStats::new(r.mean, r.cov, r.lambda)
    }
}

impl From<DescriptorStats> for DescriptorStatsRepr {
    fn from(s: DescriptorStats) -> Self {
        Self {
            mean: s.mean,
            cov: s.cov,
            lambda: s.lambda,
        }
    }
}

impl PartialEq for DescriptorStats {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.cov == other.cov && self.lambda == other.lambda
    }
}

impl DescriptorStats {
    /// Off-diagonal pairs that differ by rounding only are averaged.
    pub fn new(mean: Vec<f64>, mut cov: Vec<Vec<f64>>, lambda: f64) -> Result<Self> {
        let k = mean.len();
        if k == 0 || cov.len() != k || cov.iter().any(|r| r.len() != k) {
            return Err(Error::Shape(format!("covariance must be {k}x{k}")));
        }
        for i in 0..k {
            for j in 0..i {
                let (a, b) = (cov[i][j], cov[j][i]);
                let scale = cov[i][i].abs().max(cov[j][j].abs()).max(f64::MIN_POSITIVE);
                if !((a - b).abs() <= 1e-12 * scale) {
                    return Err(Error::Numeric("covariance is not symmetric".into()));
                }
                let avg = 0.5 * (a + b);
                cov[i][j] = avg;
                cov[j][i] = avg;
            }
        }
        let m = DMatrix::from_fn(k, k, |i, j| cov[i][j] + if i == j { lambda } else { 0.0 });
        let factor = m.cholesky().ok_or_else(|| {
            Error::Config(format!(
                "descriptor covariance + {lambda:e}·I is not positive definite; increase lambda_ridge"
            ))
        })?;
        Ok(Self {
            mean,
            cov,
            lambda,
            factor,
        })
    }

    /// Unbiased (n − 1) mean and covariance of `descriptors`.
    pub fn fit(descriptors: &[Descriptor], lambda: Option<f64>) -> Result<Self> {
        let n = descriptors.len();
        let k = descriptors.first().map(|d| d.values.len()).unwrap_or(0);
        if n < k + 2 || k == 0 {
            return Err(Error::Data(format!(
                "need at least {} descriptors for a {k}-dimensional covariance, got {n}",
                k + 2
            )));
        }
        let mut mean = vec![0.0; k];
        for d in descriptors {
            for (m, v) in mean.iter_mut().zip(&d.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![vec![0.0; k]; k];
        for d in descriptors {
            for i in 0..k {
                let di = d.values[i] - mean[i];
                for j in 0..=i {
                    cov[i][j] += di * (d.values[j] - mean[j]);
                }
            }
        }
        for i in 0..k {
            for j in 0..=i {
                cov[i][j] /= (n - 1) as f64;
                cov[j][i] = cov[i][j];
            }
        }
        let lambda = lambda.unwrap_or_else(|| {
            let trace: f64 = (0..k).map(|i| cov[i][i]).sum();
            (1e-4 * trace / k as f64).max(1e-8)
        });
        Self::new(mean, cov, lambda)
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn covariance(&self) -> &[Vec<f64>] {
        &self.cov
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `sqrt((d − μ)ᵀ (Σ + λI)⁻¹ (d − μ))`.
    pub fn mahalanobis(&self, descriptor: &Descriptor) -> Result<f64> {
        if descriptor.values.len() != self.mean.len() {
            return Err(Error::Shape(format!(
                "descriptor has {} entries, expected {}",
                descriptor.values.len(),
                self.mean.len()
            )));
        }
        let diff = DVector::from_iterator(
            self.mean.len(),
            descriptor.values.iter().zip(&self.mean).map(|(d, m)| d - m),
        );
        let solved = self.factor.solve(&diff);
        Ok(diff.dot(&solved).max(0.0).sqrt())
    }
}

pub fn mahalanobis_score(stats: &DescriptorStats, descriptor: &Descriptor) -> Result<f64> {
    stats.mahalanobis(descriptor)
}

/// Frozen training statistics for uncertainty scoring and class prototypes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub format_version: u32,
    pub features: FeatureStats,
    /// Absent when training descriptors were not computed; scoring then
    /// falls back to the distance from the batch mean.
    pub descriptors: Option<DescriptorStats>,
    pub norm_min: f64,
    pub norm_max: f64,
    pub config: UncertaintyConfig,
    #[serde(default)]
    pub prototypes: Vec<ClassPrototype>,
    /// Per-channel mean intensity of the training images.
    #[serde(default)]
    pub fill_value: Vec<f64>,
}

impl TrainStats {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let stats: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if stats.format_version != STATS_VERSION {
            return Err(Error::Data(format!(
                "stats format version {} is not supported",
                stats.format_version
            )));
        }
        Ok(stats)
    }

    pub fn prototype(&self, class: usize) -> Option<&ClassPrototype> {
        self.prototypes.iter().find(|p| p.class_id == class)
    }

    pub fn descriptor(&self, model: &LayeredModel, image: &Image) -> Result<Descriptor> {
        compute_descriptor(model, image, &self.features, &self.config)
    }

    /// Descriptor whose gradients follow `class` rather than the prediction.
    pub fn descriptor_for_class(&self, model: &LayeredModel, image: &Image, class: usize) -> Result<Descriptor> {
        descriptor_with_class(model, image, &self.features, &self.config, Some(class))
    }
}

/// Fits centroid, median radius, descriptor moments, normalization bounds and
/// per-class prototypes on labelled training images.
pub fn fit_train_stats(
    model: &LayeredModel,
    images: &[Image],
    labels: &[usize],
    config: &UncertaintyConfig,
) -> Result<TrainStats> {
    let k = config.layer_indices(model)?.len();
    if images.len() != labels.len() {
        return Err(Error::InvalidInput("images and labels differ in length".into()));
    }
    if images.len() < k + 2 {
        return Err(Error::Data(format!(
            "need at least {} training images, got {}",
            k + 2,
            images.len()
        )));
    }
    let features: Vec<Vec<f64>> = images
        .par_iter()
        .map(|img| model.penultimate_feature(img))
        .collect::<Result<_>>()?;
    let feature_stats = FeatureStats::fit(&features)?;
    let descriptors: Vec<Descriptor> = images
        .par_iter()
        .map(|img| compute_descriptor(model, img, &feature_stats, config))
        .collect::<Result<_>>()?;
    let desc_stats = DescriptorStats::fit(&descriptors, config.lambda_ridge)?;
    let raw: Vec<f64> = descriptors
        .iter()
        .map(|d| desc_stats.mahalanobis(d))
        .collect::<Result<_>>()?;
    let norm_min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let norm_max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let prototypes = ClassPrototype::from_features(&features, labels, model.class_count());
    let mut fill_value = vec![0.0; model.input_shape()[0]];
    for img in images {
        for (f, m) in fill_value.iter_mut().zip(img.channel_means()) {
            *f += m;
        }
    }
    fill_value.iter_mut().for_each(|f| *f /= images.len() as f64);
    Ok(TrainStats {
        format_version: STATS_VERSION,
        features: feature_stats,
        descriptors: Some(desc_stats),
        norm_min,
        norm_max,
        config: config.clone(),
        prototypes,
        fill_value,
    })
}

/// Raw atypicality scores: Mahalanobis when training descriptors exist,
/// otherwise Euclidean distance from the batch mean descriptor.
pub fn raw_scores(stats: &TrainStats, descriptors: &[Descriptor]) -> Result<Vec<f64>> {
    match &stats.descriptors {
        Some(ds) => descriptors.iter().map(|d| ds.mahalanobis(d)).collect(),
        None => {
            let k = descriptors.first().map(|d| d.values.len()).unwrap_or(0);
            let n = descriptors.len().max(1) as f64;
            let mut mean = vec![0.0; k];
            for d in descriptors {
                for (m, v) in mean.iter_mut().zip(&d.values) {
                    *m += v / n;
                }
            }
            Ok(descriptors.iter().map(|d| euclidean(&d.values, &mean)).collect())
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyScore {
    pub raw: f64,
    pub normalized: f64,
    pub confidence: f64,
}

/// Min-max normalizes a batch of raw scores. The bounds are the training
/// bounds widened by the batch's own range (batch-only when no training
/// descriptors exist); a degenerate range maps everything to 0.5.
pub fn confidence_score(stats: &TrainStats, batch: &[f64]) -> Vec<UncertaintyScore> {
    let bmin = batch.iter().cloned().fold(f64::INFINITY, f64::min);
    let bmax = batch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if stats.descriptors.is_some() {
        (stats.norm_min.min(bmin), stats.norm_max.max(bmax))
    } else {
        (bmin, bmax)
    };
    normalize_with_bounds(batch, lo, hi)
}

pub fn normalize_with_bounds(batch: &[f64], lo: f64, hi: f64) -> Vec<UncertaintyScore> {
    batch
        .iter()
        .map(|&raw| {
            let normalized = if hi > lo {
                ((raw - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.5
            };
            UncertaintyScore {
                raw,
                normalized,
                confidence: 1.0 - normalized,
            }
        })
        .collect()
}

/// Descriptor, raw score and single-sample normalization for each image.
pub fn score_images(
    model: &LayeredModel,
    stats: &TrainStats,
    images: &[Image],
) -> Result<Vec<UncertaintyScore>> {
    let descriptors: Vec<Descriptor> = images
        .par_iter()
        .map(|img| stats.descriptor(model, img))
        .collect::<Result<_>>()?;
    let raw = raw_scores(stats, &descriptors)?;
    Ok(raw.iter().flat_map(|&s| confidence_score(stats, &[s])).collect())
}
