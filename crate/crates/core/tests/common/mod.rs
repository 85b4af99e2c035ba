#![allow(dead_code)]

use attrsel::image::Image;
use attrsel::model::LayeredModel;
use attrsel::uncertainty::{fit_train_stats, TrainStats, UncertaintyConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(seed: u64, channels: usize, h: usize, w: usize) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    Image::new(channels, h, w, (0..channels * h * w).map(|_| r.random::<f64>()).collect()).unwrap()
}

/// Bright square on a dark field (class 0) or the reverse (class 1), with noise.
pub fn toy_image(seed: u64, class: usize) -> Image {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let (fg, bg) = if class == 0 { (0.9, 0.1) } else { (0.1, 0.9) };
    let data = (0..64)
        .map(|p| {
            let (y, x) = (p / 8, p % 8);
            let base = if (2..6).contains(&y) && (2..6).contains(&x) { fg } else { bg };
            base + 0.05 * (r.random::<f64>() - 0.5)
        })
        .collect();
    Image::new(1, 8, 8, data).unwrap()
}

pub struct Toy {
    pub model: LayeredModel,
    pub stats: TrainStats,
    pub images: Vec<Image>,
    pub labels: Vec<usize>,
}

pub fn toy_pipeline() -> Toy {
    let model = LayeredModel::reference_mlp([1, 8, 8], 2, 7).unwrap();
    let labels: Vec<usize> = (0..16).map(|i| i % 2).collect();
    let images: Vec<Image> = labels.iter().enumerate().map(|(i, &c)| toy_image(i as u64, c)).collect();
    let mut config = UncertaintyConfig::for_model(&model);
    config.passes = 4;
    let stats = fit_train_stats(&model, &images, &labels, &config).unwrap();
    Toy {
        model,
        stats,
        images,
        labels,
    }
}
