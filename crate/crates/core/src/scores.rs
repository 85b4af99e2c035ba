//! Subset scores: feature diversity, prototype alignment, deletion drop, and
//! their detector-based counterparts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::LayeredModel;
use crate::partition::CandidateSet;

/// Mean penultimate feature of one class's training images.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    pub class_id: usize,
    pub feature: Vec<f64>,
}

impl ClassPrototype {
    /// One prototype per class that has at least one sample, in class order.
    pub fn from_features(features: &[Vec<f64>], labels: &[usize], class_count: usize) -> Vec<Self> {
        let dim = features.first().map_or(0, Vec::len);
        let mut sums = vec![vec![0.0; dim]; class_count];
        let mut counts = vec![0usize; class_count];
        for (f, &l) in features.iter().zip(labels) {
            if l < class_count {
                for (s, v) in sums[l].iter_mut().zip(f) {
                    *s += v;
                }
                counts[l] += 1;
            }
        }
        sums.into_iter()
            .zip(counts)
            .enumerate()
            .filter(|(_, (_, n))| *n > 0)
            .map(|(class_id, (s, n))| ClassPrototype {
                class_id,
                feature: s.into_iter().map(|v| v / n as f64).collect(),
            })
            .collect()
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `Σ_e min_{e′≠e} ‖f(e) − f(e′)‖₂`; zero for fewer than two features.
pub fn min_distance_sum(features: &[&[f64]]) -> f64 {
    if features.len() < 2 {
        return 0.0;
    }
    features
        .iter()
        .enumerate()
        .map(|(i, a)| {
            features
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, b)| euclidean(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Penultimate features of every single-element composition and of the
/// fill image, computed once per candidate set.
#[derive(Clone, Debug, PartialEq)]
pub struct ElementFeatures {
    pub singles: Vec<Vec<f64>>,
    pub fill: Vec<f64>,
}

impl ElementFeatures {
    pub fn compute(model: &LayeredModel, candidates: &CandidateSet) -> Result<Self> {
        let singles = (0..candidates.len())
            .into_par_iter()
            .map(|e| model.penultimate_feature(&candidates.compose(&[e])?))
            .collect::<Result<_>>()?;
        let fill = model.penultimate_feature(&candidates.compose(&[])?)?;
        Ok(Self { singles, fill })
    }

    /// Diversity score of `subset`; singletons are measured against the
    /// fill-image feature.
    pub fn effectiveness(&self, subset: &[usize]) -> Result<f64> {
        if let Some(&bad) = subset.iter().find(|&&e| e >= self.singles.len()) {
            return Err(Error::InvalidInput(format!("unknown element id {bad}")));
        }
        Ok(match subset {
            [] => 0.0,
            [e] => euclidean(&self.singles[*e], &self.fill),
            _ => {
                let feats: Vec<&[f64]> = subset.iter().map(|&e| self.singles[e].as_slice()).collect();
                min_distance_sum(&feats)
            }
        })
    }
}

pub fn effectiveness(model: &LayeredModel, candidates: &CandidateSet, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(Error::InvalidInput("effectiveness needs a non-empty subset".into()));
    }
    ElementFeatures::compute(model, candidates)?.effectiveness(subset)
}

/// `(cos(feature, prototype) + 1) / 2`, 0.5 when either vector is zero.
pub fn cosine_alignment(feature: &[f64], prototype: &[f64]) -> Result<f64> {
    if feature.len() != prototype.len() {
        return Err(Error::Shape(format!(
            "feature has {} dims, prototype {}",
            feature.len(),
            prototype.len()
        )));
    }
    let dot: f64 = feature.iter().zip(prototype).map(|(a, b)| a * b).sum();
    let na = feature.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = prototype.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Ok(0.5);
    }
    Ok(((dot / (na * nb)).clamp(-1.0, 1.0) + 1.0) / 2.0)
}

pub fn consistency(
    model: &LayeredModel,
    candidates: &CandidateSet,
    subset: &[usize],
    prototype: &ClassPrototype,
) -> Result<f64> {
    let feature = model.penultimate_feature(&candidates.compose(subset)?)?;
    cosine_alignment(&feature, &prototype.feature)
}

/// `1 − p(class | image without subset)`.
pub fn collaboration(
    model: &LayeredModel,
    candidates: &CandidateSet,
    subset: &[usize],
    class_id: usize,
) -> Result<f64> {
    if class_id >= model.class_count() {
        return Err(Error::InvalidInput(format!("class {class_id} out of range")));
    }
    let p = model.probabilities(&candidates.compose_complement(subset)?)?;
    Ok(1.0 - p[class_id])
}

/// Target box in pixels and the class being localized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionQuery {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub class: usize,
}

impl DetectionQuery {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.x + self.w > width || self.y + self.h > height {
            return Err(Error::InvalidInput(format!(
                "box ({}, {}, {}, {}) does not fit a {height}x{width} image",
                self.x, self.y, self.w, self.h
            )));
        }
        Ok(())
    }
}

/// Deterministic localization-and-label score in `[0, 1]`.
pub trait Detector: Sync {
    fn score(&self, image: &Image, query: &DetectionQuery) -> Result<f64>;
}

/// Pixels where any channel differs from `fill`.
fn visible(image: &Image, fill: &[f64]) -> Vec<bool> {
    let plane = image.height() * image.width();
    let data = image.data();
    (0..plane)
        .map(|p| fill.iter().enumerate().any(|(c, &f)| data[c * plane + p] != f))
        .collect()
}

fn box_iou(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> f64 {
    let (ax0, ay0, ax1, ay1) = a;
    let (bx0, by0, bx1, by1) = b;
    let iw = ax1.min(bx1).saturating_sub(ax0.max(bx0));
    let ih = ay1.min(by1).saturating_sub(ay0.max(by0));
    let inter = (iw * ih) as f64;
    let union = ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0)) as f64 - inter;
    if union == 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// IoU of the query box with the bounding box of visible pixels, gated on
/// the mean visible intensity inside the box exceeding `threshold`.
#[derive(Clone, Debug, PartialEq)]
pub struct MockDetector {
    pub fill: Vec<f64>,
    pub threshold: f64,
}

impl Detector for MockDetector {
    fn score(&self, image: &Image, query: &DetectionQuery) -> Result<f64> {
        query.validate(image.height(), image.width())?;
        let (h, w) = (image.height(), image.width());
        let vis = visible(image, &self.fill);
        let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
        for (p, _) in vis.iter().enumerate().filter(|(_, v)| **v) {
            let (y, x) = (p / w, p % w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x + 1);
            y1 = y1.max(y + 1);
        }
        if x1 == 0 {
            return Ok(0.0);
        }
        let plane = h * w;
        let (mut sum, mut count) = (0.0, 0usize);
        for y in query.y..query.y + query.h {
            for x in query.x..query.x + query.w {
                let p = y * w + x;
                if vis[p] {
                    sum += (0..image.channels()).map(|c| image.data()[c * plane + p]).sum::<f64>()
                        / image.channels() as f64;
                    count += 1;
                }
            }
        }
        if count == 0 || sum / count as f64 <= self.threshold {
            return Ok(0.0);
        }
        Ok(box_iou(
            (x0, y0, x1, y1),
            (query.x, query.y, query.x + query.w, query.y + query.h),
        ))
    }
}

/// Fraction of the query box that is visible; monotone in the visible set.
#[derive(Clone, Debug, PartialEq)]
pub struct CoverageDetector {
    pub fill: Vec<f64>,
}

impl Detector for CoverageDetector {
    fn score(&self, image: &Image, query: &DetectionQuery) -> Result<f64> {
        query.validate(image.height(), image.width())?;
        let w = image.width();
        let vis = visible(image, &self.fill);
        let mut count = 0;
        for y in query.y..query.y + query.h {
            for x in query.x..query.x + query.w {
                count += vis[y * w + x] as usize;
            }
        }
        Ok(count as f64 / (query.w * query.h) as f64)
    }
}

/// Scores 1 exactly when the keyed pixels show their reference values.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyedDetector {
    pub mask: Vec<bool>,
    pub reference: Image,
}

impl Detector for KeyedDetector {
    fn score(&self, image: &Image, _query: &DetectionQuery) -> Result<f64> {
        if image.shape() != self.reference.shape() {
            return Err(Error::Shape("image does not match the keyed reference".into()));
        }
        let plane = image.height() * image.width();
        let hit = self.mask.iter().enumerate().filter(|(_, m)| **m).all(|(p, _)| {
            (0..image.channels()).all(|c| image.data()[c * plane + p] == self.reference.data()[c * plane + p])
        });
        Ok(if hit { 1.0 } else { 0.0 })
    }
}

pub fn clue(
    detector: &dyn Detector,
    candidates: &CandidateSet,
    subset: &[usize],
    query: &DetectionQuery,
) -> Result<f64> {
    detector.score(&candidates.compose(subset)?, query)
}

/// Detector score lost by removing `subset`, clamped to `[0, 1]`.
pub fn collaboration_obj(
    detector: &dyn Detector,
    candidates: &CandidateSet,
    subset: &[usize],
    query: &DetectionQuery,
) -> Result<f64> {
    let full = detector.score(candidates.base_image(), query)?;
    let rest = detector.score(&candidates.compose_complement(subset)?, query)?;
    Ok((full - rest).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::partition::{grid_candidates, SaliencyMap};

    #[test]
    fn min_distance_hand_case() {
        let f: [&[f64]; 3] = [&[0.0], &[3.0], &[10.0]];
        assert_eq!(min_distance_sum(&f), 13.0);
        assert_eq!(min_distance_sum(&[&[1.0, 2.0], &[1.0, 2.0]]), 0.0);
    }

    #[test]
    fn singleton_equal_to_fill_scores_zero() {
        let ef = ElementFeatures {
            singles: vec![vec![1.0, 1.0], vec![4.0, 5.0]],
            fill: vec![1.0, 1.0],
        };
        assert_eq!(ef.effectiveness(&[0]).unwrap(), 0.0);
        assert_eq!(ef.effectiveness(&[1]).unwrap(), 5.0);
        assert_eq!(ef.effectiveness(&[]).unwrap(), 0.0);
        assert!(ef.effectiveness(&[2]).is_err());
    }

    #[test]
    fn alignment_cases() {
        let p = [1.0, -2.0, 0.5];
        assert_eq!(cosine_alignment(&p, &p).unwrap(), 1.0);
        assert_eq!(cosine_alignment(&[-1.0, 2.0, -0.5], &p).unwrap(), 0.0);
        assert_eq!(cosine_alignment(&[2.0, 1.0, 0.0], &p).unwrap(), 0.5);
        assert_eq!(cosine_alignment(&[0.0; 3], &p).unwrap(), 0.5);
        assert!(cosine_alignment(&[1.0], &p).is_err());
    }

    #[test]
    fn prototypes_average_per_class() {
        let f = vec![vec![1.0], vec![3.0], vec![10.0]];
        let protos = ClassPrototype::from_features(&f, &[0, 0, 2], 3);
        assert_eq!(protos.len(), 2);
        assert_eq!(protos[0].feature, vec![2.0]);
        assert_eq!(protos[1].class_id, 2);
    }

    fn four_blocks() -> CandidateSet {
        let img = Image::new(1, 4, 4, (0..16).map(|p| 0.2 + p as f64 / 40.0).collect()).unwrap();
        let sal = SaliencyMap::new(4, 4, (0..16).map(|p| 16.0 - p as f64).collect()).unwrap();
        grid_candidates(&img, &sal, 2, 4, &[0.0]).unwrap()
    }

    #[test]
    fn iou_of_identical_boxes_is_one() {
        assert_eq!(box_iou((0, 0, 2, 2), (0, 0, 2, 2)), 1.0);
        assert_eq!(box_iou((0, 0, 2, 2), (2, 2, 4, 4)), 0.0);
        assert_eq!(box_iou((0, 0, 2, 2), (1, 0, 3, 2)), 2.0 / 6.0);
    }

    #[test]
    fn mock_detector_full_and_empty() {
        let cs = four_blocks();
        let det = MockDetector { fill: vec![0.0], threshold: 0.1 };
        let q = DetectionQuery { x: 0, y: 0, w: 4, h: 4, class: 0 };
        assert_eq!(clue(&det, &cs, &[0, 1, 2, 3], &q).unwrap(), 1.0);
        assert_eq!(clue(&det, &cs, &[], &q).unwrap(), 0.0);
        assert_eq!(collaboration_obj(&det, &cs, &[], &q).unwrap(), 0.0);
        assert_eq!(collaboration_obj(&det, &cs, &[0, 1, 2, 3], &q).unwrap(), 1.0);
        let bad = DetectionQuery { x: 3, y: 0, w: 2, h: 1, class: 0 };
        assert!(clue(&det, &cs, &[], &bad).is_err());
    }

    #[test]
    fn keyed_detector_fires_on_its_region() {
        let cs = four_blocks();
        let det = KeyedDetector {
            mask: cs.element_mask(2),
            reference: cs.base_image().clone(),
        };
        let q = DetectionQuery { x: 0, y: 0, w: 1, h: 1, class: 0 };
        for bits in 0u32..16 {
            let subset: Vec<usize> = (0..4).filter(|i| bits & (1 << i) != 0).collect();
            let want = if subset.contains(&2) { 1.0 } else { 0.0 };
            assert_eq!(clue(&det, &cs, &subset, &q).unwrap(), want);
            assert_eq!(collaboration_obj(&det, &cs, &subset, &q).unwrap(), want);
        }
    }
}
