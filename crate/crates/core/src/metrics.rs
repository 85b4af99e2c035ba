//! Insertion and deletion curves over a selection order.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LayeredModel;
use crate::partition::CandidateSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub auc: f64,
}

impl MetricCurve {
    pub fn new(ys: Vec<f64>) -> Result<Self> {
        if ys.len() < 2 {
            return Err(Error::InvalidInput("a curve needs at least two points".into()));
        }
        let steps = (ys.len() - 1) as f64;
        let xs: Vec<f64> = (0..ys.len()).map(|t| t as f64 / steps).collect();
        let auc = trapezoid_auc(&xs, &ys)?;
        Ok(Self { xs, ys, auc })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "step,x,y")?;
        for (t, (x, y)) in self.xs.iter().zip(&self.ys).enumerate() {
            writeln!(out, "{t},{x},{y}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `Σ (x_{i+1} − x_i)·(y_i + y_{i+1})/2`.
pub fn trapezoid_auc(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::InvalidInput(format!(
            "{} x values but {} y values",
            xs.len(),
            ys.len()
        )));
    }
    if xs.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("x values must be increasing".into()));
    }
    Ok(xs
        .windows(2)
        .zip(ys.windows(2))
        .map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0)
        .sum())
}

fn check_order(candidates: &CandidateSet, order: &[usize]) -> Result<()> {
    if order.is_empty() {
        return Err(Error::InvalidInput("order is empty".into()));
    }
    let mut seen = vec![false; candidates.len()];
    for &e in order {
        if e >= seen.len() || std::mem::replace(&mut seen[e], true) {
            return Err(Error::InvalidInput(format!("order entry {e} is unknown or repeated")));
        }
    }
    Ok(())
}

/// Probability of `class_id` after revealing the first `t` elements of
/// `order`, for `t = 0..=|order|`.
pub fn insertion_curve(
    model: &LayeredModel,
    candidates: &CandidateSet,
    order: &[usize],
    class_id: usize,
) -> Result<MetricCurve> {
    curve(model, candidates, order, class_id, false)
}

/// Probability of `class_id` after masking the first `t` elements of
/// `order`, for `t = 0..=|order|`.
pub fn deletion_curve(
    model: &LayeredModel,
    candidates: &CandidateSet,
    order: &[usize],
    class_id: usize,
) -> Result<MetricCurve> {
    curve(model, candidates, order, class_id, true)
}

fn curve(
    model: &LayeredModel,
    candidates: &CandidateSet,
    order: &[usize],
    class_id: usize,
    delete: bool,
) -> Result<MetricCurve> {
    check_order(candidates, order)?;
    if class_id >= model.class_count() {
        return Err(Error::InvalidInput(format!("class {class_id} out of range")));
    }
    let ys = (0..=order.len())
        .into_par_iter()
        .map(|t| {
            let image = if delete {
                candidates.compose_complement(&order[..t])?
            } else {
                candidates.compose(&order[..t])?
            };
            Ok(model.probabilities(&image)?[class_id])
        })
        .collect::<Result<Vec<f64>>>()?;
    MetricCurve::new(ys)
}
