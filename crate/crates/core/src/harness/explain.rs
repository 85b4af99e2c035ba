//! Single-image explanations and split-level evaluation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use super::dataset::{DatasetManifest, Shift, Split};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::metrics::{deletion_curve, insertion_curve, MetricCurve};
use crate::model::LayeredModel;
use crate::partition::{CandidateMetadata, CandidateSet, PartitionConfig};
use crate::rng::{self, Domain};
use crate::submodular::{greedy, lazy_greedy, AttributionObjective, ObjectiveWeights, SelectionTrace};
use crate::uncertainty::{self, TrainStats};

pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub partition: PartitionConfig,
    pub weights: ObjectiveWeights,
    /// Number of greedy steps; `None` selects every element.
    pub k: Option<usize>,
    pub lazy: bool,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            partition: PartitionConfig::Grid { n: 7, m: 7 },
            weights: ObjectiveWeights::default(),
            k: None,
            lazy: false,
            seed: 0,
        }
    }
}

impl ExplainConfig {
    /// The same configuration with the confidence term switched off.
    pub fn without_confidence(&self) -> Self {
        let mut c = self.clone();
        c.weights.mu1 = 0.0;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainReport {
    pub format_version: u32,
    pub image_id: String,
    pub class_id: usize,
    pub candidates: CandidateMetadata,
    pub trace: SelectionTrace,
    pub insertion: MetricCurve,
    pub deletion: MetricCurve,
    /// Confidence of the selected subset after each greedy step.
    pub step_confidence: Vec<f64>,
    pub config: ExplainConfig,
    pub seed: u64,
}

/// Builds candidates for `image`, selects regions for its predicted class and
/// scores the resulting order.
pub fn explain_image(
    model: &LayeredModel,
    stats: &TrainStats,
    image: &Image,
    image_id: &str,
    config: &ExplainConfig,
) -> Result<(ExplainReport, CandidateSet)> {
    let fill = fill_for(stats, image)?;
    let candidates = config.partition.build(model, image, &fill)?;
    let class_id = model.predict(image)?;
    let trace = select(model, stats, &candidates, class_id, config)?;
    let insertion = insertion_curve(model, &candidates, &trace.order, class_id)?;
    let deletion = deletion_curve(model, &candidates, &trace.order, class_id)?;
    let step_confidence = (1..=trace.order.len())
        .into_par_iter()
        .map(|t| confidence_of(model, stats, &candidates.compose(&trace.order[..t])?))
        .collect::<Result<_>>()?;
    let mode = match config.partition {
        PartitionConfig::Grid { .. } => "grid",
        PartitionConfig::Slic { .. } => "slic",
    };
    let report = ExplainReport {
        format_version: REPORT_VERSION,
        image_id: image_id.to_string(),
        class_id,
        candidates: candidates.metadata(mode),
        trace,
        insertion,
        deletion,
        step_confidence,
        config: config.clone(),
        seed: config.seed,
    };
    Ok((report, candidates))
}

fn fill_for(stats: &TrainStats, image: &Image) -> Result<Vec<f64>> {
    if stats.fill_value.is_empty() {
        return Ok(image.channel_means());
    }
    if stats.fill_value.len() != image.channels() {
        return Err(Error::Shape(format!(
            "stats fill has {} channels, image {}",
            stats.fill_value.len(),
            image.channels()
        )));
    }
    Ok(stats.fill_value.clone())
}

fn select(
    model: &LayeredModel,
    stats: &TrainStats,
    candidates: &CandidateSet,
    class_id: usize,
    config: &ExplainConfig,
) -> Result<SelectionTrace> {
    let objective = AttributionObjective::new(model, stats, candidates, class_id, config.weights)?;
    let k = config.k.unwrap_or(candidates.len());
    if config.lazy {
        lazy_greedy(&objective, k)
    } else {
        greedy(&objective, k)
    }
}

fn confidence_of(model: &LayeredModel, stats: &TrainStats, image: &Image) -> Result<f64> {
    Ok(uncertainty::score_images(model, stats, std::slice::from_ref(image))?[0].confidence)
}

/// Writes `report.json`, `insertion.csv`, `deletion.csv` and element masks.
pub fn write_explain_outputs(report: &ExplainReport, candidates: &CandidateSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.json"), serde_json::to_string_pretty(report)? + "\n")?;
    report.insertion.write_csv(&dir.join("insertion.csv"))?;
    report.deletion.write_csv(&dir.join("deletion.csv"))?;
    candidates.save_masks(&dir.join("masks"))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub explain: ExplainConfig,
    pub shifts: Vec<Shift>,
    /// Cap on images per shift, taken in manifest order.
    pub max_per_shift: Option<usize>,
    pub random_orders: usize,
    /// Also run selection with the confidence term off.
    pub ablation: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            explain: ExplainConfig::default(),
            shifts: Shift::ALL.to_vec(),
            max_per_shift: None,
            random_orders: 20,
            ablation: true,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageResult {
    pub path: String,
    pub shift: Shift,
    pub label: i64,
    pub predicted: usize,
    pub insertion_auc: f64,
    pub deletion_auc: f64,
    pub insertion_auc_no_conf: Option<f64>,
    pub deletion_auc_no_conf: Option<f64>,
    pub random_insertion_auc: f64,
    pub random_deletion_auc: f64,
    pub uncertainty_raw: f64,
    pub uncertainty: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignTest {
    pub wins: usize,
    pub losses: usize,
    pub ties: usize,
    /// One-sided `P(X ≥ wins)` for `X ~ Binomial(wins + losses, 1/2)`.
    pub p_value: f64,
}

/// Exact one-sided sign test of `a > b` over paired values; ties dropped.
pub fn sign_test(a: &[f64], b: &[f64]) -> SignTest {
    let (mut wins, mut losses, mut ties) = (0, 0, 0);
    for (x, y) in a.iter().zip(b) {
        match x.partial_cmp(y) {
            Some(std::cmp::Ordering::Greater) => wins += 1,
            Some(std::cmp::Ordering::Less) => losses += 1,
            _ => ties += 1,
        }
    }
    let n = wins + losses;
    let p_value = if wins == 0 {
        1.0
    } else {
        Binomial::new(0.5, n as u64).expect("valid binomial").sf(wins as u64 - 1)
    };
    SignTest {
        wins,
        losses,
        ties,
        p_value,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftSummary {
    pub shift: Shift,
    pub count: usize,
    pub accuracy: Option<f64>,
    pub mean_insertion_auc: f64,
    pub mean_deletion_auc: f64,
    pub mean_insertion_auc_no_conf: Option<f64>,
    pub mean_deletion_auc_no_conf: Option<f64>,
    pub mean_random_insertion_auc: f64,
    pub mean_random_deletion_auc: f64,
    pub mean_uncertainty: f64,
    pub greedy_vs_random: SignTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format_version: u32,
    pub config: EvalConfig,
    pub summaries: Vec<ShiftSummary>,
    pub images: Vec<ImageResult>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (mut s, mut n) = (0.0, 0usize);
    for x in v {
        s += x;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Mean insertion and deletion AUC over `count` random permutations drawn
/// from the `(seed, image index, r)` streams.
pub fn random_order_aucs(
    model: &LayeredModel,
    candidates: &CandidateSet,
    class_id: usize,
    count: usize,
    seed: u64,
    image_index: u64,
) -> Result<(f64, f64)> {
    let mut ins = Vec::with_capacity(count);
    let mut del = Vec::with_capacity(count);
    for r in 0..count {
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.shuffle(&mut rng::stream(seed, Domain::Baseline, image_index, r as u64));
        ins.push(insertion_curve(model, candidates, &order, class_id)?.auc);
        del.push(deletion_curve(model, candidates, &order, class_id)?.auc);
    }
    Ok((mean(ins.into_iter()), mean(del.into_iter())))
}

fn evaluate_one(
    model: &LayeredModel,
    stats: &TrainStats,
    image: &Image,
    index: u64,
    config: &EvalConfig,
) -> Result<(usize, f64, f64, Option<(f64, f64)>, (f64, f64), f64, f64)> {
    let fill = fill_for(stats, image)?;
    let candidates = config.explain.partition.build(model, image, &fill)?;
    let class_id = model.predict(image)?;
    let trace = select(model, stats, &candidates, class_id, &config.explain)?;
    let ins = insertion_curve(model, &candidates, &trace.order, class_id)?.auc;
    let del = deletion_curve(model, &candidates, &trace.order, class_id)?.auc;
    let ablated = if config.ablation {
        let off = config.explain.without_confidence();
        let t = select(model, stats, &candidates, class_id, &off)?;
        Some((
            insertion_curve(model, &candidates, &t.order, class_id)?.auc,
            deletion_curve(model, &candidates, &t.order, class_id)?.auc,
        ))
    } else {
        None
    };
    let random = random_order_aucs(model, &candidates, class_id, config.random_orders, config.seed, index)?;
    let score = uncertainty::score_images(model, stats, std::slice::from_ref(image))?[0];
    Ok((class_id, ins, del, ablated, random, score.raw, score.normalized))
}

/// Runs selection, curves, random baselines and uncertainty scoring on the
/// test images of each requested shift.
pub fn evaluate(
    model: &LayeredModel,
    stats: &TrainStats,
    manifest: &DatasetManifest,
    config: &EvalConfig,
) -> Result<EvalReport> {
    let mut jobs = Vec::new();
    for &shift in &config.shifts {
        let entries = manifest.select(Split::Test, shift);
        let take = config.max_per_shift.unwrap_or(entries.len()).min(entries.len());
        jobs.extend(entries.into_iter().take(take));
    }
    if jobs.is_empty() {
        return Err(Error::Data("no test images match the requested shifts".into()));
    }
    let images: Vec<ImageResult> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let image = manifest.image(entry)?;
            let (predicted, ins, del, ablated, random, raw, u) =
                evaluate_one(model, stats, &image, i as u64, config)?;
            Ok(ImageResult {
                path: entry.path.clone(),
                shift: entry.shift,
                label: entry.label,
                predicted,
                insertion_auc: ins,
                deletion_auc: del,
                insertion_auc_no_conf: ablated.map(|a| a.0),
                deletion_auc_no_conf: ablated.map(|a| a.1),
                random_insertion_auc: random.0,
                random_deletion_auc: random.1,
                uncertainty_raw: raw,
                uncertainty: u,
            })
        })
        .collect::<Result<_>>()?;
    let mut summaries = Vec::new();
    for &shift in &config.shifts {
        let rows: Vec<&ImageResult> = images.iter().filter(|r| r.shift == shift).collect();
        if rows.is_empty() {
            continue;
        }
        let labelled: Vec<&&ImageResult> = rows.iter().filter(|r| r.label >= 0).collect();
        let accuracy = (!labelled.is_empty()).then(|| {
            labelled.iter().filter(|r| r.predicted as i64 == r.label).count() as f64 / labelled.len() as f64
        });
        let greedy_ins: Vec<f64> = rows.iter().map(|r| r.insertion_auc).collect();
        let random_ins: Vec<f64> = rows.iter().map(|r| r.random_insertion_auc).collect();
        summaries.push(ShiftSummary {
            shift,
            count: rows.len(),
            accuracy,
            mean_insertion_auc: mean(greedy_ins.iter().copied()),
            mean_deletion_auc: mean(rows.iter().map(|r| r.deletion_auc)),
            mean_insertion_auc_no_conf: config
                .ablation
                .then(|| mean(rows.iter().filter_map(|r| r.insertion_auc_no_conf))),
            mean_deletion_auc_no_conf: config
                .ablation
                .then(|| mean(rows.iter().filter_map(|r| r.deletion_auc_no_conf))),
            mean_random_insertion_auc: mean(random_ins.iter().copied()),
            mean_random_deletion_auc: mean(rows.iter().map(|r| r.random_deletion_auc)),
            mean_uncertainty: mean(rows.iter().map(|r| r.uncertainty)),
            greedy_vs_random: sign_test(&greedy_ins, &random_ins),
        });
    }
    Ok(EvalReport {
        format_version: REPORT_VERSION,
        config: config.clone(),
        summaries,
        images,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn summary_csv(&self) -> String {
        let mut out = String::from(
            "shift,count,accuracy,insertion_auc,deletion_auc,insertion_auc_no_conf,deletion_auc_no_conf,\
             random_insertion_auc,random_deletion_auc,mean_uncertainty,sign_wins,sign_losses,sign_p\n",
        );
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                s.shift.name(),
                s.count,
                opt(s.accuracy),
                s.mean_insertion_auc,
                s.mean_deletion_auc,
                opt(s.mean_insertion_auc_no_conf),
                opt(s.mean_deletion_auc_no_conf),
                s.mean_random_insertion_auc,
                s.mean_random_deletion_auc,
                s.mean_uncertainty,
                s.greedy_vs_random.wins,
                s.greedy_vs_random.losses,
                s.greedy_vs_random.p_value
            );
        }
        out
    }

    pub fn images_csv(&self) -> String {
        let mut out = String::from(
            "path,shift,label,predicted,insertion_auc,deletion_auc,insertion_auc_no_conf,\
             deletion_auc_no_conf,random_insertion_auc,random_deletion_auc,uncertainty_raw,uncertainty\n",
        );
        for r in &self.images {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.path,
                r.shift.name(),
                r.label,
                r.predicted,
                r.insertion_auc,
                r.deletion_auc,
                opt(r.insertion_auc_no_conf),
                opt(r.deletion_auc_no_conf),
                r.random_insertion_auc,
                r.random_deletion_auc,
                r.uncertainty_raw,
                r.uncertainty
            );
        }
        out
    }

    /// Writes `eval.json`, `summary.csv` and `images.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("eval.json"), serde_json::to_string_pretty(self)? + "\n")?;
        fs::write(dir.join("summary.csv"), self.summary_csv())?;
        fs::write(dir.join("images.csv"), self.images_csv())?;
        Ok(())
    }

    pub fn summary(&self, shift: Shift) -> Option<&ShiftSummary> {
        self.summaries.iter().find(|s| s.shift == shift)
    }
}
