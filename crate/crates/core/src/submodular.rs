//! Set objectives and their maximization under a cardinality constraint.

use std::collections::{BTreeMap, BinaryHeap};
use std::cmp::Ordering;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LayeredModel;
use crate::partition::CandidateSet;
use crate::rng::{self, Domain};
use crate::scores::{self, ClassPrototype, DetectionQuery, Detector, ElementFeatures};
use crate::uncertainty::{self, TrainStats};

pub const TRACE_VERSION: u32 = 1;

/// A weighted sum of component scores over subsets of `0..len()`.
pub trait SetObjective: Sync {
    fn len(&self) -> usize;

    fn component_names(&self) -> Vec<String>;

    fn weights(&self) -> Vec<f64>;

    /// Component scores of `subset`, given in ascending id order.
    fn components(&self, subset: &[usize]) -> Result<Vec<f64>>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `F(subset)`; the subset is validated and sorted first, so the value
    /// does not depend on how it is listed.
    fn evaluate(&self, subset: &[usize]) -> Result<f64> {
        Ok(self.evaluate_detailed(subset)?.0)
    }

    fn evaluate_detailed(&self, subset: &[usize]) -> Result<(f64, Vec<f64>)> {
        let canon = canonical(subset, self.len())?;
        let comps = self.components(&canon)?;
        Ok((weighted_sum(&self.weights(), &comps), comps))
    }
}

pub fn weighted_sum(weights: &[f64], components: &[f64]) -> f64 {
    weights.iter().zip(components).map(|(w, c)| w * c).sum()
}

fn canonical(subset: &[usize], len: usize) -> Result<Vec<usize>> {
    let mut s = subset.to_vec();
    s.sort_unstable();
    if let Some(&bad) = s.iter().find(|&&e| e >= len) {
        return Err(Error::InvalidInput(format!("element {bad} outside ground set of {len}")));
    }
    if s.windows(2).any(|p| p[0] == p[1]) {
        return Err(Error::InvalidInput("subset lists an element twice".into()));
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub mu4: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            mu1: 1.0,
            mu2: 1.0,
            mu3: 1.0,
            mu4: 1.0,
        }
    }
}

impl ObjectiveWeights {
    pub fn validate(&self, count: usize) -> Result<()> {
        let w = &[self.mu1, self.mu2, self.mu3, self.mu4][..count];
        if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("objective weights must be finite and >= 0".into()));
        }
        if w.iter().all(|v| *v == 0.0) {
            return Err(Error::Config("objective weights are all zero".into()));
        }
        Ok(())
    }
}

/// Weighted modular function `Σ_{e∈S} w_e`.
#[derive(Clone, Debug, PartialEq)]
pub struct Modular {
    pub weights: Vec<f64>,
}

impl SetObjective for Modular {
    fn len(&self) -> usize {
        self.weights.len()
    }

    fn component_names(&self) -> Vec<String> {
        vec!["modular".into()]
    }

    fn weights(&self) -> Vec<f64> {
        vec![1.0]
    }

    fn components(&self, subset: &[usize]) -> Result<Vec<f64>> {
        Ok(vec![subset.iter().map(|&e| self.weights[e]).sum()])
    }
}

/// `|⋃_{e∈S} covers(e)| + Σ_{e∈S} bonus_e`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub universe: usize,
    pub covers: Vec<Vec<usize>>,
    pub bonus: Vec<f64>,
}

impl Coverage {
    /// Universe of 32 items; each element covers 4 to 10 of them; every
    /// other instance (by draw) adds positive dyadic element bonuses so that
    /// all sums stay exact.
    pub fn random(seed: u64, index: u64, elements: usize) -> Self {
        let mut r = rng::stream(seed, Domain::Instances, index, elements as u64);
        let universe = 32;
        let covers = (0..elements)
            .map(|_| {
                let size = r.random_range(4..=10);
                let mut items: Vec<usize> = (0..universe).collect();
                for i in 0..size {
                    let j = r.random_range(i..universe);
                    items.swap(i, j);
                }
                let mut c = items[..size].to_vec();
                c.sort_unstable();
                c
            })
            .collect();
        let bonus = if r.random_bool(0.5) {
            (0..elements).map(|_| r.random_range(1..=16) as f64 / 4.0).collect()
        } else {
            vec![0.0; elements]
        };
        Self {
            universe,
            covers,
            bonus,
        }
    }
}

impl SetObjective for Coverage {
    fn len(&self) -> usize {
        self.covers.len()
    }

    fn component_names(&self) -> Vec<String> {
        vec!["covered".into(), "bonus".into()]
    }

    fn weights(&self) -> Vec<f64> {
        vec![1.0, 1.0]
    }

    fn components(&self, subset: &[usize]) -> Result<Vec<f64>> {
        let mut hit = vec![false; self.universe];
        for &e in subset {
            for &i in &self.covers[e] {
                hit[i] = true;
            }
        }
        let covered = hit.iter().filter(|h| **h).count() as f64;
        Ok(vec![covered, subset.iter().map(|&e| self.bonus[e]).sum()])
    }
}

/// Confidence of a composed subset, scored alone against training bounds,
/// with descriptor gradients taken for the explained class. The empty subset
/// scores 0.
fn subset_confidence(
    model: &LayeredModel,
    stats: &TrainStats,
    candidates: &CandidateSet,
    subset: &[usize],
    class: usize,
) -> Result<f64> {
    if subset.is_empty() {
        return Ok(0.0);
    }
    let image = candidates.compose(subset)?;
    let d = stats.descriptor_for_class(model, &image, class)?;
    let raw = uncertainty::raw_scores(stats, &[d])?;
    Ok(uncertainty::confidence_score(stats, &raw)[0].confidence)
}

/// `μ₁·conf + μ₂·eff + μ₃·cons + μ₄·colla` over a candidate set.
pub struct AttributionObjective<'a> {
    pub model: &'a LayeredModel,
    pub stats: &'a TrainStats,
    pub candidates: &'a CandidateSet,
    pub features: ElementFeatures,
    pub prototype: ClassPrototype,
    pub class_id: usize,
    pub weights: ObjectiveWeights,
}

impl<'a> AttributionObjective<'a> {
    pub fn new(
        model: &'a LayeredModel,
        stats: &'a TrainStats,
        candidates: &'a CandidateSet,
        class_id: usize,
        weights: ObjectiveWeights,
    ) -> Result<Self> {
        weights.validate(4)?;
        let prototype = stats
            .prototype(class_id)
            .cloned()
            .ok_or_else(|| Error::Data(format!("no prototype for class {class_id}")))?;
        Ok(Self {
            model,
            stats,
            candidates,
            features: ElementFeatures::compute(model, candidates)?,
            prototype,
            class_id,
            weights,
        })
    }
}

impl SetObjective for AttributionObjective<'_> {
    fn len(&self) -> usize {
        self.candidates.len()
    }

    fn component_names(&self) -> Vec<String> {
        ["confidence", "effectiveness", "consistency", "collaboration"]
            .map(String::from)
            .to_vec()
    }

    fn weights(&self) -> Vec<f64> {
        let w = self.weights;
        vec![w.mu1, w.mu2, w.mu3, w.mu4]
    }

    fn components(&self, subset: &[usize]) -> Result<Vec<f64>> {
        let conf = if self.weights.mu1 == 0.0 {
            0.0
        } else {
            subset_confidence(self.model, self.stats, self.candidates, subset, self.class_id)?
        };
        Ok(vec![
            conf,
            self.features.effectiveness(subset)?,
            scores::consistency(self.model, self.candidates, subset, &self.prototype)?,
            scores::collaboration(self.model, self.candidates, subset, self.class_id)?,
        ])
    }
}

/// `μ₁·conf + μ₂·clue + μ₃·colla_obj` over a candidate set.
pub struct ObjectObjective<'a> {
    pub model: &'a LayeredModel,
    pub stats: &'a TrainStats,
    pub candidates: &'a CandidateSet,
    pub detector: &'a dyn Detector,
    pub query: DetectionQuery,
    pub weights: ObjectiveWeights,
}

impl SetObjective for ObjectObjective<'_> {
    fn len(&self) -> usize {
        self.candidates.len()
    }

    fn component_names(&self) -> Vec<String> {
        ["confidence", "clue", "collaboration_obj"].map(String::from).to_vec()
    }

    fn weights(&self) -> Vec<f64> {
        vec![self.weights.mu1, self.weights.mu2, self.weights.mu3]
    }

    fn components(&self, subset: &[usize]) -> Result<Vec<f64>> {
        let conf = if self.weights.mu1 == 0.0 {
            0.0
        } else {
            subset_confidence(self.model, self.stats, self.candidates, subset, self.query.class)?
        };
        Ok(vec![
            conf,
            scores::clue(self.detector, self.candidates, subset, &self.query)?,
            scores::collaboration_obj(self.detector, self.candidates, subset, &self.query)?,
        ])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionTrace {
    pub format_version: u32,
    pub component_names: Vec<String>,
    pub initial_value: f64,
    pub order: Vec<usize>,
    pub gains: Vec<f64>,
    pub component_breakdown: Vec<Vec<f64>>,
    pub objective_values: Vec<f64>,
    /// Number of `F(S ∪ {u})` evaluations performed.
    pub evaluations: usize,
}

impl SelectionTrace {
    fn start(objective: &dyn SetObjective) -> Result<Self> {
        Ok(Self {
            format_version: TRACE_VERSION,
            component_names: objective.component_names(),
            initial_value: objective.evaluate(&[])?,
            order: Vec::new(),
            gains: Vec::new(),
            component_breakdown: Vec::new(),
            objective_values: Vec::new(),
            evaluations: 0,
        })
    }

    fn current_value(&self) -> f64 {
        self.objective_values.last().copied().unwrap_or(self.initial_value)
    }

    fn push(&mut self, element: usize, value: f64, components: Vec<f64>) {
        self.gains.push(value - self.current_value());
        self.order.push(element);
        self.objective_values.push(value);
        self.component_breakdown.push(components);
    }

    /// Largest gap between `objective_values` and the running sum of gains.
    pub fn telescoping_error(&self) -> f64 {
        let mut prev = self.initial_value;
        let mut worst = 0.0f64;
        for (v, g) in self.objective_values.iter().zip(&self.gains) {
            worst = worst.max((v - (prev + g)).abs());
            prev = *v;
        }
        worst
    }
}

fn check_k(objective: &dyn SetObjective, k: usize) -> Result<()> {
    if objective.is_empty() {
        return Err(Error::InvalidInput("ground set is empty".into()));
    }
    if k == 0 || k > objective.len() {
        return Err(Error::Config(format!(
            "k must lie in 1..={}, got {k}",
            objective.len()
        )));
    }
    Ok(())
}

/// Adds `argmax_u F(S ∪ {u})` for exactly `k` steps; ties go to the lower id.
pub fn greedy(objective: &dyn SetObjective, k: usize) -> Result<SelectionTrace> {
    check_k(objective, k)?;
    let mut trace = SelectionTrace::start(objective)?;
    let mut chosen = vec![false; objective.len()];
    for _ in 0..k {
        let remaining: Vec<usize> = (0..objective.len()).filter(|&u| !chosen[u]).collect();
        let evals: Vec<(f64, Vec<f64>)> = remaining
            .par_iter()
            .map(|&u| {
                let mut s = trace.order.clone();
                s.push(u);
                objective.evaluate_detailed(&s)
            })
            .collect::<Result<_>>()?;
        trace.evaluations += evals.len();
        let mut best = 0;
        for i in 1..evals.len() {
            if evals[i].0 > evals[best].0 {
                best = i;
            }
        }
        let (value, comps) = evals.into_iter().nth(best).expect("non-empty");
        chosen[remaining[best]] = true;
        trace.push(remaining[best], value, comps);
    }
    Ok(trace)
}

#[derive(Clone, Debug)]
struct Bound {
    gain: f64,
    element: usize,
    round: usize,
}

impl PartialEq for Bound {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Bound {}

impl PartialOrd for Bound {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Bound {
    // max-heap on gain, then lower element id
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain
            .total_cmp(&other.gain)
            .then(other.element.cmp(&self.element))
    }
}

/// Greedy with stale marginal gains as upper bounds. For submodular
/// objectives the trace matches [`greedy`]; ties at the top are resolved by
/// refreshing every tied entry and comparing `F(S ∪ {u})` directly.
pub fn lazy_greedy(objective: &dyn SetObjective, k: usize) -> Result<SelectionTrace> {
    check_k(objective, k)?;
    let mut trace = SelectionTrace::start(objective)?;
    let mut fresh: BTreeMap<usize, (f64, Vec<f64>)> = BTreeMap::new();
    let mut heap = BinaryHeap::new();
    for u in 0..objective.len() {
        heap.push(Bound {
            gain: f64::INFINITY,
            element: u,
            round: usize::MAX,
        });
    }
    for round in 0..k {
        fresh.clear();
        let base = trace.current_value();
        let evaluate = |u: usize, trace: &mut SelectionTrace| -> Result<(f64, Vec<f64>)> {
            let mut s = trace.order.clone();
            s.push(u);
            trace.evaluations += 1;
            objective.evaluate_detailed(&s)
        };
        let winner = loop {
            let top = heap.pop().expect("unselected elements remain");
            if top.round != round {
                let (value, comps) = evaluate(top.element, &mut trace)?;
                heap.push(Bound {
                    gain: value - base,
                    element: top.element,
                    round,
                });
                fresh.insert(top.element, (value, comps));
                continue;
            }
            // top is fresh: refresh anything tied with it before deciding
            let mut tied = vec![top];
            while let Some(next) = heap.peek() {
                if next.gain < tied[0].gain {
                    break;
                }
                let next = heap.pop().expect("peeked");
                if next.round == round {
                    tied.push(next);
                } else {
                    let (value, comps) = evaluate(next.element, &mut trace)?;
                    heap.push(Bound {
                        gain: value - base,
                        element: next.element,
                        round,
                    });
                    fresh.insert(next.element, (value, comps));
                }
            }
            let mut best = 0;
            for i in 1..tied.len() {
                let (vi, vb) = (fresh[&tied[i].element].0, fresh[&tied[best].element].0);
                if vi > vb || (vi == vb && tied[i].element < tied[best].element) {
                    best = i;
                }
            }
            let win = tied.swap_remove(best);
            heap.extend(tied);
            break win;
        };
        let (value, comps) = fresh.remove(&winner.element).expect("fresh winner");
        trace.push(winner.element, value, comps);
    }
    Ok(trace)
}

/// Best subset of size at most `k` by enumeration; ties resolve to the
/// lexicographically smallest sorted id list.
pub fn brute_force(objective: &dyn SetObjective, k: usize) -> Result<(Vec<usize>, f64)> {
    let n = objective.len();
    if n > 20 {
        return Err(Error::Config(format!("brute force is limited to 20 elements, got {n}")));
    }
    let mut best = (Vec::new(), objective.evaluate(&[])?);
    for size in 1..=k.min(n) {
        let mut comb: Vec<usize> = (0..size).collect();
        loop {
            let v = objective.evaluate(&comb)?;
            if v > best.1 || (v == best.1 && comb < best.0) {
                best = (comb.clone(), v);
            }
            // next combination in lexicographic order
            let mut i = size;
            while i > 0 && comb[i - 1] == n - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            comb[i - 1] += 1;
            for j in i..size {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }
    Ok(best)
}

/// `F` of every subset, indexed by bitmask.
pub fn all_subset_values(objective: &dyn SetObjective) -> Result<Vec<f64>> {
    let n = objective.len();
    if n > 12 {
        return Err(Error::Config(format!("subset enumeration is limited to 12 elements, got {n}")));
    }
    (0u32..1 << n)
        .into_par_iter()
        .map(|mask| {
            let s: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
            objective.evaluate(&s)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubmodularityReport {
    /// Minimum of `(F(A∪x) − F(A)) / (F(B∪x) − F(B))` over positive
    /// denominators; `None` when no denominator was positive.
    pub min_ratio: Option<f64>,
    pub mean_ratio: Option<f64>,
    pub ratio_count: usize,
    /// Triples where `F(A ∪ {x}) < F(A)`.
    pub monotonicity_violations: usize,
    pub triples: usize,
}

/// Diminishing-returns diagnostic over triples `A ⊆ B`, `x ∉ B`. With
/// `trials == 0` every triple is enumerated, otherwise `trials` triples are
/// sampled from the `(seed)` stream.
pub fn submodularity_ratio(
    objective: &dyn SetObjective,
    trials: usize,
    seed: u64,
) -> Result<SubmodularityReport> {
    let n = objective.len();
    let f = all_subset_values(objective)?;
    let full: u32 = (1 << n) - 1;
    let mut report = SubmodularityReport {
        min_ratio: None,
        mean_ratio: None,
        ratio_count: 0,
        monotonicity_violations: 0,
        triples: 0,
    };
    let mut sum = 0.0;
    let mut visit = |a: u32, b: u32, x: usize| {
        let bit = 1u32 << x;
        let num = f[(a | bit) as usize] - f[a as usize];
        let den = f[(b | bit) as usize] - f[b as usize];
        report.triples += 1;
        if num < 0.0 {
            report.monotonicity_violations += 1;
        }
        if den > 0.0 {
            let r = num / den;
            report.min_ratio = Some(report.min_ratio.map_or(r, |m: f64| m.min(r)));
            sum += r;
            report.ratio_count += 1;
        }
    };
    if trials == 0 {
        for b in 0..=full {
            // iterate submasks of b
            let mut a = b;
            loop {
                for x in (0..n).filter(|x| b & (1 << x) == 0) {
                    visit(a, b, x);
                }
                if a == 0 {
                    break;
                }
                a = (a - 1) & b;
            }
        }
    } else {
        let mut r = rng::stream(seed, Domain::Diagnostics, n as u64, trials as u64);
        let mut done = 0;
        while done < trials && n > 0 {
            let x = r.random_range(0..n);
            let b = r.random_range(0..=full) & !(1 << x);
            let a = r.random_range(0..=full) & b;
            visit(a, b, x);
            done += 1;
        }
    }
    if report.ratio_count > 0 {
        report.mean_ratio = Some(sum / report.ratio_count as f64);
    }
    Ok(report)
}
