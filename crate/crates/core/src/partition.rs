//! Candidate sub-images: saliency-ranked grid blocks and SLIC superpixels.
//!
//! A partition splits the image plane into disjoint regions; each candidate
//! element owns one or more regions and is rendered by keeping its pixels and
//! painting everything else with the fill value.

use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{save_mask_png, Image};
use crate::model::LayeredModel;

pub const METADATA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "saliency {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("saliency must be finite and non-negative".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Mean saliency of each cell of an `n × n` grid, row-major.
    pub fn cell_means(&self, n: usize) -> Result<Vec<f64>> {
        let cells = grid_cells(self.height, self.width, n)?;
        Ok(cells
            .iter()
            .map(|c| {
                let mut sum = 0.0;
                for y in c.y0..c.y1 {
                    for x in c.x0..c.x1 {
                        sum += self.get(y, x);
                    }
                }
                sum / ((c.y1 - c.y0) * (c.x1 - c.x0)) as f64
            })
            .collect())
    }
}

/// `|∂ŷ/∂pixel|` maximized over channels, `ŷ` the predicted-class logit.
pub fn gradient_saliency(model: &LayeredModel, image: &Image) -> Result<SaliencyMap> {
    let class = model.predict(image)?;
    let g = model.class_gradients(image, class, model.params())?;
    let grad = g.input_gradient(model).data();
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let values = (0..h * w)
        .map(|p| (0..c).map(|ch| grad[ch * h * w + p].abs()).fold(0.0, f64::max))
        .collect();
    SaliencyMap::new(h, w, values)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Cell {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
}

fn grid_cells(height: usize, width: usize, n: usize) -> Result<Vec<Cell>> {
    if n == 0 || n > height || n > width {
        return Err(Error::Config(format!(
            "a {n}x{n} grid does not fit a {height}x{width} image"
        )));
    }
    let mut cells = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            cells.push(Cell {
                y0: i * height / n,
                y1: (i + 1) * height / n,
                x0: j * width / n,
                x1: (j + 1) * width / n,
            });
        }
    }
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Region {
    pub id: usize,
    pub mask: Vec<bool>,
    pub area: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Element {
    pub id: usize,
    pub regions: Vec<usize>,
    pub area: usize,
    /// Inclusive 1-based saliency ranks covered by a grid element.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_range: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum PartitionConfig {
    Grid { n: usize, m: usize },
    Slic { superpixels: usize, compactness: f64, iterations: usize },
}

impl PartitionConfig {
    pub fn build(
        &self,
        model: &LayeredModel,
        image: &Image,
        fill: &[f64],
    ) -> Result<CandidateSet> {
        match *self {
            PartitionConfig::Grid { n, m } => {
                let sal = gradient_saliency(model, image)?;
                grid_candidates(image, &sal, n, m, fill)
            }
            PartitionConfig::Slic {
                superpixels,
                compactness,
                iterations,
            } => slic_candidates(image, superpixels, compactness, iterations, fill),
        }
    }
}

/// The ground set: base image, region partition and the elements built on it.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    base: Image,
    fill: Vec<f64>,
    regions: Vec<Region>,
    elements: Vec<Element>,
    /// Owning element of each pixel.
    owner: Vec<usize>,
}

impl CandidateSet {
    /// Builds the set from a per-pixel region labelling and the regions each
    /// element owns.
    pub fn from_labels(
        base: Image,
        fill: Vec<f64>,
        labels: &[usize],
        element_regions: Vec<(Vec<usize>, Option<(usize, usize)>)>,
    ) -> Result<Self> {
        let (h, w) = (base.height(), base.width());
        if labels.len() != h * w {
            return Err(Error::Shape("label map does not match image".into()));
        }
        if fill.len() != base.channels() {
            return Err(Error::Shape(format!(
                "fill has {} channels, image {}",
                fill.len(),
                base.channels()
            )));
        }
        let region_count = labels.iter().max().map_or(0, |m| m + 1);
        let mut regions: Vec<Region> = (0..region_count)
            .map(|id| Region {
                id,
                mask: vec![false; h * w],
                area: 0,
            })
            .collect();
        for (p, &l) in labels.iter().enumerate() {
            regions[l].mask[p] = true;
            regions[l].area += 1;
        }
        if let Some(r) = regions.iter().find(|r| r.area == 0) {
            return Err(Error::InvalidInput(format!("region {} is empty", r.id)));
        }
        let mut region_owner = vec![usize::MAX; region_count];
        let mut elements = Vec::with_capacity(element_regions.len());
        for (id, (rs, rank_range)) in element_regions.into_iter().enumerate() {
            let mut area = 0;
            for &r in &rs {
                if r >= region_count || region_owner[r] != usize::MAX {
                    return Err(Error::InvalidInput(format!(
                        "region {r} is unknown or assigned twice"
                    )));
                }
                region_owner[r] = id;
                area += regions[r].area;
            }
            elements.push(Element {
                id,
                regions: rs,
                area,
                rank_range,
            });
        }
        if region_owner.contains(&usize::MAX) {
            return Err(Error::InvalidInput("some region belongs to no element".into()));
        }
        let owner = labels.iter().map(|&l| region_owner[l]).collect();
        Ok(Self {
            base,
            fill,
            regions,
            elements,
            owner,
        })
    }

    pub fn base_image(&self) -> &Image {
        &self.base
    }

    pub fn fill_value(&self) -> &[f64] {
        &self.fill
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn owner_map(&self) -> &[usize] {
        &self.owner
    }

    /// Pixels kept by `element`.
    pub fn element_mask(&self, element: usize) -> Vec<bool> {
        self.owner.iter().map(|&o| o == element).collect()
    }

    fn membership(&self, subset: &[usize]) -> Result<Vec<bool>> {
        let mut keep = vec![false; self.elements.len()];
        for &id in subset {
            if id >= keep.len() {
                return Err(Error::InvalidInput(format!("unknown element id {id}")));
            }
            if keep[id] {
                return Err(Error::InvalidInput(format!("element id {id} repeated")));
            }
            keep[id] = true;
        }
        Ok(keep)
    }

    /// The base image restricted to the union of `subset`, fill elsewhere.
    pub fn compose(&self, subset: &[usize]) -> Result<Image> {
        let keep = self.membership(subset)?;
        Ok(self.compose_with(&keep))
    }

    /// The base image with `subset` painted over by the fill value.
    pub fn compose_complement(&self, subset: &[usize]) -> Result<Image> {
        let mut keep = self.membership(subset)?;
        keep.iter_mut().for_each(|k| *k = !*k);
        Ok(self.compose_with(&keep))
    }

    fn compose_with(&self, keep: &[bool]) -> Image {
        let mut out = self.base.clone();
        let plane = self.base.height() * self.base.width();
        let data = out.data_mut();
        for (p, &o) in self.owner.iter().enumerate() {
            if !keep[o] {
                for (c, &f) in self.fill.iter().enumerate() {
                    data[c * plane + p] = f;
                }
            }
        }
        out
    }

    pub fn metadata(&self, mode: &str) -> CandidateMetadata {
        CandidateMetadata {
            format_version: METADATA_VERSION,
            mode: mode.to_string(),
            height: self.base.height(),
            width: self.base.width(),
            region_count: self.regions.len(),
            elements: self.elements.clone(),
        }
    }

    /// Writes `element_<id>.png` masks into `dir`.
    pub fn save_masks(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for e in &self.elements {
            save_mask_png(
                &self.element_mask(e.id),
                self.base.height(),
                self.base.width(),
                &dir.join(format!("element_{:03}.png", e.id)),
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateMetadata {
    pub format_version: u32,
    pub mode: String,
    pub height: usize,
    pub width: usize,
    pub region_count: usize,
    pub elements: Vec<Element>,
}

/// Row-major cell indices sorted by descending score, ties by index.
pub fn rank_cells(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx
}

/// `m` elements over an `n × n` grid; element `l` keeps the cells ranked
/// `(d(l−1), dl]` by mean saliency, `d = n²/m`.
pub fn grid_candidates(
    image: &Image,
    saliency: &SaliencyMap,
    n: usize,
    m: usize,
    fill: &[f64],
) -> Result<CandidateSet> {
    if saliency.height() != image.height() || saliency.width() != image.width() {
        return Err(Error::Shape("saliency map does not match image".into()));
    }
    if m == 0 || n == 0 || (n * n) % m != 0 {
        return Err(Error::Config(format!("{n}x{n} cells cannot be split into {m} equal groups")));
    }
    let cells = grid_cells(image.height(), image.width(), n)?;
    let order = rank_cells(&saliency.cell_means(n)?);
    let d = n * n / m;
    let mut labels = vec![0; image.height() * image.width()];
    for (ci, c) in cells.iter().enumerate() {
        for y in c.y0..c.y1 {
            for x in c.x0..c.x1 {
                labels[y * image.width() + x] = ci;
            }
        }
    }
    let elements = (0..m)
        .map(|l| (order[l * d..(l + 1) * d].to_vec(), Some((l * d + 1, (l + 1) * d))))
        .collect();
    CandidateSet::from_labels(image.clone(), fill.to_vec(), &labels, elements)
}

/// One element per SLIC superpixel.
pub fn slic_candidates(
    image: &Image,
    superpixels: usize,
    compactness: f64,
    iterations: usize,
    fill: &[f64],
) -> Result<CandidateSet> {
    let labels = slic_labels(image, superpixels, compactness, iterations)?;
    let count = labels.iter().max().map_or(0, |m| m + 1);
    let elements = (0..count).map(|r| (vec![r], None)).collect();
    CandidateSet::from_labels(image.clone(), fill.to_vec(), &labels, elements)
}

#[derive(Clone, Copy, Debug)]
struct Center {
    y: f64,
    x: f64,
}

/// SLICO labelling: k-means in (color, position) with grid-seeded centers and
/// per-cluster color normalization, followed by a connectivity pass. Labels
/// are renumbered in row-major order of first appearance.
pub fn slic_labels(
    image: &Image,
    k: usize,
    compactness: f64,
    iterations: usize,
) -> Result<Vec<usize>> {
    let (ch, h, w) = (image.channels(), image.height(), image.width());
    let n = h * w;
    if k < 2 {
        return Err(Error::Config("at least two superpixels are required".into()));
    }
    if k > n {
        return Err(Error::Config(format!("{k} superpixels exceed {n} pixels")));
    }
    if !(compactness > 0.0 && compactness.is_finite()) {
        return Err(Error::Config("compactness must be positive".into()));
    }
    let nx = ((k as f64 * w as f64 / h as f64).sqrt().ceil() as usize).clamp(1, w);
    let ny = ((k as f64 / nx as f64).round() as usize).clamp(1, h);
    let step_x = w as f64 / nx as f64;
    let step_y = h as f64 / ny as f64;
    let s = (n as f64 / (nx * ny) as f64).sqrt();
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            centers.push(Center {
                y: (j as f64 + 0.5) * step_y,
                x: (i as f64 + 0.5) * step_x,
            });
        }
    }
    let plane = image.data();
    let color = |p: usize| -> Vec<f64> { (0..ch).map(|c| plane[c * n + p]).collect() };
    let mut center_colors: Vec<Vec<f64>> = centers
        .iter()
        .map(|c| {
            let y = (c.y as usize).min(h - 1);
            let x = (c.x as usize).min(w - 1);
            color(y * w + x)
        })
        .collect();
    let mut mc = vec![compactness; centers.len()];
    let reach_y = step_y.ceil() as isize;
    let reach_x = step_x.ceil() as isize;
    let mut labels = vec![0usize; n];

    for _ in 0..iterations.max(1) {
        let mut best = vec![f64::INFINITY; n];
        for (ci, c) in centers.iter().enumerate() {
            let cy = c.y.floor() as isize;
            let cx = c.x.floor() as isize;
            let y0 = (cy - reach_y).max(0) as usize;
            let y1 = ((cy + reach_y + 1) as usize).min(h);
            let x0 = (cx - reach_x).max(0) as usize;
            let x1 = ((cx + reach_x + 1) as usize).min(w);
            for y in y0..y1 {
                for x in x0..x1 {
                    let p = y * w + x;
                    let dc2: f64 = (0..ch)
                        .map(|k| (plane[k * n + p] - center_colors[ci][k]).powi(2))
                        .sum();
                    let py = y as f64 + 0.5;
                    let px = x as f64 + 0.5;
                    let ds2 = (py - c.y).powi(2) + (px - c.x).powi(2);
                    let d = dc2 / (mc[ci] * mc[ci]) + ds2 / (s * s);
                    if d < best[p] {
                        best[p] = d;
                        labels[p] = ci;
                    }
                }
            }
        }
        // every pixel lies within one step of some seed, so all are labelled
        let mut sums = vec![(0.0, 0.0, vec![0.0; ch], 0usize); centers.len()];
        for p in 0..n {
            let e = &mut sums[labels[p]];
            e.0 += (p / w) as f64 + 0.5;
            e.1 += (p % w) as f64 + 0.5;
            for k in 0..ch {
                e.2[k] += plane[k * n + p];
            }
            e.3 += 1;
        }
        for (ci, (sy, sx, sc, count)) in sums.into_iter().enumerate() {
            if count > 0 {
                let cnt = count as f64;
                centers[ci] = Center { y: sy / cnt, x: sx / cnt };
                center_colors[ci] = sc.into_iter().map(|v| v / cnt).collect();
            }
        }
        let mut max_dc = vec![0.0f64; centers.len()];
        for p in 0..n {
            let l = labels[p];
            let dc: f64 = (0..ch)
                .map(|k| (plane[k * n + p] - center_colors[l][k]).powi(2))
                .sum::<f64>()
                .sqrt();
            max_dc[l] = max_dc[l].max(dc);
        }
        for (m, d) in mc.iter_mut().zip(max_dc) {
            *m = d.max(1e-3);
        }
    }
    Ok(enforce_connectivity(&labels, h, w))
}

fn neighbors(p: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (y, x) = (p / w, p % w);
    [
        (y > 0).then(|| p - w),
        (y + 1 < h).then(|| p + w),
        (x > 0).then(|| p - 1),
        (x + 1 < w).then(|| p + 1),
    ]
    .into_iter()
    .flatten()
}

/// Keeps the largest 4-connected component of every label and merges each
/// remaining component into its largest adjacent one, smallest first.
fn enforce_connectivity(labels: &[usize], h: usize, w: usize) -> Vec<usize> {
    let n = h * w;
    let mut comp = vec![usize::MAX; n];
    let mut comp_pixels: Vec<Vec<usize>> = Vec::new();
    let mut comp_label = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comp_pixels.len();
        let mut pixels = vec![start];
        comp[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for q in neighbors(p, h, w) {
                if comp[q] == usize::MAX && labels[q] == labels[start] {
                    comp[q] = id;
                    pixels.push(q);
                    queue.push_back(q);
                }
            }
        }
        comp_pixels.push(pixels);
        comp_label.push(labels[start]);
    }
    let label_count = labels.iter().max().map_or(0, |m| m + 1);
    let mut main = vec![usize::MAX; label_count];
    for (c, &l) in comp_label.iter().enumerate() {
        if main[l] == usize::MAX || comp_pixels[c].len() > comp_pixels[main[l]].len() {
            main[l] = c;
        }
    }
    let mut orphans: Vec<usize> = (0..comp_pixels.len()).filter(|&c| main[comp_label[c]] != c).collect();
    orphans.sort_by_key(|&c| (comp_pixels[c].len(), c));

    let mut parent: Vec<usize> = (0..comp_pixels.len()).collect();
    fn find(parent: &mut [usize], mut c: usize) -> usize {
        while parent[c] != c {
            parent[c] = parent[parent[c]];
            c = parent[c];
        }
        c
    }
    let mut size: Vec<usize> = comp_pixels.iter().map(Vec::len).collect();
    let mut members: Vec<Vec<usize>> = (0..comp_pixels.len()).map(|c| vec![c]).collect();
    for o in orphans {
        let root = find(&mut parent, o);
        let mut target: Option<usize> = None;
        for &c in &members[root].clone() {
            for &p in &comp_pixels[c] {
                for q in neighbors(p, h, w) {
                    let r = find(&mut parent, comp[q]);
                    if r == root {
                        continue;
                    }
                    let better = match target {
                        None => true,
                        Some(t) => size[r] > size[t] || (size[r] == size[t] && r < t),
                    };
                    if better {
                        target = Some(r);
                    }
                }
            }
        }
        if let Some(t) = target {
            parent[root] = t;
            size[t] += size[root];
            let moved = std::mem::take(&mut members[root]);
            members[t].extend(moved);
        }
    }
    // roots are main components (or a lone orphan with no neighbor); number
    // them in row-major order of first pixel
    let mut new_id = vec![usize::MAX; comp_pixels.len()];
    let mut next = 0;
    let mut out = vec![0; n];
    for p in 0..n {
        let r = find(&mut parent, comp[p]);
        if new_id[r] == usize::MAX {
            new_id[r] = next;
            next += 1;
        }
        out[p] = new_id[r];
    }
    out
}

/// True when every label forms a single 4-connected component.
pub fn labels_connected(labels: &[usize], h: usize, w: usize) -> bool {
    let count = labels.iter().max().map_or(0, |m| m + 1);
    let mut seen = vec![false; labels.len()];
    let mut visited_label = vec![false; count];
    for start in 0..labels.len() {
        if seen[start] {
            continue;
        }
        if visited_label[labels[start]] {
            return false;
        }
        visited_label[labels[start]] = true;
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(p) = queue.pop_front() {
            for q in neighbors(p, h, w) {
                if !seen[q] && labels[q] == labels[start] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        let data = (0..h * w).map(|p| f(p / w, p % w)).collect();
        Image::new(1, h, w, data).unwrap()
    }

    #[test]
    fn single_division_keeps_full_image() {
        let img = gray(8, 8, |y, x| (y * 8 + x) as f64 / 64.0);
        let sal = SaliencyMap::new(8, 8, vec![1.0; 64]).unwrap();
        let cs = grid_candidates(&img, &sal, 4, 1, &[0.5]).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs.compose(&[0]).unwrap(), img);
    }

    #[test]
    fn most_salient_cell_goes_first() {
        let img = gray(4, 4, |_, _| 1.0);
        let cell_value = [4.0, 3.0, 2.0, 1.0];
        let sal = SaliencyMap::new(4, 4, (0..16).map(|p| cell_value[(p / 4 / 2) * 2 + (p % 4) / 2]).collect()).unwrap();
        let cs = grid_candidates(&img, &sal, 2, 4, &[0.0]).unwrap();
        let kept = cs.element_mask(0);
        for p in 0..16 {
            assert_eq!(kept[p], p / 4 < 2 && p % 4 < 2);
        }
        assert_eq!(cs.elements()[0].rank_range, Some((1, 1)));
    }

    #[test]
    fn rank_ties_follow_row_major_order() {
        assert_eq!(rank_cells(&[1.0, 2.0, 2.0, 0.5]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn indivisible_grid_is_a_config_error() {
        let img = gray(6, 6, |_, _| 0.0);
        let sal = SaliencyMap::new(6, 6, vec![0.0; 36]).unwrap();
        assert!(matches!(grid_candidates(&img, &sal, 3, 2, &[0.0]), Err(Error::Config(_))));
        assert!(matches!(grid_candidates(&img, &sal, 7, 7, &[0.0]), Err(Error::Config(_))));
    }

    #[test]
    fn cell_means_are_box_averages() {
        let sal = SaliencyMap::new(2, 4, vec![1.0, 3.0, 0.0, 0.0, 5.0, 7.0, 2.0, 2.0]).unwrap();
        assert_eq!(sal.cell_means(2).unwrap(), vec![2.0, 0.0, 6.0, 2.0]);
    }

    #[test]
    fn compose_empty_and_duplicate() {
        let img = gray(4, 4, |y, _| y as f64 / 4.0);
        let sal = SaliencyMap::new(4, 4, vec![1.0; 16]).unwrap();
        let cs = grid_candidates(&img, &sal, 2, 2, &[0.25]).unwrap();
        assert_eq!(cs.compose(&[]).unwrap(), Image::filled(1, 4, 4, &[0.25]));
        assert!(cs.compose(&[1, 1]).is_err());
        assert!(cs.compose(&[2]).is_err());
        assert_eq!(cs.compose(&[1, 0]).unwrap(), img);
    }

    #[test]
    fn uniform_image_gives_equal_rectangles() {
        let img = gray(16, 16, |_, _| 0.3);
        let labels = slic_labels(&img, 4, 0.1, 10).unwrap();
        let mut areas = [0; 4];
        for (p, &l) in labels.iter().enumerate() {
            areas[l] += 1;
            let quadrant = (p / 16 / 8) * 2 + (p % 16) / 8;
            assert_eq!(l, quadrant);
        }
        assert_eq!(areas, [64; 4]);
    }

    #[test]
    fn two_halves_are_recovered() {
        let img = gray(20, 20, |_, x| if x < 10 { 0.1 } else { 0.9 });
        let labels = slic_labels(&img, 2, 0.1, 10).unwrap();
        let agree = labels
            .iter()
            .enumerate()
            .filter(|(p, &l)| (p % 20 < 10) == (l == labels[0]))
            .count();
        assert!(agree as f64 >= 0.95 * 400.0, "agreement {agree}");
    }

    #[test]
    fn connectivity_merges_orphans() {
        // label 0 split into two pieces, the lone pixel must be absorbed
        let labels = vec![0, 1, 1, 1, 1, 0, 1, 1, 0];
        let out = enforce_connectivity(&labels, 3, 3);
        assert!(labels_connected(&out, 3, 3));
        assert_eq!(out[0], out[1]);
    }

    #[test]
    fn too_many_superpixels_rejected() {
        let img = gray(3, 3, |_, _| 0.0);
        assert!(slic_labels(&img, 10, 0.1, 5).is_err());
        assert!(slic_labels(&img, 1, 0.1, 5).is_err());
    }

    #[test]
    fn metadata_round_trip() {
        let img = gray(4, 4, |_, _| 0.0);
        let sal = SaliencyMap::new(4, 4, vec![0.0; 16]).unwrap();
        let cs = grid_candidates(&img, &sal, 2, 2, &[0.0]).unwrap();
        let meta = cs.metadata("grid");
        let text = serde_json::to_string(&meta).unwrap();
        assert_eq!(serde_json::from_str::<CandidateMetadata>(&text).unwrap(), meta);
        assert_eq!(meta.elements[1].rank_range, Some((3, 4)));
    }
}
