//! Synthetic shape datasets with in-distribution and shifted splits.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{self, Domain};

pub const MANIFEST_VERSION: u32 = 1;
/// Label carried by images of held-out classes.
pub const NO_LABEL: i64 = -1;

pub const CLASS_NAMES: [&str; 4] = ["circle", "square", "triangle", "cross"];
pub const HELD_OUT_NAMES: [&str; 3] = ["stripes", "checker", "dots"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shift {
    Id,
    Related,
    Complementary,
    Transformed,
}

impl Shift {
    pub const ALL: [Shift; 4] = [Shift::Id, Shift::Related, Shift::Complementary, Shift::Transformed];

    pub fn name(self) -> &'static str {
        match self {
            Shift::Id => "id",
            Shift::Related => "related",
            Shift::Complementary => "complementary",
            Shift::Transformed => "transformed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown shift '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformKind {
    GaussianNoise,
    Blur,
    Rotation,
}

/// Corruption applied to in-distribution images. Magnitude is the noise
/// standard deviation, the box-blur radius in pixels, or the rotation angle
/// in degrees; zero leaves the image unchanged.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodTransformSpec {
    pub kind: TransformKind,
    pub magnitude: f64,
}

impl OodTransformSpec {
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, mag) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("transform '{s}' must look like kind:magnitude")))?;
        let kind = match kind {
            "gaussian-noise" | "noise" => TransformKind::GaussianNoise,
            "blur" => TransformKind::Blur,
            "rotation" => TransformKind::Rotation,
            other => return Err(Error::Config(format!("unknown transform '{other}'"))),
        };
        let magnitude: f64 = mag
            .parse()
            .map_err(|_| Error::Config(format!("bad transform magnitude '{mag}'")))?;
        let spec = Self { kind, magnitude };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude >= 0.0 && self.magnitude.is_finite()) {
            return Err(Error::Config(format!(
                "transform magnitude must be finite and >= 0, got {}",
                self.magnitude
            )));
        }
        Ok(())
    }

    pub fn apply(&self, image: &Image, rng: &mut ChaCha8Rng) -> Image {
        if self.magnitude == 0.0 {
            return image.clone();
        }
        match self.kind {
            TransformKind::GaussianNoise => {
                let mut out = image.clone();
                for v in out.data_mut() {
                    let e: f64 = rng.sample(StandardNormal);
                    *v = (*v + self.magnitude * e).clamp(0.0, 1.0);
                }
                out
            }
            TransformKind::Blur => box_blur(image, self.magnitude.round().max(1.0) as usize),
            TransformKind::Rotation => rotate(image, self.magnitude),
        }
    }
}

fn box_blur(image: &Image, radius: usize) -> Image {
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let mut out = image.clone();
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let (mut sum, mut n) = (0.0, 0);
                for yy in y.saturating_sub(radius)..(y + radius + 1).min(h) {
                    for xx in x.saturating_sub(radius)..(x + radius + 1).min(w) {
                        sum += image.get(ch, yy, xx);
                        n += 1;
                    }
                }
                out.set(ch, y, x, sum / n as f64);
            }
        }
    }
    out
}

/// Bilinear rotation about the image center; uncovered pixels take the
/// image's mean border value.
fn rotate(image: &Image, degrees: f64) -> Image {
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let (s, co) = (degrees * PI / 180.0).sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = image.clone();
    for ch in 0..c {
        let mut border = 0.0;
        for x in 0..w {
            border += image.get(ch, 0, x) + image.get(ch, h - 1, x);
        }
        border /= (2 * w) as f64;
        for y in 0..h {
            for x in 0..w {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                let sx = co * dx + s * dy + cx;
                let sy = -s * dx + co * dy + cy;
                let (xmax, ymax) = ((w - 1) as f64, (h - 1) as f64);
                let v = if sx < -1e-9 || sy < -1e-9 || sx > xmax + 1e-9 || sy > ymax + 1e-9 {
                    border
                } else {
                    let (sx, sy) = (sx.clamp(0.0, xmax), sy.clamp(0.0, ymax));
                    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
                    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
                    let (fx, fy) = (sx - x0 as f64, sy - y0 as f64);
                    let top = image.get(ch, y0, x0) * (1.0 - fx) + image.get(ch, y0, x1) * fx;
                    let bot = image.get(ch, y1, x0) * (1.0 - fx) + image.get(ch, y1, x1) * fx;
                    top * (1.0 - fy) + bot * fy
                };
                out.set(ch, y, x, v);
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub path: String,
    pub label: i64,
    pub split: Split,
    pub shift: Shift,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<OodTransformSpec>,
}

impl DatasetEntry {
    pub fn class(&self) -> Option<usize> {
        usize::try_from(self.label).ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub held_out_names: Vec<String>,
    pub image_size: [usize; 2],
    pub channels: usize,
    pub seed: u64,
    pub entries: Vec<DatasetEntry>,
}

impl DatasetManifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    /// Reads a manifest; image paths are resolved against the manifest's
    /// directory and must exist.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("bad manifest {}: {e}", path.display())))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(Error::Data(format!(
                "manifest format version {} is not supported",
                m.format_version
            )));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        m.root = base.to_path_buf();
        let classes = m.class_names.len() as i64;
        for e in &m.entries {
            if !base.join(&e.path).is_file() {
                return Err(Error::Data(format!("missing image {}", e.path)));
            }
            let ok = match e.shift {
                Shift::Complementary => e.label == NO_LABEL,
                _ => (0..classes).contains(&e.label),
            };
            if !ok {
                return Err(Error::Data(format!("entry {} has invalid label {}", e.path, e.label)));
            }
        }
        Ok(m)
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.image_size[0], self.image_size[1]]
    }

    pub fn image(&self, entry: &DatasetEntry) -> Result<Image> {
        let img = Image::load(&self.root.join(&entry.path))?;
        if img.shape() != self.input_shape() {
            return Err(Error::Data(format!(
                "{} has shape {:?}, manifest says {:?}",
                entry.path,
                img.shape(),
                self.input_shape()
            )));
        }
        Ok(img)
    }

    pub fn select(&self, split: Split, shift: Shift) -> Vec<&DatasetEntry> {
        self.entries
            .iter()
            .filter(|e| e.split == split && e.shift == shift)
            .collect()
    }

    /// Images and labels of one labelled subset.
    pub fn labelled(&self, split: Split, shift: Shift) -> Result<(Vec<Image>, Vec<usize>)> {
        let entries = self.select(split, shift);
        let mut images = Vec::with_capacity(entries.len());
        let mut labels = Vec::with_capacity(entries.len());
        for e in entries {
            let label = e
                .class()
                .ok_or_else(|| Error::Data(format!("{} has no class label", e.path)))?;
            images.push(self.image(e)?);
            labels.push(label);
        }
        Ok((images, labels))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub size: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub related_per_class: usize,
    pub complementary: usize,
    pub transform: OodTransformSpec,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            size: 56,
            train_per_class: 100,
            test_per_class: 25,
            related_per_class: 10,
            complementary: 40,
            transform: OodTransformSpec {
                kind: TransformKind::GaussianNoise,
                magnitude: 0.3,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Stripes,
    Checker,
    Dots,
}

impl Shape {
    pub const CLASSES: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross];
    /// Multi-part patterns that share no structure with the classes.
    pub const HELD_OUT: [Shape; 3] = [Shape::Stripes, Shape::Checker, Shape::Dots];

    /// Membership of a point given in shape-local units (radius 1).
    fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Shape::Circle => u * u + v * v <= 1.0,
            Shape::Square => u.abs() <= 0.8 && v.abs() <= 0.8,
            Shape::Triangle => {
                // upward equilateral triangle with circumradius 1
                v <= 0.5 && v >= -1.0 && {
                    let half = (v + 1.0) / 1.5 * (3f64.sqrt() / 2.0);
                    u.abs() <= half
                }
            }
            Shape::Cross => (u.abs() <= 0.3 && v.abs() <= 1.0) || (v.abs() <= 0.3 && u.abs() <= 1.0),
            // three horizontal bars
            Shape::Stripes => u.abs() <= 1.0 && v.abs() <= 1.0 && ((v + 1.0) * 2.5).floor() as i64 % 2 == 0,
            // 4×4 checkerboard
            Shape::Checker => {
                let cell = |t: f64| ((t + 1.0) * 2.0).floor() as i64;
                u.abs() <= 1.0 && v.abs() <= 1.0 && (cell(u) + cell(v)) % 2 == 0
            }
            // five dots in a quincunx
            Shape::Dots => [(-0.6, -0.6), (0.6, -0.6), (0.0, 0.0), (-0.6, 0.6), (0.6, 0.6)]
                .iter()
                .any(|(a, b)| (u - a).powi(2) + (v - b).powi(2) <= 0.09),
        }
    }
}

/// Style of a rendered shape: filled, outlined, or shrunk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Filled,
    Outline,
    Small,
}

pub fn render(shape: Shape, style: Style, size: usize, rng: &mut ChaCha8Rng) -> Image {
    let c = size as f64 / 2.0;
    let cx = c + rng.random_range(-6.0..=6.0);
    let cy = c + rng.random_range(-6.0..=6.0);
    let base_r = rng.random_range(0.2..=0.28) * size as f64;
    let radius = if style == Style::Small { base_r * 0.55 } else { base_r };
    let angle: f64 = rng.random_range(-0.3..=0.3);
    let fg = rng.random_range(0.7..=1.0);
    let bg = rng.random_range(0.0..=0.15);
    let (s, co) = angle.sin_cos();
    let stroke = 2.5 / radius;
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = ((x as f64 + 0.5 - cx) / radius, (y as f64 + 0.5 - cy) / radius);
            let (u, v) = (co * dx + s * dy, -s * dx + co * dy);
            let inside = match style {
                Style::Outline => {
                    shape.contains(u, v) && !shape.contains(u / (1.0 - stroke), v / (1.0 - stroke))
                }
                _ => shape.contains(u, v),
            };
            let noise: f64 = rng.sample::<f64, _>(StandardNormal) * 0.03;
            data.push(((if inside { fg } else { bg }) + noise).clamp(0.0, 1.0));
        }
    }
    Image::new(1, size, size, data).expect("rendered buffer").quantized()
}

/// Renders the benchmark into `out_dir` (PNG images plus `manifest.json`).
/// Labels are assigned round-robin, so class counts differ by at most one.
pub fn generate_dataset(config: &DatasetConfig, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    config.transform.validate()?;
    if config.size < 16 {
        return Err(Error::Config("image size must be at least 16".into()));
    }
    let img_dir = out_dir.join("images");
    fs::create_dir_all(&img_dir)?;
    let classes = Shape::CLASSES.len();
    let mut entries = Vec::new();
    let mut counter = 0u64;
    let mut emit = |image: &Image,
                    label: i64,
                    split: Split,
                    shift: Shift,
                    transform: Option<OodTransformSpec>,
                    entries: &mut Vec<DatasetEntry>|
     -> Result<()> {
        let name = format!(
            "images/{}_{}_{:05}.png",
            match split {
                Split::Train => "train",
                Split::Test => "test",
            },
            shift.name(),
            counter
        );
        counter += 1;
        image.save_png(&out_dir.join(&name))?;
        entries.push(DatasetEntry {
            path: name,
            label,
            split,
            shift,
            transform,
        });
        Ok(())
    };
    let draw = |stream: u64, i: usize, shape: Shape, style: Style| {
        let mut r = rng::stream(seed, Domain::Dataset, stream, i as u64);
        render(shape, style, config.size, &mut r)
    };
    for i in 0..config.train_per_class * classes {
        let img = draw(0, i, Shape::CLASSES[i % classes], Style::Filled);
        emit(&img, (i % classes) as i64, Split::Train, Shift::Id, None, &mut entries)?;
    }
    let mut id_test = Vec::new();
    for i in 0..config.test_per_class * classes {
        let img = draw(1, i, Shape::CLASSES[i % classes], Style::Filled);
        emit(&img, (i % classes) as i64, Split::Test, Shift::Id, None, &mut entries)?;
        id_test.push((img, i % classes));
    }
    for i in 0..config.related_per_class * classes {
        let style = if (i / classes) % 2 == 0 { Style::Outline } else { Style::Small };
        let img = draw(2, i, Shape::CLASSES[i % classes], style);
        emit(&img, (i % classes) as i64, Split::Test, Shift::Related, None, &mut entries)?;
    }
    for i in 0..config.complementary {
        let img = draw(3, i, Shape::HELD_OUT[i % Shape::HELD_OUT.len()], Style::Filled);
        emit(&img, NO_LABEL, Split::Test, Shift::Complementary, None, &mut entries)?;
    }
    for (i, (img, label)) in id_test.iter().enumerate() {
        let mut r = rng::stream(seed, Domain::Dataset, 4, i as u64);
        let out = config.transform.apply(img, &mut r).quantized();
        emit(
            &out,
            *label as i64,
            Split::Test,
            Shift::Transformed,
            Some(config.transform),
            &mut entries,
        )?;
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        root: out_dir.to_path_buf(),
        class_names: CLASS_NAMES.map(String::from).to_vec(),
        held_out_names: HELD_OUT_NAMES.map(String::from).to_vec(),
        image_size: [config.size, config.size],
        channels: 1,
        seed,
        entries,
    };
    manifest.save(&out_dir.join(DatasetManifest::FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig {
            size: 24,
            train_per_class: 3,
            test_per_class: 2,
            related_per_class: 2,
            complementary: 3,
            ..DatasetConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let ma = generate_dataset(&small(), 5, a.path()).unwrap();
        generate_dataset(&small(), 5, b.path()).unwrap();
        for e in &ma.entries {
            assert_eq!(
                fs::read(a.path().join(&e.path)).unwrap(),
                fs::read(b.path().join(&e.path)).unwrap()
            );
        }
    }

    #[test]
    fn zero_noise_transform_is_identity() {
        let mut cfg = small();
        cfg.transform.magnitude = 0.0;
        let d = tempfile::tempdir().unwrap();
        let m = generate_dataset(&cfg, 0, d.path()).unwrap();
        let id = m.select(Split::Test, Shift::Id);
        let tr = m.select(Split::Test, Shift::Transformed);
        assert_eq!(id.len(), tr.len());
        for (a, b) in id.iter().zip(&tr) {
            assert_eq!(m.image(a).unwrap(), m.image(b).unwrap());
        }
    }

    #[test]
    fn classes_are_balanced() {
        let d = tempfile::tempdir().unwrap();
        let mut cfg = small();
        cfg.train_per_class = 5;
        let m = generate_dataset(&cfg, 1, d.path()).unwrap();
        let mut counts = [0; 4];
        for e in m.select(Split::Train, Shift::Id) {
            counts[e.class().unwrap()] += 1;
        }
        let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn manifest_round_trip_and_labels() {
        let d = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(), 2, d.path()).unwrap();
        let back = DatasetManifest::load(&d.path().join(DatasetManifest::FILE)).unwrap();
        assert_eq!(back, m);
        assert!(back
            .select(Split::Test, Shift::Complementary)
            .iter()
            .all(|e| e.label == NO_LABEL));
    }

    #[test]
    fn missing_image_is_a_data_error() {
        let d = tempfile::tempdir().unwrap();
        let m = generate_dataset(&small(), 2, d.path()).unwrap();
        fs::remove_file(d.path().join(&m.entries[0].path)).unwrap();
        assert!(matches!(
            DatasetManifest::load(&d.path().join(DatasetManifest::FILE)),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn shapes_differ() {
        let mut seen = Vec::new();
        for s in Shape::CLASSES.iter().chain(&Shape::HELD_OUT) {
            let mut r = rng::stream(0, Domain::Dataset, 9, 0);
            let img = render(*s, Style::Filled, 32, &mut r);
            let area = img.data().iter().filter(|v| **v > 0.5).count();
            assert!(area > 20, "{s:?} area {area}");
            seen.push(img);
        }
        for i in 0..seen.len() {
            for j in 0..i {
                assert_ne!(seen[i], seen[j]);
            }
        }
    }

    #[test]
    fn transform_parsing() {
        let t = OodTransformSpec::parse("gaussian-noise:0.3").unwrap();
        assert_eq!(t.kind, TransformKind::GaussianNoise);
        assert!(OodTransformSpec::parse("blur:-1").is_err());
        assert!(OodTransformSpec::parse("warp:1").is_err());
        let img = Image::new(1, 4, 4, (0..16).map(|p| p as f64 / 16.0).collect()).unwrap();
        let mut r = rng::stream(0, Domain::Dataset, 0, 0);
        let rot = OodTransformSpec { kind: TransformKind::Rotation, magnitude: 360.0 }.apply(&img, &mut r);
        for (a, b) in rot.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
