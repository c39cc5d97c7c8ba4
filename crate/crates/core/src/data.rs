//! 28x28 grayscale, 10-class image data.
//!
//! Two sources are supported: a directory of IDX files in the Fashion-MNIST
//! layout (`train-images-idx3-ubyte[.gz]` and friends), and a procedural
//! generator of garment silhouettes with the same class structure. The
//! generator needs no downloads and is what the test suites use.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 28;
pub const IMAGE_PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "t-shirt", "trouser", "pullover", "dress", "coat", "sandal", "shirt", "sneaker", "bag",
    "ankle-boot",
];

/// One labelled image, pixels row-major in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pixels: Vec<f32>,
    label: u8,
}

impl ImageSample {
    pub fn new(pixels: Vec<f32>, label: u8) -> Result<Self> {
        if pixels.len() != IMAGE_PIXELS {
            return Err(Error::DimensionMismatch {
                expected: IMAGE_PIXELS,
                actual: pixels.len(),
            });
        }
        if pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidParameter("pixel outside [0, 1]".into()));
        }
        if usize::from(label) >= NUM_CLASSES {
            return Err(Error::InvalidParameter(format!("label {label} out of range")));
        }
        Ok(Self { pixels, label })
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn label(&self) -> u8 {
        self.label
    }
}

/// Stack images into a `(n, 784)` batch.
pub fn to_batch(images: &[ImageSample]) -> Array2<f32> {
    let mut out = Array2::zeros((images.len(), IMAGE_PIXELS));
    for (mut row, img) in out.rows_mut().into_iter().zip(images) {
        row.as_slice_mut()
            .expect("contiguous")
            .copy_from_slice(&img.pixels);
    }
    out
}

pub fn mean_image(images: &[ImageSample]) -> Vec<f32> {
    let mut acc = vec![0.0f64; IMAGE_PIXELS];
    for img in images {
        for (a, &p) in acc.iter_mut().zip(&img.pixels) {
            *a += f64::from(p);
        }
    }
    acc.iter().map(|a| (a / images.len() as f64) as f32).collect()
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<ImageSample>,
    pub test: Vec<ImageSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// Procedural garment silhouettes.
    Synthetic { train: usize, test: usize, seed: u64 },
    /// Directory holding Fashion-MNIST style IDX files.
    Idx {
        dir: PathBuf,
        #[serde(default)]
        limit_train: Option<usize>,
        #[serde(default)]
        limit_test: Option<usize>,
    },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic {
            train: 12_000,
            test: 2_000,
            seed: 2024,
        }
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic { train, test, seed } => {
                // test images come from a disjoint stream
                Ok(Dataset {
                    train: synthetic(*train, *seed, 0),
                    test: synthetic(*test, *seed, 1),
                })
            }
            DatasetSource::Idx {
                dir,
                limit_train,
                limit_test,
            } => {
                let mut train = load_idx(dir, "train")?;
                let mut test = load_idx(dir, "t10k")?;
                if let Some(n) = limit_train {
                    train.truncate(*n);
                }
                if let Some(n) = limit_test {
                    test.truncate(*n);
                }
                Ok(Dataset { train, test })
            }
        }
    }
}

impl DatasetSource {
    /// Held-out split only; skips rendering or parsing the training set.
    pub fn load_test(&self) -> Result<Vec<ImageSample>> {
        match self {
            DatasetSource::Synthetic { test, seed, .. } => Ok(synthetic(*test, *seed, 1)),
            DatasetSource::Idx { dir, limit_test, .. } => {
                let mut test = load_idx(dir, "t10k")?;
                if let Some(n) = limit_test {
                    test.truncate(*n);
                }
                Ok(test)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// IDX reader

fn open_maybe_gz(dir: &Path, stem: &str) -> Result<Vec<u8>> {
    let plain = dir.join(stem);
    let gz = dir.join(format!("{stem}.gz"));
    let mut bytes = Vec::new();
    if plain.exists() {
        File::open(&plain)?.read_to_end(&mut bytes)?;
    } else if gz.exists() {
        GzDecoder::new(File::open(&gz)?).read_to_end(&mut bytes)?;
    } else {
        return Err(Error::MissingArtifact(plain));
    }
    Ok(bytes)
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Config("truncated IDX header".into()))
}

/// Reads `{prefix}-images-idx3-ubyte` and `{prefix}-labels-idx1-ubyte`
/// (optionally gzip-compressed) from `dir`.
pub fn load_idx(dir: &Path, prefix: &str) -> Result<Vec<ImageSample>> {
    let images = open_maybe_gz(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let labels = open_maybe_gz(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    if be_u32(&images, 0)? != 0x0803 || be_u32(&labels, 0)? != 0x0801 {
        return Err(Error::Config("bad IDX magic number".into()));
    }
    let n = be_u32(&images, 4)? as usize;
    let (rows, cols) = (be_u32(&images, 8)? as usize, be_u32(&images, 12)? as usize);
    if rows != IMAGE_SIDE || cols != IMAGE_SIDE {
        return Err(Error::Config(format!("IDX images are {rows}x{cols}, need 28x28")));
    }
    if be_u32(&labels, 4)? as usize != n {
        return Err(Error::Config("IDX image/label counts differ".into()));
    }
    if images.len() < 16 + n * IMAGE_PIXELS || labels.len() < 8 + n {
        return Err(Error::Config("truncated IDX payload".into()));
    }
    (0..n)
        .map(|i| {
            let px = &images[16 + i * IMAGE_PIXELS..16 + (i + 1) * IMAGE_PIXELS];
            ImageSample::new(px.iter().map(|&b| f32::from(b) / 255.0).collect(), labels[8 + i])
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Procedural garments

#[derive(Debug, Clone, Copy)]
enum Prim {
    Rect { x0: f32, x1: f32, y0: f32, y1: f32 },
    /// Convex polygon, vertices in clockwise screen order.
    Poly([(f32, f32); 6], usize),
    Ellipse { cx: f32, cy: f32, rx: f32, ry: f32 },
    /// Thick line segment.
    Stroke { a: (f32, f32), b: (f32, f32), width: f32 },
}

impl Prim {
    fn poly(pts: &[(f32, f32)]) -> Prim {
        let mut v = [(0.0, 0.0); 6];
        v[..pts.len()].copy_from_slice(pts);
        Prim::Poly(v, pts.len())
    }

    fn contains(&self, x: f32, y: f32) -> bool {
        match *self {
            Prim::Rect { x0, x1, y0, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
            Prim::Poly(v, n) => (0..n).all(|i| {
                let (ax, ay) = v[i];
                let (bx, by) = v[(i + 1) % n];
                (bx - ax) * (y - ay) - (by - ay) * (x - ax) >= 0.0
            }),
            Prim::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
            Prim::Stroke { a, b, width } => {
                let (vx, vy) = (b.0 - a.0, b.1 - a.1);
                let len2 = vx * vx + vy * vy;
                let t = (((x - a.0) * vx + (y - a.1) * vy) / len2).clamp(0.0, 1.0);
                let (px, py) = (a.0 + t * vx - x, a.1 + t * vy - y);
                px * px + py * py <= width * width / 4.0
            }
        }
    }
}

/// Painted layer: later layers override earlier ones where they cover.
struct Layer {
    prim: Prim,
    value: f32,
}

fn paint(layers: &[Layer], x: f32, y: f32) -> f32 {
    layers
        .iter()
        .rev()
        .find(|l| l.prim.contains(x, y))
        .map_or(0.0, |l| l.value)
}

/// Multiplier on every shape jitter. Large enough that neighbouring
/// upper-body garments and footwear overlap.
const SPREAD: f32 = 2.0;

fn garment<R: Rng>(class: usize, rng: &mut R) -> Vec<Layer> {
    // optional details, drawn up front
    let detail = [rng.gen_bool(0.6), rng.gen_bool(0.6)];
    let mut j = |a: f32| rng.gen_range(-a..=a) * SPREAD;
    let l = |prim, value| Layer { prim, value };
    match class {
        0 => {
            // t-shirt: torso, short sleeves, neckline
            let (w, len) = (5.0 + j(0.8), 24.5 + j(1.0));
            let sl = 5.5 + j(1.0);
            vec![
                l(Prim::Rect { x0: 14.0 - w, x1: 14.0 + w, y0: 5.5, y1: len }, 1.0),
                l(Prim::Stroke { a: (14.0 - w + 1.0, 7.0), b: (14.0 - w - sl + 2.0, 11.5), width: 4.0 }, 1.0),
                l(Prim::Stroke { a: (14.0 + w - 1.0, 7.0), b: (14.0 + w + sl - 2.0, 11.5), width: 4.0 }, 1.0),
                l(Prim::Ellipse { cx: 14.0, cy: 5.3, rx: 2.6 + j(0.5), ry: 1.6 }, 0.0),
            ]
        }
        1 => {
            // trouser: waistband and two legs
            let gap = 0.7 + j(0.4);
            let w = 5.2 + j(0.6);
            vec![
                l(Prim::Rect { x0: 14.0 - w, x1: 14.0 + w, y0: 3.0, y1: 7.0 }, 1.0),
                l(Prim::poly(&[(14.0 - w, 6.0), (14.0 - gap, 6.0), (14.0 - gap - 0.3, 26.0), (14.0 - w + 0.6, 26.0)]), 1.0),
                l(Prim::poly(&[(14.0 + gap, 6.0), (14.0 + w, 6.0), (14.0 + w - 0.6, 26.0), (14.0 + gap + 0.3, 26.0)]), 1.0),
            ]
        }
        2 => {
            // pullover: torso with long sleeves, ribbed hem
            let w = 5.2 + j(0.7);
            let reach = 9.5 + j(1.0);
            vec![
                l(Prim::Rect { x0: 14.0 - w, x1: 14.0 + w, y0: 5.5, y1: 23.5 + j(0.8) }, 0.95),
                l(Prim::Stroke { a: (14.0 - w, 7.5), b: (14.0 - reach, 22.0 + j(1.0)), width: 3.8 }, 1.0),
                l(Prim::Stroke { a: (14.0 + w, 7.5), b: (14.0 + reach, 22.0 + j(1.0)), width: 3.8 }, 1.0),
                l(Prim::Rect { x0: 14.0 - w, x1: 14.0 + w, y0: 21.5, y1: 23.5 }, if detail[0] { 0.75 } else { 0.95 }),
                l(Prim::Ellipse { cx: 14.0, cy: 5.4, rx: 2.4, ry: 1.3 }, 0.0),
            ]
        }
        3 => {
            // dress: narrow bodice flaring to a wide hem
            let hem = 8.0 + j(1.5);
            let waist = 3.0 + j(0.5);
            vec![
                l(Prim::poly(&[(14.0 - waist, 3.5), (14.0 + waist, 3.5), (14.0 + waist + 0.6, 11.0), (14.0 + hem, 26.0), (14.0 - hem, 26.0), (14.0 - waist - 0.6, 11.0)]), 1.0),
            ]
        }
        4 => {
            // coat: long wide body, thick sleeves, front opening and collar
            let w = 6.0 + j(0.7);
            let reach = 10.5 + j(0.8);
            vec![
                l(Prim::Rect { x0: 14.0 - w, x1: 14.0 + w, y0: 4.5, y1: 26.0 }, 0.9),
                l(Prim::Stroke { a: (14.0 - w, 7.0), b: (14.0 - reach, 24.0), width: 4.5 }, 0.95),
                l(Prim::Stroke { a: (14.0 + w, 7.0), b: (14.0 + reach, 24.0), width: 4.5 }, 0.95),
                l(Prim::Rect { x0: 13.6, x1: 14.4, y0: 6.0, y1: 26.0 }, if detail[0] { 0.35 } else { 0.9 }),
                l(Prim::poly(&[(11.5, 4.5), (16.5, 4.5), (14.0, 9.0)]), if detail[1] { 0.55 } else { 0.9 }),
            ]
        }
        5 => {
            // sandal: sole and thin straps
            let h = 20.0 + j(1.5);
            let s = 7.0 + j(1.5);
            vec![
                l(Prim::Rect { x0: 2.5, x1: 25.5, y0: h, y1: h + 2.2 }, 0.9),
                l(Prim::Stroke { a: (5.0, h), b: (12.0, h - s), width: 1.6 }, 0.8),
                l(Prim::Stroke { a: (12.0, h - s), b: (20.0, h - 2.0), width: 1.6 }, 0.8),
                l(Prim::Stroke { a: (16.0, h), b: (23.0, h - s + 1.0), width: 1.6 }, 0.8),
            ]
        }
        6 => {
            // shirt: torso, slimmer sleeves, collar notch and button placket
            let w = 5.0 + j(0.7);
            let reach = 9.0 + j(1.0);
            vec![
                l(Prim::Rect { x0: 14.0 - w, x1: 14.0 + w, y0: 5.5, y1: 25.0 + j(0.8) }, 0.85),
                l(Prim::Stroke { a: (14.0 - w, 7.5), b: (14.0 - reach, 21.5), width: 3.0 }, 0.85),
                l(Prim::Stroke { a: (14.0 + w, 7.5), b: (14.0 + reach, 21.5), width: 3.0 }, 0.85),
                l(Prim::poly(&[(12.2, 5.5), (15.8, 5.5), (14.0, 9.5)]), 0.1),
                l(Prim::Rect { x0: 13.5, x1: 14.5, y0: 10.0, y1: 25.0 }, if detail[0] { 0.55 } else { 0.85 }),
            ]
        }
        7 => {
            // sneaker: low profile, rising heel, bright sole
            let top = 13.0 + j(1.5);
            vec![
                l(Prim::poly(&[(2.5, 18.0), (12.0, 16.0 + j(1.0)), (18.0, top), (25.5, top - 1.0), (25.5, 22.0), (2.5, 22.0)]), 0.85),
                l(Prim::Rect { x0: 2.5, x1: 25.5, y0: 20.5, y1: 22.5 }, 1.0),
            ]
        }
        8 => {
            // bag: box with an arched handle
            let (top, w) = (11.0 + j(1.5), 9.0 + j(1.0));
            let hw = 5.0 + j(1.0);
            vec![
                l(Prim::Ellipse { cx: 14.0, cy: top, rx: hw + 1.3, ry: 5.5 }, 0.8),
                l(Prim::Ellipse { cx: 14.0, cy: top, rx: hw, ry: 4.2 }, 0.0),
                l(Prim::Rect { x0: 14.0 - w, x1: 14.0 + w, y0: top, y1: 25.5 }, 0.9),
            ]
        }
        _ => {
            // ankle boot: tall shaft over a foot with heel
            let shaft = 15.0 + j(1.5);
            vec![
                l(Prim::Rect { x0: shaft - 1.0, x1: 23.0, y0: 3.5 + j(1.0), y1: 17.0 }, 0.85),
                l(Prim::poly(&[(3.5, 17.5), (shaft, 14.5), (23.5, 14.5), (24.0, 24.5), (3.5, 24.5)]), 0.9),
                l(Prim::Rect { x0: 18.5, x1: 23.5, y0: 23.0, y1: 25.5 }, 0.6),
            ]
        }
    }
}

fn render<R: Rng>(class: usize, rng: &mut R) -> Vec<f32> {
    let layers = garment(class, rng);
    let scale = rng.gen_range(0.85f32..1.08);
    let (dx, dy) = (rng.gen_range(-1.5f32..1.5), rng.gen_range(-1.5f32..1.5));
    let rot = rng.gen_range(-0.08f32..0.08);
    let bright = rng.gen_range(0.45f32..1.0);
    let shade = rng.gen_range(-0.25f32..0.25);
    let tex_amp = rng.gen_range(0.0f32..0.2);
    let (fx, fy) = (rng.gen_range(-0.15f32..0.15), rng.gen_range(-0.15f32..0.15));
    let phase = rng.gen_range(0.0f32..std::f32::consts::TAU);
    let (sin, cos) = rot.sin_cos();

    const SUB: usize = 3;
    let mut pixels = vec![0.0f32; IMAGE_PIXELS];
    for py in 0..IMAGE_SIDE {
        for px in 0..IMAGE_SIDE {
            let mut acc = 0.0;
            for sy in 0..SUB {
                for sx in 0..SUB {
                    let x = px as f32 + (sx as f32 + 0.5) / SUB as f32 - 14.0 - dx;
                    let y = py as f32 + (sy as f32 + 0.5) / SUB as f32 - 14.0 - dy;
                    // inverse similarity transform back to the canonical frame
                    let cx = (cos * x + sin * y) / scale + 14.0;
                    let cy = (-sin * x + cos * y) / scale + 14.0;
                    acc += paint(&layers, cx, cy);
                }
            }
            let cover = acc / (SUB * SUB) as f32;
            if cover > 0.0 {
                let (u, v) = (px as f32, py as f32);
                let tone = 1.0
                    + shade * (v - 14.0) / 14.0
                    + tex_amp * (std::f32::consts::TAU * (fx * u + fy * v) + phase).sin();
                pixels[py * IMAGE_SIDE + px] = (cover * bright * tone).clamp(0.0, 1.0);
            }
        }
    }
    pixels
}

/// `count` procedural images with balanced, shuffled labels. Identical
/// `(count, seed, stream)` always yields identical images.
pub fn synthetic(count: usize, seed: u64, stream: u64) -> Vec<ImageSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..count)
        .map(|_| {
            let class = rng.gen_range(0..NUM_CLASSES);
            let pixels = render(class, &mut rng);
            ImageSample::new(pixels, class as u8).expect("renderer stays in range")
        })
        .collect()
}

/// Portable graymap of one image, handy for eyeballing generated data.
pub fn to_pgm(img: &ImageSample) -> Vec<u8> {
    let mut out = format!("P5\n{IMAGE_SIDE} {IMAGE_SIDE}\n255\n").into_bytes();
    out.extend(img.pixels.iter().map(|p| (p * 255.0).round() as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_validation() {
        assert!(ImageSample::new(vec![0.5; IMAGE_PIXELS], 3).is_ok());
        assert!(ImageSample::new(vec![0.5; 10], 3).is_err());
        assert!(ImageSample::new(vec![1.5; IMAGE_PIXELS], 3).is_err());
        assert!(ImageSample::new(vec![0.5; IMAGE_PIXELS], 10).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_covers_all_classes() {
        let a = synthetic(200, 5, 0);
        let b = synthetic(200, 5, 0);
        assert_eq!(a, b);
        assert_ne!(a, synthetic(200, 5, 1));
        let mut counts = [0usize; NUM_CLASSES];
        for s in &a {
            counts[usize::from(s.label())] += 1;
            assert!(s.pixels().iter().any(|&p| p > 0.2), "blank image");
        }
        assert!(counts.iter().all(|&c| c > 5), "{counts:?}");
    }

    #[test]
    fn class_means_differ() {
        let data = synthetic(2000, 9, 0);
        let means: Vec<Vec<f32>> = (0..NUM_CLASSES as u8)
            .map(|c| {
                let subset: Vec<_> = data.iter().filter(|s| s.label() == c).cloned().collect();
                mean_image(&subset)
            })
            .collect();
        for i in 0..NUM_CLASSES {
            for k in i + 1..NUM_CLASSES {
                let d: f32 = means[i].iter().zip(&means[k]).map(|(a, b)| (a - b).powi(2)).sum();
                assert!(d > 1.0, "classes {i} and {k} too similar ({d})");
            }
        }
    }

    #[test]
    fn idx_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let imgs = synthetic(3, 1, 0);
        let mut img_bytes = vec![0, 0, 8, 3, 0, 0, 0, 3, 0, 0, 0, 28, 0, 0, 0, 28];
        let mut lbl_bytes = vec![0, 0, 8, 1, 0, 0, 0, 3];
        for s in &imgs {
            img_bytes.extend(s.pixels().iter().map(|p| (p * 255.0).round() as u8));
            lbl_bytes.push(s.label());
        }
        std::fs::write(dir.path().join("train-images-idx3-ubyte"), img_bytes).unwrap();
        std::fs::write(dir.path().join("train-labels-idx1-ubyte"), lbl_bytes).unwrap();
        let loaded = load_idx(dir.path(), "train").unwrap();
        assert_eq!(loaded.len(), 3);
        for (a, b) in loaded.iter().zip(&imgs) {
            assert_eq!(a.label(), b.label());
            let err = a.pixels().iter().zip(b.pixels()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            assert!(err <= 0.5 / 255.0 + 1e-6);
        }
        assert!(matches!(load_idx(dir.path(), "t10k"), Err(Error::MissingArtifact(_))));
    }
}
