//! Datasets: IDX ingestion, synthetic blob images and seeded subsampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled images `[N, C, H, W]` with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize, name: impl Into<String>) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::ShapeMismatch {
                expected: vec![labels.len(), 0, 0, 0],
                got: images.shape().to_vec(),
            });
        }
        if images.dim0() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.dim0(),
                labels: labels.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::ConfigInvalid(format!("label {bad} outside {num_classes} classes")));
        }
        if images.data().iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::ConfigInvalid("pixel outside [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            name: name.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Images and labels at the given indices, in that order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.images.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// A new dataset holding the given examples; the index list must be nonempty.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let (images, labels) = self.batch(indices);
        Ok(Self {
            images,
            labels,
            num_classes: self.num_classes,
            name: self.name.clone(),
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::TruncatedFile(path.to_path_buf()))
}

/// Reads an IDX image file (`0x00000803`, dims N×H×W) and label file
/// (`0x00000801`, dim N). Pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let ib = fs::read(images_path)?;
    let lb = fs::read(labels_path)?;
    let magic = read_u32(&ib, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let magic = read_u32(&lb, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n = read_u32(&ib, 4, images_path)? as usize;
    let h = read_u32(&ib, 8, images_path)? as usize;
    let w = read_u32(&ib, 12, images_path)? as usize;
    let nl = read_u32(&lb, 4, labels_path)? as usize;
    if n != nl {
        return Err(Error::CountMismatch { images: n, labels: nl });
    }
    let pixels = ib
        .get(16..16 + n * h * w)
        .ok_or_else(|| Error::TruncatedFile(images_path.to_path_buf()))?;
    let labels: Vec<usize> = lb
        .get(8..8 + n)
        .ok_or_else(|| Error::TruncatedFile(labels_path.to_path_buf()))?
        .iter()
        .map(|&b| b as usize)
        .collect();
    let images = Tensor::new(vec![n, 1, h, w], pixels.iter().map(|&p| p as f32 / 255.0).collect())?;
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let name = images_path
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(images, labels, num_classes, name)
}

/// Writes a single-channel dataset in IDX format, quantising pixels to bytes.
pub fn write_idx(ds: &Dataset, images_path: &Path, labels_path: &Path) -> Result<()> {
    let [c, h, w] = ds.image_shape();
    if c != 1 {
        return Err(Error::ConfigInvalid("IDX images must be single-channel".into()));
    }
    let n = ds.len();
    let mut ib = Vec::with_capacity(16 + n * h * w);
    for v in [IDX_IMAGES_MAGIC, n as u32, h as u32, w as u32] {
        ib.extend_from_slice(&v.to_be_bytes());
    }
    ib.extend(ds.images.data().iter().map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8));
    let mut lbytes = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lbytes.extend_from_slice(&v.to_be_bytes());
    }
    for &y in &ds.labels {
        let b = u8::try_from(y).map_err(|_| Error::ConfigInvalid(format!("label {y} does not fit a byte")))?;
        lbytes.push(b);
    }
    fs::File::create(images_path)?.write_all(&ib)?;
    fs::File::create(labels_path)?.write_all(&lbytes)?;
    Ok(())
}

/// Parameters of the synthetic blob dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub img_size: usize,
    pub noise_std: f32,
    /// Peak height of the class blob above the background.
    #[serde(default = "SynthSpec::default_amplitude")]
    pub amplitude: f32,
    #[serde(default = "SynthSpec::default_background")]
    pub background: f32,
    pub seed: u64,
}

impl SynthSpec {
    fn default_amplitude() -> f32 {
        0.5
    }

    fn default_background() -> f32 {
        0.25
    }

    pub fn new(num_classes: usize, per_class: usize, img_size: usize, noise_std: f32, seed: u64) -> Self {
        Self {
            num_classes,
            per_class,
            img_size,
            noise_std,
            amplitude: Self::default_amplitude(),
            background: Self::default_background(),
            seed,
        }
    }

    /// Noise-free template for class `c`: a Gaussian blob centred in the
    /// class's cell of a `⌈√K⌉ × ⌈√K⌉` grid (the four quadrants for K ≤ 4).
    pub fn template(&self, c: usize) -> Vec<f32> {
        let n = self.img_size;
        let grid = (self.num_classes as f64).sqrt().ceil().max(1.0) as usize;
        let cell = n as f32 / grid as f32;
        let cy = ((c / grid) as f32 + 0.5) * cell - 0.5;
        let cx = ((c % grid) as f32 + 0.5) * cell - 0.5;
        let sigma = cell / 3.0;
        let mut img = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let d2 = (y as f32 - cy).powi(2) + (x as f32 - cx).powi(2);
                img.push(self.background + self.amplitude * (-d2 / (2.0 * sigma * sigma)).exp());
            }
        }
        img
    }

    pub fn generate(&self) -> Result<Dataset> {
        if self.num_classes == 0 || self.per_class == 0 || self.img_size == 0 {
            return Err(Error::ConfigInvalid("synthetic dataset dimensions must be positive".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::ConfigInvalid("noise_std must be non-negative".into()));
        }
        let mut rng = rng::rng_from(self.seed);
        let noise = Normal::new(0.0f32, self.noise_std.max(f32::MIN_POSITIVE)).expect("valid std");
        let templates: Vec<Vec<f32>> = (0..self.num_classes).map(|c| self.template(c)).collect();
        let n = self.img_size * self.img_size;
        let total = self.num_classes * self.per_class;
        let mut data = Vec::with_capacity(total * n);
        let mut labels = Vec::with_capacity(total);
        // Interleave classes so every prefix is roughly balanced.
        for _ in 0..self.per_class {
            for (c, t) in templates.iter().enumerate() {
                for &p in t {
                    let e = if self.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    data.push((p + e).clamp(0.0, 1.0));
                }
                labels.push(c);
            }
        }
        let images = Tensor::new(vec![total, 1, self.img_size, self.img_size], data)?;
        Dataset::new(images, labels, self.num_classes, "synth_blobs")
    }
}

/// Class-blob images plus Gaussian pixel noise, clipped to `[0, 1]`.
pub fn synth_blobs(num_classes: usize, per_class: usize, img_size: usize, noise_std: f32, seed: u64) -> Result<Dataset> {
    SynthSpec::new(num_classes, per_class, img_size, noise_std, seed).generate()
}

fn take_count(fraction: f64, n: usize) -> usize {
    // Guard against 0.1 * 1000 landing a hair above 100.
    (((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Indices of a seeded subsample. Stratified: `⌈fraction·count⌉` per class.
pub fn sample_indices(ds: &Dataset, fraction: f64, seed: u64, stratified: bool) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::ConfigInvalid(format!("sample fraction {fraction} outside (0, 1]")));
    }
    let mut rng = rng::rng_from(seed);
    let mut picked = Vec::new();
    if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
        for (i, &y) in ds.labels.iter().enumerate() {
            by_class[y].push(i);
        }
        for mut members in by_class {
            let k = take_count(fraction, members.len());
            members.shuffle(&mut rng);
            picked.extend_from_slice(&members[..k]);
        }
    } else {
        let mut all: Vec<usize> = (0..ds.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(take_count(fraction, ds.len()).max(1));
        picked = all;
    }
    picked.shuffle(&mut rng);
    Ok(picked)
}

/// Stratified seeded subsample of `ds`.
pub fn sample_subset(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    ds.subset(&sample_indices(ds, fraction, seed, true)?)
}
