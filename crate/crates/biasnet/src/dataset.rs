//! Image datasets: IDX ingestion, the two corruption families (clamped AWGN
//! and uniform background blending), mixed-noise construction, and the noise
//! grid used by sweeps.
//!
//! Per-pixel noise is keyed by `(seed, image index, pixel index)` through a
//! counter-based generator, so corrupting disjoint image ranges in parallel
//! yields exactly the serial result, and every corruption is reproducible
//! from its [`NoiseSpec`] and seed.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::rng::{derive_seed, uniform_at, unit_normal_at};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

pub const IMG_HW: usize = 28;
pub const IMG_PIXELS: usize = IMG_HW * IMG_HW;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Description of the corruption applied to a dataset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseSpec {
    Clean,
    /// Zero-mean AWGN of the given standard deviation, clamped to `[0,1]`.
    Awgn { sigma: f64 },
    /// Uniform background blend at the given level; stroke bodies pin to 0.5.
    Background { level: f64 },
    /// Per-image sigma drawn uniformly from `[sigma_min, sigma_max]`.
    MixedAwgn { sigma_min: f64, sigma_max: f64 },
    /// Per-image background level drawn uniformly from `[level_min, level_max]`.
    MixedBackground { level_min: f64, level_max: f64 },
}

impl fmt::Display for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NoiseSpec::Clean => write!(f, "clean"),
            NoiseSpec::Awgn { sigma } => write!(f, "awgn:{sigma}"),
            NoiseSpec::Background { level } => write!(f, "background:{level}"),
            NoiseSpec::MixedAwgn { sigma_min, sigma_max } => {
                write!(f, "mixed-awgn:{sigma_min}:{sigma_max}")
            }
            NoiseSpec::MixedBackground { level_min, level_max } => {
                write!(f, "mixed-background:{level_min}:{level_max}")
            }
        }
    }
}

impl FromStr for NoiseSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unrecognized noise spec '{s}'"));
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| p.parse::<f64>().map_err(|_| bad());
        match parts.as_slice() {
            ["clean"] => Ok(NoiseSpec::Clean),
            ["awgn", v] => Ok(NoiseSpec::Awgn { sigma: num(v)? }),
            ["background", v] => Ok(NoiseSpec::Background { level: num(v)? }),
            ["mixed-awgn", a, b] => Ok(NoiseSpec::MixedAwgn { sigma_min: num(a)?, sigma_max: num(b)? }),
            ["mixed-background", a, b] => {
                Ok(NoiseSpec::MixedBackground { level_min: num(a)?, level_max: num(b)? })
            }
            _ => Err(bad()),
        }
    }
}

/// Where a dataset came from and how it was corrupted.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub source: String,
    pub noise: NoiseSpec,
    pub seed: u64,
    /// Per-image levels for the mixed families.
    pub per_image: Option<Vec<f64>>,
}

impl Provenance {
    pub fn new(source: impl Into<String>, noise: NoiseSpec, seed: u64) -> Self {
        Provenance { source: source.into(), noise, seed, per_image: None }
    }
}

/// A labeled image set: `[N,1,28,28]` pixels in `[0,1]` plus digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet<T> {
    pub images: Tensor<T>,
    pub labels: Vec<u8>,
    pub provenance: Provenance,
}

impl<T: Scalar> ImageSet<T> {
    pub fn new(images: Tensor<T>, labels: Vec<u8>, provenance: Provenance) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 4 || shape[1] != 1 || shape[2] != IMG_HW || shape[3] != IMG_HW {
            return Err(Error::shape(
                "ImageSet::new",
                format!("expected [N,1,{IMG_HW},{IMG_HW}], got {shape:?}"),
            ));
        }
        if shape[0] != labels.len() {
            return Err(Error::shape(
                "ImageSet::new",
                format!("{} images vs {} labels", shape[0], labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 9) {
            return Err(Error::InvalidArgument(format!("label {bad} outside 0..=9")));
        }
        let zero = T::zero();
        let one = T::one();
        if images.data().iter().any(|&p| !(p >= zero && p <= one)) {
            return Err(Error::InvalidArgument("pixel outside [0,1]".to_string()));
        }
        Ok(ImageSet { images, labels, provenance })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Contiguous sub-range as its own set (provenance carried over).
    pub fn slice(&self, start: usize, count: usize) -> Result<Self> {
        if start + count > self.len() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} out of range for {} images",
                start + count,
                self.len()
            )));
        }
        let images = Tensor::new(
            vec![count, 1, IMG_HW, IMG_HW],
            self.images.data()[start * IMG_PIXELS..(start + count) * IMG_PIXELS].to_vec(),
        )?;
        let mut prov = self.provenance.clone();
        if let Some(levels) = &prov.per_image {
            prov.per_image = Some(levels[start..start + count].to_vec());
        }
        ImageSet::new(images, self.labels[start..start + count].to_vec(), prov)
    }

    /// Reorder images and labels by the given permutation.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.len() {
            return Err(Error::InvalidArgument("permutation length mismatch".to_string()));
        }
        let mut data = Vec::with_capacity(self.images.len());
        let mut labels = Vec::with_capacity(order.len());
        for &i in order {
            data.extend_from_slice(&self.images.data()[i * IMG_PIXELS..(i + 1) * IMG_PIXELS]);
            labels.push(self.labels[i]);
        }
        let images = Tensor::new(vec![order.len(), 1, IMG_HW, IMG_HW], data)?;
        ImageSet::new(images, labels, self.provenance.clone())
    }
}

// ── IDX format ─────────────────────────────────────────────────────────────

fn read_be_u32(bytes: &[u8], offset: usize, path: &str) -> Result<u32> {
    if bytes.len() < offset + 4 {
        return Err(Error::IdxTruncated { path: path.to_string(), needed: offset + 4, have: bytes.len() });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Load a standard big-endian IDX image/label pair; bytes 0-255 scale to
/// pixels in `[0,1]`.
pub fn load_mnist_idx<T: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<ImageSet<T>> {
    let ipath = images_path.as_ref().display().to_string();
    let lpath = labels_path.as_ref().display().to_string();
    let ibytes = std::fs::read(images_path.as_ref()).map_err(|e| Error::io(&ipath, e))?;
    let lbytes = std::fs::read(labels_path.as_ref()).map_err(|e| Error::io(&lpath, e))?;

    let magic = read_be_u32(&ibytes, 0, &ipath)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::IdxBadMagic { path: ipath, expected: IDX_IMAGES_MAGIC, found: magic });
    }
    let n = read_be_u32(&ibytes, 4, &ipath)? as usize;
    let rows = read_be_u32(&ibytes, 8, &ipath)? as usize;
    let cols = read_be_u32(&ibytes, 12, &ipath)? as usize;
    if rows != IMG_HW || cols != IMG_HW {
        return Err(Error::Parse {
            path: ipath,
            detail: format!("expected {IMG_HW}x{IMG_HW} images, got {rows}x{cols}"),
        });
    }
    let needed = 16 + n * rows * cols;
    if ibytes.len() < needed {
        return Err(Error::IdxTruncated { path: ipath, needed, have: ibytes.len() });
    }

    let lmagic = read_be_u32(&lbytes, 0, &lpath)?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::IdxBadMagic { path: lpath, expected: IDX_LABELS_MAGIC, found: lmagic });
    }
    let ln = read_be_u32(&lbytes, 4, &lpath)? as usize;
    if ln != n {
        return Err(Error::IdxCountMismatch { images: n, labels: ln });
    }
    if lbytes.len() < 8 + ln {
        return Err(Error::IdxTruncated { path: lpath, needed: 8 + ln, have: lbytes.len() });
    }

    let data: Vec<T> = ibytes[16..needed].iter().map(|&b| T::from_f64(b as f64 / 255.0)).collect();
    let images = Tensor::new(vec![n, 1, IMG_HW, IMG_HW], data)?;
    let labels = lbytes[8..8 + ln].to_vec();
    ImageSet::new(images, labels, Provenance::new("idx", NoiseSpec::Clean, 0))
}

/// Write an IDX image/label pair from raw bytes (inverse of [`load_mnist_idx`]).
pub fn write_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    if pixels.len() != labels.len() * IMG_PIXELS {
        return Err(Error::InvalidArgument(format!(
            "{} pixel bytes do not form {} {IMG_HW}x{IMG_HW} images",
            pixels.len(),
            labels.len()
        )));
    }
    let n = labels.len() as u32;
    let mut ibytes = Vec::with_capacity(16 + pixels.len());
    ibytes.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    ibytes.extend_from_slice(&n.to_be_bytes());
    ibytes.extend_from_slice(&(IMG_HW as u32).to_be_bytes());
    ibytes.extend_from_slice(&(IMG_HW as u32).to_be_bytes());
    ibytes.extend_from_slice(pixels);
    let ipath = images_path.as_ref().display().to_string();
    std::fs::write(images_path.as_ref(), &ibytes).map_err(|e| Error::io(&ipath, e))?;

    let mut lbytes = Vec::with_capacity(8 + labels.len());
    lbytes.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lbytes.extend_from_slice(&n.to_be_bytes());
    lbytes.extend_from_slice(labels);
    let lpath = labels_path.as_ref().display().to_string();
    std::fs::write(labels_path.as_ref(), &lbytes).map_err(|e| Error::io(&lpath, e))
}

// ── Corruption ─────────────────────────────────────────────────────────────

fn clamp01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

/// Add zero-mean AWGN of standard deviation `sigma` to every pixel, clamped
/// to `[0,1]`. Deterministic per `(seed, image index, pixel index)`.
pub fn corrupt_awgn<T: Scalar>(set: &ImageSet<T>, sigma: f64, seed: u64) -> Result<ImageSet<T>> {
    if sigma < 0.0 {
        return Err(Error::InvalidArgument(format!("sigma must be >= 0, got {sigma}")));
    }
    let mut images = set.images.clone();
    images
        .data_mut()
        .par_chunks_mut(IMG_PIXELS)
        .enumerate()
        .for_each(|(img, chunk)| {
            for (px, v) in chunk.iter_mut().enumerate() {
                let n = unit_normal_at(seed, img as u64, px as u64);
                *v = T::from_f64(clamp01(v.as_f64() + sigma * n));
            }
        });
    ImageSet::new(
        images,
        set.labels.clone(),
        Provenance::new(set.provenance.source.clone(), NoiseSpec::Awgn { sigma }, seed),
    )
}

/// Blend a uniform background of the given level into every image:
/// `pixel' = level*(1 - pixel) + 0.5*pixel`. Background pixels (0) map to
/// `level`, full-intensity strokes (1) pin to 0.5, edges interpolate.
pub fn corrupt_background<T: Scalar>(set: &ImageSet<T>, level: f64, seed: u64) -> Result<ImageSet<T>> {
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::InvalidArgument(format!("background level must be in [0,1], got {level}")));
    }
    let mut images = set.images.clone();
    images.data_mut().par_chunks_mut(IMG_PIXELS).for_each(|chunk| {
        for v in chunk.iter_mut() {
            let p = v.as_f64();
            *v = T::from_f64(clamp01(level * (1.0 - p) + 0.5 * p));
        }
    });
    ImageSet::new(
        images,
        set.labels.clone(),
        Provenance::new(set.provenance.source.clone(), NoiseSpec::Background { level }, seed),
    )
}

const MIX_LEVEL_TAG: u64 = 0x6d69_7865;

/// Corrupt each image with its own sigma drawn uniformly from
/// `[sigma_min, sigma_max]`. Pixel noise uses the same keys as
/// [`corrupt_awgn`], so a degenerate range equals the fixed-sigma corruption
/// bitwise.
pub fn build_mixed<T: Scalar>(
    set: &ImageSet<T>,
    sigma_min: f64,
    sigma_max: f64,
    seed: u64,
) -> Result<ImageSet<T>> {
    if !(0.0 <= sigma_min && sigma_min <= sigma_max) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= sigma_min <= sigma_max, got [{sigma_min}, {sigma_max}]"
        )));
    }
    let level_seed = derive_seed(seed, MIX_LEVEL_TAG);
    let sigmas: Vec<f64> = (0..set.len())
        .map(|img| sigma_min + (sigma_max - sigma_min) * uniform_at(level_seed, img as u64))
        .collect();
    let mut images = set.images.clone();
    images
        .data_mut()
        .par_chunks_mut(IMG_PIXELS)
        .enumerate()
        .for_each(|(img, chunk)| {
            let sigma = sigmas[img];
            for (px, v) in chunk.iter_mut().enumerate() {
                let n = unit_normal_at(seed, img as u64, px as u64);
                *v = T::from_f64(clamp01(v.as_f64() + sigma * n));
            }
        });
    let mut prov = Provenance::new(
        set.provenance.source.clone(),
        NoiseSpec::MixedAwgn { sigma_min, sigma_max },
        seed,
    );
    prov.per_image = Some(sigmas);
    ImageSet::new(images, set.labels.clone(), prov)
}

/// Background-family analogue of [`build_mixed`]: per-image level drawn
/// uniformly from `[level_min, level_max]`.
pub fn build_mixed_background<T: Scalar>(
    set: &ImageSet<T>,
    level_min: f64,
    level_max: f64,
    seed: u64,
) -> Result<ImageSet<T>> {
    if !(0.0 <= level_min && level_min <= level_max && level_max <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "need 0 <= level_min <= level_max <= 1, got [{level_min}, {level_max}]"
        )));
    }
    let level_seed = derive_seed(seed, MIX_LEVEL_TAG);
    let levels: Vec<f64> = (0..set.len())
        .map(|img| level_min + (level_max - level_min) * uniform_at(level_seed, img as u64))
        .collect();
    let mut images = set.images.clone();
    images
        .data_mut()
        .par_chunks_mut(IMG_PIXELS)
        .enumerate()
        .for_each(|(img, chunk)| {
            let level = levels[img];
            for v in chunk.iter_mut() {
                let p = v.as_f64();
                *v = T::from_f64(clamp01(level * (1.0 - p) + 0.5 * p));
            }
        });
    let mut prov = Provenance::new(
        set.provenance.source.clone(),
        NoiseSpec::MixedBackground { level_min, level_max },
        seed,
    );
    prov.per_image = Some(levels);
    ImageSet::new(images, set.labels.clone(), prov)
}

/// Apply an arbitrary [`NoiseSpec`] to a clean set.
pub fn corrupt<T: Scalar>(set: &ImageSet<T>, noise: NoiseSpec, seed: u64) -> Result<ImageSet<T>> {
    match noise {
        NoiseSpec::Clean => {
            let mut out = set.clone();
            out.provenance = Provenance::new(set.provenance.source.clone(), NoiseSpec::Clean, seed);
            Ok(out)
        }
        NoiseSpec::Awgn { sigma } => corrupt_awgn(set, sigma, seed),
        NoiseSpec::Background { level } => corrupt_background(set, level, seed),
        NoiseSpec::MixedAwgn { sigma_min, sigma_max } => build_mixed(set, sigma_min, sigma_max, seed),
        NoiseSpec::MixedBackground { level_min, level_max } => {
            build_mixed_background(set, level_min, level_max, seed)
        }
    }
}

/// Evenly spaced noise levels `[min, min+step, ...]`, inclusive of `max`
/// within 1e-12.
pub fn noise_grid(min: f64, max: f64, step: f64) -> Result<Vec<f64>> {
    if step <= 0.0 {
        return Err(Error::InvalidArgument(format!("step must be > 0, got {step}")));
    }
    if max < min {
        return Err(Error::InvalidArgument(format!("max {max} below min {min}")));
    }
    let mut levels = Vec::new();
    let mut i = 0usize;
    loop {
        let level = min + i as f64 * step;
        if level > max + 1e-12 {
            break;
        }
        levels.push(level);
        i += 1;
    }
    Ok(levels)
}
