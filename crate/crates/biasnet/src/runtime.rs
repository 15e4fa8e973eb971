//! Measurement-driven inference: pick the zero or max parameter set, select
//! or interpolate a bias entry for the measured level, apply it, optionally
//! reverse the decision rule (realized as an input complement), and classify.

use std::fmt;
use std::path::{Path, PathBuf};

use crate::checkpoint::{lenet_params_id, load_bank, load_lenet};
use crate::dataset::{ImageSet, IMG_HW};
use crate::model::LeNetParams;
use crate::tensor::{Scalar, Tensor};
use crate::training::{BiasBank, BiasVectors};
use crate::{Error, Result};

/// What kind of ambient noise a measurement describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementKind {
    AwgnSigma,
    BackgroundLevel,
}

impl fmt::Display for MeasurementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MeasurementKind::AwgnSigma => write!(f, "awgn"),
            MeasurementKind::BackgroundLevel => write!(f, "background"),
        }
    }
}

/// A runtime ambient-noise measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseMeasurement {
    pub kind: MeasurementKind,
    pub level: f64,
}

impl NoiseMeasurement {
    pub fn new(kind: MeasurementKind, level: f64) -> Result<Self> {
        if level < 0.0 {
            return Err(Error::InvalidArgument(format!("measurement level {level} below 0")));
        }
        if kind == MeasurementKind::BackgroundLevel && level > 1.0 {
            return Err(Error::InvalidArgument(format!(
                "background level {level} outside [0,1]"
            )));
        }
        Ok(NoiseMeasurement { kind, level })
    }

    /// Parse `awgn:<level>` or `background:<level>`.
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, level) = s.split_once(':').ok_or_else(|| {
            Error::InvalidArgument(format!("measurement '{s}' is not kind:level"))
        })?;
        let level: f64 = level
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad measurement level in '{s}'")))?;
        match kind {
            "awgn" => NoiseMeasurement::new(MeasurementKind::AwgnSigma, level),
            "background" => NoiseMeasurement::new(MeasurementKind::BackgroundLevel, level),
            other => Err(Error::InvalidArgument(format!("unknown measurement kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetChoice {
    Zero,
    Max,
}

impl fmt::Display for SetChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetChoice::Zero => write!(f, "zero"),
            SetChoice::Max => write!(f, "max"),
        }
    }
}

/// How to derive bias vectors for levels between bank entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterpMode {
    /// Closest stored entry; ties toward the lower key; clamps outside the grid.
    Nearest,
    /// Convex combination of the bracketing entries; extrapolates linearly
    /// from the outermost pair outside the grid.
    Linear,
}

/// Immutable inference state: the two parameter sets, their banks, and the
/// switching policy.
#[derive(Debug, Clone)]
pub struct ControllerState<T> {
    pub zero_params: LeNetParams<T>,
    pub max_params: LeNetParams<T>,
    pub zero_bank: BiasBank<T>,
    pub max_bank: BiasBank<T>,
    pub switch_level: f64,
    pub trained_body_level: f64,
    pub interpolation: InterpMode,
}

impl<T: Scalar> ControllerState<T> {
    pub fn new(
        zero_params: LeNetParams<T>,
        max_params: LeNetParams<T>,
        zero_bank: BiasBank<T>,
        max_bank: BiasBank<T>,
        switch_level: f64,
        interpolation: InterpMode,
    ) -> Result<Self> {
        let zero_id = lenet_params_id(&zero_params);
        if zero_bank.base_params_id != zero_id {
            return Err(Error::AnchorMismatch {
                bank: zero_bank.base_params_id.clone(),
                params: zero_id,
            });
        }
        let max_id = lenet_params_id(&max_params);
        if max_bank.base_params_id != max_id {
            return Err(Error::AnchorMismatch {
                bank: max_bank.base_params_id.clone(),
                params: max_id,
            });
        }
        let lo = zero_bank
            .levels()
            .first()
            .copied()
            .unwrap_or(0.0)
            .min(max_bank.levels().first().copied().unwrap_or(0.0));
        let hi = zero_bank
            .levels()
            .last()
            .copied()
            .unwrap_or(1.0)
            .max(max_bank.levels().last().copied().unwrap_or(1.0));
        if !(lo..=hi).contains(&switch_level) {
            return Err(Error::InvalidArgument(format!(
                "switch level {switch_level} outside bank grid [{lo}, {hi}]"
            )));
        }
        Ok(ControllerState {
            zero_params,
            max_params,
            zero_bank,
            max_bank,
            switch_level,
            trained_body_level: 0.5,
            interpolation,
        })
    }

    /// Below the switch level use the zero set; at or above it, the max set.
    pub fn select_parameter_set(&self, m: &NoiseMeasurement) -> SetChoice {
        if m.level < self.switch_level {
            SetChoice::Zero
        } else {
            SetChoice::Max
        }
    }

    /// Reverse the rule only for background noise brighter than the trained
    /// stroke body; AWGN never reverses.
    pub fn decide_rule_reversal(&self, m: &NoiseMeasurement) -> bool {
        m.kind == MeasurementKind::BackgroundLevel && m.level > self.trained_body_level
    }

    /// Full pipeline for a batch of images under one measurement.
    pub fn infer(&self, images: &Tensor<T>, m: &NoiseMeasurement) -> Result<Vec<u8>> {
        let (choice, reversal, adjusted) = self.prepare(m)?;
        let _ = choice;
        let input = if reversal { complement(images) } else { images.clone() };
        adjusted.predict(&input)
    }

    /// Single-image convenience wrapper.
    pub fn infer_one(&self, image: &Tensor<T>, m: &NoiseMeasurement) -> Result<u8> {
        let image = normalize_single(image)?;
        Ok(self.infer(&image, m)?[0])
    }

    /// Resolve the measurement into (set choice, reversal flag, adjusted
    /// parameters). When the rule reverses, biases are selected at the
    /// reflected level `1 - level`, the level the network effectively sees
    /// after the complement.
    pub fn prepare(&self, m: &NoiseMeasurement) -> Result<(SetChoice, bool, LeNetParams<T>)> {
        let choice = self.select_parameter_set(m);
        let reversal = self.decide_rule_reversal(m);
        let effective_level = if reversal { 1.0 - m.level } else { m.level };
        let (params, bank) = match choice {
            SetChoice::Zero => (&self.zero_params, &self.zero_bank),
            SetChoice::Max => (&self.max_params, &self.max_bank),
        };
        let vectors = select_biases(bank, effective_level, self.interpolation)?;
        let adjusted = apply_biases(params, bank, &vectors)?;
        Ok((choice, reversal, adjusted))
    }

    /// Whether a measurement lies outside the relevant bank's trained grid.
    pub fn is_extrapolating(&self, m: &NoiseMeasurement) -> bool {
        let bank = match self.select_parameter_set(m) {
            SetChoice::Zero => &self.zero_bank,
            SetChoice::Max => &self.max_bank,
        };
        let levels = bank.levels();
        match (levels.first(), levels.last()) {
            (Some(&lo), Some(&hi)) => m.level < lo || m.level > hi,
            _ => false,
        }
    }
}

fn normalize_single<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    match image.shape() {
        [1, 1, h, w] if *h == IMG_HW && *w == IMG_HW => Ok(image.clone()),
        [h, w] if *h == IMG_HW && *w == IMG_HW => {
            image.clone().reshape(vec![1, 1, IMG_HW, IMG_HW])
        }
        [n] if *n == IMG_HW * IMG_HW => image.clone().reshape(vec![1, 1, IMG_HW, IMG_HW]),
        other => Err(Error::shape("infer_one", format!("unexpected image shape {other:?}"))),
    }
}

/// Bias vectors for an arbitrary level.
pub fn select_biases<T: Scalar>(
    bank: &BiasBank<T>,
    level: f64,
    mode: InterpMode,
) -> Result<BiasVectors<T>> {
    if bank.entries.is_empty() {
        return Err(Error::State("empty bias bank".into()));
    }
    // exact hit wins in both modes
    if let Some((_, v)) = bank.entries.iter().find(|(l, _)| *l == level) {
        return Ok(v.clone());
    }
    match mode {
        InterpMode::Nearest => {
            let mut best = &bank.entries[0];
            for e in &bank.entries[1..] {
                let d = (e.0 - level).abs();
                let bd = (best.0 - level).abs();
                if d < bd {
                    best = e;
                }
            }
            Ok(best.1.clone())
        }
        InterpMode::Linear => {
            if bank.entries.len() == 1 {
                return Ok(bank.entries[0].1.clone());
            }
            // bracketing pair, or the outermost pair for extrapolation
            let idx = match bank.entries.iter().position(|(l, _)| *l > level) {
                Some(0) => 0,
                Some(i) => i - 1,
                None => bank.entries.len() - 2,
            };
            let (l0, a) = &bank.entries[idx];
            let (l1, b) = &bank.entries[idx + 1];
            let w = (level - l0) / (l1 - l0);
            let mix = |x: &Option<Vec<T>>, y: &Option<Vec<T>>| -> Option<Vec<T>> {
                match (x, y) {
                    (Some(x), Some(y)) => Some(
                        x.iter()
                            .zip(y)
                            .map(|(xa, yb)| {
                                T::from_f64((1.0 - w) * xa.as_f64() + w * yb.as_f64())
                            })
                            .collect(),
                    ),
                    _ => None,
                }
            };
            Ok(BiasVectors { conv1: mix(&a.conv1, &b.conv1), conv2: mix(&a.conv2, &b.conv2) })
        }
    }
}

/// New parameter value with only the designated bias vectors replaced.
/// Refuses banks anchored to a different parameter set.
pub fn apply_biases<T: Scalar>(
    params: &LeNetParams<T>,
    bank: &BiasBank<T>,
    vectors: &BiasVectors<T>,
) -> Result<LeNetParams<T>> {
    let id = lenet_params_id(params);
    if bank.base_params_id != id {
        return Err(Error::AnchorMismatch { bank: bank.base_params_id.clone(), params: id });
    }
    let mut out = params.clone();
    if let Some(b1) = &vectors.conv1 {
        if b1.len() != out.conv1_b.len() {
            return Err(Error::shape(
                "apply_biases",
                format!("conv1 bias length {} vs {}", b1.len(), out.conv1_b.len()),
            ));
        }
        out.conv1_b = b1.clone();
    }
    if let Some(b2) = &vectors.conv2 {
        if b2.len() != out.conv2_b.len() {
            return Err(Error::shape(
                "apply_biases",
                format!("conv2 bias length {} vs {}", b2.len(), out.conv2_b.len()),
            ));
        }
        out.conv2_b = b2.clone();
    }
    Ok(out)
}

/// Rule reversal as a data transform: `x -> 1 - x` elementwise.
///
/// For the first layer's linear form this is equivalent to negating the
/// correlation statistic up to a constant that the bias entry absorbs. Exact
/// self-inverse on dyadic pixel values and on its own image; off those
/// domains double application can differ by one rounding step.
pub fn complement<T: Scalar>(images: &Tensor<T>) -> Tensor<T> {
    let one = T::one();
    images.map(|v| one - v)
}

/// Complement an image set, relabeling nothing.
pub fn complement_set<T: Scalar>(set: &ImageSet<T>) -> Result<ImageSet<T>> {
    ImageSet::new(complement(&set.images), set.labels.clone(), set.provenance.clone())
}

/// Robust AWGN level estimate: median absolute deviation of the high-pass
/// residual (pixel minus 3x3 mean over the interior), scaled by the Gaussian
/// consistency constant 1.4826 and the residual-kernel norm, clamped to [0,1].
pub fn estimate_noise_sigma<T: Scalar>(image: &Tensor<T>) -> Result<f64> {
    let image = normalize_single(image)?;
    let d = image.data();
    let mut residuals = Vec::with_capacity((IMG_HW - 2) * (IMG_HW - 2));
    for y in 1..IMG_HW - 1 {
        for x in 1..IMG_HW - 1 {
            let mut mean = 0.0f64;
            for dy in 0..3 {
                for dx in 0..3 {
                    mean += d[(y + dy - 1) * IMG_HW + (x + dx - 1)].as_f64();
                }
            }
            mean /= 9.0;
            residuals.push((d[y * IMG_HW + x].as_f64() - mean).abs());
        }
    }
    residuals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = residuals.len() / 2;
    let median = if residuals.len() % 2 == 1 {
        residuals[mid]
    } else {
        0.5 * (residuals[mid - 1] + residuals[mid])
    };
    // residual = (8/9)x_c - (1/9) sum(neighbors): norm sqrt(8/9)
    let kernel_norm = (8.0f64 / 9.0).sqrt();
    Ok((1.4826 * median / kernel_norm).clamp(0.0, 1.0))
}

// ── Controller bundle files ────────────────────────────────────────────────

/// Text manifest referencing the two checkpoints and two banks plus the
/// switch level. Paths are stored relative to the bundle file.
pub struct BundlePaths {
    pub zero_ckpt: PathBuf,
    pub max_ckpt: PathBuf,
    pub zero_bank: PathBuf,
    pub max_bank: PathBuf,
    pub switch_level: f64,
    pub interpolation: InterpMode,
}

pub fn save_bundle(paths: &BundlePaths, path: impl AsRef<Path>) -> Result<()> {
    let p = path.as_ref().display().to_string();
    let mode = match paths.interpolation {
        InterpMode::Nearest => "nearest",
        InterpMode::Linear => "linear",
    };
    let text = format!(
        "BIASNET-BUNDLE v1\nzero_ckpt={}\nmax_ckpt={}\nzero_bank={}\nmax_bank={}\nswitch_level={}\ninterpolation={}\n",
        paths.zero_ckpt.display(),
        paths.max_ckpt.display(),
        paths.zero_bank.display(),
        paths.max_bank.display(),
        paths.switch_level,
        mode,
    );
    std::fs::write(path.as_ref(), text).map_err(|e| Error::io(&p, e))
}

pub fn load_bundle<T: Scalar>(path: impl AsRef<Path>) -> Result<ControllerState<T>> {
    let p = path.as_ref().display().to_string();
    let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&p, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("BIASNET-BUNDLE v1") {
        return Err(Error::Parse { path: p, detail: "missing bundle header".into() });
    }
    let get = |key: &str| -> Result<String> {
        text.lines()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
            .map(|s| s.to_string())
            .ok_or_else(|| Error::Parse {
                path: path.as_ref().display().to_string(),
                detail: format!("missing bundle key '{key}'"),
            })
    };
    let base = path.as_ref().parent().unwrap_or(Path::new("."));
    let resolve = |s: String| -> PathBuf {
        let pb = PathBuf::from(&s);
        if pb.is_absolute() {
            pb
        } else {
            base.join(pb)
        }
    };
    let zero_ckpt = resolve(get("zero_ckpt")?);
    let max_ckpt = resolve(get("max_ckpt")?);
    let zero_bank_path = resolve(get("zero_bank")?);
    let max_bank_path = resolve(get("max_bank")?);
    let switch_level: f64 = get("switch_level")?.parse().map_err(|_| Error::Parse {
        path: path.as_ref().display().to_string(),
        detail: "bad switch_level".into(),
    })?;
    let interpolation = match get("interpolation")?.as_str() {
        "nearest" => InterpMode::Nearest,
        "linear" => InterpMode::Linear,
        other => {
            return Err(Error::Parse {
                path: path.as_ref().display().to_string(),
                detail: format!("unknown interpolation '{other}'"),
            })
        }
    };
    ControllerState::new(
        load_lenet(&zero_ckpt)?,
        load_lenet(&max_ckpt)?,
        load_bank(&zero_bank_path)?,
        load_bank(&max_bank_path)?,
        switch_level,
        interpolation,
    )
}

/// One row of the inference log
/// (`timestamp,measured_level,kind,chosen_set,reversal,label,extrapolated`).
pub fn inference_log_row(
    timestamp: u64,
    m: &NoiseMeasurement,
    chosen: SetChoice,
    reversal: bool,
    label: u8,
    extrapolated: bool,
) -> String {
    format!("{timestamp},{},{},{chosen},{reversal},{label},{extrapolated}", m.level, m.kind)
}

pub const INFERENCE_LOG_HEADER: &str =
    "timestamp,measured_level,kind,chosen_set,reversal,label,extrapolated";
