//! Training flows: full SGD training with validation-based early stopping,
//! bias-only retraining per noise level, bias-bank assembly, and autoencoder
//! training.
//!
//! Every run is a pure function of its config seed: minibatch order, weight
//! initialization, and all corruption seeds derive from it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::dataset::{ImageSet, IMG_HW, IMG_PIXELS};
use crate::model::{DAParams, DATrace, LeNetParams, LeNetShape, Trainable};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Hyperparameters for one training run. Defaults follow the reference
/// configuration (batch 1000, learning rate 0.05, 1000 epochs maximum);
/// `desk()` shrinks batch and epoch ceilings for laptop-scale runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub desk_scale: bool,
}

impl TrainConfig {
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            batch_size: 1000,
            learning_rate: 0.05,
            max_epochs: 1000,
            patience: 20,
            seed,
            desk_scale: false,
        }
    }

    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            batch_size: 100,
            max_epochs: 100,
            desk_scale: true,
            ..TrainConfig::paper(seed)
        }
    }

    pub fn with_epochs(mut self, max_epochs: usize, patience: usize) -> Self {
        self.max_epochs = max_epochs;
        self.patience = patience.min(max_epochs);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::InvalidArgument("patience must be <= max_epochs".into()));
        }
        Ok(())
    }
}

/// One learning-curve record.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub epoch: usize,
    pub split: &'static str,
    pub metric: &'static str,
    pub value: f64,
}

/// Learning curves for a run; persists as `epoch,split,metric,value` CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    fn push(&mut self, epoch: usize, split: &'static str, metric: &'static str, value: f64) {
        self.rows.push(LogRow { epoch, split, metric, value });
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,split,metric,value\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.split, r.metric, r.value));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let p = path.as_ref().display().to_string();
        std::fs::write(path.as_ref(), self.to_csv()).map_err(|e| Error::io(&p, e))
    }

    /// Values of one `(split, metric)` series in epoch order.
    pub fn series(&self, split: &str, metric: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.split == split && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }
}

fn gather_batch<T: Scalar>(
    set: &ImageSet<T>,
    order: &[usize],
    start: usize,
    count: usize,
) -> (Tensor<T>, Vec<u8>) {
    let mut data = Vec::with_capacity(count * IMG_PIXELS);
    let mut labels = Vec::with_capacity(count);
    for &i in &order[start..start + count] {
        data.extend_from_slice(&set.images.data()[i * IMG_PIXELS..(i + 1) * IMG_PIXELS]);
        labels.push(set.labels[i]);
    }
    (
        Tensor::new(vec![count, 1, IMG_HW, IMG_HW], data).expect("batch shape"),
        labels,
    )
}

/// Fraction of misclassified images, evaluated in batches.
pub fn error_rate<T: Scalar>(params: &LeNetParams<T>, set: &ImageSet<T>, batch: usize) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidArgument("empty evaluation set".into()));
    }
    let order: Vec<usize> = (0..set.len()).collect();
    let mut wrong = 0usize;
    let mut start = 0;
    while start < set.len() {
        let count = batch.min(set.len() - start);
        let (images, labels) = gather_batch(set, &order, start, count);
        let preds = params.predict(&images)?;
        wrong += preds.iter().zip(&labels).filter(|(p, l)| p != l).count();
        start += count;
    }
    Ok(wrong as f64 / set.len() as f64)
}

struct EpochRunner<'a, T: Scalar> {
    data: &'a ImageSet<T>,
    cfg: &'a TrainConfig,
    trainable: Trainable,
}

impl<'a, T: Scalar> EpochRunner<'a, T> {
    /// One pass of minibatch SGD; returns the mean training loss.
    fn run(&self, params: &mut LeNetParams<T>, epoch: usize) -> Result<f64> {
        let n = self.data.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = Rng::new(derive_seed(self.cfg.seed, 0x5348 ^ epoch as u64));
        shuffle_rng.shuffle(&mut order);

        let mut loss_sum = 0.0f64;
        let mut start = 0usize;
        while start < n {
            let count = self.cfg.batch_size.min(n - start);
            let (images, labels) = gather_batch(self.data, &order, start, count);
            let trace = params.forward_trace(&images)?;
            let mut batch_loss = 0.0f64;
            let k = params.shape.classes;
            for (ni, &label) in labels.iter().enumerate() {
                let p = trace.probs.data()[ni * k + label as usize].as_f64();
                batch_loss -= p.max(f64::MIN_POSITIVE).ln();
            }
            batch_loss /= count as f64;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss diverged at epoch {epoch}")));
            }
            loss_sum += batch_loss * count as f64;
            let grads = params.backward(&images, &trace, &labels, self.trainable, 1.0)?;
            params.sgd_apply(&grads, self.cfg.learning_rate)?;
            start += count;
        }
        Ok(loss_sum / n as f64)
    }
}

/// Train every parameter with minibatch SGD and patience-based early
/// stopping on validation error. Returns the parameters with the best
/// observed validation error and the learning curves.
pub fn train_full<T: Scalar>(
    data: &ImageSet<T>,
    val: &ImageSet<T>,
    cfg: &TrainConfig,
    shape: LeNetShape,
) -> Result<(LeNetParams<T>, TrainLog)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut params = LeNetParams::<T>::init(shape, cfg.seed, data.provenance.noise);
    let mut log = TrainLog::default();
    let runner = EpochRunner { data, cfg, trainable: Trainable::all() };

    let mut best = params.clone();
    let mut best_err = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut stale = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = runner.run(&mut params, epoch)?;
        let val_err = error_rate(&params, val, cfg.batch_size)?;
        log.push(epoch, "train", "loss", train_loss);
        log.push(epoch, "val", "error", val_err);
        if val_err < best_err {
            best_err = val_err;
            best = params.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    best.meta.epochs = best_epoch;
    if !best.all_finite() {
        return Err(Error::NonFinite("non-finite parameters after training".into()));
    }
    Ok((best, log))
}

/// Which convolutional bias vectors a bank covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSet {
    pub conv1: bool,
    pub conv2: bool,
}

impl LayerSet {
    pub const CONV1: LayerSet = LayerSet { conv1: true, conv2: false };
    pub const BOTH: LayerSet = LayerSet { conv1: true, conv2: true };

    pub fn is_empty(&self) -> bool {
        !self.conv1 && !self.conv2
    }
}

impl fmt::Display for LayerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.conv1, self.conv2) {
            (true, true) => write!(f, "conv1,conv2"),
            (true, false) => write!(f, "conv1"),
            (false, true) => write!(f, "conv2"),
            (false, false) => write!(f, "none"),
        }
    }
}

impl FromStr for LayerSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = LayerSet { conv1: false, conv2: false };
        for part in s.split(',') {
            match part.trim() {
                "conv1" => set.conv1 = true,
                "conv2" => set.conv2 = true,
                other => {
                    return Err(Error::InvalidArgument(format!("unknown layer '{other}'")));
                }
            }
        }
        if set.is_empty() {
            return Err(Error::InvalidArgument("layer set must not be empty".into()));
        }
        Ok(set)
    }
}

/// Tuned bias vectors for one noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasVectors<T> {
    pub conv1: Option<Vec<T>>,
    pub conv2: Option<Vec<T>>,
}

/// Which corruption family a bank was trained against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BankKind {
    Awgn,
    Background,
}

impl fmt::Display for BankKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BankKind::Awgn => write!(f, "awgn"),
            BankKind::Background => write!(f, "background"),
        }
    }
}

impl FromStr for BankKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "awgn" => Ok(BankKind::Awgn),
            "background" => Ok(BankKind::Background),
            other => Err(Error::InvalidArgument(format!("unknown bank kind '{other}'"))),
        }
    }
}

/// Per-noise-level bias vectors anchored to one frozen base parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasBank<T> {
    pub base_params_id: String,
    pub layers: LayerSet,
    pub kind: BankKind,
    /// Sorted by strictly increasing noise level.
    pub entries: Vec<(f64, BiasVectors<T>)>,
}

impl<T: Scalar> BiasBank<T> {
    pub fn new(
        base_params_id: String,
        layers: LayerSet,
        kind: BankKind,
        entries: Vec<(f64, BiasVectors<T>)>,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("bank layer set must not be empty".into()));
        }
        for pair in entries.windows(2) {
            if pair[1].0 <= pair[0].0 {
                return Err(Error::InvalidArgument(format!(
                    "bank levels must strictly increase: {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        for (level, v) in &entries {
            if layers.conv1 != v.conv1.is_some() || layers.conv2 != v.conv2.is_some() {
                return Err(Error::InvalidArgument(format!(
                    "bank entry at {level} does not match layer set {layers}"
                )));
            }
        }
        Ok(BiasBank { base_params_id, layers, kind, entries })
    }

    pub fn levels(&self) -> Vec<f64> {
        self.entries.iter().map(|(l, _)| *l).collect()
    }
}

/// Retrain only the selected convolutional bias vectors against one noise
/// level. The base parameters are not mutated; training starts from the base
/// biases and every other parameter stays bitwise frozen.
pub fn retrain_biases<T: Scalar>(
    base: &LeNetParams<T>,
    data: &ImageSet<T>,
    val: &ImageSet<T>,
    cfg: &TrainConfig,
    layers: LayerSet,
) -> Result<(BiasVectors<T>, TrainLog)> {
    cfg.validate()?;
    if layers.is_empty() {
        return Err(Error::InvalidArgument("layer set must not be empty".into()));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut params = base.clone();
    let mut log = TrainLog::default();
    let runner = EpochRunner {
        data,
        cfg,
        trainable: Trainable::biases_only(layers.conv1, layers.conv2),
    };

    let take = |p: &LeNetParams<T>| BiasVectors {
        conv1: layers.conv1.then(|| p.conv1_b.clone()),
        conv2: layers.conv2.then(|| p.conv2_b.clone()),
    };
    let mut best = take(&params);
    let mut best_err = error_rate(&params, val, cfg.batch_size)?;
    log.push(0, "val", "error", best_err);
    let mut stale = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let train_loss = runner.run(&mut params, epoch)?;
        let val_err = error_rate(&params, val, cfg.batch_size)?;
        log.push(epoch, "train", "loss", train_loss);
        log.push(epoch, "val", "error", val_err);
        if val_err < best_err {
            best_err = val_err;
            best = take(&params);
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    Ok((best, log))
}

/// Build a bias bank over a level grid: one [`retrain_biases`] run per level,
/// anchored to the base parameter set's identity.
pub fn build_bias_bank<T: Scalar>(
    base: &LeNetParams<T>,
    per_level: &[(f64, ImageSet<T>, ImageSet<T>)],
    cfg: &TrainConfig,
    layers: LayerSet,
    kind: BankKind,
) -> Result<(BiasBank<T>, Vec<TrainLog>)> {
    if per_level.is_empty() {
        return Err(Error::InvalidArgument("bank grid must not be empty".into()));
    }
    let mut entries = Vec::with_capacity(per_level.len());
    let mut logs = Vec::with_capacity(per_level.len());
    for (level, train, val) in per_level {
        let mut level_cfg = *cfg;
        level_cfg.seed = derive_seed(cfg.seed, (level * 1e6).round() as u64);
        let (vectors, log) = retrain_biases(base, train, val, &level_cfg, layers)?;
        entries.push((*level, vectors));
        logs.push(log);
    }
    let bank = BiasBank::new(crate::checkpoint::lenet_params_id(base), layers, kind, entries)?;
    Ok((bank, logs))
}

/// Train the denoising autoencoder on aligned (corrupted, clean) pairs with
/// plain SGD on the reconstruction cross-entropy.
pub fn train_da<T: Scalar>(
    corrupted: &ImageSet<T>,
    clean: &ImageSet<T>,
    cfg: &TrainConfig,
    hidden_units: usize,
) -> Result<(DAParams<T>, TrainLog)> {
    cfg.validate()?;
    if corrupted.len() != clean.len() || corrupted.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "need matching nonempty pairs, got {} corrupted vs {} clean",
            corrupted.len(),
            clean.len()
        )));
    }
    let n = corrupted.len();
    let mut params = DAParams::<T>::init(hidden_units, cfg.seed, corrupted.provenance.noise);
    let mut log = TrainLog::default();

    let flat = |set: &ImageSet<T>, order: &[usize], start: usize, count: usize| {
        let mut data = Vec::with_capacity(count * IMG_PIXELS);
        for &i in &order[start..start + count] {
            data.extend_from_slice(&set.images.data()[i * IMG_PIXELS..(i + 1) * IMG_PIXELS]);
        }
        Tensor::new(vec![count, IMG_PIXELS], data).expect("batch shape")
    };

    let mut best = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut stale = 0usize;
    for epoch in 1..=cfg.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = Rng::new(derive_seed(cfg.seed, 0x6441 ^ epoch as u64));
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        let mut start = 0usize;
        while start < n {
            let count = cfg.batch_size.min(n - start);
            let x = flat(corrupted, &order, start, count);
            let t = flat(clean, &order, start, count);
            let trace: DATrace<T> = params.forward_trace(&x)?;
            let loss = DAParams::reconstruction_loss(&trace, &t)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("dA loss diverged at epoch {epoch}")));
            }
            loss_sum += loss * count as f64;
            let grads = params.backward(&x, &trace, &t)?;
            params.sgd_apply(&grads, cfg.learning_rate)?;
            start += count;
        }
        let epoch_loss = loss_sum / n as f64;
        log.push(epoch, "train", "reconstruction_loss", epoch_loss);
        if epoch_loss < best_loss {
            best_loss = epoch_loss;
            best = params.clone();
            best.meta.epochs = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale > cfg.patience {
                break;
            }
        }
    }
    Ok((best, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::{lenet_id_excluding_biases, lenet_params_id};
    use crate::dataset::{corrupt_awgn, NoiseSpec, Provenance};
    use crate::synth::synth_digits;

    /// Two linearly separable classes: bright left half vs bright right half.
    fn toy_set(n: usize) -> ImageSet<f64> {
        let mut data = vec![0.0f64; n * IMG_PIXELS];
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let label = (i % 2) as u8;
            labels.push(label);
            for y in 4..24 {
                let (x0, x1) = if label == 0 { (3, 13) } else { (15, 25) };
                for x in x0..x1 {
                    data[i * IMG_PIXELS + y * IMG_HW + x] = 0.9;
                }
            }
        }
        ImageSet::new(
            Tensor::new(vec![n, 1, IMG_HW, IMG_HW], data).unwrap(),
            labels,
            Provenance::new("toy", NoiseSpec::Clean, 0),
        )
        .unwrap()
    }

    #[test]
    fn toy_problem_reaches_zero_training_error() {
        let data = toy_set(8);
        let shape = LeNetShape::reduced(4, 6, 16, 2);
        let cfg = TrainConfig { batch_size: 4, learning_rate: 0.05, max_epochs: 50, patience: 50, seed: 1, desk_scale: true };
        let (params, log) = train_full(&data, &data, &cfg, shape).unwrap();
        let err = error_rate(&params, &data, 8).unwrap();
        assert_eq!(err, 0.0, "log: {:?}", log.series("val", "error"));
    }

    #[test]
    fn training_is_deterministic() {
        let data = synth_digits::<f32>(200, 2).unwrap();
        let val = synth_digits::<f32>(50, 3).unwrap();
        let shape = LeNetShape::reduced(4, 6, 24, 10);
        let cfg = TrainConfig { batch_size: 50, learning_rate: 0.05, max_epochs: 3, patience: 3, seed: 7, desk_scale: true };
        let (a, log_a) = train_full(&data, &val, &cfg, shape).unwrap();
        let (b, log_b) = train_full(&data, &val, &cfg, shape).unwrap();
        assert_eq!(a.conv1_w.data(), b.conv1_w.data());
        assert_eq!(a.out_b, b.out_b);
        assert_eq!(log_a, log_b);
    }

    #[test]
    fn early_stopping_returns_best_validation_params() {
        let data = synth_digits::<f32>(300, 4).unwrap();
        let val = synth_digits::<f32>(80, 5).unwrap();
        let shape = LeNetShape::reduced(4, 6, 24, 10);
        let cfg = TrainConfig { batch_size: 50, learning_rate: 0.05, max_epochs: 8, patience: 2, seed: 9, desk_scale: true };
        let (params, log) = train_full(&data, &val, &cfg, shape).unwrap();
        let errors = log.series("val", "error");
        let best_logged = errors.iter().cloned().fold(f64::INFINITY, f64::min);
        let actual = error_rate(&params, &val, 50).unwrap();
        assert!((actual - best_logged).abs() < 1e-12);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let set = synth_digits::<f32>(4, 6).unwrap();
        let empty = ImageSet::<f32> {
            images: Tensor::zeros(vec![1, 1, IMG_HW, IMG_HW]),
            labels: vec![0],
            provenance: Provenance::new("t", NoiseSpec::Clean, 0),
        };
        let _ = empty; // constructing a truly empty set is prevented by Tensor
        let cfg = TrainConfig { batch_size: 4, learning_rate: 0.05, max_epochs: 1, patience: 1, seed: 1, desk_scale: true };
        let sliced = set.slice(0, 0);
        assert!(sliced.is_err() || train_full(&sliced.unwrap(), &set, &cfg, LeNetShape::reduced(2, 2, 8, 10)).is_err());
    }

    #[test]
    fn bias_retraining_freezes_everything_else() {
        let data = synth_digits::<f32>(150, 8).unwrap();
        let noisy = corrupt_awgn(&data, 0.5, 11).unwrap();
        let val = corrupt_awgn(&synth_digits::<f32>(40, 9).unwrap(), 0.5, 12).unwrap();
        let shape = LeNetShape::reduced(4, 6, 24, 10);
        let cfg = TrainConfig { batch_size: 50, learning_rate: 0.05, max_epochs: 3, patience: 3, seed: 13, desk_scale: true };
        let (base, _) = train_full(&data, &data, &cfg, shape).unwrap();

        for layers in [LayerSet::CONV1, LayerSet::BOTH] {
            let (vectors, _) = retrain_biases(&base, &noisy, &val, &cfg, layers).unwrap();
            assert_eq!(vectors.conv1.is_some(), layers.conv1);
            assert_eq!(vectors.conv2.is_some(), layers.conv2);
            // base untouched by construction; apply the vectors to a clone and
            // verify everything outside the tuned vectors is bitwise frozen
            let mut tuned = base.clone();
            if let Some(b1) = &vectors.conv1 {
                tuned.conv1_b = b1.clone();
            }
            if let Some(b2) = &vectors.conv2 {
                tuned.conv2_b = b2.clone();
            }
            assert_eq!(
                lenet_id_excluding_biases(&tuned, layers),
                lenet_id_excluding_biases(&base, layers),
            );
        }
    }

    #[test]
    fn bank_structure_and_anchoring() {
        let data = synth_digits::<f32>(120, 14).unwrap();
        let shape = LeNetShape::reduced(4, 6, 24, 10);
        let cfg = TrainConfig { batch_size: 40, learning_rate: 0.05, max_epochs: 2, patience: 2, seed: 15, desk_scale: true };
        let (base, _) = train_full(&data, &data, &cfg, shape).unwrap();
        let levels = [0.0, 0.5, 1.0];
        let per_level: Vec<(f64, ImageSet<f32>, ImageSet<f32>)> = levels
            .iter()
            .map(|&l| {
                let t = corrupt_awgn(&data, l, 16).unwrap();
                let v = corrupt_awgn(&data, l, 17).unwrap();
                (l, t, v)
            })
            .collect();
        let (bank, logs) = build_bias_bank(&base, &per_level, &cfg, LayerSet::CONV1, BankKind::Awgn).unwrap();
        assert_eq!(bank.entries.len(), 3);
        assert_eq!(bank.levels(), vec![0.0, 0.5, 1.0]);
        assert_eq!(logs.len(), 3);
        assert_eq!(bank.base_params_id, lenet_params_id(&base));

        // degenerate single-level grid reproduces the fixed-point case
        let single = vec![(0.0, data.clone(), data.clone())];
        let (bank0, _) = build_bias_bank(&base, &single, &cfg, LayerSet::CONV1, BankKind::Awgn).unwrap();
        assert_eq!(bank0.entries.len(), 1);

        // strictly increasing levels enforced
        let bad = BiasBank::new(
            bank.base_params_id.clone(),
            LayerSet::CONV1,
            BankKind::Awgn,
            vec![
                (0.5, bank.entries[0].1.clone()),
                (0.5, bank.entries[1].1.clone()),
            ],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn da_training_improves_reconstruction() {
        let clean = synth_digits::<f32>(200, 18).unwrap();
        let cfg = TrainConfig { batch_size: 50, learning_rate: 0.05, max_epochs: 10, patience: 10, seed: 19, desk_scale: true };
        // zero-noise pairs: input equals target
        let (_, log) = train_da(&clean, &clean, &cfg, 32).unwrap();
        let losses = log.series("train", "reconstruction_loss");
        assert!(losses.len() >= 2);
        assert!(
            losses.windows(2).all(|w| w[1] <= w[0] + 1e-9),
            "losses not decreasing: {losses:?}"
        );
        // determinism
        let (da1, _) = train_da(&clean, &clean, &cfg, 32).unwrap();
        let (da2, _) = train_da(&clean, &clean, &cfg, 32).unwrap();
        assert_eq!(da1.encode_w.data(), da2.encode_w.data());
    }

    #[test]
    fn layer_set_parsing() {
        assert_eq!("conv1".parse::<LayerSet>().unwrap(), LayerSet::CONV1);
        assert_eq!("conv1,conv2".parse::<LayerSet>().unwrap(), LayerSet::BOTH);
        assert!("conv3".parse::<LayerSet>().is_err());
        assert_eq!(LayerSet::BOTH.to_string(), "conv1,conv2");
    }
}
