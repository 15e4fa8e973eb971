//! The two networks: a LeNet-style CNN (conv 5x5 -> tanh -> pool, twice,
//! then a tanh hidden layer and a softmax readout) and a single-hidden-layer
//! denoising autoencoder with tied weights.

use crate::dataset::NoiseSpec;
use crate::ops::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2_backward,
    maxpool2_forward, sgd_step, sigmoid_apply, softmax_nll, softmax_nll_backward, tanh_apply,
    tanh_backward, GradRequest,
};
use crate::rng::{derive_seed, Rng};
use crate::tensor::{glorot_uniform, Scalar, Tensor};
use crate::{Error, Result};

pub const KERNEL: usize = 5;
pub const INPUT_HW: usize = 28;

/// Layer widths. The canonical network is 20/50/500/10; reduced widths are
/// used by gradient-check and toy-problem tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeNetShape {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub hidden_units: usize,
    pub classes: usize,
}

impl LeNetShape {
    pub fn standard() -> Self {
        LeNetShape { conv1_filters: 20, conv2_filters: 50, hidden_units: 500, classes: 10 }
    }

    pub fn reduced(conv1: usize, conv2: usize, hidden: usize, classes: usize) -> Self {
        LeNetShape {
            conv1_filters: conv1,
            conv2_filters: conv2,
            hidden_units: hidden,
            classes,
        }
    }

    // 28 -> conv5 -> 24 -> pool -> 12 -> conv5 -> 8 -> pool -> 4
    pub const CONV1_HW: usize = INPUT_HW - KERNEL + 1;
    pub const POOL1_HW: usize = Self::CONV1_HW / 2;
    pub const CONV2_HW: usize = Self::POOL1_HW - KERNEL + 1;
    pub const POOL2_HW: usize = Self::CONV2_HW / 2;

    pub fn flatten_len(&self) -> usize {
        self.conv2_filters * Self::POOL2_HW * Self::POOL2_HW
    }

    pub fn param_count(&self) -> usize {
        let c1 = self.conv1_filters * KERNEL * KERNEL + self.conv1_filters;
        let c2 = self.conv2_filters * self.conv1_filters * KERNEL * KERNEL + self.conv2_filters;
        let h = self.flatten_len() * self.hidden_units + self.hidden_units;
        let o = self.hidden_units * self.classes + self.classes;
        c1 + c2 + h + o
    }
}

/// Training provenance carried with a parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub noise: NoiseSpec,
    pub seed: u64,
    pub epochs: usize,
}

impl ModelMeta {
    pub fn new(noise: NoiseSpec, seed: u64) -> Self {
        ModelMeta { noise, seed, epochs: 0 }
    }
}

/// Full parameter set of the CNN.
#[derive(Debug, Clone, PartialEq)]
pub struct LeNetParams<T> {
    pub shape: LeNetShape,
    pub conv1_w: Tensor<T>,
    pub conv1_b: Vec<T>,
    pub conv2_w: Tensor<T>,
    pub conv2_b: Vec<T>,
    pub hidden_w: Tensor<T>,
    pub hidden_b: Vec<T>,
    pub out_w: Tensor<T>,
    pub out_b: Vec<T>,
    pub meta: ModelMeta,
}

/// Intermediate activations retained for the backward pass.
pub struct LeNetTrace<T> {
    pub a1: Tensor<T>,
    pub idx1: Vec<u8>,
    pub p1: Tensor<T>,
    pub a2: Tensor<T>,
    pub idx2: Vec<u8>,
    pub flat: Tensor<T>,
    pub ah: Tensor<T>,
    pub probs: Tensor<T>,
}

/// Per-parameter gradients; `None` where not requested.
#[derive(Debug, Clone)]
pub struct LeNetGrads<T> {
    pub conv1_w: Option<Tensor<T>>,
    pub conv1_b: Option<Vec<T>>,
    pub conv2_w: Option<Tensor<T>>,
    pub conv2_b: Option<Vec<T>>,
    pub hidden_w: Option<Tensor<T>>,
    pub hidden_b: Option<Vec<T>>,
    pub out_w: Option<Tensor<T>>,
    pub out_b: Option<Vec<T>>,
    pub input: Option<Tensor<T>>,
}

/// Which parameters a training step may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub conv1_w: bool,
    pub conv1_b: bool,
    pub conv2_w: bool,
    pub conv2_b: bool,
    pub hidden_w: bool,
    pub hidden_b: bool,
    pub out_w: bool,
    pub out_b: bool,
    pub input: bool,
}

impl Trainable {
    pub fn all() -> Self {
        Trainable {
            conv1_w: true,
            conv1_b: true,
            conv2_w: true,
            conv2_b: true,
            hidden_w: true,
            hidden_b: true,
            out_w: true,
            out_b: true,
            input: false,
        }
    }

    /// Only the selected convolutional bias vectors train; every weight and
    /// every other bias stays frozen.
    pub fn biases_only(conv1: bool, conv2: bool) -> Self {
        Trainable {
            conv1_w: false,
            conv1_b: conv1,
            conv2_w: false,
            conv2_b: conv2,
            hidden_w: false,
            hidden_b: false,
            out_w: false,
            out_b: false,
            input: false,
        }
    }
}

impl<T: Scalar> LeNetParams<T> {
    /// Glorot-uniform weights, zero biases, deterministic in the seed.
    pub fn init(shape: LeNetShape, seed: u64, noise: NoiseSpec) -> Self {
        let mut rng = Rng::new(derive_seed(seed, 0x6c65_6e65));
        let k2 = KERNEL * KERNEL;
        let conv1_w = glorot_uniform(
            vec![shape.conv1_filters, 1, KERNEL, KERNEL],
            k2,
            shape.conv1_filters * k2 / 4,
            &mut rng,
        );
        let conv2_w = glorot_uniform(
            vec![shape.conv2_filters, shape.conv1_filters, KERNEL, KERNEL],
            shape.conv1_filters * k2,
            shape.conv2_filters * k2 / 4,
            &mut rng,
        );
        let flat = shape.flatten_len();
        let hidden_w = glorot_uniform(vec![flat, shape.hidden_units], flat, shape.hidden_units, &mut rng);
        let out_w = glorot_uniform(
            vec![shape.hidden_units, shape.classes],
            shape.hidden_units,
            shape.classes,
            &mut rng,
        );
        LeNetParams {
            shape,
            conv1_w,
            conv1_b: vec![T::zero(); shape.conv1_filters],
            conv2_w,
            conv2_b: vec![T::zero(); shape.conv2_filters],
            hidden_w,
            hidden_b: vec![T::zero(); shape.hidden_units],
            out_w,
            out_b: vec![T::zero(); shape.classes],
            meta: ModelMeta::new(noise, seed),
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv1_w.len()
            + self.conv1_b.len()
            + self.conv2_w.len()
            + self.conv2_b.len()
            + self.hidden_w.len()
            + self.hidden_b.len()
            + self.out_w.len()
            + self.out_b.len()
    }

    /// Pre-activations of the first convolution (bias-additivity probes).
    pub fn conv1_preactivations(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d_forward(batch, &self.conv1_w, &self.conv1_b)
    }

    /// Full forward pass retaining intermediates.
    pub fn forward_trace(&self, batch: &Tensor<T>) -> Result<LeNetTrace<T>> {
        let n = batch.shape()[0];
        let z1 = conv2d_forward(batch, &self.conv1_w, &self.conv1_b)?;
        let a1 = tanh_apply(&z1);
        drop(z1);
        let (p1, idx1) = maxpool2_forward(&a1)?;
        let z2 = conv2d_forward(&p1, &self.conv2_w, &self.conv2_b)?;
        let a2 = tanh_apply(&z2);
        drop(z2);
        let (p2, idx2) = maxpool2_forward(&a2)?;
        let flat = p2.reshape(vec![n, self.shape.flatten_len()])?;
        let zh = dense_forward(&flat, &self.hidden_w, &self.hidden_b)?;
        let ah = tanh_apply(&zh);
        drop(zh);
        let logits = dense_forward(&ah, &self.out_w, &self.out_b)?;
        // softmax without labels: reuse softmax_nll with dummy labels of 0
        let (_, probs) = softmax_nll(&logits, &vec![0u8; n])?;
        Ok(LeNetTrace { a1, idx1, p1, a2, idx2, flat, ah, probs })
    }

    /// Class probabilities for a batch; rows sum to 1.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_trace(batch)?.probs)
    }

    /// Argmax readout; ties break toward the smaller class index.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<u8>> {
        let probs = self.forward(batch)?;
        let k = self.shape.classes;
        Ok(probs
            .data()
            .chunks(k)
            .map(|row| {
                let mut best = row[0];
                let mut arg = 0usize;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > best {
                        best = v;
                        arg = i;
                    }
                }
                arg as u8
            })
            .collect())
    }

    /// Mean NLL of the labels under the current parameters.
    pub fn loss(&self, batch: &Tensor<T>, labels: &[u8]) -> Result<f64> {
        let trace = self.forward_trace(batch)?;
        let n = batch.shape()[0];
        let k = self.shape.classes;
        let mut loss = 0.0;
        for (ni, &label) in labels.iter().enumerate() {
            if label as usize >= k {
                return Err(Error::InvalidArgument(format!("label {label} out of range")));
            }
            let p = trace.probs.data()[ni * k + label as usize].as_f64();
            loss -= p.max(f64::MIN_POSITIVE).ln();
        }
        Ok(loss / n as f64)
    }

    /// Exact reverse-mode gradients of `loss_scale * mean NLL` for every
    /// requested parameter (and, on request, the input).
    pub fn backward(
        &self,
        batch: &Tensor<T>,
        trace: &LeNetTrace<T>,
        labels: &[u8],
        trainable: Trainable,
        loss_scale: f64,
    ) -> Result<LeNetGrads<T>> {
        let n = batch.shape()[0];
        let shape = &self.shape;
        let need_conv1 = trainable.conv1_w || trainable.conv1_b || trainable.input;
        let need_conv2 = trainable.conv2_w || trainable.conv2_b || need_conv1;
        let need_hidden_input = need_conv2;

        let dlogits = softmax_nll_backward(&trace.probs, labels, loss_scale)?;
        let out = dense_backward(
            &trace.ah,
            &self.out_w,
            &dlogits,
            GradRequest {
                weights: trainable.out_w,
                bias: trainable.out_b,
                input: trainable.hidden_w || trainable.hidden_b || need_hidden_input,
            },
        )?;

        let (mut hidden_grads, mut dflat) = (None, None);
        if let Some(dah) = out.input {
            let dzh = tanh_backward(&trace.ah, &dah)?;
            let hidden = dense_backward(
                &trace.flat,
                &self.hidden_w,
                &dzh,
                GradRequest {
                    weights: trainable.hidden_w,
                    bias: trainable.hidden_b,
                    input: need_hidden_input,
                },
            )?;
            dflat = hidden.input;
            hidden_grads = Some((hidden.weights, hidden.bias));
        }

        let (mut conv2_grads, mut dp1) = (None, None);
        if let Some(dflat) = dflat {
            let dp2 = dflat.reshape(vec![
                n,
                shape.conv2_filters,
                LeNetShape::POOL2_HW,
                LeNetShape::POOL2_HW,
            ])?;
            let da2 = maxpool2_backward(&dp2, &trace.idx2, trace.a2.shape())?;
            let dz2 = tanh_backward(&trace.a2, &da2)?;
            let conv2 = conv2d_backward(
                &trace.p1,
                &self.conv2_w,
                &dz2,
                GradRequest {
                    weights: trainable.conv2_w,
                    bias: trainable.conv2_b,
                    input: need_conv1,
                },
            )?;
            dp1 = conv2.input;
            conv2_grads = Some((conv2.weights, conv2.bias));
        }

        let mut conv1_grads = None;
        let mut dinput = None;
        if let Some(dp1) = dp1 {
            let da1 = maxpool2_backward(&dp1, &trace.idx1, trace.a1.shape())?;
            let dz1 = tanh_backward(&trace.a1, &da1)?;
            let conv1 = conv2d_backward(
                batch,
                &self.conv1_w,
                &dz1,
                GradRequest {
                    weights: trainable.conv1_w,
                    bias: trainable.conv1_b,
                    input: trainable.input,
                },
            )?;
            dinput = conv1.input;
            conv1_grads = Some((conv1.weights, conv1.bias));
        }

        let (hw, hb) = hidden_grads.unwrap_or((None, None));
        let (c2w, c2b) = conv2_grads.unwrap_or((None, None));
        let (c1w, c1b) = conv1_grads.unwrap_or((None, None));
        Ok(LeNetGrads {
            conv1_w: c1w,
            conv1_b: c1b,
            conv2_w: c2w,
            conv2_b: c2b,
            hidden_w: hw,
            hidden_b: hb,
            out_w: out.weights,
            out_b: out.bias,
            input: dinput,
        })
    }

    /// One SGD step over every gradient present.
    pub fn sgd_apply(&mut self, grads: &LeNetGrads<T>, lr: f64) -> Result<()> {
        if let Some(g) = &grads.conv1_w {
            sgd_step(self.conv1_w.data_mut(), g.data(), lr)?;
        }
        if let Some(g) = &grads.conv1_b {
            sgd_step(&mut self.conv1_b, g, lr)?;
        }
        if let Some(g) = &grads.conv2_w {
            sgd_step(self.conv2_w.data_mut(), g.data(), lr)?;
        }
        if let Some(g) = &grads.conv2_b {
            sgd_step(&mut self.conv2_b, g, lr)?;
        }
        if let Some(g) = &grads.hidden_w {
            sgd_step(self.hidden_w.data_mut(), g.data(), lr)?;
        }
        if let Some(g) = &grads.hidden_b {
            sgd_step(&mut self.hidden_b, g, lr)?;
        }
        if let Some(g) = &grads.out_w {
            sgd_step(self.out_w.data_mut(), g.data(), lr)?;
        }
        if let Some(g) = &grads.out_b {
            sgd_step(&mut self.out_b, g, lr)?;
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.conv1_w.all_finite()
            && self.conv1_b.iter().all(|v| v.is_finite())
            && self.conv2_w.all_finite()
            && self.conv2_b.iter().all(|v| v.is_finite())
            && self.hidden_w.all_finite()
            && self.hidden_b.iter().all(|v| v.is_finite())
            && self.out_w.all_finite()
            && self.out_b.iter().all(|v| v.is_finite())
    }
}

// ── Denoising autoencoder ──────────────────────────────────────────────────

pub const DA_VISIBLE: usize = INPUT_HW * INPUT_HW;
pub const DA_HIDDEN: usize = 500;

/// Tied-weight single-hidden-layer autoencoder:
/// `y = sigmoid(W^T sigmoid(W x + b) + b')`.
#[derive(Debug, Clone, PartialEq)]
pub struct DAParams<T> {
    pub encode_w: Tensor<T>,
    pub hidden_b: Vec<T>,
    pub visible_b: Vec<T>,
    pub hidden_units: usize,
    pub meta: ModelMeta,
}

pub struct DATrace<T> {
    pub hidden: Tensor<T>,
    pub pre_recon: Tensor<T>,
    pub recon: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DAGrads<T> {
    pub encode_w: Tensor<T>,
    pub hidden_b: Vec<T>,
    pub visible_b: Vec<T>,
}

impl<T: Scalar> DAParams<T> {
    pub fn init(hidden_units: usize, seed: u64, noise: NoiseSpec) -> Self {
        let mut rng = Rng::new(derive_seed(seed, 0x6461_6461));
        let encode_w = glorot_uniform(vec![DA_VISIBLE, hidden_units], DA_VISIBLE, hidden_units, &mut rng);
        DAParams {
            encode_w,
            hidden_b: vec![T::zero(); hidden_units],
            visible_b: vec![T::zero(); DA_VISIBLE],
            hidden_units,
            meta: ModelMeta::new(noise, seed),
        }
    }

    fn decode_weights(&self) -> Tensor<T> {
        // materialized transpose of the tied encode weights
        let (d, k) = (DA_VISIBLE, self.hidden_units);
        let mut wt = Tensor::zeros(vec![k, d]);
        let src = self.encode_w.data();
        let dst = wt.data_mut();
        for di in 0..d {
            for ki in 0..k {
                dst[ki * d + di] = src[di * k + ki];
            }
        }
        wt
    }

    pub fn forward_trace(&self, batch: &Tensor<T>) -> Result<DATrace<T>> {
        let zh = dense_forward(batch, &self.encode_w, &self.hidden_b)?;
        let hidden = sigmoid_apply(&zh);
        let wt = self.decode_weights();
        let pre_recon = dense_forward(&hidden, &wt, &self.visible_b)?;
        let recon = sigmoid_apply(&pre_recon);
        Ok(DATrace { hidden, pre_recon, recon })
    }

    /// Reconstruction in `(0,1)` for inputs shaped `[N,784]`.
    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_trace(batch)?.recon)
    }

    /// Mean (over images) summed (over pixels) cross-entropy between the
    /// reconstruction and the target, computed stably from pre-activations.
    pub fn reconstruction_loss(trace: &DATrace<T>, targets: &Tensor<T>) -> Result<f64> {
        if trace.pre_recon.shape() != targets.shape() {
            return Err(Error::shape("reconstruction_loss", "target shape mismatch".to_string()));
        }
        let n = targets.shape()[0] as f64;
        let mut loss = 0.0f64;
        for (&z, &t) in trace.pre_recon.data().iter().zip(targets.data()) {
            let (z, t) = (z.as_f64(), t.as_f64());
            // ln(1 + e^z) - t*z, computed without overflow
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            loss += softplus - t * z;
        }
        Ok(loss / n)
    }

    /// Gradients of the mean reconstruction cross-entropy. The tied weight
    /// matrix accumulates both its encode and decode contributions.
    pub fn backward(&self, batch: &Tensor<T>, trace: &DATrace<T>, targets: &Tensor<T>) -> Result<DAGrads<T>> {
        let n = batch.shape()[0];
        let scale = T::from_f64(1.0 / n as f64);
        // d loss / d pre_recon = (recon - target) / n
        let mut dpre = trace.recon.clone();
        dpre.data_mut()
            .iter_mut()
            .zip(targets.data())
            .for_each(|(y, t)| *y = (*y - *t) * scale);

        let wt = self.decode_weights();
        let decode = dense_backward(&trace.hidden, &wt, &dpre, GradRequest::ALL)?;
        let dvb = decode.bias.expect("requested");
        let dwt = decode.weights.expect("requested");
        let dh = decode.input.expect("requested");

        // sigmoid derivative through the hidden layer
        let mut dzh = dh;
        let one = T::one();
        dzh.data_mut()
            .iter_mut()
            .zip(trace.hidden.data())
            .for_each(|(g, h)| *g *= *h * (one - *h));

        let encode = dense_backward(
            batch,
            &self.encode_w,
            &dzh,
            GradRequest { weights: true, bias: true, input: false },
        )?;
        let mut dw = encode.weights.expect("requested");
        let dhb = encode.bias.expect("requested");

        // fold the decode-path gradient (shape [hidden, visible]) back into
        // the tied matrix (shape [visible, hidden])
        let (d, k) = (DA_VISIBLE, self.hidden_units);
        let dwd = dw.data_mut();
        let dwt_d = dwt.data();
        for ki in 0..k {
            for di in 0..d {
                dwd[di * k + ki] += dwt_d[ki * d + di];
            }
        }

        Ok(DAGrads { encode_w: dw, hidden_b: dhb, visible_b: dvb })
    }

    pub fn sgd_apply(&mut self, grads: &DAGrads<T>, lr: f64) -> Result<()> {
        sgd_step(self.encode_w.data_mut(), grads.encode_w.data(), lr)?;
        sgd_step(&mut self.hidden_b, &grads.hidden_b, lr)?;
        sgd_step(&mut self.visible_b, &grads.visible_b, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_batch(n: usize, seed: u64) -> Tensor<f64> {
        let mut rng = Rng::new(seed);
        Tensor::from_fn(vec![n, 1, INPUT_HW, INPUT_HW], |_| rng.uniform(0.0, 1.0))
    }

    #[test]
    fn shape_arithmetic() {
        assert_eq!(LeNetShape::CONV1_HW, 24);
        assert_eq!(LeNetShape::POOL1_HW, 12);
        assert_eq!(LeNetShape::CONV2_HW, 8);
        assert_eq!(LeNetShape::POOL2_HW, 4);
        let shape = LeNetShape::standard();
        assert_eq!(shape.flatten_len(), 800);
        assert_eq!(shape.param_count(), 431_080);
    }

    #[test]
    fn forward_rows_sum_to_one_and_finite() {
        let shape = LeNetShape::reduced(4, 6, 16, 10);
        let params = LeNetParams::<f64>::init(shape, 3, NoiseSpec::Clean);
        let batch = random_batch(5, 4);
        let probs = params.forward(&batch).unwrap();
        assert!(probs.all_finite());
        for row in probs.data().chunks(10) {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_images_identical_rows() {
        let shape = LeNetShape::reduced(3, 5, 12, 10);
        let params = LeNetParams::<f64>::init(shape, 5, NoiseSpec::Clean);
        let one = random_batch(1, 6);
        let mut data = one.data().to_vec();
        data.extend_from_slice(one.data());
        let batch = Tensor::new(vec![2, 1, INPUT_HW, INPUT_HW], data).unwrap();
        let probs = params.forward(&batch).unwrap();
        assert_eq!(&probs.data()[..10], &probs.data()[10..]);
    }

    #[test]
    fn batch_permutation_permutes_rows() {
        let shape = LeNetShape::reduced(3, 5, 12, 10);
        let params = LeNetParams::<f64>::init(shape, 7, NoiseSpec::Clean);
        let batch = random_batch(4, 8);
        let probs = params.forward(&batch).unwrap();
        // reversed batch
        let mut rev = Vec::new();
        for i in (0..4).rev() {
            rev.extend_from_slice(&batch.data()[i * 784..(i + 1) * 784]);
        }
        let rev_batch = Tensor::new(vec![4, 1, INPUT_HW, INPUT_HW], rev).unwrap();
        let rev_probs = params.forward(&rev_batch).unwrap();
        for i in 0..4 {
            assert_eq!(
                &probs.data()[i * 10..(i + 1) * 10],
                &rev_probs.data()[(3 - i) * 10..(4 - i) * 10]
            );
        }
    }

    #[test]
    fn init_is_deterministic_and_biases_zero() {
        let shape = LeNetShape::standard();
        let a = LeNetParams::<f32>::init(shape, 42, NoiseSpec::Clean);
        let b = LeNetParams::<f32>::init(shape, 42, NoiseSpec::Clean);
        assert_eq!(a.conv1_w.data(), b.conv1_w.data());
        assert_eq!(a.out_w.data(), b.out_w.data());
        assert!(a.conv1_b.iter().all(|&v| v == 0.0));
        assert!(a.conv2_b.iter().all(|&v| v == 0.0));
        assert!(a.hidden_b.iter().all(|&v| v == 0.0));
        assert!(a.out_b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bias_shift_moves_preactivations_exactly() {
        let shape = LeNetShape::reduced(4, 6, 16, 10);
        let mut params = LeNetParams::<f64>::init(shape, 9, NoiseSpec::Clean);
        let batch = random_batch(2, 10);
        let before = params.conv1_preactivations(&batch).unwrap();
        let delta = 0.37;
        params.conv1_b[2] += delta;
        let after = params.conv1_preactivations(&batch).unwrap();
        let plane = LeNetShape::CONV1_HW * LeNetShape::CONV1_HW;
        for n in 0..2 {
            for f in 0..4 {
                for i in 0..plane {
                    let idx = (n * 4 + f) * plane + i;
                    let diff = after.data()[idx] - before.data()[idx];
                    if f == 2 {
                        assert!((diff - delta).abs() < 1e-12);
                    } else {
                        assert_eq!(diff, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // Small model, full parameter scan with central differences.
        let shape = LeNetShape::reduced(2, 3, 8, 4);
        let params = LeNetParams::<f64>::init(shape, 11, NoiseSpec::Clean);
        let batch = random_batch(3, 12);
        let labels = vec![1u8, 0, 3];
        let trace = params.forward_trace(&batch).unwrap();
        let grads = params.backward(&batch, &trace, &labels, Trainable::all(), 1.0).unwrap();
        let h = 1e-5;

        let loss_of = |p: &LeNetParams<f64>| p.loss(&batch, &labels).unwrap();
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-6);

        macro_rules! check_tensor {
            ($field:ident, $grad:expr) => {
                for idx in 0..params.$field.len() {
                    let mut plus = params.clone();
                    plus.$field.data_mut()[idx] += h;
                    let mut minus = params.clone();
                    minus.$field.data_mut()[idx] -= h;
                    let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let ana = $grad.data()[idx];
                    assert!(
                        rel(ana, num) < 1e-4,
                        concat!(stringify!($field), "[{}]: analytic {} vs fd {}"),
                        idx,
                        ana,
                        num
                    );
                }
            };
        }
        macro_rules! check_vec {
            ($field:ident, $grad:expr) => {
                for idx in 0..params.$field.len() {
                    let mut plus = params.clone();
                    plus.$field[idx] += h;
                    let mut minus = params.clone();
                    minus.$field[idx] -= h;
                    let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
                    let ana = $grad[idx];
                    assert!(
                        rel(ana, num) < 1e-4,
                        concat!(stringify!($field), "[{}]: analytic {} vs fd {}"),
                        idx,
                        ana,
                        num
                    );
                }
            };
        }
        check_tensor!(conv1_w, grads.conv1_w.as_ref().unwrap());
        check_vec!(conv1_b, grads.conv1_b.as_ref().unwrap());
        check_tensor!(conv2_w, grads.conv2_w.as_ref().unwrap());
        check_vec!(conv2_b, grads.conv2_b.as_ref().unwrap());
        check_tensor!(hidden_w, grads.hidden_w.as_ref().unwrap());
        check_vec!(hidden_b, grads.hidden_b.as_ref().unwrap());
        check_tensor!(out_w, grads.out_w.as_ref().unwrap());
        check_vec!(out_b, grads.out_b.as_ref().unwrap());
    }

    #[test]
    fn saturated_model_has_vanishing_gradient() {
        // Drive the output layer so hard that the true class has probability
        // ~1: the loss is at its minimum and every gradient is ~0.
        let shape = LeNetShape::reduced(2, 3, 8, 4);
        let mut params = LeNetParams::<f64>::init(shape, 13, NoiseSpec::Clean);
        for v in params.out_b.iter_mut() {
            *v = -2000.0;
        }
        params.out_b[2] = 2000.0;
        let batch = random_batch(2, 14);
        let labels = vec![2u8, 2];
        let trace = params.forward_trace(&batch).unwrap();
        let grads = params.backward(&batch, &trace, &labels, Trainable::all(), 1.0).unwrap();
        let norm: f64 = grads
            .out_w
            .as_ref()
            .unwrap()
            .data()
            .iter()
            .chain(grads.conv1_w.as_ref().unwrap().data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        assert!(norm < 1e-6, "gradient norm {norm}");
    }

    #[test]
    fn loss_scale_doubles_gradients_exactly() {
        let shape = LeNetShape::reduced(2, 3, 8, 4);
        let params = LeNetParams::<f64>::init(shape, 15, NoiseSpec::Clean);
        let batch = random_batch(2, 16);
        let labels = vec![0u8, 3];
        let trace = params.forward_trace(&batch).unwrap();
        let g1 = params.backward(&batch, &trace, &labels, Trainable::all(), 1.0).unwrap();
        let g2 = params.backward(&batch, &trace, &labels, Trainable::all(), 2.0).unwrap();
        for (a, b) in g1.conv1_w.as_ref().unwrap().data().iter().zip(g2.conv1_w.as_ref().unwrap().data()) {
            assert_eq!(*b, 2.0 * *a);
        }
        for (a, b) in g1.out_b.as_ref().unwrap().iter().zip(g2.out_b.as_ref().unwrap()) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn biases_only_backward_produces_only_bias_grads() {
        let shape = LeNetShape::reduced(2, 3, 8, 4);
        let params = LeNetParams::<f64>::init(shape, 17, NoiseSpec::Clean);
        let batch = random_batch(2, 18);
        let labels = vec![1u8, 2];
        let trace = params.forward_trace(&batch).unwrap();
        let grads = params
            .backward(&batch, &trace, &labels, Trainable::biases_only(true, true), 1.0)
            .unwrap();
        assert!(grads.conv1_b.is_some() && grads.conv2_b.is_some());
        assert!(grads.conv1_w.is_none() && grads.conv2_w.is_none());
        assert!(grads.hidden_w.is_none() && grads.hidden_b.is_none());
        assert!(grads.out_w.is_none() && grads.out_b.is_none());

        // and the bias grads equal the full-backward bias grads
        let full = params.backward(&batch, &trace, &labels, Trainable::all(), 1.0).unwrap();
        assert_eq!(grads.conv1_b.as_ref().unwrap(), full.conv1_b.as_ref().unwrap());
        assert_eq!(grads.conv2_b.as_ref().unwrap(), full.conv2_b.as_ref().unwrap());
    }

    #[test]
    fn two_sgd_steps_recompute_gradients() {
        // Sequential semantics: two steps with recomputation differ from one
        // step with the doubled first gradient (the model is nonlinear).
        let shape = LeNetShape::reduced(2, 3, 8, 4);
        let base = LeNetParams::<f64>::init(shape, 19, NoiseSpec::Clean);
        let batch = random_batch(3, 20);
        let labels = vec![0u8, 1, 2];
        let lr = 0.05;

        let mut seq = base.clone();
        for _ in 0..2 {
            let trace = seq.forward_trace(&batch).unwrap();
            let grads = seq.backward(&batch, &trace, &labels, Trainable::all(), 1.0).unwrap();
            seq.sgd_apply(&grads, lr).unwrap();
        }

        let mut summed = base.clone();
        let trace = summed.forward_trace(&batch).unwrap();
        let grads = summed.backward(&batch, &trace, &labels, Trainable::all(), 2.0).unwrap();
        summed.sgd_apply(&grads, lr).unwrap();

        let max_diff = seq
            .hidden_w
            .data()
            .iter()
            .zip(summed.hidden_w.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff > 0.0, "trajectories should diverge");
    }

    #[test]
    fn predict_tie_breaks_low_and_is_shift_invariant() {
        // direct argmax check on a probability row with an exact tie
        let shape = LeNetShape::reduced(2, 3, 8, 10);
        let params = LeNetParams::<f64>::init(shape, 21, NoiseSpec::Clean);
        let row = [0.05, 0.05, 0.2, 0.05, 0.05, 0.05, 0.05, 0.2, 0.15, 0.15];
        let mut best = row[0];
        let mut arg = 0;
        for (i, &v) in row.iter().enumerate().skip(1) {
            if v > best {
                best = v;
                arg = i;
            }
        }
        assert_eq!(arg, 2); // first of the tied maxima

        // shift invariance through the real readout
        let batch = random_batch(2, 22);
        let preds = params.predict(&batch).unwrap();
        let mut shifted = params.clone();
        for v in shifted.out_b.iter_mut() {
            *v += 7.5;
        }
        assert_eq!(shifted.predict(&batch).unwrap(), preds);
    }

    #[test]
    fn da_outputs_in_open_unit_interval_and_deterministic() {
        let da = DAParams::<f64>::init(20, 23, NoiseSpec::Clean);
        let mut rng = Rng::new(24);
        let batch = Tensor::from_fn(vec![3, DA_VISIBLE], |_| rng.uniform(0.0, 1.0));
        let a = da.forward(&batch).unwrap();
        let b = da.forward(&batch).unwrap();
        assert_eq!(a.data(), b.data());
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn da_gradients_match_finite_differences() {
        let da = DAParams::<f64>::init(6, 25, NoiseSpec::Clean);
        let mut rng = Rng::new(26);
        let batch = Tensor::from_fn(vec![2, DA_VISIBLE], |_| rng.uniform(0.05, 0.95));
        let targets = Tensor::from_fn(vec![2, DA_VISIBLE], |_| rng.uniform(0.05, 0.95));
        let trace = da.forward_trace(&batch).unwrap();
        let grads = da.backward(&batch, &trace, &targets).unwrap();
        let h = 1e-5;
        let loss_of = |p: &DAParams<f64>| {
            DAParams::reconstruction_loss(&p.forward_trace(&batch).unwrap(), &targets).unwrap()
        };
        // scan a deterministic sample of tied-weight entries plus every bias
        for idx in (0..da.encode_w.len()).step_by(731) {
            let mut plus = da.clone();
            plus.encode_w.data_mut()[idx] += h;
            let mut minus = da.clone();
            minus.encode_w.data_mut()[idx] -= h;
            let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let ana = grads.encode_w.data()[idx];
            assert!(
                (ana - num).abs() / (ana.abs() + num.abs()).max(1e-6) < 1e-4,
                "w[{idx}] {ana} vs {num}"
            );
        }
        for idx in 0..da.hidden_b.len() {
            let mut plus = da.clone();
            plus.hidden_b[idx] += h;
            let mut minus = da.clone();
            minus.hidden_b[idx] -= h;
            let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let ana = grads.hidden_b[idx];
            assert!((ana - num).abs() / (ana.abs() + num.abs()).max(1e-6) < 1e-4);
        }
        for idx in (0..da.visible_b.len()).step_by(97) {
            let mut plus = da.clone();
            plus.visible_b[idx] += h;
            let mut minus = da.clone();
            minus.visible_b[idx] -= h;
            let num = (loss_of(&plus) - loss_of(&minus)) / (2.0 * h);
            let ana = grads.visible_b[idx];
            assert!((ana - num).abs() / (ana.abs() + num.abs()).max(1e-6) < 1e-4);
        }
    }
}
