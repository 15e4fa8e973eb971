//! Binary hypothesis testing for a known signal in additive Gaussian noise.
//!
//! Observations are either pure noise (H0) or signal plus noise (H1), with
//! noise drawn from `N(mean, variance * I)`. The minimum-error decision
//! compares the correlator statistic `<S, y>` against the threshold
//! `gamma = <S,S>/2 + <S,mean> + variance * ln(P0/P1)`, which is exactly the
//! bias a single linear neuron needs to realize the same rule.
//!
//! Tie convention: a statistic exactly equal to the threshold decides H1, in
//! both the standard and the reversed rule. Inner products are Euclidean dot
//! products over flattened tensors. All functions here are `f64`.

use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    H0,
    H1,
}

/// A fully specified test instance: signal template, noise statistics, priors.
#[derive(Debug, Clone)]
pub struct HypothesisTest {
    signal: Tensor<f64>,
    noise_mean: Tensor<f64>,
    noise_variance: f64,
    prior_h0: f64,
}

impl HypothesisTest {
    pub fn new(
        signal: Tensor<f64>,
        noise_mean: Tensor<f64>,
        noise_variance: f64,
        prior_h0: f64,
    ) -> Result<Self> {
        if signal.shape() != noise_mean.shape() {
            return Err(Error::shape(
                "HypothesisTest::new",
                format!("signal {:?} vs noise mean {:?}", signal.shape(), noise_mean.shape()),
            ));
        }
        if !(noise_variance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        if !(prior_h0 > 0.0 && prior_h0 < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "prior P0 must lie strictly inside (0,1), got {prior_h0}"
            )));
        }
        Ok(HypothesisTest { signal, noise_mean, noise_variance, prior_h0 })
    }

    pub fn signal(&self) -> &Tensor<f64> {
        &self.signal
    }

    pub fn noise_mean(&self) -> &Tensor<f64> {
        &self.noise_mean
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn prior_h0(&self) -> f64 {
        self.prior_h0
    }

    pub fn prior_h1(&self) -> f64 {
        1.0 - self.prior_h0
    }
}

/// Outcome of a threshold decision, carrying the statistic and threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub hypothesis: Hypothesis,
    pub statistic: f64,
    pub threshold: f64,
}

/// Decision threshold: `<S,S>/2 + <S,mean> + variance * ln(P0/P1)`.
pub fn threshold_gamma(test: &HypothesisTest) -> f64 {
    let s_energy = test.signal.dot(&test.signal).expect("same shape");
    let s_mean = test.signal.dot(&test.noise_mean).expect("same shape");
    s_energy / 2.0 + s_mean + test.noise_variance * (test.prior_h0 / test.prior_h1()).ln()
}

/// Standard MAP rule: H1 iff `<S,y> >= gamma`.
pub fn map_decide(y: &Tensor<f64>, test: &HypothesisTest) -> Result<Decision> {
    let statistic = test.signal.dot(y)?;
    let threshold = threshold_gamma(test);
    let hypothesis = if statistic >= threshold { Hypothesis::H1 } else { Hypothesis::H0 };
    Ok(Decision { hypothesis, statistic, threshold })
}

/// Single linear neuron with a hard step activation: fires iff
/// `<weights,y> + bias >= 0`. With `weights = S` and `bias = -gamma` this is
/// the MAP rule.
pub fn neuron_decide(y: &Tensor<f64>, weights: &Tensor<f64>, bias: f64) -> Result<u8> {
    let activation = weights.dot(y)?;
    Ok(u8::from(activation + bias >= 0.0))
}

/// Reversed rule for backgrounds that out-correlate the signal:
/// H1 iff `<S,y> <= gamma`.
pub fn reversed_decide(y: &Tensor<f64>, test: &HypothesisTest) -> Result<Decision> {
    let statistic = test.signal.dot(y)?;
    let threshold = threshold_gamma(test);
    let hypothesis = if statistic <= threshold { Hypothesis::H1 } else { Hypothesis::H0 };
    Ok(Decision { hypothesis, statistic, threshold })
}

/// Relation between a background and a signal template as seen by the
/// correlator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackgroundClass {
    /// `<S,bk> ~= <S,S>`: the correlator cannot separate them.
    Camouflage,
    /// `<S,bk> < <S,S>`: standard rule applies.
    Darker,
    /// `<S,bk> > <S,S>`: the rule must be reversed.
    Brighter,
}

/// Compare `<S,bk>` against `<S,S>` with a relative tolerance
/// `1e-9 * <S,S>` (the absolute scale of `S` is arbitrary).
pub fn classify_background(signal: &Tensor<f64>, background: &Tensor<f64>) -> Result<BackgroundClass> {
    let s_energy = signal.dot(signal)?;
    let s_bk = signal.dot(background)?;
    let eps = 1e-9 * s_energy.abs();
    Ok(if (s_bk - s_energy).abs() <= eps {
        BackgroundClass::Camouflage
    } else if s_bk < s_energy {
        BackgroundClass::Darker
    } else {
        BackgroundClass::Brighter
    })
}

/// Empirical error rate of `rule` over `trials` draws from the mixture: the
/// hypothesis is sampled by the priors, then `y` is noise (H0) or signal plus
/// noise (H1) with `N(mean, variance * I)` noise.
pub fn monte_carlo_error(
    test: &HypothesisTest,
    rule: impl Fn(&Tensor<f64>, &HypothesisTest) -> Hypothesis,
    trials: usize,
    rng: &mut Rng,
) -> Result<f64> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be >= 1".to_string()));
    }
    let dim = test.signal.len();
    let sd = test.noise_variance.sqrt();
    let mut wrong = 0usize;
    let mut y = Tensor::<f64>::zeros(vec![dim]);
    for _ in 0..trials {
        let truth = if rng.next_f64() < test.prior_h0 { Hypothesis::H0 } else { Hypothesis::H1 };
        for ((v, m), s) in y
            .data_mut()
            .iter_mut()
            .zip(test.noise_mean.data())
            .zip(test.signal.data())
        {
            let noise = m + sd * rng.normal();
            *v = if truth == Hypothesis::H1 { s + noise } else { noise };
        }
        if rule(&y, test) != truth {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / trials as f64)
}
