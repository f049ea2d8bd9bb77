//! Main and surrogate loss evaluators, and calibration of the surrogate
//! error bound σ_s.
//!
//! The main model is the exact recapture loss of [`StoreNetwork::total_loss`].
//! Two surrogate families are provided:
//!
//! * [`NaiveSurrogate`] drops the network-dependent recapture term, so its
//!   error is structural (always an overestimate).
//! * [`NoisySurrogate`] perturbs the main loss with seeded, state-keyed
//!   Gaussian error whose size is dialed to a target normalized RMSE.
//!
//! Normalized RMSE is RMSE divided by the largest main loss observed in the
//! reference sample.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ClosureState, StoreNetwork};
use crate::scalar::Scalar;

/// Reference states drawn when a noisy surrogate calibrates itself.
pub const DEFAULT_REFERENCE_SAMPLE: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Main,
    Surrogate,
}

/// A loss estimator for closure states.
pub trait LossModel<T: Scalar>: Send + Sync {
    fn fidelity(&self) -> Fidelity;

    fn loss(&self, network: &StoreNetwork<T>, state: &ClosureState) -> Result<T>;
}

impl<T: Scalar, M: LossModel<T> + ?Sized> LossModel<T> for &M {
    fn fidelity(&self) -> Fidelity {
        (**self).fidelity()
    }

    fn loss(&self, network: &StoreNetwork<T>, state: &ClosureState) -> Result<T> {
        (**self).loss(network, state)
    }
}

/// The main evaluation function: exact network loss.
#[derive(Clone, Copy, Debug, Default)]
pub struct MainModel;

impl<T: Scalar> LossModel<T> for MainModel {
    fn fidelity(&self) -> Fidelity {
        Fidelity::Main
    }

    fn loss(&self, network: &StoreNetwork<T>, state: &ClosureState) -> Result<T> {
        network.total_loss(state)
    }
}

/// Sum of the closed stores' base sales, ignoring recapture.
#[derive(Clone, Copy, Debug, Default)]
pub struct NaiveSurrogate;

impl<T: Scalar> LossModel<T> for NaiveSurrogate {
    fn fidelity(&self) -> Fidelity {
        Fidelity::Surrogate
    }

    fn loss(&self, network: &StoreNetwork<T>, state: &ClosureState) -> Result<T> {
        if state.store_count() != network.len() {
            return Err(Error::InvalidState(format!(
                "state sized for {} stores used with a network of {}",
                state.store_count(),
                network.len()
            )));
        }
        Ok(state.closed().iter().map(|&k| network.store(k).base_sales).sum())
    }
}

/// Relabels any model as a surrogate. `AsSurrogate(MainModel)` is the exact
/// surrogate F_s ≡ F_m.
#[derive(Clone, Copy, Debug, Default)]
pub struct AsSurrogate<M>(pub M);

impl<T: Scalar, M: LossModel<T>> LossModel<T> for AsSurrogate<M> {
    fn fidelity(&self) -> Fidelity {
        Fidelity::Surrogate
    }

    fn loss(&self, network: &StoreNetwork<T>, state: &ClosureState) -> Result<T> {
        self.0.loss(network, state)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stable hash of a closed set, independent of insertion order.
fn state_key(seed: u64, state: &ClosureState) -> u64 {
    let mut h = splitmix64(seed);
    for &c in state.closed() {
        h = splitmix64(h ^ (c as u64).wrapping_add(1));
    }
    splitmix64(h ^ state.closed_count() as u64)
}

/// Standard normal draw keyed by `(seed, state)`.
fn state_noise(seed: u64, state: &ClosureState) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(state_key(seed, state));
    StandardNormal.sample(&mut rng)
}

/// Main loss with multiplicative Gaussian error, `L · (1 + s·ε)`.
///
/// `ε` is a standard normal drawn from a stream keyed by the seed and the
/// closed set, so the same state always gets the same estimate. The relative
/// scale `s` is solved so that the normalized RMSE over the reference states
/// equals `target_nrmse` exactly.
#[derive(Clone, Debug)]
pub struct NoisySurrogate<T> {
    target_nrmse: f64,
    relative_scale: T,
    normalizer: T,
    seed: u64,
}

impl<T: Scalar> NoisySurrogate<T> {
    /// Calibrates against [`DEFAULT_REFERENCE_SAMPLE`] states drawn with `seed`.
    pub fn new(network: &StoreNetwork<T>, target_nrmse: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x5EED_CA1B));
        let reference = sample_states(network, DEFAULT_REFERENCE_SAMPLE, &mut rng)?;
        Self::calibrated(network, target_nrmse, seed, &reference)
    }

    pub fn calibrated(
        network: &StoreNetwork<T>,
        target_nrmse: f64,
        seed: u64,
        reference: &[ClosureState],
    ) -> Result<Self> {
        if !(target_nrmse.is_finite() && target_nrmse >= 0.0) {
            return Err(Error::Config(format!(
                "target_nrmse must be finite and >= 0, got {target_nrmse}"
            )));
        }
        if reference.is_empty() {
            return Err(Error::Config("noisy surrogate needs reference states".into()));
        }
        let mut max_loss = 0.0f64;
        let mut sq_err = 0.0f64;
        for state in reference {
            let loss = network.total_loss(state)?.as_f64();
            max_loss = max_loss.max(loss);
            sq_err += (loss * state_noise(seed, state)).powi(2);
        }
        let unit_rmse = (sq_err / reference.len() as f64).sqrt();
        let relative_scale = if target_nrmse == 0.0 || unit_rmse == 0.0 {
            0.0
        } else {
            target_nrmse * max_loss / unit_rmse
        };
        Ok(Self {
            target_nrmse,
            relative_scale: T::of(relative_scale),
            normalizer: T::of(max_loss),
            seed,
        })
    }

    pub fn target_nrmse(&self) -> f64 {
        self.target_nrmse
    }

    /// Standard deviation of the multiplicative error factor.
    pub fn relative_scale(&self) -> T {
        self.relative_scale
    }

    /// Largest main loss seen in the reference sample.
    pub fn normalizer(&self) -> T {
        self.normalizer
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

impl<T: Scalar> LossModel<T> for NoisySurrogate<T> {
    fn fidelity(&self) -> Fidelity {
        Fidelity::Surrogate
    }

    fn loss(&self, network: &StoreNetwork<T>, state: &ClosureState) -> Result<T> {
        let exact = network.total_loss(state)?;
        if self.relative_scale == T::zero() {
            return Ok(exact);
        }
        let eps = T::of(state_noise(self.seed, state));
        Ok(exact * (T::one() + self.relative_scale * eps))
    }
}

/// A loss model paired with a call counter.
pub struct Evaluator<'a, T: Scalar> {
    model: &'a dyn LossModel<T>,
    calls: AtomicU64,
}

impl<'a, T: Scalar> Evaluator<'a, T> {
    pub fn new(model: &'a dyn LossModel<T>) -> Self {
        Self {
            model,
            calls: AtomicU64::new(0),
        }
    }

    pub fn fidelity(&self) -> Fidelity {
        self.model.fidelity()
    }

    /// Evaluates `state`, counting the call even when it fails.
    pub fn evaluate(&self, network: &StoreNetwork<T>, state: &ClosureState) -> Result<T> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.model.loss(network, state)
    }

    pub fn call_count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

/// Uniform random closure states: size uniform in `1..=N-1`, then a uniform
/// subset of that size.
pub fn sample_states<T: Scalar, R: Rng + ?Sized>(
    network: &StoreNetwork<T>,
    count: usize,
    rng: &mut R,
) -> Result<Vec<ClosureState>> {
    let n = network.len();
    if n < 2 {
        return Err(Error::Config(format!(
            "state sampling needs at least 2 stores, network has {n}"
        )));
    }
    (0..count)
        .map(|_| {
            let size = rng.random_range(1..n);
            ClosureState::from_indices(n, index::sample(rng, n, size))
        })
        .collect()
}

/// σ_s = max(0, RMSE(F_s) − RMSE(F_m)).
pub fn sigma_from_rmse<T: Scalar>(rmse_surrogate: T, rmse_main: T) -> T {
    (rmse_surrogate - rmse_main).max(T::zero())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CalibrationReport<T> {
    pub rmse_main: T,
    pub rmse_surrogate: T,
    /// Error bound in loss units.
    pub sigma_s: T,
    pub sample_count: usize,
    /// Largest ground-truth loss in the sample.
    pub normalizer: T,
}

impl<T: Scalar> CalibrationReport<T> {
    fn normalized(&self, value: T) -> T {
        if self.normalizer > T::zero() {
            value / self.normalizer
        } else {
            T::zero()
        }
    }

    pub fn nrmse_main(&self) -> T {
        self.normalized(self.rmse_main)
    }

    pub fn nrmse_surrogate(&self) -> T {
        self.normalized(self.rmse_surrogate)
    }

    pub fn sigma_normalized(&self) -> T {
        self.normalized(self.sigma_s)
    }

    /// Converts a σ given in normalized units back to loss units.
    pub fn denormalize(&self, sigma_normalized: T) -> T {
        sigma_normalized * self.normalizer
    }
}

/// Measures both evaluators against the exact network loss on `states`.
pub fn calibrate_on_states<T: Scalar>(
    surrogate: &dyn LossModel<T>,
    main: &dyn LossModel<T>,
    network: &StoreNetwork<T>,
    states: &[ClosureState],
) -> Result<CalibrationReport<T>> {
    if states.is_empty() {
        return Err(Error::Config("calibration needs at least one state".into()));
    }
    let mut sq_main = T::zero();
    let mut sq_surrogate = T::zero();
    let mut normalizer = T::zero();
    for state in states {
        let truth = network.total_loss(state)?;
        normalizer = normalizer.max(truth);
        sq_main += (main.loss(network, state)? - truth).powi(2);
        sq_surrogate += (surrogate.loss(network, state)? - truth).powi(2);
    }
    let count = T::of_count(states.len() as u64);
    let rmse_main = (sq_main / count).sqrt();
    let rmse_surrogate = (sq_surrogate / count).sqrt();
    Ok(CalibrationReport {
        rmse_main,
        rmse_surrogate,
        sigma_s: sigma_from_rmse(rmse_surrogate, rmse_main),
        sample_count: states.len(),
        normalizer,
    })
}

/// Calibrates σ_s on `sample_size` seeded random closure states.
pub fn calibrate_sigma<T: Scalar>(
    surrogate: &dyn LossModel<T>,
    main: &dyn LossModel<T>,
    network: &StoreNetwork<T>,
    sample_size: usize,
    seed: u64,
) -> Result<CalibrationReport<T>> {
    if sample_size == 0 {
        return Err(Error::Config("calibration sample_size must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = sample_states(network, sample_size, &mut rng)?;
    calibrate_on_states(surrogate, main, network, &states)
}
