//! Online throughput estimators.
//!
//! Each estimator consumes one instant-throughput sample per downloaded
//! segment and yields an updated estimate of the available throughput.
//! [`AffState`] adapts its forgetting factor by one-step gradient descent on
//! the squared one-step prediction error; [`EwmaState`] and
//! [`SlidingMeanState`] are the fixed-weight and avg-last-K baselines.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Instant throughput of one downloaded segment: its size divided by the
/// time taken to download it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThroughputSample {
    pub value_kbps: f64,
    /// 1-based ordinal of the downloaded segment.
    pub segment_index: u64,
}

impl ThroughputSample {
    pub fn new(value_kbps: f64, segment_index: u64) -> Result<Self> {
        let sample = Self {
            value_kbps,
            segment_index,
        };
        sample.validate()?;
        Ok(sample)
    }

    fn validate(&self) -> Result<()> {
        if !(self.value_kbps.is_finite() && self.value_kbps > 0.0) {
            return Err(Error::InvalidSample(format!(
                "throughput must be positive and finite, got {}",
                self.value_kbps
            )));
        }
        if self.segment_index == 0 {
            return Err(Error::InvalidSample("segment index is 1-based".into()));
        }
        Ok(())
    }
}

/// Estimated available throughput in kbps.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Estimate(pub f64);

impl Estimate {
    pub fn kbps(self) -> f64 {
        self.0
    }
}

/// Shared bookkeeping: validates the sample and enforces strictly increasing
/// segment indices within a session.
fn accept(last_index: &mut u64, sample: &ThroughputSample) -> Result<()> {
    sample.validate()?;
    if sample.segment_index <= *last_index {
        return Err(Error::InvalidSample(format!(
            "segment index {} does not follow {}",
            sample.segment_index, last_index
        )));
    }
    *last_index = sample.segment_index;
    Ok(())
}

/// Adaptive forgetting factor estimator.
///
/// The estimate is `m / w` where `m` and `w` are exponentially forgotten
/// sums of the samples and of the sample count. After every sample the
/// forgetting factor takes one gradient step on the squared error between
/// the estimate and the newest sample, using the recursively maintained
/// derivatives `delta = dm/dλ` and `omega = dw/dλ`, and is then clamped
/// into `[lambda_min, lambda_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AffState {
    m: f64,
    w: f64,
    estimate: f64,
    lambda: f64,
    delta: f64,
    omega: f64,
    eta: f64,
    lambda_min: f64,
    lambda_max: f64,
    n: u64,
    last_cost: f64,
    last_index: u64,
}

impl AffState {
    pub const DEFAULT_ETA: f64 = 0.1;
    pub const DEFAULT_LAMBDA_MIN: f64 = 0.6;
    pub const DEFAULT_LAMBDA_MAX: f64 = 1.0;

    /// Fresh state with `λ₀ = lambda_max`.
    pub fn new(eta: f64, lambda_min: f64, lambda_max: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 0.1) {
            return Err(Error::InvalidParameter(format!(
                "step size must lie in (0, 0.1], got {eta}"
            )));
        }
        if !(lambda_min > 0.0 && lambda_min < lambda_max && lambda_max <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "forgetting factor bounds must satisfy 0 < min < max <= 1, got [{lambda_min}, {lambda_max}]"
            )));
        }
        Ok(Self::fresh(eta, lambda_min, lambda_max))
    }

    /// A state whose forgetting factor is pinned at `lambda`: the gradient
    /// step is still evaluated but the clamp interval is the single point.
    pub fn with_fixed_lambda(eta: f64, lambda: f64) -> Result<Self> {
        if !(eta > 0.0 && eta <= 0.1) {
            return Err(Error::InvalidParameter(format!(
                "step size must lie in (0, 0.1], got {eta}"
            )));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "forgetting factor must lie in (0, 1], got {lambda}"
            )));
        }
        Ok(Self::fresh(eta, lambda, lambda))
    }

    fn fresh(eta: f64, lambda_min: f64, lambda_max: f64) -> Self {
        Self {
            m: 0.0,
            w: 0.0,
            estimate: 0.0,
            lambda: lambda_max,
            delta: 0.0,
            omega: 0.0,
            eta,
            lambda_min,
            lambda_max,
            n: 0,
            last_cost: 0.0,
            last_index: 0,
        }
    }

    pub fn update(&mut self, sample: ThroughputSample) -> Result<Estimate> {
        accept(&mut self.last_index, &sample)?;
        let thr = sample.value_kbps;
        let lambda_prev = self.lambda;

        // Derivative accumulators use the previous m and w.
        self.delta = lambda_prev * self.delta + self.m;
        self.omega = lambda_prev * self.omega + self.w;
        self.m = lambda_prev * self.m + thr;
        self.w = lambda_prev * self.w + 1.0;

        // m/w written as an incremental mean so a constant input is an exact
        // fixed point regardless of rounding in the accumulators
        self.estimate += (thr - self.estimate) / self.w;
        let error = self.estimate - thr;
        let gradient = (self.delta * self.w - self.omega * self.m) / (self.w * self.w);
        let stepped = lambda_prev - self.eta * 2.0 * error * gradient;
        self.lambda = stepped.clamp(self.lambda_min, self.lambda_max);

        self.last_cost = error * error;
        self.n += 1;
        Ok(Estimate(self.estimate))
    }

    pub fn estimate(&self) -> Option<Estimate> {
        (self.n > 0).then_some(Estimate(self.estimate))
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn lambda_bounds(&self) -> (f64, f64) {
        (self.lambda_min, self.lambda_max)
    }

    pub fn samples(&self) -> u64 {
        self.n
    }

    /// Squared prediction error of the most recent update (kbps²).
    pub fn last_cost(&self) -> f64 {
        self.last_cost
    }
}

impl Default for AffState {
    fn default() -> Self {
        Self::fresh(
            Self::DEFAULT_ETA,
            Self::DEFAULT_LAMBDA_MIN,
            Self::DEFAULT_LAMBDA_MAX,
        )
    }
}

/// Exponentially weighted moving average with fixed newest-sample weight
/// `alpha`, seeded with the first sample:
/// `estimate = alpha * sample + (1 - alpha) * estimate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EwmaState {
    alpha: f64,
    estimate: f64,
    n: u64,
    last_index: u64,
}

impl EwmaState {
    pub const DEFAULT_ALPHA: f64 = 0.2;

    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "EWMA weight must lie in (0, 1), got {alpha}"
            )));
        }
        Ok(Self {
            alpha,
            estimate: 0.0,
            n: 0,
            last_index: 0,
        })
    }

    pub fn update(&mut self, sample: ThroughputSample) -> Result<Estimate> {
        accept(&mut self.last_index, &sample)?;
        self.estimate = if self.n == 0 {
            sample.value_kbps
        } else {
            self.estimate + self.alpha * (sample.value_kbps - self.estimate)
        };
        self.n += 1;
        Ok(Estimate(self.estimate))
    }

    pub fn estimate(&self) -> Option<Estimate> {
        (self.n > 0).then_some(Estimate(self.estimate))
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn samples(&self) -> u64 {
        self.n
    }
}

impl Default for EwmaState {
    fn default() -> Self {
        Self {
            alpha: Self::DEFAULT_ALPHA,
            estimate: 0.0,
            n: 0,
            last_index: 0,
        }
    }
}

/// Arithmetic mean of the last `K` samples (fewer during warm-up).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlidingMeanState {
    capacity: usize,
    window: VecDeque<f64>,
    n: u64,
    last_index: u64,
}

impl SlidingMeanState {
    pub const DEFAULT_WINDOW: usize = 3;

    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidParameter("window must hold at least one sample".into()));
        }
        Ok(Self {
            capacity,
            window: VecDeque::with_capacity(capacity + 1),
            n: 0,
            last_index: 0,
        })
    }

    pub fn update(&mut self, sample: ThroughputSample) -> Result<Estimate> {
        accept(&mut self.last_index, &sample)?;
        self.window.push_back(sample.value_kbps);
        if self.window.len() > self.capacity {
            self.window.pop_front();
        }
        self.n += 1;
        Ok(self.mean())
    }

    fn mean(&self) -> Estimate {
        Estimate(self.window.iter().sum::<f64>() / self.window.len() as f64)
    }

    pub fn estimate(&self) -> Option<Estimate> {
        (!self.window.is_empty()).then(|| self.mean())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn window(&self) -> impl Iterator<Item = f64> + '_ {
        self.window.iter().copied()
    }

    pub fn samples(&self) -> u64 {
        self.n
    }
}

impl Default for SlidingMeanState {
    fn default() -> Self {
        Self::new(Self::DEFAULT_WINDOW).expect("default window is non-zero")
    }
}

/// Estimator choice plus its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorConfig {
    Aff {
        eta: f64,
        lambda_min: f64,
        lambda_max: f64,
    },
    Ewma {
        alpha: f64,
    },
    SlidingMean {
        window: usize,
    },
}

impl EstimatorConfig {
    pub const fn aff() -> Self {
        Self::Aff {
            eta: AffState::DEFAULT_ETA,
            lambda_min: AffState::DEFAULT_LAMBDA_MIN,
            lambda_max: AffState::DEFAULT_LAMBDA_MAX,
        }
    }

    pub const fn ewma() -> Self {
        Self::Ewma {
            alpha: EwmaState::DEFAULT_ALPHA,
        }
    }

    pub const fn avg_last3() -> Self {
        Self::SlidingMean {
            window: SlidingMeanState::DEFAULT_WINDOW,
        }
    }

    /// The three estimators in the order they are usually compared.
    pub const fn all_defaults() -> [Self; 3] {
        [Self::aff(), Self::avg_last3(), Self::ewma()]
    }

    pub fn build(&self) -> Result<Estimator> {
        Ok(match *self {
            Self::Aff {
                eta,
                lambda_min,
                lambda_max,
            } => Estimator::Aff(AffState::new(eta, lambda_min, lambda_max)?),
            Self::Ewma { alpha } => Estimator::Ewma(EwmaState::new(alpha)?),
            Self::SlidingMean { window } => {
                Estimator::SlidingMean(SlidingMeanState::new(window)?)
            }
        })
    }

    /// Human-readable method name.
    pub fn label(&self) -> String {
        match *self {
            Self::Aff { .. } => "AFF".to_string(),
            Self::Ewma { .. } => "EWMA".to_string(),
            Self::SlidingMean { window } => format!("avg-last-{window}"),
        }
    }
}

impl fmt::Display for EstimatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for EstimatorConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aff" => Ok(Self::aff()),
            "ewma" => Ok(Self::ewma()),
            "avg3" | "avg-last-3" | "sliding-mean" | "sliding_mean" => Ok(Self::avg_last3()),
            other => Err(Error::InvalidParameter(format!(
                "unknown estimator '{other}' (expected aff, ewma or avg3)"
            ))),
        }
    }
}

/// A running estimator of any supported kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Estimator {
    Aff(AffState),
    Ewma(EwmaState),
    SlidingMean(SlidingMeanState),
}

impl Estimator {
    pub fn update(&mut self, sample: ThroughputSample) -> Result<Estimate> {
        match self {
            Self::Aff(s) => s.update(sample),
            Self::Ewma(s) => s.update(sample),
            Self::SlidingMean(s) => s.update(sample),
        }
    }

    pub fn estimate(&self) -> Option<Estimate> {
        match self {
            Self::Aff(s) => s.estimate(),
            Self::Ewma(s) => s.estimate(),
            Self::SlidingMean(s) => s.estimate(),
        }
    }

    /// Current forgetting factor, for AFF only.
    pub fn lambda(&self) -> Option<f64> {
        match self {
            Self::Aff(s) => Some(s.lambda()),
            _ => None,
        }
    }
}
