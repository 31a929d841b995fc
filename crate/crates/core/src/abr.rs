//! Representation selection: highest rung the estimate affords, overridden
//! by the buffer-panic rule and the startup choice.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimate;

/// Available representation bitrates (kbps, strictly increasing) and the
/// media duration of one segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BitrateLadder {
    bitrates: Vec<f64>,
    segment_duration: f64,
}

impl BitrateLadder {
    pub fn new(bitrates: Vec<f64>, segment_duration: f64) -> Result<Self> {
        if bitrates.is_empty() {
            return Err(Error::InvalidParameter("ladder must not be empty".into()));
        }
        if bitrates.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return Err(Error::InvalidParameter(
                "ladder bitrates must be positive and finite".into(),
            ));
        }
        if bitrates.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::InvalidParameter(
                "ladder bitrates must be strictly increasing".into(),
            ));
        }
        if !(segment_duration.is_finite() && segment_duration > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "segment duration must be positive, got {segment_duration}"
            )));
        }
        Ok(Self {
            bitrates,
            segment_duration,
        })
    }

    /// 250/500/1000/2000 kbps with 2 s segments.
    pub fn reference() -> Self {
        Self {
            bitrates: vec![250.0, 500.0, 1000.0, 2000.0],
            segment_duration: 2.0,
        }
    }

    pub fn bitrates(&self) -> &[f64] {
        &self.bitrates
    }

    pub fn bitrate(&self, index: usize) -> f64 {
        self.bitrates[index]
    }

    pub fn segment_duration(&self) -> f64 {
        self.segment_duration
    }

    pub fn len(&self) -> usize {
        self.bitrates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bitrates.is_empty()
    }

    pub fn max_index(&self) -> usize {
        self.bitrates.len() - 1
    }

    /// Segment size in kbit at the given representation (constant bitrate).
    pub fn segment_size_kbit(&self, index: usize) -> f64 {
        self.bitrates[index] * self.segment_duration
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbrConfig {
    /// Buffer level (s) below which the lowest representation is forced.
    pub panic_buffer_s: f64,
    /// Representation requested for the first segment.
    pub initial_quality_index: usize,
}

impl AbrConfig {
    pub const DEFAULT_PANIC_BUFFER_S: f64 = 8.0;

    pub fn validate(&self, ladder: &BitrateLadder) -> Result<()> {
        if !(self.panic_buffer_s.is_finite() && self.panic_buffer_s >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "panic buffer must be non-negative, got {}",
                self.panic_buffer_s
            )));
        }
        if self.initial_quality_index >= ladder.len() {
            return Err(Error::InvalidConfig(format!(
                "initial quality index {} is outside a ladder of {} rungs",
                self.initial_quality_index,
                ladder.len()
            )));
        }
        Ok(())
    }
}

impl Default for AbrConfig {
    fn default() -> Self {
        Self {
            panic_buffer_s: Self::DEFAULT_PANIC_BUFFER_S,
            initial_quality_index: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    Throughput,
    BufferPanic,
    Startup,
}

impl DecisionReason {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Throughput => "throughput",
            Self::BufferPanic => "buffer_panic",
            Self::Startup => "startup",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub quality_index: usize,
    pub reason: DecisionReason,
}

/// Highest rung whose bitrate does not exceed the estimate; the lowest rung
/// when even that is unaffordable.
pub fn select_bitrate(ladder: &BitrateLadder, estimate: Estimate) -> Decision {
    let quality_index = ladder
        .bitrates()
        .iter()
        .rposition(|&b| estimate.kbps() >= b)
        .unwrap_or(0);
    Decision {
        quality_index,
        reason: DecisionReason::Throughput,
    }
}

pub fn decide(
    ladder: &BitrateLadder,
    cfg: &AbrConfig,
    estimate: Estimate,
    buffer_level_s: f64,
    is_first_segment: bool,
) -> Decision {
    if is_first_segment {
        Decision {
            quality_index: cfg.initial_quality_index,
            reason: DecisionReason::Startup,
        }
    } else if buffer_level_s < cfg.panic_buffer_s {
        Decision {
            quality_index: 0,
            reason: DecisionReason::BufferPanic,
        }
    } else {
        select_bitrate(ladder, estimate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn select_examples() {
        let ladder = BitrateLadder::reference();
        assert_eq!(select_bitrate(&ladder, Estimate(1387.0)).quality_index, 2);
        assert_eq!(select_bitrate(&ladder, Estimate(2000.0)).quality_index, 3);
        let low = select_bitrate(&ladder, Estimate(100.0));
        assert_eq!(low.quality_index, 0);
        assert_eq!(low.reason, DecisionReason::Throughput);
    }

    #[test]
    fn decide_examples() {
        let ladder = BitrateLadder::reference();
        let cfg = AbrConfig::default();
        assert_eq!(
            decide(&ladder, &cfg, Estimate(2500.0), 7.5, false),
            Decision {
                quality_index: 0,
                reason: DecisionReason::BufferPanic
            }
        );
        assert_eq!(
            decide(&ladder, &cfg, Estimate(2500.0), 12.0, false),
            Decision {
                quality_index: 3,
                reason: DecisionReason::Throughput
            }
        );
        assert_eq!(
            decide(&ladder, &cfg, Estimate(2500.0), 0.0, true),
            Decision {
                quality_index: 0,
                reason: DecisionReason::Startup
            }
        );
        // the threshold itself is not a panic
        assert_eq!(
            decide(&ladder, &cfg, Estimate(2500.0), 8.0, false).reason,
            DecisionReason::Throughput
        );
    }

    #[test]
    fn ladder_validation() {
        assert!(BitrateLadder::new(vec![], 2.0).is_err());
        assert!(BitrateLadder::new(vec![500.0, 250.0], 2.0).is_err());
        assert!(BitrateLadder::new(vec![250.0, 250.0], 2.0).is_err());
        assert!(BitrateLadder::new(vec![250.0], 0.0).is_err());
        assert!(BitrateLadder::new(vec![0.0, 250.0], 2.0).is_err());
        let l = BitrateLadder::new(vec![250.0, 500.0], 2.0).unwrap();
        assert_eq!(l.segment_size_kbit(1), 1000.0);
        assert!(AbrConfig {
            panic_buffer_s: 8.0,
            initial_quality_index: 2
        }
        .validate(&l)
        .is_err());
    }

    fn ladder_strategy() -> impl Strategy<Value = BitrateLadder> {
        prop::collection::vec(1.0f64..5000.0, 1..8).prop_map(|mut v| {
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v.dedup();
            BitrateLadder::new(v, 2.0).unwrap()
        })
    }

    proptest! {
        #[test]
        fn select_matches_brute_force(ladder in ladder_strategy(), est in 0.1f64..10000.0) {
            let mut best = 0;
            for i in 0..ladder.len() {
                if est >= ladder.bitrate(i) {
                    best = i;
                }
            }
            prop_assert_eq!(select_bitrate(&ladder, Estimate(est)).quality_index, best);
        }

        #[test]
        fn select_is_monotone(ladder in ladder_strategy(), a in 0.1f64..10000.0, b in 0.1f64..10000.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let cfg = AbrConfig::default();
            let d_lo = decide(&ladder, &cfg, Estimate(lo), 20.0, false);
            let d_hi = decide(&ladder, &cfg, Estimate(hi), 20.0, false);
            prop_assert!(d_lo.quality_index <= d_hi.quality_index);
        }

        #[test]
        fn select_is_scale_invariant(ladder in ladder_strategy(), est in 0.1f64..10000.0, s in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, 8.0])) {
            // power-of-two scales keep every comparison exact
            let scaled = BitrateLadder::new(
                ladder.bitrates().iter().map(|b| b * s).collect(),
                ladder.segment_duration(),
            ).unwrap();
            prop_assert_eq!(
                select_bitrate(&ladder, Estimate(est)).quality_index,
                select_bitrate(&scaled, Estimate(est * s)).quality_index
            );
        }

        #[test]
        fn panic_dominates(ladder in ladder_strategy(), est in 0.1f64..1e6, buffer in 0.0f64..7.999) {
            let d = decide(&ladder, &AbrConfig::default(), Estimate(est), buffer, false);
            prop_assert_eq!(d.quality_index, 0);
            prop_assert_eq!(d.reason, DecisionReason::BufferPanic);
        }
    }
}
