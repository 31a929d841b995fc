//! Multi-client runs over one shared bottleneck.
//!
//! At every instant the link capacity is split equally among the clients
//! that have a download in flight; idle clients consume nothing. Shares are
//! recomputed at every event (client start, request, completion, profile
//! breakpoint), so between events each active download progresses at a
//! constant rate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abr::{decide, DecisionReason};
use crate::error::{Error, Result};
use crate::estimators::{Estimate, Estimator, ThroughputSample};
use crate::profiles::BandwidthProfile;
use crate::sim::{Playback, SegmentRecord, SimConfig, Stall};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessConfig {
    pub n_clients: usize,
    /// Clients start at uniform random times in `[0, start_jitter_s]`.
    pub start_jitter_s: f64,
    /// Measurement window `(t_lo, t_hi)` in seconds.
    pub window: (f64, f64),
    pub profile: BandwidthProfile,
    /// Player settings shared by every client.
    pub session: SimConfig,
    pub rng_seed: u64,
}

impl FairnessConfig {
    pub const DEFAULT_CLIENTS: usize = 10;
    pub const DEFAULT_JITTER_S: f64 = 15.0;
    pub const DEFAULT_WINDOW: (f64, f64) = (50.0, 350.0);
    /// Long enough that no client finishes the video inside a 360 s run.
    pub const DEFAULT_SEGMENTS: usize = 300;

    /// Ten clients on the 22/12/6/22 Mbps profile, measured over 50-350 s.
    pub fn reference(session: SimConfig, rng_seed: u64) -> Self {
        Self {
            n_clients: Self::DEFAULT_CLIENTS,
            start_jitter_s: Self::DEFAULT_JITTER_S,
            window: Self::DEFAULT_WINDOW,
            profile: BandwidthProfile::fairness_table3(),
            session,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.session.validate()?;
        if self.n_clients < 2 {
            return Err(Error::InvalidConfig(format!(
                "fairness runs need at least 2 clients, got {}",
                self.n_clients
            )));
        }
        if !(self.start_jitter_s.is_finite() && self.start_jitter_s >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "start jitter must be non-negative, got {}",
                self.start_jitter_s
            )));
        }
        let (lo, hi) = self.window;
        if !(lo >= 0.0 && lo < hi) {
            return Err(Error::InvalidConfig(format!(
                "window [{lo}, {hi}] must satisfy 0 <= lo < hi"
            )));
        }
        if self.start_jitter_s >= self.profile.duration() {
            return Err(Error::InvalidConfig(format!(
                "start jitter {} s reaches past the profile end",
                self.start_jitter_s
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessResult {
    pub per_client_avg_kbps: Vec<f64>,
    pub jfi: f64,
    pub total_avg_kbps: f64,
}

/// One client's view of a fairness run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientTrace {
    pub start_s: f64,
    pub records: Vec<SegmentRecord>,
    pub stalls: Vec<Stall>,
}

/// Link state between two consecutive events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkInterval {
    pub start_s: f64,
    pub end_s: f64,
    pub capacity_kbps: f64,
    pub active_downloads: usize,
    /// Rate granted to each active download.
    pub share_kbps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessTrace {
    pub clients: Vec<ClientTrace>,
    pub link: Vec<LinkInterval>,
    /// Time the run stopped: all videos done or the profile ended.
    pub end_s: f64,
}

/// Jain's fairness index `(Σx)² / (n·Σx²)`.
pub fn jain_index(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::InvalidInput("no allocations".into()));
    }
    if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidInput(
            "allocations must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = x.iter().sum();
    if sum <= 0.0 {
        return Err(Error::InvalidInput("allocations are all zero".into()));
    }
    let sum_sq: f64 = x.iter().map(|v| v * v).sum();
    Ok(sum * sum / (x.len() as f64 * sum_sq))
}

pub fn run_fairness(cfg: &FairnessConfig) -> Result<FairnessResult> {
    run_fairness_traced(cfg).map(|(result, _)| result)
}

#[derive(Debug, Clone)]
struct Download {
    quality_index: usize,
    reason: DecisionReason,
    size_kbit: f64,
    remaining_kbit: f64,
    t_request: f64,
}

#[derive(Debug, Clone)]
enum Phase {
    Waiting { until: f64 },
    Downloading(Download),
    Done,
}

struct Client {
    start_s: f64,
    playback: Playback,
    estimator: Estimator,
    phase: Phase,
    next_segment: usize,
    records: Vec<SegmentRecord>,
}

impl Client {
    /// Called when the client is free to act at `t`: either defers for
    /// buffer room or issues the next request.
    fn request(&mut self, t: f64, cfg: &SimConfig) {
        let wait = self.playback.room_wait(t);
        if wait > 0.0 {
            self.phase = Phase::Waiting { until: t + wait };
            return;
        }
        let estimate = self.estimator.estimate().unwrap_or(Estimate(0.0));
        let decision = decide(
            &cfg.ladder,
            &cfg.abr,
            estimate,
            self.playback.buffer(),
            self.next_segment == 0,
        );
        let size = cfg.ladder.segment_size_kbit(decision.quality_index);
        self.phase = Phase::Downloading(Download {
            quality_index: decision.quality_index,
            reason: decision.reason,
            size_kbit: size,
            remaining_kbit: size,
            t_request: t,
        });
    }

    fn complete(&mut self, dl: Download, t: f64, cfg: &SimConfig) -> Result<()> {
        let is_last = self.next_segment + 1 == cfg.total_segments;
        self.playback.segment_arrived(t, is_last);
        let throughput = dl.size_kbit / (t - dl.t_request);
        let index = self.next_segment as u64 + 1;
        let estimate = self
            .estimator
            .update(ThroughputSample::new(throughput, index)?)?;
        self.records.push(SegmentRecord {
            index,
            quality_index: dl.quality_index,
            bitrate_kbps: cfg.ladder.bitrate(dl.quality_index),
            size_kbit: dl.size_kbit,
            t_request_s: dl.t_request,
            t_complete_s: t,
            instant_throughput_kbps: throughput,
            estimate_kbps: estimate.kbps(),
            lambda: self.estimator.lambda(),
            buffer_after_s: self.playback.buffer(),
            decision_reason: dl.reason,
        });
        self.next_segment += 1;
        if self.next_segment == cfg.total_segments {
            self.playback.finish();
            self.phase = Phase::Done;
        } else {
            self.request(t, cfg);
        }
        Ok(())
    }
}

/// Runs the shared-link simulation and returns the per-client traces and
/// link log alongside the summary.
///
/// The run ends when every client has fetched its whole video or the
/// profile runs out, whichever comes first; downloads still in flight at the
/// profile end are dropped.
pub fn run_fairness_traced(cfg: &FairnessConfig) -> Result<(FairnessResult, FairnessTrace)> {
    cfg.validate()?;
    let (lo, hi) = cfg.window;
    let duration = cfg.profile.duration();
    if hi > duration {
        return Err(Error::ProfileExhausted {
            t: duration,
            remaining_kbit: 0.0,
        });
    }
    let session = &cfg.session;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut clients = Vec::with_capacity(cfg.n_clients);
    for _ in 0..cfg.n_clients {
        let start_s = if cfg.start_jitter_s > 0.0 {
            rng.random_range(0.0..=cfg.start_jitter_s)
        } else {
            0.0
        };
        clients.push(Client {
            start_s,
            playback: Playback::new(session, start_s),
            estimator: session.estimator.build()?,
            phase: Phase::Waiting { until: start_s },
            next_segment: 0,
            records: Vec::new(),
        });
    }

    let mut link = Vec::new();
    let mut t = 0.0;
    loop {
        for c in clients.iter_mut() {
            if matches!(c.phase, Phase::Waiting { until } if until <= t) {
                if c.next_segment > 0 {
                    c.playback.idle_until(t);
                }
                c.request(t, session);
            }
        }

        let active = clients
            .iter()
            .filter(|c| matches!(c.phase, Phase::Downloading(_)))
            .count();
        if active == 0 && clients.iter().all(|c| matches!(c.phase, Phase::Done)) {
            break;
        }

        let capacity = cfg.profile.breakpoints()[cfg.profile.interval_index(t)].1;
        let share = if active > 0 { capacity / active as f64 } else { 0.0 };

        let mut next = cfg.profile.next_breakpoint_after(t);
        for c in &clients {
            match &c.phase {
                Phase::Waiting { until } => next = next.min(*until),
                Phase::Downloading(dl) if share > 0.0 => {
                    next = next.min(t + dl.remaining_kbit / share);
                }
                _ => {}
            }
        }
        let next = next.min(duration);
        link.push(LinkInterval {
            start_s: t,
            end_s: next,
            capacity_kbps: capacity,
            active_downloads: active,
            share_kbps: share,
        });

        let dt = next - t;
        for c in clients.iter_mut() {
            let finished = match &mut c.phase {
                Phase::Downloading(dl) => {
                    let delivered = share * dt;
                    // completion is decided by the same expression that chose `next`
                    if share > 0.0 && t + dl.remaining_kbit / share <= next {
                        true
                    } else {
                        dl.remaining_kbit -= delivered;
                        false
                    }
                }
                _ => false,
            };
            if finished {
                let Phase::Downloading(dl) = std::mem::replace(&mut c.phase, Phase::Done) else {
                    unreachable!()
                };
                c.complete(dl, next, session)?;
            }
        }

        t = next;
        if t >= duration {
            break;
        }
    }

    let window_len = hi - lo;
    let per_client_avg_kbps: Vec<f64> = clients
        .iter()
        .map(|c| {
            c.records
                .iter()
                .filter(|r| r.t_complete_s >= lo && r.t_complete_s <= hi)
                .map(|r| r.size_kbit)
                .sum::<f64>()
                / window_len
        })
        .collect();
    let jfi = jain_index(&per_client_avg_kbps)?;
    let total_avg_kbps = per_client_avg_kbps.iter().sum::<f64>() / per_client_avg_kbps.len() as f64;

    let traces = clients
        .into_iter()
        .map(|c| ClientTrace {
            start_s: c.start_s,
            stalls: c.playback.stalls().to_vec(),
            records: c.records,
        })
        .collect();
    Ok((
        FairnessResult {
            per_client_avg_kbps,
            jfi,
            total_avg_kbps,
        },
        FairnessTrace {
            clients: traces,
            link,
            end_s: t,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::abr::BitrateLadder;
    use crate::estimators::EstimatorConfig;
    use proptest::prelude::*;

    fn session(segments: usize) -> SimConfig {
        SimConfig::new(BitrateLadder::reference(), EstimatorConfig::aff()).with_segments(segments)
    }

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[1.0, 1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(jain_index(&[1.0, 3.0]).unwrap(), 0.8);
        assert_eq!(jain_index(&[0.0, 0.0, 5.0, 0.0]).unwrap(), 0.25);
        assert!((jain_index(&[1.0, 2.0, 3.0, 4.0]).unwrap() - 100.0 / 120.0).abs() < 1e-15);
        assert!(matches!(jain_index(&[0.0, 0.0]), Err(Error::InvalidInput(_))));
        assert!(jain_index(&[1.0, -1.0]).is_err());
        assert!(jain_index(&[]).is_err());
    }

    #[test]
    fn two_symmetric_clients() {
        let cfg = FairnessConfig {
            n_clients: 2,
            start_jitter_s: 0.0,
            window: (20.0, 180.0),
            profile: BandwidthProfile::constant(4000.0, 200.0).unwrap(),
            session: session(300),
            rng_seed: 1,
        };
        let (res, trace) = run_fairness_traced(&cfg).unwrap();
        let (a, b) = (res.per_client_avg_kbps[0], res.per_client_avg_kbps[1]);
        assert!((a - b).abs() <= 0.01 * a.max(b));
        assert!(res.jfi >= 0.9999);
        assert_eq!(trace.clients[0].records, trace.clients[1].records);
    }

    #[test]
    fn config_validation() {
        let mut cfg = FairnessConfig::reference(session(300), 0);
        cfg.n_clients = 1;
        assert!(matches!(run_fairness(&cfg), Err(Error::InvalidConfig(_))));
        let mut cfg = FairnessConfig::reference(session(300), 0);
        cfg.window = (100.0, 50.0);
        assert!(run_fairness(&cfg).is_err());
        let mut cfg = FairnessConfig::reference(session(300), 0);
        cfg.window = (50.0, 400.0);
        assert!(matches!(
            run_fairness(&cfg),
            Err(Error::ProfileExhausted { .. })
        ));
    }

    #[test]
    fn short_videos_end_the_run_early() {
        let cfg = FairnessConfig {
            n_clients: 3,
            start_jitter_s: 5.0,
            window: (0.0, 100.0),
            profile: BandwidthProfile::constant(6000.0, 400.0).unwrap(),
            session: session(20),
            rng_seed: 3,
        };
        let (res, trace) = run_fairness_traced(&cfg).unwrap();
        assert!(trace.end_s < 400.0);
        assert!(trace.clients.iter().all(|c| c.records.len() == 20));
        assert!(res.jfi > 0.9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn jain_bounds_and_invariances(x in prop::collection::vec(0.0f64..1e4, 1..20), s in 0.01f64..100.0) {
            prop_assume!(x.iter().sum::<f64>() > 0.0);
            let n = x.len() as f64;
            let j = jain_index(&x).unwrap();
            prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0 + 1e-12);
            let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
            prop_assert!((jain_index(&scaled).unwrap() - j).abs() < 1e-12);
            let mut rev = x.clone();
            rev.reverse();
            prop_assert!((jain_index(&rev).unwrap() - j).abs() < 1e-12);
        }

        #[test]
        fn link_capacity_is_conserved(seed in 0u64..1000, n in 2usize..6) {
            let cfg = FairnessConfig {
                n_clients: n,
                start_jitter_s: 15.0,
                window: (50.0, 350.0),
                profile: BandwidthProfile::fairness_table3(),
                session: session(300),
                rng_seed: seed,
            };
            let (res, trace) = run_fairness_traced(&cfg).unwrap();
            for iv in &trace.link {
                let used = iv.share_kbps * iv.active_downloads as f64;
                prop_assert!(used <= iv.capacity_kbps * (1.0 + 1e-12));
                if iv.active_downloads > 0 {
                    prop_assert!((used - iv.capacity_kbps).abs() <= 1e-9 * iv.capacity_kbps);
                }
            }
            let again = run_fairness(&cfg).unwrap();
            prop_assert_eq!(res, again);
        }
    }
}
