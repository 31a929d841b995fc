//! Fluid-model single-client playback simulation.
//!
//! Segments are downloaded strictly one after another. A download consumes
//! the full shaped bandwidth, so its duration is found by inverting the
//! cumulative delivered-kbit curve of the profile. The playback buffer
//! drains at one media second per wall second while playing; playback
//! starts when the first segment arrives, stalls when the buffer runs dry,
//! and resumes once `rebuffer_target_s` of media is buffered.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::abr::{decide, AbrConfig, BitrateLadder, DecisionReason};
use crate::error::{Error, Result};
use crate::estimators::{Estimate, EstimatorConfig, ThroughputSample};
use crate::profiles::BandwidthProfile;

/// Spacing of the periodic buffer samples.
pub const BUFFER_TICK_S: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub ladder: BitrateLadder,
    pub abr: AbrConfig,
    pub estimator: EstimatorConfig,
    /// Buffer capacity in media seconds.
    pub max_buffer_s: f64,
    /// Media seconds required to resume after a stall.
    pub rebuffer_target_s: f64,
    pub total_segments: usize,
}

impl SimConfig {
    pub const DEFAULT_MAX_BUFFER_S: f64 = 30.0;
    pub const DEFAULT_TOTAL_SEGMENTS: usize = 150;

    /// Default player settings around the given ladder and estimator:
    /// 8 s panic threshold, 30 s buffer, resume after one segment.
    pub fn new(ladder: BitrateLadder, estimator: EstimatorConfig) -> Self {
        let rebuffer_target_s = ladder.segment_duration();
        Self {
            ladder,
            abr: AbrConfig::default(),
            estimator,
            max_buffer_s: Self::DEFAULT_MAX_BUFFER_S,
            rebuffer_target_s,
            total_segments: Self::DEFAULT_TOTAL_SEGMENTS,
        }
    }

    pub fn with_segments(mut self, total_segments: usize) -> Self {
        self.total_segments = total_segments;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.abr.validate(&self.ladder)?;
        self.estimator.build()?;
        let seg = self.ladder.segment_duration();
        if !(self.max_buffer_s.is_finite() && self.max_buffer_s > self.abr.panic_buffer_s) {
            return Err(Error::InvalidConfig(format!(
                "max buffer {} s must exceed the panic threshold {} s",
                self.max_buffer_s, self.abr.panic_buffer_s
            )));
        }
        if self.max_buffer_s < seg {
            return Err(Error::InvalidConfig(format!(
                "max buffer {} s cannot hold one {} s segment",
                self.max_buffer_s, seg
            )));
        }
        if !(self.rebuffer_target_s > 0.0 && self.rebuffer_target_s <= self.max_buffer_s) {
            return Err(Error::InvalidConfig(format!(
                "rebuffer target {} s must lie in (0, {}]",
                self.rebuffer_target_s, self.max_buffer_s
            )));
        }
        if self.total_segments == 0 {
            return Err(Error::InvalidConfig("video needs at least one segment".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    /// 1-based segment ordinal.
    pub index: u64,
    pub quality_index: usize,
    pub bitrate_kbps: f64,
    pub size_kbit: f64,
    pub t_request_s: f64,
    pub t_complete_s: f64,
    pub instant_throughput_kbps: f64,
    /// Estimator output after consuming this segment's sample.
    pub estimate_kbps: f64,
    /// Forgetting factor after the update (AFF only).
    pub lambda: Option<f64>,
    pub buffer_after_s: f64,
    pub decision_reason: DecisionReason,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stall {
    pub start_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    pub records: Vec<SegmentRecord>,
    pub stalls: Vec<Stall>,
    pub startup_delay_s: f64,
    pub wall_time_s: f64,
    /// Total time requests were deferred because the buffer was full.
    /// Playback continues meanwhile, so this overlaps playing time.
    pub idle_s: f64,
    /// `(t, buffer_level_s)` at every event and every 0.5 s tick.
    pub buffer_series: Vec<(f64, f64)>,
}

impl SessionTrace {
    pub fn total_stall_s(&self) -> f64 {
        self.stalls.iter().map(|s| s.duration_s).sum()
    }

    pub fn quality_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.records.iter().map(|r| r.quality_index)
    }

    /// Per-segment CSV dump.
    pub fn write_records_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record([
            "index",
            "quality_index",
            "bitrate_kbps",
            "size_kbit",
            "t_request_s",
            "t_complete_s",
            "instant_throughput_kbps",
            "estimate_kbps",
            "lambda",
            "buffer_after_s",
            "decision_reason",
        ])?;
        for r in &self.records {
            w.write_record([
                r.index.to_string(),
                r.quality_index.to_string(),
                format!("{:.4}", r.bitrate_kbps),
                format!("{:.4}", r.size_kbit),
                format!("{:.4}", r.t_request_s),
                format!("{:.4}", r.t_complete_s),
                format!("{:.4}", r.instant_throughput_kbps),
                format!("{:.4}", r.estimate_kbps),
                r.lambda.map(|l| format!("{l:.4}")).unwrap_or_default(),
                format!("{:.4}", r.buffer_after_s),
                r.decision_reason.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Exact time needed to deliver `size_kbit` starting at `t_start`.
pub fn integrate_download(profile: &BandwidthProfile, t_start: f64, size_kbit: f64) -> Result<f64> {
    if !(size_kbit.is_finite() && size_kbit > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "download size must be positive, got {size_kbit}"
        )));
    }
    if t_start.is_nan() || t_start < 0.0 {
        return Err(Error::OutOfRange {
            t: t_start,
            duration: profile.duration(),
        });
    }
    let mut remaining = size_kbit;
    let mut t = t_start;
    while t < profile.duration() {
        let bw = profile.breakpoints()[profile.interval_index(t)].1;
        let end = profile.next_breakpoint_after(t);
        let capacity = bw * (end - t);
        if bw > 0.0 && capacity >= remaining {
            return Ok(t + remaining / bw - t_start);
        }
        remaining -= capacity;
        t = end;
    }
    Err(Error::ProfileExhausted {
        t: profile.duration(),
        remaining_kbit: remaining,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum PlayState {
    Startup,
    Playing,
    Stalled { since: f64 },
    Finished,
}

/// Playback buffer of one client, advanced lazily in wall time.
#[derive(Debug, Clone)]
pub(crate) struct Playback {
    segment_s: f64,
    max_buffer_s: f64,
    rebuffer_target_s: f64,
    buffer_s: f64,
    now: f64,
    next_tick: f64,
    state: PlayState,
    startup_delay_s: f64,
    idle_s: f64,
    stalls: Vec<Stall>,
    series: Vec<(f64, f64)>,
}

impl Playback {
    pub(crate) fn new(cfg: &SimConfig, t0: f64) -> Self {
        let mut pb = Self {
            segment_s: cfg.ladder.segment_duration(),
            max_buffer_s: cfg.max_buffer_s,
            rebuffer_target_s: cfg.rebuffer_target_s,
            buffer_s: 0.0,
            now: t0,
            next_tick: (t0 / BUFFER_TICK_S).floor() * BUFFER_TICK_S + BUFFER_TICK_S,
            state: PlayState::Startup,
            startup_delay_s: 0.0,
            idle_s: 0.0,
            stalls: Vec::new(),
            series: Vec::new(),
        };
        pb.sample(t0);
        pb
    }

    pub(crate) fn buffer(&self) -> f64 {
        self.buffer_s
    }

    fn sample(&mut self, t: f64) {
        if self.series.last().is_some_and(|&(last, b)| last == t && b == self.buffer_s) {
            return;
        }
        self.series.push((t, self.buffer_s));
    }

    /// Emit ticks in `(now, t]` while the level changes at `slope` per second.
    fn ticks_until(&mut self, t: f64, slope: f64) {
        while self.next_tick <= t {
            let level = (self.buffer_s + slope * (self.next_tick - self.now)).max(0.0);
            self.series.push((self.next_tick, level));
            self.next_tick += BUFFER_TICK_S;
        }
    }

    /// Moves the clock to `t`, draining the buffer if playing and opening a
    /// stall if it runs dry strictly before `t`.
    pub(crate) fn advance_to(&mut self, t: f64) {
        if t <= self.now {
            return;
        }
        if self.state == PlayState::Playing {
            let t_empty = self.now + self.buffer_s;
            if t_empty < t {
                self.ticks_until(t_empty, -1.0);
                self.buffer_s = 0.0;
                self.now = t_empty;
                self.state = PlayState::Stalled { since: t_empty };
                self.sample(t_empty);
                self.ticks_until(t, 0.0);
            } else {
                self.ticks_until(t, -1.0);
                self.buffer_s -= t - self.now;
            }
        } else {
            self.ticks_until(t, 0.0);
        }
        self.now = t;
    }

    fn end_stall(&mut self, t: f64) {
        if let PlayState::Stalled { since } = self.state {
            self.stalls.push(Stall {
                start_s: since,
                duration_s: t - since,
            });
            self.state = PlayState::Playing;
        }
    }

    /// Seconds the next request must wait for one segment of room, ending a
    /// stall first if the buffer is too full to ever reach the resume target.
    pub(crate) fn room_wait(&mut self, t: f64) -> f64 {
        self.advance_to(t);
        let excess = self.buffer_s + self.segment_s - self.max_buffer_s;
        if excess <= 0.0 {
            return 0.0;
        }
        if matches!(self.state, PlayState::Stalled { .. }) {
            self.end_stall(t);
            self.sample(t);
        }
        excess
    }

    /// Idles until `t`, leaving exactly one segment of room.
    pub(crate) fn idle_until(&mut self, t: f64) {
        self.idle_s += t - self.now;
        self.advance_to(t);
        self.buffer_s = self.max_buffer_s - self.segment_s;
        self.sample(t);
    }

    pub(crate) fn segment_arrived(&mut self, t: f64, is_last: bool) {
        self.advance_to(t);
        self.buffer_s += self.segment_s;
        match self.state {
            PlayState::Startup => {
                self.state = PlayState::Playing;
                self.startup_delay_s = t;
            }
            PlayState::Stalled { .. } if self.buffer_s >= self.rebuffer_target_s || is_last => {
                self.end_stall(t);
            }
            _ => {}
        }
        self.sample(t);
    }

    /// Plays out the remaining buffer; returns the session end time.
    pub(crate) fn finish(&mut self) -> f64 {
        self.end_stall(self.now);
        let end = self.now + self.buffer_s;
        self.ticks_until(end, -1.0);
        self.buffer_s = 0.0;
        self.now = end;
        self.state = PlayState::Finished;
        self.sample(end);
        end
    }

    pub(crate) fn stalls(&self) -> &[Stall] {
        &self.stalls
    }

    pub(crate) fn into_parts(self) -> (f64, f64, Vec<Stall>, Vec<(f64, f64)>) {
        (self.startup_delay_s, self.idle_s, self.stalls, self.series)
    }
}

/// Simulates one playback session over `profile`.
pub fn run_session(profile: &BandwidthProfile, cfg: &SimConfig) -> Result<SessionTrace> {
    cfg.validate()?;
    let mut estimator = cfg.estimator.build()?;
    let mut playback = Playback::new(cfg, 0.0);
    let mut records = Vec::with_capacity(cfg.total_segments);
    let mut t = 0.0;

    for i in 0..cfg.total_segments {
        let wait = playback.room_wait(t);
        if wait > 0.0 {
            t += wait;
            playback.idle_until(t);
        }
        let estimate = estimator.estimate().unwrap_or(Estimate(0.0));
        let decision = decide(&cfg.ladder, &cfg.abr, estimate, playback.buffer(), i == 0);
        let size = cfg.ladder.segment_size_kbit(decision.quality_index);
        let t_request = t;
        let t_complete = t_request + integrate_download(profile, t_request, size)?;
        let is_last = i + 1 == cfg.total_segments;
        playback.segment_arrived(t_complete, is_last);

        let throughput = size / (t_complete - t_request);
        let index = i as u64 + 1;
        let estimate = estimator.update(ThroughputSample::new(throughput, index)?)?;
        records.push(SegmentRecord {
            index,
            quality_index: decision.quality_index,
            bitrate_kbps: cfg.ladder.bitrate(decision.quality_index),
            size_kbit: size,
            t_request_s: t_request,
            t_complete_s: t_complete,
            instant_throughput_kbps: throughput,
            estimate_kbps: estimate.kbps(),
            lambda: estimator.lambda(),
            buffer_after_s: playback.buffer(),
            decision_reason: decision.reason,
        });
        t = t_complete;
    }

    let wall_time_s = playback.finish();
    let (startup_delay_s, idle_s, stalls, buffer_series) = playback.into_parts();
    Ok(SessionTrace {
        records,
        stalls,
        startup_delay_s,
        wall_time_s,
        idle_s,
        buffer_series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::BandwidthProfile;

    fn cfg(estimator: EstimatorConfig, segments: usize) -> SimConfig {
        SimConfig::new(BitrateLadder::reference(), estimator).with_segments(segments)
    }

    #[test]
    fn integrate_examples() {
        let flat = BandwidthProfile::constant(1000.0, 100.0).unwrap();
        assert_eq!(integrate_download(&flat, 0.0, 2000.0).unwrap(), 2.0);

        let step = BandwidthProfile::new(vec![(0.0, 1000.0), (1.0, 500.0)], 100.0).unwrap();
        assert_eq!(integrate_download(&step, 0.0, 1500.0).unwrap(), 2.0);

        assert!(integrate_download(&flat, 3.0, 1.0).unwrap() > 0.0);
    }

    #[test]
    fn integrate_skips_outages_and_detects_exhaustion() {
        let gap = BandwidthProfile::new(vec![(0.0, 100.0), (1.0, 0.0), (3.0, 100.0)], 10.0).unwrap();
        assert!((integrate_download(&gap, 0.0, 200.0).unwrap() - 4.0).abs() < 1e-12);
        assert!(matches!(
            integrate_download(&gap, 0.0, 10_000.0),
            Err(Error::ProfileExhausted { .. })
        ));
        assert!(matches!(
            integrate_download(&gap, 10.0, 1.0),
            Err(Error::ProfileExhausted { .. })
        ));
        assert!(integrate_download(&gap, 0.0, 0.0).is_err());
    }

    #[test]
    fn constant_high_bandwidth_single_upswitch() {
        let profile = BandwidthProfile::constant(2500.0, 1000.0).unwrap();
        let trace = run_session(&profile, &cfg(EstimatorConfig::aff(), 150)).unwrap();
        let q: Vec<usize> = trace.quality_indices().collect();
        assert_eq!(q.len(), 150);
        assert!(trace.stalls.is_empty());
        let switches = q.windows(2).filter(|w| w[0] != w[1]).count();
        assert_eq!(switches, 1);
        // the panic rule holds the lowest rung while the buffer fills to 8 s
        let first_top = q.iter().position(|&x| x == 3).unwrap();
        assert!(q[..first_top].iter().all(|&x| x == 0));
        assert!(q[first_top..].iter().all(|&x| x == 3));
        assert!(trace.records[1..]
            .iter()
            .all(|r| (r.estimate_kbps - 2500.0).abs() < 1e-9 * 2500.0));
    }

    #[test]
    fn constant_low_bandwidth_stalls_every_segment() {
        let profile = BandwidthProfile::constant(200.0, 2000.0).unwrap();
        let trace = run_session(&profile, &cfg(EstimatorConfig::aff(), 20)).unwrap();
        assert!(trace.records.iter().all(|r| r.quality_index == 0));
        for r in &trace.records {
            assert!((r.t_complete_s - r.t_request_s - 2.5).abs() < 1e-9);
        }
        // buffer holds at most one segment: 0.5 s stall per subsequent segment
        assert_eq!(trace.stalls.len(), 19);
        for s in &trace.stalls {
            assert!((s.duration_s - 0.5).abs() < 1e-9, "{s:?}");
        }
    }

    #[test]
    fn single_segment_session() {
        let profile = BandwidthProfile::constant(1000.0, 100.0).unwrap();
        let trace = run_session(&profile, &cfg(EstimatorConfig::ewma(), 1)).unwrap();
        assert_eq!(trace.records.len(), 1);
        assert!(trace.stalls.is_empty());
        assert_eq!(trace.startup_delay_s, 0.5);
        assert_eq!(trace.wall_time_s, trace.startup_delay_s + 2.0);
    }

    #[test]
    fn buffer_full_defers_requests() {
        let profile = BandwidthProfile::constant(20_000.0, 1000.0).unwrap();
        let trace = run_session(&profile, &cfg(EstimatorConfig::avg_last3(), 100)).unwrap();
        assert!(trace.idle_s > 0.0);
        assert!(trace.records.iter().all(|r| r.buffer_after_s <= 30.0));
        assert!(trace.buffer_series.iter().all(|&(_, b)| (0.0..=30.0).contains(&b)));
        let expected = trace.startup_delay_s + 200.0 + trace.total_stall_s();
        assert!((trace.wall_time_s - expected).abs() < 1e-9);
    }

    #[test]
    fn exhausted_profile_is_an_error() {
        let profile = BandwidthProfile::constant(1000.0, 10.0).unwrap();
        assert!(matches!(
            run_session(&profile, &cfg(EstimatorConfig::aff(), 150)),
            Err(Error::ProfileExhausted { .. })
        ));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let profile = BandwidthProfile::constant(1000.0, 100.0).unwrap();
        let mut c = cfg(EstimatorConfig::aff(), 10);
        c.max_buffer_s = 8.0;
        assert!(matches!(run_session(&profile, &c), Err(Error::InvalidConfig(_))));
        let mut c = cfg(EstimatorConfig::aff(), 10);
        c.rebuffer_target_s = 31.0;
        assert!(run_session(&profile, &c).is_err());
        let c = cfg(EstimatorConfig::aff(), 0);
        assert!(run_session(&profile, &c).is_err());
        let c = cfg(EstimatorConfig::Ewma { alpha: 2.0 }, 10);
        assert!(run_session(&profile, &c).is_err());
    }

    #[test]
    fn large_resume_target_cannot_deadlock() {
        // a resume target above max - segment would never be reached
        let profile = BandwidthProfile::new(
            vec![(0.0, 5000.0), (40.0, 50.0), (60.0, 5000.0)],
            2000.0,
        )
        .unwrap();
        let mut c = cfg(EstimatorConfig::aff(), 80);
        c.rebuffer_target_s = 30.0;
        let trace = run_session(&profile, &c).unwrap();
        assert_eq!(trace.records.len(), 80);
        let expected = trace.startup_delay_s + 160.0 + trace.total_stall_s();
        assert!((trace.wall_time_s - expected).abs() < 1e-9);
    }

    #[test]
    fn records_csv_has_one_row_per_segment() {
        let profile = BandwidthProfile::constant(1500.0, 100.0).unwrap();
        let trace = run_session(&profile, &cfg(EstimatorConfig::aff(), 5)).unwrap();
        let mut buf = Vec::new();
        trace.write_records_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.lines().nth(1).unwrap().ends_with("startup"));
    }
}
