//! Piecewise-constant bandwidth profiles.
//!
//! A profile is a list of `(start_time_s, bandwidth_kbps)` breakpoints plus
//! a total duration; each breakpoint holds on the right-open interval up to
//! the next one (or the end of the profile).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthProfile {
    breakpoints: Vec<(f64, f64)>,
    duration_s: f64,
}

impl BandwidthProfile {
    pub fn new(breakpoints: Vec<(f64, f64)>, duration_s: f64) -> Result<Self> {
        let Some(&(first, _)) = breakpoints.first() else {
            return Err(Error::Validation("profile has no breakpoints".into()));
        };
        if first != 0.0 {
            return Err(Error::Validation(format!(
                "first breakpoint must start at 0, got {first}"
            )));
        }
        for (i, pair) in breakpoints.windows(2).enumerate() {
            if pair[1].0.partial_cmp(&pair[0].0) != Some(std::cmp::Ordering::Greater) {
                return Err(Error::Validation(format!(
                    "breakpoint {} starts at {} which does not follow {}",
                    i + 2,
                    pair[1].0,
                    pair[0].0
                )));
            }
        }
        if let Some((t, b)) = breakpoints
            .iter()
            .find(|(t, b)| !(t.is_finite() && b.is_finite() && *b >= 0.0))
        {
            return Err(Error::Validation(format!(
                "bandwidth at {t} s must be finite and non-negative, got {b}"
            )));
        }
        let last = breakpoints[breakpoints.len() - 1].0;
        if !(duration_s.is_finite() && duration_s > last) {
            return Err(Error::Validation(format!(
                "duration {duration_s} s must exceed the last breakpoint at {last} s"
            )));
        }
        Ok(Self {
            breakpoints,
            duration_s,
        })
    }

    /// Constant bandwidth for the whole duration.
    pub fn constant(bandwidth_kbps: f64, duration_s: f64) -> Result<Self> {
        Self::new(vec![(0.0, bandwidth_kbps)], duration_s)
    }

    /// 22 / 12 / 6 / 22 Mbps over 0-100-200-300-360 s, used for fairness runs.
    pub fn fairness_table3() -> Self {
        Self {
            breakpoints: vec![
                (0.0, 22000.0),
                (100.0, 12000.0),
                (200.0, 6000.0),
                (300.0, 22000.0),
            ],
            duration_s: 360.0,
        }
    }

    /// Looks up a built-in profile by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            FAIRNESS_TABLE3 => Some(Self::fairness_table3()),
            _ => None,
        }
    }

    pub fn breakpoints(&self) -> &[(f64, f64)] {
        &self.breakpoints
    }

    pub fn duration(&self) -> f64 {
        self.duration_s
    }

    /// `(start, end, bandwidth_kbps)` for every interval, in order.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.breakpoints.iter().enumerate().map(move |(i, &(t, b))| {
            let end = self
                .breakpoints
                .get(i + 1)
                .map_or(self.duration_s, |&(next, _)| next);
            (t, end, b)
        })
    }

    /// Index of the interval containing `t`. `t` must lie in `[0, duration)`.
    pub(crate) fn interval_index(&self, t: f64) -> usize {
        self.breakpoints.partition_point(|&(start, _)| start <= t) - 1
    }

    /// Start of the interval following the one containing `t`, or the
    /// profile end.
    pub(crate) fn next_breakpoint_after(&self, t: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&(start, _)| start <= t);
        self.breakpoints.get(i).map_or(self.duration_s, |&(s, _)| s)
    }

    /// Serializes to the `time_s,bandwidth_kbps` CSV format, with header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,bandwidth_kbps\n");
        for (t, b) in &self.breakpoints {
            out.push_str(&format!("{t},{b}\n"));
        }
        out
    }
}

pub const FAIRNESS_TABLE3: &str = "fairness-table3";

/// Parses `time_s,bandwidth_kbps` rows. A leading header row (first field
/// not numeric) is skipped, as are blank lines and `#` comments.
pub fn load_profile(csv_text: &str, duration_s: f64) -> Result<BandwidthProfile> {
    if csv_text.trim().is_empty() {
        return Err(Error::Validation("profile text is empty".into()));
    }
    // The reader skips blank lines without counting them, so feed it only
    // data lines and map its line numbers back to the source.
    let mut physical = Vec::new();
    let mut text = String::new();
    for (i, l) in csv_text.lines().enumerate() {
        if !(l.trim().is_empty() || l.trim_start().starts_with('#')) {
            physical.push(i as u64 + 1);
            text.push_str(l);
            text.push('\n');
        }
    }
    let source_line = |line: u64| {
        (line as usize).checked_sub(1).and_then(|i| physical.get(i)).copied().unwrap_or(line)
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());

    let mut breakpoints = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| source_line(p.line())),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| source_line(p.line()));
        let first = record.get(0).unwrap_or("");
        if row == 0 && !first.is_empty() && first.parse::<f64>().is_err() {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::Parse {
                line,
                message: format!("expected 2 fields (time_s,bandwidth_kbps), found {}", record.len()),
            });
        }
        let field = |idx: usize, name: &str| -> Result<f64> {
            let raw = &record[idx];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    message: format!("{name} '{raw}' is not a number"),
                })
        };
        breakpoints.push((field(0, "time")?, field(1, "bandwidth")?));
    }
    if breakpoints.is_empty() {
        return Err(Error::Validation("profile has no data rows".into()));
    }
    BandwidthProfile::new(breakpoints, duration_s)
}

/// Bandwidth (kbps) in effect at time `t`.
pub fn bandwidth_at(profile: &BandwidthProfile, t: f64) -> Result<f64> {
    if !(t >= 0.0 && t < profile.duration_s) {
        return Err(Error::OutOfRange {
            t,
            duration: profile.duration_s,
        });
    }
    Ok(profile.breakpoints[profile.interval_index(t)].1)
}

/// Time-weighted profile statistics in Mbps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileStats {
    pub max_mbps: f64,
    pub min_mbps: f64,
    pub avg_mbps: f64,
    pub stddev_mbps: f64,
}

pub fn profile_stats(profile: &BandwidthProfile) -> ProfileStats {
    let total = profile.duration_s;
    let mut max = f64::NEG_INFINITY;
    let mut min = f64::INFINITY;
    let mut weighted = 0.0;
    for (start, end, b) in profile.intervals() {
        max = max.max(b);
        min = min.min(b);
        weighted += (end - start) * b;
    }
    let mean = weighted / total;
    let var = profile
        .intervals()
        .map(|(start, end, b)| (end - start) * (b - mean).powi(2))
        .sum::<f64>()
        / total;
    ProfileStats {
        max_mbps: max / 1000.0,
        min_mbps: min / 1000.0,
        avg_mbps: mean.clamp(min, max) / 1000.0,
        stddev_mbps: var.sqrt() / 1000.0,
    }
}

/// Synthetic stand-ins for the four measured bandwidth profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// High bandwidth, low fluctuation.
    Test1,
    /// Low bandwidth, high fluctuation.
    Test2,
    /// High bandwidth, high fluctuation.
    Test3,
    /// High/low plateaus with sudden drops.
    Test4,
}

impl SynthKind {
    pub const ALL: [SynthKind; 4] = [Self::Test1, Self::Test2, Self::Test3, Self::Test4];

    /// Target statistics in Mbps.
    pub fn target(self) -> ProfileStats {
        let (max_mbps, min_mbps, avg_mbps, stddev_mbps) = match self {
            Self::Test1 => (2.40, 0.80, 2.17, 0.2765),
            Self::Test2 => (4.57, 0.01, 1.23, 0.6374),
            Self::Test3 => (5.73, 0.01, 2.31, 1.3317),
            Self::Test4 => (2.39, 0.60, 1.50, 0.8063),
        };
        ProfileStats {
            max_mbps,
            min_mbps,
            avg_mbps,
            stddev_mbps,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Test1 => "test1",
            Self::Test2 => "test2",
            Self::Test3 => "test3",
            Self::Test4 => "test4",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "unknown profile kind '{s}' (expected test1..test4)"
                ))
            })
    }
}

const MIN_SYNTH_DURATION_S: f64 = 60.0;
const CALIBRATION_ROUNDS: usize = 60;
const MAX_ATTEMPTS: u64 = 32;
/// Accept a draw once avg and stddev are this close to target (relative).
const ACCEPT_TOLERANCE: f64 = 0.05;

/// Deterministic synthetic profile for `kind`.
///
/// Test 1-3 are piecewise-constant with 1-5 s intervals. Interval values are
/// drawn from a Beta distribution on `[min, max]` whose moments match the
/// target, then iteratively rescaled (and clipped) so the time-weighted mean
/// and standard deviation land on the target. Test 4 alternates a high and a
/// low plateau every quarter of the duration.
pub fn synthesize_profile(kind: SynthKind, seed: u64, duration_s: f64) -> Result<BandwidthProfile> {
    if !(duration_s.is_finite() && duration_s >= MIN_SYNTH_DURATION_S) {
        return Err(Error::InvalidParameter(format!(
            "synthetic profiles need at least {MIN_SYNTH_DURATION_S} s, got {duration_s}"
        )));
    }
    if kind == SynthKind::Test4 {
        return two_plateau(kind.target(), duration_s);
    }

    let target = kind.target();
    let mut best: Option<(f64, BandwidthProfile)> = None;
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let profile = fluctuating(&target, duration_s, &mut rng)?;
        let stats = profile_stats(&profile);
        let err = ((stats.avg_mbps - target.avg_mbps) / target.avg_mbps)
            .abs()
            .max(((stats.stddev_mbps - target.stddev_mbps) / target.stddev_mbps).abs());
        if err <= ACCEPT_TOLERANCE {
            return Ok(profile);
        }
        if best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, profile));
        }
    }
    Ok(best.expect("at least one attempt").1)
}

fn fluctuating(
    target: &ProfileStats,
    duration_s: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BandwidthProfile> {
    let lo = target.min_mbps * 1000.0;
    let hi = target.max_mbps * 1000.0;
    let mean = target.avg_mbps * 1000.0;
    let sd = target.stddev_mbps * 1000.0;

    let span = hi - lo;
    let p = (mean - lo) / span;
    let v = (sd / span).powi(2);
    let k = p * (1.0 - p) / v - 1.0;
    let beta = Beta::new(p * k, (1.0 - p) * k)
        .map_err(|e| Error::InvalidParameter(format!("unreachable target moments: {e}")))?;

    let mut starts = Vec::new();
    let mut lengths = Vec::new();
    let mut values = Vec::new();
    let mut t = 0.0;
    while t < duration_s {
        let len = f64::from(rng.random_range(1u32..=5)).min(duration_s - t);
        starts.push(t);
        lengths.push(len);
        values.push(lo + span * beta.sample(rng));
        t += len;
    }

    let total: f64 = lengths.iter().sum();
    for _ in 0..CALIBRATION_ROUNDS {
        let m = weighted_mean(&lengths, &values, total);
        let s = weighted_sd(&lengths, &values, total, m);
        if s <= 0.0 {
            break;
        }
        let gain = sd / s;
        for x in values.iter_mut() {
            *x = (mean + (*x - m) * gain).clamp(lo, hi);
        }
    }
    for x in values.iter_mut() {
        *x = x.round().clamp(lo.ceil(), hi.floor());
    }

    BandwidthProfile::new(starts.into_iter().zip(values).collect(), duration_s)
}

fn weighted_mean(lengths: &[f64], values: &[f64], total: f64) -> f64 {
    lengths.iter().zip(values).map(|(l, x)| l * x).sum::<f64>() / total
}

fn weighted_sd(lengths: &[f64], values: &[f64], total: f64, mean: f64) -> f64 {
    (lengths
        .iter()
        .zip(values)
        .map(|(l, x)| l * (x - mean).powi(2))
        .sum::<f64>()
        / total)
        .sqrt()
}

fn two_plateau(target: ProfileStats, duration_s: f64) -> Result<BandwidthProfile> {
    let high = target.max_mbps * 1000.0;
    let low = target.min_mbps * 1000.0;
    let quarter = duration_s / 4.0;
    BandwidthProfile::new(
        vec![
            (0.0, high),
            (quarter, low),
            (2.0 * quarter, high),
            (3.0 * quarter, low),
        ],
        duration_s,
    )
}
