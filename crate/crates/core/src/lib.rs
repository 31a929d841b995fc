//! Trace-driven simulation of DASH adaptive bitrate streaming.
//!
//! The crate provides three online throughput estimators (an adaptive
//! forgetting factor filter, a fixed-weight EWMA and a sliding mean), the
//! throughput-plus-buffer-panic representation selection used by dash.js
//! style players, piecewise-constant bandwidth profiles, a fluid-model
//! single-client playback simulator, a shared-bottleneck multi-client
//! simulator for fairness runs, and QoE aggregation with JSON/CSV export.
//!
//! All throughputs and bitrates are kilobits per second; all times are
//! seconds.

pub mod abr;
pub mod error;
pub mod estimators;
pub mod fairness;
pub mod profiles;
pub mod report;
pub mod sim;

pub use abr::{decide, select_bitrate, AbrConfig, BitrateLadder, Decision, DecisionReason};
pub use error::{Error, Result};
pub use estimators::{
    AffState, Estimate, Estimator, EstimatorConfig, EwmaState, SlidingMeanState, ThroughputSample,
};
pub use fairness::{
    jain_index, run_fairness, run_fairness_traced, ClientTrace, FairnessConfig, FairnessResult,
    FairnessTrace, LinkInterval,
};
pub use profiles::{
    bandwidth_at, load_profile, profile_stats, synthesize_profile, BandwidthProfile, ProfileStats,
    SynthKind,
};
pub use report::{comparison_table, parse_report_csv, summarize, CompareRow, Export, Format, QoeReport};
pub use sim::{integrate_download, run_session, SegmentRecord, SessionTrace, SimConfig, Stall};
