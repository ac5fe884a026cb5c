//! Non-intrusive, black-box monitoring of a data-center enclosure from
//! passively captured packet traces and smart-PDU power readings.
//!
//! Pipeline: [`trace_ingest`] merges per-probe captures, [`indicators`]
//! turns the merged stream into per-second tuples, [`topology`] recovers the
//! communication graph and ranks relevant hosts, [`correlation`] tracks the
//! sliding-window Pearson coefficient between packet rate and apparent power
//! and flags regimes and deviations. [`store`] persists artifacts with
//! differentiated retention and [`synthgen`] produces synthetic traces with
//! planted correlation regimes and injected faults. [`pipeline`] chains
//! binning, windowed correlation and event detection.
//!
//! Numeric code is generic over [`Scalar`]; the aliases below fix the usual
//! precisions.

pub mod correlation;
pub mod indicators;
pub mod num;
pub mod pipeline;
pub mod power_ingest;
pub mod store;
pub mod synthgen;
pub mod topology;
pub mod trace_ingest;

pub use num::Scalar;

pub type PowerSample64 = power_ingest::PowerSample<f64>;
pub type PowerSample32 = power_ingest::PowerSample<f32>;
pub type AlignedSeries64 = correlation::AlignedSeries<f64>;
pub type AlignedSeries32 = correlation::AlignedSeries<f32>;
pub type CorrelationPoint64 = correlation::CorrelationPoint<f64>;
pub type CorrelationPoint32 = correlation::CorrelationPoint<f32>;
pub type RegimeEvent64 = correlation::RegimeEvent<f64>;
pub type RegimeEvent32 = correlation::RegimeEvent<f32>;
pub type PearsonAccumulator64 = correlation::PearsonAccumulator<f64>;
pub type PearsonAccumulator32 = correlation::PearsonAccumulator<f32>;
