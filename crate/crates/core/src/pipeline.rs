//! End-to-end analysis: tuples and power readings in, correlation series and
//! events out.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::correlation::{
    detect_power_factor_decay, detect_regimes, sliding_correlation, smooth_means, CorrelationError,
    AlignedSeries, CorrelationPoint, DecayConfig, RegimeConfig, RegimeEvent, WindowConfig,
};
use crate::indicators::{bin_series, compute_tuples, BinAlignment, Binned, IndicatorError, IndicatorSeries, Scope};
use crate::num::Scalar;
use crate::power_ingest::PowerSample;
use crate::trace_ingest::{EnclosureProfile, PacketRecord};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("indicators: {0}")]
    Indicator(#[from] IndicatorError),
    #[error("correlation: {0}")]
    Correlation(#[from] CorrelationError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisConfig<T> {
    pub window: WindowConfig<T>,
    pub regimes: RegimeConfig<T>,
    /// `None` disables power-factor decay alerts.
    pub decay: Option<DecayConfig<T>>,
    pub alignment: BinAlignment,
}

impl<T: Scalar> Default for AnalysisConfig<T> {
    fn default() -> Self {
        Self {
            window: WindowConfig::default(),
            regimes: RegimeConfig::default(),
            decay: Some(DecayConfig::default()),
            alignment: BinAlignment::Trailing,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis<T> {
    pub binned: Binned<T>,
    /// Moving averages of both series over the correlation window.
    pub smoothed: AlignedSeries<T>,
    pub points: Vec<CorrelationPoint<T>>,
    /// Regime events and decay alerts ordered by start time.
    pub events: Vec<RegimeEvent<T>>,
}

/// System-scope tuples only; enough for correlation.
pub fn system_tuples(stream: &[PacketRecord]) -> IndicatorSeries {
    let profile = EnclosureProfile::from_networks(&["0.0.0.0/0"]).expect("valid network");
    compute_tuples(stream, &profile, &BTreeSet::from([Scope::System]))
}

pub fn analyze<T: Scalar>(
    tuples: &IndicatorSeries,
    power: &[PowerSample<T>],
    config: &AnalysisConfig<T>,
) -> Result<Analysis<T>, PipelineError> {
    let binned = bin_series(tuples, power, config.window.cadence_s, config.alignment)?;
    let smoothed = smooth_means(&binned.series, config.window.window_s)?;
    let points = sliding_correlation(&binned.series, &config.window)?;
    let mut events = detect_regimes(&points, &config.regimes)?;
    if let Some(decay) = &config.decay {
        events.extend(detect_power_factor_decay(power, decay));
        events.sort_by_key(|e| (e.start_ts, e.end_ts));
    }
    Ok(Analysis {
        binned,
        smoothed,
        points,
        events,
    })
}
