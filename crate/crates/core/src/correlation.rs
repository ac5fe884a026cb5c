//! Sliding-window Pearson correlation between traffic and apparent power, and
//! a rule-based regime detector over the resulting correlation series.
//!
//! The coefficient is the population one, `cov(X, Y) / (σ_X σ_Y)`. Sums are
//! accumulated as mean-centred co-moments (Welford updates) because power
//! readings vary by a few watts around a ~1.6 kW level, where raw
//! sum-of-squares formulas lose most of their significant digits.
//!
//! Strength classes follow the usual thresholds: `|ρ| > 0.7` strong,
//! `0.3 < |ρ| ≤ 0.7` moderate, `0 < |ρ| ≤ 0.3` weak, `ρ = 0` independent.
//! Boundary values fall into the weaker class.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::num::{Scalar, MICROS_PER_SEC};
use crate::power_ingest::{power_factor_trend, PowerSample};

pub const CORRELATION_CSV_HEADER: [&str; 5] = ["window_end_ts", "rho", "n", "class", "direction"];
pub const EVENTS_CSV_HEADER: [&str; 5] = ["kind", "start_ts", "end_ts", "mean_rho", "evidence"];

/// Window length used when none is configured: ten minutes.
pub const DEFAULT_WINDOW_S: u32 = 600;
/// Power sampling cadence used when none is configured.
pub const DEFAULT_CADENCE_S: u32 = 10;
/// Fraction of the nominal sample count a window needs to yield a coefficient.
pub const MIN_FILL_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum CorrelationError {
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("empty series")]
    EmptySeries,
    #[error("timestamps must be strictly increasing (index {0})")]
    NonIncreasing(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("csv row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One traffic/power pair on the power clock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPoint<T> {
    pub ts_micros: i64,
    pub traffic_pps: T,
    pub apparent_va: T,
}

/// Paired traffic and apparent-power series with strictly increasing
/// timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSeries<T> {
    pub points: Vec<AlignedPoint<T>>,
    pub cadence_s: u32,
}

impl<T: Scalar> AlignedSeries<T> {
    pub fn new(points: Vec<AlignedPoint<T>>, cadence_s: u32) -> Result<Self, CorrelationError> {
        if let Some(i) = points.windows(2).position(|w| w[1].ts_micros <= w[0].ts_micros) {
            return Err(CorrelationError::NonIncreasing(i + 1));
        }
        Ok(Self { points, cadence_s })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn traffic(&self) -> Vec<T> {
        self.points.iter().map(|p| p.traffic_pps).collect()
    }

    pub fn power(&self) -> Vec<T> {
        self.points.iter().map(|p| p.apparent_va).collect()
    }
}

/// Running co-moments of two variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PearsonAccumulator<T> {
    n: usize,
    mean_x: T,
    mean_y: T,
    m2_x: T,
    m2_y: T,
    c_xy: T,
}

impl<T: Scalar> Default for PearsonAccumulator<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> PearsonAccumulator<T> {
    pub fn new() -> Self {
        Self {
            n: 0,
            mean_x: T::zero(),
            mean_y: T::zero(),
            m2_x: T::zero(),
            m2_y: T::zero(),
            c_xy: T::zero(),
        }
    }

    pub fn push(&mut self, x: T, y: T) {
        self.n += 1;
        let n = T::from_count(self.n);
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x = self.mean_x + dx / n;
        self.mean_y = self.mean_y + dy / n;
        let dy_after = y - self.mean_y;
        self.m2_x = self.m2_x + dx * (x - self.mean_x);
        self.m2_y = self.m2_y + dy * dy_after;
        self.c_xy = self.c_xy + dx * dy_after;
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean_x(&self) -> T {
        self.mean_x
    }

    pub fn mean_y(&self) -> T {
        self.mean_y
    }

    /// Population variance of x, clamped at zero.
    pub fn variance_x(&self) -> T {
        self.population(self.m2_x).max(T::zero())
    }

    pub fn variance_y(&self) -> T {
        self.population(self.m2_y).max(T::zero())
    }

    pub fn covariance(&self) -> T {
        self.population(self.c_xy)
    }

    fn population(&self, m: T) -> T {
        if self.n == 0 {
            T::zero()
        } else {
            m / T::from_count(self.n)
        }
    }

    /// Pearson coefficient, `None` when either variable has zero spread or
    /// fewer than two samples were pushed.
    pub fn rho(&self) -> Option<T> {
        if self.n < 2 {
            return None;
        }
        let sxx = self.m2_x.max(T::zero());
        let syy = self.m2_y.max(T::zero());
        if sxx == T::zero() || syy == T::zero() {
            return None;
        }
        let r = self.c_xy / (sxx * syy).sqrt();
        Some(r.max(-T::one()).min(T::one()))
    }
}

impl<T: Scalar> Extend<(T, T)> for PearsonAccumulator<T> {
    fn extend<I: IntoIterator<Item = (T, T)>>(&mut self, iter: I) {
        for (x, y) in iter {
            self.push(x, y);
        }
    }
}

/// Population Pearson coefficient of two equal-length sequences.
pub fn pearson<T: Scalar>(xs: &[T], ys: &[T]) -> Result<Option<T>, CorrelationError> {
    if xs.len() != ys.len() {
        return Err(CorrelationError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(CorrelationError::TooFewSamples(xs.len()));
    }
    let mut acc = PearsonAccumulator::new();
    acc.extend(xs.iter().copied().zip(ys.iter().copied()));
    Ok(acc.rho())
}

/// Correlation strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CorrelationClass {
    Strong,
    Moderate,
    Weak,
    Independent,
    Undefined,
}

impl CorrelationClass {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationClass::Strong => "strong",
            CorrelationClass::Moderate => "moderate",
            CorrelationClass::Weak => "weak",
            CorrelationClass::Independent => "independent",
            CorrelationClass::Undefined => "undefined",
        }
    }
}

impl fmt::Display for CorrelationClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CorrelationClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "strong" => CorrelationClass::Strong,
            "moderate" => CorrelationClass::Moderate,
            "weak" => CorrelationClass::Weak,
            "independent" => CorrelationClass::Independent,
            "undefined" => CorrelationClass::Undefined,
            _ => return Err(format!("unknown class {s:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    Direct,
    Inverse,
    None,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Direct => "direct",
            Direction::Inverse => "inverse",
            Direction::None => "none",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "direct" => Direction::Direct,
            "inverse" => Direction::Inverse,
            "none" => Direction::None,
            _ => return Err(format!("unknown direction {s:?}")),
        })
    }
}

/// Class boundaries on `|ρ|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds<T> {
    pub strong: T,
    pub moderate: T,
}

impl<T: Scalar> Default for Thresholds<T> {
    fn default() -> Self {
        Self {
            strong: T::lit(0.7),
            moderate: T::lit(0.3),
        }
    }
}

impl<T: Scalar> Thresholds<T> {
    pub fn new(strong: T, moderate: T) -> Result<Self, CorrelationError> {
        if !(T::zero() < moderate && moderate < strong && strong < T::one()) {
            return Err(CorrelationError::InvalidArgument(format!(
                "need 0 < moderate < strong < 1, got moderate={moderate} strong={strong}"
            )));
        }
        Ok(Self { strong, moderate })
    }

    pub fn classify(&self, rho: Option<T>) -> (CorrelationClass, Direction) {
        let Some(r) = rho else {
            return (CorrelationClass::Undefined, Direction::None);
        };
        let a = r.abs();
        let class = if a > self.strong {
            CorrelationClass::Strong
        } else if a > self.moderate {
            CorrelationClass::Moderate
        } else if a > T::zero() {
            CorrelationClass::Weak
        } else {
            CorrelationClass::Independent
        };
        let direction = if r > T::zero() {
            Direction::Direct
        } else if r < T::zero() {
            Direction::Inverse
        } else {
            Direction::None
        };
        (class, direction)
    }
}

/// One windowed coefficient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationPoint<T> {
    pub window_end_ts: i64,
    pub rho: Option<T>,
    pub n_samples: usize,
    pub class: CorrelationClass,
    pub direction: Direction,
    /// The window held fewer samples than the fill threshold; `rho` is `None`.
    pub low_n: bool,
    /// The window lies entirely inside the series span.
    pub full_window: bool,
}

/// Sliding-window settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowConfig<T> {
    pub window_s: u32,
    pub cadence_s: u32,
    pub thresholds: Thresholds<T>,
}

impl<T: Scalar> Default for WindowConfig<T> {
    fn default() -> Self {
        Self {
            window_s: DEFAULT_WINDOW_S,
            cadence_s: DEFAULT_CADENCE_S,
            thresholds: Thresholds::default(),
        }
    }
}

impl<T: Scalar> WindowConfig<T> {
    /// Samples a window needs before a coefficient is reported:
    /// `ceil(0.8 · window / cadence)`, never below 2.
    pub fn min_samples(&self) -> usize {
        let nominal = self.window_s as f64 / self.cadence_s as f64;
        ((MIN_FILL_FRACTION * nominal - 1e-9).ceil() as usize).max(2)
    }
}

/// Pearson coefficient over the trailing window `(t - window, t]` of every
/// input sample.
///
/// Windows with fewer than [`WindowConfig::min_samples`] samples produce a
/// point with `rho = None` and `low_n` set. A window is *full* once its left
/// edge reaches the first sample, so with a 600 s window at 10 s cadence the
/// first full window ends 600 s after the series start and holds 60 samples.
pub fn sliding_correlation<T: Scalar>(
    series: &AlignedSeries<T>,
    config: &WindowConfig<T>,
) -> Result<Vec<CorrelationPoint<T>>, CorrelationError> {
    if series.is_empty() {
        return Err(CorrelationError::EmptySeries);
    }
    if config.cadence_s == 0 || config.window_s < 2 * config.cadence_s {
        return Err(CorrelationError::InvalidArgument(format!(
            "window {} s must span at least two cadences of {} s",
            config.window_s, config.cadence_s
        )));
    }
    let window = config.window_s as i64 * MICROS_PER_SEC;
    let min_n = config.min_samples();
    let start_ts = series.points[0].ts_micros;
    let pts = &series.points;

    let mut out = Vec::with_capacity(pts.len());
    let mut lo = 0;
    for (hi, p) in pts.iter().enumerate() {
        let left = p.ts_micros - window;
        while pts[lo].ts_micros <= left {
            lo += 1;
        }
        let n = hi + 1 - lo;
        let low_n = n < min_n;
        let rho = if low_n {
            None
        } else {
            let mut acc = PearsonAccumulator::new();
            acc.extend(pts[lo..=hi].iter().map(|q| (q.traffic_pps, q.apparent_va)));
            acc.rho()
        };
        let (class, direction) = config.thresholds.classify(rho);
        out.push(CorrelationPoint {
            window_end_ts: p.ts_micros,
            rho,
            n_samples: n,
            class,
            direction,
            low_n,
            full_window: left >= start_ts,
        });
    }
    Ok(out)
}

/// Trailing moving average of both components over `(t - window, t]`, on the
/// input timestamps. Early points average whatever the window holds.
pub fn smooth_means<T: Scalar>(
    series: &AlignedSeries<T>,
    window_s: u32,
) -> Result<AlignedSeries<T>, CorrelationError> {
    if window_s == 0 {
        return Err(CorrelationError::InvalidArgument("window must be positive".into()));
    }
    let window = window_s as i64 * MICROS_PER_SEC;
    let pts = &series.points;
    let mut out = Vec::with_capacity(pts.len());
    let mut lo = 0;
    for (hi, p) in pts.iter().enumerate() {
        while pts[lo].ts_micros <= p.ts_micros - window {
            lo += 1;
        }
        let slice = &pts[lo..=hi];
        let n = T::from_count(slice.len());
        out.push(AlignedPoint {
            ts_micros: p.ts_micros,
            traffic_pps: slice.iter().map(|q| q.traffic_pps).sum::<T>() / n,
            apparent_va: slice.iter().map(|q| q.apparent_va).sum::<T>() / n,
        });
    }
    Ok(AlignedSeries {
        points: out,
        cadence_s: series.cadence_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegimeKind {
    CorrelatedPeriod,
    AnticorrelatedPeriod,
    DecorrelationAlert,
    PowerFactorDecayAlert,
}

impl RegimeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RegimeKind::CorrelatedPeriod => "CorrelatedPeriod",
            RegimeKind::AnticorrelatedPeriod => "AnticorrelatedPeriod",
            RegimeKind::DecorrelationAlert => "DecorrelationAlert",
            RegimeKind::PowerFactorDecayAlert => "PowerFactorDecayAlert",
        }
    }

    pub fn is_period(self) -> bool {
        matches!(self, RegimeKind::CorrelatedPeriod | RegimeKind::AnticorrelatedPeriod)
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegimeKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "CorrelatedPeriod" => RegimeKind::CorrelatedPeriod,
            "AnticorrelatedPeriod" => RegimeKind::AnticorrelatedPeriod,
            "DecorrelationAlert" => RegimeKind::DecorrelationAlert,
            "PowerFactorDecayAlert" => RegimeKind::PowerFactorDecayAlert,
            _ => return Err(format!("unknown event kind {s:?}")),
        })
    }
}

/// A detected regime or alert.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeEvent<T> {
    pub kind: RegimeKind,
    pub start_ts: i64,
    pub end_ts: i64,
    /// Mean coefficient over the run. For [`RegimeKind::PowerFactorDecayAlert`]
    /// this holds the mean fitted power-factor slope, per hour.
    pub mean_rho: T,
    /// Number of consecutive qualifying points.
    pub evidence: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeConfig<T> {
    /// Shortest run of strong points reported as a period.
    pub min_run: usize,
    /// `|ρ|` below this counts as decorrelated.
    pub decorrelation_band: T,
    /// Shortest decorrelated run, after a strong period, raised as an alert.
    pub min_alert_run: usize,
    /// `|ρ|` above this counts as strong.
    pub strong: T,
}

impl<T: Scalar> Default for RegimeConfig<T> {
    fn default() -> Self {
        Self {
            min_run: 6,
            decorrelation_band: T::lit(0.3),
            min_alert_run: 12,
            strong: T::lit(0.7),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Label {
    Direct,
    Inverse,
    Flat,
    Other,
}

struct Run<T> {
    label: Label,
    start: i64,
    end: i64,
    sum: T,
    len: usize,
}

/// Scans the correlation series once.
///
/// Maximal runs of at least `min_run` points with `ρ > strong` (resp.
/// `ρ < -strong`) become correlated (anticorrelated) periods. Once any period
/// has been seen, a maximal run of at least `min_alert_run` points with
/// `|ρ| < decorrelation_band` raises a decorrelation alert; the detector then
/// waits for the next strong period before alerting again. Undefined points
/// break every run.
pub fn detect_regimes<T: Scalar>(
    points: &[CorrelationPoint<T>],
    config: &RegimeConfig<T>,
) -> Result<Vec<RegimeEvent<T>>, CorrelationError> {
    if config.min_run == 0 || config.min_alert_run == 0 {
        return Err(CorrelationError::InvalidArgument("run lengths must be at least 1".into()));
    }
    let label = |rho: Option<T>| match rho {
        Some(r) if r > config.strong => Label::Direct,
        Some(r) if r < -config.strong => Label::Inverse,
        Some(r) if r.abs() < config.decorrelation_band => Label::Flat,
        _ => Label::Other,
    };

    let mut runs: Vec<Run<T>> = Vec::new();
    for p in points {
        let l = label(p.rho);
        let r = p.rho.unwrap_or_else(T::zero);
        match runs.last_mut() {
            Some(run) if run.label == l && l != Label::Other => {
                run.end = p.window_end_ts;
                run.sum = run.sum + r;
                run.len += 1;
            }
            _ => runs.push(Run {
                label: l,
                start: p.window_end_ts,
                end: p.window_end_ts,
                sum: r,
                len: 1,
            }),
        }
    }

    let mut events = Vec::new();
    let mut armed = false;
    for run in runs {
        let kind = match run.label {
            Label::Direct if run.len >= config.min_run => RegimeKind::CorrelatedPeriod,
            Label::Inverse if run.len >= config.min_run => RegimeKind::AnticorrelatedPeriod,
            Label::Flat if armed && run.len >= config.min_alert_run => RegimeKind::DecorrelationAlert,
            _ => continue,
        };
        armed = kind.is_period();
        events.push(RegimeEvent {
            kind,
            start_ts: run.start,
            end_ts: run.end,
            mean_rho: run.sum / T::from_count(run.len),
            evidence: run.len,
        });
    }
    Ok(events)
}

/// Settings of the power-factor decay alert.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayConfig<T> {
    /// Trailing window over which the slope is fitted.
    pub window_s: u32,
    pub min_points: usize,
    /// Alert when the fitted slope is at or below `-slope_per_hour`.
    pub slope_per_hour: T,
    pub min_run: usize,
}

impl<T: Scalar> Default for DecayConfig<T> {
    fn default() -> Self {
        Self {
            window_s: 1800,
            min_points: 90,
            slope_per_hour: T::lit(0.05),
            min_run: 6,
        }
    }
}

/// Power-factor decay alerts: runs of trailing windows whose fitted power
/// factor slope falls at or below `-slope_per_hour`.
pub fn detect_power_factor_decay<T: Scalar>(
    samples: &[PowerSample<T>],
    config: &DecayConfig<T>,
) -> Vec<RegimeEvent<T>> {
    let window = config.window_s as i64 * MICROS_PER_SEC;
    let mut events = Vec::new();
    let mut run: Option<Run<T>> = None;
    let mut lo = 0;
    let flush = |run: &mut Option<Run<T>>, events: &mut Vec<RegimeEvent<T>>| {
        if let Some(r) = run.take() {
            if r.len >= config.min_run.max(1) {
                events.push(RegimeEvent {
                    kind: RegimeKind::PowerFactorDecayAlert,
                    start_ts: r.start,
                    end_ts: r.end,
                    mean_rho: r.sum / T::from_count(r.len),
                    evidence: r.len,
                });
            }
        }
    };
    for (hi, s) in samples.iter().enumerate() {
        while samples[lo].ts_micros <= s.ts_micros - window {
            lo += 1;
        }
        let decaying = match power_factor_trend(&samples[lo..=hi], config.min_points) {
            Ok(slope) if slope <= -config.slope_per_hour => Some(slope),
            _ => None,
        };
        match (decaying, run.as_mut()) {
            (Some(slope), Some(r)) => {
                r.end = s.ts_micros;
                r.sum = r.sum + slope;
                r.len += 1;
            }
            (Some(slope), None) => {
                run = Some(Run {
                    label: Label::Other,
                    start: s.ts_micros,
                    end: s.ts_micros,
                    sum: slope,
                    len: 1,
                })
            }
            (None, _) => flush(&mut run, &mut events),
        }
    }
    flush(&mut run, &mut events);
    events
}

fn fmt_opt<T: Scalar>(v: Option<T>) -> String {
    match v {
        Some(x) => format!("{x:?}"),
        None => "NaN".to_string(),
    }
}

pub fn write_correlation_csv<T: Scalar, W: Write>(
    out: W,
    points: &[CorrelationPoint<T>],
) -> Result<(), CorrelationError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CORRELATION_CSV_HEADER)?;
    for p in points {
        w.write_record([
            p.window_end_ts.to_string(),
            fmt_opt(p.rho),
            p.n_samples.to_string(),
            p.class.to_string(),
            p.direction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a correlation series written by [`write_correlation_csv`]. The
/// `low_n` and `full_window` flags are not part of the file; `low_n` is
/// restored from the sample count against `config`, `full_window` from the
/// first timestamp.
pub fn read_correlation_csv<T: Scalar, R: Read>(
    input: R,
    config: &WindowConfig<T>,
) -> Result<Vec<CorrelationPoint<T>>, CorrelationError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(CORRELATION_CSV_HEADER) {
        return Err(CorrelationError::MalformedRow {
            row: 0,
            reason: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let min_n = config.min_samples();
    let window = config.window_s as i64 * MICROS_PER_SEC;
    let mut out: Vec<CorrelationPoint<T>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i as u64 + 1;
        if rec.len() != CORRELATION_CSV_HEADER.len() {
            return Err(CorrelationError::MalformedRow {
                row,
                reason: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let err = |col: usize| CorrelationError::MalformedRow {
            row,
            reason: format!("column {}: {:?}", CORRELATION_CSV_HEADER[col], &rec[col]),
        };
        let ts: i64 = rec[0].trim().parse().map_err(|_| err(0))?;
        let rho: T = rec[1].trim().parse().map_err(|_| err(1))?;
        let rho = (!rho.is_nan()).then_some(rho);
        if rho.is_some_and(|r| r.abs() > T::one()) {
            return Err(err(1));
        }
        let n: usize = rec[2].trim().parse().map_err(|_| err(2))?;
        let start = out.first().map_or(ts, |p| p.window_end_ts);
        let (class, direction) = config.thresholds.classify(rho);
        out.push(CorrelationPoint {
            window_end_ts: ts,
            rho,
            n_samples: n,
            class,
            direction,
            low_n: n < min_n,
            full_window: ts - window >= start,
        });
    }
    Ok(out)
}

pub fn write_events_csv<T: Scalar, W: Write>(out: W, events: &[RegimeEvent<T>]) -> Result<(), CorrelationError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENTS_CSV_HEADER)?;
    for e in events {
        w.write_record([
            e.kind.to_string(),
            e.start_ts.to_string(),
            e.end_ts.to_string(),
            format!("{:?}", e.mean_rho),
            e.evidence.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events_csv<T: Scalar, R: Read>(input: R) -> Result<Vec<RegimeEvent<T>>, CorrelationError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(EVENTS_CSV_HEADER) {
        return Err(CorrelationError::MalformedRow {
            row: 0,
            reason: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i as u64 + 1;
        let err = |col: usize| CorrelationError::MalformedRow {
            row,
            reason: format!("column {}", EVENTS_CSV_HEADER.get(col).unwrap_or(&"?")),
        };
        if rec.len() != EVENTS_CSV_HEADER.len() {
            return Err(err(5));
        }
        out.push(RegimeEvent {
            kind: rec[0].trim().parse().map_err(|_| err(0))?,
            start_ts: rec[1].trim().parse().map_err(|_| err(1))?,
            end_ts: rec[2].trim().parse().map_err(|_| err(2))?,
            mean_rho: rec[3].trim().parse().map_err(|_| err(3))?,
            evidence: rec[4].trim().parse().map_err(|_| err(4))?,
        });
    }
    Ok(out)
}
