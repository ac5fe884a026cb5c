//! Smart-PDU power logs.
//!
//! A log row carries the active power `P` (W), the reactive power `Q` (var)
//! and the phase displacement reported by the PDU. Apparent power and power
//! factor are derived from the power triangle: `S = sqrt(P² + Q²)`,
//! `pf = P / S`. The phase displacement is kept but not used for derivation.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::num::{Scalar, MICROS_PER_HOUR, MICROS_PER_SEC};

pub const POWER_CSV_HEADER: [&str; 4] = ["ts_micros", "active_w", "reactive_var", "phase_deg"];

#[derive(Debug, Error)]
pub enum PowerError {
    #[error("power log row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },
    #[error("power log row {row}: timestamp {ts} does not follow {prev}")]
    NonMonotonicTimestamp { row: u64, ts: i64, prev: i64 },
    #[error("need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One PDU reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerSample<T> {
    pub ts_micros: i64,
    pub active_w: T,
    pub reactive_var: T,
    pub phase_displacement_deg: T,
}

/// Quantities derived from a reading through the power triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedPower<T> {
    pub apparent_va: T,
    pub power_factor: T,
}

impl<T: Scalar> PowerSample<T> {
    pub fn derived(&self) -> DerivedPower<T> {
        derive(self)
    }

    pub fn apparent_va(&self) -> T {
        derive(self).apparent_va
    }
}

/// Apparent power and power factor. An idle reading (`S = 0`) has power
/// factor 1.
pub fn derive<T: Scalar>(sample: &PowerSample<T>) -> DerivedPower<T> {
    let apparent = sample.active_w.hypot(sample.reactive_var);
    let power_factor = if apparent > T::zero() {
        (sample.active_w / apparent).max(T::zero()).min(T::one())
    } else {
        T::one()
    };
    DerivedPower {
        apparent_va: apparent,
        power_factor,
    }
}

pub fn parse_power_log<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<PowerSample<T>>, PowerError> {
    read_power_log(std::fs::File::open(path)?)
}

pub fn read_power_log<T: Scalar, R: Read>(input: R) -> Result<Vec<PowerSample<T>>, PowerError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(POWER_CSV_HEADER) {
        return Err(PowerError::MalformedRow {
            row: 0,
            reason: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }

    let mut out: Vec<PowerSample<T>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i as u64 + 1;
        if rec.len() != POWER_CSV_HEADER.len() {
            return Err(PowerError::MalformedRow {
                row,
                reason: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let bad = |col: usize| PowerError::MalformedRow {
            row,
            reason: format!("column {}: {:?} is not a number", POWER_CSV_HEADER[col], &rec[col]),
        };
        let ts: i64 = rec[0].trim().parse().map_err(|_| bad(0))?;
        let real = |col: usize| -> Result<T, PowerError> {
            let v: T = rec[col].trim().parse().map_err(|_| bad(col))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(bad(col))
            }
        };
        let sample = PowerSample {
            ts_micros: ts,
            active_w: real(1)?,
            reactive_var: real(2)?,
            phase_displacement_deg: real(3)?,
        };
        if sample.active_w < T::zero() {
            return Err(PowerError::MalformedRow {
                row,
                reason: format!("negative active power {}", sample.active_w),
            });
        }
        if let Some(prev) = out.last() {
            if ts <= prev.ts_micros {
                return Err(PowerError::NonMonotonicTimestamp {
                    row,
                    ts,
                    prev: prev.ts_micros,
                });
            }
        }
        out.push(sample);
    }
    Ok(out)
}

/// Writes samples with shortest round-trip decimal reals.
pub fn write_power_log<T: Scalar, W: Write>(out: W, samples: &[PowerSample<T>]) -> Result<(), PowerError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(POWER_CSV_HEADER)?;
    for s in samples {
        w.write_record([
            s.ts_micros.to_string(),
            format!("{:?}", s.active_w),
            format!("{:?}", s.reactive_var),
            format!("{:?}", s.phase_displacement_deg),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// An inter-sample gap outside the tolerated cadence band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapReport<T> {
    /// Index of the sample that opens the gap; the gap closes at `index + 1`.
    pub index: usize,
    pub gap_s: T,
}

pub fn validate_cadence<T: Scalar>(
    samples: &[PowerSample<T>],
    expected_period_s: T,
    tolerance_fraction: T,
) -> Result<Vec<GapReport<T>>, PowerError> {
    if expected_period_s.is_nan() || expected_period_s <= T::zero() {
        return Err(PowerError::InvalidArgument(format!(
            "expected period must be positive, got {expected_period_s}"
        )));
    }
    if !(tolerance_fraction >= T::zero() && tolerance_fraction < T::one()) {
        return Err(PowerError::InvalidArgument(format!(
            "tolerance fraction must lie in [0, 1), got {tolerance_fraction}"
        )));
    }
    let lo = expected_period_s * (T::one() - tolerance_fraction);
    let hi = expected_period_s * (T::one() + tolerance_fraction);
    let per_sec = T::from_count(MICROS_PER_SEC as usize);
    Ok(samples
        .windows(2)
        .enumerate()
        .filter_map(|(index, w)| {
            let gap_s = T::from_i64(w[1].ts_micros - w[0].ts_micros)? / per_sec;
            (gap_s < lo || gap_s > hi).then_some(GapReport { index, gap_s })
        })
        .collect())
}

/// Least-squares slope of the derived power factor against time, per hour.
/// A falling power factor is a hardware failure precursor.
pub fn power_factor_trend<T: Scalar>(samples: &[PowerSample<T>], min_points: usize) -> Result<T, PowerError> {
    let needed = min_points.max(2);
    if samples.len() < needed {
        return Err(PowerError::InsufficientData {
            needed,
            got: samples.len(),
        });
    }
    let t0 = samples[0].ts_micros;
    let per_hour = T::from_i64(MICROS_PER_HOUR).unwrap();
    let points: Vec<(T, T)> = samples
        .iter()
        .map(|s| {
            let hours = T::from_i64(s.ts_micros - t0).unwrap() / per_hour;
            (hours, derive(s).power_factor)
        })
        .collect();
    let n = T::from_count(points.len());
    let mean_t = points.iter().map(|p| p.0).sum::<T>() / n;
    let mean_pf = points.iter().map(|p| p.1).sum::<T>() / n;
    let (sxy, sxx) = points.iter().fold((T::zero(), T::zero()), |(sxy, sxx), &(t, pf)| {
        let dt = t - mean_t;
        (sxy + dt * (pf - mean_pf), sxx + dt * dt)
    });
    if sxx <= T::zero() {
        return Err(PowerError::InsufficientData {
            needed,
            got: 1,
        });
    }
    Ok(sxy / sxx)
}
