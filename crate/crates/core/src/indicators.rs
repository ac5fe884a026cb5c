//! Per-second traffic indicators.
//!
//! For each one-second bucket `[t, t+1)` of the stream span, and for each
//! requested [`Scope`], an [`IndicatorTuple`] records message rate, bandwidth,
//! TCP count, average message size and the inner/outer split. Silent seconds
//! produce all-zero tuples.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{AlignedPoint, AlignedSeries};
use crate::num::{Scalar, MICROS_PER_SEC};
use crate::power_ingest::PowerSample;
use crate::trace_ingest::{AddrPair, EnclosureProfile, PacketRecord, Transport};

pub const TUPLES_CSV_HEADER: [&str; 8] = [
    "second_index",
    "scope",
    "msg_rate",
    "bandwidth_bps",
    "tcp_msgs",
    "avg_msg_size_bytes",
    "inner_msgs",
    "outer_msgs",
];

#[derive(Debug, Error)]
pub enum IndicatorError {
    #[error("traffic and power series do not overlap")]
    NoOverlap,
    #[error("binning needs system-scope tuples")]
    MissingSystemScope,
    #[error("bin width must be at least one second")]
    InvalidCadence,
    #[error("tuples csv row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// What an indicator tuple aggregates over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scope {
    System,
    Node(Ipv4Addr),
    Couple(AddrPair),
}

impl Scope {
    pub fn couple(a: Ipv4Addr, b: Ipv4Addr) -> Option<Self> {
        AddrPair::new(a, b).map(Scope::Couple)
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::System => f.write_str("system"),
            Scope::Node(a) => write!(f, "node:{a}"),
            Scope::Couple(p) => write!(f, "couple:{p}"),
        }
    }
}

impl FromStr for Scope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "system" {
            Ok(Scope::System)
        } else if let Some(a) = s.strip_prefix("node:") {
            a.parse().map(Scope::Node).map_err(|e| format!("{s:?}: {e}"))
        } else if let Some(p) = s.strip_prefix("couple:") {
            p.parse().map(Scope::Couple)
        } else {
            Err(format!("unknown scope {s:?}"))
        }
    }
}

/// Traffic snapshot of one second at one scope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndicatorTuple {
    pub second_index: u64,
    pub scope: Scope,
    pub msg_rate: u64,
    pub bandwidth_bps: u64,
    pub tcp_msgs: u64,
    pub avg_msg_size_bytes: f64,
    pub inner_msgs: u64,
    pub outer_msgs: u64,
}

/// Indicator tuples ordered by `(second_index, scope)`, with the wall-clock
/// start of second 0.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IndicatorSeries {
    /// Start of second 0, microseconds since the epoch, aligned to a second.
    pub origin_micros: i64,
    /// Number of seconds covered.
    pub seconds: u64,
    pub tuples: Vec<IndicatorTuple>,
}

impl IndicatorSeries {
    /// True when the source stream had no records.
    pub fn is_empty(&self) -> bool {
        self.seconds == 0
    }

    pub fn for_scope(&self, scope: Scope) -> impl Iterator<Item = &IndicatorTuple> + '_ {
        self.tuples.iter().filter(move |t| t.scope == scope)
    }

    /// Wall-clock start of `second_index`.
    pub fn second_start_micros(&self, second_index: u64) -> i64 {
        self.origin_micros + second_index as i64 * MICROS_PER_SEC
    }
}

#[derive(Default, Clone, Copy)]
struct Acc {
    msgs: u64,
    bytes: u64,
    tcp: u64,
    inner: u64,
}

impl Acc {
    fn add(&mut self, r: &PacketRecord, inner: bool) {
        self.msgs += 1;
        self.bytes += r.wire_len as u64;
        self.tcp += (r.transport == Transport::Tcp) as u64;
        self.inner += inner as u64;
    }

    fn tuple(&self, second_index: u64, scope: Scope) -> IndicatorTuple {
        IndicatorTuple {
            second_index,
            scope,
            msg_rate: self.msgs,
            bandwidth_bps: 8 * self.bytes,
            tcp_msgs: self.tcp,
            avg_msg_size_bytes: if self.msgs > 0 {
                self.bytes as f64 / self.msgs as f64
            } else {
                0.0
            },
            inner_msgs: self.inner,
            outer_msgs: self.msgs - self.inner,
        }
    }
}

/// Computes one tuple per (second, scope) over the stream span.
///
/// A packet counts toward `Node(a)` when `a` is its source or destination and
/// toward `Couple(a, b)` when its endpoints are exactly `{a, b}`. It is inner
/// when both endpoints belong to the enclosure, outer otherwise. Record order
/// does not matter. An empty stream yields an empty series.
pub fn compute_tuples(
    stream: &[PacketRecord],
    profile: &EnclosureProfile,
    scopes: &BTreeSet<Scope>,
) -> IndicatorSeries {
    let (Some(first), Some(last)) = (
        stream.iter().map(|r| r.ts_micros).min(),
        stream.iter().map(|r| r.ts_micros).max(),
    ) else {
        return IndicatorSeries::default();
    };
    let origin_sec = first.div_euclid(MICROS_PER_SEC);
    let seconds = (last.div_euclid(MICROS_PER_SEC) - origin_sec + 1) as u64;

    let ordered: Vec<Scope> = scopes.iter().copied().collect();
    let width = ordered.len();
    let mut system = None;
    let mut nodes = HashMap::new();
    let mut couples = HashMap::new();
    for (i, s) in ordered.iter().enumerate() {
        match s {
            Scope::System => system = Some(i),
            Scope::Node(a) => {
                nodes.insert(*a, i);
            }
            Scope::Couple(p) => {
                couples.insert(*p, i);
            }
        }
    }

    let mut acc = vec![Acc::default(); seconds as usize * width];
    if width > 0 {
        for r in stream {
            let sec = (r.ts_micros.div_euclid(MICROS_PER_SEC) - origin_sec) as usize;
            let row = &mut acc[sec * width..(sec + 1) * width];
            let inner = profile.is_internal(r.src_addr) && profile.is_internal(r.dst_addr);
            if let Some(i) = system {
                row[i].add(r, inner);
            }
            if let Some(&i) = nodes.get(&r.src_addr) {
                row[i].add(r, inner);
            }
            if r.dst_addr != r.src_addr {
                if let Some(&i) = nodes.get(&r.dst_addr) {
                    row[i].add(r, inner);
                }
            }
            if let Some(i) = AddrPair::new(r.src_addr, r.dst_addr).and_then(|p| couples.get(&p)) {
                row[*i].add(r, inner);
            }
        }
    }

    let tuples = acc
        .iter()
        .enumerate()
        .map(|(k, a)| a.tuple((k / width) as u64, ordered[k % width]))
        .collect();
    IndicatorSeries {
        origin_micros: origin_sec * MICROS_PER_SEC,
        seconds,
        tuples,
    }
}

/// Placement of the traffic bin relative to a power timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinAlignment {
    /// Seconds ending in `(t - width, t]`.
    #[default]
    Trailing,
    /// Seconds ending in `(t - width/2, t + width/2]`.
    Centered,
}

/// Output of [`bin_series`].
#[derive(Debug, Clone, PartialEq)]
pub struct Binned<T> {
    pub series: AlignedSeries<T>,
    /// Power samples whose bin was not fully covered by traffic.
    pub dropped: usize,
}

/// Pairs each power sample with the mean system message rate of the traffic
/// bin attached to it, producing points on the power clock.
pub fn bin_series<T: Scalar>(
    tuples: &IndicatorSeries,
    power: &[PowerSample<T>],
    bin_width_s: u32,
    alignment: BinAlignment,
) -> Result<Binned<T>, IndicatorError> {
    if bin_width_s == 0 {
        return Err(IndicatorError::InvalidCadence);
    }
    let mut rates = vec![None; tuples.seconds as usize];
    for t in tuples.for_scope(Scope::System) {
        rates[t.second_index as usize] = Some(t.msg_rate);
    }
    if tuples.seconds > 0 && rates.iter().all(Option::is_none) {
        return Err(IndicatorError::MissingSystemScope);
    }

    let width = bin_width_s as i64;
    let shift = match alignment {
        BinAlignment::Trailing => 0,
        BinAlignment::Centered => width * MICROS_PER_SEC / 2,
    };
    let origin_sec = tuples.origin_micros.div_euclid(MICROS_PER_SEC);
    let divisor = T::from_i64(width).unwrap();
    let mut points = Vec::with_capacity(power.len());
    let mut dropped = 0;
    for p in power {
        // Buckets [s, s+1) whose end lies in (t' - width, t'].
        let end_sec = (p.ts_micros + shift).div_euclid(MICROS_PER_SEC);
        let first = end_sec - width - origin_sec;
        let last = end_sec - 1 - origin_sec;
        if first < 0 || last >= tuples.seconds as i64 {
            dropped += 1;
            continue;
        }
        let sum: Option<u64> = rates[first as usize..=last as usize].iter().copied().sum();
        let Some(sum) = sum else {
            dropped += 1;
            continue;
        };
        points.push(AlignedPoint {
            ts_micros: p.ts_micros,
            traffic_pps: T::from_u64(sum).unwrap() / divisor,
            apparent_va: p.apparent_va(),
        });
    }
    if points.is_empty() {
        return Err(IndicatorError::NoOverlap);
    }
    let series = AlignedSeries::new(points, bin_width_s).map_err(|_| IndicatorError::MalformedRow {
        row: 0,
        reason: "power timestamps are not strictly increasing".into(),
    })?;
    Ok(Binned { series, dropped })
}

pub fn write_tuples_csv<W: Write>(out: W, tuples: &[IndicatorTuple]) -> Result<(), IndicatorError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TUPLES_CSV_HEADER)?;
    for t in tuples {
        w.write_record([
            t.second_index.to_string(),
            t.scope.to_string(),
            t.msg_rate.to_string(),
            t.bandwidth_bps.to_string(),
            t.tcp_msgs.to_string(),
            format!("{:?}", t.avg_msg_size_bytes),
            t.inner_msgs.to_string(),
            t.outer_msgs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tuples_csv<R: Read>(input: R) -> Result<Vec<IndicatorTuple>, IndicatorError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(TUPLES_CSV_HEADER) {
        return Err(IndicatorError::MalformedRow {
            row: 0,
            reason: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i as u64 + 1;
        if rec.len() != TUPLES_CSV_HEADER.len() {
            return Err(IndicatorError::MalformedRow {
                row,
                reason: format!("expected 8 fields, found {}", rec.len()),
            });
        }
        let err = |col: usize| IndicatorError::MalformedRow {
            row,
            reason: format!("column {}: {:?}", TUPLES_CSV_HEADER[col], &rec[col]),
        };
        let int = |col: usize| rec[col].trim().parse::<u64>().map_err(|_| err(col));
        out.push(IndicatorTuple {
            second_index: int(0)?,
            scope: rec[1].trim().parse().map_err(|_| err(1))?,
            msg_rate: int(2)?,
            bandwidth_bps: int(3)?,
            tcp_msgs: int(4)?,
            avg_msg_size_bytes: rec[5].trim().parse().map_err(|_| err(5))?,
            inner_msgs: int(6)?,
            outer_msgs: int(7)?,
        });
    }
    Ok(out)
}

/// Rebuilds a series from tuples read back from CSV.
pub fn series_from_tuples(origin_micros: i64, tuples: Vec<IndicatorTuple>) -> IndicatorSeries {
    let seconds = tuples.iter().map(|t| t.second_index + 1).max().unwrap_or(0);
    IndicatorSeries {
        origin_micros,
        seconds,
        tuples,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile() -> EnclosureProfile {
        EnclosureProfile::from_networks(&["10.0.0.0/24"]).unwrap()
    }

    fn pkt(ts: i64, src: [u8; 4], dst: [u8; 4], t: Transport, len: u32) -> PacketRecord {
        PacketRecord {
            ts_micros: ts,
            src_addr: src.into(),
            dst_addr: dst.into(),
            transport: t,
            wire_len: len,
            ip_id: 0,
            source_probe: 0,
            seq_in_probe: 0,
        }
    }

    fn system_only() -> BTreeSet<Scope> {
        [Scope::System].into()
    }

    #[test]
    fn ten_tcp_packets_in_one_second() {
        let stream: Vec<_> = (0..10)
            .map(|i| pkt(5_000_000 + i * 90_000, [10, 0, 0, 1], [10, 0, 0, 2], Transport::Tcp, 100))
            .collect();
        let s = compute_tuples(&stream, &profile(), &system_only());
        assert_eq!(s.seconds, 1);
        assert_eq!(s.origin_micros, 5_000_000);
        let t = s.tuples[0];
        assert_eq!((t.msg_rate, t.bandwidth_bps, t.tcp_msgs, t.avg_msg_size_bytes), (10, 8000, 10, 100.0));
        assert_eq!((t.inner_msgs, t.outer_msgs), (10, 0));
    }

    #[test]
    fn silent_seconds_are_zero_tuples() {
        let stream = vec![
            pkt(0, [10, 0, 0, 1], [8, 8, 8, 8], Transport::Udp, 60),
            pkt(3_500_000, [10, 0, 0, 1], [8, 8, 8, 8], Transport::Udp, 60),
        ];
        let s = compute_tuples(&stream, &profile(), &system_only());
        assert_eq!(s.seconds, 4);
        for t in &s.tuples[1..3] {
            assert_eq!((t.msg_rate, t.bandwidth_bps, t.tcp_msgs, t.avg_msg_size_bytes), (0, 0, 0, 0.0));
        }
        assert_eq!(s.tuples[3].outer_msgs, 1);
    }

    #[test]
    fn empty_stream_flags_empty_series() {
        let s = compute_tuples(&[], &profile(), &system_only());
        assert!(s.is_empty());
        assert!(s.tuples.is_empty());
    }

    #[test]
    fn node_and_couple_membership() {
        let a = [10, 0, 0, 1];
        let b = [10, 0, 0, 2];
        let c = [10, 0, 0, 3];
        let stream = vec![
            pkt(0, a, b, Transport::Tcp, 100),
            pkt(1, b, a, Transport::Udp, 200),
            pkt(2, a, c, Transport::Tcp, 300),
            pkt(3, c, b, Transport::Icmp, 400),
        ];
        let scopes: BTreeSet<_> = [
            Scope::System,
            Scope::Node(a.into()),
            Scope::couple(a.into(), b.into()).unwrap(),
        ]
        .into();
        let s = compute_tuples(&stream, &profile(), &scopes);
        let rates: Vec<_> = s.tuples.iter().map(|t| (t.scope, t.msg_rate)).collect();
        assert_eq!(
            rates,
            vec![
                (Scope::System, 4),
                (Scope::Node(a.into()), 3),
                (Scope::couple(b.into(), a.into()).unwrap(), 2)
            ]
        );
    }

    #[test]
    fn scope_text_form() {
        for s in ["system", "node:10.1.2.3", "couple:10.0.0.1|10.0.0.2"] {
            assert_eq!(s.parse::<Scope>().unwrap().to_string(), s);
        }
        assert_eq!(
            "couple:10.0.0.2|10.0.0.1".parse::<Scope>().unwrap().to_string(),
            "couple:10.0.0.1|10.0.0.2"
        );
        assert!("host:1.2.3.4".parse::<Scope>().is_err());
    }

    fn series_with_rates(rates: &[u64]) -> IndicatorSeries {
        IndicatorSeries {
            origin_micros: 0,
            seconds: rates.len() as u64,
            tuples: rates
                .iter()
                .enumerate()
                .map(|(i, &r)| IndicatorTuple {
                    second_index: i as u64,
                    scope: Scope::System,
                    msg_rate: r,
                    bandwidth_bps: 0,
                    tcp_msgs: 0,
                    avg_msg_size_bytes: 0.0,
                    inner_msgs: 0,
                    outer_msgs: r,
                })
                .collect(),
        }
    }

    fn power_at(ts_s: i64, p: f64) -> PowerSample<f64> {
        PowerSample {
            ts_micros: ts_s * MICROS_PER_SEC,
            active_w: p,
            reactive_var: 0.0,
            phase_displacement_deg: 0.0,
        }
    }

    #[test]
    fn constant_and_alternating_traffic_bins() {
        let power: Vec<_> = (1..=30).map(|k| power_at(10 * k, 1000.0 + k as f64)).collect();
        let b = bin_series(&series_with_rates(&[100; 300]), &power, 10, BinAlignment::Trailing).unwrap();
        assert_eq!(b.series.points.len(), 30);
        assert!(b.series.points.iter().all(|p| p.traffic_pps == 100.0));

        let alternating: Vec<u64> = (0..300).map(|i| if i % 2 == 0 { 0 } else { 200 }).collect();
        let b = bin_series(&series_with_rates(&alternating), &power, 10, BinAlignment::Trailing).unwrap();
        assert!(b.series.points.iter().all(|p| p.traffic_pps == 100.0));
        assert_eq!(b.dropped, 0);
    }

    #[test]
    fn ramp_bins_match_closed_form() {
        let ramp: Vec<u64> = (0..600).collect();
        let power: Vec<_> = (1..=60).map(|k| power_at(10 * k, 1.0)).collect();
        let b = bin_series(&series_with_rates(&ramp), &power, 10, BinAlignment::Trailing).unwrap();
        assert_eq!(b.series.points.len(), 60);
        for (k, p) in (1..=60).zip(&b.series.points) {
            // Mean of 10(k-1) .. 10k-1.
            let expected = 10.0 * k as f64 - 5.5;
            assert!((p.traffic_pps - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn samples_outside_traffic_are_dropped() {
        let power = vec![power_at(5, 1.0), power_at(15, 1.0), power_at(200, 1.0)];
        let b = bin_series(&series_with_rates(&[1; 100]), &power, 10, BinAlignment::Trailing).unwrap();
        assert_eq!(b.series.points.len(), 1);
        assert_eq!(b.dropped, 2);
        let far = vec![power_at(5_000, 1.0)];
        assert!(matches!(
            bin_series(&series_with_rates(&[1; 100]), &far, 10, BinAlignment::Trailing),
            Err(IndicatorError::NoOverlap)
        ));
    }

    #[test]
    fn centered_bins_straddle_the_sample() {
        let ramp: Vec<u64> = (0..100).collect();
        let power = vec![power_at(20, 1.0)];
        let b = bin_series(&series_with_rates(&ramp), &power, 10, BinAlignment::Centered).unwrap();
        // Seconds 15..24.
        assert_eq!(b.series.points[0].traffic_pps, 19.5);
    }

    #[test]
    fn tuples_csv_round_trip() {
        let a = [10, 0, 0, 1];
        let stream = vec![pkt(0, a, [10, 0, 0, 2], Transport::Tcp, 333), pkt(1, a, [1, 1, 1, 1], Transport::Udp, 334)];
        let scopes: BTreeSet<_> = [Scope::System, Scope::Node(a.into())].into();
        let s = compute_tuples(&stream, &profile(), &scopes);
        let mut buf = Vec::new();
        write_tuples_csv(&mut buf, &s.tuples).unwrap();
        assert!(buf.starts_with(b"second_index,scope,msg_rate,bandwidth_bps,tcp_msgs,avg_msg_size_bytes,inner_msgs,outer_msgs\n"));
        let back = read_tuples_csv(buf.as_slice()).unwrap();
        assert_eq!(series_from_tuples(s.origin_micros, back), s);
    }

    fn arb_stream() -> impl Strategy<Value = Vec<PacketRecord>> {
        prop::collection::vec(
            (0i64..5_000_000, 0u8..6, 0u8..6, prop::bool::ANY, 40u32..1500),
            0..300,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(ts, s, d, tcp, len)| {
                    pkt(
                        ts,
                        [10, 0, 0, s],
                        [10, 0, if d % 2 == 0 { 0 } else { 1 }, d],
                        if tcp { Transport::Tcp } else { Transport::Udp },
                        len,
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn tuple_invariants(stream in arb_stream()) {
            let addrs: Vec<Ipv4Addr> = (0..6).map(|i| Ipv4Addr::new(10, 0, 0, i)).collect();
            let mut scopes: BTreeSet<Scope> = [Scope::System].into();
            scopes.extend(addrs.iter().map(|&a| Scope::Node(a)));
            scopes.extend(addrs.iter().flat_map(|&a| addrs.iter().filter_map(move |&b| Scope::couple(a, b))));
            let s = compute_tuples(&stream, &profile(), &scopes);

            let total: u64 = s.for_scope(Scope::System).map(|t| t.msg_rate).sum();
            prop_assert_eq!(total, stream.len() as u64);

            let mut by_second: HashMap<u64, HashMap<Scope, u64>> = HashMap::new();
            for t in &s.tuples {
                prop_assert!(t.tcp_msgs <= t.msg_rate);
                prop_assert_eq!(t.inner_msgs + t.outer_msgs, t.msg_rate);
                if t.msg_rate == 0 {
                    prop_assert_eq!(t.bandwidth_bps, 0);
                    prop_assert_eq!(t.avg_msg_size_bytes, 0.0);
                } else {
                    let bytes = t.bandwidth_bps / 8;
                    prop_assert_eq!(t.avg_msg_size_bytes, bytes as f64 / t.msg_rate as f64);
                }
                by_second.entry(t.second_index).or_default().insert(t.scope, t.msg_rate);
            }
            for row in by_second.values() {
                let sys = row[&Scope::System];
                for &a in &addrs {
                    let node = row[&Scope::Node(a)];
                    prop_assert!(sys >= node);
                    for &b in &addrs {
                        if let Some(c) = Scope::couple(a, b) {
                            prop_assert!(node >= row[&c]);
                        }
                    }
                }
            }

            let mut reversed = stream.clone();
            reversed.reverse();
            prop_assert_eq!(compute_tuples(&reversed, &profile(), &scopes), s);
        }
    }
}
