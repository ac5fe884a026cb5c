#![allow(dead_code)]

use std::net::Ipv4Addr;

use dcmon_core::pipeline::{analyze, system_tuples, Analysis, AnalysisConfig};
use dcmon_core::synthgen::{FaultKind, FaultSpec, Generated, ScenarioSpec, Segment, WorkloadMode, DEFAULT_START_TS_MICROS};
use dcmon_core::trace_ingest::merge_streams;
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};

pub const SEC: i64 = 1_000_000;

/// A packet as the reference writer sees it.
#[derive(Debug, Clone, Copy)]
pub struct RefPacket {
    pub ts_micros: i64,
    pub src: Ipv4Addr,
    pub dst: Ipv4Addr,
    pub proto: u8,
    pub wire_len: u32,
    pub ip_id: u16,
}

/// Minimal pcap writer written straight from the libpcap format notes:
/// classic microsecond magic, Ethernet link type, full frames padded with
/// zeros up to `wire_len` and truncated at `snaplen`.
pub fn reference_pcap(packets: &[RefPacket], big_endian: bool, snaplen: u32) -> Vec<u8> {
    let u32b = |v: u32| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
    let u16b = |v: u16| if big_endian { v.to_be_bytes() } else { v.to_le_bytes() };
    let mut out = Vec::new();
    out.extend(u32b(0xa1b2_c3d4));
    out.extend(u16b(2));
    out.extend(u16b(4));
    out.extend(u32b(0));
    out.extend(u32b(0));
    out.extend(u32b(snaplen));
    out.extend(u32b(1));
    for p in packets {
        let mut frame = vec![0u8; p.wire_len as usize];
        frame[0..6].copy_from_slice(&[2, 0, 0, 0, 0, 2]);
        frame[6..12].copy_from_slice(&[2, 0, 0, 0, 0, 1]);
        frame[12] = 0x08;
        frame[13] = 0x00;
        let ip = &mut frame[14..34];
        ip[0] = 0x45;
        let total = (p.wire_len - 14) as u16;
        ip[2..4].copy_from_slice(&total.to_be_bytes());
        ip[4..6].copy_from_slice(&p.ip_id.to_be_bytes());
        ip[8] = 64;
        ip[9] = p.proto;
        ip[12..16].copy_from_slice(&p.src.octets());
        ip[16..20].copy_from_slice(&p.dst.octets());
        let incl = p.wire_len.min(snaplen);
        out.extend(u32b((p.ts_micros / SEC) as u32));
        out.extend(u32b((p.ts_micros % SEC) as u32));
        out.extend(u32b(incl));
        out.extend(u32b(p.wire_len));
        out.extend(&frame[..incl as usize]);
    }
    out
}

fn rat(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

/// Exact two-pass population Pearson coefficient. Means and centered sums
/// are computed in rational arithmetic; only the final square root is
/// floating point.
pub fn exact_pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let n = BigRational::from_integer(BigInt::from(xs.len()));
    let mx = xs.iter().map(|&v| rat(v)).fold(BigRational::zero(), |a, b| a + b) / &n;
    let my = ys.iter().map(|&v| rat(v)).fold(BigRational::zero(), |a, b| a + b) / &n;
    let (mut sxy, mut sxx, mut syy) = (BigRational::zero(), BigRational::zero(), BigRational::zero());
    for (&x, &y) in xs.iter().zip(ys) {
        let dx = rat(x) - &mx;
        let dy = rat(y) - &my;
        sxy += &dx * &dy;
        sxx += &dx * &dx;
        syy += &dy * &dy;
    }
    if sxx.is_zero() || syy.is_zero() {
        return None;
    }
    let r2 = (&sxy * &sxy) / (sxx * syy);
    let r = r2.to_f64().unwrap().sqrt();
    Some(if sxy.is_negative() { -r } else { r })
}

/// Trailing mean oracle from prefix sums.
pub fn prefix_mean(values: &[f64], ts: &[i64], window_micros: i64) -> Vec<f64> {
    let mut prefix = vec![0.0];
    for v in values {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..values.len())
        .map(|i| {
            let lo = ts.iter().position(|&t| t > ts[i] - window_micros).unwrap();
            (prefix[i + 1] - prefix[lo]) / (i + 1 - lo) as f64
        })
        .collect()
}

pub fn segment(length_s: u64, mode: WorkloadMode, rho: f64, traffic: (f64, f64), power: (f64, f64)) -> Segment {
    Segment {
        length_s,
        mode,
        target_rho: rho,
        traffic_mean_pps: traffic.0,
        power_mean_w: power.0,
        noise_sd: 0.0,
        traffic_sd: Some(traffic.1),
        power_sd: Some(power.1),
    }
}

pub fn scenario(segments: Vec<Segment>, seed: u64) -> ScenarioSpec {
    ScenarioSpec {
        duration_s: segments.iter().map(|s| s.length_s).sum(),
        segments,
        seed,
        start_ts_micros: DEFAULT_START_TS_MICROS,
        probes: 4,
        address_pool: (1..=8).map(|i| Ipv4Addr::new(10, 0, 0, i)).collect(),
        duplicate_prob: 0.0,
        power_factor: 0.98,
        faults: vec![],
    }
}

/// 2.5 h in three 50-minute regimes: idle (+0.9), CPU-bound (-0.9),
/// CPU and network (+0.9). Each switch moves both means in the direction of
/// the incoming regime's correlation sign.
pub fn three_regimes(seed: u64) -> ScenarioSpec {
    scenario(
        vec![
            segment(3000, WorkloadMode::Idle, 0.9, (60.0, 1.0), (1624.0, 0.15)),
            segment(3000, WorkloadMode::CpuIntensive, -0.9, (30.0, 1.0), (1629.0, 0.15)),
            segment(3000, WorkloadMode::CpuAndNetwork, 0.9, (90.0, 1.0), (1634.0, 0.15)),
        ],
        seed,
    )
}

pub const FAULT_START_S: i64 = 1800;
pub const FAULT_DURATION_S: u64 = 1800;

/// 90 minutes of strong direct correlation with a CPU loop in the middle
/// 30 minutes.
pub fn cpu_loop_scenario(seed: u64) -> ScenarioSpec {
    let mut s = scenario(
        vec![segment(5400, WorkloadMode::CpuAndNetwork, 0.9, (30.0, 3.0), (1630.0, 2.0))],
        seed,
    );
    s.faults.push(FaultSpec {
        kind: FaultKind::CpuLoop,
        start_ts: s.start_ts_micros + FAULT_START_S * SEC,
        duration_s: FAULT_DURATION_S,
        magnitude: 20.0,
        traffic_fraction: 0.5,
    });
    s
}

/// Merge, system tuples and full analysis at default settings.
pub fn analyze_generated(g: &Generated) -> Analysis<f64> {
    let merged = merge_streams(g.streams.clone()).unwrap();
    let tuples = system_tuples(&merged);
    analyze(&tuples, g.power(), &AnalysisConfig::default()).unwrap()
}
