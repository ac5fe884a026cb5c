mod common;

use std::net::Ipv4Addr;

use common::*;
use dcmon_core::correlation::{
    detect_regimes, pearson, smooth_means, AlignedPoint, AlignedSeries, CorrelationClass, CorrelationPoint, Direction,
    RegimeConfig, RegimeKind,
};
use dcmon_core::power_ingest::{parse_power_log, power_factor_trend, validate_cadence, PowerSample};
use dcmon_core::synthgen::{
    generate, inject, synthesize, write_outputs, FaultKind, FaultSpec, WorkloadMode, POWER_LOG_FILE,
};
use dcmon_core::topology::{build_graph, score_relevance, RelevanceWeights};
use dcmon_core::trace_ingest::{AddrPair, EnclosureProfile, PacketRecord, Transport};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn power_log_of_nine_hundred_rows() {
    let spec = scenario(vec![segment(9000, WorkloadMode::Idle, 0.5, (20.0, 1.0), (1630.0, 2.0))], 4);
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&generate(&spec).unwrap(), dir.path()).unwrap();
    let samples = parse_power_log::<f64>(dir.path().join(POWER_LOG_FILE)).unwrap();
    assert_eq!(samples.len(), 900);
    // Each reading closes a 10 s interval: 900 of them cover 150 minutes.
    assert_eq!(samples[0].ts_micros - spec.start_ts_micros, 10 * SEC);
    assert_eq!(samples[899].ts_micros - spec.start_ts_micros, 150 * 60 * SEC);
    assert!(validate_cadence(&samples, 10.0, 0.2).unwrap().is_empty());
}

#[test]
fn jittered_cadence_passes_validation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut ts = 0;
    let samples: Vec<PowerSample<f64>> = (0..1000)
        .map(|_| {
            ts += 10 * SEC + rng.random_range(-SEC..=SEC);
            PowerSample { ts_micros: ts, active_w: 1630.0, reactive_var: 100.0, phase_displacement_deg: 3.5 }
        })
        .collect();
    let gaps: Vec<f64> = samples.windows(2).map(|w| (w[1].ts_micros - w[0].ts_micros) as f64 / 1e6).collect();
    assert!(gaps.iter().all(|g| (8.0..=12.0).contains(g)));
    assert!(validate_cadence(&samples, 10.0, 0.2).unwrap().is_empty());
}

#[test]
fn psu_decay_trace_has_negative_trend() {
    let mut spec = scenario(vec![segment(5400, WorkloadMode::Idle, 0.7, (20.0, 1.0), (1630.0, 2.0))], 12);
    spec.faults.push(FaultSpec {
        kind: FaultKind::PsuPowerFactorDecay,
        start_ts: spec.start_ts_micros + 1800 * SEC,
        duration_s: 3600,
        magnitude: 0.08,
        traffic_fraction: 0.0,
    });
    let g = generate(&spec).unwrap();
    let tail: Vec<_> = g.power().iter().filter(|p| p.ts_micros > spec.faults[0].start_ts).copied().collect();
    let slope = power_factor_trend(&tail, 90).unwrap();
    assert!(slope < -0.05, "{slope}");
    assert!((slope + 0.08).abs() < 1e-6);
}

#[test]
fn pearson_matches_exact_oracle_on_1000_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..20 {
        let xs: Vec<f64> = (0..1000).map(|_| rng.random_range(1.0..1e7)).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1630.0 + x * 1e-6 + rng.random_range(-3.0..3.0)).collect();
        let got = pearson(&xs, &ys).unwrap().unwrap();
        let want = exact_pearson(&xs, &ys).unwrap();
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        let got32 = pearson(&xs.iter().map(|&v| v as f32).collect::<Vec<_>>(), &ys.iter().map(|&v| v as f32).collect::<Vec<_>>())
            .unwrap()
            .unwrap();
        assert!((got32 as f64 - want).abs() < 1e-2);
    }
}

#[test]
fn planted_coupling_recovered_by_windows() {
    let spec = scenario(vec![segment(9000, WorkloadMode::CpuAndNetwork, 0.9, (60.0, 5.0), (1629.0, 2.0))], 31);
    let a = analyze_generated(&generate(&spec).unwrap());
    let full: Vec<f64> = a.points.iter().filter(|p| p.full_window).map(|p| p.rho.unwrap()).collect();
    let inside = full.iter().filter(|r| (0.8..=0.97).contains(*r)).count();
    assert!(inside as f64 >= 0.9 * full.len() as f64, "{inside}/{}", full.len());
}

#[test]
fn smoothing_matches_prefix_sum_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut ts = 0;
    let points: Vec<AlignedPoint<f64>> = (0..2000)
        .map(|_| {
            // Occasional gaps make the window population vary.
            ts += if rng.random_bool(0.05) { 40 * SEC } else { 10 * SEC };
            AlignedPoint { ts_micros: ts, traffic_pps: rng.random_range(0.0..7000.0), apparent_va: rng.random_range(1622.0..1636.0) }
        })
        .collect();
    let series = AlignedSeries::new(points, 10).unwrap();
    let smoothed = smooth_means(&series, 600).unwrap();
    let stamps: Vec<i64> = series.points.iter().map(|p| p.ts_micros).collect();
    for (got, want) in [
        (smoothed.traffic(), prefix_mean(&series.traffic(), &stamps, 600 * SEC)),
        (smoothed.power(), prefix_mean(&series.power(), &stamps, 600 * SEC)),
    ] {
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}

fn point(i: usize, rho: f64) -> CorrelationPoint<f64> {
    CorrelationPoint {
        window_end_ts: i as i64 * 10 * SEC,
        rho: Some(rho),
        n_samples: 60,
        class: CorrelationClass::Strong,
        direction: if rho > 0.0 { Direction::Direct } else { Direction::Inverse },
        low_n: false,
        full_window: true,
    }
}

#[test]
fn run_length_oracle_on_three_periods() {
    let rhos: Vec<f64> = (0..90).map(|i| if (30..60).contains(&i) { -0.9 } else { 0.9 }).collect();
    let pts: Vec<_> = rhos.iter().enumerate().map(|(i, &r)| point(i, r)).collect();
    let cfg = RegimeConfig { min_run: 5, ..Default::default() };
    let events = detect_regimes(&pts, &cfg).unwrap();

    // Oracle: maximal runs of equal sign, kept when long enough.
    let mut runs: Vec<(bool, usize, usize)> = Vec::new();
    for (i, r) in rhos.iter().enumerate() {
        match runs.last_mut() {
            Some(run) if run.0 == (*r > 0.0) => run.2 = i,
            _ => runs.push((*r > 0.0, i, i)),
        }
    }
    let expected: Vec<(RegimeKind, i64, i64)> = runs
        .into_iter()
        .filter(|r| r.2 - r.1 + 1 >= 5)
        .map(|(pos, a, b)| {
            let k = if pos { RegimeKind::CorrelatedPeriod } else { RegimeKind::AnticorrelatedPeriod };
            (k, pts[a].window_end_ts, pts[b].window_end_ts)
        })
        .collect();
    let got: Vec<_> = events.iter().map(|e| (e.kind, e.start_ts, e.end_ts)).collect();
    assert_eq!(got, expected);
    assert_eq!(got.len(), 3);
}

#[test]
fn planted_heavy_couple_ranks_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let addrs: Vec<Ipv4Addr> = (1..=12).map(|i| Ipv4Addr::new(10, 2, 0, i)).collect();
    let heavy = AddrPair::new(addrs[3], addrs[7]).unwrap();
    let mut stream = Vec::new();
    let mut ts = 0;
    let mut push = |a: Ipv4Addr, b: Ipv4Addr, stream: &mut Vec<PacketRecord>| {
        ts += 1000;
        stream.push(PacketRecord {
            ts_micros: ts,
            src_addr: a,
            dst_addr: b,
            transport: Transport::Tcp,
            wire_len: 500,
            ip_id: 0,
            source_probe: 0,
            seq_in_probe: stream.len() as u64,
        });
    };
    // Every other pair gets ~20 packets, the planted one 10x that.
    for (i, &a) in addrs.iter().enumerate() {
        for &b in &addrs[i + 1..] {
            let n = if AddrPair::new(a, b) == Some(heavy) { 200 } else { rng.random_range(15..=20) };
            for _ in 0..n {
                push(a, b, &mut stream);
            }
        }
    }
    let g = build_graph(&stream);
    let profile = EnclosureProfile::from_networks(&["10.2.0.0/24"]).unwrap();
    let report = score_relevance(&g, &profile, 5, RelevanceWeights::default());
    assert_eq!(report.ranked_couples[0].0, heavy);
    assert_eq!(report.ranked_couples[0].1, 1.0);
    assert!(report.ranked_couples[1].1 < 1.0);
}

#[test]
fn segment_rho_within_bound_across_seeds() {
    for seed in 0..100 {
        let spec = scenario(
            vec![
                segment(1800, WorkloadMode::Idle, 0.6, (40.0, 4.0), (1625.0, 2.0)),
                segment(1800, WorkloadMode::CpuIntensive, -0.4, (20.0, 4.0), (1632.0, 2.0)),
            ],
            seed,
        );
        let g = generate(&spec).unwrap();
        let a = analyze_generated(&g);
        let pts = &a.binned.series.points;
        for (k, seg) in spec.segments.iter().enumerate() {
            let lo = spec.start_ts_micros + (k as i64 * 1800) * SEC;
            let hi = lo + 1800 * SEC;
            let inside: Vec<_> = pts.iter().filter(|p| p.ts_micros > lo && p.ts_micros <= hi).collect();
            assert!(inside.len() >= 179, "seed {seed}: {} samples", inside.len());
            let xs: Vec<f64> = inside.iter().map(|p| p.traffic_pps).collect();
            let ys: Vec<f64> = inside.iter().map(|p| p.apparent_va).collect();
            let r = pearson(&xs, &ys).unwrap().unwrap();
            assert!((r - seg.target_rho).abs() <= 0.15, "seed {seed} segment {k}: {r}");
        }
    }
}

#[test]
fn three_thirty_minute_segments_give_three_events() {
    let spec = scenario(
        vec![
            segment(1800, WorkloadMode::Idle, 0.9, (60.0, 1.0), (1624.0, 0.15)),
            segment(1800, WorkloadMode::CpuIntensive, -0.9, (30.0, 1.0), (1629.0, 0.15)),
            segment(1800, WorkloadMode::CpuAndNetwork, 0.9, (90.0, 1.0), (1634.0, 0.15)),
        ],
        17,
    );
    let a = analyze_generated(&generate(&spec).unwrap());
    let kinds: Vec<_> = a.events.iter().map(|e| e.kind).collect();
    assert_eq!(
        kinds,
        [RegimeKind::CorrelatedPeriod, RegimeKind::AnticorrelatedPeriod, RegimeKind::CorrelatedPeriod]
    );
}

#[test]
fn same_seed_same_bytes_with_faults() {
    let spec = cpu_loop_scenario(3);
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let pa = write_outputs(&generate(&spec).unwrap(), a.path()).unwrap();
    let pb = write_outputs(&generate(&spec).unwrap(), b.path()).unwrap();
    for (x, y) in pa.iter().zip(&pb) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap(), "{}", x.display());
    }
    let c = tempfile::tempdir().unwrap();
    let other = write_outputs(&generate(&cpu_loop_scenario(4)).unwrap(), c.path()).unwrap();
    assert_ne!(std::fs::read(&pa[0]).unwrap(), std::fs::read(&other[0]).unwrap());
}

#[test]
fn inject_preserves_power_records_and_flood_only_changes_packets() {
    let spec = scenario(vec![segment(1200, WorkloadMode::NetworkIntensive, 0.8, (30.0, 3.0), (1630.0, 2.0))], 2);
    let base = synthesize(&spec).unwrap();
    for kind in [FaultKind::CpuLoop, FaultKind::PsuPowerFactorDecay, FaultKind::TrafficFlood] {
        let f = FaultSpec {
            kind,
            start_ts: spec.start_ts_micros + 300 * SEC,
            duration_s: 600,
            magnitude: 0.5,
            traffic_fraction: 0.3,
        };
        let out = inject(&base, &f).unwrap();
        assert_eq!(out.power.len(), base.power.len());
        assert_eq!(out.traffic_pps.len(), base.traffic_pps.len());
        if kind == FaultKind::TrafficFlood {
            assert_eq!(out.power, base.power);
        }
    }
}

#[test]
fn cpu_loop_raises_alert_within_fault() {
    let spec = cpu_loop_scenario(1234);
    let a = analyze_generated(&generate(&spec).unwrap());
    let f = &spec.faults[0];
    assert!(a
        .events
        .iter()
        .any(|e| e.kind == RegimeKind::DecorrelationAlert && e.start_ts >= f.start_ts && e.end_ts <= f.end_ts()));
}
