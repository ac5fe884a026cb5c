//! Synthetic paired traffic/power traces with planted correlation regimes.
//!
//! A scenario is a list of segments. For each segment, traffic rate and
//! active power are drawn at 10-second granularity as
//! `y = rho·x + sqrt(1 - rho²)·z` around the segment means. Within a segment
//! `x` and `z` are centered, decorrelated and scaled to unit variance, so the
//! empirical correlation of the drawn rate and power equals `target_rho`.
//! Rates are then realized as per-second packet emissions spread over a set
//! of probes.
//!
//! Faults are applied to the 10-second process before packets are realized;
//! see [`inject`].

use std::fs;
use std::io::BufWriter;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::num::{MICROS_PER_HOUR, MICROS_PER_SEC};
use crate::power_ingest::{write_power_log, PowerError, PowerSample};
use crate::trace_ingest::{CaptureStream, PacketRecord, PcapWriter, ProbeId, Transport};

/// Granularity of the generated process and of the power log.
pub const STEP_S: u64 = 10;
pub const DEFAULT_START_TS_MICROS: i64 = 1_700_000_000 * MICROS_PER_SEC;
pub const POWER_LOG_FILE: &str = "power.csv";
const MIN_POWER_FACTOR: f64 = 0.05;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid scenario: {0}")]
    InvalidSpec(String),
    #[error("fault out of range: {0}")]
    OutOfRange(String),
    #[error("invalid config: {0}")]
    Config(#[from] serde_json::Error),
    #[error("i/o failure on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Power(#[from] PowerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkloadMode {
    CpuIntensive,
    NetworkIntensive,
    Idle,
    CpuAndNetwork,
}

impl WorkloadMode {
    /// CPU-bound work drives power up while traffic drops.
    fn allows(self, rho: f64) -> bool {
        match self {
            WorkloadMode::CpuIntensive => rho <= 0.0,
            _ => rho >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub length_s: u64,
    pub mode: WorkloadMode,
    pub target_rho: f64,
    pub traffic_mean_pps: f64,
    pub power_mean_w: f64,
    /// Standard deviation applied to both series unless overridden below.
    #[serde(default)]
    pub noise_sd: f64,
    /// Traffic standard deviation in packets per second.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub traffic_sd: Option<f64>,
    /// Active power standard deviation in watts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_sd: Option<f64>,
}

impl Segment {
    fn traffic_sd(&self) -> f64 {
        self.traffic_sd.unwrap_or(self.noise_sd)
    }

    fn power_sd(&self) -> f64 {
        self.power_sd.unwrap_or(self.noise_sd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FaultKind {
    /// `magnitude` extra watts; power stops tracking traffic.
    CpuLoop,
    /// `magnitude` power-factor loss per hour.
    PsuPowerFactorDecay,
    /// Packet rate multiplied by `1 + magnitude`.
    TrafficFlood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// Microseconds since the epoch.
    pub start_ts: i64,
    pub duration_s: u64,
    pub magnitude: f64,
    /// CpuLoop only: fraction of traffic suppressed during the fault.
    #[serde(default)]
    pub traffic_fraction: f64,
}

impl FaultSpec {
    pub fn end_ts(&self) -> i64 {
        self.start_ts + self.duration_s as i64 * MICROS_PER_SEC
    }
}

fn default_probes() -> u16 {
    4
}

fn default_pool() -> Vec<Ipv4Addr> {
    (1..=8).map(|i| Ipv4Addr::new(10, 0, 0, i)).collect()
}

fn default_start() -> i64 {
    DEFAULT_START_TS_MICROS
}

fn default_power_factor() -> f64 {
    0.98
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub duration_s: u64,
    pub segments: Vec<Segment>,
    pub seed: u64,
    #[serde(default = "default_start")]
    pub start_ts_micros: i64,
    #[serde(default = "default_probes")]
    pub probes: u16,
    #[serde(default = "default_pool")]
    pub address_pool: Vec<Ipv4Addr>,
    /// Chance that a packet is also seen by a second probe.
    #[serde(default)]
    pub duplicate_prob: f64,
    /// Power factor of the healthy supply.
    #[serde(default = "default_power_factor")]
    pub power_factor: f64,
    #[serde(default)]
    pub faults: Vec<FaultSpec>,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| SynthError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn end_ts_micros(&self) -> i64 {
        self.start_ts_micros + self.duration_s as i64 * MICROS_PER_SEC
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        let total: u64 = self.segments.iter().map(|s| s.length_s).sum();
        if self.segments.is_empty() {
            return bad("no segments".into());
        }
        if total != self.duration_s {
            return bad(format!("segment lengths sum to {total}, duration is {}", self.duration_s));
        }
        if self.start_ts_micros < 0 || self.start_ts_micros % MICROS_PER_SEC != 0 {
            return bad("start_ts_micros must be a non-negative whole second".into());
        }
        if self.probes == 0 {
            return bad("at least one probe is required".into());
        }
        if self.address_pool.len() < 2 {
            return bad("address pool needs two or more addresses".into());
        }
        if !(0.0..=1.0).contains(&self.duplicate_prob) || (self.duplicate_prob > 0.0 && self.probes < 2) {
            return bad("duplicate_prob must be in [0, 1] and needs two probes".into());
        }
        if !(self.power_factor > MIN_POWER_FACTOR && self.power_factor <= 1.0) {
            return bad(format!("power_factor {} not in ({MIN_POWER_FACTOR}, 1]", self.power_factor));
        }
        for (i, s) in self.segments.iter().enumerate() {
            if s.length_s == 0 || s.length_s % STEP_S != 0 {
                return bad(format!("segment {i}: length {} is not a positive multiple of {STEP_S} s", s.length_s));
            }
            if !(s.traffic_mean_pps > 0.0 && s.power_mean_w > 0.0) {
                return bad(format!("segment {i}: means must be positive"));
            }
            if !(-1.0..=1.0).contains(&s.target_rho) {
                return bad(format!("segment {i}: target_rho {} outside [-1, 1]", s.target_rho));
            }
            if !s.mode.allows(s.target_rho) {
                return bad(format!("segment {i}: {:?} contradicts target_rho {}", s.mode, s.target_rho));
            }
            if !(s.traffic_sd() >= 0.0 && s.power_sd() >= 0.0) {
                return bad(format!("segment {i}: negative noise"));
            }
        }
        Ok(())
    }
}

/// The 10-second process behind a scenario, before packet realization.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrace {
    pub start_ts_micros: i64,
    /// Mean packet rate of each 10-second step.
    pub traffic_pps: Vec<f64>,
    /// One reading per step, stamped at the step's end.
    pub power: Vec<PowerSample<f64>>,
    pub seed: u64,
    faults_applied: u64,
}

impl SyntheticTrace {
    pub fn end_ts_micros(&self) -> i64 {
        self.start_ts_micros + (self.traffic_pps.len() as u64 * STEP_S) as i64 * MICROS_PER_SEC
    }

    fn step_end(&self, k: usize) -> i64 {
        self.start_ts_micros + ((k as u64 + 1) * STEP_S) as i64 * MICROS_PER_SEC
    }

    /// Steps whose reading falls in `(start, end]`.
    fn steps_in(&self, start: i64, end: i64) -> std::ops::Range<usize> {
        let first = (0..self.traffic_pps.len()).find(|&k| self.step_end(k) > start);
        let last = (0..self.traffic_pps.len()).rev().find(|&k| self.step_end(k) <= end);
        match (first, last) {
            (Some(a), Some(b)) if a <= b => a..b + 1,
            _ => 0..0,
        }
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn normals(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

/// Centers `v`, removes its projection on each of `against` (assumed
/// orthonormal in the population sense) and scales it to unit population
/// variance. Degenerate input becomes all zeros.
fn whiten(v: &mut [f64], against: &[&[f64]]) {
    let n = v.len() as f64;
    if v.is_empty() {
        return;
    }
    let mean = v.iter().sum::<f64>() / n;
    v.iter_mut().for_each(|x| *x -= mean);
    for a in against {
        let proj = v.iter().zip(a.iter()).map(|(x, y)| x * y).sum::<f64>() / n;
        v.iter_mut().zip(a.iter()).for_each(|(x, y)| *x -= proj * y);
    }
    let sd = (v.iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    if sd > 1e-9 {
        v.iter_mut().for_each(|x| *x /= sd);
    } else {
        v.iter_mut().for_each(|x| *x = 0.0);
    }
}

fn reactive_for(active_w: f64, pf: f64) -> (f64, f64) {
    let phi = pf.clamp(0.0, 1.0).acos();
    (active_w * phi.tan(), phi.to_degrees())
}

/// Draws the 10-second process for `spec`, faults not applied.
pub fn synthesize(spec: &ScenarioSpec) -> Result<SyntheticTrace, SynthError> {
    spec.validate()?;
    let mut r = rng(spec.seed, 0);
    let mut traffic = Vec::new();
    let mut power = Vec::new();
    for seg in &spec.segments {
        let n = (seg.length_s / STEP_S) as usize;
        let mut x = normals(&mut r, n);
        let mut z = normals(&mut r, n);
        whiten(&mut x, &[]);
        whiten(&mut z, &[&x]);
        let rho = seg.target_rho;
        let c = (1.0 - rho * rho).max(0.0).sqrt();
        for i in 0..n {
            let y = rho * x[i] + c * z[i];
            traffic.push((seg.traffic_mean_pps + seg.traffic_sd() * x[i]).max(0.0));
            let p = (seg.power_mean_w + seg.power_sd() * y).max(0.0);
            let k = power.len();
            let (q, phase) = reactive_for(p, spec.power_factor);
            power.push(PowerSample {
                ts_micros: spec.start_ts_micros + ((k as u64 + 1) * STEP_S) as i64 * MICROS_PER_SEC,
                active_w: p,
                reactive_var: q,
                phase_displacement_deg: phase,
            });
        }
    }
    Ok(SyntheticTrace {
        start_ts_micros: spec.start_ts_micros,
        traffic_pps: traffic,
        power,
        seed: spec.seed,
        faults_applied: 0,
    })
}

/// Applies one fault to the 10-second process.
///
/// * CpuLoop: traffic scaled by `1 - traffic_fraction`; when `magnitude` is
///   nonzero, power is replaced by its interval mean plus `magnitude` watts
///   plus noise of the original spread that is uncorrelated with traffic.
/// * PsuPowerFactorDecay: reactive power grows so the power factor falls
///   linearly by `magnitude` per hour from the fault start; the final level
///   persists after the interval.
/// * TrafficFlood: packet rate multiplied by `1 + magnitude`, power untouched.
pub fn inject(trace: &SyntheticTrace, fault: &FaultSpec) -> Result<SyntheticTrace, SynthError> {
    let (start, end) = (fault.start_ts, fault.end_ts());
    if start < trace.start_ts_micros || end > trace.end_ts_micros() || fault.duration_s == 0 {
        return Err(SynthError::OutOfRange(format!(
            "[{start}, {end}] not inside [{}, {}]",
            trace.start_ts_micros,
            trace.end_ts_micros()
        )));
    }
    if !fault.magnitude.is_finite() || !(0.0..=1.0).contains(&fault.traffic_fraction) {
        return Err(SynthError::OutOfRange("magnitude must be finite, traffic_fraction in [0, 1]".into()));
    }
    let mut out = trace.clone();
    out.faults_applied += 1;
    let steps = out.steps_in(start, end);
    match fault.kind {
        FaultKind::TrafficFlood => {
            if fault.magnitude < -1.0 {
                return Err(SynthError::OutOfRange("flood factor below -1".into()));
            }
            for k in steps {
                out.traffic_pps[k] *= 1.0 + fault.magnitude;
            }
        }
        FaultKind::CpuLoop => {
            for k in steps.clone() {
                out.traffic_pps[k] *= 1.0 - fault.traffic_fraction;
            }
            if fault.magnitude != 0.0 && !steps.is_empty() {
                let n = steps.len() as f64;
                let p: Vec<f64> = steps.clone().map(|k| out.power[k].active_w).collect();
                let mean = p.iter().sum::<f64>() / n;
                let sd = (p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                let mut x: Vec<f64> = steps.clone().map(|k| out.traffic_pps[k]).collect();
                whiten(&mut x, &[]);
                let mut r = rng(out.seed, 1 + out.faults_applied);
                let mut w = normals(&mut r, steps.len());
                whiten(&mut w, &[&x]);
                for (i, k) in steps.enumerate() {
                    let s = &mut out.power[k];
                    let pf = s.derived().power_factor;
                    s.active_w = (mean + fault.magnitude + sd * w[i]).max(0.0);
                    (s.reactive_var, s.phase_displacement_deg) = reactive_for(s.active_w, pf);
                }
            }
        }
        FaultKind::PsuPowerFactorDecay => {
            let decay = |ts: i64| fault.magnitude * (ts.min(end) - start).max(0) as f64 / MICROS_PER_HOUR as f64;
            for s in out.power.iter_mut().filter(|s| s.ts_micros > start) {
                let pf = s.derived().power_factor - decay(s.ts_micros);
                if !(pf > MIN_POWER_FACTOR && pf <= 1.0) {
                    return Err(SynthError::OutOfRange(format!(
                        "power factor would reach {pf} at {}",
                        s.ts_micros
                    )));
                }
                (s.reactive_var, s.phase_displacement_deg) = reactive_for(s.active_w, pf);
            }
        }
    }
    Ok(out)
}

/// Rounds each step's rate to a packet total and spreads it evenly over the
/// step's ten seconds.
pub fn per_second_counts(trace: &SyntheticTrace) -> Vec<u64> {
    let mut out = Vec::with_capacity(trace.traffic_pps.len() * STEP_S as usize);
    for &rate in &trace.traffic_pps {
        let total = (rate * STEP_S as f64).round() as u64;
        for j in 0..STEP_S {
            out.push((j + 1) * total / STEP_S - j * total / STEP_S);
        }
    }
    out
}

/// Emits packets for every second and distributes them over the probes.
/// Each returned stream is time ordered; sequence numbers are the order
/// within the probe, as a capture file would give them.
pub fn realize_packets(spec: &ScenarioSpec, trace: &SyntheticTrace) -> Vec<CaptureStream> {
    let mut r = rng(spec.seed, 1);
    let mut per_probe: Vec<Vec<PacketRecord>> = vec![Vec::new(); spec.probes as usize];
    let pool = &spec.address_pool;
    for (sec, count) in per_second_counts(trace).into_iter().enumerate() {
        let base = trace.start_ts_micros + sec as i64 * MICROS_PER_SEC;
        for _ in 0..count {
            let src = r.random_range(0..pool.len());
            let mut dst = r.random_range(0..pool.len() - 1);
            if dst >= src {
                dst += 1;
            }
            let transport = match r.random_range(0..100u32) {
                0..60 => Transport::Tcp,
                60..95 => Transport::Udp,
                _ => Transport::Icmp,
            };
            let rec = PacketRecord {
                ts_micros: base + r.random_range(0..MICROS_PER_SEC),
                src_addr: pool[src],
                dst_addr: pool[dst],
                transport,
                wire_len: r.random_range(64..=1500),
                ip_id: r.random(),
                source_probe: 0,
                seq_in_probe: 0,
            };
            let probe = r.random_range(0..spec.probes);
            per_probe[probe as usize].push(PacketRecord { source_probe: probe, ..rec });
            if spec.duplicate_prob > 0.0 && r.random_bool(spec.duplicate_prob) {
                let mut other = r.random_range(0..spec.probes - 1);
                if other >= probe {
                    other += 1;
                }
                let jitter = r.random_range(0..1000);
                per_probe[other as usize].push(PacketRecord {
                    ts_micros: rec.ts_micros + jitter,
                    source_probe: other,
                    ..rec
                });
            }
        }
    }
    per_probe
        .into_iter()
        .enumerate()
        .map(|(id, mut recs)| {
            recs.sort_by_key(|p| p.ts_micros);
            for (i, p) in recs.iter_mut().enumerate() {
                p.seq_in_probe = i as u64;
            }
            CaptureStream {
                probe_id: id as ProbeId,
                records: recs,
                clock_offset_micros: 0,
            }
        })
        .collect()
}

/// A fully generated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub trace: SyntheticTrace,
    pub streams: Vec<CaptureStream>,
}

impl Generated {
    pub fn power(&self) -> &[PowerSample<f64>] {
        &self.trace.power
    }
}

/// Synthesizes, applies the scenario's faults in order and realizes packets.
pub fn generate(spec: &ScenarioSpec) -> Result<Generated, SynthError> {
    let mut trace = synthesize(spec)?;
    for f in &spec.faults {
        trace = inject(&trace, f)?;
    }
    let streams = realize_packets(spec, &trace);
    Ok(Generated { trace, streams })
}

pub fn pcap_file_name(probe: ProbeId) -> String {
    format!("probe-{probe}.pcap")
}

/// Writes `probe-<id>.pcap` per probe and `power.csv` into `dir`; returns
/// the written paths, pcaps first.
pub fn write_outputs(generated: &Generated, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>, SynthError> {
    let dir = dir.as_ref();
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mut written = Vec::new();
    for s in &generated.streams {
        let path = dir.join(pcap_file_name(s.probe_id));
        let file = fs::File::create(&path).map_err(io(&path))?;
        let mut w = PcapWriter::new(BufWriter::new(file)).map_err(io(&path))?;
        for rec in &s.records {
            w.write_record(rec).map_err(io(&path))?;
        }
        use std::io::Write;
        w.into_inner().flush().map_err(io(&path))?;
        written.push(path);
    }
    let path = dir.join(POWER_LOG_FILE);
    let file = fs::File::create(&path).map_err(io(&path))?;
    write_power_log(BufWriter::new(file), generated.power())?;
    written.push(path);
    Ok(written)
}
