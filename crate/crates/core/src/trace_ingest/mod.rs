//! Packet-capture ingestion: per-probe pcap parsing, multi-probe merge and
//! cross-probe deduplication.
//!
//! Each probe sniffs one switch of the enclosure and produces its own capture.
//! Captures are parsed independently into [`CaptureStream`]s, then merged into a
//! single stream totally ordered by `(ts_micros, source_probe, seq_in_probe)`.

mod dedup;
mod merge;
mod pcap;
mod profile;
mod stream_csv;

use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dedup::{deduplicate, DEFAULT_DEDUP_WINDOW_MICROS};
pub use merge::merge_streams;
pub use pcap::{encode_frame, parse_pcap, parse_pcap_bytes, ParsedCapture, PcapWriter};
pub use profile::EnclosureProfile;
pub use stream_csv::{read_stream_csv, write_stream_csv, STREAM_CSV_HEADER};

/// Probe identifier. Probes are numbered with small integers.
pub type ProbeId = u16;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("malformed pcap global header: {0}")]
    MalformedHeader(String),
    #[error("unsupported pcap link type {0}")]
    UnsupportedLinkType(u32),
    #[error("stream of probe {probe} is not ordered at record {index}")]
    UnorderedInput { probe: ProbeId, index: usize },
    #[error("probe {0} appears in more than one input stream")]
    DuplicateProbe(ProbeId),
    #[error("record {index} of stream {probe} carries source_probe {found}")]
    ProbeMismatch { probe: ProbeId, index: usize, found: ProbeId },
    #[error("clock offset moves record {index} of probe {probe} before the epoch")]
    NegativeTimestamp { probe: ProbeId, index: usize },
    #[error("invalid enclosure profile: {0}")]
    InvalidProfile(String),
    #[error("stream csv row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Transport protocol of an IPv4 packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Transport {
    Tcp,
    Udp,
    Icmp,
    Other,
}

impl Transport {
    pub fn from_ip_protocol(proto: u8) -> Self {
        match proto {
            6 => Transport::Tcp,
            17 => Transport::Udp,
            1 => Transport::Icmp,
            _ => Transport::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Transport::Tcp => "TCP",
            Transport::Udp => "UDP",
            Transport::Icmp => "ICMP",
            Transport::Other => "OTHER",
        }
    }
}

impl fmt::Display for Transport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Transport {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "TCP" => Ok(Transport::Tcp),
            "UDP" => Ok(Transport::Udp),
            "ICMP" => Ok(Transport::Icmp),
            "OTHER" => Ok(Transport::Other),
            other => Err(format!("unknown transport {other:?}")),
        }
    }
}

/// One captured IPv4 frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PacketRecord {
    /// Microseconds since the Unix epoch, after clock offset correction.
    pub ts_micros: i64,
    pub src_addr: Ipv4Addr,
    pub dst_addr: Ipv4Addr,
    pub transport: Transport,
    /// Bytes on the wire (pcap `orig_len`).
    pub wire_len: u32,
    pub ip_id: u16,
    pub source_probe: ProbeId,
    /// Position of the record in its probe's capture file, from 0.
    pub seq_in_probe: u64,
}

impl PacketRecord {
    /// Total ordering key of the merged stream.
    #[inline]
    pub fn merge_key(&self) -> (i64, ProbeId, u64) {
        (self.ts_micros, self.source_probe, self.seq_in_probe)
    }
}

/// Records captured by a single probe.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CaptureStream {
    pub probe_id: ProbeId,
    pub records: Vec<PacketRecord>,
    pub clock_offset_micros: i64,
}

impl CaptureStream {
    pub fn new(probe_id: ProbeId, clock_offset_micros: i64) -> Self {
        Self {
            probe_id,
            records: Vec::new(),
            clock_offset_micros,
        }
    }

    /// Index of the first record that breaks `(ts_micros, seq_in_probe)` ordering.
    pub fn first_disorder(&self) -> Option<usize> {
        self.records
            .windows(2)
            .position(|w| (w[0].ts_micros, w[0].seq_in_probe) >= (w[1].ts_micros, w[1].seq_in_probe))
            .map(|i| i + 1)
    }

    pub fn is_ordered(&self) -> bool {
        self.first_disorder().is_none()
    }

    /// Stable sort by timestamp. Captures written by busy sniffers can carry
    /// small reorderings; sequence numbers keep their file-order meaning.
    pub fn sort_by_time(&mut self) {
        self.records.sort_by_key(|r| (r.ts_micros, r.seq_in_probe));
    }
}

/// Unordered pair of distinct addresses, stored low address first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AddrPair {
    lo: Ipv4Addr,
    hi: Ipv4Addr,
}

impl AddrPair {
    /// Returns `None` when both addresses are equal.
    pub fn new(a: Ipv4Addr, b: Ipv4Addr) -> Option<Self> {
        match a.cmp(&b) {
            std::cmp::Ordering::Less => Some(Self { lo: a, hi: b }),
            std::cmp::Ordering::Greater => Some(Self { lo: b, hi: a }),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn lo(&self) -> Ipv4Addr {
        self.lo
    }

    pub fn hi(&self) -> Ipv4Addr {
        self.hi
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        self.lo == addr || self.hi == addr
    }
}

impl fmt::Display for AddrPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.lo, self.hi)
    }
}

impl FromStr for AddrPair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s
            .split_once('|')
            .ok_or_else(|| format!("expected <ip>|<ip>, got {s:?}"))?;
        let a: Ipv4Addr = a.trim().parse().map_err(|e| format!("{a:?}: {e}"))?;
        let b: Ipv4Addr = b.trim().parse().map_err(|e| format!("{b:?}: {e}"))?;
        AddrPair::new(a, b).ok_or_else(|| format!("couple {s:?} repeats the same address"))
    }
}
