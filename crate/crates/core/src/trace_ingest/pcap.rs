//! libpcap file reader and a minimal writer.
//!
//! Layout: a 24-byte global header (magic, version, thiszone, sigfigs, snaplen,
//! linktype) followed by records, each with a 16-byte header
//! (`ts_sec, ts_usec, incl_len, orig_len`) and `incl_len` captured bytes.

use std::io::Write;
use std::net::Ipv4Addr;
use std::path::Path;

use super::{CaptureStream, PacketRecord, ProbeId, TraceError, Transport};

const MAGIC_MICROS: u32 = 0xa1b2_c3d4;
const MAGIC_NANOS: u32 = 0xa1b2_3c4d;
const GLOBAL_HEADER_LEN: usize = 24;
const RECORD_HEADER_LEN: usize = 16;

const LINKTYPE_ETHERNET: u32 = 1;
const LINKTYPE_RAW: u32 = 101;
const DLT_RAW_BSD: u32 = 12;
const DLT_RAW_OPENBSD: u32 = 14;
const LINKTYPE_LINUX_SLL: u32 = 113;

const ETHERTYPE_IPV4: u16 = 0x0800;
const ETHERTYPE_VLAN: u16 = 0x8100;
const ETHERTYPE_QINQ: u16 = 0x88a8;

/// Result of parsing one capture file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedCapture {
    pub stream: CaptureStream,
    /// Frames that are not IPv4 or are too short to hold an IPv4 header.
    pub skipped_frames: u64,
    /// Set when a record header claimed more bytes than remained in the file.
    /// Parsing stops there and `stream` holds everything read before it.
    pub truncated: bool,
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

impl Endian {
    fn u32(self, b: &[u8]) -> u32 {
        let a = [b[0], b[1], b[2], b[3]];
        match self {
            Endian::Little => u32::from_le_bytes(a),
            Endian::Big => u32::from_be_bytes(a),
        }
    }
}

pub fn parse_pcap(
    path: impl AsRef<Path>,
    probe_id: ProbeId,
    clock_offset_micros: i64,
) -> Result<ParsedCapture, TraceError> {
    let bytes = std::fs::read(path)?;
    parse_pcap_bytes(&bytes, probe_id, clock_offset_micros)
}

pub fn parse_pcap_bytes(
    bytes: &[u8],
    probe_id: ProbeId,
    clock_offset_micros: i64,
) -> Result<ParsedCapture, TraceError> {
    if bytes.len() < GLOBAL_HEADER_LEN {
        return Err(TraceError::MalformedHeader(format!(
            "file holds {} bytes, global header needs {GLOBAL_HEADER_LEN}",
            bytes.len()
        )));
    }
    let le_magic = u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    let (endian, nanos) = match le_magic {
        MAGIC_MICROS => (Endian::Little, false),
        MAGIC_NANOS => (Endian::Little, true),
        m if m.swap_bytes() == MAGIC_MICROS => (Endian::Big, false),
        m if m.swap_bytes() == MAGIC_NANOS => (Endian::Big, true),
        m => return Err(TraceError::MalformedHeader(format!("bad magic 0x{m:08x}"))),
    };
    let linktype = endian.u32(&bytes[20..24]) & 0x0fff_ffff;
    if !matches!(
        linktype,
        LINKTYPE_ETHERNET | LINKTYPE_RAW | DLT_RAW_BSD | DLT_RAW_OPENBSD | LINKTYPE_LINUX_SLL
    ) {
        return Err(TraceError::UnsupportedLinkType(linktype));
    }

    let mut out = ParsedCapture {
        stream: CaptureStream::new(probe_id, clock_offset_micros),
        skipped_frames: 0,
        truncated: false,
    };
    let mut pos = GLOBAL_HEADER_LEN;
    let mut seq: u64 = 0;
    while pos < bytes.len() {
        if bytes.len() - pos < RECORD_HEADER_LEN {
            out.truncated = true;
            break;
        }
        let hdr = &bytes[pos..pos + RECORD_HEADER_LEN];
        let ts_sec = endian.u32(&hdr[0..4]) as i64;
        let ts_frac = endian.u32(&hdr[4..8]) as i64;
        let incl_len = endian.u32(&hdr[8..12]) as usize;
        let orig_len = endian.u32(&hdr[12..16]);
        pos += RECORD_HEADER_LEN;
        if incl_len > bytes.len() - pos {
            out.truncated = true;
            break;
        }
        let frame = &bytes[pos..pos + incl_len];
        pos += incl_len;

        let this_seq = seq;
        seq += 1;
        let Some(ip) = ipv4_payload(frame, linktype) else {
            out.skipped_frames += 1;
            continue;
        };
        let Some(header) = Ipv4Header::parse(ip) else {
            out.skipped_frames += 1;
            continue;
        };
        let micros = if nanos { ts_frac / 1_000 } else { ts_frac };
        let ts = ts_sec * 1_000_000 + micros + clock_offset_micros;
        if ts < 0 {
            return Err(TraceError::NegativeTimestamp {
                probe: probe_id,
                index: out.stream.records.len(),
            });
        }
        out.stream.records.push(PacketRecord {
            ts_micros: ts,
            src_addr: header.src,
            dst_addr: header.dst,
            transport: Transport::from_ip_protocol(header.protocol),
            wire_len: orig_len,
            ip_id: header.id,
            source_probe: probe_id,
            seq_in_probe: this_seq,
        });
    }
    Ok(out)
}

fn ipv4_payload(frame: &[u8], linktype: u32) -> Option<&[u8]> {
    match linktype {
        LINKTYPE_ETHERNET => {
            let mut off = 12;
            loop {
                let ethertype = u16::from_be_bytes([*frame.get(off)?, *frame.get(off + 1)?]);
                match ethertype {
                    ETHERTYPE_VLAN | ETHERTYPE_QINQ => off += 4,
                    ETHERTYPE_IPV4 => return frame.get(off + 2..),
                    _ => return None,
                }
            }
        }
        LINKTYPE_LINUX_SLL => {
            let proto = u16::from_be_bytes([*frame.get(14)?, *frame.get(15)?]);
            (proto == ETHERTYPE_IPV4).then(|| frame.get(16..)).flatten()
        }
        _ => {
            // Raw IP: version nibble decides.
            (frame.first()? >> 4 == 4).then_some(frame)
        }
    }
}

struct Ipv4Header {
    id: u16,
    protocol: u8,
    src: Ipv4Addr,
    dst: Ipv4Addr,
}

impl Ipv4Header {
    fn parse(ip: &[u8]) -> Option<Self> {
        if ip.len() < 20 || ip[0] >> 4 != 4 || (ip[0] & 0x0f) < 5 {
            return None;
        }
        Some(Self {
            id: u16::from_be_bytes([ip[4], ip[5]]),
            protocol: ip[9],
            src: Ipv4Addr::new(ip[12], ip[13], ip[14], ip[15]),
            dst: Ipv4Addr::new(ip[16], ip[17], ip[18], ip[19]),
        })
    }
}

/// Builds the captured bytes of an Ethernet/IPv4 frame for `record`: link,
/// network and transport headers only, no payload.
pub fn encode_frame(record: &PacketRecord) -> Vec<u8> {
    let (proto, l4_len) = match record.transport {
        Transport::Tcp => (6u8, 20usize),
        Transport::Udp => (17, 8),
        Transport::Icmp => (1, 8),
        Transport::Other => (47, 0),
    };
    let mut f = Vec::with_capacity(14 + 20 + l4_len);
    f.extend_from_slice(&[0x02, 0, 0, 0, 0, 0x01, 0x02, 0, 0, 0, 0, 0x02]);
    f.extend_from_slice(&ETHERTYPE_IPV4.to_be_bytes());

    let ip_total = record.wire_len.saturating_sub(14).min(u16::MAX as u32) as u16;
    let mut ip = [0u8; 20];
    ip[0] = 0x45;
    ip[2..4].copy_from_slice(&ip_total.to_be_bytes());
    ip[4..6].copy_from_slice(&record.ip_id.to_be_bytes());
    ip[8] = 64;
    ip[9] = proto;
    ip[12..16].copy_from_slice(&record.src_addr.octets());
    ip[16..20].copy_from_slice(&record.dst_addr.octets());
    let checksum = ipv4_checksum(&ip);
    ip[10..12].copy_from_slice(&checksum.to_be_bytes());
    f.extend_from_slice(&ip);

    let mut l4 = vec![0u8; l4_len];
    if record.transport == Transport::Tcp {
        l4[12] = 0x50;
    }
    f.extend_from_slice(&l4);
    f
}

fn ipv4_checksum(header: &[u8; 20]) -> u16 {
    let mut sum: u32 = header
        .chunks_exact(2)
        .map(|w| u16::from_be_bytes([w[0], w[1]]) as u32)
        .sum();
    while sum > 0xffff {
        sum = (sum & 0xffff) + (sum >> 16);
    }
    !(sum as u16)
}

/// Little-endian, microsecond-resolution, Ethernet pcap writer.
pub struct PcapWriter<W: Write> {
    out: W,
}

impl<W: Write> PcapWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        let mut hdr = [0u8; GLOBAL_HEADER_LEN];
        hdr[0..4].copy_from_slice(&MAGIC_MICROS.to_le_bytes());
        hdr[4..6].copy_from_slice(&2u16.to_le_bytes());
        hdr[6..8].copy_from_slice(&4u16.to_le_bytes());
        hdr[16..20].copy_from_slice(&65_535u32.to_le_bytes());
        hdr[20..24].copy_from_slice(&LINKTYPE_ETHERNET.to_le_bytes());
        out.write_all(&hdr)?;
        Ok(Self { out })
    }

    /// Writes one record. `ts_micros` must not be negative.
    pub fn write_frame(&mut self, ts_micros: i64, frame: &[u8], orig_len: u32) -> std::io::Result<()> {
        let mut hdr = [0u8; RECORD_HEADER_LEN];
        hdr[0..4].copy_from_slice(&((ts_micros / 1_000_000) as u32).to_le_bytes());
        hdr[4..8].copy_from_slice(&((ts_micros % 1_000_000) as u32).to_le_bytes());
        hdr[8..12].copy_from_slice(&(frame.len() as u32).to_le_bytes());
        hdr[12..16].copy_from_slice(&orig_len.max(frame.len() as u32).to_le_bytes());
        self.out.write_all(&hdr)?;
        self.out.write_all(frame)
    }

    /// Writes `record` as a header-only snapshot with `orig_len = wire_len`.
    pub fn write_record(&mut self, record: &PacketRecord) -> std::io::Result<()> {
        let frame = encode_frame(record);
        self.write_frame(record.ts_micros, &frame, record.wire_len)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
