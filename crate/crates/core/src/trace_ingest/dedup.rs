use std::collections::{HashMap, VecDeque};
use std::net::Ipv4Addr;

use super::{PacketRecord, ProbeId, Transport};

/// Suggested window when deduplication is switched on.
pub const DEFAULT_DEDUP_WINDOW_MICROS: i64 = 1_000;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
struct Fingerprint {
    src: Ipv4Addr,
    dst: Ipv4Addr,
    transport: Transport,
    wire_len: u32,
    ip_id: u16,
}

impl From<&PacketRecord> for Fingerprint {
    fn from(r: &PacketRecord) -> Self {
        Self {
            src: r.src_addr,
            dst: r.dst_addr,
            transport: r.transport,
            wire_len: r.wire_len,
            ip_id: r.ip_id,
        }
    }
}

/// Drops copies of a packet seen by more than one probe.
///
/// A record is dropped when an already kept record from a *different* probe
/// has the same `(src, dst, transport, wire_len, ip_id)` and lies at most
/// `window_micros` earlier. Same-probe matches never remove anything.
/// Deciding only against kept records makes the operation idempotent.
pub fn deduplicate(stream: &[PacketRecord], window_micros: i64) -> Vec<PacketRecord> {
    let window = window_micros.max(0);
    let mut out = Vec::with_capacity(stream.len());
    let mut recent: HashMap<Fingerprint, VecDeque<(i64, ProbeId)>> = HashMap::new();
    let mut expiry: VecDeque<(i64, Fingerprint)> = VecDeque::new();

    for rec in stream {
        while let Some(&(ts, fp)) = expiry.front() {
            if ts >= rec.ts_micros - window {
                break;
            }
            expiry.pop_front();
            if let Some(q) = recent.get_mut(&fp) {
                q.pop_front();
                if q.is_empty() {
                    recent.remove(&fp);
                }
            }
        }

        let fp = Fingerprint::from(rec);
        let seen_elsewhere = recent
            .get(&fp)
            .is_some_and(|q| q.iter().any(|&(_, p)| p != rec.source_probe));
        if seen_elsewhere {
            continue;
        }
        recent.entry(fp).or_default().push_back((rec.ts_micros, rec.source_probe));
        expiry.push_back((rec.ts_micros, fp));
        out.push(*rec);
    }
    out
}
