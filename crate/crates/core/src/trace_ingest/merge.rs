use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use super::{CaptureStream, PacketRecord, ProbeId, TraceError};

/// Head of one input: its merge key and the input index.
type Head = ((i64, ProbeId, u64), usize);

/// K-way merge of per-probe streams into one stream ordered by
/// `(ts_micros, source_probe, seq_in_probe)`.
///
/// Every input must already be ordered; the first violation is reported as
/// [`TraceError::UnorderedInput`] before any merging happens.
pub fn merge_streams(streams: Vec<CaptureStream>) -> Result<Vec<PacketRecord>, TraceError> {
    let mut probes = HashSet::with_capacity(streams.len());
    for s in &streams {
        if !probes.insert(s.probe_id) {
            return Err(TraceError::DuplicateProbe(s.probe_id));
        }
        if let Some(index) = s.records.iter().position(|r| r.source_probe != s.probe_id) {
            return Err(TraceError::ProbeMismatch {
                probe: s.probe_id,
                index,
                found: s.records[index].source_probe,
            });
        }
        if let Some(index) = s.first_disorder() {
            return Err(TraceError::UnorderedInput {
                probe: s.probe_id,
                index,
            });
        }
    }

    let mut non_empty: Vec<Vec<PacketRecord>> = streams
        .into_iter()
        .map(|s| s.records)
        .filter(|r| !r.is_empty())
        .collect();
    match non_empty.len() {
        0 => return Ok(Vec::new()),
        1 => return Ok(non_empty.pop().unwrap_or_default()),
        _ => {}
    }

    let total = non_empty.iter().map(Vec::len).sum();
    let mut out = Vec::with_capacity(total);
    let mut cursors = vec![0usize; non_empty.len()];
    let mut heap: BinaryHeap<Reverse<Head>> = non_empty
        .iter()
        .enumerate()
        .map(|(i, s)| Reverse((s[0].merge_key(), i)))
        .collect();

    while let Some(Reverse((_, i))) = heap.pop() {
        let stream = &non_empty[i];
        let rec = stream[cursors[i]];
        out.push(rec);
        cursors[i] += 1;
        // Drain this stream while it stays ahead of every other head.
        let bound = heap.peek().map(|Reverse((k, _))| *k);
        while let Some(next) = stream.get(cursors[i]) {
            match bound {
                Some(b) if next.merge_key() > b => break,
                _ => {
                    out.push(*next);
                    cursors[i] += 1;
                }
            }
        }
        if let Some(next) = stream.get(cursors[i]) {
            heap.push(Reverse((next.merge_key(), i)));
        }
    }
    Ok(out)
}
