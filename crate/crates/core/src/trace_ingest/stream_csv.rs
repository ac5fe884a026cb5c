//! Text form of a merged packet stream, one record per line.

use std::io::{Read, Write};
use std::str::FromStr;

use super::{PacketRecord, TraceError};

pub const STREAM_CSV_HEADER: [&str; 8] = [
    "ts_micros",
    "src_addr",
    "dst_addr",
    "transport",
    "wire_len",
    "ip_id",
    "source_probe",
    "seq_in_probe",
];

pub fn write_stream_csv<W: Write>(out: W, records: &[PacketRecord]) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(STREAM_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.ts_micros.to_string(),
            r.src_addr.to_string(),
            r.dst_addr.to_string(),
            r.transport.to_string(),
            r.wire_len.to_string(),
            r.ip_id.to_string(),
            r.source_probe.to_string(),
            r.seq_in_probe.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, row: u64) -> Result<T, TraceError>
where
    T::Err: std::fmt::Display,
{
    let raw = rec.get(i).unwrap_or_default();
    raw.trim().parse().map_err(|e: T::Err| TraceError::MalformedRow {
        row,
        reason: format!("column {}: {raw:?}: {e}", STREAM_CSV_HEADER[i]),
    })
}

pub fn read_stream_csv<R: Read>(input: R) -> Result<Vec<PacketRecord>, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(STREAM_CSV_HEADER) {
        return Err(TraceError::MalformedRow {
            row: 0,
            reason: format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>()),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i as u64 + 1;
        if rec.len() != STREAM_CSV_HEADER.len() {
            return Err(TraceError::MalformedRow {
                row,
                reason: format!("expected {} fields, found {}", STREAM_CSV_HEADER.len(), rec.len()),
            });
        }
        out.push(PacketRecord {
            ts_micros: field(&rec, 0, row)?,
            src_addr: field(&rec, 1, row)?,
            dst_addr: field(&rec, 2, row)?,
            transport: field(&rec, 3, row)?,
            wire_len: field(&rec, 4, row)?,
            ip_id: field(&rec, 5, row)?,
            source_probe: field(&rec, 6, row)?,
            seq_in_probe: field(&rec, 7, row)?,
        });
    }
    Ok(out)
}
