//! Per-case transform table: one row per slice, fixed 9-decimal formatting.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::RigidParams;

pub const HEADER: [&str; 11] = [
    "case_id", "slice_id", "tx_mm", "ty_mm", "tz_mm", "rx_deg", "ry_deg", "rz_deg", "cx_mm",
    "cy_mm", "cz_mm",
];

#[derive(Debug, Clone, PartialEq)]
pub struct TransformRow {
    pub case_id: String,
    pub slice_id: String,
    pub params: RigidParams,
}

fn fmt_value(v: f64) -> String {
    let s = format!("{v:.9}");
    // Avoid writing negative zero so identical transforms serialize identically.
    if s.trim_start_matches('-').bytes().all(|b| b == b'0' || b == b'.') {
        s.trim_start_matches('-').to_string()
    } else {
        s
    }
}

/// `p` as it reads back from a transform CSV.
pub fn quantize(p: &RigidParams) -> RigidParams {
    let q = |v: f64| fmt_value(v).parse::<f64>().unwrap_or(v);
    RigidParams {
        tx: q(p.tx),
        ty: q(p.ty),
        tz: q(p.tz),
        rx: q(p.rx),
        ry: q(p.ry),
        rz: q(p.rz),
        cx: q(p.cx),
        cy: q(p.cy),
        cz: q(p.cz),
    }
}

pub fn encode_transform_csv(case_id: &str, entries: &[(String, RigidParams)]) -> Result<Vec<u8>> {
    let mut seen = std::collections::HashSet::new();
    for (slice_id, _) in entries {
        if !seen.insert(slice_id.as_str()) {
            return Err(Error::InvalidParameter(format!("duplicate slice id `{slice_id}`")));
        }
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::InvalidParameter(e.to_string());
    w.write_record(HEADER).map_err(csv_err)?;
    for (slice_id, p) in entries {
        let mut record = vec![case_id.to_string(), slice_id.clone()];
        record.extend(
            [p.tx, p.ty, p.tz, p.rx, p.ry, p.rz, p.cx, p.cy, p.cz]
                .into_iter()
                .map(fmt_value),
        );
        w.write_record(&record).map_err(csv_err)?;
    }
    w.into_inner()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

pub fn write_transform_csv(
    case_id: &str,
    entries: &[(String, RigidParams)],
    path: impl AsRef<Path>,
) -> Result<()> {
    let bytes = encode_transform_csv(case_id, entries)?;
    super::write_atomic(path.as_ref(), &bytes)
}

pub fn decode_transform_csv(bytes: &[u8]) -> Result<Vec<TransformRow>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes);
    let header = r
        .headers()
        .map_err(|e| Error::MalformedCsv(e.to_string()))?
        .clone();
    if header.iter().ne(HEADER.iter().copied()) {
        return Err(Error::MalformedCsv(format!(
            "unexpected header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (line, record) in r.records().enumerate() {
        let record = record.map_err(|e| Error::MalformedCsv(e.to_string()))?;
        if record.len() != HEADER.len() {
            return Err(Error::MalformedCsv(format!(
                "row {} has {} columns, expected {}",
                line + 1,
                record.len(),
                HEADER.len()
            )));
        }
        let mut nums = [0f64; 9];
        for (k, slot) in nums.iter_mut().enumerate() {
            let field = &record[k + 2];
            *slot = field.trim().parse().map_err(|_| {
                Error::MalformedCsv(format!("row {}: `{field}` is not a number", line + 1))
            })?;
        }
        rows.push(TransformRow {
            case_id: record[0].to_string(),
            slice_id: record[1].to_string(),
            params: RigidParams {
                tx: nums[0],
                ty: nums[1],
                tz: nums[2],
                rx: nums[3],
                ry: nums[4],
                rz: nums[5],
                cx: nums[6],
                cy: nums[7],
                cz: nums[8],
            },
        });
    }
    Ok(rows)
}

pub fn read_transform_csv(path: impl AsRef<Path>) -> Result<Vec<TransformRow>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_transform_csv(&bytes)
}
