//! CSV and JSON persistence.
//!
//! Floats are written with Rust's shortest round-trip formatting, so reading
//! a file back yields bit-identical values and rewriting it yields identical
//! bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use imp_rg_core::imp::ImpRecord;
use imp_rg_core::nn::Mask;
use imp_rg_core::transfer::TransferRow;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::HarnessError;

/// Trace columns for a network with `layers` weight matrices.
pub fn trace_header(layers: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["iter", "density", "final_loss"].map(String::from).to_vec();
    cols.extend((0..layers).map(|l| format!("m_frac_layer{l}")));
    cols.extend((0..layers).map(|l| format!("surv_layer{l}")));
    cols
}

pub const TRANSFER_HEADER: [&str; 5] = [
    "source_iter",
    "density",
    "transferred_loss",
    "native_loss",
    "winning_flag",
];

fn writer(path: &Path) -> Result<csv::Writer<File>, HarnessError> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn reader(path: &Path) -> Result<csv::Reader<File>, HarnessError> {
    csv::Reader::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => HarnessError::io(path, io),
        other => HarnessError::format(path, format!("{other:?}")),
    }
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, field: &str) -> Result<T, HarnessError> {
    field
        .parse()
        .map_err(|_| HarnessError::format(path, format!("row {row}: cannot parse `{field}`")))
}

fn parse_optional(path: &Path, row: usize, field: &str) -> Result<Option<f64>, HarnessError> {
    if field.is_empty() {
        Ok(None)
    } else {
        parse(path, row, field).map(Some)
    }
}

pub fn write_trace(path: &Path, records: &[ImpRecord]) -> Result<(), HarnessError> {
    let layers = records.first().map_or(0, |r| r.surviving.len());
    let mut w = writer(path)?;
    w.write_record(trace_header(layers))
        .map_err(|e| csv_error(path, e))?;
    for r in records {
        if r.surviving.len() != layers || r.magnitude_fractions.len() != layers {
            return Err(HarnessError::format(
                path,
                "records disagree on layer count",
            ));
        }
        let mut row = vec![
            r.iteration.to_string(),
            r.density.to_string(),
            r.final_loss.to_string(),
        ];
        row.extend(r.magnitude_fractions.iter().map(f64::to_string));
        row.extend(r.surviving.iter().map(usize::to_string));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads a trace written by [`write_trace`]. The header must be exactly the
/// trace schema for some layer count; unknown or reordered columns are
/// rejected.
pub fn read_trace(path: &Path) -> Result<Vec<ImpRecord>, HarnessError> {
    let mut r = reader(path)?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header.len() < 3 || (header.len() - 3) % 2 != 0 {
        return Err(HarnessError::format(path, "unexpected trace columns"));
    }
    let layers = (header.len() - 3) / 2;
    if header != trace_header(layers) {
        return Err(HarnessError::format(
            path,
            format!("unknown trace columns: {}", header.join(",")),
        ));
    }
    let mut records = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let f: Vec<&str> = row.iter().collect();
        records.push(ImpRecord {
            iteration: parse(path, i, f[0])?,
            density: parse(path, i, f[1])?,
            final_loss: parse(path, i, f[2])?,
            magnitude_fractions: f[3..3 + layers]
                .iter()
                .map(|v| parse(path, i, v))
                .collect::<Result<_, _>>()?,
            surviving: f[3 + layers..]
                .iter()
                .map(|v| parse(path, i, v))
                .collect::<Result<_, _>>()?,
        });
    }
    Ok(records)
}

/// Per-iteration mask bits, packed four to a hex digit in flat weight order.
pub fn write_masks(path: &Path, masks: &[Mask]) -> Result<(), HarnessError> {
    let mut w = writer(path)?;
    w.write_record(["iter", "bits"])
        .map_err(|e| csv_error(path, e))?;
    for (i, m) in masks.iter().enumerate() {
        w.write_record([i.to_string(), encode_bits(m.bits())])
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_masks(path: &Path, shapes: &[(usize, usize)]) -> Result<Vec<Mask>, HarnessError> {
    let len: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().collect::<Vec<_>>() != ["iter", "bits"] {
        return Err(HarnessError::format(path, "unknown mask columns"));
    }
    let mut masks = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let iter: usize = parse(path, i, &row[0])?;
        if iter != i {
            return Err(HarnessError::format(
                path,
                format!("row {i}: iteration {iter}"),
            ));
        }
        let bits = decode_bits(&row[1], len)
            .ok_or_else(|| HarnessError::format(path, format!("row {i}: bad mask bits")))?;
        masks.push(Mask::from_bits(shapes.to_vec(), bits)?);
    }
    Ok(masks)
}

fn encode_bits(bits: &[bool]) -> String {
    bits.chunks(4)
        .map(|c| {
            let v = c
                .iter()
                .enumerate()
                .fold(0u32, |acc, (i, &b)| acc | (b as u32) << (3 - i));
            char::from_digit(v, 16).unwrap()
        })
        .collect()
}

fn decode_bits(text: &str, len: usize) -> Option<Vec<bool>> {
    if text.len() != len.div_ceil(4) {
        return None;
    }
    let mut bits = Vec::with_capacity(text.len() * 4);
    for ch in text.chars() {
        let v = ch.to_digit(16)?;
        bits.extend((0..4).map(|i| v >> (3 - i) & 1 == 1));
    }
    // Padding bits past the end must be clear.
    if bits[len..].iter().any(|&b| b) {
        return None;
    }
    bits.truncate(len);
    Some(bits)
}

/// Mean and standard error per iteration across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsRow {
    pub iteration: usize,
    pub density: f64,
    pub runs: usize,
    pub loss_mean: f64,
    pub loss_stderr: f64,
    pub m_frac_mean: Vec<f64>,
    pub m_frac_stderr: Vec<f64>,
}

pub fn write_stats(path: &Path, rows: &[StatsRow]) -> Result<(), HarnessError> {
    let layers = rows.first().map_or(0, |r| r.m_frac_mean.len());
    let mut header: Vec<String> = ["iter", "density", "runs", "loss_mean", "loss_stderr"]
        .map(String::from)
        .to_vec();
    for l in 0..layers {
        header.push(format!("m_frac_layer{l}_mean"));
        header.push(format!("m_frac_layer{l}_stderr"));
    }
    let mut w = writer(path)?;
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        let mut row = vec![
            r.iteration.to_string(),
            r.density.to_string(),
            r.runs.to_string(),
            r.loss_mean.to_string(),
            r.loss_stderr.to_string(),
        ];
        for (m, s) in r.m_frac_mean.iter().zip(&r.m_frac_stderr) {
            row.push(m.to_string());
            row.push(s.to_string());
        }
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_transfer(path: &Path, rows: &[TransferRow]) -> Result<(), HarnessError> {
    let mut w = writer(path)?;
    w.write_record(TRANSFER_HEADER)
        .map_err(|e| csv_error(path, e))?;
    let opt = |v: Option<f64>| v.map_or_else(String::new, |v| v.to_string());
    for r in rows {
        w.write_record([
            r.source_iter.to_string(),
            r.density.to_string(),
            opt(r.transferred_loss),
            opt(r.native_loss),
            (r.winning as u8).to_string(),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads a comparison table. The file does not carry the paired native
/// density, so `native_density` comes back empty.
pub fn read_transfer(path: &Path) -> Result<Vec<TransferRow>, HarnessError> {
    let mut r = reader(path)?;
    let header = r.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().collect::<Vec<_>>() != TRANSFER_HEADER {
        return Err(HarnessError::format(path, "unknown transfer columns"));
    }
    let mut rows = Vec::new();
    for (i, row) in r.records().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let winning = match &row[4] {
            "0" => false,
            "1" => true,
            other => {
                return Err(HarnessError::format(
                    path,
                    format!("row {i}: flag `{other}`"),
                ))
            }
        };
        rows.push(TransferRow {
            source_iter: parse(path, i, &row[0])?,
            density: parse(path, i, &row[1])?,
            transferred_loss: parse_optional(path, i, &row[2])?,
            native_density: None,
            native_loss: parse_optional(path, i, &row[3])?,
            winning,
        });
    }
    Ok(rows)
}

/// Writes a plain numeric table.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<(), HarnessError> {
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string))
            .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| HarnessError::format(path, e.to_string()))?;
    out.write_all(b"\n")
        .map_err(|e| HarnessError::io(path, e))?;
    out.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::format(path, e.to_string()))
}

pub fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(|e| HarnessError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_packing_round_trips() {
        for len in [1, 4, 5, 7, 50] {
            let bits: Vec<bool> = (0..len).map(|i| (i * 7) % 3 == 0).collect();
            assert_eq!(decode_bits(&encode_bits(&bits), len).unwrap(), bits);
        }
    }

    #[test]
    fn stray_padding_bits_are_rejected() {
        assert!(decode_bits("f", 3).is_none());
        assert_eq!(decode_bits("e", 3).unwrap(), vec![true, true, true]);
    }

    #[test]
    fn trace_header_matches_schema() {
        assert_eq!(
            trace_header(3).join(","),
            "iter,density,final_loss,m_frac_layer0,m_frac_layer1,m_frac_layer2,\
             surv_layer0,surv_layer1,surv_layer2"
        );
    }
}
