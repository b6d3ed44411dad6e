//! Dataset CSV: header `row,col,rssi_1,...,rssi_n`, one scan per line.
//! Empty `row`/`col` marks an unlabeled scan. Consecutive scans of the same
//! cell (or of the unlabeled pool) are grouped into bundles of three; a
//! trailing incomplete bundle is dropped.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::world::{check_reading, Cell, FingerprintSample, BUNDLE_SIZE};
use crate::error::{Error, Result};

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

fn check_header(header: &csv::StringRecord) -> Result<usize> {
    let fields: Vec<&str> = header.iter().collect();
    if fields.len() < 3 || fields[0] != "row" || fields[1] != "col" {
        return Err(parse_err(1, "header must start with `row,col,rssi_1`"));
    }
    for (k, f) in fields[2..].iter().enumerate() {
        if *f != format!("rssi_{}", k + 1) {
            return Err(parse_err(1, format!("expected column `rssi_{}`, found `{}`", k + 1, f)));
        }
    }
    Ok(fields.len() - 2)
}

/// Parses dataset CSV bytes into bundles.
pub fn parse_dataset(bytes: &[u8]) -> Result<Vec<FingerprintSample>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    let beacons = check_header(&headers)?;

    let mut pending: HashMap<Option<Cell>, Vec<Vec<f64>>> = HashMap::new();
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != beacons + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", beacons + 2, record.len()),
            ));
        }
        let label = match (&record[0], &record[1]) {
            ("", "") => None,
            ("", _) | (_, "") => return Err(parse_err(line, "row and col must both be set or both empty")),
            (r, c) => {
                let row = r
                    .parse::<usize>()
                    .map_err(|_| parse_err(line, format!("bad row `{r}`")))?;
                let col = c
                    .parse::<usize>()
                    .map_err(|_| parse_err(line, format!("bad col `{c}`")))?;
                Some(Cell::new(row, col))
            }
        };
        let mut rssi = Vec::with_capacity(beacons);
        for (k, field) in record.iter().skip(2).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("rssi_{}: `{}` is not a number", k + 1, field)))?;
            check_reading(v).map_err(|e| parse_err(line, format!("rssi_{}: {}", k + 1, e)))?;
            rssi.push(v);
        }
        let group = pending.entry(label).or_default();
        group.push(rssi);
        if group.len() == BUNDLE_SIZE {
            let mut it = std::mem::take(group).into_iter();
            let readings = [
                it.next().expect("3"),
                it.next().expect("3"),
                it.next().expect("3"),
            ];
            out.push(FingerprintSample::new(readings, label).map_err(|e| parse_err(line, e.to_string()))?);
        }
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<FingerprintSample>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes)
}

/// Serializes bundles; the three readings of each sample are written on
/// consecutive lines so that [`parse_dataset`] regroups them identically.
pub fn write_dataset<W: Write>(out: W, samples: &[FingerprintSample]) -> Result<()> {
    let beacons = samples.first().map(FingerprintSample::beacon_count).unwrap_or(13);
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let mut header = vec!["row".to_string(), "col".to_string()];
    header.extend((1..=beacons).map(|k| format!("rssi_{k}")));
    w.write_record(&header)?;
    for s in samples {
        if s.beacon_count() != beacons {
            return Err(Error::invalid("samples disagree on beacon count"));
        }
        let (r, c) = match s.label {
            Some(cell) => (cell.row.to_string(), cell.col.to_string()),
            None => (String::new(), String::new()),
        };
        for reading in &s.readings {
            let mut rec = vec![r.clone(), c.clone()];
            rec.extend(reading.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<dataset writer>", e))?;
    Ok(())
}

pub fn save_dataset(path: impl AsRef<Path>, samples: &[FingerprintSample]) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(std::io::BufWriter::new(file), samples)
}

/// Beacon layout CSV: header `x,y`, one beacon per line, meters.
pub fn parse_beacons(bytes: &[u8]) -> Result<Vec<(f64, f64)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(bytes);
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["x", "y"] {
        return Err(parse_err(1, "beacon header must be `x,y`"));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let coord = |i: usize| -> Result<f64> {
            let v: f64 = record[i]
                .parse()
                .map_err(|_| parse_err(line, format!("`{}` is not a number", &record[i])))?;
            if !v.is_finite() {
                return Err(parse_err(line, "beacon coordinates must be finite"));
            }
            Ok(v)
        };
        out.push((coord(0)?, coord(1)?));
    }
    if out.is_empty() {
        return Err(parse_err(1, "beacon file lists no beacons"));
    }
    Ok(out)
}

pub fn load_beacons(path: impl AsRef<Path>) -> Result<Vec<(f64, f64)>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_beacons(&bytes)
}
