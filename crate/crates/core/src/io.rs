//! CSV formats.
//!
//! * Sequences: one row per step, one column per coordinate, empty cell =
//!   missing. An optional header row is recognised by any non-numeric cell;
//!   a header whose first name is `z` marks a leading timestamp column.
//! * Matrices (training data, complete sequences): the same layout with no
//!   missing cells.
//! * Masks: `0`/`1` per cell, `1` = present.
//!
//! Present values keep their original text, so a reconstruction written
//! back out reproduces every observed cell byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::reconstruct::MaskedSequence;

/// Column names, when the file has a header row.
pub type Header = Option<Vec<String>>;

/// Name of the timestamp column.
pub const TIMESTAMP_COLUMN: &str = "z";

/// A parsed sequence CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceTable {
    /// Coordinate column names (without the timestamp column).
    pub header: Option<Vec<String>>,
    pub timestamps: Option<Vec<f64>>,
    /// Original text of the timestamp cells.
    pub timestamp_text: Option<Vec<String>>,
    /// Original text of every coordinate cell; `None` = missing.
    pub cells: Vec<Vec<Option<String>>>,
    pub sequence: MaskedSequence,
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(r)
}

fn parse_cell(s: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Format(format!("row {row}, column {col}: cannot parse {s:?} as a number")))?;
    if !v.is_finite() {
        return Err(Error::Format(format!("row {row}, column {col}: value {s:?} is not finite")));
    }
    Ok(v)
}

fn records<R: Read>(r: R) -> Result<(Header, Vec<Vec<String>>)> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    for rec in reader(r).records() {
        let rec = rec?;
        // `,` is a row with every cell missing; only a lone empty field is blank
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        rows.push(rec.iter().map(str::to_string).collect());
    }
    let header = match rows.first() {
        Some(first) if first.iter().any(|c| !c.is_empty() && c.parse::<f64>().is_err()) => Some(rows.remove(0)),
        _ => None,
    };
    if rows.is_empty() {
        return Err(Error::Format("no data rows".into()));
    }
    Ok((header, rows))
}

/// Reads a sequence with possibly missing cells.
pub fn read_sequence<R: Read>(r: R) -> Result<SequenceTable> {
    let (mut header, rows) = records(r)?;
    let has_z = header.as_ref().is_some_and(|h| h.first().map(String::as_str) == Some(TIMESTAMP_COLUMN));
    if has_z {
        if let Some(h) = header.as_mut() {
            h.remove(0);
        }
    }
    let skip = usize::from(has_z);
    let mut timestamps = Vec::new();
    let mut timestamp_text = Vec::new();
    let mut cells = Vec::with_capacity(rows.len());
    let mut values = Vec::with_capacity(rows.len());
    let mut mask = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let line = i + 1;
        if has_z {
            if row[0].is_empty() {
                return Err(Error::Format(format!("row {line}: missing timestamp")));
            }
            timestamps.push(parse_cell(&row[0], line, 0)?);
            timestamp_text.push(row[0].clone());
        }
        let mut c = Vec::with_capacity(row.len() - skip);
        let mut v = Vec::with_capacity(row.len() - skip);
        let mut m = Vec::with_capacity(row.len() - skip);
        for (j, s) in row.iter().enumerate().skip(skip) {
            if s.is_empty() {
                c.push(None);
                v.push(crate::reconstruct::MISSING);
                m.push(false);
            } else {
                v.push(parse_cell(s, line, j)?);
                c.push(Some(s.clone()));
                m.push(true);
            }
        }
        cells.push(c);
        values.push(v);
        mask.push(m);
    }
    if let Some(h) = &header {
        if h.len() != values[0].len() {
            return Err(Error::Format(format!("header has {} names for {} columns", h.len(), values[0].len())));
        }
    }
    let ts = has_z.then(|| timestamps.clone());
    let sequence = MaskedSequence::new(values, mask, ts).map_err(|e| match e {
        Error::InvalidParameter(s) => Error::Format(s),
        other => other,
    })?;
    Ok(SequenceTable {
        header,
        timestamps: has_z.then_some(timestamps),
        timestamp_text: has_z.then_some(timestamp_text),
        cells,
        sequence,
    })
}

pub fn read_sequence_file(path: &Path) -> Result<SequenceTable> {
    read_sequence(std::fs::File::open(path)?)
}

/// Shortest text that parses back to the same `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v}")
}

/// Writes `filled` in the layout of `table`: observed cells keep their
/// original text, filled cells use [`format_value`].
pub fn write_filled<W: Write>(w: W, table: &SequenceTable, filled: &[Vec<f64>]) -> Result<()> {
    if filled.len() != table.cells.len() {
        return Err(Error::ShapeMismatch(format!("{} rows for {} steps", filled.len(), table.cells.len())));
    }
    let mut out = csv::Writer::from_writer(w);
    if let Some(h) = &table.header {
        let mut names: Vec<&str> = Vec::new();
        if table.timestamps.is_some() {
            names.push(TIMESTAMP_COLUMN);
        }
        names.extend(h.iter().map(String::as_str));
        out.write_record(&names)?;
    }
    for (n, (cells, row)) in table.cells.iter().zip(filled).enumerate() {
        if row.len() != cells.len() {
            return Err(Error::ShapeMismatch(format!("row {n} has {} values for {} columns", row.len(), cells.len())));
        }
        let mut rec: Vec<String> = Vec::with_capacity(cells.len() + 1);
        if let Some(z) = &table.timestamp_text {
            rec.push(z[n].clone());
        }
        rec.extend(cells.iter().zip(row).map(|(c, &v)| c.clone().unwrap_or_else(|| format_value(v))));
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a complete numeric matrix, returning the header if present.
pub fn read_matrix<R: Read>(r: R) -> Result<(Header, Vec<Vec<f64>>)> {
    let (header, rows) = records(r)?;
    let width = rows[0].len();
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::Format(format!("row {} has {} columns, expected {width}", i + 1, row.len())));
        }
        out.push(
            row.iter()
                .enumerate()
                .map(|(j, s)| {
                    if s.is_empty() {
                        Err(Error::Format(format!("row {}, column {j}: missing value", i + 1)))
                    } else {
                        parse_cell(s, i + 1, j)
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok((header, out))
}

pub fn read_matrix_file(path: &Path) -> Result<(Header, Vec<Vec<f64>>)> {
    read_matrix(std::fs::File::open(path)?)
}

pub fn write_matrix<W: Write>(w: W, header: Option<&[&str]>, rows: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    if let Some(h) = header {
        out.write_record(h)?;
    }
    for row in rows {
        out.write_record(row.iter().map(|&v| format_value(v)))?;
    }
    out.flush()?;
    Ok(())
}

/// Writes a sequence with empty cells where `mask` is `false`.
pub fn write_masked<W: Write>(w: W, header: Option<&[&str]>, rows: &[Vec<f64>], mask: &[Vec<bool>]) -> Result<()> {
    if rows.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!("{} mask rows for {} rows", mask.len(), rows.len())));
    }
    let mut out = csv::Writer::from_writer(w);
    if let Some(h) = header {
        out.write_record(h)?;
    }
    for (row, m) in rows.iter().zip(mask) {
        if row.len() != m.len() {
            return Err(Error::ShapeMismatch(format!("mask width {} for row width {}", m.len(), row.len())));
        }
        out.write_record(row.iter().zip(m).map(|(&v, &p)| if p { format_value(v) } else { String::new() }))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_mask<R: Read>(r: R) -> Result<Vec<Vec<bool>>> {
    let (_, rows) = records(r)?;
    let width = rows[0].len();
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != width {
                return Err(Error::Format(format!("mask row {} has {} columns, expected {width}", i + 1, row.len())));
            }
            row.iter()
                .map(|s| match s.as_str() {
                    "1" => Ok(true),
                    "0" => Ok(false),
                    _ => Err(Error::Format(format!("mask row {}: expected 0 or 1, got {s:?}", i + 1))),
                })
                .collect()
        })
        .collect()
}

pub fn read_mask_file(path: &Path) -> Result<Vec<Vec<bool>>> {
    read_mask(std::fs::File::open(path)?)
}

pub fn write_mask<W: Write>(w: W, mask: &[Vec<bool>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for row in mask {
        out.write_record(row.iter().map(|&m| if m { "1" } else { "0" }))?;
    }
    out.flush()?;
    Ok(())
}
