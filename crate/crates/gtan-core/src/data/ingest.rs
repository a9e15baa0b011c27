//! CSV ingest and emit for the transaction schema.

use std::io::Write;
use std::path::Path;

use super::{sort_records, RiskLabel, TransactionRecord};
use crate::error::{Error, Result};

/// Column layout discovered from (or imposed on) a CSV header.
///
/// Fixed columns `txn_id`, `cardholder_id`, `timestamp` and `label` frame
/// three categorical groups (`card_*`, `txn_*`, `mcht_*`) and the numeric
/// group (`num_*`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CsvSchema {
    pub card_cols: Vec<String>,
    pub txn_cols: Vec<String>,
    pub merchant_cols: Vec<String>,
    pub numeric_cols: Vec<String>,
}

impl CsvSchema {
    /// Parses the header row into a schema.
    pub fn from_header(header: &[String]) -> Result<Self> {
        for required in ["txn_id", "cardholder_id", "timestamp", "label"] {
            if !header.iter().any(|h| h == required) {
                return Err(Error::Schema(format!("missing required column {required}")));
            }
        }
        let mut schema = CsvSchema {
            card_cols: Vec::new(),
            txn_cols: Vec::new(),
            merchant_cols: Vec::new(),
            numeric_cols: Vec::new(),
        };
        for name in header {
            if let Some(rest) = name.strip_prefix("card_") {
                if rest != "holder_id" {
                    schema.card_cols.push(name.clone());
                }
            } else if name.starts_with("txn_") && name != "txn_id" {
                schema.txn_cols.push(name.clone());
            } else if name.starts_with("mcht_") {
                schema.merchant_cols.push(name.clone());
            } else if name.starts_with("num_") {
                schema.numeric_cols.push(name.clone());
            } else if !matches!(name.as_str(), "txn_id" | "cardholder_id" | "timestamp" | "label")
            {
                return Err(Error::Schema(format!("unrecognized column {name}")));
            }
        }
        Ok(schema)
    }

    /// Header row in canonical column order.
    pub fn header(&self) -> Vec<String> {
        let mut h = vec![
            "txn_id".to_string(),
            "cardholder_id".to_string(),
            "timestamp".to_string(),
        ];
        h.extend(self.card_cols.iter().cloned());
        h.extend(self.txn_cols.iter().cloned());
        h.extend(self.merchant_cols.iter().cloned());
        h.extend(self.numeric_cols.iter().cloned());
        h.push("label".to_string());
        h
    }

    pub fn categorical_count(&self) -> usize {
        self.card_cols.len() + self.txn_cols.len() + self.merchant_cols.len()
    }

    /// Names of all categorical columns in table order.
    pub fn categorical_cols(&self) -> impl Iterator<Item = &String> {
        self.card_cols
            .iter()
            .chain(self.txn_cols.iter())
            .chain(self.merchant_cols.iter())
    }
}

/// One malformed row, reported with its 1-based line number.
#[derive(Clone, Debug)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

/// Outcome of an ingest: records in canonical order plus diagnostics.
#[derive(Debug)]
pub struct IngestReport {
    pub records: Vec<TransactionRecord>,
    pub schema: CsvSchema,
    pub issues: Vec<RowIssue>,
}

/// Reads the transaction CSV at `path`.
///
/// When `expected` is given, the file's header must produce the identical
/// schema. Malformed rows are collected as [`RowIssue`]s; more than
/// `max_bad_rows` of them aborts the ingest. Records come back sorted by
/// (cardholder, timestamp, txn_id).
pub fn read_csv(
    path: &Path,
    expected: Option<&CsvSchema>,
    max_bad_rows: usize,
) -> Result<IngestReport> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    let schema = CsvSchema::from_header(&header)?;
    if let Some(want) = expected {
        if schema != *want {
            return Err(Error::Schema(format!(
                "header schema {:?} does not match expected {:?}",
                schema, want
            )));
        }
    }

    // Column positions in file order.
    let pos = |name: &str| header.iter().position(|h| h == name).unwrap();
    let idx_txn = pos("txn_id");
    let idx_card = pos("cardholder_id");
    let idx_ts = pos("timestamp");
    let idx_label = pos("label");
    let group_pos = |names: &[String]| -> Vec<usize> { names.iter().map(|n| pos(n)).collect() };
    let card_pos = group_pos(&schema.card_cols);
    let txn_pos = group_pos(&schema.txn_cols);
    let mcht_pos = group_pos(&schema.merchant_cols);
    let num_pos = group_pos(&schema.numeric_cols);

    let mut records = Vec::new();
    let mut issues = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(
            &row, idx_txn, idx_card, idx_ts, idx_label, &card_pos, &txn_pos, &mcht_pos, &num_pos,
        ) {
            Ok(rec) => records.push(rec),
            Err(message) => {
                issues.push(RowIssue { line, message });
                if issues.len() > max_bad_rows {
                    return Err(Error::TooManyBadRows {
                        count: issues.len(),
                        threshold: max_bad_rows,
                        first: format!("line {}: {}", issues[0].line, issues[0].message),
                    });
                }
            }
        }
    }
    sort_records(&mut records);
    Ok(IngestReport {
        records,
        schema,
        issues,
    })
}

#[allow(clippy::too_many_arguments)]
fn parse_row(
    row: &csv::StringRecord,
    idx_txn: usize,
    idx_card: usize,
    idx_ts: usize,
    idx_label: usize,
    card_pos: &[usize],
    txn_pos: &[usize],
    mcht_pos: &[usize],
    num_pos: &[usize],
) -> std::result::Result<TransactionRecord, String> {
    let field = |i: usize| -> std::result::Result<&str, String> {
        row.get(i).ok_or_else(|| format!("missing field {i}"))
    };
    let txn_id: u64 = field(idx_txn)?
        .trim()
        .parse()
        .map_err(|_| format!("bad txn_id {:?}", field(idx_txn).unwrap_or("")))?;
    let cardholder_id: u64 = field(idx_card)?
        .trim()
        .parse()
        .map_err(|_| "bad cardholder_id".to_string())?;
    let timestamp: i64 = field(idx_ts)?
        .trim()
        .parse()
        .map_err(|_| format!("unparsable timestamp {:?}", field(idx_ts).unwrap_or("")))?;
    if timestamp < 0 {
        return Err(format!("negative timestamp {timestamp}"));
    }
    let label_raw: i8 = field(idx_label)?
        .trim()
        .parse()
        .map_err(|_| "bad label".to_string())?;
    let label =
        RiskLabel::from_i8(label_raw).ok_or_else(|| format!("label {label_raw} not in {{0,1,-1}}"))?;
    let grab = |positions: &[usize]| -> std::result::Result<Vec<String>, String> {
        positions
            .iter()
            .map(|&i| field(i).map(|s| s.trim().to_string()))
            .collect()
    };
    let numeric_attrs = num_pos
        .iter()
        .map(|&i| {
            field(i).and_then(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("bad numeric field {s:?}"))
            })
        })
        .collect::<std::result::Result<Vec<f64>, String>>()?;
    Ok(TransactionRecord {
        txn_id,
        cardholder_id,
        timestamp,
        card_attrs: grab(card_pos)?,
        txn_attrs: grab(txn_pos)?,
        merchant_attrs: grab(mcht_pos)?,
        numeric_attrs,
        label,
    })
}

/// Writes records in the canonical schema order.
///
/// `provenance` lines are emitted as `#`-prefixed comments ahead of the
/// header so every artifact records the command that produced it.
pub fn write_csv(
    path: &Path,
    schema: &CsvSchema,
    records: &[TransactionRecord],
    provenance: &[String],
) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for line in provenance {
        writeln!(file, "# {line}")?;
    }
    writeln!(file, "{}", schema.header().join(","))?;
    for r in records {
        let mut fields: Vec<String> = vec![
            r.txn_id.to_string(),
            r.cardholder_id.to_string(),
            r.timestamp.to_string(),
        ];
        fields.extend(r.card_attrs.iter().cloned());
        fields.extend(r.txn_attrs.iter().cloned());
        fields.extend(r.merchant_attrs.iter().cloned());
        fields.extend(r.numeric_attrs.iter().map(|v| format!("{v}")));
        fields.push(r.label.to_i8().to_string());
        writeln!(file, "{}", fields.join(","))?;
    }
    file.flush()?;
    Ok(())
}
