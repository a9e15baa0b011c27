//! Transaction records, CSV ingest, vocabularies, numeric features.
//!
//! The on-disk contract is a UTF-8 comma-separated file with header
//! `txn_id,cardholder_id,timestamp,<card_*>,<txn_*>,<mcht_*>,<num_*>,label`
//! where label is 0 (legitimate), 1 (fraud) or -1 (unlabeled) and
//! timestamps are integer seconds. Lines starting with `#` are comments.
//!
//! Vocabularies and numeric statistics are always built from the training
//! split alone; test-period tokens fall back to a reserved OOV index.

mod features;
mod ingest;
mod vocab;

pub use features::{encode_features, FeatureMatrix, NumericStats};
pub use ingest::{read_csv, write_csv, CsvSchema, IngestReport, RowIssue};
pub use vocab::{build_vocab, Vocabulary};

/// Three-state risk category of a transaction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RiskLabel {
    Legitimate,
    Fraud,
    Unlabeled,
}

/// Number of risk categories; fixed by the three-state label.
pub const RISK_CATEGORIES: usize = 3;

impl RiskLabel {
    /// Row index into the risk embedding table.
    pub fn index(self) -> usize {
        match self {
            RiskLabel::Legitimate => 0,
            RiskLabel::Fraud => 1,
            RiskLabel::Unlabeled => 2,
        }
    }

    /// CSV encoding: 0, 1 or -1.
    pub fn to_i8(self) -> i8 {
        match self {
            RiskLabel::Legitimate => 0,
            RiskLabel::Fraud => 1,
            RiskLabel::Unlabeled => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            0 => Some(RiskLabel::Legitimate),
            1 => Some(RiskLabel::Fraud),
            -1 => Some(RiskLabel::Unlabeled),
            _ => None,
        }
    }

    pub fn is_labeled(self) -> bool {
        self != RiskLabel::Unlabeled
    }
}

/// One raw transaction row.
#[derive(Clone, Debug, PartialEq)]
pub struct TransactionRecord {
    pub txn_id: u64,
    pub cardholder_id: u64,
    /// Seconds since epoch; never negative.
    pub timestamp: i64,
    pub card_attrs: Vec<String>,
    pub txn_attrs: Vec<String>,
    pub merchant_attrs: Vec<String>,
    pub numeric_attrs: Vec<f64>,
    pub label: RiskLabel,
}

/// Sorts records into the canonical (cardholder, timestamp, txn_id) order
/// required by the graph builder.
pub fn sort_records(records: &mut [TransactionRecord]) {
    records.sort_by_key(|r| (r.cardholder_id, r.timestamp, r.txn_id));
}

/// True when records are in canonical order.
pub fn is_sorted(records: &[TransactionRecord]) -> bool {
    records.windows(2).all(|w| {
        (w[0].cardholder_id, w[0].timestamp, w[0].txn_id)
            <= (w[1].cardholder_id, w[1].timestamp, w[1].txn_id)
    })
}
