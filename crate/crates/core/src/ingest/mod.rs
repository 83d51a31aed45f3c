//! CSV loading into a dictionary-encoded columnar table.

mod schema;
mod table;

use std::collections::{BTreeMap, HashSet};
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use schema::{ColumnKind, ColumnSpec, DatasetSchema};
pub use table::{
    parse_currency, summarize, CategoricalColumn, DatasetSummary, DischargeTable, NumericColumn, TableBuilder,
};

use crate::error::{Error, Result};

/// What to do with a data row that fails validation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    /// Drop the row, count it, and keep loading.
    #[default]
    Skip,
    /// Abort the load at the first bad row.
    Strict,
}

#[derive(Debug, Clone, PartialEq, Error, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    #[error("expected {expected} fields, found {found}")]
    Malformed { expected: usize, found: usize },
    #[error("unreadable record: {message}")]
    Unreadable { message: String },
    #[error("missing value in required column '{column}'")]
    MissingValue { column: String },
    #[error("unparsable number '{value}' in column '{column}'")]
    UnparsableNumber { column: String, value: String },
    #[error("non-finite number in column '{column}'")]
    NonFinite { column: String },
    #[error("negative cost {value}")]
    NegativeCost { value: f64 },
    #[error("unparsable year '{value}'")]
    UnparsableYear { value: String },
}

impl RejectReason {
    pub fn kind(&self) -> &'static str {
        match self {
            RejectReason::Malformed { .. } => "malformed",
            RejectReason::Unreadable { .. } => "unreadable",
            RejectReason::MissingValue { .. } => "missing_value",
            RejectReason::UnparsableNumber { .. } => "unparsable_number",
            RejectReason::NonFinite { .. } => "non_finite",
            RejectReason::NegativeCost { .. } => "negative_cost",
            RejectReason::UnparsableYear { .. } => "unparsable_year",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedRow {
    pub line: u64,
    pub reason: RejectReason,
}

/// Bookkeeping for one load: `accepted + rejected_total() == data_records`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub data_records: u64,
    pub accepted: u64,
    /// Rejection counts keyed by [`RejectReason::kind`].
    pub rejected: BTreeMap<String, u64>,
    /// The first [`LoadReport::SAMPLE_LIMIT`] rejected rows.
    pub samples: Vec<RejectedRow>,
    /// Optional schema columns absent from the header.
    pub missing_optional: Vec<String>,
}

impl LoadReport {
    pub const SAMPLE_LIMIT: usize = 100;

    pub fn rejected_total(&self) -> u64 {
        self.rejected.values().sum()
    }

    fn reject(&mut self, line: u64, reason: RejectReason) {
        log::warn!("skipping line {line}: {reason}");
        *self.rejected.entry(reason.kind().to_string()).or_default() += 1;
        if self.samples.len() < Self::SAMPLE_LIMIT {
            self.samples.push(RejectedRow { line, reason });
        }
    }
}

pub fn load_csv(
    path: impl AsRef<Path>,
    schema: &DatasetSchema,
    policy: ErrorPolicy,
) -> Result<(DischargeTable, LoadReport)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(std::io::BufReader::with_capacity(1 << 20, file), schema, policy)
}

/// Reads CSV with a header row. Columns not named by the schema are ignored;
/// optional schema columns missing from the header are dropped from the
/// table's schema and listed in the report.
pub fn read_csv<R: Read>(
    reader: R,
    schema: &DatasetSchema,
    policy: ErrorPolicy,
) -> Result<(DischargeTable, LoadReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim_start_matches('\u{feff}').trim().to_string())
        .collect();
    let header_len = headers.len();

    let mut report = LoadReport::default();
    let mut present = HashSet::new();
    let mut positions = Vec::new();
    for col in schema.columns() {
        match headers.iter().position(|h| *h == col.name) {
            Some(i) => {
                present.insert(col.name.as_str());
                positions.push(i);
            }
            None if schema.is_required(col) => {
                return Err(Error::MissingColumn {
                    column: col.name.clone(),
                })
            }
            None => report.missing_optional.push(col.name.clone()),
        }
    }
    let mut builder = TableBuilder::new(schema.restricted_to(&present)?);

    let mut record = csv::StringRecord::new();
    loop {
        let line;
        let outcome = match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {
                line = record.position().map_or(0, |p| p.line());
                if record.len() != header_len {
                    Err(RejectReason::Malformed {
                        expected: header_len,
                        found: record.len(),
                    })
                } else {
                    let fields: Vec<&str> = positions.iter().map(|&i| &record[i]).collect();
                    builder.push_row(&fields)
                }
            }
            Err(e) => {
                if let csv::ErrorKind::Io(_) = e.kind() {
                    return Err(e.into());
                }
                line = e.position().map_or(0, |p| p.line());
                Err(RejectReason::Unreadable { message: e.to_string() })
            }
        };
        report.data_records += 1;
        match outcome {
            Ok(()) => report.accepted += 1,
            Err(reason) => match policy {
                ErrorPolicy::Strict => return Err(Error::RowRejected { line, reason }),
                ErrorPolicy::Skip => report.reject(line, reason),
            },
        }
    }
    Ok((builder.finish(), report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> DatasetSchema {
        DatasetSchema::new(
            vec![
                ColumnSpec::categorical("CCS Diagnosis Description"),
                ColumnSpec::new("Race", ColumnKind::Categorical, false),
                ColumnSpec::new("Total Costs", ColumnKind::Numeric, true),
                ColumnSpec::new("Discharge Year", ColumnKind::Year, true),
            ],
            "Total Costs",
            "Discharge Year",
        )
        .unwrap()
    }

    fn load(text: &str, policy: ErrorPolicy) -> Result<(DischargeTable, LoadReport)> {
        read_csv(text.as_bytes(), &schema(), policy)
    }

    const THREE_ROWS: &str = "\
CCS Diagnosis Description,Race,Total Costs,Discharge Year,Extra
ABDOMINAL HERNIA,White,\"$12,068.11\",2009,x
ACUTE CVD,Black,500,2010,y
ABDOMINAL HERNIA,White,250.5,2010,z
";

    #[test]
    fn three_rows_two_diagnoses() {
        let (t, r) = load(THREE_ROWS, ErrorPolicy::Strict).unwrap();
        assert_eq!(t.row_count(), 3);
        let dx = t.categorical("CCS Diagnosis Description").unwrap();
        assert_eq!(dx.dictionary().len(), 2);
        assert_eq!(t.costs(), [12068.11, 500.0, 250.5]);
        assert_eq!(t.years(), [2009, 2010, 2010]);
        assert_eq!(r.accepted, 3);
        assert_eq!(r.rejected_total(), 0);
        assert_eq!(summarize(&t).dimensions["CCS Diagnosis Description"], 2);
    }

    #[test]
    fn header_only_gives_empty_table() {
        let (t, r) = load(
            "CCS Diagnosis Description,Race,Total Costs,Discharge Year\n",
            ErrorPolicy::Strict,
        )
        .unwrap();
        assert_eq!(t.row_count(), 0);
        assert!(t.categorical_columns().iter().all(|c| c.dictionary().is_empty()));
        assert_eq!(r.data_records, 0);
    }

    #[test]
    fn strict_policy_names_the_line() {
        let text = "CCS Diagnosis Description,Race,Total Costs,Discharge Year\nA,W,10,2009\nB,W,abc,2009\n";
        match load(text, ErrorPolicy::Strict) {
            Err(Error::RowRejected { line, reason }) => {
                assert_eq!(line, 3);
                assert_eq!(reason.kind(), "unparsable_number");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn skip_policy_counts_reasons() {
        let text = "\
CCS Diagnosis Description,Race,Total Costs,Discharge Year
A,W,10,2009
B,W,abc,2009
C,W,-5,2009
D,W,5
E,W,5,year
,W,5,2010
F,W,7,2011
";
        let (t, r) = load(text, ErrorPolicy::Skip).unwrap();
        assert_eq!(t.row_count(), 2);
        assert_eq!(r.data_records, 7);
        assert_eq!(r.accepted + r.rejected_total(), r.data_records);
        for kind in [
            "unparsable_number",
            "negative_cost",
            "malformed",
            "unparsable_year",
            "missing_value",
        ] {
            assert_eq!(r.rejected[kind], 1, "{kind}");
        }
    }

    #[test]
    fn missing_required_column_is_fatal() {
        let text = "Race,Total Costs,Discharge Year\nW,1,2009\n";
        assert!(matches!(
            load(text, ErrorPolicy::Skip),
            Err(Error::MissingColumn { column }) if column == "CCS Diagnosis Description"
        ));
    }

    #[test]
    fn missing_optional_column_is_dropped() {
        let text = "CCS Diagnosis Description,Total Costs,Discharge Year\nA,1,2009\n";
        let (t, r) = load(text, ErrorPolicy::Strict).unwrap();
        assert_eq!(r.missing_optional, ["Race"]);
        assert!(t.categorical("Race").is_none());
        assert_eq!(t.schema().columns().len(), 3);
    }

    #[test]
    fn invalid_utf8_is_a_rejected_row() {
        let mut bytes = b"CCS Diagnosis Description,Race,Total Costs,Discharge Year\n".to_vec();
        bytes.extend_from_slice(b"A\xff,W,1,2009\nB,W,2,2009\n");
        let (t, r) = read_csv(&bytes[..], &schema(), ErrorPolicy::Skip).unwrap();
        assert_eq!(t.row_count(), 1);
        assert_eq!(r.rejected["unreadable"], 1);
    }

    #[test]
    fn quoted_fields_and_whitespace() {
        let text = "CCS Diagnosis Description,Race,Total Costs,Discharge Year\n\"Cancer of bronchus; lung\",\" Other Race \",\"1,000\",2012\n";
        let (t, _) = load(text, ErrorPolicy::Strict).unwrap();
        assert_eq!(
            t.categorical("CCS Diagnosis Description").unwrap().value(0),
            "Cancer of bronchus; lung"
        );
        assert_eq!(t.categorical("Race").unwrap().value(0), "Other Race");
        assert_eq!(t.costs(), [1000.0]);
    }
}
