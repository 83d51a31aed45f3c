use serde::{Deserialize, Serialize};

use super::Measure;
use crate::error::{Error, Result};

/// What the matrix columns index.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnAxis {
    /// Columns are calendar years.
    #[default]
    Year,
    /// Columns are category indices `0..names.len()` of another dimension.
    Category { dimension: String, names: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowFilter {
    pub dimension: String,
    pub values: Vec<String>,
}

/// How a matrix was produced from a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub row_dims: Vec<String>,
    pub measure: Measure,
    pub rebase: Option<i32>,
    pub filter: Option<RowFilter>,
}

/// Labeled dense matrix: one row per label tuple, one column per year (or
/// category index). All values are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    #[serde(rename = "labels")]
    row_labels: Vec<Vec<String>>,
    #[serde(rename = "years")]
    col_labels: Vec<i32>,
    #[serde(default)]
    axis: ColumnAxis,
    values: Vec<Vec<f64>>,
    provenance: Option<Provenance>,
    #[serde(default)]
    warnings: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(row_labels: Vec<Vec<String>>, col_labels: Vec<i32>, values: Vec<Vec<f64>>) -> Result<Self> {
        if row_labels.len() != values.len() {
            return Err(Error::DimensionMismatch {
                expected: row_labels.len(),
                found: values.len(),
            });
        }
        for (r, row) in values.iter().enumerate() {
            if row.len() != col_labels.len() {
                return Err(Error::DimensionMismatch {
                    expected: col_labels.len(),
                    found: row.len(),
                });
            }
            if let Some(c) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { row: r, column: c });
            }
        }
        Ok(Self {
            row_labels,
            col_labels,
            axis: ColumnAxis::Year,
            values,
            provenance: None,
            warnings: Vec::new(),
        })
    }

    /// Convenience constructor with single-string labels.
    pub fn from_rows<L: Into<String>>(
        labels: impl IntoIterator<Item = L>,
        years: Vec<i32>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let labels = labels.into_iter().map(|l| vec![l.into()]).collect();
        Self::new(labels, years, values)
    }

    pub(crate) fn with_axis(mut self, axis: ColumnAxis) -> Self {
        self.axis = axis;
        self
    }

    pub(crate) fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub(crate) fn with_warnings(mut self, warnings: Vec<String>) -> Self {
        self.warnings = warnings;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.values.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_labels.len()
    }

    pub fn row_labels(&self) -> &[Vec<String>] {
        &self.row_labels
    }

    pub fn col_labels(&self) -> &[i32] {
        &self.col_labels
    }

    pub fn axis(&self) -> &ColumnAxis {
        &self.axis
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Names of the label columns, from provenance when available.
    pub fn label_names(&self) -> Vec<String> {
        match &self.provenance {
            Some(p) => p.row_dims.clone(),
            None => {
                let width = self.row_labels.first().map_or(1, |l| l.len());
                (0..width).map(|i| format!("label_{i}")).collect()
            }
        }
    }

    /// The sub-matrix made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            row_labels: rows.iter().map(|&r| self.row_labels[r].clone()).collect(),
            col_labels: self.col_labels.clone(),
            axis: self.axis.clone(),
            values: rows.iter().map(|&r| self.values[r].clone()).collect(),
            provenance: self.provenance.clone(),
            warnings: self.warnings.clone(),
        }
    }

    pub fn position_of(&self, label: &[String]) -> Option<usize> {
        self.row_labels.iter().position(|l| l == label)
    }

    /// CSV with the label columns first, then one column per year. Values are
    /// written with 17 significant digits, which round-trips every `f64`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = self.label_names();
        header.extend(self.col_labels.iter().map(|y| y.to_string()));
        w.write_record(&header)?;
        for (label, row) in self.row_labels.iter().zip(&self.values) {
            let mut rec = label.clone();
            rec.extend(row.iter().map(|&v| format_sig17(v)));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::io("<csv output>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// Parses the output of [`FeatureMatrix::to_csv`]; `label_width` is the
    /// number of leading label columns.
    pub fn from_csv(text: &str, label_width: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let header = rdr.headers()?.clone();
        let years = header
            .iter()
            .skip(label_width)
            .map(|h| {
                h.parse::<i32>()
                    .map_err(|_| Error::config("csv header", format!("bad column label '{h}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut labels = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            labels.push(rec.iter().take(label_width).map(String::from).collect());
            values.push(
                rec.iter()
                    .skip(label_width)
                    .map(|v| {
                        v.parse::<f64>()
                            .map_err(|_| Error::config("csv value", format!("bad number '{v}'")))
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Self::new(labels, years, values)
    }
}

pub(crate) fn format_sig17(v: f64) -> String {
    format!("{v:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_ragged_and_non_finite() {
        assert!(FeatureMatrix::from_rows(["a"], vec![1, 2], vec![vec![1.0]]).is_err());
        assert!(FeatureMatrix::from_rows(["a", "b"], vec![1], vec![vec![1.0]]).is_err());
        assert!(matches!(
            FeatureMatrix::from_rows(["a"], vec![1], vec![vec![f64::NAN]]),
            Err(Error::NonFinite { row: 0, column: 0 })
        ));
    }

    #[test]
    fn sig17_formatting() {
        assert_eq!(format_sig17(0.1), "1.0000000000000001e-1");
        assert_eq!(format_sig17(-250.0), "-2.5000000000000000e2");
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_exact(
            rows in proptest::collection::vec(proptest::collection::vec(-1e12f64..1e12, 3), 1..8)
        ) {
            let labels: Vec<String> = (0..rows.len()).map(|i| format!("g{i}")).collect();
            let m = FeatureMatrix::from_rows(labels, vec![2009, 2010, 2011], rows).unwrap();
            let back = FeatureMatrix::from_csv(&m.to_csv().unwrap(), 1).unwrap();
            prop_assert_eq!(back.rows(), m.rows());
            prop_assert_eq!(back.row_labels(), m.row_labels());
        }
    }
}
