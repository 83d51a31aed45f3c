//! Subset-scan drill-down: cross the outlier values of a primary dimension
//! with one secondary dimension at a time and re-run the detector on the
//! flattened `(primary, secondary)` × year matrix.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{pivot_subset, Measure};
use crate::error::{Error, Result};
use crate::ingest::DischargeTable;
use crate::kmeans::{iterative_kmeans, KMeansConfig, OutlierConfig, OutlierRun};
use crate::pipeline::resolve_base_year;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScanScope {
    /// Only the given outlier values of the primary dimension.
    #[default]
    OutliersOnly,
    /// Every value of the primary dimension; `outlier_values` is ignored.
    AllValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubsetScanRequest {
    pub primary_dim: String,
    pub outlier_values: Vec<String>,
    pub candidate_dims: Vec<String>,
    pub measure: Measure,
    /// The earliest table year if absent.
    pub base_year: Option<i32>,
    pub kmeans: KMeansConfig,
    pub small_cluster_threshold: usize,
    pub max_outlier_iters: usize,
    pub scope: ScanScope,
}

impl Default for SubsetScanRequest {
    fn default() -> Self {
        let outlier = OutlierConfig::default();
        Self {
            primary_dim: String::new(),
            outlier_values: Vec::new(),
            candidate_dims: Vec::new(),
            measure: Measure::Count,
            base_year: None,
            kmeans: outlier.kmeans,
            small_cluster_threshold: outlier.small_cluster_threshold,
            max_outlier_iters: outlier.max_outlier_iters,
            scope: ScanScope::OutliersOnly,
        }
    }
}

impl SubsetScanRequest {
    pub fn new(primary_dim: &str, outlier_values: &[&str], candidate_dims: &[&str]) -> Self {
        Self {
            primary_dim: primary_dim.to_string(),
            outlier_values: outlier_values.iter().map(|v| v.to_string()).collect(),
            candidate_dims: candidate_dims.iter().map(|d| d.to_string()).collect(),
            ..Self::default()
        }
    }

    /// Drill-down from a finished run: its removed labels become the outlier
    /// values and its detector settings carry over.
    pub fn from_run(run: &OutlierRun, primary_dim: &str, candidate_dims: &[&str]) -> Self {
        let mut values: Vec<String> = run.removed().filter_map(|(_, r)| r.label.first().cloned()).collect();
        values.sort();
        values.dedup();
        let provenance = run.input.provenance();
        Self {
            primary_dim: primary_dim.to_string(),
            outlier_values: values,
            candidate_dims: candidate_dims.iter().map(|d| d.to_string()).collect(),
            measure: provenance.map_or(Measure::Count, |p| p.measure),
            base_year: provenance.and_then(|p| p.rebase),
            kmeans: run.config.kmeans,
            small_cluster_threshold: run.config.small_cluster_threshold,
            max_outlier_iters: run.config.max_outlier_iters,
            scope: ScanScope::OutliersOnly,
        }
    }

    pub fn outlier_config(&self) -> OutlierConfig {
        OutlierConfig {
            kmeans: self.kmeans,
            small_cluster_threshold: self.small_cluster_threshold,
            max_outlier_iters: self.max_outlier_iters,
        }
    }

    pub fn validate(&self, table: &DischargeTable) -> Result<()> {
        let primary = table.dimension(&self.primary_dim)?;
        if self.candidate_dims.is_empty() {
            return Err(Error::config("candidate_dims", "at least one candidate is required"));
        }
        for (i, d) in self.candidate_dims.iter().enumerate() {
            table.dimension(d)?;
            if *d == self.primary_dim {
                return Err(Error::config(
                    "candidate_dims",
                    format!("'{d}' is the primary dimension"),
                ));
            }
            if self.candidate_dims[..i].contains(d) {
                return Err(Error::config("candidate_dims", format!("'{d}' is listed twice")));
            }
        }
        if self.scope == ScanScope::OutliersOnly {
            if self.outlier_values.is_empty() {
                return Err(Error::config(
                    "outlier_values",
                    "at least one value is required when scope is outliers_only",
                ));
            }
            for v in &self.outlier_values {
                if primary.code_of(v).is_none() {
                    return Err(Error::UnknownValue {
                        dimension: self.primary_dim.clone(),
                        value: v.clone(),
                    });
                }
            }
        }
        resolve_base_year(table, self.base_year)?;
        self.outlier_config().validate()
    }

    /// Primary values actually scanned, sorted and de-duplicated.
    pub fn scanned_values(&self, table: &DischargeTable) -> Result<Vec<String>> {
        let mut values = match self.scope {
            ScanScope::OutliersOnly => self.outlier_values.clone(),
            ScanScope::AllValues => table.dimension(&self.primary_dim)?.dictionary().to_vec(),
        };
        values.sort();
        values.dedup();
        Ok(values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScanEntry {
    pub subset_dim: String,
    /// Distinct subset values among the filtered rows.
    pub subset_values: usize,
    /// `(rows, years)` of the rebased flattened matrix.
    pub shape: (usize, usize),
    /// k actually used; smaller than requested when the matrix is small.
    pub k_used: usize,
    pub k_clamped: bool,
    pub produced_outliers: bool,
    /// Why no detector ran (matrix with fewer than two rows).
    pub skipped: Option<String>,
    pub outlier_run: Option<OutlierRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScanResult {
    pub request: SubsetScanRequest,
    pub base_year: i32,
    pub primary_values: Vec<String>,
    /// Keyed by subset dimension.
    pub entries: BTreeMap<String, SubsetScanEntry>,
}

impl SubsetScanResult {
    /// Entries whose run removed at least one row; the default view.
    pub fn flagged(&self) -> impl Iterator<Item = &SubsetScanEntry> {
        self.entries.values().filter(|e| e.produced_outliers)
    }
}

/// Runs the detector once per candidate dimension over the rows whose primary
/// value is scanned. Candidates run in parallel and share no state.
pub fn subset_scan(table: &DischargeTable, request: &SubsetScanRequest) -> Result<SubsetScanResult> {
    request.validate(table)?;
    let base_year = resolve_base_year(table, request.base_year)?;
    let values = request.scanned_values(table)?;
    let entries: Vec<SubsetScanEntry> = request
        .candidate_dims
        .par_iter()
        .map(|dim| scan_one(table, request, &values, dim, base_year))
        .collect::<Result<_>>()?;
    Ok(SubsetScanResult {
        request: request.clone(),
        base_year,
        primary_values: values,
        entries: entries.into_iter().map(|e| (e.subset_dim.clone(), e)).collect(),
    })
}

fn scan_one(
    table: &DischargeTable,
    request: &SubsetScanRequest,
    values: &[String],
    dim: &str,
    base_year: i32,
) -> Result<SubsetScanEntry> {
    let matrix = pivot_subset(
        table,
        &request.primary_dim,
        values,
        dim,
        request.measure,
        Some(base_year),
    )?;
    let subset_values = distinct_subset_values(table, &request.primary_dim, values, dim)?;
    let rows = matrix.n_rows();
    let shape = (rows, matrix.n_cols());
    let mut outlier = request.outlier_config();
    if rows < 2 {
        return Ok(SubsetScanEntry {
            subset_dim: dim.to_string(),
            subset_values,
            shape,
            k_used: 0,
            k_clamped: true,
            produced_outliers: false,
            skipped: Some(format!("{rows} row(s) after rebasing; at least 2 are needed")),
            outlier_run: None,
        });
    }
    let k_clamped = outlier.kmeans.k > rows - 1;
    if k_clamped {
        log::info!(
            "subset scan '{dim}': clamping k from {} to {}",
            outlier.kmeans.k,
            rows - 1
        );
        outlier.kmeans.k = rows - 1;
    }
    let run = iterative_kmeans(&matrix, &outlier)?;
    Ok(SubsetScanEntry {
        subset_dim: dim.to_string(),
        subset_values,
        shape,
        k_used: outlier.kmeans.k,
        k_clamped,
        produced_outliers: run.outlier_count() > 0,
        skipped: None,
        outlier_run: Some(run),
    })
}

/// Number of distinct `dim` values among rows whose primary value is scanned.
fn distinct_subset_values(table: &DischargeTable, primary_dim: &str, values: &[String], dim: &str) -> Result<usize> {
    let primary = table.dimension(primary_dim)?;
    let subset = table.dimension(dim)?;
    let mut keep = vec![false; primary.dictionary().len()];
    for v in values {
        if let Some(c) = primary.code_of(v) {
            keep[c as usize] = true;
        }
    }
    let mut seen = vec![false; subset.dictionary().len()];
    for (&p, &s) in primary.codes().iter().zip(subset.codes()) {
        if keep[p as usize] {
            seen[s as usize] = true;
        }
    }
    Ok(seen.iter().filter(|&&b| b).count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{pivot, PivotSpec};
    use crate::testkit::{generate_table, PlantSpec};

    fn table() -> DischargeTable {
        let mut spec = PlantSpec::flat(12, 2010..=2016);
        spec.add_subset_plant(3, "Age Group", 2, 2014, 40.0);
        generate_table(&spec, 5).0
    }

    fn request(values: &[&str]) -> SubsetScanRequest {
        let mut r = SubsetScanRequest::new("Diagnosis", values, &["Age Group", "Race"]);
        r.kmeans.k = 2;
        r
    }

    #[test]
    fn shape_law_holds() {
        let t = table();
        let values = ["DX-001", "DX-003", "DX-005", "DX-007"];
        let result = subset_scan(&t, &request(&values)).unwrap();
        assert_eq!(result.entries.len(), 2);
        for e in result.entries.values() {
            assert!(e.shape.0 <= values.len() * e.subset_values);
            assert_eq!(e.shape.1, t.distinct_years().len());
        }
    }

    #[test]
    fn all_values_scope_matches_two_dimension_pivot() {
        let t = table();
        let mut r = request(&[]);
        r.scope = ScanScope::AllValues;
        let result = subset_scan(&t, &r).unwrap();
        let entry = &result.entries["Age Group"];
        let direct = pivot(
            &t,
            &PivotSpec::new(&["Diagnosis", "Age Group"], Measure::Count).rebased(2010),
        )
        .unwrap();
        let run = entry.outlier_run.as_ref().unwrap();
        assert_eq!(run.input.rows(), direct.rows());
        assert_eq!(run.input.row_labels(), direct.row_labels());
    }

    #[test]
    fn tiny_matrices_clamp_or_skip() {
        let t = table();
        let mut r = request(&["DX-001"]);
        r.kmeans.k = 8;
        let result = subset_scan(&t, &r).unwrap();
        let e = &result.entries["Age Group"];
        assert!(e.k_clamped);
        assert_eq!(e.k_used, e.shape.0 - 1);
    }

    #[test]
    fn validation() {
        let t = table();
        assert!(subset_scan(&t, &request(&[])).is_err());
        assert!(matches!(
            subset_scan(&t, &request(&["nope"])),
            Err(Error::UnknownValue { .. })
        ));
        let mut r = request(&["DX-001"]);
        r.candidate_dims.push("Diagnosis".into());
        assert!(subset_scan(&t, &r).is_err());
        r.candidate_dims = vec!["Zip".into()];
        assert!(matches!(subset_scan(&t, &r), Err(Error::UnknownDimension { .. })));
    }
}
