//! The single-dimension detector pipeline: pivot → rebase → iterative k-means.
//!
//! [`RunConfig`] is the request shape shared by the library, the CLI and the
//! HTTP service, so every entry point produces identical runs.

use serde::{Deserialize, Serialize};

use crate::aggregate::{pivot, FeatureMatrix, Measure, PivotSpec};
use crate::error::{Error, Result};
use crate::ingest::DischargeTable;
use crate::kmeans::{iterative_kmeans, KMeansConfig, OutlierConfig, OutlierRun};
use crate::report::{self, RunManifest, RunResult};
use crate::searchlight::{run_searchlight, SearchlightConfig};
use crate::subsetscan::{subset_scan, SubsetScanRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// One or two categorical dimensions defining the rows.
    pub row_dims: Vec<String>,
    pub measure: Measure,
    /// Year every row is rebased against; the earliest table year if absent.
    pub base_year: Option<i32>,
    pub kmeans: KMeansConfig,
    pub small_cluster_threshold: usize,
    pub max_outlier_iters: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let outlier = OutlierConfig::default();
        Self {
            row_dims: Vec::new(),
            measure: Measure::Count,
            base_year: None,
            kmeans: outlier.kmeans,
            small_cluster_threshold: outlier.small_cluster_threshold,
            max_outlier_iters: outlier.max_outlier_iters,
        }
    }
}

impl RunConfig {
    pub fn new(row_dims: &[&str], measure: Measure) -> Self {
        Self {
            row_dims: row_dims.iter().map(|d| d.to_string()).collect(),
            measure,
            ..Self::default()
        }
    }

    pub fn outlier_config(&self) -> OutlierConfig {
        OutlierConfig {
            kmeans: self.kmeans,
            small_cluster_threshold: self.small_cluster_threshold,
            max_outlier_iters: self.max_outlier_iters,
        }
    }

    /// The rebased pivot this run clusters.
    pub fn pivot_spec(&self, table: &DischargeTable) -> Result<PivotSpec> {
        let base = resolve_base_year(table, self.base_year)?;
        let dims: Vec<&str> = self.row_dims.iter().map(String::as_str).collect();
        Ok(PivotSpec::new(&dims, self.measure).rebased(base))
    }

    /// Checks everything that can be checked without clustering.
    pub fn validate(&self, table: &DischargeTable) -> Result<()> {
        self.outlier_config().validate()?;
        self.pivot_spec(table)?.validate(table)
    }
}

/// The requested base year, or the earliest year in the table. The year must
/// be one of the table's years.
pub fn resolve_base_year(table: &DischargeTable, requested: Option<i32>) -> Result<i32> {
    let years = table.distinct_years();
    match requested {
        Some(y) if years.contains(&y) => Ok(y),
        None if !years.is_empty() => Ok(years[0]),
        _ => Err(Error::BaseYearMissing {
            year: requested.unwrap_or_default(),
            available: years.to_vec(),
        }),
    }
}

pub fn build_matrix(table: &DischargeTable, config: &RunConfig) -> Result<FeatureMatrix> {
    config.validate(table)?;
    pivot(table, &config.pivot_spec(table)?)
}

/// Pivot, rebase and run the iterative detector.
pub fn run_detector(table: &DischargeTable, config: &RunConfig) -> Result<OutlierRun> {
    let matrix = build_matrix(table, config)?;
    iterative_kmeans(&matrix, &config.outlier_config())
}

/// Any pipeline request. The CLI and the HTTP service both execute requests
/// through this type, so equal requests over equal data yield equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "config", rename_all = "snake_case")]
pub enum Job {
    OutlierRun(RunConfig),
    Searchlight(SearchlightConfig),
    SubsetScan(SubsetScanRequest),
}

impl Job {
    pub fn kind(&self) -> &'static str {
        match self {
            Job::OutlierRun(_) => "outlier_run",
            Job::Searchlight(_) => "searchlight",
            Job::SubsetScan(_) => "subset_scan",
        }
    }

    pub fn validate(&self, table: &DischargeTable) -> Result<()> {
        match self {
            Job::OutlierRun(c) => c.validate(table),
            Job::Searchlight(c) => c.validate(table),
            Job::SubsetScan(c) => c.validate(table),
        }
    }

    /// The request as echoed into the run manifest.
    pub fn config_json(&self) -> Result<serde_json::Value> {
        Ok(match self {
            Job::OutlierRun(c) => serde_json::to_value(c)?,
            Job::Searchlight(c) => serde_json::to_value(c)?,
            Job::SubsetScan(c) => serde_json::to_value(c)?,
        })
    }

    /// Identifier of the run this request produces over data with the given
    /// fingerprint.
    pub fn run_id(&self, fingerprint: &str) -> Result<String> {
        let hash = report::config_hash(self.kind(), &self.config_json()?)?;
        Ok(report::run_id(fingerprint, &hash))
    }

    pub fn execute(&self, table: &DischargeTable) -> Result<RunResult> {
        Ok(match self {
            Job::OutlierRun(c) => RunResult::OutlierRun(run_detector(table, c)?),
            Job::Searchlight(c) => RunResult::Searchlight(run_searchlight(table, c)?),
            Job::SubsetScan(c) => RunResult::SubsetScan(subset_scan(table, c)?),
        })
    }

    /// Executes the request and builds its manifest.
    pub fn execute_with_manifest(&self, table: &DischargeTable, fingerprint: &str) -> Result<(RunResult, RunManifest)> {
        let result = self.execute(table)?;
        let manifest = RunManifest::new(&result, fingerprint, table.row_count(), self.config_json()?)?;
        Ok((result, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testkit::{generate_table, PlantSpec};

    #[test]
    fn base_year_defaults_to_earliest() {
        let (table, _) = generate_table(&PlantSpec::flat(10, 2010..=2013), 1);
        assert_eq!(resolve_base_year(&table, None).unwrap(), 2010);
        assert_eq!(resolve_base_year(&table, Some(2012)).unwrap(), 2012);
        assert!(matches!(
            resolve_base_year(&table, Some(1999)),
            Err(Error::BaseYearMissing { year: 1999, .. })
        ));
    }

    #[test]
    fn detector_matches_manual_composition() {
        let (table, _) = generate_table(&PlantSpec::flat(30, 2010..=2016), 4);
        let mut cfg = RunConfig::new(&["Diagnosis"], Measure::Count);
        cfg.kmeans.k = 3;
        let run = run_detector(&table, &cfg).unwrap();
        let m = pivot(&table, &PivotSpec::new(&["Diagnosis"], Measure::Count).rebased(2010)).unwrap();
        let direct = iterative_kmeans(&m, &cfg.outlier_config()).unwrap();
        assert_eq!(run, direct);
    }

    #[test]
    fn job_run_id_matches_manifest() {
        let (table, _) = generate_table(&PlantSpec::flat(12, 2010..=2014), 2);
        let fp = crate::report::dataset_fingerprint(&table);
        let mut cfg = RunConfig::new(&["Diagnosis"], Measure::Count);
        cfg.kmeans.k = 2;
        cfg.kmeans.seed = 42;
        let job = Job::OutlierRun(cfg);
        let (result, manifest) = job.execute_with_manifest(&table, &fp).unwrap();
        assert_eq!(manifest.run_id, job.run_id(&fp).unwrap());
        assert_eq!(manifest.kind, result.kind());
        assert_eq!(manifest.seed, 42);
        let json = serde_json::to_value(&job).unwrap();
        assert_eq!(json["kind"], "outlier_run");
        assert_eq!(serde_json::from_value::<Job>(json).unwrap(), job);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        let err = serde_json::from_str::<RunConfig>(r#"{"row_dims":["a"],"kk":3}"#).unwrap_err();
        assert!(err.to_string().contains("kk"));
        let cfg: RunConfig = serde_json::from_str(r#"{"row_dims":["a"]}"#).unwrap();
        assert_eq!(cfg.kmeans, KMeansConfig::default());
    }
}
