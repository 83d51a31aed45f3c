//! Outlier scoring and the searchlight sweep: one detector run per candidate
//! aggregation dimension, ranked by outlier evidence.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::{pivot, Measure, PivotSpec};
use crate::error::{Error, Result};
use crate::ingest::DischargeTable;
use crate::kmeans::{dist2, iterative_kmeans, KMeansConfig, OutlierConfig, OutlierRun};
use crate::pipeline::resolve_base_year;

/// Surviving centroids plus the spread a removed row is normalized by.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReference {
    pub centroids: Vec<Vec<f64>>,
    /// RMS distance of surviving rows to their assigned centroids.
    pub rms: f64,
}

impl ScoreReference {
    pub fn new(centroids: Vec<Vec<f64>>, rms: f64) -> Self {
        Self { centroids, rms }
    }

    /// Builds the reference from surviving rows and their assignments into
    /// `centroids`.
    pub fn from_survivors(survivors: &[&[f64]], assignments: &[usize], centroids: &[Vec<f64>]) -> Self {
        let sum: f64 = survivors
            .iter()
            .zip(assignments)
            .map(|(p, &a)| dist2(p, &centroids[a]))
            .sum();
        let rms = if survivors.is_empty() {
            0.0
        } else {
            (sum / survivors.len() as f64).sqrt()
        };
        Self::new(centroids.to_vec(), rms)
    }
}

/// Distance from `row` to its nearest surviving centroid divided by the
/// survivors' RMS distance (1 when that spread is zero).
///
/// ```
/// use outlierscope::searchlight::{outlier_score, ScoreReference};
///
/// let reference = ScoreReference::new(vec![vec![0.0, 0.0], vec![10.0, 0.0]], 2.0);
/// assert_eq!(outlier_score(&[0.0, 6.0], &reference).unwrap(), 3.0);
/// ```
pub fn outlier_score(row: &[f64], reference: &ScoreReference) -> Result<f64> {
    if reference.centroids.is_empty() {
        return Err(Error::config(
            "centroids",
            "at least one surviving centroid is required",
        ));
    }
    let mut nearest = f64::INFINITY;
    for c in &reference.centroids {
        if c.len() != row.len() {
            return Err(Error::DimensionMismatch {
                expected: c.len(),
                found: row.len(),
            });
        }
        nearest = nearest.min(dist2(row, c));
    }
    let spread = if reference.rms > 0.0 { reference.rms } else { 1.0 };
    Ok(nearest.sqrt() / spread)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchlightConfig {
    pub dimensions: Vec<String>,
    pub measure: Measure,
    /// The earliest table year if absent.
    pub base_year: Option<i32>,
    pub kmeans: KMeansConfig,
    pub small_cluster_threshold: usize,
    pub max_outlier_iters: usize,
    /// Sweep every unordered pair of `dimensions` as a two-dimension pivot
    /// instead of one dimension at a time.
    pub pairs: bool,
}

impl Default for SearchlightConfig {
    fn default() -> Self {
        let outlier = OutlierConfig::default();
        Self {
            dimensions: Vec::new(),
            measure: Measure::Count,
            base_year: None,
            kmeans: outlier.kmeans,
            small_cluster_threshold: outlier.small_cluster_threshold,
            max_outlier_iters: outlier.max_outlier_iters,
            pairs: false,
        }
    }
}

impl SearchlightConfig {
    pub fn new(dimensions: &[&str], measure: Measure) -> Self {
        Self {
            dimensions: dimensions.iter().map(|d| d.to_string()).collect(),
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

    pub fn validate(&self, table: &DischargeTable) -> Result<()> {
        if self.dimensions.is_empty() {
            return Err(Error::config("dimensions", "at least one dimension is required"));
        }
        for (i, d) in self.dimensions.iter().enumerate() {
            table.dimension(d)?;
            if self.dimensions[..i].contains(d) {
                return Err(Error::config("dimensions", format!("'{d}' is listed twice")));
            }
        }
        if self.pairs && self.dimensions.len() < 2 {
            return Err(Error::config("pairs", "pair mode needs at least two dimensions"));
        }
        resolve_base_year(table, self.base_year)?;
        self.outlier_config().validate()
    }

    /// The row-dimension sets swept, in configuration order.
    pub fn sweep_units(&self) -> Vec<Vec<String>> {
        if !self.pairs {
            return self.dimensions.iter().map(|d| vec![d.clone()]).collect();
        }
        let mut units = Vec::new();
        for (i, a) in self.dimensions.iter().enumerate() {
            for b in &self.dimensions[i + 1..] {
                units.push(vec![a.clone(), b.clone()]);
            }
        }
        units
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchlightEntry {
    /// Row dimensions joined with `" x "` (a single name outside pair mode).
    pub dimension: String,
    pub row_dims: Vec<String>,
    pub outlier_count: usize,
    pub max_outlier_score: f64,
    pub outlier_run: OutlierRun,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedDimension {
    pub dimension: String,
    pub rows: usize,
    pub required: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchlightResult {
    pub config: SearchlightConfig,
    pub base_year: i32,
    /// Descending by max outlier score, then by outlier count, then by name.
    pub entries: Vec<SearchlightEntry>,
    /// Dimensions whose rebased matrix had fewer than `k + 1` rows.
    pub skipped: Vec<SkippedDimension>,
}

impl SearchlightResult {
    pub fn entry(&self, dimension: &str) -> Option<&SearchlightEntry> {
        self.entries.iter().find(|e| e.dimension == dimension)
    }
}

fn rank(a: &SearchlightEntry, b: &SearchlightEntry) -> Ordering {
    b.max_outlier_score
        .total_cmp(&a.max_outlier_score)
        .then(b.outlier_count.cmp(&a.outlier_count))
        .then_with(|| a.dimension.cmp(&b.dimension))
}

#[allow(clippy::large_enum_variant)] // one per sweep unit
enum Swept {
    Entry(SearchlightEntry),
    Skipped(SkippedDimension),
}

/// Runs pivot → rebase → iterative k-means for every sweep unit and ranks
/// the results. Units run in parallel; they share no state.
pub fn run_searchlight(table: &DischargeTable, config: &SearchlightConfig) -> Result<SearchlightResult> {
    config.validate(table)?;
    let base_year = resolve_base_year(table, config.base_year)?;
    let outlier = config.outlier_config();
    let required = outlier.kmeans.k + 1;

    let swept: Vec<Swept> = config
        .sweep_units()
        .into_par_iter()
        .map(|dims| -> Result<Swept> {
            let names: Vec<&str> = dims.iter().map(String::as_str).collect();
            let dimension = names.join(" x ");
            let matrix = pivot(table, &PivotSpec::new(&names, config.measure).rebased(base_year))?;
            if matrix.n_rows() < required {
                log::info!(
                    "searchlight: skipping '{dimension}' ({} rows, need {required})",
                    matrix.n_rows()
                );
                return Ok(Swept::Skipped(SkippedDimension {
                    dimension,
                    rows: matrix.n_rows(),
                    required,
                }));
            }
            let run = iterative_kmeans(&matrix, &outlier)?;
            Ok(Swept::Entry(SearchlightEntry {
                dimension,
                row_dims: dims,
                outlier_count: run.outlier_count(),
                max_outlier_score: run.max_outlier_score(),
                outlier_run: run,
            }))
        })
        .collect::<Result<_>>()?;

    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for s in swept {
        match s {
            Swept::Entry(e) => entries.push(e),
            Swept::Skipped(s) => skipped.push(s),
        }
    }
    entries.sort_by(rank);
    skipped.sort_by(|a, b| a.dimension.cmp(&b.dimension));
    Ok(SearchlightResult {
        config: config.clone(),
        base_year,
        entries,
        skipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{run_detector, RunConfig};
    use crate::testkit::{generate_table, PlantSpec};
    use proptest::prelude::*;

    #[test]
    fn score_examples() {
        let reference = ScoreReference::new(vec![vec![1.0, 1.0]], 0.5);
        assert_eq!(outlier_score(&[1.0, 1.0], &reference).unwrap(), 0.0);
        assert_eq!(outlier_score(&[1.0, 2.5], &reference).unwrap(), 3.0);
        let flat = ScoreReference::new(vec![vec![0.0]], 0.0);
        assert_eq!(outlier_score(&[4.0], &flat).unwrap(), 4.0);
        assert!(matches!(
            outlier_score(&[1.0], &reference),
            Err(Error::DimensionMismatch { expected: 2, found: 1 })
        ));
        assert!(outlier_score(&[1.0], &ScoreReference::new(vec![], 1.0)).is_err());
    }

    #[test]
    fn reference_rms_from_survivors() {
        let a = [0.0, 3.0];
        let b = [0.0, -3.0];
        let r = ScoreReference::from_survivors(&[&a, &b], &[0, 0], &[vec![0.0, 0.0]]);
        assert_eq!(r.rms, 3.0);
        assert_eq!(outlier_score(&[9.0, 0.0], &r).unwrap(), 3.0);
    }

    fn sweep_table() -> DischargeTable {
        let mut spec = PlantSpec::flat(40, 2010..=2016);
        spec.add_plant(7, 2014, 30.0);
        generate_table(&spec, 11).0
    }

    #[test]
    fn single_dimension_sweep_equals_direct_run() {
        let table = sweep_table();
        let mut cfg = SearchlightConfig::new(&["Diagnosis"], Measure::Count);
        cfg.kmeans.k = 4;
        let result = run_searchlight(&table, &cfg).unwrap();
        assert_eq!(result.entries.len(), 1);
        let mut direct = RunConfig::new(&["Diagnosis"], Measure::Count);
        direct.kmeans.k = 4;
        assert_eq!(result.entries[0].outlier_run, run_detector(&table, &direct).unwrap());
        assert_eq!(
            result.entries[0].outlier_count,
            result.entries[0].outlier_run.outlier_count()
        );
    }

    #[test]
    fn small_dimensions_are_skipped_not_errors() {
        let table = sweep_table();
        let mut cfg = SearchlightConfig::new(&["Diagnosis", "Race"], Measure::Count);
        cfg.kmeans.k = 8;
        let result = run_searchlight(&table, &cfg).unwrap();
        assert_eq!(result.entries.len(), 1);
        assert_eq!(result.skipped[0].dimension, "Race");
        assert_eq!(result.skipped[0].required, 9);
    }

    #[test]
    fn pair_mode_sweeps_pairs() {
        let table = sweep_table();
        let mut cfg = SearchlightConfig::new(&["Diagnosis", "Age Group", "Race"], Measure::Count);
        cfg.kmeans.k = 2;
        cfg.pairs = true;
        assert_eq!(cfg.sweep_units().len(), 3);
        let result = run_searchlight(&table, &cfg).unwrap();
        let mut names: Vec<&str> = result
            .entries
            .iter()
            .map(|e| e.dimension.as_str())
            .chain(result.skipped.iter().map(|s| s.dimension.as_str()))
            .collect();
        names.sort();
        assert_eq!(names, ["Age Group x Race", "Diagnosis x Age Group", "Diagnosis x Race"]);
    }

    #[test]
    fn validation() {
        let table = sweep_table();
        assert!(run_searchlight(&table, &SearchlightConfig::new(&[], Measure::Count)).is_err());
        assert!(matches!(
            run_searchlight(&table, &SearchlightConfig::new(&["Nope"], Measure::Count)),
            Err(Error::UnknownDimension { .. })
        ));
        let mut cfg = SearchlightConfig::new(&["Diagnosis"], Measure::Count);
        cfg.pairs = true;
        assert!(run_searchlight(&table, &cfg).is_err());
    }

    fn entry(name: &str, score: f64, count: usize, run: &OutlierRun) -> SearchlightEntry {
        SearchlightEntry {
            dimension: name.into(),
            row_dims: vec![name.into()],
            outlier_count: count,
            max_outlier_score: score,
            outlier_run: run.clone(),
        }
    }

    #[test]
    fn ranking_rule() {
        let table = sweep_table();
        let mut cfg = RunConfig::new(&["Diagnosis"], Measure::Count);
        cfg.kmeans.k = 2;
        let run = run_detector(&table, &cfg).unwrap();
        let mut entries = [
            entry("b", 2.0, 1, &run),
            entry("a", 2.0, 1, &run),
            entry("c", 2.0, 3, &run),
            entry("d", 5.0, 0, &run),
        ];
        entries.sort_by(rank);
        let order: Vec<&str> = entries.iter().map(|e| e.dimension.as_str()).collect();
        assert_eq!(order, ["d", "c", "a", "b"]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn score_is_non_negative_and_zero_on_centroids(
            centroids in proptest::collection::vec(proptest::collection::vec(-1e3f64..1e3, 3), 1..5),
            row in proptest::collection::vec(-1e3f64..1e3, 3),
            rms in 0.0f64..10.0,
        ) {
            let reference = ScoreReference::new(centroids.clone(), rms);
            prop_assert!(outlier_score(&row, &reference).unwrap() >= 0.0);
            for c in &centroids {
                prop_assert_eq!(outlier_score(c, &reference).unwrap(), 0.0);
            }
        }
    }
}
