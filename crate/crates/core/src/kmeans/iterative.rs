use serde::{Deserialize, Serialize};

use super::lloyd::{fit_points, Clustering, KMeansConfig};
use crate::aggregate::FeatureMatrix;
use crate::error::{Error, Result};
use crate::searchlight::{outlier_score, ScoreReference};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutlierConfig {
    pub kmeans: KMeansConfig,
    /// Clusters with at most this many members are dissolved as outliers.
    pub small_cluster_threshold: usize,
    pub max_outlier_iters: usize,
}

impl Default for OutlierConfig {
    fn default() -> Self {
        Self {
            kmeans: KMeansConfig::default(),
            small_cluster_threshold: 1,
            max_outlier_iters: 10,
        }
    }
}

impl OutlierConfig {
    pub fn validate(&self) -> Result<()> {
        self.kmeans.validate()?;
        if self.small_cluster_threshold == 0 {
            return Err(Error::config("small_cluster_threshold", "must be at least 1"));
        }
        if self.max_outlier_iters == 0 {
            return Err(Error::config("max_outlier_iters", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    NoSmallClusters,
    MaxIterations,
    TooFewRows,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::NoSmallClusters => "no_small_clusters",
            Termination::MaxIterations => "max_iterations",
            Termination::TooFewRows => "too_few_rows",
        }
    }
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedRow {
    /// Row index into the run's input matrix.
    pub row: usize,
    pub label: Vec<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierIteration {
    /// Input-matrix rows clustered in this iteration, ascending.
    pub rows: Vec<usize>,
    pub clustering: Clustering,
    /// Non-empty clusters at or below the size threshold.
    pub dissolved: Vec<usize>,
    pub removed: Vec<RemovedRow>,
    /// RMS distance of surviving rows to their centroids (before the
    /// zero-spread substitution applied when scoring).
    pub survivor_rms: f64,
}

impl OutlierIteration {
    /// Rebuilds the reference this iteration's removals were scored against
    /// from `input`, the run's input matrix.
    pub fn score_reference(&self, input: &FeatureMatrix) -> ScoreReference {
        let points: Vec<&[f64]> = self.rows.iter().map(|&r| input.row(r)).collect();
        let dissolved = |j: usize| self.dissolved.contains(&j);
        score_reference(&points, &self.clustering, &dissolved).0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalCluster {
    pub cluster: usize,
    pub centroid: Vec<f64>,
    pub members: Vec<Vec<String>>,
}

/// Complete trace of one iterative k-means execution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierRun {
    pub config: OutlierConfig,
    pub input: FeatureMatrix,
    pub iterations: Vec<OutlierIteration>,
    /// Rows never removed, ascending.
    pub survivors: Vec<usize>,
    /// Fit over `survivors` (assignments follow survivor order); absent only
    /// when every row was removed.
    pub final_clustering: Option<Clustering>,
    pub final_clusters: Vec<FinalCluster>,
    pub termination: Termination,
}

impl OutlierRun {
    /// Removed rows in removal order.
    pub fn removed(&self) -> impl Iterator<Item = (usize, &RemovedRow)> {
        self.iterations
            .iter()
            .enumerate()
            .flat_map(|(i, it)| it.removed.iter().map(move |r| (i + 1, r)))
    }

    pub fn outlier_count(&self) -> usize {
        self.iterations.iter().map(|it| it.removed.len()).sum()
    }

    pub fn max_outlier_score(&self) -> f64 {
        self.removed().map(|(_, r)| r.score).fold(0.0, f64::max)
    }

    pub fn removed_labels(&self) -> Vec<Vec<String>> {
        self.removed().map(|(_, r)| r.label.clone()).collect()
    }

    /// The removed row with the highest score (earliest on ties).
    pub fn top_outlier(&self) -> Option<&RemovedRow> {
        let mut best: Option<&RemovedRow> = None;
        for (_, r) in self.removed() {
            if best.is_none_or(|b| r.score > b.score) {
                best = Some(r);
            }
        }
        best
    }

    pub fn survivor_matrix(&self) -> FeatureMatrix {
        self.input.select_rows(&self.survivors)
    }
}

/// Repeated k-means where every non-empty cluster with at most
/// `small_cluster_threshold` members is removed as outliers before the next
/// fit.
///
/// Stops when a fit leaves no small cluster, after `max_outlier_iters` fits,
/// or when fewer than `k + 1` rows remain.
pub fn iterative_kmeans(matrix: &FeatureMatrix, config: &OutlierConfig) -> Result<OutlierRun> {
    config.validate()?;
    let k = config.kmeans.k;
    if matrix.n_rows() < k + 1 {
        return Err(Error::InsufficientRows {
            rows: matrix.n_rows(),
            required: k + 1,
        });
    }

    let mut current: Vec<usize> = (0..matrix.n_rows()).collect();
    let mut iterations: Vec<OutlierIteration> = Vec::new();
    let termination = loop {
        if iterations.len() >= config.max_outlier_iters {
            break Termination::MaxIterations;
        }
        if current.len() < k + 1 {
            break Termination::TooFewRows;
        }
        let points: Vec<&[f64]> = current.iter().map(|&r| matrix.row(r)).collect();
        let clustering = fit_points(&points, &config.kmeans)?;
        let sizes = clustering.cluster_sizes();
        let dissolved: Vec<usize> = (0..k)
            .filter(|&j| sizes[j] >= 1 && sizes[j] <= config.small_cluster_threshold)
            .collect();
        let is_dissolved = |j: usize| dissolved.contains(&j);

        let (reference, survivor_rms) = score_reference(&points, &clustering, &is_dissolved);
        let mut removed = Vec::new();
        for (pos, &row) in current.iter().enumerate() {
            if is_dissolved(clustering.assignments[pos]) {
                removed.push(RemovedRow {
                    row,
                    label: matrix.row_labels()[row].clone(),
                    score: outlier_score(points[pos], &reference)?,
                });
            }
        }
        let done = removed.is_empty();
        let rows = current.clone();
        current.retain(|r| !removed.iter().any(|x| x.row == *r));
        iterations.push(OutlierIteration {
            rows,
            clustering,
            dissolved,
            removed,
            survivor_rms,
        });
        if done {
            break Termination::NoSmallClusters;
        }
    };

    let final_clustering = match iterations.last() {
        Some(last) if last.removed.is_empty() => Some(last.clustering.clone()),
        _ if current.is_empty() => None,
        _ => {
            let points: Vec<&[f64]> = current.iter().map(|&r| matrix.row(r)).collect();
            let cfg = KMeansConfig {
                k: k.min(current.len()),
                ..config.kmeans
            };
            Some(fit_points(&points, &cfg)?)
        }
    };
    let final_clusters = final_clustering
        .as_ref()
        .map(|c| {
            (0..c.k())
                .map(|j| FinalCluster {
                    cluster: j,
                    centroid: c.centroids[j].clone(),
                    members: c
                        .members(j)
                        .into_iter()
                        .map(|pos| matrix.row_labels()[current[pos]].clone())
                        .collect(),
                })
                .collect()
        })
        .unwrap_or_default();

    Ok(OutlierRun {
        config: *config,
        input: matrix.clone(),
        iterations,
        survivors: current,
        final_clustering,
        final_clusters,
        termination,
    })
}

/// Centroids and spread that removed rows are scored against. When every
/// cluster is dissolved the reference falls back to the mean of all rows.
fn score_reference(
    points: &[&[f64]],
    clustering: &Clustering,
    is_dissolved: &dyn Fn(usize) -> bool,
) -> (ScoreReference, f64) {
    let sizes = clustering.cluster_sizes();
    let surviving: Vec<usize> = (0..clustering.k())
        .filter(|&j| sizes[j] > 0 && !is_dissolved(j))
        .collect();
    if surviving.is_empty() {
        let dim = points[0].len();
        let mut mean = vec![0.0; dim];
        for p in points {
            for (m, v) in mean.iter_mut().zip(p.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= points.len() as f64;
        }
        let assignments = vec![0; points.len()];
        let centroids = vec![mean];
        let reference = ScoreReference::from_survivors(points, &assignments, &centroids);
        let rms = reference.rms;
        return (reference, rms);
    }
    let survivors: Vec<&[f64]> = points
        .iter()
        .zip(&clustering.assignments)
        .filter(|&(_, &a)| !is_dissolved(a))
        .map(|(p, _)| *p)
        .collect();
    let remap: Vec<usize> = (0..clustering.k())
        .map(|j| surviving.iter().position(|&s| s == j).unwrap_or(usize::MAX))
        .collect();
    let assignments: Vec<usize> = clustering
        .assignments
        .iter()
        .filter(|&&a| !is_dissolved(a))
        .map(|&a| remap[a])
        .collect();
    let centroids: Vec<Vec<f64>> = surviving.iter().map(|&j| clustering.centroids[j].clone()).collect();
    let reference = ScoreReference::from_survivors(&survivors, &assignments, &centroids);
    let rms = reference.rms;
    (reference, rms)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>) -> FeatureMatrix {
        let labels: Vec<String> = (0..rows.len()).map(|i| format!("g{i:02}")).collect();
        let years = (0..rows[0].len() as i32).collect();
        FeatureMatrix::from_rows(labels, years, rows).unwrap()
    }

    fn config(k: usize) -> OutlierConfig {
        OutlierConfig {
            kmeans: KMeansConfig::with_k(k),
            ..OutlierConfig::default()
        }
    }

    /// Two tight blobs of ten rows each plus one far-away row.
    fn blobs_with_spike() -> FeatureMatrix {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(vec![0.0, i as f64 * 0.01]);
            rows.push(vec![10.0, 10.0 + i as f64 * 0.01]);
        }
        rows.push(vec![100.0, -50.0]);
        matrix(rows)
    }

    #[test]
    fn spike_is_removed_then_loop_settles() {
        let m = blobs_with_spike();
        let run = iterative_kmeans(&m, &config(3)).unwrap();
        assert_eq!(run.termination, Termination::NoSmallClusters);
        assert_eq!(run.iterations.len(), 2);
        assert_eq!(run.removed_labels(), [vec!["g20".to_string()]]);
        assert_eq!(run.survivors.len(), 20);
        assert_eq!(run.iterations[1].rows, run.survivors);
        assert!(run.top_outlier().unwrap().score > 10.0);
        let fc = run.final_clustering.as_ref().unwrap();
        assert_eq!(fc.assignments.len(), 20);
        let members: usize = run.final_clusters.iter().map(|c| c.members.len()).sum();
        assert_eq!(members, 20);
    }

    #[test]
    fn no_outliers_means_one_iteration() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(vec![0.0, i as f64 * 0.01]);
            rows.push(vec![10.0, 10.0 + i as f64 * 0.01]);
        }
        let run = iterative_kmeans(&matrix(rows), &config(2)).unwrap();
        assert_eq!(run.termination, Termination::NoSmallClusters);
        assert_eq!(run.iterations.len(), 1);
        assert_eq!(run.outlier_count(), 0);
        assert_eq!(run.max_outlier_score(), 0.0);
        assert!(run.top_outlier().is_none());
    }

    #[test]
    fn iteration_cap_is_reported() {
        let mut cfg = config(3);
        cfg.max_outlier_iters = 1;
        let run = iterative_kmeans(&blobs_with_spike(), &cfg).unwrap();
        assert_eq!(run.termination, Termination::MaxIterations);
        assert_eq!(run.iterations.len(), 1);
        // The final fit is over survivors even though the loop was cut short.
        assert_eq!(run.final_clustering.unwrap().assignments.len(), 20);
    }

    #[test]
    fn spread_out_rows_run_out() {
        // Five distinct points with k = 4: every fit leaves singletons.
        let rows = (0..5).map(|i| vec![(i * i) as f64]).collect();
        let run = iterative_kmeans(&matrix(rows), &config(4)).unwrap();
        assert_eq!(run.termination, Termination::TooFewRows);
        assert!(run.outlier_count() >= 3);
        assert_eq!(run.outlier_count() + run.survivors.len(), 5);
    }

    #[test]
    fn rejects_tiny_matrix_and_bad_config() {
        let m = matrix(vec![vec![1.0], vec![2.0]]);
        assert!(matches!(
            iterative_kmeans(&m, &config(2)),
            Err(Error::InsufficientRows { rows: 2, required: 3 })
        ));
        let mut cfg = config(1);
        cfg.small_cluster_threshold = 0;
        assert!(iterative_kmeans(&m, &cfg).is_err());
    }

    #[test]
    fn threshold_two_dissolves_pairs() {
        let mut rows = Vec::new();
        for i in 0..10 {
            rows.push(vec![i as f64 * 0.01]);
        }
        rows.push(vec![50.0]);
        rows.push(vec![50.1]);
        let mut cfg = config(2);
        cfg.small_cluster_threshold = 2;
        let run = iterative_kmeans(&matrix(rows.clone()), &cfg).unwrap();
        assert_eq!(run.iterations[0].removed.len(), 2);

        cfg.small_cluster_threshold = 1;
        let run = iterative_kmeans(&matrix(rows), &cfg).unwrap();
        assert_eq!(run.iterations[0].removed.len(), 0);
    }

    #[test]
    fn serializes_termination_in_snake_case() {
        let run = iterative_kmeans(&blobs_with_spike(), &config(3)).unwrap();
        let json = serde_json::to_value(&run).unwrap();
        assert_eq!(json["termination"], "no_small_clusters");
        let back: OutlierRun = serde_json::from_value(json).unwrap();
        assert_eq!(back, run);
        for t in [
            Termination::NoSmallClusters,
            Termination::MaxIterations,
            Termination::TooFewRows,
        ] {
            assert_eq!(serde_json::to_value(t).unwrap(), t.to_string());
        }
    }
}
