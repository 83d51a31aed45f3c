use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregate::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_lloyd_iters: usize,
    /// Stop once the relative inertia decrease falls to this value or below.
    pub convergence_tol: f64,
    pub restarts: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            k: 8,
            seed: 0,
            max_lloyd_iters: 300,
            convergence_tol: 1e-6,
            restarts: 8,
        }
    }
}

impl KMeansConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::config("k", "must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts", "must be at least 1"));
        }
        if self.max_lloyd_iters == 0 {
            return Err(Error::config("max_lloyd_iters", "must be at least 1"));
        }
        if !(self.convergence_tol >= 0.0 && self.convergence_tol.is_finite()) {
            return Err(Error::config("convergence_tol", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Result of one k-means fit. `assignments[i]` indexes `centroids`; clusters
/// may be empty when points coincide.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations_used: usize,
    /// Inertia after the initial assignment, after each Lloyd iteration, and
    /// after each point-transfer pass.
    pub inertia_trace: Vec<f64>,
    /// Which restart produced this clustering.
    pub restart: usize,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k()];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// Positions (into the fitted point list) of the members of `cluster`.
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        self.assignments
            .iter()
            .enumerate()
            .filter(|&(_, &a)| a == cluster)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn kmeans_fit(matrix: &FeatureMatrix, config: &KMeansConfig) -> Result<Clustering> {
    let points: Vec<&[f64]> = matrix.rows().iter().map(Vec::as_slice).collect();
    fit_points(&points, config)
}

/// Best-of-`restarts` Lloyd's k-means with k-means++ seeding.
///
/// Each restart alternates Lloyd iterations with single-point transfer
/// passes until neither improves the inertia, so a restart stops only at a
/// partition that no single move can improve. `iterations_used` counts both.
///
/// Restart `r` draws from a generator seeded by `(config.seed, r)`, so the
/// outcome depends only on the inputs. Among restarts the lowest inertia wins,
/// ties going to the lowest restart index.
pub fn fit_points(points: &[&[f64]], config: &KMeansConfig) -> Result<Clustering> {
    config.validate()?;
    if points.len() < config.k {
        return Err(Error::InsufficientRows {
            rows: points.len(),
            required: config.k,
        });
    }
    let dim = points[0].len();
    for (r, p) in points.iter().enumerate() {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: p.len(),
            });
        }
        if let Some(c) = p.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: r, column: c });
        }
    }

    let runs: Vec<Clustering> = (0..config.restarts)
        .into_par_iter()
        .map(|r| lloyd(points, config, r))
        .collect();
    let mut best = None::<Clustering>;
    for run in runs {
        match &best {
            Some(b) if run.inertia >= b.inertia => {}
            _ => best = Some(run),
        }
    }
    Ok(best.expect("at least one restart"))
}

static LLOYD_RUNS: AtomicU64 = AtomicU64::new(0);
static LLOYD_STEPS: AtomicU64 = AtomicU64::new(0);
static INCREASES: AtomicU64 = AtomicU64::new(0);

/// Process-wide tally of every Lloyd run (each restart of each fit) since
/// start-up, including how many iterations raised the inertia by more than
/// a relative 1e-9. Lloyd's algorithm never should; this makes the property
/// checkable over a whole test suite rather than only over returned fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InertiaAudit {
    pub runs: u64,
    pub iterations: u64,
    pub increases: u64,
}

pub fn inertia_audit() -> InertiaAudit {
    InertiaAudit {
        runs: LLOYD_RUNS.load(Ordering::Relaxed),
        iterations: LLOYD_STEPS.load(Ordering::Relaxed),
        increases: INCREASES.load(Ordering::Relaxed),
    }
}

fn restart_seed(seed: u64, restart: usize) -> u64 {
    splitmix64(seed ^ splitmix64(restart as u64 + 1))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn lloyd(points: &[&[f64]], config: &KMeansConfig, restart: usize) -> Clustering {
    let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(config.seed, restart));
    let mut centroids = kmeans_plus_plus(points, config.k, &mut rng);
    let mut assignments = vec![0usize; points.len()];
    let mut inertia = assign(points, &centroids, &mut assignments);
    let mut trace = vec![inertia];
    let mut record = |inertia: &mut f64, next: f64| {
        trace.push(next);
        if next > *inertia + 1e-9 * inertia.abs() {
            INCREASES.fetch_add(1, Ordering::Relaxed);
            log::error!("inertia increased from {inertia} to {next}");
        }
        *inertia = next;
    };
    let mut iterations = 0;
    let mut passes = 0;
    loop {
        while iterations < config.max_lloyd_iters {
            update_centroids(points, &assignments, &mut centroids);
            let next = assign(points, &centroids, &mut assignments);
            iterations += 1;
            let prev = inertia;
            record(&mut inertia, next);
            if prev <= 0.0 || prev - next <= config.convergence_tol * prev {
                break;
            }
        }
        update_centroids(points, &assignments, &mut centroids);
        let moved = passes < config.max_lloyd_iters && transfer_pass(points, &mut assignments, &mut centroids);
        if moved {
            passes += 1;
            update_centroids(points, &assignments, &mut centroids);
        }
        let next = assign(points, &centroids, &mut assignments);
        record(&mut inertia, next);
        if !moved {
            break;
        }
    }
    LLOYD_RUNS.fetch_add(1, Ordering::Relaxed);
    LLOYD_STEPS.fetch_add((iterations + passes) as u64, Ordering::Relaxed);
    Clustering {
        assignments,
        centroids,
        inertia,
        iterations_used: iterations + passes,
        inertia_trace: trace,
        restart,
    }
}

/// One Hartigan pass: moves single points to another cluster whenever that
/// strictly lowers the inertia, keeping centroids at their members' means.
/// Moving point `p` from cluster `a` (size `n_a > 1`) to `b` changes the
/// inertia by `n_b/(n_b+1)·|p-c_b|² - n_a/(n_a-1)·|p-c_a|²`. Lloyd's fixed
/// points can still admit such moves; these fixed points cannot. Returns
/// whether any point moved.
fn transfer_pass(points: &[&[f64]], assignments: &mut [usize], centroids: &mut [Vec<f64>]) -> bool {
    let mut counts = vec![0usize; centroids.len()];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut moved = false;
    for (p, a) in points.iter().zip(assignments.iter_mut()) {
        let from = *a;
        let n_from = counts[from] as f64;
        if counts[from] <= 1 {
            continue;
        }
        let removal = n_from / (n_from - 1.0) * dist2(p, &centroids[from]);
        let mut best = None;
        let mut best_cost = removal * (1.0 - 1e-12);
        for (j, c) in centroids.iter().enumerate() {
            if j == from {
                continue;
            }
            let n_j = counts[j] as f64;
            let cost = n_j / (n_j + 1.0) * dist2(p, c);
            if cost < best_cost {
                best = Some(j);
                best_cost = cost;
            }
        }
        let Some(to) = best else { continue };
        let n_to = counts[to] as f64;
        for (c, v) in centroids[from].iter_mut().zip(p.iter()) {
            *c = (*c * n_from - v) / (n_from - 1.0);
        }
        for (c, v) in centroids[to].iter_mut().zip(p.iter()) {
            *c = (*c * n_to + v) / (n_to + 1.0);
        }
        counts[from] -= 1;
        counts[to] += 1;
        *a = to;
        moved = true;
    }
    moved
}

fn kmeans_plus_plus(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let first = rng.random_range(0..n);
    let mut centroids = vec![points[first].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| dist2(p, points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                if d <= 0.0 {
                    continue;
                }
                acc += d;
                chosen = Some(i);
                if acc > target {
                    break;
                }
            }
            chosen.expect("positive total implies a positive weight")
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].to_vec();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest-centroid assignment (ties to the lower index); returns inertia.
fn assign(points: &[&[f64]], centroids: &[Vec<f64>], assignments: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (p, a) in points.iter().zip(assignments.iter_mut()) {
        let mut best = 0;
        let mut best_d = dist2(p, &centroids[0]);
        for (j, c) in centroids.iter().enumerate().skip(1) {
            let d = dist2(p, c);
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        *a = best;
        inertia += best_d;
    }
    inertia
}

/// Moves each centroid to the mean of its members. An empty cluster is
/// reseeded at the point farthest from its own (updated) centroid.
fn update_centroids(points: &[&[f64]], assignments: &[usize], centroids: &mut [Vec<f64>]) {
    let dim = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, v) in sums[a].iter_mut().zip(p.iter()) {
            *s += v;
        }
    }
    for ((c, s), &n) in centroids.iter_mut().zip(sums).zip(&counts) {
        if n > 0 {
            *c = s.into_iter().map(|v| v / n as f64).collect();
        }
    }
    if counts.iter().all(|&n| n > 0) {
        return;
    }
    let mut far: Vec<f64> = points
        .iter()
        .zip(assignments)
        .map(|(p, &a)| dist2(p, &centroids[a]))
        .collect();
    for j in (0..k).filter(|&j| counts[j] == 0) {
        let mut pick = 0;
        for (i, &d) in far.iter().enumerate() {
            if d > far[pick] {
                pick = i;
            }
        }
        centroids[j] = points[pick].to_vec();
        far[pick] = f64::NEG_INFINITY;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pts(rows: &[Vec<f64>]) -> Vec<&[f64]> {
        rows.iter().map(Vec::as_slice).collect()
    }

    fn recomputed_inertia(rows: &[Vec<f64>], c: &Clustering) -> f64 {
        rows.iter()
            .zip(&c.assignments)
            .map(|(r, &a)| dist2(r, &c.centroids[a]))
            .sum()
    }

    #[test]
    fn k_one_is_the_column_mean() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 6.0], vec![5.0, 10.0]];
        let c = fit_points(&pts(&rows), &KMeansConfig::with_k(1)).unwrap();
        assert_eq!(c.centroids, [vec![3.0, 6.0]]);
        // deviations: (4+16) + 0 + (4+16)
        assert!((c.inertia - 40.0).abs() < 1e-12);
    }

    #[test]
    fn identical_points_leave_an_empty_cluster() {
        let rows = vec![vec![7.0, 7.0]; 5];
        let c = fit_points(&pts(&rows), &KMeansConfig::with_k(2)).unwrap();
        assert_eq!(c.inertia, 0.0);
        let mut sizes = c.cluster_sizes();
        sizes.sort();
        assert_eq!(sizes, [0, 5]);
    }

    #[test]
    fn two_blobs_are_separated() {
        let mut rows = Vec::new();
        for i in 0..6 {
            rows.push(vec![i as f64 * 0.1, 0.0]);
            rows.push(vec![100.0 + i as f64 * 0.1, 50.0]);
        }
        let c = fit_points(&pts(&rows), &KMeansConfig::with_k(2)).unwrap();
        for i in (0..12).step_by(2) {
            assert_eq!(c.assignments[i], c.assignments[0]);
            assert_eq!(c.assignments[i + 1], c.assignments[1]);
        }
        assert_ne!(c.assignments[0], c.assignments[1]);
    }

    #[test]
    fn errors() {
        let rows = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            fit_points(&pts(&rows), &KMeansConfig::with_k(3)),
            Err(Error::InsufficientRows { rows: 2, required: 3 })
        ));
        let bad = vec![vec![1.0], vec![f64::NAN]];
        assert!(matches!(
            fit_points(&pts(&bad), &KMeansConfig::with_k(1)),
            Err(Error::NonFinite { row: 1, .. })
        ));
        assert!(fit_points(&pts(&rows), &KMeansConfig::with_k(0)).is_err());
        let ragged = vec![vec![1.0], vec![2.0, 3.0]];
        assert!(fit_points(&pts(&ragged), &KMeansConfig::with_k(1)).is_err());
    }

    #[test]
    fn restart_seeds_differ() {
        let seeds: std::collections::HashSet<u64> = (0..64).map(|r| restart_seed(7, r)).collect();
        assert_eq!(seeds.len(), 64);
    }

    #[test]
    fn audit_counts_every_restart() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i % 5) as f64, (i / 5) as f64]).collect();
        let before = inertia_audit();
        let mut cfg = KMeansConfig::with_k(3);
        cfg.restarts = 5;
        fit_points(&pts(&rows), &cfg).unwrap();
        let after = inertia_audit();
        // other tests may fit concurrently, so only a lower bound holds
        assert!(after.runs >= before.runs + 5);
        assert_eq!(after.increases, 0);
    }

    #[test]
    fn transfer_escapes_a_lloyd_fixed_point() {
        // {0, 2} | {3.9}: every point is nearest its own mean, so Lloyd stops
        // at inertia 2, but moving 2 across gives {0} | {2, 3.9} at 1.805.
        let rows = vec![vec![0.0], vec![2.0], vec![3.9]];
        let mut assignments = vec![0, 0, 1];
        let mut centroids = vec![vec![1.0], vec![3.9]];
        let before = assign(&pts(&rows), &centroids, &mut assignments);
        assert_eq!(assignments, [0, 0, 1]);
        assert!((before - 2.0).abs() < 1e-12);
        assert!(transfer_pass(&pts(&rows), &mut assignments, &mut centroids));
        assert_eq!(assignments, [0, 1, 1]);
        assert!((centroids[1][0] - 2.95).abs() < 1e-12);
        let after = assign(&pts(&rows), &centroids, &mut assignments);
        assert!((after - 1.805).abs() < 1e-12);
        assert!(!transfer_pass(&pts(&rows), &mut assignments, &mut centroids));
    }

    fn arb_points() -> impl Strategy<Value = Vec<Vec<f64>>> {
        (1usize..4)
            .prop_flat_map(|dim| proptest::collection::vec(proptest::collection::vec(-100.0f64..100.0, dim), 4..30))
    }

    proptest! {
        #[test]
        fn fit_invariants(rows in arb_points(), k in 1usize..4, seed in any::<u64>()) {
            let cfg = KMeansConfig { k, seed, restarts: 3, ..KMeansConfig::default() };
            let c = fit_points(&pts(&rows), &cfg).unwrap();
            // nearest-centroid assignment
            for (r, &a) in rows.iter().zip(&c.assignments) {
                let da = dist2(r, &c.centroids[a]);
                for (j, cj) in c.centroids.iter().enumerate() {
                    let dj = dist2(r, cj);
                    prop_assert!(da <= dj);
                    if da == dj {
                        prop_assert!(a <= j);
                    }
                }
            }
            // stored inertia matches recomputation
            let re = recomputed_inertia(&rows, &c);
            prop_assert!((re - c.inertia).abs() <= 1e-9 * re.abs().max(1e-300));
            // monotone trace
            for w in c.inertia_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs());
            }
            // determinism
            prop_assert_eq!(&c, &fit_points(&pts(&rows), &cfg).unwrap());
        }

        #[test]
        fn scaling_preserves_assignments(rows in arb_points(), k in 1usize..4, seed in any::<u64>(),
                                         scale in prop::sample::select(vec![0.5, 2.0, 4.0, 1024.0])) {
            let cfg = KMeansConfig { k, seed, restarts: 3, ..KMeansConfig::default() };
            let scaled: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v * scale).collect()).collect();
            let a = fit_points(&pts(&rows), &cfg).unwrap();
            let b = fit_points(&pts(&scaled), &cfg).unwrap();
            prop_assert_eq!(a.assignments, b.assignments);
            prop_assert!((b.inertia - a.inertia * scale * scale).abs() <= 1e-9 * b.inertia.max(1e-300));
        }
    }
}
