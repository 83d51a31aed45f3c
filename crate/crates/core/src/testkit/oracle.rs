use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::aggregate::{EmptyCellPolicy, FeatureMatrix, Measure, PivotSpec};
use crate::error::{Error, Result};
use crate::ingest::DischargeTable;

/// Correctly rounded floating-point sum (Shewchuk's non-overlapping partials
/// with a final half-even correction, as in Python's `math.fsum`).
///
/// ```
/// use outlierscope::testkit::fsum;
///
/// assert_eq!(fsum([1e16, 1.0, 1.0]), 1.0000000000000002e16);
/// assert_eq!(fsum([0.1; 10]), 1.0);
/// ```
pub fn fsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut kept = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[kept] = lo;
                kept += 1;
            }
            x = hi;
        }
        partials.truncate(kept);
        partials.push(x);
    }

    let Some(mut n) = partials.len().checked_sub(1) else {
        return 0.0;
    };
    let mut hi = partials[n];
    let mut lo = 0.0;
    while n > 0 {
        let x = hi;
        n -= 1;
        let y = partials[n];
        hi = x + y;
        lo = y - (hi - x);
        if lo != 0.0 {
            break;
        }
    }
    // Round half to even when the discarded tail sits exactly on a tie.
    if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
        let y = lo * 2.0;
        let x = hi + y;
        if y == x - hi {
            hi = x;
        }
    }
    hi
}

/// The scalar percent-change formula.
pub fn oracle_percent_change(value: f64, base: f64) -> f64 {
    100.0 * (value - base) / base
}

/// Nested-loop reference for `pivot`: decode every row to strings, bucket
/// into ordered maps, then apply the measure with [`fsum`].
pub fn oracle_groupby(table: &DischargeTable, spec: &PivotSpec) -> Result<FeatureMatrix> {
    let dims = spec
        .row_dims
        .iter()
        .map(|d| table.dimension(d))
        .collect::<Result<Vec<_>>>()?;
    let mut cells: BTreeMap<Vec<String>, BTreeMap<i32, Vec<f64>>> = BTreeMap::new();
    let mut years = BTreeSet::new();
    for row in 0..table.row_count() {
        let label: Vec<String> = dims.iter().map(|d| d.value(row).to_string()).collect();
        let year = table.years()[row];
        years.insert(year);
        cells
            .entry(label)
            .or_default()
            .entry(year)
            .or_default()
            .push(table.costs()[row]);
    }
    let years: Vec<i32> = years.into_iter().collect();

    let mut labels = Vec::new();
    let mut values = Vec::new();
    for (label, by_year) in cells {
        let mut row = Vec::with_capacity(years.len());
        for y in &years {
            let costs = by_year.get(y).map(Vec::as_slice).unwrap_or(&[]);
            let v = match spec.measure {
                Measure::Count => costs.len() as f64,
                Measure::TotalCost => fsum(costs.iter().copied()),
                Measure::MeanCost if costs.is_empty() => match spec.empty_cells {
                    EmptyCellPolicy::Zero => 0.0,
                    EmptyCellPolicy::Error => {
                        return Err(Error::EmptyMeanCell {
                            label: label.join(", "),
                            year: *y,
                        })
                    }
                },
                Measure::MeanCost => fsum(costs.iter().copied()) / costs.len() as f64,
            };
            row.push(v);
        }
        if let Some(base_year) = spec.rebase {
            let Some(b) = years.iter().position(|y| *y == base_year) else {
                return Err(Error::BaseYearMissing {
                    year: base_year,
                    available: years.clone(),
                });
            };
            let base = row[b];
            if base == 0.0 {
                continue;
            }
            row = row.iter().map(|&v| oracle_percent_change(v, base)).collect();
            if row.iter().any(|v| !v.is_finite()) {
                continue;
            }
        }
        labels.push(label);
        values.push(row);
    }
    FeatureMatrix::new(labels, years, values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    /// Cluster (0 or 1) of each point; point 0 is always in cluster 0.
    pub labels: Vec<usize>,
    pub inertia: f64,
}

fn group_inertia(points: &[Vec<f64>], members: &[usize]) -> f64 {
    if members.is_empty() {
        return 0.0;
    }
    (0..points[members[0]].len())
        .map(|c| {
            let mean = members.iter().map(|&i| points[i][c]).sum::<f64>() / members.len() as f64;
            members.iter().map(|&i| (points[i][c] - mean).powi(2)).sum::<f64>()
        })
        .sum()
}

/// Exhaustive minimum within-cluster sum of squares over every split of the
/// points into two non-empty groups. Exponential; meant for n ≤ 16 or so.
pub fn oracle_best_2partition(points: &[Vec<f64>]) -> Partition {
    let n = points.len();
    if n < 2 {
        return Partition {
            labels: vec![0; n],
            inertia: 0.0,
        };
    }
    let mut best = Partition {
        labels: Vec::new(),
        inertia: f64::INFINITY,
    };
    for mask in 1u64..(1u64 << (n - 1)) {
        let labels: Vec<usize> = (0..n)
            .map(|i| if i > 0 && mask >> (i - 1) & 1 == 1 { 1 } else { 0 })
            .collect();
        let a: Vec<usize> = (0..n).filter(|&i| labels[i] == 0).collect();
        let b: Vec<usize> = (0..n).filter(|&i| labels[i] == 1).collect();
        let inertia = group_inertia(points, &a) + group_inertia(points, &b);
        if inertia < best.inertia {
            best = Partition { labels, inertia };
        }
    }
    best
}

/// Row indices ordered by Euclidean distance to the coordinate-wise median
/// row, farthest first (ties by index).
pub fn oracle_median_distance_ranking(rows: &[Vec<f64>]) -> Vec<usize> {
    if rows.is_empty() {
        return Vec::new();
    }
    let dim = rows[0].len();
    let median: Vec<f64> = (0..dim)
        .map(|c| {
            let mut col: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            col.sort_by(f64::total_cmp);
            let m = col.len() / 2;
            if col.len() % 2 == 1 {
                col[m]
            } else {
                (col[m - 1] + col[m]) / 2.0
            }
        })
        .collect();
    let dist: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().zip(&median).map(|(a, b)| (a - b).powi(2)).sum())
        .collect();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| dist[b].total_cmp(&dist[a]).then(a.cmp(&b)));
    order
}
