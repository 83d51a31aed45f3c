use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::exact::ExactSum;
use super::matrix::{ColumnAxis, FeatureMatrix, Provenance, RowFilter};
use crate::error::{Error, Result};
use crate::ingest::{CategoricalColumn, DischargeTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Count,
    TotalCost,
    MeanCost,
}

impl Measure {
    fn needs_costs(self) -> bool {
        !matches!(self, Measure::Count)
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count" => Ok(Measure::Count),
            "total_cost" => Ok(Measure::TotalCost),
            "mean_cost" => Ok(Measure::MeanCost),
            _ => Err(Error::config(
                "measure",
                format!("unknown measure '{s}' (expected count, total_cost or mean_cost)"),
            )),
        }
    }
}

/// Handling of `mean_cost` cells with no rows.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyCellPolicy {
    /// Emit 0 and record a warning.
    #[default]
    Zero,
    Error,
}

/// Group-by rows (one or two categorical dimensions) × year columns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PivotSpec {
    pub row_dims: Vec<String>,
    pub measure: Measure,
    #[serde(default)]
    pub rebase: Option<i32>,
    #[serde(default)]
    pub empty_cells: EmptyCellPolicy,
}

impl PivotSpec {
    pub fn new(row_dims: &[&str], measure: Measure) -> Self {
        Self {
            row_dims: row_dims.iter().map(|d| d.to_string()).collect(),
            measure,
            rebase: None,
            empty_cells: EmptyCellPolicy::Zero,
        }
    }

    pub fn rebased(mut self, base_year: i32) -> Self {
        self.rebase = Some(base_year);
        self
    }

    pub fn validate(&self, table: &DischargeTable) -> Result<()> {
        if self.row_dims.is_empty() || self.row_dims.len() > 2 {
            return Err(Error::config(
                "row_dims",
                format!("expected 1 or 2 row dimensions, got {}", self.row_dims.len()),
            ));
        }
        if self.row_dims.len() == 2 && self.row_dims[0] == self.row_dims[1] {
            return Err(Error::config("row_dims", "row dimensions must be distinct"));
        }
        for d in &self.row_dims {
            table.dimension(d)?;
        }
        if let Some(base) = self.rebase {
            check_base_in_range(table, base)?;
        }
        Ok(())
    }
}

fn check_base_in_range(table: &DischargeTable, base: i32) -> Result<()> {
    match table.year_range() {
        Some((lo, hi)) if (lo..=hi).contains(&base) => Ok(()),
        _ => Err(Error::BaseYearMissing {
            year: base,
            available: table.distinct_years().to_vec(),
        }),
    }
}

/// Split-apply-combine: group rows by `spec.row_dims`, bin by year, apply the
/// measure per cell, then rebase if requested.
///
/// Labels are sorted lexicographically and years ascend. Label tuples with no
/// rows at all are not materialized; a group absent in some year gets 0 for
/// count and total cost.
pub fn pivot(table: &DischargeTable, spec: &PivotSpec) -> Result<FeatureMatrix> {
    spec.validate(table)?;
    let dims: Vec<&CategoricalColumn> = spec
        .row_dims
        .iter()
        .map(|d| table.dimension(d))
        .collect::<Result<_>>()?;
    let m = pivot_years(table, &dims, None, spec.measure, spec.empty_cells)?.with_provenance(Provenance {
        row_dims: spec.row_dims.clone(),
        measure: spec.measure,
        rebase: None,
        filter: None,
    });
    match spec.rebase {
        Some(base) => rebase_percent_change(&m, base),
        None => Ok(m),
    }
}

/// Pivot restricted to rows whose `primary_dim` value is in
/// `primary_values`, grouped by `(primary_dim, subset_dim)`.
///
/// The flattened result has at most `primary_values.len() × S` rows (S =
/// subset values present in the filtered rows) and one column per table year.
pub fn pivot_subset(
    table: &DischargeTable,
    primary_dim: &str,
    primary_values: &[String],
    subset_dim: &str,
    measure: Measure,
    rebase: Option<i32>,
) -> Result<FeatureMatrix> {
    if primary_values.is_empty() {
        return Err(Error::config("primary_values", "at least one value is required"));
    }
    if primary_dim == subset_dim {
        return Err(Error::config(
            "subset_dim",
            "subset dimension must differ from the primary dimension",
        ));
    }
    let primary = table.dimension(primary_dim)?;
    let subset = table.dimension(subset_dim)?;
    if let Some(base) = rebase {
        check_base_in_range(table, base)?;
    }
    let mut keep = vec![false; primary.dictionary().len()];
    for v in primary_values {
        let code = primary.code_of(v).ok_or_else(|| Error::UnknownValue {
            dimension: primary_dim.to_string(),
            value: v.clone(),
        })?;
        keep[code as usize] = true;
    }
    let mut values = primary_values.to_vec();
    values.sort();
    values.dedup();
    let m = pivot_years(
        table,
        &[primary, subset],
        Some((primary, &keep)),
        measure,
        EmptyCellPolicy::Zero,
    )?
    .with_provenance(Provenance {
        row_dims: vec![primary_dim.to_string(), subset_dim.to_string()],
        measure,
        rebase: None,
        filter: Some(RowFilter {
            dimension: primary_dim.to_string(),
            values,
        }),
    });
    match rebase {
        Some(base) => rebase_percent_change(&m, base),
        None => Ok(m),
    }
}

/// Rows are values of `row_dim`; columns are the sorted values of `col_dim`
/// addressed by index. This is the transposed layout used when each curve is
/// an entity (e.g. a hospital) drawn across categories (e.g. diagnoses).
pub fn pivot_across(
    table: &DischargeTable,
    row_dim: &str,
    col_dim: &str,
    measure: Measure,
    empty_cells: EmptyCellPolicy,
) -> Result<FeatureMatrix> {
    if row_dim == col_dim {
        return Err(Error::config(
            "col_dim",
            "column dimension must differ from row dimension",
        ));
    }
    let rows = table.dimension(row_dim)?;
    let cols = table.dimension(col_dim)?;
    let mut order: Vec<u32> = (0..cols.dictionary().len() as u32).collect();
    order.sort_by(|&a, &b| cols.dictionary()[a as usize].cmp(&cols.dictionary()[b as usize]));
    let mut rank = vec![0usize; order.len()];
    for (i, &code) in order.iter().enumerate() {
        rank[code as usize] = i;
    }
    let names: Vec<String> = order.iter().map(|&c| cols.dictionary()[c as usize].clone()).collect();
    let col_codes = cols.codes();
    let acc = accumulate(
        table,
        &[rows],
        None,
        |r| Some(rank[col_codes[r] as usize]),
        names.len(),
        measure.needs_costs(),
    );
    let col_labels = (0..names.len() as i32).collect();
    Ok(finish(acc, col_labels, measure, empty_cells)?
        .with_axis(ColumnAxis::Category {
            dimension: col_dim.to_string(),
            names,
        })
        .with_provenance(Provenance {
            row_dims: vec![row_dim.to_string()],
            measure,
            rebase: None,
            filter: None,
        }))
}

/// Percent change of every cell relative to the row's base-year value:
/// `100 × (cell − base) / base`. Rows whose base value is 0 (or whose percent
/// change overflows) are dropped and noted in the warnings.
pub fn rebase_percent_change(matrix: &FeatureMatrix, base_year: i32) -> Result<FeatureMatrix> {
    if *matrix.axis() != ColumnAxis::Year {
        return Err(Error::config("rebase", "only year-indexed matrices can be rebased"));
    }
    let base_col = matrix
        .col_labels()
        .iter()
        .position(|&y| y == base_year)
        .ok_or_else(|| Error::BaseYearMissing {
            year: base_year,
            available: matrix.col_labels().to_vec(),
        })?;
    let mut labels = Vec::with_capacity(matrix.n_rows());
    let mut values = Vec::with_capacity(matrix.n_rows());
    let mut warnings = matrix.warnings().to_vec();
    for (label, row) in matrix.row_labels().iter().zip(matrix.rows()) {
        let base = row[base_col];
        if base == 0.0 {
            warnings.push(format!(
                "dropped row ({}): base year {base_year} value is 0",
                label.join(", ")
            ));
            continue;
        }
        let rebased: Vec<f64> = row.iter().map(|&v| 100.0 * (v - base) / base).collect();
        if rebased.iter().any(|v| !v.is_finite()) {
            warnings.push(format!("dropped row ({}): percent change overflows", label.join(", ")));
            continue;
        }
        labels.push(label.clone());
        values.push(rebased);
    }
    let mut rebased = FeatureMatrix::new(labels, matrix.col_labels().to_vec(), values)?.with_warnings(warnings);
    if let Some(p) = matrix.provenance() {
        let mut p = p.clone();
        p.rebase = Some(base_year);
        rebased = rebased.with_provenance(p);
    }
    Ok(rebased)
}

fn pivot_years(
    table: &DischargeTable,
    dims: &[&CategoricalColumn],
    filter: Option<(&CategoricalColumn, &[bool])>,
    measure: Measure,
    empty_cells: EmptyCellPolicy,
) -> Result<FeatureMatrix> {
    let years = table.distinct_years();
    let (min_year, lookup) = match (years.first(), years.last()) {
        (Some(&lo), Some(&hi)) => {
            let mut lookup = vec![usize::MAX; (hi as i64 - lo as i64 + 1) as usize];
            for (i, &y) in years.iter().enumerate() {
                lookup[(y - lo) as usize] = i;
            }
            (lo, lookup)
        }
        _ => (0, Vec::new()),
    };
    let row_years = table.years();
    let acc = accumulate(
        table,
        dims,
        filter,
        |r| Some(lookup[(row_years[r] - min_year) as usize]),
        years.len(),
        measure.needs_costs(),
    );
    finish(acc, years.to_vec(), measure, empty_cells)
}

struct Accumulated {
    labels: Vec<Vec<String>>,
    n_cols: usize,
    counts: Vec<u64>,
    sums: Vec<ExactSum>,
}

const DENSE_LIMIT: u64 = 1 << 22;

enum SlotMap {
    Dense(Vec<u32>),
    Sparse(HashMap<u64, u32>),
}

fn accumulate(
    table: &DischargeTable,
    dims: &[&CategoricalColumn],
    filter: Option<(&CategoricalColumn, &[bool])>,
    col_of: impl Fn(usize) -> Option<usize>,
    n_cols: usize,
    with_sums: bool,
) -> Accumulated {
    let second_card = dims.get(1).map_or(1, |d| d.dictionary().len().max(1) as u64);
    let cardinality = dims[0].dictionary().len() as u64 * second_card;
    let mut slots = if cardinality <= DENSE_LIMIT {
        SlotMap::Dense(vec![u32::MAX; cardinality as usize])
    } else {
        SlotMap::Sparse(HashMap::new())
    };
    let mut keys: Vec<(u32, u32)> = Vec::new();
    let mut counts: Vec<u64> = Vec::new();
    let mut sums: Vec<ExactSum> = Vec::new();
    let first = dims[0].codes();
    let second = dims.get(1).map(|d| d.codes());
    let costs = table.costs();

    for r in 0..table.row_count() {
        if let Some((col, keep)) = filter {
            if !keep[col.codes()[r] as usize] {
                continue;
            }
        }
        let Some(c) = col_of(r) else { continue };
        let a = first[r];
        let b = second.map_or(0, |s| s[r]);
        let key = a as u64 * second_card + b as u64;
        let slot_ref = match &mut slots {
            SlotMap::Dense(v) => &mut v[key as usize],
            SlotMap::Sparse(m) => m.entry(key).or_insert(u32::MAX),
        };
        if *slot_ref == u32::MAX {
            *slot_ref = keys.len() as u32;
            keys.push((a, b));
            counts.resize(counts.len() + n_cols, 0);
            if with_sums {
                sums.resize(sums.len() + n_cols, ExactSum::new());
            }
        }
        let cell = *slot_ref as usize * n_cols + c;
        counts[cell] += 1;
        if with_sums {
            sums[cell].add(costs[r]);
        }
    }

    let labels = keys
        .iter()
        .map(|&(a, b)| {
            let mut l = vec![dims[0].dictionary()[a as usize].clone()];
            if let Some(d) = dims.get(1) {
                l.push(d.dictionary()[b as usize].clone());
            }
            l
        })
        .collect();
    Accumulated {
        labels,
        n_cols,
        counts,
        sums,
    }
}

fn finish(
    acc: Accumulated,
    col_labels: Vec<i32>,
    measure: Measure,
    empty_cells: EmptyCellPolicy,
) -> Result<FeatureMatrix> {
    let mut order: Vec<usize> = (0..acc.labels.len()).collect();
    order.sort_by(|&a, &b| acc.labels[a].cmp(&acc.labels[b]));
    let n = acc.n_cols;
    let mut labels = Vec::with_capacity(order.len());
    let mut values = Vec::with_capacity(order.len());
    let mut warnings = Vec::new();
    for slot in order {
        let cells = slot * n..(slot + 1) * n;
        let row: Vec<f64> = match measure {
            Measure::Count => acc.counts[cells].iter().map(|&c| c as f64).collect(),
            Measure::TotalCost => acc.sums[cells].iter().map(ExactSum::value).collect(),
            Measure::MeanCost => {
                let mut empty = Vec::new();
                let mut row = Vec::with_capacity(n);
                for (j, (sum, &count)) in acc.sums[cells.clone()].iter().zip(&acc.counts[cells]).enumerate() {
                    if count == 0 {
                        if empty_cells == EmptyCellPolicy::Error {
                            return Err(Error::EmptyMeanCell {
                                label: acc.labels[slot].join(", "),
                                year: col_labels[j],
                            });
                        }
                        empty.push(col_labels[j].to_string());
                        row.push(0.0);
                    } else {
                        row.push(sum.value() / count as f64);
                    }
                }
                if !empty.is_empty() {
                    warnings.push(format!(
                        "mean_cost for ({}) has no rows in [{}]; emitted 0",
                        acc.labels[slot].join(", "),
                        empty.join(", ")
                    ));
                }
                row
            }
        };
        labels.push(acc.labels[slot].clone());
        values.push(row);
    }
    Ok(FeatureMatrix::new(labels, col_labels, values)?.with_warnings(warnings))
}
