use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{ColumnKind, ColumnSpec, DatasetSchema, DischargeTable, TableBuilder};

pub const DIAGNOSIS: &str = "Diagnosis";
pub const FACILITY: &str = "Facility";
pub const FACILITY_COUNT: usize = 6;
pub const AGE_GROUPS: [&str; 5] = ["0 to 17", "18 to 29", "30 to 49", "50 to 69", "70 or Older"];
pub const RACES: [&str; 4] = ["Black/African American", "Multi-racial", "Other Race", "White"];
/// Secondary dimensions in the order their values cycle.
pub const SECONDARY_DIMS: [&str; 3] = ["Age Group", "Race", FACILITY];

const COST: &str = "Total Costs";
const YEAR: &str = "Discharge Year";

/// Schema of every synthetic table: `Diagnosis`, `Age Group`, `Race`,
/// `Facility`, `Total Costs`, `Discharge Year`.
pub fn synthetic_schema() -> DatasetSchema {
    let mut columns: Vec<ColumnSpec> = std::iter::once(DIAGNOSIS)
        .chain(SECONDARY_DIMS)
        .map(ColumnSpec::categorical)
        .collect();
    columns.push(ColumnSpec::new(COST, ColumnKind::Numeric, true));
    columns.push(ColumnSpec::new(YEAR, ColumnKind::Year, true));
    DatasetSchema::new(columns, COST, YEAR).expect("synthetic schema is valid")
}

fn secondary_values(dim: usize) -> Vec<String> {
    match dim {
        0 => AGE_GROUPS.iter().map(|s| s.to_string()).collect(),
        1 => RACES.iter().map(|s| s.to_string()).collect(),
        _ => (1..=FACILITY_COUNT).map(|i| format!("Facility {i:02}")).collect(),
    }
}

fn group_label(g: usize) -> String {
    format!("DX-{:03}", g + 1)
}

/// A spike of `magnitude × trend_noise_sd` extra discharges in one cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub group: usize,
    /// Confines the spike to one value of a secondary dimension:
    /// `(dimension name, value index)`.
    pub subset: Option<(String, usize)>,
    pub year: i32,
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub n_groups: usize,
    pub years: Vec<i32>,
    /// Inclusive range each group's flat yearly discharge count is drawn from.
    pub base_count_range: (u32, u32),
    /// Standard deviation of the Gaussian noise added to each yearly count.
    pub trend_noise_sd: f64,
    pub plants: Vec<Plant>,
}

impl Default for PlantSpec {
    fn default() -> Self {
        Self::flat(100, 2009..=2015)
    }
}

impl PlantSpec {
    /// `n_groups` flat noisy trends over `years`, no plants.
    pub fn flat(n_groups: usize, years: std::ops::RangeInclusive<i32>) -> Self {
        Self {
            n_groups,
            years: years.collect(),
            base_count_range: (200, 200),
            trend_noise_sd: 2.0,
            plants: Vec::new(),
        }
    }

    pub fn add_plant(&mut self, group: usize, year: i32, magnitude: f64) -> &mut Self {
        self.plants.push(Plant {
            group,
            subset: None,
            year,
            magnitude,
        });
        self
    }

    pub fn add_subset_plant(
        &mut self,
        group: usize,
        dimension: &str,
        value: usize,
        year: i32,
        magnitude: f64,
    ) -> &mut Self {
        self.plants.push(Plant {
            group,
            subset: Some((dimension.to_string(), value)),
            year,
            magnitude,
        });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_groups == 0 {
            return Err(Error::config("n_groups", "must be at least 1"));
        }
        if self.years.is_empty() {
            return Err(Error::config("years", "at least one year is required"));
        }
        let mut sorted = self.years.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.years.len() {
            return Err(Error::config("years", "years must be distinct"));
        }
        let (lo, hi) = self.base_count_range;
        if lo == 0 || lo > hi {
            return Err(Error::config("base_count_range", "expected 0 < low <= high"));
        }
        if !(self.trend_noise_sd.is_finite() && self.trend_noise_sd >= 0.0) {
            return Err(Error::config("trend_noise_sd", "must be finite and non-negative"));
        }
        for p in &self.plants {
            if !(p.magnitude.is_finite() && p.magnitude > 0.0) {
                return Err(Error::config("plants", "magnitudes must be positive"));
            }
            if p.group >= self.n_groups {
                return Err(Error::config("plants", format!("group {} out of range", p.group)));
            }
            if !self.years.contains(&p.year) {
                return Err(Error::config("plants", format!("year {} not generated", p.year)));
            }
            if let Some((dim, value)) = &p.subset {
                let d = secondary_index(dim)?;
                if *value >= secondary_values(d).len() {
                    return Err(Error::config("plants", format!("'{dim}' has no value index {value}")));
                }
            }
        }
        Ok(())
    }

    /// Extra discharges a plant adds.
    fn spike(&self, plant: &Plant) -> u64 {
        (plant.magnitude * self.trend_noise_sd).round().max(1.0) as u64
    }
}

fn secondary_index(dim: &str) -> Result<usize> {
    SECONDARY_DIMS
        .iter()
        .position(|d| *d == dim)
        .ok_or_else(|| Error::config("plants", format!("unknown secondary dimension '{dim}'")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedLabel {
    /// `[group]`, or `[group, subset value]` for confined spikes.
    pub label: Vec<String>,
    /// Secondary dimension of a confined spike.
    pub dimension: Option<String>,
    pub year: i32,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub plants: Vec<PlantedLabel>,
}

impl GroundTruth {
    /// Labels of spikes planted on whole groups, as one-element label tuples.
    pub fn group_labels(&self) -> Vec<Vec<String>> {
        self.plants
            .iter()
            .filter(|p| p.dimension.is_none())
            .map(|p| p.label.clone())
            .collect()
    }

    /// `(group, value)` labels of spikes confined to `dimension`.
    pub fn subset_labels(&self, dimension: &str) -> Vec<Vec<String>> {
        self.plants
            .iter()
            .filter(|p| p.dimension.as_deref() == Some(dimension))
            .map(|p| p.label.clone())
            .collect()
    }

    /// Every group that carries any plant, sorted.
    pub fn planted_groups(&self) -> Vec<String> {
        let mut g: Vec<String> = self.plants.iter().map(|p| p.label[0].clone()).collect();
        g.sort();
        g.dedup();
        g
    }
}

/// Streams the synthetic rows of `spec` to `emit` in schema column order.
///
/// Each group has a flat yearly count drawn from `base_count_range` plus
/// rounded Gaussian noise. Discharges in a cell cycle through the values of
/// each secondary dimension from a random offset, so every secondary
/// sub-cell holds an even share (±1) of the group's count and inherits its
/// flat trend. A
/// confined plant adds discharges carrying one fixed secondary value.
fn generate_rows(spec: &PlantSpec, seed: u64, mut emit: impl FnMut(&[&str]) -> Result<()>) -> Result<GroundTruth> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.trend_noise_sd).map_err(|e| Error::config("trend_noise_sd", e.to_string()))?;
    let cost_noise = Normal::new(0.0, 0.25).expect("constant sd is valid");
    let secondary: Vec<Vec<String>> = (0..SECONDARY_DIMS.len()).map(secondary_values).collect();
    let years: Vec<String> = spec.years.iter().map(|y| y.to_string()).collect();

    let mut cost_buf = String::new();
    let mut pick = [0usize; SECONDARY_DIMS.len()];
    for g in 0..spec.n_groups {
        let label = group_label(g);
        let base = rng.random_range(spec.base_count_range.0..=spec.base_count_range.1) as f64;
        let group_cost: f64 = rng.random_range(2_000.0..20_000.0);
        for (yi, &year) in spec.years.iter().enumerate() {
            let mut count = (base + noise.sample(&mut rng)).round().max(0.0) as u64;
            let mut confined = Vec::new();
            for p in spec.plants.iter().filter(|p| p.group == g && p.year == year) {
                match &p.subset {
                    None => count += spec.spike(p),
                    Some((dim, value)) => confined.push((secondary_index(dim)?, *value, spec.spike(p))),
                }
            }
            let offsets: Vec<usize> = secondary.iter().map(|v| rng.random_range(0..v.len())).collect();
            let cells = std::iter::once((None, count)).chain(confined.iter().map(|&(d, v, n)| (Some((d, v)), n)));
            for (fixed, n) in cells {
                for i in 0..n as usize {
                    for (d, values) in secondary.iter().enumerate() {
                        pick[d] = match fixed {
                            Some((fd, fv)) if fd == d => fv,
                            _ => (i + offsets[d]) % values.len(),
                        };
                    }
                    let z: f64 = cost_noise.sample(&mut rng);
                    let cost = group_cost * z.exp();
                    cost_buf.clear();
                    use std::fmt::Write as _;
                    write!(cost_buf, "{cost:.2}").expect("writing to a String");
                    let mut row: Vec<&str> = Vec::with_capacity(6);
                    row.push(&label);
                    for (d, values) in secondary.iter().enumerate() {
                        row.push(&values[pick[d]]);
                    }
                    row.push(&cost_buf);
                    row.push(&years[yi]);
                    emit(&row)?;
                }
            }
        }
    }

    let plants = spec
        .plants
        .iter()
        .map(|p| {
            let mut label = vec![group_label(p.group)];
            let dimension = p.subset.as_ref().map(|(dim, value)| {
                let d = SECONDARY_DIMS.iter().position(|s| s == dim).expect("validated");
                label.push(secondary[d][*value].clone());
                dim.clone()
            });
            PlantedLabel {
                label,
                dimension,
                year: p.year,
                magnitude: p.magnitude,
            }
        })
        .collect();
    Ok(GroundTruth { seed, plants })
}

/// Builds the synthetic table for `spec` and the labels of its planted rows.
/// The same `(spec, seed)` always yields the same table.
///
/// # Panics
///
/// Panics if `spec` is invalid; call [`PlantSpec::validate`] first for
/// untrusted input.
pub fn generate_table(spec: &PlantSpec, seed: u64) -> (DischargeTable, GroundTruth) {
    let mut builder = TableBuilder::new(synthetic_schema());
    let truth = generate_rows(spec, seed, |row| {
        builder
            .push_row(row)
            .expect("generated rows satisfy the synthetic schema");
        Ok(())
    })
    .expect("plant spec must be valid");
    (builder.finish(), truth)
}

/// Writes the synthetic rows as CSV with a header line.
pub fn write_csv<W: Write>(spec: &PlantSpec, seed: u64, out: W) -> Result<GroundTruth> {
    let mut w = csv::Writer::from_writer(out);
    let schema = synthetic_schema();
    w.write_record(schema.columns().iter().map(|c| c.name.as_str()))?;
    let truth = generate_rows(spec, seed, |row| Ok(w.write_record(row)?))?;
    w.flush().map_err(|e| Error::io("<csv output>", e))?;
    Ok(truth)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{pivot, Measure, PivotSpec};
    use crate::ingest::{read_csv, ErrorPolicy};

    #[test]
    fn no_plants_no_truth() {
        let (t, truth) = generate_table(&PlantSpec::flat(5, 2010..=2012), 3);
        assert!(truth.plants.is_empty());
        assert_eq!(t.distinct_years(), [2010, 2011, 2012]);
        assert_eq!(t.dimension(DIAGNOSIS).unwrap().dictionary().len(), 5);
    }

    #[test]
    fn same_seed_same_table() {
        let mut spec = PlantSpec::flat(8, 2010..=2013);
        spec.add_plant(2, 2012, 10.0);
        let (a, ta) = generate_table(&spec, 9);
        let (b, tb) = generate_table(&spec, 9);
        assert_eq!(ta, tb);
        assert_eq!(a.costs(), b.costs());
        assert_eq!(a.years(), b.years());
        let (c, _) = generate_table(&spec, 10);
        assert_ne!(a.costs(), c.costs());
    }

    #[test]
    fn group_plant_raises_one_cell() {
        let mut spec = PlantSpec::flat(4, 2010..=2012);
        spec.trend_noise_sd = 0.0;
        spec.base_count_range = (50, 50);
        spec.add_plant(1, 2011, 10.0);
        let (t, truth) = generate_table(&spec, 1);
        assert_eq!(truth.group_labels(), [vec!["DX-002".to_string()]]);
        let m = pivot(&t, &PivotSpec::new(&[DIAGNOSIS], Measure::Count)).unwrap();
        assert_eq!(m.rows()[0], [50.0, 50.0, 50.0]);
        // Zero noise: the spike is at least one discharge.
        assert_eq!(m.rows()[1], [50.0, 51.0, 50.0]);
    }

    #[test]
    fn confined_plant_lands_in_one_sub_cell() {
        let mut spec = PlantSpec::flat(3, 2010..=2012);
        spec.trend_noise_sd = 2.0;
        spec.base_count_range = (100, 100);
        spec.add_subset_plant(0, "Age Group", 3, 2012, 25.0);
        let (t, truth) = generate_table(&spec, 2);
        assert_eq!(
            truth.subset_labels("Age Group"),
            [vec!["DX-001".to_string(), "50 to 69".to_string()]]
        );
        let m = pivot(&t, &PivotSpec::new(&[DIAGNOSIS, "Age Group"], Measure::Count)).unwrap();
        let row = m.position_of(&truth.plants[0].label).unwrap();
        let others: Vec<f64> = (0..5).filter(|&i| i != row).map(|i| m.rows()[i][2]).collect();
        assert!(others.iter().all(|&v| v < 30.0), "{others:?}");
        assert!(m.rows()[row][2] >= 50.0 + 15.0);
    }

    #[test]
    fn sub_cells_split_evenly() {
        let mut spec = PlantSpec::flat(1, 2010..=2010);
        spec.trend_noise_sd = 0.0;
        spec.base_count_range = (120, 120);
        let (t, _) = generate_table(&spec, 4);
        for dim in SECONDARY_DIMS {
            let m = pivot(&t, &PivotSpec::new(&[dim], Measure::Count)).unwrap();
            let want = 120.0 / m.n_rows() as f64;
            assert!(m.rows().iter().all(|r| r[0] == want), "{dim}: {:?}", m.rows());
        }
    }

    #[test]
    fn csv_matches_table() {
        let mut spec = PlantSpec::flat(6, 2010..=2012);
        spec.add_plant(0, 2011, 12.0);
        let mut buf = Vec::new();
        let truth = write_csv(&spec, 5, &mut buf).unwrap();
        let (from_csv, report) = read_csv(buf.as_slice(), &synthetic_schema(), ErrorPolicy::Strict).unwrap();
        let (direct, direct_truth) = generate_table(&spec, 5);
        assert_eq!(truth, direct_truth);
        assert_eq!(report.rejected_total(), 0);
        assert_eq!(from_csv.costs(), direct.costs());
        assert_eq!(from_csv.row_count(), direct.row_count());
    }

    #[test]
    fn invalid_specs() {
        let mut spec = PlantSpec::flat(3, 2010..=2012);
        spec.add_plant(5, 2011, 10.0);
        assert!(spec.validate().is_err());
        let mut spec = PlantSpec::flat(3, 2010..=2012);
        spec.add_plant(0, 2020, 10.0);
        assert!(spec.validate().is_err());
        let mut spec = PlantSpec::flat(3, 2010..=2012);
        spec.add_plant(0, 2011, 0.0);
        assert!(spec.validate().is_err());
        let mut spec = PlantSpec::flat(3, 2010..=2012);
        spec.add_subset_plant(0, "Race", 9, 2011, 3.0);
        assert!(spec.validate().is_err());
        let mut spec = PlantSpec::flat(3, 2010..=2012);
        spec.add_subset_plant(0, "Zip", 0, 2011, 3.0);
        assert!(spec.validate().is_err());
    }
}
