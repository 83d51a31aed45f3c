use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::schema::{ColumnKind, DatasetSchema};
use super::RejectReason;
use crate::aggregate::exact::ExactSum;
use crate::error::{Error, Result};

/// Dictionary-encoded categorical column. Codes index into the dictionary,
/// which holds values in first-seen order.
#[derive(Debug, Clone)]
pub struct CategoricalColumn {
    name: String,
    codes: Vec<u32>,
    dictionary: Vec<String>,
}

impl CategoricalColumn {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn codes(&self) -> &[u32] {
        &self.codes
    }

    pub fn dictionary(&self) -> &[String] {
        &self.dictionary
    }

    pub fn value(&self, row: usize) -> &str {
        &self.dictionary[self.codes[row] as usize]
    }

    pub fn code_of(&self, value: &str) -> Option<u32> {
        self.dictionary.iter().position(|v| v == value).map(|c| c as u32)
    }
}

#[derive(Debug, Clone)]
pub struct NumericColumn {
    name: String,
    values: Vec<f64>,
}

impl NumericColumn {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Immutable columnar store of accepted discharge records.
///
/// Invariants: every categorical code indexes its dictionary, every stored
/// cost is finite and non-negative, and all columns hold `row_count` entries.
#[derive(Debug, Clone)]
pub struct DischargeTable {
    schema: DatasetSchema,
    row_count: usize,
    categorical: Vec<CategoricalColumn>,
    numeric: Vec<NumericColumn>,
    measure: usize,
    years: Vec<i32>,
    distinct_years: Vec<i32>,
}

impl DischargeTable {
    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn is_empty(&self) -> bool {
        self.row_count == 0
    }

    pub fn categorical_columns(&self) -> &[CategoricalColumn] {
        &self.categorical
    }

    pub fn numeric_columns(&self) -> &[NumericColumn] {
        &self.numeric
    }

    pub fn dimension_names(&self) -> Vec<String> {
        self.categorical.iter().map(|c| c.name.clone()).collect()
    }

    pub fn categorical(&self, name: &str) -> Option<&CategoricalColumn> {
        self.categorical.iter().find(|c| c.name == name)
    }

    /// Looks up a categorical dimension, failing with the list of known ones.
    pub fn dimension(&self, name: &str) -> Result<&CategoricalColumn> {
        self.categorical(name).ok_or_else(|| Error::UnknownDimension {
            name: name.to_string(),
            available: self.dimension_names(),
        })
    }

    /// The cost measure column.
    pub fn costs(&self) -> &[f64] {
        &self.numeric[self.measure].values
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    /// Years present in the table, ascending.
    pub fn distinct_years(&self) -> &[i32] {
        &self.distinct_years
    }

    pub fn year_range(&self) -> Option<(i32, i32)> {
        Some((*self.distinct_years.first()?, *self.distinct_years.last()?))
    }
}

/// Row-at-a-time constructor for [`DischargeTable`]; used by the CSV loader
/// and the synthetic generator so both share one validation path.
#[derive(Debug)]
pub struct TableBuilder {
    schema: DatasetSchema,
    slots: Vec<Slot>,
    years: Vec<i32>,
    row_count: usize,
    scratch_num: Vec<f64>,
    scratch_year: i32,
}

#[derive(Debug)]
enum Slot {
    Categorical {
        name: String,
        required: bool,
        codes: Vec<u32>,
        dictionary: Vec<String>,
        index: HashMap<String, u32>,
    },
    Numeric {
        name: String,
        required: bool,
        is_measure: bool,
        values: Vec<f64>,
    },
    Year,
}

impl TableBuilder {
    pub fn new(schema: DatasetSchema) -> Self {
        let slots = schema
            .columns()
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Categorical => Slot::Categorical {
                    name: c.name.clone(),
                    required: schema.is_required(c),
                    codes: Vec::new(),
                    dictionary: Vec::new(),
                    index: HashMap::new(),
                },
                ColumnKind::Numeric => Slot::Numeric {
                    name: c.name.clone(),
                    required: schema.is_required(c),
                    is_measure: c.name == schema.measure_column(),
                    values: Vec::new(),
                },
                ColumnKind::Year => Slot::Year,
            })
            .collect();
        Self {
            schema,
            slots,
            years: Vec::new(),
            row_count: 0,
            scratch_num: Vec::new(),
            scratch_year: 0,
        }
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    /// Validates and appends one row whose fields follow schema column order.
    /// A rejected row leaves the builder unchanged.
    pub fn push_row<S: AsRef<str>>(&mut self, fields: &[S]) -> Result<(), RejectReason> {
        if fields.len() != self.slots.len() {
            return Err(RejectReason::Malformed {
                expected: self.slots.len(),
                found: fields.len(),
            });
        }
        self.scratch_num.clear();
        for (slot, field) in self.slots.iter().zip(fields) {
            let raw = field.as_ref().trim();
            match slot {
                Slot::Categorical { name, required, .. } => {
                    if raw.is_empty() && *required {
                        return Err(RejectReason::MissingValue { column: name.clone() });
                    }
                }
                Slot::Numeric {
                    name,
                    required,
                    is_measure,
                    ..
                } => {
                    let v = if raw.is_empty() {
                        if *required {
                            return Err(RejectReason::MissingValue { column: name.clone() });
                        }
                        f64::NAN
                    } else {
                        let v = parse_currency(raw).ok_or_else(|| RejectReason::UnparsableNumber {
                            column: name.clone(),
                            value: raw.to_string(),
                        })?;
                        if !v.is_finite() {
                            return Err(RejectReason::NonFinite { column: name.clone() });
                        }
                        v
                    };
                    if *is_measure && v < 0.0 {
                        return Err(RejectReason::NegativeCost { value: v });
                    }
                    // -0.0 is stored as 0.0 so equal costs have equal bits
                    self.scratch_num.push(if v == 0.0 { 0.0 } else { v });
                }
                Slot::Year => {
                    self.scratch_year = raw
                        .parse::<i32>()
                        .map_err(|_| RejectReason::UnparsableYear { value: raw.to_string() })?;
                }
            }
        }

        let mut nums = self.scratch_num.iter();
        for (slot, field) in self.slots.iter_mut().zip(fields) {
            match slot {
                Slot::Categorical {
                    codes,
                    dictionary,
                    index,
                    ..
                } => {
                    let raw = field.as_ref().trim();
                    let code = match index.get(raw) {
                        Some(&c) => c,
                        None => {
                            let c = dictionary.len() as u32;
                            dictionary.push(raw.to_string());
                            index.insert(raw.to_string(), c);
                            c
                        }
                    };
                    codes.push(code);
                }
                Slot::Numeric { values, .. } => values.push(*nums.next().expect("one parsed value per numeric column")),
                Slot::Year => self.years.push(self.scratch_year),
            }
        }
        self.row_count += 1;
        Ok(())
    }

    pub fn finish(self) -> DischargeTable {
        let mut categorical = Vec::new();
        let mut numeric = Vec::new();
        let mut measure = 0;
        for slot in self.slots {
            match slot {
                Slot::Categorical {
                    name,
                    codes,
                    dictionary,
                    ..
                } => categorical.push(CategoricalColumn {
                    name,
                    codes,
                    dictionary,
                }),
                Slot::Numeric {
                    name,
                    is_measure,
                    values,
                    ..
                } => {
                    if is_measure {
                        measure = numeric.len();
                    }
                    numeric.push(NumericColumn { name, values });
                }
                Slot::Year => {}
            }
        }
        let distinct_years = self
            .years
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        DischargeTable {
            schema: self.schema,
            row_count: self.row_count,
            categorical,
            numeric,
            measure,
            years: self.years,
            distinct_years,
        }
    }
}

/// Parses a number that may carry `$` and thousands separators.
pub fn parse_currency(raw: &str) -> Option<f64> {
    let raw = raw.trim();
    if raw.contains(['$', ',']) {
        let cleaned: String = raw.chars().filter(|&c| c != '$' && c != ',').collect();
        cleaned.trim().parse().ok()
    } else {
        raw.parse().ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub row_count: usize,
    /// Distinct-value count per categorical dimension.
    pub dimensions: BTreeMap<String, usize>,
    pub year_range: Option<(i32, i32)>,
    pub total_cost: f64,
}

pub fn summarize(table: &DischargeTable) -> DatasetSummary {
    DatasetSummary {
        row_count: table.row_count(),
        dimensions: table
            .categorical_columns()
            .iter()
            .map(|c| (c.name().to_string(), c.dictionary().len()))
            .collect(),
        year_range: table.year_range(),
        total_cost: table.costs().iter().copied().collect::<ExactSum>().value(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::schema::ColumnSpec;

    fn schema() -> DatasetSchema {
        DatasetSchema::new(
            vec![
                ColumnSpec::categorical("Dx"),
                ColumnSpec::new("Race", ColumnKind::Categorical, false),
                ColumnSpec::new("Cost", ColumnKind::Numeric, true),
                ColumnSpec::new("Year", ColumnKind::Year, true),
            ],
            "Cost",
            "Year",
        )
        .unwrap()
    }

    #[test]
    fn currency_parsing() {
        assert_eq!(parse_currency("$12,068.11"), Some(12068.11));
        assert_eq!(parse_currency(" 5 "), Some(5.0));
        assert_eq!(parse_currency("abc"), None);
        assert_eq!(parse_currency("$"), None);
    }

    #[test]
    fn rejected_rows_leave_builder_untouched() {
        let mut b = TableBuilder::new(schema());
        b.push_row(&["A", "W", "10", "2009"]).unwrap();
        assert!(matches!(
            b.push_row(&["B", "W", "-1", "2009"]),
            Err(RejectReason::NegativeCost { .. })
        ));
        assert!(matches!(
            b.push_row(&["B", "W", "1", "20x9"]),
            Err(RejectReason::UnparsableYear { .. })
        ));
        assert!(matches!(
            b.push_row(&["", "W", "1", "2009"]),
            Err(RejectReason::MissingValue { .. })
        ));
        assert!(matches!(
            b.push_row(&["B", "W", "inf", "2009"]),
            Err(RejectReason::NonFinite { .. })
        ));
        let t = b.finish();
        assert_eq!(t.row_count(), 1);
        assert_eq!(t.categorical("Dx").unwrap().dictionary(), ["A"]);
    }

    #[test]
    fn optional_categorical_may_be_blank() {
        let mut b = TableBuilder::new(schema());
        b.push_row(&[" A ", "", "1", "2010"]).unwrap();
        let t = b.finish();
        assert_eq!(t.categorical("Dx").unwrap().value(0), "A");
        assert_eq!(t.categorical("Race").unwrap().value(0), "");
    }

    #[test]
    fn summary_of_empty_table() {
        let t = TableBuilder::new(schema()).finish();
        let s = summarize(&t);
        assert_eq!(s.row_count, 0);
        assert_eq!(s.year_range, None);
        assert_eq!(s.total_cost, 0.0);
        assert!(s.dimensions.values().all(|&n| n == 0));
    }

    #[test]
    fn unknown_dimension_lists_available() {
        let t = TableBuilder::new(schema()).finish();
        match t.dimension("Nope") {
            Err(Error::UnknownDimension { available, .. }) => {
                assert_eq!(available, ["Dx", "Race"])
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
