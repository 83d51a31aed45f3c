use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Categorical,
    Numeric,
    Year,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default = "default_required")]
    pub required: bool,
}

fn default_required() -> bool {
    true
}

impl ColumnSpec {
    pub fn new(name: impl Into<String>, kind: ColumnKind, required: bool) -> Self {
        Self {
            name: name.into(),
            kind,
            required,
        }
    }

    pub fn categorical(name: impl Into<String>) -> Self {
        Self::new(name, ColumnKind::Categorical, true)
    }
}

/// Column layout of a discharge dataset.
///
/// A valid schema has unique non-empty column names, exactly one year
/// column, and a measure column of numeric kind. The measure and year columns
/// are always loaded as required regardless of their `required` flag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct DatasetSchema {
    columns: Vec<ColumnSpec>,
    measure_column: String,
    year_column: String,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    measure_column: String,
    year_column: String,
    columns: Vec<ColumnSpec>,
}

impl TryFrom<RawSchema> for DatasetSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        DatasetSchema::new(raw.columns, raw.measure_column, raw.year_column)
    }
}

impl From<DatasetSchema> for RawSchema {
    fn from(schema: DatasetSchema) -> Self {
        RawSchema {
            measure_column: schema.measure_column,
            year_column: schema.year_column,
            columns: schema.columns,
        }
    }
}

impl DatasetSchema {
    pub fn new(
        columns: Vec<ColumnSpec>,
        measure_column: impl Into<String>,
        year_column: impl Into<String>,
    ) -> Result<Self> {
        let schema = Self {
            columns,
            measure_column: measure_column.into(),
            year_column: year_column.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for col in &self.columns {
            if col.name.trim().is_empty() {
                return Err(Error::Schema("column names must be non-empty".into()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(Error::Schema(format!("duplicate column '{}'", col.name)));
            }
        }
        let years: Vec<_> = self.columns.iter().filter(|c| c.kind == ColumnKind::Year).collect();
        if years.len() != 1 {
            return Err(Error::Schema(format!(
                "expected exactly one year column, found {}",
                years.len()
            )));
        }
        if years[0].name != self.year_column {
            return Err(Error::Schema(format!(
                "year_column '{}' does not name the year column '{}'",
                self.year_column, years[0].name
            )));
        }
        match self.column(&self.measure_column) {
            Some(c) if c.kind == ColumnKind::Numeric => Ok(()),
            Some(_) => Err(Error::Schema(format!(
                "measure column '{}' is not numeric",
                self.measure_column
            ))),
            None => Err(Error::Schema(format!(
                "measure column '{}' is not declared",
                self.measure_column
            ))),
        }
    }

    /// Parses a TOML schema profile.
    ///
    /// ```toml
    /// measure_column = "Total Costs"
    /// year_column = "Discharge Year"
    ///
    /// [[columns]]
    /// name = "Facility Name"
    /// kind = "categorical"
    /// ```
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("schema serializes to toml")
    }

    /// Loads a schema profile from disk. The names `sparcs` and `synthetic`
    /// select the built-in profiles.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        match path.to_str() {
            Some("sparcs") => return Ok(Self::sparcs()),
            Some("synthetic") => return Ok(crate::testkit::synthetic_schema()),
            _ => {}
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Built-in profile for the New York SPARCS de-identified inpatient
    /// discharge export.
    pub fn sparcs() -> Self {
        use ColumnKind::*;
        let cols = [
            ("Hospital County", Categorical, false),
            ("Facility Name", Categorical, true),
            ("Age Group", Categorical, false),
            ("Zip Code - 3 digits", Categorical, false),
            ("Gender", Categorical, false),
            ("Race", Categorical, false),
            ("Ethnicity", Categorical, false),
            ("CCS Diagnosis Description", Categorical, true),
            ("CCS Procedure Description", Categorical, false),
            ("Payment Typology 1", Categorical, false),
            ("Total Costs", Numeric, true),
            ("Discharge Year", Year, true),
        ];
        let columns = cols
            .iter()
            .map(|&(name, kind, required)| ColumnSpec::new(name, kind, required))
            .collect();
        Self::new(columns, "Total Costs", "Discharge Year").expect("built-in profile is valid")
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn measure_column(&self) -> &str {
        &self.measure_column
    }

    pub fn year_column(&self) -> &str {
        &self.year_column
    }

    pub fn categorical_names(&self) -> impl Iterator<Item = &str> {
        self.columns
            .iter()
            .filter(|c| c.kind == ColumnKind::Categorical)
            .map(|c| c.name.as_str())
    }

    pub(crate) fn is_required(&self, col: &ColumnSpec) -> bool {
        col.required || col.name == self.measure_column || col.name == self.year_column
    }

    /// The schema restricted to the given column names, keeping order.
    pub(crate) fn restricted_to(&self, keep: &HashSet<&str>) -> Result<Self> {
        let columns = self
            .columns
            .iter()
            .filter(|c| keep.contains(c.name.as_str()))
            .cloned()
            .collect();
        Self::new(columns, self.measure_column.clone(), self.year_column.clone())
    }
}
