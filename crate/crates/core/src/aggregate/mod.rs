//! Feature matrices built by grouping, year binning, and percent-change
//! rebasing.

pub mod exact;
mod matrix;
mod pivot;

pub(crate) use matrix::format_sig17;
pub use matrix::{ColumnAxis, FeatureMatrix, Provenance, RowFilter};
pub use pivot::{pivot, pivot_across, pivot_subset, rebase_percent_change, EmptyCellPolicy, Measure, PivotSpec};
