//! Outlier exploration over large tabular records.
//!
//! The engine turns a discharge-style table into trend curves and hunts for
//! the curves that do not belong:
//!
//! 1. [`ingest`] loads a CSV into a dictionary-encoded, immutable table.
//! 2. [`aggregate`] pivots it (group × year), optionally rebased to percent
//!    change against a base year.
//! 3. [`kmeans`] clusters the curves repeatedly, removing members of tiny
//!    clusters as outliers.
//! 4. [`searchlight`] sweeps that detector across dimensions and ranks them;
//!    [`subsetscan`] drills into the outliers one secondary dimension at a
//!    time.
//! 5. [`report`] writes byte-reproducible manifests, reports and plot series.
//!
//! ```
//! use outlierscope::pipeline::{run_detector, RunConfig};
//! use outlierscope::testkit::{generate_table, PlantSpec};
//! use outlierscope::aggregate::Measure;
//!
//! let mut spec = PlantSpec::flat(40, 2009..=2015);
//! spec.add_plant(7, 2013, 20.0);
//! let (table, truth) = generate_table(&spec, 1);
//!
//! let mut config = RunConfig::new(&["Diagnosis"], Measure::Count);
//! config.kmeans.k = 4;
//! let run = run_detector(&table, &config).unwrap();
//! assert_eq!(run.removed_labels(), truth.group_labels());
//! ```

pub mod aggregate;
mod error;
pub mod ingest;
pub mod kmeans;
pub mod pipeline;
pub mod report;
pub mod searchlight;
pub mod subsetscan;
pub mod testkit;

pub use error::{Error, Result};

/// The guide's chapters, compiled so their snippets run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/loading.md")]
    mod loading {}
    #[doc = include_str!("../../../book/src/pivoting.md")]
    mod pivoting {}
    #[doc = include_str!("../../../book/src/detector.md")]
    mod detector {}
    #[doc = include_str!("../../../book/src/searchlight.md")]
    mod searchlight {}
    #[doc = include_str!("../../../book/src/subset-scan.md")]
    mod subset_scan {}
    #[doc = include_str!("../../../book/src/reports.md")]
    mod reports {}
    #[doc = include_str!("../../../book/src/testkit.md")]
    mod testkit {}
    #[doc = include_str!("../../../book/src/sparcs.md")]
    mod sparcs {}
}
