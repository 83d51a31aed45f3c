//! Synthetic discharge tables with planted anomalies, and brute-force
//! reference implementations ("oracles") used to check the engine.
//!
//! The oracles deliberately share no code with the engine paths they check.

mod generate;
mod oracle;

pub use generate::{
    generate_table, synthetic_schema, write_csv, GroundTruth, Plant, PlantSpec, PlantedLabel, AGE_GROUPS, DIAGNOSIS,
    FACILITY, FACILITY_COUNT, RACES, SECONDARY_DIMS,
};
pub use oracle::{
    fsum, oracle_best_2partition, oracle_groupby, oracle_median_distance_ranking, oracle_percent_change, Partition,
};
