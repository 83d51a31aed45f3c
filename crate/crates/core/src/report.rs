//! Reproducible run artifacts: run manifests, JSON/CSV reports and plot
//! series.
//!
//! Every artifact is rendered through [`canonical_json`] (sorted keys,
//! shortest round-trip float formatting), so two runs with the same data and
//! configuration produce byte-identical files.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregate::format_sig17;
use crate::error::{Error, Result};
use crate::ingest::DischargeTable;
use crate::kmeans::OutlierRun;
use crate::searchlight::SearchlightResult;
use crate::subsetscan::SubsetScanResult;

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// JSON with object keys sorted at every level and a trailing newline.
pub fn canonical_json<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    // `serde_json::Map` is ordered by key unless `preserve_order` is enabled,
    // so a round-trip through `Value` sorts every object.
    let value = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Content hash of the accepted rows that ignores row order: each row is
/// canonicalized and hashed, the digests are added modulo 2^256, and the sum
/// is hashed together with the column names and row count.
pub fn dataset_fingerprint(table: &DischargeTable) -> String {
    let cats = table.categorical_columns();
    let nums = table.numeric_columns();
    let years = table.years();
    let digest_row = |row: usize| -> [u64; 4] {
        let mut h = Sha256::new();
        for c in cats {
            h.update(c.value(row).as_bytes());
            h.update([0x1f]);
        }
        for n in nums {
            h.update(n.values()[row].to_bits().to_le_bytes());
        }
        h.update(years[row].to_le_bytes());
        let d = h.finalize();
        std::array::from_fn(|i| u64::from_le_bytes(d[i * 8..i * 8 + 8].try_into().unwrap()))
    };
    let sum = (0..table.row_count())
        .into_par_iter()
        .map(digest_row)
        .reduce(|| [0; 4], add_u256);

    let mut h = Sha256::new();
    for c in cats {
        h.update(c.name().as_bytes());
        h.update([0x1e]);
    }
    for n in nums {
        h.update(n.name().as_bytes());
        h.update([0x1e]);
    }
    h.update(table.schema().year_column().as_bytes());
    h.update((table.row_count() as u64).to_le_bytes());
    for limb in sum {
        h.update(limb.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn add_u256(a: [u64; 4], b: [u64; 4]) -> [u64; 4] {
    let mut out = [0; 4];
    let mut carry = false;
    for i in 0..4 {
        let (s, c1) = a[i].overflowing_add(b[i]);
        let (s, c2) = s.overflowing_add(carry as u64);
        out[i] = s;
        carry = c1 || c2;
    }
    out
}

/// Any finished pipeline result.
#[allow(clippy::large_enum_variant)] // one per run, moved rarely
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "result", rename_all = "snake_case")]
pub enum RunResult {
    OutlierRun(OutlierRun),
    Searchlight(SearchlightResult),
    SubsetScan(SubsetScanResult),
}

impl RunResult {
    pub fn kind(&self) -> &'static str {
        match self {
            RunResult::OutlierRun(_) => "outlier_run",
            RunResult::Searchlight(_) => "searchlight",
            RunResult::SubsetScan(_) => "subset_scan",
        }
    }

    /// Canonical JSON of the bare result object.
    pub fn to_json(&self) -> Result<String> {
        match self {
            RunResult::OutlierRun(r) => canonical_json(r),
            RunResult::Searchlight(r) => canonical_json(r),
            RunResult::SubsetScan(r) => canonical_json(r),
        }
    }

    /// Every detector run inside the result with the unit it belongs to
    /// (empty for a plain run, the dimension for sweeps and scans).
    pub fn runs(&self) -> Vec<(String, &OutlierRun)> {
        match self {
            RunResult::OutlierRun(r) => vec![(String::new(), r)],
            RunResult::Searchlight(s) => s
                .entries
                .iter()
                .map(|e| (e.dimension.clone(), &e.outlier_run))
                .collect(),
            RunResult::SubsetScan(s) => s
                .entries
                .iter()
                .filter_map(|(dim, e)| e.outlier_run.as_ref().map(|r| (dim.clone(), r)))
                .collect(),
        }
    }

    /// Matrix warnings (dropped zero-base rows, empty mean cells), deduplicated.
    pub fn warnings(&self) -> Vec<String> {
        let mut w: Vec<String> = self
            .runs()
            .iter()
            .flat_map(|(_, r)| r.input.warnings().iter().cloned())
            .collect();
        if let RunResult::Searchlight(s) = self {
            w.extend(s.skipped.iter().map(|k| {
                format!(
                    "skipped dimension '{}': {} rows, need {}",
                    k.dimension, k.rows, k.required
                )
            }));
        }
        if let RunResult::SubsetScan(s) = self {
            for e in s.entries.values() {
                if let Some(reason) = &e.skipped {
                    w.push(format!("skipped subset dimension '{}': {reason}", e.subset_dim));
                }
                if e.k_clamped && e.skipped.is_none() {
                    w.push(format!(
                        "subset dimension '{}': k clamped to {}",
                        e.subset_dim, e.k_used
                    ));
                }
            }
        }
        w.sort();
        w.dedup();
        w
    }
}

/// Identity of a run: what produced it and from which data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub kind: String,
    pub pipeline_version: String,
    pub dataset_fingerprint: String,
    pub row_count: usize,
    /// Full echo of the request that produced the run.
    pub config: serde_json::Value,
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch; `SOURCE_DATE_EPOCH` overrides the clock.
    pub created_unix: u64,
    pub warnings: Vec<String>,
}

/// Hash of a request: SHA-256 of the canonical JSON of `[kind, config]`.
pub fn config_hash(kind: &str, config: &serde_json::Value) -> Result<String> {
    Ok(sha256_hex(canonical_json(&(kind, config))?.as_bytes()))
}

/// `<fingerprint prefix>-<config hash prefix>`; known before the run executes.
pub fn run_id(fingerprint: &str, config_hash: &str) -> String {
    let prefix = |s: &str| s.chars().take(12).collect::<String>();
    format!("{}-{}", prefix(fingerprint), prefix(config_hash))
}

impl RunManifest {
    /// Manifest for `result`, produced by the request `config` of kind
    /// `result.kind()` over a table with the given fingerprint.
    pub fn new(result: &RunResult, fingerprint: &str, row_count: usize, config: serde_json::Value) -> Result<Self> {
        let config_hash = config_hash(result.kind(), &config)?;
        let seed = config.pointer("/kmeans/seed").and_then(|v| v.as_u64()).unwrap_or(0);
        Ok(Self {
            run_id: run_id(fingerprint, &config_hash),
            kind: result.kind().to_string(),
            pipeline_version: PIPELINE_VERSION.to_string(),
            dataset_fingerprint: fingerprint.to_string(),
            row_count,
            config,
            config_hash,
            seed,
            created_unix: now_unix(),
            warnings: result.warnings(),
        })
    }

    /// Hash of the canonical manifest with the timestamp zeroed; equal for
    /// any two runs that must produce byte-identical reports.
    pub fn manifest_hash(&self) -> Result<String> {
        let mut stable = self.clone();
        stable.created_unix = 0;
        Ok(sha256_hex(canonical_json(&stable)?.as_bytes()))
    }
}

fn now_unix() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
    {
        return epoch;
    }
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            _ => Err(Error::config("format", format!("unknown format '{s}' (json or csv)"))),
        }
    }
}

/// Report body: canonical JSON of the result, or one CSV row per matrix row
/// of every contained run, sorted by unit then label.
///
/// CSV columns: `unit, label, role, iteration_removed, cluster, score`, then
/// one column per year. Label tuples are joined with `" | "`; numbers carry
/// 17 significant digits.
pub fn render_report(result: &RunResult, format: ReportFormat) -> Result<Vec<u8>> {
    match format {
        ReportFormat::Json => Ok(result.to_json()?.into_bytes()),
        ReportFormat::Csv => render_csv(result),
    }
}

fn render_csv(result: &RunResult) -> Result<Vec<u8>> {
    let runs = result.runs();
    let mut rows: Vec<(String, Vec<String>, Vec<String>)> = Vec::new();
    let mut years: Vec<i32> = Vec::new();
    for (unit, run) in &runs {
        if years.is_empty() {
            years = run.input.col_labels().to_vec();
        }
        for s in emit_plot_series(run, SeriesAxis::ByYear) {
            let mut rec = vec![
                unit.clone(),
                s.id.join(" | "),
                s.role.as_str().to_string(),
                s.iteration_removed.map(|i| i.to_string()).unwrap_or_default(),
                s.cluster.map(|c| c.to_string()).unwrap_or_default(),
                s.score.map(format_sig17).unwrap_or_default(),
            ];
            rec.extend(s.y.iter().map(|&v| format_sig17(v)));
            rows.push((unit.clone(), s.id, rec));
        }
    }
    rows.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));

    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    let mut header: Vec<String> = ["unit", "label", "role", "iteration_removed", "cluster", "score"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(years.iter().map(|y| y.to_string()));
    w.write_record(&header)?;
    for (_, _, rec) in rows {
        w.write_record(&rec)?;
    }
    w.into_inner().map_err(|e| Error::io("<csv report>", e.into_error()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesAxis {
    /// x values are the matrix's year columns.
    #[default]
    ByYear,
    /// x values are column indices `0..n` (category-indexed matrices).
    ByCategoryIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesRole {
    Outlier,
    ClusterMember,
}

impl SeriesRole {
    pub fn as_str(self) -> &'static str {
        match self {
            SeriesRole::Outlier => "outlier",
            SeriesRole::ClusterMember => "cluster_member",
        }
    }
}

/// One curve of a trend plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSeries {
    /// Row label tuple.
    pub id: Vec<String>,
    pub x: Vec<i32>,
    pub y: Vec<f64>,
    pub role: SeriesRole,
    /// Final cluster of a member series.
    pub cluster: Option<usize>,
    /// 1-based iteration that removed an outlier series.
    pub iteration_removed: Option<usize>,
    pub score: Option<f64>,
}

impl PlotSeries {
    /// The points whose x lies in `range` (a zoomed view).
    pub fn window(&self, range: RangeInclusive<i32>) -> PlotSeries {
        let keep: Vec<usize> = (0..self.x.len()).filter(|&i| range.contains(&self.x[i])).collect();
        PlotSeries {
            x: keep.iter().map(|&i| self.x[i]).collect(),
            y: keep.iter().map(|&i| self.y[i]).collect(),
            ..self.clone()
        }
    }
}

/// One series per input-matrix row, in matrix order: removed rows as
/// outliers tagged with the iteration that removed them, survivors as
/// members of their final cluster.
pub fn emit_plot_series(run: &OutlierRun, axis: SeriesAxis) -> Vec<PlotSeries> {
    let m = &run.input;
    let x: Vec<i32> = match axis {
        SeriesAxis::ByYear => m.col_labels().to_vec(),
        SeriesAxis::ByCategoryIndex => (0..m.n_cols() as i32).collect(),
    };
    let mut removed: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    for (iteration, r) in run.removed() {
        removed.insert(r.row, (iteration, r.score));
    }
    let mut cluster: BTreeMap<usize, usize> = BTreeMap::new();
    if let Some(fc) = &run.final_clustering {
        for (pos, &row) in run.survivors.iter().enumerate() {
            cluster.insert(row, fc.assignments[pos]);
        }
    }
    (0..m.n_rows())
        .map(|row| {
            let (role, iteration_removed, score) = match removed.get(&row) {
                Some(&(it, s)) => (SeriesRole::Outlier, Some(it), Some(s)),
                None => (SeriesRole::ClusterMember, None, None),
            };
            PlotSeries {
                id: m.row_labels()[row].clone(),
                x: x.clone(),
                y: m.row(row).to_vec(),
                role,
                cluster: cluster.get(&row).copied(),
                iteration_removed,
                score,
            }
        })
        .collect()
}

/// Plot series of every run in a result: a flat list for a plain run, keyed
/// by dimension for sweeps and scans.
pub fn result_series(result: &RunResult, axis: SeriesAxis) -> serde_json::Value {
    match result {
        RunResult::OutlierRun(r) => serde_json::to_value(emit_plot_series(r, axis)),
        _ => serde_json::to_value(
            result
                .runs()
                .into_iter()
                .map(|(unit, r)| (unit, emit_plot_series(r, axis)))
                .collect::<BTreeMap<_, _>>(),
        ),
    }
    .expect("plot series serialize")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFiles {
    pub manifest: PathBuf,
    pub report: PathBuf,
    pub series: PathBuf,
}

/// Writes `<run-id>.manifest.json`, `<run-id>.report.{json,csv}` and
/// `<run-id>.series.json` into `dir`, creating it if needed.
pub fn emit_report(
    result: &RunResult,
    manifest: &RunManifest,
    format: ReportFormat,
    dir: &Path,
) -> Result<ReportFiles> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let id = &manifest.run_id;
    let ext = match format {
        ReportFormat::Json => "json",
        ReportFormat::Csv => "csv",
    };
    let files = ReportFiles {
        manifest: dir.join(format!("{id}.manifest.json")),
        report: dir.join(format!("{id}.report.{ext}")),
        series: dir.join(format!("{id}.series.json")),
    };
    let write = |path: &Path, bytes: &[u8]| std::fs::write(path, bytes).map_err(|e| Error::io(path, e));
    write(&files.manifest, canonical_json(manifest)?.as_bytes())?;
    write(&files.report, &render_report(result, format)?)?;
    write(
        &files.series,
        canonical_json(&result_series(result, SeriesAxis::ByYear))?.as_bytes(),
    )?;
    Ok(files)
}
