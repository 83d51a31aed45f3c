//! `outlierscope` command line: load a discharge CSV, pivot it, run the
//! iterative k-means detector, sweep dimensions, drill into subsets, generate
//! synthetic data, or serve the HTTP API.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use outlierscope::aggregate::{pivot, EmptyCellPolicy, Measure, PivotSpec};
use outlierscope::ingest::{load_csv, summarize, DatasetSchema, DischargeTable, ErrorPolicy};
use outlierscope::pipeline::{Job, RunConfig};
use outlierscope::report::{dataset_fingerprint, emit_report, ReportFiles, ReportFormat, RunResult};
use outlierscope::searchlight::SearchlightConfig;
use outlierscope::subsetscan::{ScanScope, SubsetScanRequest};
use outlierscope::testkit::{synthetic_schema, write_csv, PlantSpec};
use outlierscope_service::{Dataset, ServiceConfig};

type CliResult<T = ()> = Result<T, Box<dyn std::error::Error>>;

/// `println!` that reports a closed stdout as an error instead of panicking,
/// so piping into `head` ends the command quietly.
macro_rules! out {
    ($($arg:tt)*) => {
        writeln!(std::io::stdout(), $($arg)*)
    };
}

#[derive(Debug, Parser)]
#[command(
    name = "outlierscope",
    version,
    about = "Outlier exploration over tabular discharge records"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a CSV and print its summary and load report as JSON.
    Summarize(DataArgs),
    /// Print a pivot matrix as CSV.
    Pivot(PivotArgs),
    /// Run the iterative k-means detector on one aggregation.
    Run(RunArgs),
    /// Run the detector once per dimension and rank the dimensions.
    Searchlight(SearchlightArgs),
    /// Cross outlier values of a primary dimension with candidate dimensions.
    SubsetScan(SubsetScanArgs),
    /// Write a synthetic CSV with planted spikes and its ground truth.
    Synth(SynthArgs),
    /// Serve the HTTP API over one or more CSVs.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Discharge CSV with a header row.
    #[arg(long)]
    data: PathBuf,
    /// Schema profile: `sparcs`, `synthetic`, or a TOML schema file.
    #[arg(long, default_value = "sparcs")]
    schema: String,
    /// Abort on the first invalid row instead of skipping it.
    #[arg(long)]
    strict: bool,
}

impl DataArgs {
    fn load(&self) -> CliResult<DischargeTable> {
        load_table(&self.data, &self.schema, self.strict)
    }
}

fn load_schema(profile: &str) -> CliResult<DatasetSchema> {
    Ok(match profile {
        "sparcs" => DatasetSchema::sparcs(),
        "synthetic" => synthetic_schema(),
        path => DatasetSchema::load(path)?,
    })
}

fn load_table(path: &Path, profile: &str, strict: bool) -> CliResult<DischargeTable> {
    let schema = load_schema(profile)?;
    let policy = if strict { ErrorPolicy::Strict } else { ErrorPolicy::Skip };
    let (table, report) = load_csv(path, &schema, policy)?;
    if report.rejected_total() > 0 {
        log::warn!(
            "{}: skipped {} of {} rows",
            path.display(),
            report.rejected_total(),
            report.data_records
        );
    }
    Ok(table)
}

fn parse_measure(s: &str) -> Result<Measure, String> {
    s.parse().map_err(|e: outlierscope::Error| e.to_string())
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EmptyCells {
    Zero,
    Error,
}

#[derive(Debug, Args)]
struct PivotArgs {
    #[command(flatten)]
    data: DataArgs,
    /// One or two row dimensions, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    rows: Vec<String>,
    #[arg(long, default_value = "count", value_parser = parse_measure)]
    measure: Measure,
    /// Rebase to percent change from this year.
    #[arg(long)]
    base_year: Option<i32>,
    #[arg(long, value_enum, default_value = "zero")]
    empty_cells: EmptyCells,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Detector settings shared by every run-producing command. Flags override
/// the values read from `--config`.
#[derive(Debug, Args)]
struct DetectorArgs {
    #[arg(long, value_parser = parse_measure)]
    measure: Option<Measure>,
    /// Base year of the percent-change rebase (default: the earliest year).
    #[arg(long)]
    base_year: Option<i32>,
    #[arg(short, long)]
    k: Option<usize>,
    /// Clusters with at most this many members are dissolved as outliers.
    #[arg(long)]
    threshold: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// k-means++ restarts per fit.
    #[arg(long)]
    restarts: Option<usize>,
}

/// Where and how run artifacts are written.
#[derive(Debug, Args)]
struct OutputArgs {
    /// Directory for the manifest, report and plot-series files.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

impl From<Format> for ReportFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Json => ReportFormat::Json,
            Format::Csv => ReportFormat::Csv,
        }
    }
}

/// The fields every detector config carries, so one override routine serves
/// all three request types.
struct DetectorFields<'a> {
    measure: &'a mut Measure,
    base_year: &'a mut Option<i32>,
    kmeans: &'a mut outlierscope::kmeans::KMeansConfig,
    threshold: &'a mut usize,
    max_iters: &'a mut usize,
}

impl DetectorArgs {
    fn apply(&self, f: DetectorFields<'_>) {
        if let Some(m) = self.measure {
            *f.measure = m;
        }
        if self.base_year.is_some() {
            *f.base_year = self.base_year;
        }
        if let Some(k) = self.k {
            f.kmeans.k = k;
        }
        if let Some(s) = self.seed {
            f.kmeans.seed = s;
        }
        if let Some(r) = self.restarts {
            f.kmeans.restarts = r;
        }
        if let Some(t) = self.threshold {
            *f.threshold = t;
        }
        if let Some(i) = self.max_iters {
            *f.max_iters = i;
        }
    }
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            Ok(serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?)
        }
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON run config, the same body `POST /runs` accepts.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Row dimensions, comma separated.
    #[arg(long, value_delimiter = ',')]
    rows: Option<Vec<String>>,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SearchlightArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON searchlight config, the same body `POST /searchlight` accepts.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dimensions to sweep, comma separated (default: all).
    #[arg(long, value_delimiter = ',')]
    dims: Option<Vec<String>>,
    /// Sweep every pair of dimensions as a two-dimension pivot.
    #[arg(long)]
    pairs: bool,
    /// Chain the outliers of this dimension's entry into a subset scan.
    #[arg(long)]
    drill: Option<String>,
    /// Candidate dimensions of the drill (default: all other dimensions).
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<String>>,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SubsetScanArgs {
    #[command(flatten)]
    data: DataArgs,
    /// JSON request, the same body `POST /subset-scan` accepts.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    primary: Option<String>,
    /// Outlier values of the primary dimension, comma separated.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<String>>,
    /// Candidate dimensions, comma separated.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<String>>,
    /// Scan every primary value instead of the given outliers.
    #[arg(long)]
    all_values: bool,
    #[command(flatten)]
    detector: DetectorArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// JSON plant spec; the flags below override its fields.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    groups: Option<usize>,
    /// Inclusive year range, e.g. `2009-2015`.
    #[arg(long, value_parser = parse_years)]
    years: Option<(i32, i32)>,
    /// Flat yearly count of every group.
    #[arg(long)]
    base_count: Option<u32>,
    #[arg(long)]
    noise_sd: Option<f64>,
    /// `GROUP:YEAR:MAGNITUDE`, group 0-based (0 is DX-001); repeatable.
    #[arg(long, value_parser = parse_plant)]
    plant: Vec<(usize, i32, f64)>,
    /// `GROUP:DIMENSION:VALUE_INDEX:YEAR:MAGNITUDE`; repeatable.
    #[arg(long, value_parser = parse_subset_plant)]
    subset_plant: Vec<(usize, String, usize, i32, f64)>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// CSV output path.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth JSON path (default: next to the CSV).
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn parse_years(s: &str) -> Result<(i32, i32), String> {
    let (lo, hi) = s.split_once('-').ok_or("expected FIRST-LAST")?;
    let lo: i32 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: i32 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err("first year is after last year".into());
    }
    Ok((lo, hi))
}

fn parse_plant(s: &str) -> Result<(usize, i32, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [g, y, m] = parts[..] else {
        return Err("expected GROUP:YEAR:MAGNITUDE".into());
    };
    Ok((
        g.parse().map_err(|e| format!("group: {e}"))?,
        y.parse().map_err(|e| format!("year: {e}"))?,
        m.parse().map_err(|e| format!("magnitude: {e}"))?,
    ))
}

fn parse_subset_plant(s: &str) -> Result<(usize, String, usize, i32, f64), String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [g, d, v, y, m] = parts[..] else {
        return Err("expected GROUP:DIMENSION:VALUE_INDEX:YEAR:MAGNITUDE".into());
    };
    Ok((
        g.parse().map_err(|e| format!("group: {e}"))?,
        d.to_string(),
        v.parse().map_err(|e| format!("value index: {e}"))?,
        y.parse().map_err(|e| format!("year: {e}"))?,
        m.parse().map_err(|e| format!("magnitude: {e}"))?,
    ))
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// CSV to serve; repeatable. The dataset is named after the file stem.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    /// Schema profile: `sparcs`, `synthetic`, or a TOML schema file.
    #[arg(long, default_value = "sparcs")]
    schema: String,
    #[arg(long)]
    strict: bool,
    #[arg(long, default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory for run artifacts.
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
    /// Seconds a request waits for its run before returning a running handle.
    #[arg(long, default_value_t = 30)]
    timeout_secs: u64,
    /// Built explorer assets to serve under /ui.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Summarize(a) => summarize_cmd(&a),
        Command::Pivot(a) => pivot_cmd(&a),
        Command::Run(a) => run_cmd(&a),
        Command::Searchlight(a) => searchlight_cmd(&a),
        Command::SubsetScan(a) => subset_scan_cmd(&a),
        Command::Synth(a) => synth_cmd(&a),
        Command::Serve(a) => serve_cmd(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn summarize_cmd(a: &DataArgs) -> CliResult {
    let schema = load_schema(&a.schema)?;
    let policy = if a.strict {
        ErrorPolicy::Strict
    } else {
        ErrorPolicy::Skip
    };
    let (table, report) = load_csv(&a.data, &schema, policy)?;
    let out = serde_json::json!({
        "summary": summarize(&table),
        "fingerprint": dataset_fingerprint(&table),
        "load": report,
    });
    out!("{}", serde_json::to_string_pretty(&out)?)?;
    Ok(())
}

fn pivot_cmd(a: &PivotArgs) -> CliResult {
    let table = a.data.load()?;
    let rows: Vec<&str> = a.rows.iter().map(String::as_str).collect();
    let mut spec = PivotSpec::new(&rows, a.measure);
    spec.rebase = a.base_year;
    spec.empty_cells = match a.empty_cells {
        EmptyCells::Zero => EmptyCellPolicy::Zero,
        EmptyCells::Error => EmptyCellPolicy::Error,
    };
    let matrix = pivot(&table, &spec)?;
    for w in matrix.warnings() {
        log::warn!("{w}");
    }
    let csv = matrix.to_csv()?;
    match &a.out {
        Some(path) => std::fs::write(path, csv).map_err(|e| format!("{}: {e}", path.display()))?,
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(())
}

/// Executes a job through the shared pipeline path and writes its artifacts.
fn execute(table: &DischargeTable, job: &Job, output: &OutputArgs) -> CliResult<(RunResult, ReportFiles)> {
    let fingerprint = dataset_fingerprint(table);
    let (result, manifest) = job.execute_with_manifest(table, &fingerprint)?;
    for w in &manifest.warnings {
        log::warn!("{w}");
    }
    let files = emit_report(&result, &manifest, output.format.into(), &output.out)?;
    out!("run {}", manifest.run_id)?;
    Ok((result, files))
}

fn print_files(files: &ReportFiles) -> CliResult {
    out!("  manifest  {}", files.manifest.display())?;
    out!("  report    {}", files.report.display())?;
    out!("  series    {}", files.series.display())?;
    Ok(())
}

fn run_cmd(a: &RunArgs) -> CliResult {
    let table = a.data.load()?;
    let mut config: RunConfig = read_config(a.config.as_deref())?;
    if let Some(rows) = &a.rows {
        config.row_dims = rows.clone();
    }
    a.detector.apply(DetectorFields {
        measure: &mut config.measure,
        base_year: &mut config.base_year,
        kmeans: &mut config.kmeans,
        threshold: &mut config.small_cluster_threshold,
        max_iters: &mut config.max_outlier_iters,
    });
    let (result, files) = execute(&table, &Job::OutlierRun(config), &a.output)?;
    if let RunResult::OutlierRun(run) = &result {
        out!(
            "  {} outlier(s) in {} iteration(s), termination {}",
            run.outlier_count(),
            run.iterations.len(),
            run.termination
        )?;
        for (iteration, r) in run.removed() {
            out!("    iter {iteration}  {:<40} score {:.3}", r.label.join(" | "), r.score)?;
        }
    }
    print_files(&files)?;
    Ok(())
}

fn searchlight_cmd(a: &SearchlightArgs) -> CliResult {
    let table = a.data.load()?;
    let mut config: SearchlightConfig = read_config(a.config.as_deref())?;
    match &a.dims {
        Some(dims) => config.dimensions = dims.clone(),
        None if config.dimensions.is_empty() => config.dimensions = table.dimension_names(),
        None => {}
    }
    config.pairs |= a.pairs;
    a.detector.apply(DetectorFields {
        measure: &mut config.measure,
        base_year: &mut config.base_year,
        kmeans: &mut config.kmeans,
        threshold: &mut config.small_cluster_threshold,
        max_iters: &mut config.max_outlier_iters,
    });
    let (result, files) = execute(&table, &Job::Searchlight(config), &a.output)?;
    let RunResult::Searchlight(sweep) = &result else {
        unreachable!("searchlight job yields a searchlight result");
    };
    let mut out = std::io::stdout().lock();
    writeln!(
        out,
        "  {:<32} {:>8} {:>10}  termination",
        "dimension", "outliers", "top score"
    )?;
    for e in &sweep.entries {
        writeln!(
            out,
            "  {:<32} {:>8} {:>10.3}  {}",
            e.dimension, e.outlier_count, e.max_outlier_score, e.outlier_run.termination
        )?;
    }
    for s in &sweep.skipped {
        writeln!(
            out,
            "  {:<32} skipped: {} rows, {} required",
            s.dimension, s.rows, s.required
        )?;
    }
    drop(out);
    print_files(&files)?;

    if let Some(dim) = &a.drill {
        let entry = sweep
            .entry(dim)
            .ok_or_else(|| format!("--drill: no searchlight entry for '{dim}'"))?;
        if entry.row_dims.len() != 1 {
            return Err(format!("--drill: '{dim}' is a pair entry; drill a single dimension").into());
        }
        if entry.outlier_count == 0 {
            out!("drill: '{dim}' produced no outliers; nothing to scan")?;
            return Ok(());
        }
        let candidates = match &a.candidates {
            Some(c) => c.clone(),
            None => table.dimension_names().into_iter().filter(|d| d != dim).collect(),
        };
        let candidates: Vec<&str> = candidates.iter().map(String::as_str).collect();
        let request = SubsetScanRequest::from_run(&entry.outlier_run, dim, &candidates);
        let (result, files) = execute(&table, &Job::SubsetScan(request), &a.output)?;
        print_scan(&result)?;
        print_files(&files)?;
    }
    Ok(())
}

fn print_scan(result: &RunResult) -> CliResult {
    let RunResult::SubsetScan(scan) = result else {
        return Ok(());
    };
    out!("  primary values: {}", scan.primary_values.join(", "))?;
    for e in scan.entries.values() {
        let flag = if e.produced_outliers { "*" } else { " " };
        let detail = match (&e.skipped, &e.outlier_run) {
            (Some(reason), _) => format!("skipped: {reason}"),
            (None, Some(run)) => {
                let top = run
                    .top_outlier()
                    .map(|r| format!(", top {} ({:.3})", r.label.join(" | "), r.score))
                    .unwrap_or_default();
                format!("{} outlier(s), k {}{top}", run.outlier_count(), e.k_used)
            }
            (None, None) => String::new(),
        };
        out!(
            "  {flag} {:<24} shape {}x{}  {detail}",
            e.subset_dim,
            e.shape.0,
            e.shape.1
        )?;
    }
    Ok(())
}

fn subset_scan_cmd(a: &SubsetScanArgs) -> CliResult {
    let table = a.data.load()?;
    let mut request: SubsetScanRequest = read_config(a.config.as_deref())?;
    if let Some(p) = &a.primary {
        request.primary_dim = p.clone();
    }
    if let Some(v) = &a.values {
        request.outlier_values = v.clone();
    }
    if let Some(c) = &a.candidates {
        request.candidate_dims = c.clone();
    }
    if a.all_values {
        request.scope = ScanScope::AllValues;
    }
    a.detector.apply(DetectorFields {
        measure: &mut request.measure,
        base_year: &mut request.base_year,
        kmeans: &mut request.kmeans,
        threshold: &mut request.small_cluster_threshold,
        max_iters: &mut request.max_outlier_iters,
    });
    let (result, files) = execute(&table, &Job::SubsetScan(request), &a.output)?;
    print_scan(&result)?;
    print_files(&files)?;
    Ok(())
}

fn synth_cmd(a: &SynthArgs) -> CliResult {
    let mut spec: PlantSpec = read_config(a.spec.as_deref())?;
    if let Some(g) = a.groups {
        spec.n_groups = g;
    }
    if let Some((lo, hi)) = a.years {
        spec.years = (lo..=hi).collect();
    }
    if let Some(c) = a.base_count {
        spec.base_count_range = (c, c);
    }
    if let Some(sd) = a.noise_sd {
        spec.trend_noise_sd = sd;
    }
    for &(g, y, m) in &a.plant {
        spec.add_plant(g, y, m);
    }
    for (g, d, v, y, m) in &a.subset_plant {
        spec.add_subset_plant(*g, d, *v, *y, *m);
    }
    spec.validate()?;
    let file = File::create(&a.out).map_err(|e| format!("{}: {e}", a.out.display()))?;
    let mut writer = BufWriter::new(file);
    let truth = write_csv(&spec, a.seed, &mut writer)?;
    writer.flush()?;
    let truth_path = a.truth.clone().unwrap_or_else(|| a.out.with_extension("truth.json"));
    let body = serde_json::json!({ "spec": spec, "truth": truth });
    std::fs::write(&truth_path, serde_json::to_string_pretty(&body)? + "\n")
        .map_err(|e| format!("{}: {e}", truth_path.display()))?;
    out!("wrote {} and {}", a.out.display(), truth_path.display())?;
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> CliResult {
    let mut datasets = Vec::with_capacity(a.data.len());
    for path in &a.data {
        let name = path
            .file_stem()
            .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        let table = load_table(path, &a.schema, a.strict)?;
        log::info!("loaded '{name}': {} rows", table.row_count());
        datasets.push(Dataset::new(name, table));
    }
    let mut config = ServiceConfig::new(a.runs_dir);
    config.sync_timeout = Duration::from_secs(a.timeout_secs);
    config.ui_dir = a.ui_dir;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(outlierscope_service::serve(datasets, config, a.bind))?;
    Ok(())
}
