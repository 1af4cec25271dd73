//! Command-line front end: Monte Carlo benchmark runs, single-sample
//! estimation, theory diagnostics, and markdown table rendering.
//!
//! Exit codes: 0 on success, 2 on invalid input or flags, 3 when a
//! simulation exceeds the 1% failure-rate budget.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mbc_kde::densities::{by_id_or_label, MW_LABELS};
use mbc_kde::estimators::{estimate, EstimatorKind, EstimatorSpec, Sample};
use mbc_kde::grid::{EvaluationGrid, GridFunction};
use mbc_kde::kernels::{Bandwidth, Kernel};
use mbc_kde::metrics::{oracle_bandwidth, simulation_grid, GridSpec, SearchSpec};
use mbc_kde::sim::{
    read_summary_csv, render_markdown, run_simulation, write_records_csv, write_summary_csv,
    SimError, SimulationConfig, SummaryTable,
};
use mbc_kde::theory::{
    asymptotic_variance, general_bias_expansion, hg_bias, hobskde_bias, recommended_grid,
    ExpansionOrder,
};

/// Environment variable supplying the default worker count.
const WORKERS_ENV: &str = "MBC_KDE_WORKERS";

#[derive(Parser)]
#[command(
    name = "mbc-kde",
    version,
    about = "Multiplicatively bias-corrected kernel density estimation: estimators, diagnostics, and an oracle-bandwidth Monte Carlo benchmark.",
    term_width = 100
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the Monte Carlo oracle-ISE benchmark for one density.
    Simulate(SimulateArgs),
    /// Tabulate one estimator over a grid for a data file.
    Estimate(EstimateArgs),
    /// Emit asymptotic bias or variance diagnostic curves as CSV.
    Theory(TheoryArgs),
    /// Merge summary CSVs and render them as a markdown table.
    Table(TableArgs),
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// Density id (1-10) or its name (e.g. "Gaussian", "Separated Bimodal").
    #[arg(long)]
    density: Option<String>,
    /// Sample size per replication.
    #[arg(long)]
    n: Option<usize>,
    /// Number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Master seed; replication r uses stream r.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated estimator kinds, or "table1" (default) or "all".
    #[arg(long)]
    estimators: Option<String>,
    /// Output directory for replications.csv, summary.csv and table.md.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads (0 = automatic). Defaults to $MBC_KDE_WORKERS or 0.
    #[arg(long)]
    workers: Option<usize>,
    /// Grid intervals across the density's effective support.
    #[arg(long)]
    grid_points: Option<usize>,
    /// Grid range extension per side, in units of the largest searched bandwidth.
    #[arg(long)]
    grid_extension: Option<f64>,
    /// Points of the coarse log-spaced bandwidth pass.
    #[arg(long)]
    coarse_points: Option<usize>,
    /// Relative tolerance of the golden-section bandwidth refinement.
    #[arg(long)]
    refine_tol: Option<f64>,
    /// TOML file with any simulation settings; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EstimateArgs {
    /// Input file, one observation per line.
    #[arg(long)]
    data: PathBuf,
    /// Estimator kind.
    #[arg(long, default_value = "kde")]
    kind: String,
    /// Bandwidth: a positive number, or "oracle" (requires --truth).
    #[arg(long)]
    h: String,
    /// Catalog density the oracle bandwidth is searched against.
    #[arg(long)]
    truth: Option<String>,
    /// Output CSV path for the (x, density) tabulation.
    #[arg(long, default_value = "estimate.csv")]
    out: PathBuf,
    /// Number of grid intervals.
    #[arg(long, default_value_t = 500)]
    grid_points: usize,
}

#[derive(clap::Args)]
struct TheoryArgs {
    /// Density id (1-10) or its name.
    #[arg(long)]
    density: String,
    /// Parametric vehicle; only "matched-normal" ships.
    #[arg(long, default_value = "matched-normal")]
    vehicle: String,
    /// Comma-separated bandwidths.
    #[arg(long, default_value = "0.1,0.2,0.4")]
    h: String,
    /// Curve to emit: bias2 (leading h² bias), bias4 (the pure h⁴ expansion
    /// term), hobskde (combined-estimator leading bias), or variance.
    #[arg(long)]
    which: String,
    /// Sample size entering the variance curve.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Output CSV path for the (h, x, value) curves.
    #[arg(long, default_value = "theory.csv")]
    out: PathBuf,
}

#[derive(clap::Args)]
struct TableArgs {
    /// Summary CSV files to merge.
    #[arg(long, required = true, num_args = 1..)]
    summary: Vec<PathBuf>,
    /// Write the markdown table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Estimate(args) => cmd_estimate(&args),
        Command::Theory(args) => cmd_theory(&args),
        Command::Table(args) => cmd_table(&args),
    };
    match code {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn resolve_density_id(key: &str) -> Result<u32, String> {
    if let Ok(id) = key.trim().parse::<u32>() {
        if (1..=10).contains(&id) {
            return Ok(id);
        }
        return Err(format!(
            "unknown density '{key}': valid ids are 1-10, valid names are {}",
            MW_LABELS.join(", ")
        ));
    }
    let wanted = key.trim().to_ascii_lowercase();
    MW_LABELS
        .iter()
        .position(|l| l.to_ascii_lowercase() == wanted)
        .map(|i| i as u32 + 1)
        .ok_or_else(|| {
            format!(
                "unknown density '{key}': valid ids are 1-10, valid names are {}",
                MW_LABELS.join(", ")
            )
        })
}

fn parse_kinds(spec: &str) -> Result<Vec<EstimatorKind>, String> {
    match spec.trim().to_ascii_lowercase().as_str() {
        "table1" => Ok(EstimatorKind::TABLE1.to_vec()),
        "all" => Ok(EstimatorKind::ALL.to_vec()),
        _ => spec
            .split(',')
            .map(|t| t.parse::<EstimatorKind>())
            .collect(),
    }
}

fn env_workers() -> Option<usize> {
    std::env::var(WORKERS_ENV).ok()?.trim().parse().ok()
}

fn write_file(
    path: &Path,
    write: impl FnOnce(&mut Vec<u8>) -> Result<(), SimError>,
) -> Result<(), String> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| e.to_string())?;
    fs::write(path, buf).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn cmd_simulate(args: &SimulateArgs) -> Result<ExitCode, String> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
            toml::from_str::<SimulationConfig>(&text)
                .map_err(|e| format!("bad config {}: {e}", path.display()))?
        }
        None => SimulationConfig::default(),
    };
    if let Some(d) = &args.density {
        cfg.density_id = resolve_density_id(d)?;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(reps) = args.reps {
        cfg.reps = reps;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(kinds) = &args.estimators {
        cfg.kinds = parse_kinds(kinds)?;
    }
    if let Some(w) = args.workers.or_else(env_workers) {
        cfg.workers = w;
    }
    if let Some(p) = args.grid_points {
        cfg.grid.points_per_support = p;
    }
    if let Some(e) = args.grid_extension {
        cfg.grid.extension_factor = e;
    }
    if let Some(c) = args.coarse_points {
        cfg.search.coarse_points = c;
    }
    if let Some(t) = args.refine_tol {
        cfg.search.rel_tol = t;
    }

    let run = run_simulation(&cfg).map_err(|e| e.to_string())?;

    fs::create_dir_all(&args.out)
        .map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
    write_file(&args.out.join("replications.csv"), |w| {
        write_records_csv(&run.records, w)
    })?;
    write_file(&args.out.join("summary.csv"), |w| {
        write_summary_csv(&run.summary, w)
    })?;
    let markdown = render_markdown(&run.summary);
    fs::write(args.out.join("table.md"), &markdown)
        .map_err(|e| format!("cannot write table.md: {e}"))?;
    print!("{markdown}");

    let failed: usize = run.failures.values().sum();
    if failed > 0 {
        eprintln!("excluded {failed} failed (replication, estimator) cells");
    }
    if run.invalid {
        eprintln!("run invalid: estimator failure rate exceeded 1%");
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn read_data_file(path: &Path) -> Result<Vec<f64>, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let mut values = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        values.push(
            line.parse::<f64>().map_err(|_| {
                format!("{}:{}: not a number: '{line}'", path.display(), lineno + 1)
            })?,
        );
    }
    if values.is_empty() {
        return Err(format!("{}: no observations", path.display()));
    }
    Ok(values)
}

fn cmd_estimate(args: &EstimateArgs) -> Result<ExitCode, String> {
    let sample = Sample::new(read_data_file(&args.data)?).map_err(|e| e.to_string())?;
    let kind: EstimatorKind = args.kind.parse()?;

    let (h, grid) = if args.h.trim().eq_ignore_ascii_case("oracle") {
        let truth_key = args
            .truth
            .as_ref()
            .ok_or("--h oracle requires --truth naming a catalog density")?;
        let truth = by_id_or_label(truth_key).map_err(|e| e.to_string())?;
        let search = SearchSpec::default();
        let grid_spec = GridSpec {
            points_per_support: args.grid_points,
            ..GridSpec::default()
        };
        let grid =
            simulation_grid(&truth, &sample, &search, &grid_spec).map_err(|e| e.to_string())?;
        let oracle =
            oracle_bandwidth(kind, &sample, &truth, &search, &grid).map_err(|e| e.to_string())?;
        log::info!(
            "oracle bandwidth {} (min ISE {:.6e})",
            oracle.h_star.get(),
            oracle.min_ise
        );
        (oracle.h_star, grid)
    } else {
        let h: f64 = args
            .h
            .parse()
            .map_err(|_| format!("--h must be a number or 'oracle', got '{}'", args.h))?;
        let h = Bandwidth::new(h).map_err(|e| e.to_string())?;
        // Symmetric grid: data range plus the larger of a 6h kernel margin
        // and four sample standard deviations.
        let n = sample.n() as f64;
        let mean = sample.values().iter().sum::<f64>() / n;
        let sd = (sample
            .values()
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / n)
            .sqrt();
        let margin = (6.0 * h.get()).max(4.0 * sd);
        let m = args.grid_points | 1; // odd point count keeps the midrange on a node
        let grid = EvaluationGrid::new(sample.min() - margin, sample.max() + margin, m.max(101))
            .map_err(|e| e.to_string())?;
        (h, grid)
    };

    let est = estimate(&EstimatorSpec::new(kind, h), &sample, &grid).map_err(|e| e.to_string())?;
    let mut out = String::from("x,density\n");
    for (x, v) in grid.points().zip(est.values()) {
        out.push_str(&format!("{x},{v}\n"));
    }
    fs::write(&args.out, out).map_err(|e| format!("cannot write {}: {e}", args.out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_theory(args: &TheoryArgs) -> Result<ExitCode, String> {
    if !args.vehicle.eq_ignore_ascii_case("matched-normal") {
        return Err(format!(
            "unknown vehicle '{}': only 'matched-normal' is available",
            args.vehicle
        ));
    }
    let truth = by_id_or_label(&args.density).map_err(|e| e.to_string())?;
    let vehicle = truth.matched_normal();
    let hs: Vec<f64> = args
        .h
        .split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| format!("bad bandwidth '{t}'"))
        })
        .collect::<Result<_, _>>()?;

    let grid = recommended_grid(&truth);
    let f = GridFunction::from_fn(grid, |x| truth.pdf(x));
    let f0 = GridFunction::from_fn(grid, |x| vehicle.pdf(x));

    let which = args.which.trim().to_ascii_lowercase();
    let margin = match which.as_str() {
        "bias2" => 2,
        "bias4" => 3,
        "hobskde" => 4,
        "variance" => 0,
        other => {
            return Err(format!(
                "unknown curve '{other}': use bias2, bias4, hobskde or variance"
            ))
        }
    };

    let mut out = String::from("h,x,value\n");
    for &h in &hs {
        let bw = Bandwidth::new(h).map_err(|e| e.to_string())?;
        for i in margin..grid.len() - margin {
            let x = grid.point(i);
            let value = match which.as_str() {
                "bias2" => hg_bias(&f, &f0, bw, x),
                // The h⁴ term alone: the order-four expansion minus its
                // order-two part, so the curve scales exactly like h⁴.
                "bias4" => {
                    general_bias_expansion(&f, &f0, bw, x, ExpansionOrder::Four).and_then(|four| {
                        general_bias_expansion(&f, &f0, bw, x, ExpansionOrder::Two)
                            .map(|two| four - two)
                    })
                }
                "hobskde" => hobskde_bias(&f, &f0, bw, x),
                "variance" => asymptotic_variance(&f, args.n, bw, x, Kernel::Gaussian),
                _ => unreachable!(),
            }
            .map_err(|e| e.to_string())?;
            out.push_str(&format!("{h},{x},{value}\n"));
        }
    }
    fs::write(&args.out, out).map_err(|e| format!("cannot write {}: {e}", args.out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_table(args: &TableArgs) -> Result<ExitCode, String> {
    let mut table = SummaryTable::default();
    for path in &args.summary {
        let text =
            fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let part = read_summary_csv(text.as_bytes()).map_err(|e| e.to_string())?;
        table.merge(part);
    }
    if table.rows.is_empty() {
        return Err("summary files contain no rows".into());
    }
    let markdown = render_markdown(&table);
    match &args.out {
        Some(path) => fs::write(path, &markdown)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?,
        None => print!("{markdown}"),
    }
    Ok(ExitCode::SUCCESS)
}
