//! `ma3d` command line: solve the benchmark boundary-value problems, emit
//! convergence tables and consistency sphere maps as CSV, and inspect
//! stencils and anisotropic Voronoi cells.
//!
//! Exit codes: 0 on success, 1 when the solver fails to converge, 2 on bad
//! arguments or configuration.  Progress lines go to standard error (set
//! `RUST_LOG=warn` to silence them); data goes to the requested files or, for
//! `-`, to standard output.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ma3d::bench::{
    consistency_sphere_map, convergence_table, linf_error, scheme_from_spec, write_sphere_csv,
    write_table_csv, SphereFamily, TestCase,
};
use ma3d::grid::Domain;
use ma3d::lattice::{make_kappa_stencil, make_table1_stencil, Table1Stencil};
use ma3d::newton::{sanity_bounds, solve, NewtonConfig, SolveReport};
use ma3d::operators::{OperatorConfig, Scheme};
use ma3d::{voronoi_cell, Field, Grid, Stencil, SymMatrix};

#[derive(Parser)]
#[command(
    name = "ma3d",
    version,
    about = "Monotone 3D Monge-Ampère discretization: solver and benchmarks"
)]
struct Cli {
    /// Seed recorded for randomized matrix generation.  The built-in cases,
    /// families, and sphere directions are fully deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one boundary-value problem on the unit cube.
    Solve(SolveArgs),
    /// Run every (case, scheme, resolution) cell and write a CSV table.
    Table(TableArgs),
    /// Scan a matrix family over the unit sphere; write consistency defects.
    Sphere(SphereArgs),
    /// Print the strict Voronoi directions and cell volume of a metric.
    Voronoi(VoronoiArgs),
    /// Print a stencil's directions in the loadable text format.
    Stencil(StencilArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// Test case: quadratic, smoothed_cone, or singular.
    #[arg(long)]
    case: String,
    /// Scheme spec: proposed:small, proposed:large, proposed:kappa:<v>, fd,
    /// or ws:small|medium|large.
    #[arg(long, default_value = "proposed:small")]
    scheme: String,
    /// Replace the proposed scheme's stencil with one loaded from a text
    /// file (header line, then one integer vector per line).
    #[arg(long, alias = "stencil-file", value_name = "FILE")]
    stencil: Option<PathBuf>,
    /// Grid resolution; the cube has (n-1)³ interior points.
    #[arg(long, default_value_t = 16)]
    n: u32,
    /// Newton tolerance on the sup-norm system residual.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Write the solution field as CSV (index,x,y,z,value); `-` for stdout.
    #[arg(long, value_name = "FILE")]
    dump: Option<String>,
    /// Write the solve report as JSON; `-` for stdout.
    #[arg(long, value_name = "FILE")]
    report_json: Option<String>,
}

#[derive(Args)]
struct TableArgs {
    /// Comma-separated case names.
    #[arg(long, required = true, value_delimiter = ',')]
    cases: Vec<String>,
    /// Comma-separated scheme specs.
    #[arg(long, required = true, value_delimiter = ',')]
    schemes: Vec<String>,
    /// Comma-separated resolutions.
    #[arg(long = "n-list", required = true, value_delimiter = ',')]
    n_list: Vec<u32>,
    /// Output CSV path; `-` for stdout.
    #[arg(long, default_value = "-")]
    out: String,
    /// Newton tolerance for every cell.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
}

#[derive(Args)]
struct SphereArgs {
    /// Matrix family: aniso_plus, aniso_minus, or rotated.
    #[arg(long)]
    family: String,
    /// Scheme spec (proposed or ws; the defect needs a monotone scheme).
    #[arg(long, default_value = "proposed:small")]
    scheme: String,
    /// Number of Fibonacci-sphere sample directions.
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    /// Output CSV path; `-` for stdout.
    #[arg(long, default_value = "-")]
    out: String,
}

#[derive(Args)]
struct VoronoiArgs {
    /// Upper triangle of the metric, row-major: m00 m01 m02 m11 m12 m22.
    #[arg(long, num_args = 6, required = true, value_names = ["M00", "M01", "M02", "M11", "M12", "M22"])]
    matrix: Vec<f64>,
    /// Also write the cell geometry as an OFF file.
    #[arg(long, value_name = "FILE")]
    off: Option<PathBuf>,
}

#[derive(Args)]
struct StencilArgs {
    /// Stencil to print: small, large, or kappa:<value>.
    #[arg(long)]
    which: String,
}

/// A failure destined for the process exit code.
struct Failure {
    code: u8,
    message: String,
}

fn bad_args(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

impl From<ma3d::BenchError> for Failure {
    fn from(e: ma3d::BenchError) -> Self {
        bad_args(e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        bad_args(e.to_string())
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    ma3d::init_threads();
    let cli = Cli::parse();
    log::debug!("seed: {}", cli.seed);
    let result = match cli.command {
        Command::Solve(a) => run_solve(a),
        Command::Table(a) => run_table(a),
        Command::Sphere(a) => run_sphere(a),
        Command::Voronoi(a) => run_voronoi(a),
        Command::Stencil(a) => run_stencil(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("ma3d: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// Opens `-` as stdout, anything else as a file.
fn open_out(path: &str) -> Result<Box<dyn Write>, Failure> {
    Ok(if path == "-" {
        Box::new(io::stdout())
    } else {
        Box::new(fs::File::create(path)?)
    })
}

/// The solve report plus the CLI-level diagnostics appended to the JSON.
#[derive(Serialize)]
struct CliReport<'a> {
    #[serde(flatten)]
    report: &'a SolveReport,
    /// `max |operator value − density|` over interior points (the system
    /// residual is on the assembled — for the proposed scheme logarithmic —
    /// scale; this one is on the operator scale).
    operator_residual: f64,
    /// Sup-norm error against the case's exact solution.
    sup_error: f64,
    /// Whether the discrete comparison bounds hold for the solution.
    sanity_bounds: bool,
}

fn build_scheme(spec: &str, stencil_file: Option<&Path>) -> Result<Scheme, Failure> {
    let mut scheme = scheme_from_spec(spec)?;
    if let Some(path) = stencil_file {
        if !matches!(scheme, Scheme::Proposed(_)) {
            return Err(bad_args(format!(
                "--stencil only applies to the proposed scheme, not `{spec}`"
            )));
        }
        let text = fs::read_to_string(path)?;
        let custom = Stencil::from_text(&text).map_err(|e| bad_args(e.to_string()))?;
        scheme = Scheme::Proposed(custom);
    }
    Ok(scheme)
}

fn run_solve(a: SolveArgs) -> Result<(), Failure> {
    let tc: TestCase<f64> = TestCase::from_spec(&a.case)?;
    let scheme = build_scheme(&a.scheme, a.stencil.as_deref())?;
    let grid: Grid = Grid::build(Domain::UnitCube, a.n, &scheme.required_stencil())
        .map_err(ma3d::BenchError::from)?;
    let cfg = OperatorConfig::new(scheme, &grid).map_err(ma3d::BenchError::from)?;
    let ncfg = NewtonConfig {
        tol: a.tol,
        ..NewtonConfig::default()
    };

    println!(
        "case: {}   scheme: {}   n: {} ({} interior points)",
        tc.name(),
        cfg.label(),
        a.n,
        grid.n_interior()
    );
    let (u, report, solved) = match solve(&cfg, |p| tc.density(p), |p| tc.boundary(p), &ncfg, None)
    {
        Ok((u, report)) => (u, report, true),
        Err(err) => {
            let message = err.to_string();
            match err.best() {
                Some((u, report)) => {
                    eprintln!("ma3d: {message}");
                    (u, report, false)
                }
                None => return Err(Failure { code: 1, message }),
            }
        }
    };

    let operator_residual = operator_scale_residual(&cfg, &grid, &u, &tc);
    let sup_error = linf_error(&grid, &u, &tc);
    let bounds = sanity_bounds(&grid, &u, |p| tc.density(p), |p| tc.boundary(p));
    println!(
        "{} after {} iterations ({:.3} s)",
        if solved { "converged" } else { "stopped" },
        report.iterations,
        report.wall_time_s
    );
    println!(
        "system residual (assembled scale): {:.3e}",
        report.final_residual()
    );
    println!("operator residual (max |value - density|): {operator_residual:.3e}");
    println!("sup error vs exact solution: {sup_error:.3e}");
    println!("sanity bounds: {}", if bounds { "ok" } else { "VIOLATED" });

    if let Some(path) = &a.dump {
        u.to_csv(&grid, open_out(path)?)
            .map_err(ma3d::BenchError::from)?;
    }
    if let Some(path) = &a.report_json {
        let cli_report = CliReport {
            report: &report,
            operator_residual,
            sup_error,
            sanity_bounds: bounds,
        };
        let mut w = open_out(path)?;
        serde_json::to_writer_pretty(&mut w, &cli_report).map_err(|e| bad_args(e.to_string()))?;
        writeln!(w)?;
    }
    if solved {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: "solver did not converge (best iterate reported above)".into(),
        })
    }
}

/// Max interior defect of the operator value against the density — the
/// residual on the operator's own scale, next to the (for the proposed
/// scheme logarithmic) assembled-system residual.
fn operator_scale_residual(
    cfg: &OperatorConfig<'_, f64>,
    grid: &Grid,
    u: &Field,
    tc: &TestCase<f64>,
) -> f64 {
    let mut worst = 0.0f64;
    for x in 0..grid.n_interior() as u32 {
        match cfg.apply(u, x) {
            Ok(d) => worst = worst.max((d - tc.density(grid.physical_position(x))).abs()),
            Err(_) => return f64::NAN,
        }
    }
    worst
}

fn run_table(a: TableArgs) -> Result<(), Failure> {
    let cases = a
        .cases
        .iter()
        .map(|s| TestCase::from_spec(s))
        .collect::<Result<Vec<_>, _>>()?;
    let schemes = a
        .schemes
        .iter()
        .map(|s| scheme_from_spec(s))
        .collect::<Result<Vec<_>, _>>()?;
    if a.n_list.is_empty() {
        return Err(bad_args("--n-list needs at least one resolution"));
    }
    let ncfg = NewtonConfig {
        tol: a.tol,
        ..NewtonConfig::default()
    };
    let records = convergence_table(&cases, &schemes, &a.n_list, &ncfg);
    write_table_csv(&records, open_out(&a.out)?)?;
    Ok(())
}

fn run_sphere(a: SphereArgs) -> Result<(), Failure> {
    let family = SphereFamily::from_spec(&a.family)?;
    let scheme = scheme_from_spec(&a.scheme)?;
    if a.samples == 0 {
        return Err(bad_args("--samples must be positive"));
    }
    let samples = consistency_sphere_map(family, &scheme, a.samples)?;
    write_sphere_csv(&samples, open_out(&a.out)?)?;
    Ok(())
}

fn run_voronoi(a: VoronoiArgs) -> Result<(), Failure> {
    let m = SymMatrix::from_upper([
        a.matrix[0],
        a.matrix[1],
        a.matrix[2],
        a.matrix[3],
        a.matrix[4],
        a.matrix[5],
    ]);
    if !m.is_positive_definite() {
        return Err(bad_args("--matrix must be positive definite"));
    }
    let cell = voronoi_cell(&m).map_err(|e| bad_args(e.to_string()))?;
    println!(
        "strict Voronoi directions (up to sign): {}",
        cell.strict.len()
    );
    for e in &cell.strict {
        println!("{e}");
    }
    println!("cell volume: {:.12}", cell.cell.volume);
    if let Some(path) = &a.off {
        fs::write(path, cell.cell.to_off())?;
    }
    Ok(())
}

fn run_stencil(a: StencilArgs) -> Result<(), Failure> {
    let stencil = match a.which.as_str() {
        "small" => make_table1_stencil(Table1Stencil::Small),
        "large" => make_table1_stencil(Table1Stencil::Large),
        other => match other.strip_prefix("kappa:") {
            Some(v) => {
                let kappa: f64 = v
                    .parse()
                    .map_err(|_| bad_args(format!("bad kappa value `{v}`")))?;
                make_kappa_stencil(kappa).map_err(|e| bad_args(e.to_string()))?
            }
            None => {
                return Err(bad_args(format!(
                    "unknown stencil `{other}` (expected small, large, or kappa:<value>)"
                )))
            }
        },
    };
    print!("{}", stencil.to_text());
    println!("# {} directions", stencil.dirs().len());
    Ok(())
}
