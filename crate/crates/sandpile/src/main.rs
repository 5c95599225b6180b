//! Command-line front end: stabilize / green / converge / render / verify.
//!
//! Exit codes: 0 on success, 1 on a runtime failure or a failed verify
//! suite, 2 on usage errors (bad flags or malformed flag values). Every
//! JSON summary embeds the run's configuration so results are replayable.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use sandpile::analysis::{self, measured_radius, TestFunction};
use sandpile::green::{solve_phi_n, GreenProblem};
use sandpile::lattice::{mesh_size, norm_sq};
use sandpile::render::{render_png, CropRect, Palette};
use sandpile::sfield;
use sandpile::stabilize::{stabilize_opts, stabilize_point_pile_opts, Options, Strategy};
use sandpile::verify::run_verify;

#[derive(Parser)]
#[command(
    name = "sandpile",
    version,
    about = "Abelian sandpile laboratory: stabilization, discrete fundamental solutions, convergence diagnostics, rendering"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_dimension(s: &str) -> Result<usize, String> {
    match s {
        "2" => Ok(2),
        "3" => Ok(3),
        _ => Err("the lattice dimension must be 2 or 3".to_string()),
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StrategyArg {
    /// Worklist queue with bulk toppling (default).
    Fifo,
    /// Repeated full-grid raster sweeps.
    Sweep,
    /// Parallel strip-tiled sweeps.
    Tiled,
}

#[derive(Subcommand)]
enum Command {
    /// Stabilize n chips at the origin (or a grid loaded from a dump).
    Stabilize {
        /// Lattice dimension (2 or 3).
        #[arg(long, default_value_t = 2, value_parser = parse_dimension)]
        d: usize,
        /// Chips dropped on the origin.
        #[arg(long, conflicts_with = "input", required_unless_present = "input")]
        n: Option<u64>,
        /// Stabilize this chip-grid dump instead of a point pile.
        #[arg(long = "in", value_name = "FILE")]
        input: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = StrategyArg::Fifo)]
        strategy: StrategyArg,
        /// Worker threads for the tiled strategy.
        #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u64).range(1..=1024))]
        threads: u64,
        /// Rows per strip for the tiled strategy.
        #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
        tile_rows: u64,
        /// Write the stable configuration here (field dump).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        /// Write the odometer here (field dump).
        #[arg(long, value_name = "FILE")]
        odometer_out: Option<PathBuf>,
        /// Grid memory cap in GiB.
        #[arg(long, default_value_t = 8.0)]
        mem_cap_gb: f64,
    },
    /// Solve the discrete fundamental solution on a ball with exact
    /// continuum boundary data.
    Green {
        #[arg(long, default_value_t = 2, value_parser = parse_dimension)]
        d: usize,
        /// Source strength; also sets the mesh h = n^(-1/d).
        #[arg(long)]
        n: u64,
        /// Solve-domain radius; defaults to 1.6 x the measured rescaled
        /// radius of the n-chip pile.
        #[arg(long)]
        radius: Option<f64>,
        /// Relative interior residual target.
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        #[arg(long, default_value_t = 200_000)]
        max_iters: usize,
        /// Write the solved field here (field dump).
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run the cross-scale convergence study and emit a JSON report.
    Converge {
        #[arg(long, default_value_t = 2, value_parser = parse_dimension)]
        d: usize,
        /// Comma-separated strictly increasing chip counts.
        #[arg(long)]
        schedule: String,
        /// Test function, repeatable: bump:CX,CY:R, poly:CX,CY:R:E1,E2,
        /// plateau:CX,CY:IN:OUT. Default bump:0,0:0.3.
        #[arg(long = "phi")]
        phis: Vec<String>,
        /// Write the report here instead of stdout.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Render a chip-grid dump to PNG.
    Render {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Inclusive lattice rectangle x0,y0,x1,y1.
        #[arg(long, allow_hyphen_values = true)]
        crop: Option<String>,
        /// `default`, or explicit `r,g,b;...` (one triple per chip count).
        #[arg(long, default_value = "default")]
        palette: String,
        /// Plane (third coordinate) to render for spatial grids.
        #[arg(long, allow_negative_numbers = true)]
        slice: Option<i64>,
    },
    /// Run the seeded property suites and report pass/fail as JSON.
    Verify {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Directory for counterexample dumps on failure.
        #[arg(long, value_name = "DIR")]
        dump_dir: Option<PathBuf>,
        /// Also write the report here.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

/// The run's configuration, echoed into every JSON summary.
#[derive(Serialize)]
struct RunConfig {
    subcommand: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    schedule: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    strategy: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    threads: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tile_rows: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    odometer_out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    crop: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    palette: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slice: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mem_cap_gb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dump_dir: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    phi: Option<Vec<String>>,
}

impl RunConfig {
    fn new(subcommand: &'static str) -> Self {
        RunConfig {
            subcommand,
            d: None,
            n: None,
            schedule: None,
            strategy: None,
            threads: None,
            tile_rows: None,
            seed: None,
            tol: None,
            radius: None,
            max_iters: None,
            input: None,
            out: None,
            odometer_out: None,
            crop: None,
            palette: None,
            slice: None,
            mem_cap_gb: None,
            dump_dir: None,
            phi: None,
        }
    }
}

fn path_str(p: impl AsRef<std::path::Path>) -> String {
    p.as_ref().display().to_string()
}

/// A flag value failed validation after clap accepted its shape: still a
/// usage error, so it exits 2 like clap's own diagnostics.
struct UsageError(String);

fn usage<T>(msg: impl Into<String>) -> Result<T, UsageError> {
    Err(UsageError(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse(); // clap exits 2 on bad flags, 0 on --help
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> sandpile::Result<ExitCode> {
    match run(cli) {
        Ok(code) => Ok(code),
        Err(RunError::Usage(UsageError(msg))) => {
            eprintln!("error: {msg}");
            eprintln!("Run with --help for usage.");
            Ok(ExitCode::from(2))
        }
        Err(RunError::Failed(e)) => Err(e),
    }
}

enum RunError {
    Usage(UsageError),
    Failed(sandpile::Error),
}

impl From<UsageError> for RunError {
    fn from(e: UsageError) -> Self {
        RunError::Usage(e)
    }
}

impl From<sandpile::Error> for RunError {
    fn from(e: sandpile::Error) -> Self {
        RunError::Failed(e)
    }
}

fn run(cli: Cli) -> Result<ExitCode, RunError> {
    match cli.command {
        Command::Stabilize {
            d,
            n,
            input,
            strategy,
            threads,
            tile_rows,
            out,
            odometer_out,
            mem_cap_gb,
        } => {
            if !(mem_cap_gb > 0.0 && mem_cap_gb.is_finite()) {
                return usage(format!("--mem-cap-gb must be positive, got {mem_cap_gb}"))
                    .map_err(RunError::from);
            }
            let strat = match strategy {
                StrategyArg::Fifo => Strategy::FifoWorklist,
                StrategyArg::Sweep => Strategy::FullSweep,
                StrategyArg::Tiled => Strategy::TiledParallel {
                    tile_rows: tile_rows as usize,
                    workers: threads as usize,
                },
            };
            let opts = Options {
                mem_cap_bytes: (mem_cap_gb * (1u64 << 30) as f64) as u64,
            };
            let mut config = RunConfig::new("stabilize");
            config.d = Some(d);
            config.n = n;
            config.strategy = Some(strat.name());
            if matches!(strat, Strategy::TiledParallel { .. }) {
                config.threads = Some(threads);
                config.tile_rows = Some(tile_rows);
            }
            config.input = input.as_ref().map(path_str);
            config.out = out.as_ref().map(path_str);
            config.odometer_out = odometer_out.as_ref().map(path_str);
            config.mem_cap_gb = Some(mem_cap_gb);

            let result = match (&input, n) {
                (Some(path), _) => {
                    let grid = sfield::read_path(path)?.into_chips()?;
                    stabilize_opts(&grid, strat, &opts)?
                }
                (None, Some(n)) => stabilize_point_pile_opts(d, n, strat, &opts)?,
                (None, None) => unreachable!("clap enforces --n or --in"),
            };
            if let Some(path) = &out {
                sfield::write_chips_path(path, &result.final_config)?;
            }
            if let Some(path) = &odometer_out {
                sfield::write_odometer_path(path, &result.odometer)?;
            }
            let radius = measured_radius(&result.final_config);
            let dim = result.final_config.bounding_box().dimension();
            let summary = serde_json::json!({
                "config": config,
                "d": dim,
                "chips": result.final_config.total(),
                "strategy": result.strategy.name(),
                "total_topples": result.total_topples,
                "half_width": result.final_config.bounding_box().half_width(),
                "measured_radius": radius,
                "rescaled_radius": radius * mesh_size(dim, result.final_config.total().max(1) as u64),
                "wall_time_ms": result.wall_time.as_millis() as u64,
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary is serializable"));
            Ok(ExitCode::SUCCESS)
        }

        Command::Green {
            d,
            n,
            radius,
            tol,
            max_iters,
            out,
        } => {
            if !(tol > 0.0 && tol <= 1e-6) {
                return usage(format!("--tol must lie in (0, 1e-6], got {tol}"))
                    .map_err(RunError::from);
            }
            if let Some(r) = radius {
                if !(r > 0.0 && r.is_finite()) {
                    return usage(format!("--radius must be positive, got {r}"))
                        .map_err(RunError::from);
                }
            }
            let mut config = RunConfig::new("green");
            config.d = Some(d);
            config.n = Some(n);
            config.radius = radius;
            config.tol = Some(tol);
            config.max_iters = Some(max_iters);
            config.out = out.as_ref().map(path_str);

            let h = mesh_size(d, n.max(1));
            let r = match radius {
                Some(r) => r,
                None => {
                    let run = stabilize_point_pile_opts(d, n, Strategy::FifoWorklist, &Options::default())?;
                    (1.6 * h * measured_radius(&run.final_config)).max(4.0 * h)
                }
            };
            let mut problem = GreenProblem::new(d, n, r, tol)?;
            problem.max_iters = max_iters;
            let sol = solve_phi_n(&problem)?;
            if let Some(path) = &out {
                sfield::write_real_path(path, &sol.field)?;
            }
            let cut = (r / h) * (r / h);
            let unknowns = sol
                .field
                .bounding_box()
                .coords()
                .filter(|&c| (norm_sq(c) as f64) < cut)
                .count();
            let summary = serde_json::json!({
                "config": config,
                "d": d,
                "n": n,
                "h": h,
                "radius": r,
                "unknowns": unknowns,
                "iterations": sol.iterations,
                "residual": sol.residual,
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary is serializable"));
            Ok(ExitCode::SUCCESS)
        }

        Command::Converge {
            d,
            schedule,
            phis,
            out,
        } => {
            let parsed_schedule: Vec<u64> = schedule
                .split(',')
                .map(|t| t.trim().parse::<u64>())
                .collect::<Result<_, _>>()
                .map_err(|_| UsageError(format!("--schedule '{schedule}' is not a comma-separated list of integers")))?;
            if parsed_schedule.is_empty() || parsed_schedule.windows(2).any(|w| w[0] >= w[1]) {
                return usage(format!(
                    "--schedule must be strictly increasing, got {parsed_schedule:?}"
                ))
                .map_err(RunError::from);
            }
            let phi_specs = if phis.is_empty() {
                vec!["bump:0,0:0.3".to_string()]
            } else {
                phis
            };
            let parsed_phis: Vec<TestFunction> = phi_specs
                .iter()
                .map(|s| TestFunction::parse(s).map_err(|e| UsageError(e.to_string())))
                .collect::<Result<_, _>>()?;

            let mut config = RunConfig::new("converge");
            config.d = Some(d);
            config.schedule = Some(parsed_schedule.clone());
            config.phi = Some(phi_specs.clone());
            config.out = out.as_ref().map(path_str);

            let report = analysis::run_convergence_study(d, &parsed_schedule, &parsed_phis)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            let body = serde_json::json!({
                "config": config,
                "report": report,
            });
            let text = serde_json::to_string_pretty(&body).expect("report is serializable");
            match &out {
                Some(path) => std::fs::write(path, text + "\n").map_err(sandpile::Error::from)?,
                None => println!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }

        Command::Render {
            input,
            out,
            crop,
            palette,
            slice,
        } => {
            let crop_rect = crop
                .as_deref()
                .map(|s| CropRect::parse(s).map_err(|e| UsageError(e.to_string())))
                .transpose()?;

            let mut config = RunConfig::new("render");
            config.input = Some(path_str(&input));
            config.out = Some(path_str(&out));
            config.crop = crop.clone();
            config.palette = Some(palette.clone());
            config.slice = slice;

            let grid = sfield::read_path(&input)?.into_chips()?;
            let d = grid.bounding_box().dimension();
            let pal = Palette::parse(&palette, d).map_err(|e| UsageError(e.to_string()))?;
            let png = render_png(&grid, &pal, crop_rect, slice)?;
            std::fs::write(&out, &png).map_err(sandpile::Error::from)?;
            let k = grid.bounding_box().half_width();
            let (w, h) = match crop_rect {
                Some(r) => ((r.x1 - r.x0 + 1) as u64, (r.y1 - r.y0 + 1) as u64),
                None => ((2 * k + 1) as u64, (2 * k + 1) as u64),
            };
            let summary = serde_json::json!({
                "config": config,
                "width": w,
                "height": h,
                "png_bytes": png.len(),
            });
            println!("{}", serde_json::to_string_pretty(&summary).expect("summary is serializable"));
            Ok(ExitCode::SUCCESS)
        }

        Command::Verify { seed, dump_dir, out } => {
            let mut config = RunConfig::new("verify");
            config.seed = Some(seed);
            config.dump_dir = dump_dir.as_ref().map(path_str);
            config.out = out.as_ref().map(path_str);

            if let Some(dir) = &dump_dir {
                std::fs::create_dir_all(dir).map_err(sandpile::Error::from)?;
            }
            let report = run_verify(seed, dump_dir.as_deref())?;
            let body = serde_json::json!({
                "config": config,
                "report": report,
            });
            let text = serde_json::to_string_pretty(&body).expect("report is serializable");
            if let Some(path) = &out {
                std::fs::write(path, text.clone() + "\n").map_err(sandpile::Error::from)?;
            }
            println!("{text}");
            Ok(if report.all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}
