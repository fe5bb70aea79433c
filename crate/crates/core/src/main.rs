use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use drivestack::grid::{OccupancyGrid, DEFAULT_RESOLUTION};
use drivestack::planner::parse_trajectory_log;
use drivestack::route::{load_network, shortest_path, Metric, RouteError};
use drivestack::sim::render::{render_grid, render_tiles, render_trajectories, write_png};
use drivestack::sim::{replay_logs, run_scenario, Mode, RunOptions, ScenarioSpec, SimError};

const EXIT_CONFIG: u8 = 2;
const EXIT_SCENARIO: u8 = 3;
const EXIT_OTHER: u8 = 1;

#[derive(Parser)]
#[command(name = "drivestack", version, about = "Autonomous-driving stack simulator and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario through the full driving loop.
    Drive {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Drive a scenario while building or extending a tile map.
    Map {
        scenario: PathBuf,
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Shortest route between two nodes of a road network.
    Route {
        network: PathBuf,
        from: u64,
        to: u64,
        #[arg(long, value_enum, default_value_t = MetricArg::Time)]
        metric: MetricArg,
    },
    /// Render a graymap, a tile manifest or a trajectory log to PNG.
    Render {
        kind: RenderKind,
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run perception and fusion over a recorded log directory.
    Replay {
        log: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Time,
    Distance,
}

#[derive(Clone, Copy, ValueEnum)]
enum RenderKind {
    Graymap,
    Tiles,
    Trajectory,
}

enum Failure {
    Config(String),
    Scenario(String),
    Other(String),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Other(e.to_string())
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

fn simulate(scenario: &Path, mode: Mode, opts: RunOptions) -> Result<(), Failure> {
    let spec = ScenarioSpec::load(scenario)?;
    let out = run_scenario(&spec, mode, &opts)?;
    print!("{}", out.metrics.to_text());
    print!("{}", out.metrics.timing_text());
    if out.metrics.success(spec.expect) {
        Ok(())
    } else {
        Err(Failure::Scenario(format!(
            "scenario failed: collisions = {}, goal_reached = {}, final_speed = {}",
            out.metrics.collisions, out.metrics.goal_reached, out.metrics.final_speed
        )))
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Drive { scenario, out, seed } => simulate(
            &scenario,
            Mode::Drive,
            RunOptions {
                out_dir: Some(out),
                seed,
                ..Default::default()
            },
        ),
        Command::Map {
            scenario,
            tiles,
            resume,
            out,
        } => simulate(
            &scenario,
            Mode::Map,
            RunOptions {
                out_dir: out,
                tiles_dir: Some(tiles),
                resume,
                ..Default::default()
            },
        ),
        Command::Route { network, from, to, metric } => {
            let net = load_network(&read(&network)?).map_err(|e| Failure::Config(format!("{}: {e}", network.display())))?;
            let metric = match metric {
                MetricArg::Time => Metric::TravelTime,
                MetricArg::Distance => Metric::Distance,
            };
            match shortest_path(&net, from, to, metric) {
                Ok(path) => {
                    let nodes: Vec<String> = path.nodes.iter().map(u64::to_string).collect();
                    println!("nodes = {}", nodes.join(" "));
                    println!("cost = {}", path.total_cost);
                    println!("length = {}", path.length);
                    Ok(())
                }
                Err(e @ RouteError::Topology(_)) => Err(Failure::Config(e.to_string())),
                Err(e) => Err(Failure::Scenario(e.to_string())),
            }
        }
        Command::Render { kind, input, out } => {
            let img = match kind {
                RenderKind::Graymap => {
                    let bytes = fs::read(&input).map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?;
                    let grid = OccupancyGrid::from_pgm(&bytes, DEFAULT_RESOLUTION)
                        .map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?;
                    render_grid(&grid)
                }
                RenderKind::Tiles => render_tiles(&input)?,
                RenderKind::Trajectory => {
                    let plans = parse_trajectory_log(&read(&input)?)
                        .map_err(|e| Failure::Config(format!("{}: {e}", input.display())))?;
                    render_trajectories(&plans)
                }
            };
            write_png(&out, &img)?;
            Ok(())
        }
        Command::Replay { log, out } => {
            let summary = replay_logs(&log, Some(out.as_deref().unwrap_or(&log)))?;
            println!("frames = {}", summary.frames);
            println!("last_t = {}", summary.last_t);
            println!("obstacle_cells = {}", summary.obstacle_cells);
            println!("free_cells = {}", summary.free_cells);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Scenario(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(EXIT_SCENARIO)
        }
        Err(Failure::Other(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_OTHER)
        }
    }
}
