//! `colgrid`: simulate column grids, print expected sizes, run scaling
//! sweeps and merge their reports.

mod config;

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use colgrid_core::scaling::{self, MetricRow, ScalingError};
use colgrid_core::{expected_counts, Boundary, EngineError, Raster};
use thiserror::Error;

use config::{ConfigError, Settings};

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Scaling(#[from] ScalingError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Parser)]
#[command(
    name = "colgrid",
    version,
    about = "Distributed simulation of cortical column grids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation; writes a CSV report row and optionally a raster.
    Simulate(SimulateArgs),
    /// Print expected neuron and synapse counts without simulating.
    ExpectCounts(CountsArgs),
    /// Strong or weak scaling sweeps.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Merge CSV reports and raster files.
    Report(ReportArgs),
}

fn parse_grid(s: &str) -> Result<(u32, u32), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WIDTHxHEIGHT, got '{s}'"))?;
    let w: u32 = w.parse().map_err(|e| format!("width: {e}"))?;
    let h: u32 = h.parse().map_err(|e| format!("height: {e}"))?;
    if w == 0 || h == 0 {
        return Err("grid dimensions must be at least 1".into());
    }
    Ok((w, h))
}

fn parse_on_off(s: &str) -> Result<bool, String> {
    match s {
        "on" => Ok(true),
        "off" => Ok(false),
        _ => Err(format!("expected on or off, got '{s}'")),
    }
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Grid size, e.g. 24x24.
    #[arg(long, value_name = "WxH", value_parser = parse_grid)]
    grid: Option<(u32, u32)>,
    #[arg(long, value_name = "open|torus")]
    boundary: Option<Boundary>,
    #[arg(long)]
    neurons_per_column: Option<u32>,
    #[arg(long, value_name = "MS")]
    dt_ms: Option<f64>,
    #[arg(long, value_name = "MS")]
    duration_ms: Option<f64>,
    #[arg(long, value_name = "MS")]
    delay_ms: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_name = "inproc|tcp")]
    transport: Option<String>,
    /// Listen address of every worker, comma separated.
    #[arg(long, value_name = "HOST:PORT,...")]
    tcp_peers: Option<String>,
    #[arg(long, value_name = "DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, value_name = "on|off", value_parser = parse_on_off)]
    raster: Option<bool>,
}

impl ConfigArgs {
    fn settings(&self) -> Result<Settings, CliError> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            s.apply_file(path)?;
        }
        for pair in &self.set {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got '{pair}'")))?;
            s.set(key.trim(), value.trim())?;
        }
        if let Some((w, h)) = self.grid {
            s.sim.grid.width = w;
            s.sim.grid.height = h;
        }
        let flags = [
            ("grid.boundary", self.boundary.map(|b| b.to_string())),
            (
                "neurons_per_column",
                self.neurons_per_column.map(|v| v.to_string()),
            ),
            ("dt_ms", self.dt_ms.map(|v| v.to_string())),
            ("duration_ms", self.duration_ms.map(|v| v.to_string())),
            ("delay_ms", self.delay_ms.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("transport", self.transport.clone()),
            ("tcp.peers", self.tcp_peers.clone()),
        ];
        for (key, value) in flags {
            if let Some(value) = value {
                s.set(key, &value)?;
            }
        }
        if let Some(dir) = &self.output_dir {
            s.output_dir = dir.clone();
        }
        if let Some(on) = self.raster {
            s.sim.record_raster = on;
        }
        Ok(s)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Number of workers.
    #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
    workers: Option<u32>,
    /// Prefix of the output file names.
    #[arg(long)]
    run_id: Option<String>,
    /// Run only this worker of a TCP mesh (one process per worker).
    #[arg(long, requires = "tcp_peers")]
    rank: Option<u16>,
}

#[derive(Args)]
struct CountsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Also write the counts as CSV.
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Worker counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true,
          value_parser = clap::value_parser!(u32).range(1..))]
    workers: Vec<u32>,
    /// Runs per point; the fastest is kept.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    repeats: u32,
    /// Prefix of run ids and output file names.
    #[arg(long)]
    label: Option<String>,
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Fixed grid, varying workers.
    Strong(SweepArgs),
    /// Fixed columns per worker; the grid grows with the workers.
    Weak {
        #[arg(long, value_parser = clap::value_parser!(u32).range(1..))]
        columns_per_worker: u32,
        #[command(flatten)]
        sweep: SweepArgs,
    },
}

#[derive(Args)]
struct ReportArgs {
    /// CSV reports to merge.
    inputs: Vec<PathBuf>,
    /// Merged CSV destination.
    #[arg(long, short, value_name = "FILE")]
    output: Option<PathBuf>,
    /// Raster files to merge; repeatable.
    #[arg(long = "raster", value_name = "FILE")]
    rasters: Vec<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "rasters")]
    raster_output: Option<PathBuf>,
    /// Step of the rasters being merged.
    #[arg(long, default_value_t = 0.1)]
    dt_ms: f64,
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let mut settings = args.config.settings()?;
    if let Some(w) = args.workers {
        settings.sim.workers = w;
    }
    let sim = settings.sim_config();
    let grid = &sim.grid;
    let mut run_id = args.run_id.clone().unwrap_or_else(|| {
        format!(
            "sim-{}x{}-w{}-seed{}",
            grid.width, grid.height, sim.workers, sim.seed
        )
    });
    let output = match args.rank {
        Some(rank) => {
            let peers = settings
                .tcp_peers
                .clone()
                .ok_or_else(|| CliError::Usage("--rank needs --tcp-peers".into()))?;
            run_id.push_str(&format!("-rank{rank}"));
            colgrid_core::run_rank(&sim, rank, &peers)?
        }
        None => colgrid_core::run(&sim)?,
    };

    ensure_dir(&settings.output_dir)?;
    let csv = settings.output_dir.join(format!("{run_id}.csv"));
    let row = MetricRow::from_report(run_id.clone(), &sim, &output.report);
    scaling::emit_csv(std::slice::from_ref(&row), &csv)?;
    let mut written = vec![csv];
    if let Some(raster) = &output.raster {
        let path = settings.output_dir.join(format!("{run_id}.raster.tsv"));
        raster.write_file(&path).map_err(io_err(&path))?;
        written.push(path);
    }

    let r = &output.report;
    println!(
        "{run_id}: {} neurons, {} synapses, {} ms simulated in {:.3} s (generation {:.3} s)",
        r.n_neurons, r.synapses, r.sim_ms, r.wall_seconds, r.generation_seconds
    );
    println!(
        "  spikes {} ({:.3} Hz), events {} recurrent + {} external = {}",
        r.spikes_total, r.mean_rate_hz, r.recurrent_events, r.external_events, r.total_events
    );
    if let Some(t) = r.time_per_event {
        println!("  {t:.3e} s per synaptic event");
    }
    if let Some(b) = r.bytes_per_synapse() {
        println!(
            "  {} bytes accounted, {b:.2} bytes/synapse",
            r.peak_accounted_bytes()
        );
    }
    for path in written {
        println!("  wrote {}", path.display());
    }
    Ok(())
}

fn expect_counts(args: &CountsArgs) -> Result<(), CliError> {
    let settings = args.config.settings()?;
    let grid = &settings.sim.grid;
    grid.validate().map_err(EngineError::from)?;
    let c = expected_counts(grid);
    println!("grid {}x{} ({})", grid.width, grid.height, grid.boundary);
    println!("  columns                       {}", c.n_columns);
    println!("  neurons                       {}", c.n_neurons);
    println!(
        "  recurrent synapses            {:.0} ({:.2}G)",
        c.expected_recurrent_synapses,
        c.expected_recurrent_synapses / 1e9
    );
    println!(
        "  total equivalent synapses     {:.0} ({:.2}G)",
        c.expected_total_equivalent_synapses,
        c.expected_total_equivalent_synapses / 1e9
    );
    println!(
        "  recurrent synapses per neuron {:.3}",
        c.expected_synapses_per_neuron
    );
    println!(
        "    of which intra-column       {:.3}",
        c.expected_intra_per_neuron
    );
    if let Some(path) = &args.csv {
        let mut out = io::BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
        writeln!(
            out,
            "grid_w,grid_h,boundary,n_columns,n_neurons,expected_recurrent_synapses,expected_total_equivalent_synapses,expected_synapses_per_neuron,expected_intra_per_neuron"
        )
        .and_then(|_| {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                grid.width,
                grid.height,
                grid.boundary,
                c.n_columns,
                c.n_neurons,
                c.expected_recurrent_synapses,
                c.expected_total_equivalent_synapses,
                c.expected_synapses_per_neuron,
                c.expected_intra_per_neuron
            )
        })
        .and_then(|_| out.flush())
        .map_err(io_err(path))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn write_sweep(rows: &[MetricRow], dir: &Path, label: &str) -> Result<(), CliError> {
    ensure_dir(dir)?;
    let csv = dir.join(format!("{label}.csv"));
    scaling::emit_csv(rows, &csv)?;
    println!(
        "{:>8} {:>7} {:>10} {:>14} {:>12} {:>8} {:>10}",
        "workers", "grid", "wall_s", "total_events", "s/event", "speedup", "B/synapse"
    );
    for r in rows {
        let opt = |v: Option<f64>, prec: usize| v.map_or("-".into(), |v| format!("{v:.prec$}"));
        println!(
            "{:>8} {:>7} {:>10.3} {:>14} {:>12} {:>8} {:>10}",
            r.workers,
            format!("{}x{}", r.grid_w, r.grid_h),
            r.wall_s,
            r.total_events,
            r.time_per_event_s
                .map_or("-".into(), |t| format!("{t:.3e}")),
            opt(r.speedup, 2),
            opt(r.bytes_per_synapse, 2)
        );
    }
    println!("wrote {}", csv.display());
    for path in scaling::write_curves(rows, dir, label).map_err(io_err(dir))? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn bench(cmd: &BenchCommand) -> Result<(), CliError> {
    match cmd {
        BenchCommand::Strong(sweep) => {
            let settings = sweep.config.settings()?;
            let sim = settings.sim_config();
            let label = sweep
                .label
                .clone()
                .unwrap_or_else(|| format!("strong-{}x{}", sim.grid.width, sim.grid.height));
            let rows = scaling::strong_scaling(&sim, &sweep.workers, sweep.repeats, &label)?;
            write_sweep(&rows, &settings.output_dir, &label)
        }
        BenchCommand::Weak {
            columns_per_worker,
            sweep,
        } => {
            let settings = sweep.config.settings()?;
            let sim = settings.sim_config();
            let label = sweep
                .label
                .clone()
                .unwrap_or_else(|| format!("weak-c{columns_per_worker}"));
            let rows = scaling::weak_scaling(
                &sim,
                *columns_per_worker,
                &sweep.workers,
                sweep.repeats,
                &label,
            )?;
            write_sweep(&rows, &settings.output_dir, &label)
        }
    }
}

fn report(args: &ReportArgs) -> Result<(), CliError> {
    if args.inputs.is_empty() && args.rasters.is_empty() {
        return Err(CliError::Usage("nothing to merge".into()));
    }
    if !args.inputs.is_empty() {
        let rows = scaling::merge_reports(&args.inputs)?;
        match &args.output {
            Some(path) => {
                scaling::emit_csv(&rows, path)?;
                println!("wrote {} rows to {}", rows.len(), path.display());
            }
            None => scaling::write_csv(&rows, io::stdout().lock())?,
        }
    }
    if !args.rasters.is_empty() {
        let out = args
            .raster_output
            .as_ref()
            .ok_or_else(|| CliError::Usage("--raster needs --raster-output".into()))?;
        let merged = Raster::merge_files(args.dt_ms, &args.rasters).map_err(io_err(out))?;
        merged.write_file(out).map_err(io_err(out))?;
        println!("wrote {} spikes to {}", merged.len(), out.display());
    }
    Ok(())
}

fn cli_command() -> clap::Command {
    let keys = config::keys_help();
    let mut cmd = Cli::command();
    for name in ["simulate", "expect-counts", "bench"] {
        let keys = keys.clone();
        cmd = cmd.mut_subcommand(name, move |sub| {
            let sub = sub.after_help(keys.clone());
            let nested: Vec<String> = sub
                .get_subcommands()
                .map(|s| s.get_name().to_string())
                .collect();
            nested.into_iter().fold(sub, |sub, n| {
                let keys = keys.clone();
                sub.mut_subcommand(n, move |s| s.after_help(keys))
            })
        });
    }
    cmd
}

fn main() -> ExitCode {
    let matches = cli_command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    let result = match &cli.command {
        Command::Simulate(args) => simulate(args),
        Command::ExpectCounts(args) => expect_counts(args),
        Command::Bench(cmd) => bench(cmd),
        Command::Report(args) => report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
