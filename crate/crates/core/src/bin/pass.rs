use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use pass_core::harness::{
    emit_convergence_trace, run_experiment, write_outputs, ExperimentSpec, Figure, Method, SweepAxis, Traffic,
    DEFAULT_REALIZATIONS, WORKERS_ENV,
};
use pass_core::pdd::PddConfig;
use pass_core::rates::Structure;
use pass_core::scenario::{build_scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "pass", version, about = "Pinching-antenna max-min beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one user drop with one method.
    Solve {
        #[arg(long, value_parser = ["wm", "wd", "ws", "ws-fast"])]
        structure: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value = "multicast")]
        traffic: TrafficArg,
        /// Transmit power; defaults to the largest entry of `p_max_dbm_list`.
        #[arg(long)]
        p_max_dbm: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte-Carlo sweep behind one figure.
    Sweep {
        #[arg(long, value_parser = ["3", "4a", "4b", "5", "6", "7"])]
        figure: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_REALIZATIONS)]
        realizations: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-iteration convergence trace of one PDD structure.
    Trace {
        #[arg(long, value_parser = ["wm", "wd", "ws"])]
        structure: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TrafficArg {
    Unicast,
    Multicast,
}

fn load_config(path: Option<&Path>) -> anyhow::Result<ScenarioConfig> {
    match path {
        Some(p) => ScenarioConfig::from_path(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(ScenarioConfig::default()),
    }
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Solve {
            structure,
            config,
            seed,
            traffic,
            p_max_dbm,
            out,
        } => {
            let base = load_config(config.as_deref())?;
            let method: Method = structure.parse()?;
            let traffic = match traffic {
                TrafficArg::Unicast => Traffic::Unicast,
                TrafficArg::Multicast => Traffic::Multicast,
            };
            let p = p_max_dbm.unwrap_or_else(|| base.default_p_max_dbm());
            let spec = ExperimentSpec {
                name: format!("solve-{method}"),
                base,
                traffic,
                axis: SweepAxis::PMaxDbm,
                values: vec![p],
                methods: vec![method],
                realizations: 1,
                base_seed: seed,
                pdd: PddConfig::default(),
            };
            let table = run_experiment(&spec)?;
            write_outputs(&table, &spec, &out)?;
            let row = &table.rows[0];
            if row.failed {
                bail!("{method} failed on seed {seed}: {}", row.error);
            }
            println!(
                "{method} seed {seed} at {p} dBm: min rate {:.4} bps/Hz, outer {}, residual {:.2e}, converged {}",
                row.min_rate, row.outer_iterations, row.final_residual, row.converged
            );
            if let Some(s) = method.structure() {
                let scenario = spec.scenario(p)?;
                let (path, _) = emit_convergence_trace(s, &scenario, seed, &spec.pdd, &out)?;
                println!("trace written to {}", path.display());
            }
        }
        Command::Sweep {
            figure,
            config,
            realizations,
            out,
        } => {
            let base = load_config(config.as_deref())?;
            let fig: Figure = figure.parse()?;
            let spec = ExperimentSpec::figure(fig, base, realizations);
            eprintln!(
                "{}: {} values x {} realizations x {} methods ({WORKERS_ENV} workers = {})",
                spec.name,
                spec.values.len(),
                spec.realizations,
                spec.methods.len(),
                pass_core::harness::worker_count()
            );
            let table = run_experiment(&spec)?;
            write_outputs(&table, &spec, &out)?;
            if fig == Figure::Convergence {
                let scenario = spec.scenario(spec.values[0])?;
                for s in [Structure::Wm, Structure::Wd, Structure::Ws] {
                    emit_convergence_trace(s, &scenario, spec.base_seed, &spec.pdd, &out)?;
                }
            }
            for a in table.aggregate() {
                println!(
                    "{:<14} {}={:<6} mean {:.4} std {:.4} (n={}, failed {}, capped {})",
                    a.method.to_string(),
                    spec.axis.column(),
                    a.value,
                    a.mean_min_rate,
                    a.std_min_rate,
                    a.realizations,
                    a.failures,
                    a.unconverged
                );
            }
        }
        Command::Trace {
            structure,
            config,
            seed,
            out,
        } => {
            let base = load_config(config.as_deref())?;
            let s: Structure = structure.parse()?;
            let scenario = build_scenario(&base, base.default_p_max_dbm())?;
            let (path, rows) = emit_convergence_trace(s, &scenario, seed, &PddConfig::default(), &out)?;
            let last = rows.last().context("empty trace")?;
            println!(
                "{} rows, final min rate {:.4}, final residual {:.2e} -> {}",
                rows.len(),
                last.min_rate,
                last.max_residual,
                path.display()
            );
        }
    }
    Ok(())
}
