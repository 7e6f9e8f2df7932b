//! Command-line front end: single runs, parameter sweeps, and scenario
//! scaffolding.

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use uavslice::scenario::{Algo, Scenario};
use uavslice::sim;

#[derive(Parser)]
#[command(name = "uavslice", version, about = "Proactive UAV network slicing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics.csv / summary.json to --out.
    Run {
        /// Scenario TOML file; defaults apply when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// re2fs | suav | cct
        #[arg(long)]
        algo: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Override the scored horizon.
        #[arg(long)]
        horizon: Option<usize>,
        /// Override the user count.
        #[arg(long)]
        users: Option<usize>,
        /// Override the UAV count.
        #[arg(long)]
        uavs: Option<usize>,
        /// Also write the per-iteration merit trace.
        #[arg(long, default_value_t = false)]
        gamma_trace: bool,
    },
    /// Run a one-parameter sweep across algorithms and seeds.
    Sweep {
        /// Swept parameter, e.g. `users=16,32,64` or `uavs=2,3,4`.
        #[arg(long)]
        param: String,
        /// Number of consecutive seeds starting at --seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated algorithms.
        #[arg(long, default_value = "re2fs,suav,cct")]
        algos: String,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
    },
    /// Print the default scenario as TOML.
    DefaultScenario,
}

fn load_base(path: &Option<PathBuf>) -> uavslice::Result<Scenario> {
    match path {
        Some(p) => Scenario::from_path(p),
        None => Ok(Scenario::default()),
    }
}

fn apply_param(sc: &mut Scenario, key: &str, value: usize) -> uavslice::Result<()> {
    match key {
        "users" => sc.n_users = value,
        "uavs" => sc.uav.count = value,
        "horizon" => sc.horizon = value,
        other => {
            return Err(uavslice::Error::Config(format!(
                "unknown sweep parameter '{other}' (expected users|uavs|horizon)"
            )))
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn real_main() -> uavslice::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            scenario,
            seed,
            algo,
            out,
            horizon,
            users,
            uavs,
            gamma_trace,
        } => {
            let mut sc = load_base(&scenario)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            if let Some(a) = algo {
                sc.algo = a.parse()?;
            }
            if let Some(h) = horizon {
                sc.horizon = h;
            }
            if let Some(u) = users {
                sc.n_users = u;
            }
            if let Some(j) = uavs {
                sc.uav.count = j;
            }
            sc.gamma_trace = gamma_trace;
            sc.validate()?;
            let metrics = sim::run(&sc)?;
            metrics.write_outputs(&out, gamma_trace)?;
            println!(
                "algo={} seed={} users={} uavs={} horizon={} energy_efficiency={:.4} jain={:.4}",
                sc.algo,
                sc.seed,
                sc.n_users,
                sc.uav.count,
                sc.horizon,
                metrics.summary.energy_efficiency,
                metrics.summary.jain_index
            );
            Ok(())
        }
        Command::Sweep {
            param,
            seeds,
            seed,
            algos,
            scenario,
            out,
            horizon,
        } => {
            let (key, values) = param
                .split_once('=')
                .ok_or_else(|| uavslice::Error::Config("expected key=v1,v2,...".into()))?;
            let values: Vec<usize> = values
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| uavslice::Error::Config(format!("bad sweep value '{v}'")))
                })
                .collect::<uavslice::Result<_>>()?;
            let algos: Vec<Algo> = algos
                .split(',')
                .map(|a| a.trim().parse())
                .collect::<uavslice::Result<_>>()?;
            std::fs::create_dir_all(&out)?;
            let mut table = String::from("algo,param,value,seed,energy_efficiency,jain_index\n");
            for value in &values {
                for algo in &algos {
                    for k in 0..seeds {
                        let mut sc = load_base(&scenario)?;
                        apply_param(&mut sc, key, *value)?;
                        if let Some(h) = horizon {
                            sc.horizon = h;
                        }
                        sc.seed = seed + k;
                        sc.algo = *algo;
                        sc.validate()?;
                        let metrics = sim::run(&sc)?;
                        let dir = out.join(format!("{algo}_{key}{value}_seed{}", sc.seed));
                        metrics.write_outputs(&dir, false)?;
                        println!(
                            "algo={algo} {key}={value} seed={} ee={:.4} jain={:.4}",
                            sc.seed,
                            metrics.summary.energy_efficiency,
                            metrics.summary.jain_index
                        );
                        table.push_str(&format!(
                            "{algo},{key},{value},{},{:.6},{:.6}\n",
                            sc.seed,
                            metrics.summary.energy_efficiency,
                            metrics.summary.jain_index
                        ));
                    }
                }
            }
            std::fs::write(out.join("sweep_summary.csv"), table)?;
            Ok(())
        }
        Command::DefaultScenario => {
            print!("{}", Scenario::default().to_toml_string());
            Ok(())
        }
    }
}
