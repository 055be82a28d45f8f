use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use gram_core::evalcli::{self, DeploymentGrid, GridRow, SweepRow};
use gram_core::pipeline::{self, Algorithm, Checkpoint, ExperimentConfig};
use gram_core::{Error, Result};

#[derive(Parser)]
#[command(name = "gram", version, about = "Train and evaluate uncertainty-gated adaptive policies")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a run from a config file (every key optional).
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's algorithm.
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Continue a run from any of its checkpoints.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Refit the blend coefficient from the stored validation set.
    Calibrate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        u_min: Option<f64>,
        #[arg(long)]
        u_max: Option<f64>,
        /// Defaults to overwriting the input checkpoint.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate finished runs on a deployment grid.
    Eval {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        /// Grid file; the default 5 × 5 mass × frozen-actuator grid if absent.
        #[arg(long)]
        grid: Option<PathBuf>,
        /// Evaluation seeds; each run's training seed if absent.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Return against random-impulse scale on training contexts.
    Sweep {
        #[arg(long, required = true, num_args = 1..)]
        checkpoint: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,1,2")]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize every grid CSV in a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::MissingCalibration => 3,
                _ => 1,
            })
        }
    }
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn eval_seeds(ck: &Checkpoint, seeds: &[u64]) -> Vec<u64> {
    if seeds.is_empty() {
        vec![ck.config.seed]
    } else {
        seeds.to_vec()
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Train {
            config,
            seed,
            algorithm,
            out,
        } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(a) = algorithm {
                cfg.algorithm = a;
            }
            cfg.validate()?;
            mkdir(&out)?;
            let text = cfg.to_toml_string()?;
            fs::write(out.join("config.toml"), text).map_err(|e| Error::io(out.join("config.toml"), e))?;
            let ck = pipeline::train(cfg, &out)?;
            println!("trained {} seed {} -> {}", ck.config.algorithm, ck.config.seed, out.display());
        }
        Cmd::Resume { checkpoint, out } => {
            let ck = pipeline::resume(&checkpoint, &out)?;
            println!("finished {} seed {} -> {}", ck.config.algorithm, ck.config.seed, out.display());
        }
        Cmd::Calibrate {
            checkpoint,
            u_min,
            u_max,
            out,
        } => {
            let mut ck = Checkpoint::load(&checkpoint)?;
            let lo = u_min.unwrap_or(ck.config.u_min);
            let hi = u_max.unwrap_or(ck.config.u_max);
            pipeline::recalibrate(&mut ck, lo, hi)?;
            let dst = out.unwrap_or(checkpoint);
            ck.save(&dst)?;
            let p = ck.alpha_params()?;
            println!("beta {} delta {} q_max {}", p.beta, p.delta, p.q_max);
        }
        Cmd::Eval {
            checkpoint,
            grid,
            seeds,
            out,
        } => {
            let grid = match grid {
                Some(p) => {
                    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                    DeploymentGrid::from_toml_str(&text)?
                }
                None => DeploymentGrid::default(),
            };
            mkdir(&out)?;
            for path in &checkpoint {
                let ck = Checkpoint::load(path)?;
                for seed in eval_seeds(&ck, &seeds) {
                    let rows = evalcli::evaluate(&ck, &grid, seed)?;
                    let name = out.join(format!("grid_{}_seed{seed}.csv", ck.config.algorithm));
                    evalcli::write_grid_csv(&rows, &name)?;
                    println!("{}", name.display());
                }
            }
        }
        Cmd::Sweep {
            checkpoint,
            rates,
            episodes,
            seeds,
            out,
        } => {
            mkdir(&out)?;
            for path in &checkpoint {
                let ck = Checkpoint::load(path)?;
                for seed in eval_seeds(&ck, &seeds) {
                    let rows: Vec<SweepRow> = evalcli::ood_sweep(&ck, &rates, episodes, seed)?;
                    let name = out.join(format!("sweep_{}_seed{seed}.csv", ck.config.algorithm));
                    evalcli::write_sweep_csv(&rows, &name)?;
                    println!("{}", name.display());
                }
            }
        }
        Cmd::Report { input, out } => {
            let mut paths: Vec<PathBuf> = fs::read_dir(&input)
                .map_err(|e| Error::io(&input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                    name.starts_with("grid_") && name.ends_with(".csv")
                })
                .collect();
            paths.sort();
            let mut rows: Vec<GridRow> = Vec::new();
            for p in &paths {
                rows.extend(evalcli::read_grid_csv(p)?);
            }
            if rows.is_empty() {
                return Err(Error::Config(format!("no grid results in {}", input.display())));
            }
            mkdir(&out)?;
            let summary = evalcli::summarize(&rows);
            evalcli::write_summary_csv(&summary, &out.join("summary.csv"))?;
            println!("{:<22} {:>6} {:>8} {:>8} {:>8} {:>8}", "algorithm", "seed", "id_avg", "ood_avg", "id_a", "ood_a");
            let fmt = |a: Option<f64>| a.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3}"));
            for s in &summary {
                println!(
                    "{:<22} {:>6} {:>8.3} {:>8.3} {:>8} {:>8}",
                    s.algorithm,
                    s.seed.map_or_else(|| "mean".to_string(), |v| v.to_string()),
                    s.id_average,
                    s.ood_average,
                    fmt(s.id_alpha),
                    fmt(s.ood_alpha)
                );
            }
        }
    }
    Ok(())
}
