use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use figure8_bo::geometry::BasisParams;
use figure8_bo::harness::{
    cmd_optimize, cmd_simulate, cmd_sweep, incumbent_spread, ExperimentConfig, HarnessError,
};

/// Figure-8 path optimization for a sailboat in a wind window.
#[derive(Debug, Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fly one figure-8 and write its trajectory, waypoints and score.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Basis parameters as `W,H`. Defaults to the center of the search box.
        #[arg(long, value_parser = parse_beta)]
        beta: Option<BasisParams>,
    },
    /// Optimize the figure-8 width and height.
    Optimize {
        #[command(flatten)]
        common: Common,
    },
    /// Run the optimizer for several seeds and aggregate the results.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated seeds, overriding `sweep.seeds`.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; every field is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of optimizer iterations after the initial design.
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(n) = self.iterations {
            cfg.bo.n_iter = n;
        }
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        Ok(cfg)
    }
}

fn parse_beta(s: &str) -> Result<BasisParams, String> {
    let (w, h) = s.split_once(',').ok_or("expected W,H")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok(BasisParams::new(parse(w)?, parse(h)?))
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Simulate { common, beta } => {
            let cfg = common.resolve()?;
            let beta = beta.unwrap_or_else(|| cfg.geometry.domain().center());
            let summary = cmd_simulate(&cfg, beta)?;
            let j = summary.j.unwrap_or_default();
            println!(
                "{beta}: J = {j:.6}, laps = {}, written to {}",
                summary.laps_completed,
                cfg.out_dir.display()
            );
        }
        Command::Optimize { common } => {
            let cfg = common.resolve()?;
            let history = cmd_optimize(&cfg)?;
            let (beta, j) = history.best().expect("a finished run has an incumbent");
            println!(
                "{} evaluations, best {beta}: J = {j:.6}, written to {}",
                history.records.len(),
                cfg.out_dir.display()
            );
        }
        Command::Sweep { common, seeds } => {
            let mut cfg = common.resolve()?;
            if let Some(seeds) = seeds {
                cfg.sweep.seeds = seeds;
            }
            let runs = cmd_sweep(&cfg)?;
            for run in &runs {
                match (&run.result, run.best()) {
                    (Ok(_), Some((beta, j))) => {
                        println!("seed {}: best {beta}: J = {j:.6}", run.seed)
                    }
                    (Err(e), _) => eprintln!("seed {}: {e}", run.seed),
                    (Ok(_), None) => eprintln!("seed {}: no successful evaluation", run.seed),
                }
            }
            if let Some([dw, dh]) = incumbent_spread(&runs) {
                let [bw, bh] = cfg.geometry.domain().widths();
                println!(
                    "incumbent spread: W {dw:.3} ({:.1}% of box), H {dh:.3} ({:.1}% of box)",
                    100.0 * dw / bw,
                    100.0 * dh / bh
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_parsing() {
        assert_eq!(parse_beta("40,11.5").unwrap(), BasisParams::new(40.0, 11.5));
        assert_eq!(
            parse_beta(" 40 , 11 ").unwrap(),
            BasisParams::new(40.0, 11.0)
        );
        assert!(parse_beta("40").is_err());
        assert!(parse_beta("a,1").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_file() {
        let cli = Cli::parse_from([
            "figure8-bo",
            "optimize",
            "--seed",
            "9",
            "--iterations",
            "3",
            "--out-dir",
            "x",
        ]);
        let Command::Optimize { common } = cli.command else {
            panic!()
        };
        let cfg = common.resolve().unwrap();
        assert_eq!(
            (cfg.seed, cfg.bo.n_iter, cfg.out_dir),
            (9, 3, PathBuf::from("x"))
        );
    }
}
