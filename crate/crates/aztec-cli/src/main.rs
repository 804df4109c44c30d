use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use aztec::experiments::{self, ExperimentConfig, ExperimentKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Batch experiments on one-periodic Aztec diamonds in random environments.
#[derive(Parser)]
#[command(name = "aztec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Finite-size means against the limit-shape moments.
    Lln(Common),
    /// Annealed fluctuations in either scaling regime.
    Annealed {
        #[command(flatten)]
        common: Common,
        /// Overrides the regime implied by the config's `experiment`.
        #[arg(long, value_enum)]
        regime: Option<RegimeArg>,
    },
    /// Quenched fluctuations at fixed environments.
    Quenched(Common),
    /// GUE tables and the full-spectrum pipeline.
    GueDemo(Common),
    /// Fast internal consistency checks; non-zero exit status on failure.
    Selftest {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML, or JSON by `.json` extension).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `out_dir` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    Sqrt,
    M,
}

fn load(common: &Common, expected: &[ExperimentKind]) -> anyhow::Result<ExperimentConfig> {
    if let Some(t) = common.threads {
        rayon::ThreadPoolBuilder::new().num_threads(t).build_global().context("configuring the thread pool")?;
    }
    let mut config = ExperimentConfig::load(&common.config).with_context(|| format!("reading {}", common.config.display()))?;
    if let Some(s) = common.seed {
        config.seed = s;
    }
    if let Some(o) = &common.out {
        config.out_dir = Some(o.clone());
    }
    if !expected.contains(&config.experiment) {
        bail!("config describes a `{}` experiment, not `{}`", config.experiment.name(), expected[0].name());
    }
    Ok(config)
}

fn finish(config: &ExperimentConfig, report: &aztec::report::MomentReport) -> anyhow::Result<()> {
    let dir = config.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    for p in experiments::write_outputs(report, config, &dir)? {
        println!("wrote {}", p.display());
    }
    let s = experiments::summarize(report, config);
    println!("{}: {}/{} rows within tolerance", s.experiment, s.rows_within_tolerance, s.rows);
    Ok(())
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Lln(c) => {
            let config = load(&c, &[ExperimentKind::Lln])?;
            finish(&config, &experiments::run_lln(&config)?)?;
        }
        Command::Annealed { common, regime } => {
            let mut config = load(&common, &[ExperimentKind::AnnealedSqrt, ExperimentKind::AnnealedM])?;
            if let Some(r) = regime {
                config.experiment = match r {
                    RegimeArg::Sqrt => ExperimentKind::AnnealedSqrt,
                    RegimeArg::M => ExperimentKind::AnnealedM,
                };
            }
            finish(&config, &experiments::run(&config)?)?;
        }
        Command::Quenched(c) => {
            let config = load(&c, &[ExperimentKind::Quenched])?;
            finish(&config, &experiments::run_quenched(&config)?)?;
        }
        Command::GueDemo(c) => {
            let config = load(&c, &[ExperimentKind::GueDemo])?;
            finish(&config, &experiments::run_gue_demo(&config)?)?;
        }
        Command::Selftest { out } => {
            let report = experiments::run_selftest()?;
            for r in &report.rows {
                println!("{:<16} k={} value={:.12e} expected={:.12e}", r.label, r.k, r.value, r.prediction.unwrap_or(f64::NAN));
            }
            if let Some(dir) = out {
                std::fs::create_dir_all(&dir)?;
                report.write_csv(std::fs::File::create(dir.join("selftest.csv"))?)?;
            }
            let ok = experiments::selftest_passed(&report);
            println!("selftest {}", if ok { "PASS" } else { "FAIL" });
            return Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE });
        }
    }
    Ok(ExitCode::SUCCESS)
}
