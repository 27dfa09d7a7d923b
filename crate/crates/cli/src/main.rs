use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use mixf_cli::config::{self, RunConfig};
use mixf_cli::run::{self, Arm, SweepPlan};
use mixf_cli::synthetic::{self, SyntheticSpec};
use mixf_cli::{gradsuite, CliError, EXIT_OK};

#[derive(Parser)]
#[command(name = "mixf", version, about = "Transformer fine-tuning with mixup on pooled representations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// JSON run configuration
    #[arg(long, short)]
    config: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted-path override such as train.epochs=5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(&self.config, &self.overrides, self.seed)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ArmChoice {
    Baseline,
    Mixup,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write run.json, params.mixf and vocab.json
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Share of the training set to keep
        #[arg(long, default_value_t = 1.0)]
        fraction: f64,
    },
    /// Score saved parameters on a dev file and print {metric, value, n}
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        params: PathBuf,
        /// Defaults to vocab.json next to the parameter file
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Defaults to the config's dev file
        #[arg(long)]
        dev: Option<PathBuf>,
    },
    /// Train every (fraction, arm, seed) cell and write sweep.csv
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated training fractions; default 0.1 to 1.0 in steps of 0.1
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
        #[arg(long, value_enum, default_value = "both")]
        arms: ArmChoice,
        /// Comma-separated seeds; default is the config seed
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Cells trained in parallel
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check analytic gradients against central differences
    Gradcheck {
        /// Break one component's gradient on purpose
        #[arg(long, hide = true)]
        corrupt: Option<String>,
    },
    /// Write the bundled synthetic task (train.tsv, dev.tsv, config.json)
    GenSynthetic {
        /// Defaults to $MIXF_OUT, then ./synthetic
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long, default_value_t = 2000)]
        train_size: usize,
        #[arg(long, default_value_t = 500)]
        dev_size: usize,
        #[arg(long, default_value_t = 0.1)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::from(EXIT_OK),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Train { config, fraction } => {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(CliError::Input(format!("--fraction {fraction} is outside (0, 1]")));
            }
            let cfg = config.load()?;
            let out = cfg.out_dir();
            let report = run::train_to_dir(&cfg, fraction, &out)?;
            println!(
                "{}: final dev {} = {} (best {} at epoch {}); wrote {}",
                report.run_id,
                report.epochs.last().map_or("", |e| e.dev_metric.metric.as_str()),
                report.final_metric,
                report.best_metric,
                report.best_epoch,
                out.join(run::RUN_FILE).display()
            );
            Ok(())
        }
        Command::Eval {
            config,
            params,
            vocab,
            dev,
        } => {
            let cfg = config.load()?;
            let vocab = vocab.unwrap_or_else(|| {
                params.parent().unwrap_or(std::path::Path::new("")).join(run::VOCAB_FILE)
            });
            let result = run::evaluate_saved(&cfg, &params, &vocab, dev.as_deref())?;
            println!("{}", serde_json::to_string(&result).expect("result serializes"));
            Ok(())
        }
        Command::Sweep {
            config,
            fractions,
            arms,
            seeds,
            jobs,
        } => {
            let cfg = config.load()?;
            let plan = SweepPlan {
                fractions: if fractions.is_empty() {
                    SweepPlan::default_fractions()
                } else {
                    fractions
                },
                arms: match arms {
                    ArmChoice::Baseline => vec![Arm::Baseline],
                    ArmChoice::Mixup => vec![Arm::Mixup],
                    ArmChoice::Both => vec![Arm::Baseline, Arm::Mixup],
                },
                seeds: if seeds.is_empty() { vec![cfg.seed] } else { seeds },
                jobs,
            };
            let out = cfg.out_dir();
            let started = Instant::now();
            let summary = run::sweep(&cfg, &plan, &out)?;
            for (fraction, delta) in &summary.deltas {
                match delta {
                    Some(d) => println!("fraction {fraction}: mixup - baseline = {d:+.4}"),
                    None => println!("fraction {fraction}: delta unavailable"),
                }
            }
            println!(
                "{} cells in {:.1}s; wrote {}",
                summary.cells.len(),
                started.elapsed().as_secs_f64(),
                out.join(run::SWEEP_FILE).display()
            );
            match summary.failures() {
                0 => Ok(()),
                n => Err(CliError::Verification(format!("{n} sweep cell(s) failed"))),
            }
        }
        Command::Gradcheck { corrupt } => {
            let started = Instant::now();
            let results = gradsuite::run_suite(corrupt.as_deref())?;
            for r in &results {
                println!(
                    "{:<24} max rel error {:.3e}  (tol {:.0e})  {}",
                    r.name,
                    r.max_rel_error,
                    r.tol,
                    if r.passed { "ok" } else { "FAIL" }
                );
            }
            println!("{} components in {:.2}s", results.len(), started.elapsed().as_secs_f64());
            let failed: Vec<&str> = results
                .iter()
                .filter(|r| !r.passed)
                .map(|r| r.name.as_str())
                .collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(CliError::Verification(format!(
                    "gradient check failed for: {}",
                    failed.join(", ")
                )))
            }
        }
        Command::GenSynthetic {
            out_dir,
            train_size,
            dev_size,
            noise,
            seed,
        } => {
            let dir = out_dir.unwrap_or_else(|| config::out_dir_or(Some("synthetic".into())));
            let spec = SyntheticSpec {
                train_size,
                dev_size,
                noise,
                seed,
                ..Default::default()
            };
            let path = synthetic::write_task(&dir, &spec)?;
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}
