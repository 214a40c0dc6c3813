use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use probekit::harness::{
    cmd_estimate, cmd_ingest, cmd_probe_eval, cmd_rank, cmd_split, cmd_ssl, cmd_sweep, cmd_validate, render_report,
    ExperimentConfig, HarnessError, MetaOverrides, Overrides,
};
use probekit::transfer::EstimatorRegistry;

/// Backbone selection, linear probing and label-efficiency experiments on
/// precomputed embedding tables.
#[derive(Parser)]
#[command(name = "probekit", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment config; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for reports
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args, Default)]
struct TableArgs {
    /// Candidate tables or directories of tables (replaces the config list)
    #[arg(long = "table")]
    tables: Vec<PathBuf>,
    /// Baseline tables for paired comparisons
    #[arg(long = "baseline")]
    baselines: Vec<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Convert CSV or EMB1 inputs into validated EMB1 files
    Ingest {
        inputs: Vec<PathBuf>,
        #[arg(long)]
        backbone: Option<String>,
        #[arg(long)]
        params: Option<u64>,
        #[arg(long)]
        dataset: Option<String>,
    },
    /// Check tables against the format invariants
    Validate { paths: Vec<PathBuf> },
    /// Write group folds and nested training subsets
    Split {
        #[command(flatten)]
        tables: TableArgs,
        #[arg(long)]
        k_folds: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
    },
    /// Score tables with transferability estimators and rank backbones
    Estimate {
        #[command(flatten)]
        tables: TableArgs,
        #[arg(long, value_delimiter = ',')]
        estimators: Option<Vec<String>>,
        /// Maximum parameter count for the selected backbone
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Re-rank an existing scores.json
    Rank {
        scores: PathBuf,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Group k-fold linear-probe evaluation
    Probe {
        #[command(flatten)]
        tables: TableArgs,
        #[arg(long)]
        k_folds: Option<usize>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Label-efficiency sweep over training fractions
    Sweep {
        #[command(flatten)]
        tables: TableArgs,
        #[arg(long)]
        k_folds: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train the toy student-teacher model
    Ssl {
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Render a JSON report as a table
    Report { report: PathBuf },
}

fn overrides(g: &Global) -> Overrides {
    Overrides {
        seed: g.seed,
        out_dir: g.out.clone(),
        jobs: g.jobs,
        ..Overrides::default()
    }
}

fn with_tables(mut o: Overrides, t: TableArgs) -> Overrides {
    o.tables = t.tables;
    o.baselines = t.baselines;
    o
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let registry = EstimatorRegistry::default();
    let base = overrides(&cli.global);
    let config = cli.global.config.as_deref();
    match cli.command {
        Command::Ingest {
            inputs,
            backbone,
            params,
            dataset,
        } => {
            let cfg = ExperimentConfig::load(config, &base)?;
            let meta = MetaOverrides {
                backbone,
                params,
                dataset,
            };
            let report = cmd_ingest(&cfg, &inputs, &meta)?;
            for f in &report.files {
                println!("{}", f.output.display());
            }
        }
        Command::Validate { paths } => {
            let report = cmd_validate(&paths)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            if !report.ok {
                return Err(HarnessError::Runtime("validation found problems".into()));
            }
        }
        Command::Split {
            tables,
            k_folds,
            fractions,
        } => {
            let o = Overrides {
                k_folds,
                fractions,
                ..with_tables(base, tables)
            };
            let cfg = ExperimentConfig::load(config, &o)?;
            let report = cmd_split(&cfg, &registry)?;
            println!("{}", cfg.out_dir.join("split.json").display());
            for t in &report.tables {
                log::info!("{}: fold sizes {:?}", t.path.display(), t.fold_sizes);
            }
        }
        Command::Estimate {
            tables,
            estimators,
            budget,
        } => {
            let o = Overrides {
                estimators,
                budget,
                ..with_tables(base, tables)
            };
            let cfg = ExperimentConfig::load(config, &o)?;
            let (_, ranking) = cmd_estimate(&cfg, &registry)?;
            println!("{}", render_report(&serde_json::to_value(&ranking)?)?);
        }
        Command::Rank { scores, budget } => {
            let cfg = ExperimentConfig::load(config, &Overrides { budget, ..base })?;
            let ranking = cmd_rank(&cfg, &scores)?;
            println!("{}", render_report(&serde_json::to_value(&ranking)?)?);
        }
        Command::Probe {
            tables,
            k_folds,
            lambda,
        } => {
            let o = Overrides {
                k_folds,
                lambda,
                ..with_tables(base, tables)
            };
            let cfg = ExperimentConfig::load(config, &o)?;
            let report = cmd_probe_eval(&cfg, &registry)?;
            println!("{}", render_report(&serde_json::to_value(&report)?)?);
        }
        Command::Sweep {
            tables,
            k_folds,
            fractions,
            lambda,
        } => {
            let o = Overrides {
                k_folds,
                fractions,
                lambda,
                ..with_tables(base, tables)
            };
            let cfg = ExperimentConfig::load(config, &o)?;
            let report = cmd_sweep(&cfg, &registry)?;
            println!("{}", render_report(&serde_json::to_value(&report)?)?);
        }
        Command::Ssl { steps } => {
            let cfg = ExperimentConfig::load(config, &Overrides { steps, ..base })?;
            cfg.validate(&registry)?;
            let report = cmd_ssl(&cfg)?;
            println!("final collapse entropy: {:.6}", report.final_entropy);
        }
        Command::Report { report } => {
            let text = std::fs::read_to_string(&report)
                .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", report.display())))?;
            let value: serde_json::Value = serde_json::from_str(&text)?;
            print!("{}", render_report(&value)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
