use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairint::metrics::GroupSource;
use fairint::Result;
use fairint_cli::commands::{
    cmd_eval, cmd_explain, cmd_probe, cmd_sweep, cmd_synth, cmd_train, load_config, DataArg,
    MetricOptions, ProbeData, SplitArg,
};
use fairint_cli::reports::{to_json, write_file};

/// Fair tabular classification: train, evaluate and inspect FairInt models.
#[derive(Parser)]
#[command(name = "fairint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct MetricArgs {
    /// Decision threshold for hard predictions.
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,
    /// Group membership used by the fairness metrics.
    #[arg(long, default_value = "true")]
    groups_from: GroupSource,
}

impl MetricArgs {
    fn options(&self) -> MetricOptions {
        MetricOptions {
            threshold: self.threshold,
            groups_from: self.groups_from,
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `train.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ModelDataArgs {
    /// Score the config's data source and split.
    #[arg(long, conflicts_with_all = ["data", "schema"], required_unless_present = "data")]
    config: Option<PathBuf>,
    /// Overrides `train.seed` of `--config`, which also seeds its split.
    #[arg(long, requires = "config")]
    seed: Option<u64>,
    /// Score every row of a CSV file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Schema of `--data`; defaults to the schema stored in the model.
    #[arg(long, requires = "data")]
    schema: Option<PathBuf>,
    /// Rows to score; `test` with `--config`, `all` with `--data`.
    #[arg(long, value_enum)]
    split: Option<SplitArg>,
}

impl ModelDataArgs {
    fn resolve(&self) -> Result<DataArg> {
        Ok(match (&self.config, &self.data) {
            (Some(c), _) => DataArg::Config(Box::new(load_config(c, self.seed)?)),
            (None, Some(d)) => DataArg::Csv {
                data: d.clone(),
                schema: self.schema.clone(),
            },
            (None, None) => unreachable!("clap requires one"),
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write model.bin, history.jsonl, report.json and
    /// attention.json to the output directory.
    Train {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[command(flatten)]
        metrics: MetricArgs,
    },
    /// Fairness report of a trained model, as JSON.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: ModelDataArgs,
        #[command(flatten)]
        metrics: MetricArgs,
        /// Write the report here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Train one model per `[sweep] grid` point and write tradeoff.csv.
    Sweep {
        #[command(flatten)]
        experiment: ExperimentArgs,
        #[command(flatten)]
        metrics: MetricArgs,
    },
    /// Per-feature attention statistics of a trained model, as JSON.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: ModelDataArgs,
        /// Write the statistics here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Linear probe of how well the non-sensitive features predict the
    /// sensitive attribute, as JSON.
    Probe {
        #[arg(long, conflicts_with_all = ["data", "schema"], required_unless_present = "data")]
        config: Option<PathBuf>,
        #[arg(long, requires = "schema")]
        data: Option<PathBuf>,
        #[arg(long, requires = "data")]
        schema: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Write a synthetic biased dataset and its schema (`<out stem>.schema.toml`).
    Synth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long)]
        rho: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn emit(json: String, output: Option<&PathBuf>) -> Result<()> {
    match output {
        Some(path) => write_file(path, json),
        None => {
            print!("{json}");
            Ok(())
        }
    }
}

fn experiment(args: &ExperimentArgs) -> Result<fairint_cli::config::ExperimentConfig> {
    let mut cfg = load_config(&args.config, args.seed)?;
    if let Some(dir) = &args.output_dir {
        cfg.output_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            experiment: e,
            metrics,
        } => {
            let out = cmd_train(&experiment(&e)?, metrics.options())?;
            println!(
                "trained {} epochs (best {}, {:?}); test auc={} ddp={} deo={}; wrote {}",
                out.history.epochs.len(),
                out.history.best_epoch.map_or("-".into(), |b| b.to_string()),
                out.history.stopping_reason,
                out.report.auc,
                out.report.ddp,
                out.report.deo,
                out.dir.display()
            );
        }
        Command::Eval {
            model,
            data,
            metrics,
            output,
        } => {
            let report = cmd_eval(&model, &data.resolve()?, data.split, metrics.options())?;
            emit(to_json(&report), output.as_ref())?;
        }
        Command::Sweep {
            experiment: e,
            metrics,
        } => {
            let out = cmd_sweep(&experiment(&e)?, metrics.options())?;
            println!("{} points; wrote {}", out.points.len(), out.path.display());
        }
        Command::Explain {
            model,
            data,
            output,
        } => {
            let stats = cmd_explain(&model, &data.resolve()?, data.split)?;
            emit(to_json(&stats), output.as_ref())?;
        }
        Command::Probe {
            config,
            data,
            schema,
            output,
        } => {
            let source = match (config, data, schema) {
                (Some(c), _, _) => ProbeData::Config(Box::new(load_config(&c, None)?)),
                (None, Some(data), Some(schema)) => ProbeData::Csv { data, schema },
                _ => unreachable!("clap requires a source"),
            };
            emit(to_json(&cmd_probe(&source)?), output.as_ref())?;
        }
        Command::Synth {
            n,
            beta,
            rho,
            seed,
            out,
        } => {
            let (csv, schema) = cmd_synth(n, beta, rho, seed, &out)?;
            println!("wrote {} and {}", csv.display(), schema.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
