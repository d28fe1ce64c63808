use std::path::PathBuf;
use std::process::ExitCode;

use artps_cli::{cmd_eval, cmd_run, cmd_serve, cmd_synth, cmd_train, Regularization, RunArgs, ServeArgs, TrainArgs};
use clap::{ArgGroup, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "artps", version, about = "Explainable target prioritization for surface imagery")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline on one frame.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        image: PathBuf,
        /// ARD1 or 16-bit PNG depth at the working resolution.
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Curiosity model written by `train`.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Leave timings out of the report so identical runs give identical bytes.
        #[arg(long)]
        no_timings: bool,
    },
    /// Score run outputs against synthetic ground truth.
    Eval {
        #[arg(long)]
        reports: PathBuf,
        /// A synth truth.json, or a manifest {"frames": [{"run", "truth"}]}.
        #[arg(long)]
        truth: PathBuf,
        /// Write features.json and labels.json for `train` here.
        #[arg(long)]
        export: Option<PathBuf>,
        /// Write the metrics here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit curiosity weights from labeled region features.
    #[command(group(ArgGroup::new("reg").args(["lambda", "sweep"])))]
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        lambda: f64,
        /// Log-spaced lambda sweep `a:b:n`.
        #[arg(long)]
        sweep: Option<String>,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        val_fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic scene bundle.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve the HTTP API for the operator console.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8787")]
        addr: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Frame store directory.
        #[arg(long, default_value = "artps-frames")]
        store: PathBuf,
    },
    /// Print the JSON schema of the pipeline config.
    Schema,
}

fn print_json(value: &impl serde::Serialize, out: Option<&PathBuf>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            image,
            depth,
            model,
            out,
            no_timings,
        } => {
            let report = cmd_run(&RunArgs {
                config,
                image,
                depth,
                model,
                out: out.clone(),
                no_timings,
            })?;
            println!("{} region(s); report written to {}", report.regions.len(), out.join("report.json").display());
        }
        Command::Eval {
            reports,
            truth,
            export,
            out,
        } => {
            let summary = cmd_eval(&reports, &truth, export.as_deref())?;
            for w in &summary.warnings {
                log::warn!("{w}");
            }
            print_json(&summary, out.as_ref())?;
        }
        Command::Train {
            features,
            labels,
            lambda,
            sweep,
            out,
            val_fraction,
            seed,
        } => {
            let outcome = cmd_train(&TrainArgs {
                features,
                labels,
                regularization: match sweep {
                    Some(s) => Regularization::Sweep(s),
                    None => Regularization::Fixed(lambda),
                },
                out,
                val_fraction,
                seed,
            })?;
            print_json(&outcome, None)?;
        }
        Command::Synth { spec, out } => {
            let bundle = cmd_synth(&spec, &out)?;
            println!(
                "{} target(s), {} distractor(s) written to {}",
                bundle.truth.regions.len(),
                bundle.truth.distractors.len(),
                out.display()
            );
        }
        Command::Serve { addr, config, store } => {
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(cmd_serve(&ServeArgs { addr, config, store }, async {
                let _ = tokio::signal::ctrl_c().await;
            }))?;
        }
        Command::Schema => println!("{}", artps_core::PipelineConfig::json_schema()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ARTPS_LOG", "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
