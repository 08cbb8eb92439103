use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fl_lrbc::pipeline::{
    cmd_evaluate, cmd_gen_synth, cmd_train, DataConfig, EvaluateArgs, Mode, Overrides, RunConfig,
};
use fl_lrbc::synth::SynthSpec;

#[derive(Parser)]
#[command(
    name = "fl-lrbc",
    version,
    about = "Federated bound-constrained logistic regression scorecards"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit WOE, screen, train and write the report into the output directory.
    Train(TrainArgs),
    /// Score data with a trained model directory.
    Evaluate(EvalArgs),
    /// Write a synthetic two-party data set and a run.toml.
    GenSynth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// federated, centralized or host-only
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    key_bits: Option<u64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory holding weights.json, woe_host.json and woe_guest.json.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    host_csv: PathBuf,
    #[arg(long)]
    host_schema: PathBuf,
    #[arg(long)]
    guest_csv: PathBuf,
    #[arg(long)]
    guest_schema: PathBuf,
    /// File with one id per line; only those rows are scored.
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Suffix of the written files (roc_<name>.txt, ks_<name>.txt, <name>.json).
    #[arg(long, default_value = "eval")]
    name: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    host_informative: Option<usize>,
    #[arg(long)]
    guest_informative: Option<usize>,
    #[arg(long)]
    noise: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => {
            let mut config = RunConfig::load(&a.config)?;
            config.apply(&Overrides {
                mode: a.mode,
                seed: a.seed,
                out: a.out,
                key_bits: a.key_bits,
                max_iter: a.max_iter,
                eta: a.eta,
            })?;
            let run = cmd_train(&config)?;
            print!("{}", run.report.to_text(config.woe.iv_threshold));
            println!(
                "wrote {} files to {}",
                run.files.len(),
                config.output.dir.display()
            );
        }
        Command::Evaluate(a) => {
            let report = cmd_evaluate(&EvaluateArgs {
                model_dir: a.model,
                data: DataConfig {
                    host_csv: a.host_csv,
                    host_schema: a.host_schema,
                    guest_csv: a.guest_csv,
                    guest_schema: a.guest_schema,
                },
                ids: a.ids,
                out: a.out,
                name: a.name,
            })?;
            println!(
                "rows {} AUC {:.4} KS {:.4}",
                report.rows, report.auc, report.ks
            );
        }
        Command::GenSynth(a) => {
            let d = SynthSpec::default();
            let spec = SynthSpec {
                n_samples: a.n_samples.unwrap_or(d.n_samples),
                host_informative: a.host_informative.unwrap_or(d.host_informative),
                guest_informative: a.guest_informative.unwrap_or(d.guest_informative),
                noise_features: a.noise.unwrap_or(d.noise_features),
                seed: a.seed.unwrap_or(d.seed),
                ..d
            };
            let files = cmd_gen_synth(&spec, &a.out)?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
