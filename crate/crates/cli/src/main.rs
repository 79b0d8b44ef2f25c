use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use deu::nn::ActivationKind;
use deu_cli::commands::{self, InspectRequest, Split};
use deu_cli::{Checkpoint, CliError, CliResult, RawConfig};

#[derive(Parser)]
#[command(
    name = "deu",
    version,
    about = "Train and inspect differential equation unit networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network, writing JSON-lines metrics and a JSON checkpoint.
    Train {
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Evaluate a checkpoint in inference mode.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[command(flatten)]
        data: DataFlags,
    },
    /// Sample one neuron's activation curve as CSV.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index among the layers that have an activation.
        #[arg(long, default_value_t = 0)]
        layer: usize,
        #[arg(long)]
        neuron: usize,
        #[arg(long, default_value_t = -3.0, allow_negative_numbers = true)]
        t_min: f64,
        #[arg(long, default_value_t = 3.0, allow_negative_numbers = true)]
        t_max: f64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model per (activation kind, seed) and tabulate test accuracy.
    Compare {
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long, value_delimiter = ',', default_value = "deu,relu,prelu,swish")]
        kinds: Vec<ActivationKind>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        /// CSV copy of the table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the closed-form kernel against numerical oracles.
    VerifyKernel {
        /// Draws per (structural, regime) pair.
        #[arg(long, default_value_t = 1000)]
        draws: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Default)]
struct DataFlags {
    /// idx, csv, moons, circles or spirals.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<String>,
    #[arg(long)]
    train_csv: Option<String>,
    #[arg(long)]
    test_csv: Option<String>,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    n_train: Option<String>,
    #[arg(long)]
    n_test: Option<String>,
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,
}

#[derive(Args)]
struct TrainFlags {
    /// Flat `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    data: DataFlags,
    /// Layer widths, e.g. 784-256-10.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr_weights: Option<String>,
    #[arg(long)]
    lr_deu_scale: Option<String>,
    #[arg(long)]
    epsilon: Option<String>,
    #[arg(long)]
    exp_arg_clamp: Option<String>,
    #[arg(long)]
    output_clamp: Option<String>,
    /// A positive norm, or `none`.
    #[arg(long)]
    clip_deu_grad_norm: Option<String>,
    #[arg(long)]
    batch_norm: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    checkpoint_out: Option<String>,
    #[arg(long)]
    metrics_out: Option<String>,
    /// Per-epoch wall time, JSON lines.
    #[arg(long)]
    timing_out: Option<String>,
}

impl DataFlags {
    fn fill(&self, raw: &mut RawConfig) {
        let pairs = [
            ("dataset", &self.dataset),
            ("data_dir", &self.data_dir),
            ("train_csv", &self.train_csv),
            ("test_csv", &self.test_csv),
            ("label_column", &self.label_column),
            ("n_train", &self.n_train),
            ("n_test", &self.n_test),
            ("noise", &self.noise),
            ("data_seed", &self.data_seed),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                raw.set(k, v.clone());
            }
        }
    }
}

impl TrainFlags {
    fn resolve(&self) -> CliResult<RawConfig> {
        let file = match &self.config {
            Some(p) => RawConfig::parse_file(p)?,
            None => RawConfig::default(),
        };
        let mut flags = RawConfig::default();
        self.data.fill(&mut flags);
        let pairs = [
            ("arch", &self.arch),
            ("activation", &self.activation),
            ("epochs", &self.epochs),
            ("batch_size", &self.batch_size),
            ("lr_weights", &self.lr_weights),
            ("lr_deu_scale", &self.lr_deu_scale),
            ("epsilon", &self.epsilon),
            ("exp_arg_clamp", &self.exp_arg_clamp),
            ("output_clamp", &self.output_clamp),
            ("clip_deu_grad_norm", &self.clip_deu_grad_norm),
            ("batch_norm", &self.batch_norm),
            ("seed", &self.seed),
            ("checkpoint_out", &self.checkpoint_out),
            ("metrics_out", &self.metrics_out),
            ("timing_out", &self.timing_out),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                flags.set(k, v.clone());
            }
        }
        Ok(file.overlay(&flags))
    }
}

fn write_out(path: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::io(p, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train { flags } => {
            let settings = flags.resolve()?.settings()?;
            let out = commands::run_train(&settings, &mut ())?;
            let last = out.records.last().expect("epoch 0 is always recorded");
            println!(
                "epoch {} test_acc {:.4} test_loss {}",
                last.epoch, last.test_acc, last.test_loss
            );
        }
        Command::Eval {
            checkpoint,
            split,
            data,
        } => {
            let mut raw = RawConfig::default();
            data.fill(&mut raw);
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let e = commands::run_eval(&checkpoint, &raw.dataset()?, split)?;
            print!("{}", commands::format_eval(&e));
        }
        Command::Inspect {
            checkpoint,
            layer,
            neuron,
            t_min,
            t_max,
            samples,
            out,
        } => {
            let net = Checkpoint::load(&checkpoint)?.to_network()?;
            let req = InspectRequest {
                layer,
                neuron,
                t_min,
                t_max,
                samples,
            };
            write_out(out.as_ref(), &commands::inspect(&net, &req)?)?;
        }
        Command::Compare {
            flags,
            kinds,
            seeds,
            out,
        } => {
            let mut raw = flags.resolve()?;
            if raw.get("activation").is_none() {
                raw.set("activation", "deu");
            }
            let table = commands::run_compare(&raw.settings()?, &kinds, &seeds)?;
            print!("{}", table.to_text());
            if let Some(p) = &out {
                write_out(Some(p), &table.to_csv())?;
            }
        }
        Command::VerifyKernel { draws, seed } => {
            let report = commands::run_verify(draws, seed)?;
            println!("{report}");
            if !report.passed() {
                return Err(CliError::new(
                    "verification_failed",
                    "kernel verification failed",
                ));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::new("usage", first).to_json_line());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::FAILURE
        }
    }
}
