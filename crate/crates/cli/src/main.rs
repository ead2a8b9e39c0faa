use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use shuttlenet::fusion::AblationFlags;
use shuttlenet::harness::{
    ablate, evaluate, forecast, format_report, load_model, parse_observed, save_model, train,
    ForecastRequest, TrainConfig,
};
use shuttlenet::numerics::Rng;
use shuttlenet::rally_data::{
    gen_synthetic, load_rallies_from_path, split_dataset, write_rallies_to_path, Dataset,
    SynthConfig,
};

#[derive(Parser)]
#[command(
    name = "shuttlenet",
    version,
    about = "Stroke forecasting for badminton rallies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic rally CSV
    Synth {
        /// TOML generator config; built-in defaults when omitted
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write it to a file
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        out: PathBuf,
        /// Optional CSV of per-epoch losses
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Best-of-K evaluation of a trained model
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        model: PathBuf,
        /// Defaults to the value the model was trained with
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample continuations of a partial rally
    Forecast {
        #[arg(long)]
        model: PathBuf,
        /// Rally CSV holding the observed strokes of one rally
        #[arg(long)]
        observed: PathBuf,
        /// Receiver, needed when only the serve has been observed
        #[arg(long)]
        opponent: Option<String>,
        #[arg(long, default_value_t = 1)]
        horizon: usize,
        #[arg(long, default_value_t = 10)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON output path
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate every ablation variant
    Ablate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Comma-separated training seeds
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
        seeds: Vec<u64>,
        /// Restrict to these variant names (comma-separated)
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Also write the rows as JSON
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Rally CSV
    #[arg(long)]
    data: PathBuf,
    /// Per-match train fraction; `train` uses the first part, `evaluate` the rest
    #[arg(long)]
    split: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    ff_dim: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    tau: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_rally: bool,
    #[arg(long)]
    no_a: bool,
    #[arg(long)]
    no_b: bool,
    #[arg(long)]
    no_alpha: bool,
    #[arg(long)]
    no_beta: bool,
    #[arg(long)]
    no_taa: bool,
}

impl TrainArgs {
    fn config(&self) -> Result<TrainConfig> {
        let mut c = TrainConfig::default();
        macro_rules! set {
            ($($f:ident => $g:ident),*) => { $(if let Some(v) = self.$f { c.$g = v; })* };
        }
        set!(d => d, heads => heads, ff_dim => ff_dim, max_len => max_len, dropout => dropout,
             batch_size => batch_size, epochs => epochs, lr => learning_rate, tau => tau, k => k, seed => seed);
        c.flags = AblationFlags {
            use_rally: !self.no_rally,
            use_a: !self.no_a,
            use_b: !self.no_b,
            use_alpha: !self.no_alpha,
            use_beta: !self.no_beta,
            use_taa: !self.no_taa,
        };
        c.validate()?;
        Ok(c)
    }
}

enum Part {
    Train,
    Test,
}

fn load(args: &DataArgs, part: Part) -> Result<Dataset> {
    let report = load_rallies_from_path(&args.data)
        .with_context(|| format!("reading {}", args.data.display()))?;
    for r in &report.rejected {
        eprintln!("warning: {r}");
    }
    let data = report.dataset;
    if data.rallies.is_empty() {
        bail!("{} contains no valid rallies", args.data.display());
    }
    let Some(ratio) = args.split else {
        return Ok(data);
    };
    let (train, test) = split_dataset(&data, ratio)?;
    Ok(match part {
        Part::Train => train,
        Part::Test => test,
    })
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { config, seed, out } => {
            let cfg = match config {
                Some(p) => SynthConfig::from_toml_str(
                    &fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?,
                )?,
                None => SynthConfig::default(),
            };
            let data = gen_synthetic(&cfg, &mut Rng::new(seed))?;
            write_rallies_to_path(&data, &out)?;
            println!(
                "wrote {} rallies ({} strokes) to {}",
                data.rallies.len(),
                data.stroke_count(),
                out.display()
            );
        }
        Command::Train {
            data,
            train: args,
            out,
            history,
        } => {
            let cfg = args.config()?;
            let set = load(&data, Part::Train)?;
            let outcome = train(&set, &cfg)?;
            save_model(&out, &outcome.model, &cfg)?;
            if let Some(path) = history {
                let mut s = String::from("epoch,loss,type_loss,area_loss\n");
                for e in &outcome.history {
                    s.push_str(&format!(
                        "{},{},{},{}\n",
                        e.epoch, e.loss, e.type_loss, e.area_loss
                    ));
                }
                write(&path, &s)?;
            }
            if let Some(last) = outcome.history.last() {
                println!("final epoch {}: loss {:.6}", last.epoch, last.loss);
            }
            println!("model written to {}", out.display());
        }
        Command::Evaluate {
            data,
            model,
            tau,
            k,
            seed,
        } => {
            let (model, cfg) = load_model(&model)?;
            let tau = tau.unwrap_or(cfg.tau);
            let set = load(&data, Part::Test)?;
            let m = evaluate(&model, &set, tau, k, seed)?.metrics;
            println!(
                "Evaluated {} rallies ({} strokes), tau = {tau}, best of {k}",
                m.rallies, m.strokes
            );
            println!("  CE  {:.6}\n  MSE {:.6}\n  MAE {:.6}", m.ce, m.mse, m.mae);
            println!("ce={}", m.ce);
            println!("mse={}", m.mse);
            println!("mae={}", m.mae);
            println!("strokes={}", m.strokes);
            println!("rallies={}", m.rallies);
        }
        Command::Forecast {
            model,
            observed,
            opponent,
            horizon,
            rollouts,
            seed,
            out,
        } => {
            let (model, _) = load_model(&model)?;
            let src = fs::File::open(&observed)
                .with_context(|| format!("reading {}", observed.display()))?;
            let req = ForecastRequest {
                observed: parse_observed(src)?,
                opponent,
                horizon,
                rollouts,
                seed,
            };
            let result = forecast(&model, &req)?;
            write(&out, &serde_json::to_string_pretty(&result)?)?;
            println!(
                "wrote {rollouts} rollouts of {horizon} steps to {}",
                out.display()
            );
        }
        Command::Ablate {
            data,
            train: args,
            seeds,
            variants,
            json,
        } => {
            let cfg = args.config()?;
            let Some(ratio) = data.split else {
                bail!("ablate needs --split to hold out a test set");
            };
            let report = load_rallies_from_path(&data.data)?;
            for r in &report.rejected {
                eprintln!("warning: {r}");
            }
            let (train_set, test_set) = split_dataset(&report.dataset, ratio)?;
            let all: Vec<(String, AblationFlags)> = AblationFlags::variants()
                .into_iter()
                .map(|(n, f)| (n.to_string(), f))
                .collect();
            let chosen: Vec<_> = if variants.is_empty() {
                all
            } else {
                for v in &variants {
                    if !all.iter().any(|(n, _)| n == v) {
                        let names: Vec<&str> = all.iter().map(|(n, _)| n.as_str()).collect();
                        bail!("unknown variant `{v}`; choose from: {}", names.join(", "));
                    }
                }
                all.into_iter()
                    .filter(|(n, _)| variants.contains(n))
                    .collect()
            };
            let rows = ablate(&train_set, &test_set, &cfg, &chosen, &seeds)?;
            print!("{}", format_report(&rows));
            if let Some(path) = json {
                write(&path, &serde_json::to_string_pretty(&rows)?)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
