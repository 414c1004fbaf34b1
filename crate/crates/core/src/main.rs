use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use relsynth::pipeline::{cmd_end2end, cmd_evaluate, cmd_sample, cmd_train, RunConfig};
use relsynth::schema::write_database;
use relsynth::{toy, Error, Result};

#[derive(Parser)]
#[command(name = "relsynth", version, about = "Synthesize relational databases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the root-table scale used when sampling.
    #[arg(long)]
    scale: Option<f64>,
    /// Overrides the number of message-passing hops.
    #[arg(long = "k-hops")]
    k_hops: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint.
    Train(RunArgs),
    /// Sample a synthetic database from a checkpoint.
    Sample(RunArgs),
    /// Compare the real and synthetic databases.
    Evaluate(RunArgs),
    /// Train, sample and evaluate.
    End2end(RunArgs),
    /// Write a bundled toy database with its schema and a run configuration.
    Toy {
        /// household, bank or reviews.
        name: String,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.scale {
        cfg.scale = s;
    }
    if let Some(k) = args.k_hops {
        cfg.diffusion.k_hops = k;
    }
    Ok(cfg)
}

fn write_toy(name: &str, out: &std::path::Path, seed: u64) -> Result<()> {
    let db = match name {
        "household" => toy::household_person(seed, 200, &[1, 2, 3, 4]),
        "bank" => toy::bank_chain(seed, 40, 5, 5),
        "reviews" => toy::reviews(seed, 100, 40, 600),
        other => return Err(Error::Usage(format!("unknown toy database `{other}`"))),
    };
    let data = out.join("data");
    write_database(&db, &data)?;
    let schema_path = out.join("schema.json");
    std::fs::write(&schema_path, db.schema().to_json()).map_err(|e| Error::Usage(format!("{e}")))?;
    let mut cfg = RunConfig::new("schema.json", "data", "out");
    cfg.seed = seed;
    cfg.diffusion.timesteps = 1000;
    cfg.diffusion.train_steps = 2000;
    cfg.diffusion.batch_size = 128;
    cfg.diffusion.hidden = 64;
    cfg.diffusion.head_layers = vec![128, 128];
    let text = serde_json::to_string_pretty(&cfg)?;
    std::fs::write(out.join("config.json"), text).map_err(|e| Error::Usage(format!("{e}")))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = load(&a)?;
            cmd_train(&cfg)?;
            println!("checkpoint written to {}", cfg.checkpoint_path().display());
        }
        Command::Sample(a) => {
            let cfg = load(&a)?;
            let db = cmd_sample(&cfg)?;
            for (table, n) in db.row_counts() {
                println!("{table}: {n} rows");
            }
        }
        Command::Evaluate(a) => print!("{}", cmd_evaluate(&load(&a)?)?.to_text()),
        Command::End2end(a) => print!("{}", cmd_end2end(&load(&a)?)?.to_text()),
        Command::Toy { name, out, seed } => write_toy(&name, &out, seed)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
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
