use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use triplet_meta::oracle::OracleKind;
use triplet_meta::pipeline::{parse_k_range, Overrides, RunConfig, Runner, Stage};
use triplet_meta::{Error, ErrorKind};

#[derive(Parser, Debug)]
#[command(name = "triplet-meta", version, about = "Triplet embeddings and subgroup meta-analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Parse and validate the dataset
    Ingest,
    /// Build the triplet pool and the retained subsample
    Triplets,
    /// Train the embedding
    Embed,
    /// k-means and elbow curve
    Cluster,
    /// Subgroup random-effects meta-analysis
    Meta,
    /// Seed/λ/d/k robustness grid
    Sensitivity,
    /// All stages
    Run,
    /// Assemble report.json
    Report,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OracleArg {
    Llm,
    Gower,
}

#[derive(Args, Debug)]
struct Flags {
    /// Run configuration (TOML)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    lambda: Option<u32>,
    /// Embedding dimension (sets budget and training together)
    #[arg(long, global = true)]
    dim: Option<usize>,
    /// Explicit triplet budget replacing the formula
    #[arg(long, global = true)]
    budget: Option<usize>,
    #[arg(long, global = true)]
    margin: Option<f64>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    k: Option<usize>,
    /// Elbow range, e.g. 1-10
    #[arg(long, global = true)]
    k_range: Option<String>,
    #[arg(long, global = true, value_enum)]
    oracle: Option<OracleArg>,
    #[arg(long, global = true)]
    llm_endpoint: Option<String>,
    #[arg(long, global = true)]
    llm_model: Option<String>,
    #[arg(long, global = true)]
    prompt_template: Option<PathBuf>,
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

impl Flags {
    fn overrides(&self) -> Result<Overrides, Error> {
        Ok(Overrides {
            seed: self.seed,
            lambda: self.lambda,
            dim: self.dim,
            budget: self.budget,
            margin: self.margin,
            learning_rate: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            k: self.k,
            k_range: self.k_range.as_deref().map(parse_k_range).transpose()?,
            oracle: self.oracle.map(|o| match o {
                OracleArg::Llm => OracleKind::Llm,
                OracleArg::Gower => OracleKind::Gower,
            }),
            llm_endpoint: self.llm_endpoint.clone(),
            llm_model: self.llm_model.clone(),
            prompt_template: self.prompt_template.clone(),
            cache_dir: self.cache_dir.clone(),
            out: self.out.clone(),
        })
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    let one_line = message.split_whitespace().collect::<Vec<_>>().join(" ");
    eprintln!("{}", json!({ "error": { "kind": kind, "message": one_line } }));
    ExitCode::from(code)
}

fn run(cli: &Cli) -> Result<serde_json::Value, Error> {
    let path = cli
        .flags
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config <path> is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    cli.flags.overrides()?.apply(&mut cfg);
    let mut runner = Runner::new(cfg)?;
    let manifest = match cli.command {
        Command::Run => runner.run_all()?,
        Command::Ingest => runner.run_stage(Stage::Ingest)?,
        Command::Triplets => runner.run_stage(Stage::Triplets)?,
        Command::Embed => runner.run_stage(Stage::Embed)?,
        Command::Cluster => runner.run_stage(Stage::Cluster)?,
        Command::Meta => runner.run_stage(Stage::Meta)?,
        Command::Sensitivity => runner.run_stage(Stage::Sensitivity)?,
        Command::Report => runner.run_stage(Stage::Report)?,
    };
    let stages: Vec<_> = manifest
        .stages
        .iter()
        .map(|s| json!({ "name": s.name, "status": s.status, "duration_ms": s.duration_ms }))
        .collect();
    Ok(json!({ "out": runner.out_dir(), "stages": stages }))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("usage error").trim_start_matches("error: ");
            return fail("usage", first, 2);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let code = if e.kind() == ErrorKind::Config { 2 } else { 1 };
            fail(e.kind().as_str(), &e.to_string(), code)
        }
    }
}
