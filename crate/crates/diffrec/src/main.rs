use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use diffrec::decoding::PruningMode;
use diffrec::pipeline::{
    cmd_build_taxonomy, cmd_evaluate, cmd_recommend, cmd_sweep, cmd_synth, cmd_tokenize,
    cmd_train, CategoryMode, PipelineError, RunConfig,
};

/// Coarse-to-fine generative recommender: data synthesis, taxonomy coding,
/// masked-denoiser training, diffusion beam search, and evaluation.
#[derive(Parser)]
#[command(name = "diffrec", version)]
struct Cli {
    /// Run config file (JSON); omit to use defaults (then --seed is required)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the run seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override decoder beam size B (also sets expansion width unless given)
    #[arg(long, global = true)]
    beam_size: Option<usize>,
    /// Override decoder expansion width b
    #[arg(long, global = true)]
    expansion_width: Option<usize>,
    /// Override pruning mode: none | dedup | diversity_penalty
    #[arg(long, global = true)]
    pruning: Option<String>,
    /// Override tokens filled per step (n)
    #[arg(long, global = true)]
    tokens_per_step: Option<usize>,
    /// Override block size (m)
    #[arg(long, global = true)]
    block_size: Option<usize>,
    /// Override catalog constraint
    #[arg(long, global = true)]
    constrain_to_catalog: Option<bool>,
    /// Override score carrying: carry raw instead of penalized scores
    #[arg(long, global = true)]
    carry_raw_scores: Option<bool>,
    /// Override category mode: train_without | infer_without | with | given
    #[arg(long, global = true)]
    category_mode: Option<String>,
    /// Override training mask-probability lower bound
    #[arg(long, global = true)]
    p_mask: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic item catalog and interaction log
    Synth,
    /// Build the category tree with level codes from the item file
    BuildTaxonomy,
    /// Encode items into code-token form against the taxonomy
    Tokenize,
    /// Train the denoiser on the leave-one-out training split
    Train,
    /// Decode top-k recommendations for every test user
    Recommend,
    /// Score recommendations and write the metrics report
    Evaluate,
    /// Train/recommend/evaluate across one axis of values
    Sweep {
        /// One of: p_mask, beam_size, pruning, n, m, category_mode
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
}

fn effective_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).map_err(CliError::from)?,
        None => {
            let seed = cli.seed.ok_or(CliError::MissingKey("seed".into()))?;
            RunConfig::with_seed(seed, PathBuf::from("out"))
        }
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(b) = cli.beam_size {
        cfg.decoder.beam_size = b;
        if cli.expansion_width.is_none() {
            cfg.decoder.expansion_width = b;
        }
    }
    if let Some(b) = cli.expansion_width {
        cfg.decoder.expansion_width = b;
    }
    if let Some(p) = &cli.pruning {
        cfg.decoder.pruning = match p.as_str() {
            "none" => PruningMode::None,
            "dedup" => PruningMode::Dedup,
            "diversity_penalty" => PruningMode::DiversityPenalty,
            other => {
                return Err(CliError::Invalid(format!(
                    "unknown pruning mode '{other}' (expected none | dedup | diversity_penalty)"
                )))
            }
        };
    }
    if let Some(n) = cli.tokens_per_step {
        cfg.decoder.tokens_per_step = n;
    }
    if let Some(m) = cli.block_size {
        cfg.decoder.block_size = Some(m);
    }
    if let Some(v) = cli.constrain_to_catalog {
        cfg.decoder.constrain_to_catalog = v;
    }
    if let Some(v) = cli.carry_raw_scores {
        cfg.decoder.carry_raw_scores = v;
    }
    if let Some(mode) = &cli.category_mode {
        cfg.category_mode = mode.parse::<CategoryMode>().map_err(CliError::Invalid)?;
    }
    if let Some(p) = cli.p_mask {
        cfg.train.p_mask = p;
    }
    Ok(cfg)
}

enum CliError {
    MissingKey(String),
    Invalid(String),
    Pipeline(PipelineError),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if let PipelineError::Json { source, .. } = &e {
            let msg = source.to_string();
            if let Some(rest) = msg.strip_prefix("missing field `") {
                if let Some(key) = rest.split('`').next() {
                    return CliError::MissingKey(key.to_string());
                }
            }
        }
        CliError::Pipeline(e)
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let cfg = effective_config(cli)?;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg)?,
        Command::BuildTaxonomy => cmd_build_taxonomy(&cfg)?,
        Command::Tokenize => cmd_tokenize(&cfg)?,
        Command::Train => cmd_train(&cfg)?,
        Command::Recommend => cmd_recommend(&cfg)?,
        Command::Evaluate => {
            let report = cmd_evaluate(&cfg)?;
            println!(
                "{}",
                serde_json::to_string(&report).expect("serializable report")
            );
        }
        Command::Sweep { axis, values } => {
            let path = cmd_sweep(&cfg, axis, values)?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::MissingKey(key)) => {
            eprintln!("error: missing config key: {key}");
            ExitCode::from(2)
        }
        Err(CliError::Invalid(msg)) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::from(1)
        }
        Err(CliError::Pipeline(e)) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
