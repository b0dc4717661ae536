//! `tod-prime`: run few-shot priming experiments, score prediction files and
//! convert upstream corpora.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 backend error,
//! 3 data error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tod_priming::convert::{convert_path, ConvertError, Source};
use tod_priming::data::load_records;
use tod_priming::experiment::{
    gold_script, parse_predictions, run_experiment, score_predictions, BackendSpec, ExperimentConfig,
    ExperimentError,
};
use tod_priming::model::TaskKind;

#[derive(Debug, Parser)]
#[command(name = "tod-prime", version, about = "Few-shot LM priming for task-oriented dialogue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment described by a JSON config.
    Run(RunArgs),
    /// Score a predictions file against gold records.
    Score {
        #[arg(long)]
        task: TaskKind,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
    /// Convert an upstream corpus to canonical JSONL.
    Convert {
        #[arg(long = "from")]
        source: Source,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Task to extract (multiwoz: dst or act; snips: slot_filling or intent).
        #[arg(long)]
        task: Option<TaskKind>,
    },
    /// Write scripted-backend records answering every prompt of a config
    /// with the gold continuation.
    GoldScript {
        #[command(flatten)]
        overrides: RunArgs,
        /// Output JSONL path.
        #[arg(long)]
        script: PathBuf,
    },
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, conflicts_with = "backend")]
    backend_url: Option<String>,
    /// `scripted:PATH` or an http(s) URL.
    #[arg(long)]
    backend: Option<BackendSpec>,
    #[arg(long, value_delimiter = ',')]
    shots: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    negatives_per_positive: Option<usize>,
    #[arg(long)]
    max_concurrency: Option<usize>,
    #[arg(long)]
    context_limit: Option<usize>,
    #[arg(long)]
    reserve: Option<usize>,
    #[arg(long)]
    max_shots: Option<usize>,
    #[arg(long)]
    want_logprobs: Option<bool>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut c = ExperimentConfig::load(&self.config)?;
        if let Some(url) = &self.backend_url {
            c.backend = Some(BackendSpec::Url(url.clone()));
        }
        if let Some(b) = &self.backend {
            c.backend = Some(b.clone());
        }
        if let Some(v) = &self.shots {
            c.shots = v.clone();
        }
        if let Some(v) = &self.seeds {
            c.seeds = v.clone();
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        if let Some(v) = &self.model {
            c.model = v.clone();
        }
        if let Some(v) = self.negatives_per_positive {
            c.negatives_per_positive = v;
        }
        if let Some(v) = self.max_concurrency {
            c.max_concurrency = Some(v);
        }
        if let Some(v) = self.context_limit {
            c.budget.context_limit = Some(v);
        }
        if let Some(v) = self.reserve {
            c.budget.reserve = Some(v);
        }
        if let Some(v) = self.max_shots {
            c.budget.max_shots = Some(v);
        }
        if let Some(v) = self.want_logprobs {
            c.want_logprobs = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn run(args: &RunArgs) -> Result<(), ExperimentError> {
    let config = args.config()?;
    let output = run_experiment(&config)?;
    for r in &output.reports {
        let metrics: Vec<String> = r.metrics.iter().map(|(k, v)| format!("{k}={v:.4}")).collect();
        log::info!(
            "{} shots={} seed={} errors={} {}",
            r.domain.as_deref().unwrap_or("-"),
            r.shots.unwrap_or(0),
            r.seed.unwrap_or(0),
            r.errors,
            metrics.join(" ")
        );
    }
    print!("{}", output.files["table.md"]);
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, text).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn score(task: TaskKind, gold: &Path, pred: &Path) -> Result<(), ExperimentError> {
    let gold = load_records(gold, task).map_err(|e| ExperimentError::Data(format!("{}: {e}", gold.display())))?;
    let predictions = parse_predictions(&read(pred)?)?;
    let report = score_predictions(task, &gold, &predictions)?;
    println!("{}", report.to_json());
    Ok(())
}

fn convert(source: Source, input: &Path, out: &Path, task: Option<TaskKind>) -> Result<(), ExperimentError> {
    let conversion = convert_path(source, input, task).map_err(|e| match e {
        ConvertError::Unsupported(m) => ExperimentError::Config(m),
        ConvertError::Io { path, source } => ExperimentError::Io { path, source },
        other => ExperimentError::Data(other.to_string()),
    })?;
    if conversion.warnings > 0 {
        log::warn!("{} lossy fixes applied during conversion", conversion.warnings);
    }
    write(out, &conversion.to_jsonl())?;
    log::info!("wrote {} {} records to {}", conversion.records.len(), conversion.kind, out.display());
    Ok(())
}

fn write_gold_script(args: &RunArgs, script: &Path) -> Result<(), ExperimentError> {
    let config = args.config()?;
    let datasets = config.load_datasets()?;
    let records = gold_script(&config, &datasets)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).expect("records serialize"));
        text.push('\n');
    }
    write(script, &text)?;
    log::info!("wrote {} scripted completions to {}", records.len(), script.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Score { task, gold, pred } => score(*task, gold, pred),
        Command::Convert {
            source,
            input,
            out,
            task,
        } => convert(*source, input, out, *task),
        Command::GoldScript { overrides, script } => write_gold_script(overrides, script),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
