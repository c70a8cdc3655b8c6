//! `storygraph`: extract knowledge graphs from user-story backlogs, evaluate
//! them against annotated ground truth and load them into Neo4j.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use storygraph::evaluation::{
    CompareOptions, ComparisonMode, Embedder, EvalOptions, HttpEmbedder, OneHotEmbedder,
};
use storygraph::extraction::backend::{Provider, RetryPolicy};
use storygraph::extraction::{BackendKind, ExtractorConfig};
use storygraph::sink::{SinkConfig, DEFAULT_ID_LENGTH_CAP};
use storygraph::workflow::{
    run_evaluate, run_extract, run_load, EvaluateOptions, ExtractOptions, LoadOptions,
    WorkflowError, BASELINE_DIR,
};

#[derive(Parser)]
#[command(name = "storygraph", version, about = "User-story knowledge-graph experiments")]
struct Cli {
    /// Experiment root holding pos_baseline/, extracted-user-stories/ and evaluation/.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract a graph per story for every backlog in the input folder.
    Extract(ExtractArgs),
    /// Score an extraction against the ground truth.
    Evaluate(EvaluateArgs),
    /// Rebuild graph documents from an extraction and store them.
    Load(LoadArgs),
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    experiment: String,
    #[arg(long, default_value = "rule-based")]
    backend: BackendKind,
    #[arg(long, default_value = "")]
    model: String,
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Defaults to <root>/pos_baseline.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    /// Chat endpoint URL, e.g. https://api.openai.com/v1/chat/completions.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value = "openai")]
    provider: Provider,
    /// The model supports function calling.
    #[arg(long)]
    function_calls: bool,
    /// Environment variable holding the API key.
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    /// Ask the model once more when its answer cannot be parsed.
    #[arg(long)]
    reask: bool,
    /// Recorded responses for the replay-fixture backend.
    #[arg(long)]
    fixture: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EmbedderKind {
    OneHot,
    Http,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    experiment: String,
    /// Defaults to <root>/pos_baseline.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Extraction folder; defaults to <root>/extracted-user-stories/<experiment>.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Treat singular and plural as equal in relaxed mode.
    #[arg(long)]
    fold_plurals: bool,
    /// Inclusive matches whole tokens only.
    #[arg(long)]
    token_boundary: bool,
    #[arg(long)]
    no_bertscore: bool,
    #[arg(long, value_enum, default_value = "one-hot")]
    embedder: EmbedderKind,
    #[arg(long)]
    embed_endpoint: Option<String>,
    #[arg(long, default_value = "text-embedding-3-small")]
    embed_model: String,
    #[arg(long, default_value = "openai")]
    embed_provider: Provider,
    #[arg(long, default_value = "OPENAI_API_KEY")]
    api_key_env: String,
}

#[derive(Args)]
struct LoadArgs {
    #[arg(long)]
    experiment: String,
    /// Extraction folder; defaults to <root>/extracted-user-stories/<experiment>.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Write graph.cypher instead of connecting to the database.
    #[arg(long)]
    dry_run: bool,
    #[arg(long, default_value_t = DEFAULT_ID_LENGTH_CAP)]
    id_cap: usize,
}

fn extract(root: PathBuf, a: ExtractArgs) -> Result<(), WorkflowError> {
    let config = ExtractorConfig {
        backend: a.backend,
        endpoint: a.endpoint,
        provider: a.provider,
        model_name: a.model,
        temperature: a.temperature,
        supports_function_calls: a.function_calls,
        auth_token: None,
        api_key_env: Some(a.api_key_env),
        request_timeout_secs: a.timeout,
        max_retries: a.max_retries,
        reask_on_parse_error: a.reask,
        fixture: a.fixture,
        concurrency: a.concurrency,
        ..ExtractorConfig::default()
    };
    let opts = ExtractOptions {
        input_dir: a.input.unwrap_or_else(|| root.join(BASELINE_DIR)),
        root,
        experiment: a.experiment,
        config,
    };
    let s = run_extract(&opts)?;
    println!(
        "extracted {} stories from {} backlogs into {}",
        s.stories,
        s.backlogs,
        s.output_dir.display()
    );
    if s.failures > 0 {
        eprintln!("warning: {} stories failed, see the `Error` entries", s.failures);
    }
    Ok(())
}

fn evaluate(root: PathBuf, a: EvaluateArgs) -> Result<(), WorkflowError> {
    let embedder: Box<dyn Embedder> = match a.embedder {
        EmbedderKind::OneHot => Box::new(OneHotEmbedder),
        EmbedderKind::Http => {
            let Some(endpoint) = a.embed_endpoint else {
                eprintln!("error: --embedder http needs --embed-endpoint");
                std::process::exit(1);
            };
            Box::new(HttpEmbedder::new(
                endpoint,
                a.embed_provider,
                a.embed_model,
                std::env::var(&a.api_key_env).ok().filter(|v| !v.is_empty()),
                Duration::from_secs(60),
                RetryPolicy::default(),
            ))
        }
    };
    let opts = EvaluateOptions {
        baseline_dir: a.baseline.unwrap_or_else(|| root.join(BASELINE_DIR)),
        root,
        experiment: a.experiment,
        extraction_dir: a.input,
        options: EvalOptions {
            compare: CompareOptions {
                fold_plurals: a.fold_plurals,
                token_boundary: a.token_boundary,
            },
            bertscore: !a.no_bertscore,
            ..EvalOptions::default()
        },
    };
    let report = run_evaluate(&opts, embedder.as_ref())?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let mut modes: Vec<&str> = ComparisonMode::ALL.iter().map(|m| m.as_str()).collect();
    if opts.options.bertscore {
        modes.push("bertscore");
    }
    for mode in modes {
        println!("{}", report.f_table(mode));
    }
    println!("report written to {}", opts.output_dir().display());
    Ok(())
}

fn load(root: PathBuf, a: LoadArgs) -> Result<(), WorkflowError> {
    let opts = LoadOptions {
        root,
        experiment: a.experiment,
        extraction_dir: a.input,
        dry_run: a.dry_run,
        id_length_cap: a.id_cap,
    };
    let out = run_load(&opts, SinkConfig::from_env)?;
    println!("{} documents written to {}", out.documents, out.json_path.display());
    if let Some(p) = &out.cypher_path {
        println!("cypher script written to {}", p.display());
    }
    if let Some(s) = &out.summary {
        println!(
            "loaded {} documents ({} failed): {} nodes created, {} nodes matched, {} relationships created",
            s.documents_loaded, s.documents_failed, s.nodes_created, s.nodes_matched, s.rels_created
        );
        for f in &s.failures {
            eprintln!("warning: {f}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let _ = dotenvy::dotenv();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Extract(a) => extract(cli.root, a),
        Command::Evaluate(a) => evaluate(cli.root, a),
        Command::Load(a) => load(cli.root, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
