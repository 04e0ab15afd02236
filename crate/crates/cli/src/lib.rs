//! `deal` command-line driver: dataset generation, training, evaluation,
//! one-off inference and the HTTP server.

pub mod config;
pub mod server;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deal_core::eval::{evaluate_protocol, EvalReport, PromptProtocol};
use deal_core::model::{Deal, ModelConfig};
use deal_core::scene::{dataset_stats, export_annotations, generate_dataset, ingest_annotations, PointPrompt, Setting};
use deal_core::service::{handle_infer, InferRequest, ServiceError};
use deal_core::train::train;
use deal_core::DealError;

pub use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or configuration (exit code 1).
    #[error("{0}")]
    Usage(String),
    /// Failure while doing the work (exit code 2).
    #[error(transparent)]
    Runtime(#[from] DealError),
    #[error("{0}")]
    Service(#[from] ServiceError),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "deal", version, about = "Point-prompted small-object detection")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration; defaults are used for anything omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the configuration file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic train/test dataset.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Output directory; receives `train/` and `test/`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train a detector with cyclic point prompting.
    Train {
        #[command(flatten)]
        common: Common,
        /// Annotation file, or a directory holding `annotations.json`.
        #[arg(long)]
        data: PathBuf,
        /// Directory for checkpoints and `metrics.ndjson`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint under a prompt setting.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Prompt setting 1-4.
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=4))]
        setting: u8,
        /// Sample this many prompts of one category instead of a setting.
        #[arg(long, conflicts_with = "setting")]
        prompts: Option<usize>,
        #[arg(long)]
        score_threshold: Option<f64>,
        /// Prompt displacement as a fraction of box size.
        #[arg(long)]
        jitter: Option<f64>,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one inference and print the response as JSON.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// PNG image.
        #[arg(long)]
        image: PathBuf,
        /// Point prompt as `x,y,category`; repeatable.
        #[arg(long = "prompt", value_parser = parse_prompt, required = true)]
        prompts: Vec<PointPrompt>,
        #[arg(long)]
        score_threshold: Option<f64>,
    },
    /// Serve the inference API over HTTP.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load (overrides `serve.checkpoint`); without one
        /// `/infer` answers 503.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory of PNG images addressable by id (overrides
        /// `serve.image_dir`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Address to bind; defaults to localhost.
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
}

fn parse_prompt(s: &str) -> Result<PointPrompt, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [x, y, c] = parts[..] else {
        return Err(format!("expected x,y,category, got `{s}`"));
    };
    let num = |v: &str| v.parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok(PointPrompt {
        x: num(x)?,
        y: num(y)?,
        category: c.parse().map_err(|e| format!("`{c}`: {e}"))?,
    })
}

fn effective_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let cfg = cfg.materialize()?;
    eprintln!("# effective configuration\n{}", cfg.to_toml());
    Ok(cfg)
}

/// Builds a model with the configured architecture and loads its weights.
pub fn load_model(model: &ModelConfig, checkpoint: &Path) -> Result<Deal<f64>, CliError> {
    if !checkpoint.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} not found", checkpoint.display())));
    }
    let mut deal = Deal::new(model.clone(), 0)?;
    deal_tensor::load_checkpoint(checkpoint, &mut deal.params)
        .map_err(|e| DealError::Config(format!("checkpoint {} does not fit the configured model: {e}", checkpoint.display())))?;
    Ok(deal)
}

fn load_dataset(data: &Path) -> Result<deal_core::scene::Dataset, CliError> {
    let path = config::annotation_path(data);
    if !path.is_file() {
        return Err(CliError::Usage(format!("annotation file {} not found", path.display())));
    }
    Ok(ingest_annotations(&path)?)
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Generate { common, data } => {
            let cfg = effective_config(&common)?;
            let splits = [("train", cfg.dataset.train_scenes, cfg.seed), ("test", cfg.dataset.test_scenes, cfg.seed ^ 0x7E57)];
            for (name, count, seed) in splits {
                let dataset = generate_dataset(&cfg.generator, count, seed)?;
                let path = data.join(name).join("annotations.json");
                export_annotations(&dataset, &path)?;
                let stats = dataset_stats(&dataset)?;
                println!(
                    "{name}: {} images, {} objects, mean scale {:.2} px -> {}",
                    stats.n_images,
                    stats.n_objects,
                    stats.mean_scale,
                    path.display()
                );
            }
        }
        Command::Train { common, data, out } => {
            let cfg = effective_config(&common)?;
            let dataset = load_dataset(&data)?;
            let (_, report) = train(&dataset, &cfg.model, &cfg.training, Some(&out))?;
            for (epoch, loss) in report.epoch_losses.iter().enumerate() {
                println!("epoch {}: mean loss {loss:.4}", epoch + 1);
            }
            println!("{} optimizer steps in {:.1}s; checkpoints in {}", report.steps, report.seconds, out.display());
        }
        Command::Eval {
            common,
            data,
            checkpoint,
            setting,
            prompts,
            score_threshold,
            jitter,
            out,
        } => {
            let mut cfg = effective_config(&common)?;
            if let Some(t) = score_threshold {
                cfg.evaluation.score_threshold = t;
            }
            if let Some(j) = jitter {
                cfg.evaluation.jitter = j;
            }
            let model = load_model(&cfg.model, &checkpoint)?;
            let dataset = load_dataset(&data)?;
            let protocol = match prompts {
                Some(n) => PromptProtocol::Count(n),
                None => PromptProtocol::Setting(Setting::from_index(setting).expect("clap restricts the range to 1..=4")),
            };
            let report: EvalReport = evaluate_protocol(&model, &dataset, protocol, &cfg.evaluation)?;
            println!("{report}");
            if let Some(path) = out {
                let text = serde_json::to_string_pretty(&report).map_err(DealError::from)?;
                fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Infer {
            common,
            checkpoint,
            image,
            prompts,
            score_threshold,
        } => {
            let cfg = effective_config(&common)?;
            let model = load_model(&cfg.model, &checkpoint)?;
            let (dir, id) = match (image.parent(), image.file_stem().and_then(|s| s.to_str())) {
                (Some(dir), Some(id)) if image.is_file() => (dir.to_path_buf(), id.to_string()),
                _ => return Err(CliError::Usage(format!("image {} not found", image.display()))),
            };
            let store = deal_core::service::ImageStore::new(if dir.as_os_str().is_empty() { PathBuf::from(".") } else { dir });
            let request = InferRequest {
                image_id: Some(id),
                image_base64: None,
                prompts,
                score_threshold: Some(score_threshold.unwrap_or(cfg.evaluation.score_threshold)),
            };
            let response = handle_infer(&request, Some(&model), Some(&store))?;
            println!("{}", serde_json::to_string_pretty(&response).map_err(DealError::from)?);
        }
        Command::Serve {
            common,
            checkpoint,
            data,
            host,
            port,
        } => {
            let cfg = effective_config(&common)?;
            let checkpoint = checkpoint.or(cfg.serve.checkpoint);
            let data = data.or(cfg.serve.image_dir);
            let model = checkpoint.as_deref().map(|c| load_model(&cfg.model, c)).transpose()?;
            if let Some(dir) = &data {
                if !dir.is_dir() {
                    return Err(CliError::Usage(format!("image directory {} not found", dir.display())));
                }
            }
            let host = host.unwrap_or(cfg.serve.host);
            let port = port.unwrap_or(cfg.serve.port);
            let state = server::AppState::new(model, data.map(deal_core::service::ImageStore::new));
            let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port))
                    .await
                    .map_err(|e| CliError::Io(format!("cannot bind {host}:{port}: {e}")))?;
                let addr = listener.local_addr().map_err(|e| CliError::Io(e.to_string()))?;
                log::info!("listening on http://{addr}");
                eprintln!("listening on http://{addr}");
                axum::serve(listener, server::router(state))
                    .with_graceful_shutdown(async {
                        let _ = tokio::signal::ctrl_c().await;
                    })
                    .await
                    .map_err(|e| CliError::Io(e.to_string()))
            })?;
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and maps the outcome to an exit code:
/// 0 success, 1 usage or configuration error, 2 runtime failure.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
