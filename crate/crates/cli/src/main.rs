//! `ground <command> --config <file.json>`
//!
//! The config file holds every `TrainConfig` field at the top level (all
//! optional), plus the paths and per-command sections below.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ground_core::dataset::{CommandKind, Split};
use ground_core::grounder::Grounder;
use ground_core::models::ModelKind;
use ground_core::synthetic::{generate_synthetic, SynthConfig};
use ground_core::training::{ablation_grid, corpus_stats, evaluate, load_dataset, train, Corpus, TrainConfig};
use ground_service::{AppState, Artifacts};
use serde::Deserialize;

#[derive(Debug, Parser)]
#[command(name = "ground", version, about = "Ground natural-language commands to web-page elements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration; missing fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the configured model and write its log, timings, and model file.
    Train,
    /// Evaluate a trained model on `eval_split`.
    Eval,
    /// Train every ablation variant and write the accuracy table.
    Ablate,
    /// Print corpus statistics.
    Stats,
    /// Write a synthetic corpus to `synth.out_dir`.
    Synth,
    /// Serve trained models over HTTP.
    Serve,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
struct SynthSection {
    out_dir: PathBuf,
    #[serde(flatten)]
    config: SynthConfig,
}

impl Default for SynthSection {
    fn default() -> Self {
        Self {
            out_dir: PathBuf::from("data"),
            config: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
struct ServeSection {
    addr: SocketAddr,
    /// Checkpoints to load; when empty, every `*.ckpt` in `out_dir`.
    checkpoints: Vec<PathBuf>,
    /// DF table; when absent, `out_dir/retrieval.df` if it exists.
    df: Option<PathBuf>,
    ui: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from(([127, 0, 0, 1], 8080)),
            checkpoints: Vec::new(),
            df: None,
            ui: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
struct RunConfig {
    dataset: PathBuf,
    snapshots: PathBuf,
    /// Logs, model files, and tables are written here.
    out_dir: PathBuf,
    eval_split: Split,
    /// Model file for `eval`; defaults to the one `train` writes.
    model_path: Option<PathBuf>,
    #[serde(flatten)]
    train: TrainConfig,
    synth: SynthSection,
    serve: ServeSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data/dataset.jsonl"),
            snapshots: PathBuf::from("data/snapshots"),
            out_dir: PathBuf::from("runs"),
            eval_split: Split::Test,
            model_path: None,
            train: TrainConfig::default(),
            synth: SynthSection::default(),
            serve: ServeSection::default(),
        }
    }
}

impl RunConfig {
    fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    fn out(&self, name: &str) -> Result<PathBuf> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("creating {}", self.out_dir.display()))?;
        Ok(self.out_dir.join(name))
    }

    fn model_file(&self, kind: ModelKind) -> PathBuf {
        self.model_path.clone().unwrap_or_else(|| self.out_dir.join(model_file_name(kind)))
    }

    fn corpus(&self) -> Result<Corpus> {
        let corpus = load_dataset(&self.dataset, &self.snapshots)?;
        let report = corpus.report();
        if !report.is_clean() {
            eprintln!(
                "warning: {} example(s) excluded ({} missing page, {} missing target, {} invisible target); they count as errors",
                report.issues.len(),
                report.missing_page,
                report.missing_target,
                report.invisible_target
            );
        }
        Ok(corpus)
    }
}

fn model_file_name(kind: ModelKind) -> String {
    match kind {
        ModelKind::Retrieval => "retrieval.df".into(),
        k => format!("{k}.ckpt"),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let corpus = cfg.corpus()?;
    let kind = cfg.train.model;
    let outcome = train(&corpus, &cfg.train)?;

    let log_path = cfg.out(&format!("{kind}_log.jsonl"))?;
    let mut log = create(&log_path)?;
    outcome.write_log(&mut log)?;
    log.flush()?;
    let mut timing = create(&cfg.out(&format!("{kind}_timing.jsonl"))?)?;
    outcome.write_timings(&mut timing)?;
    timing.flush()?;
    let model_path = cfg.out(&model_file_name(kind))?;
    let mut model = create(&model_path)?;
    outcome.write_model(&mut model)?;
    model.flush()?;

    println!(
        "{kind}: best {} accuracy {:.4} at epoch {} of {}",
        cfg.train.monitor,
        outcome.best_accuracy,
        outcome.best_epoch,
        outcome.log.len()
    );
    println!("log {}\nmodel {}", log_path.display(), model_path.display());
    Ok(())
}

fn load_grounder(path: &Path, cfg: &RunConfig) -> Result<Grounder> {
    let file = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    Ok(match cfg.train.model {
        ModelKind::Retrieval => Grounder::read_retrieval(file, cfg.train.retrieval)?,
        _ => Grounder::read_checkpoint(file)?,
    })
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let corpus = cfg.corpus()?;
    let path = cfg.model_file(cfg.train.model);
    let grounder = load_grounder(&path, cfg)?;
    if grounder.kind() != cfg.train.model {
        bail!("{} holds a {} model, config says {}", path.display(), grounder.kind(), cfg.train.model);
    }
    let eval = evaluate(&corpus, cfg.eval_split, &grounder)?;
    let kind = grounder.kind();
    let records_path = cfg.out(&format!("{kind}_eval_{}.jsonl", cfg.eval_split))?;
    let mut out = create(&records_path)?;
    for r in &eval.records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;

    println!("{kind} on {}: {}/{} = {:.4}", cfg.eval_split, eval.correct, eval.total, eval.accuracy);
    for ck in CommandKind::ALL {
        let (acc, n) = eval.accuracy_for(ck);
        if n > 0 {
            println!("  {:<20} {:.4} ({n})", ck.as_str(), acc);
        }
    }
    println!("records {}", records_path.display());
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig) -> Result<()> {
    let corpus = cfg.corpus()?;
    let table = ablation_grid(&corpus, &cfg.train, cfg.eval_split)?;
    let kind = cfg.train.model;
    let text = table.to_text();
    write_text(&cfg.out(&format!("{kind}_ablation.txt"))?, &text)?;
    write_text(&cfg.out(&format!("{kind}_ablation.csv"))?, &table.to_csv())?;
    print!("{text}");
    Ok(())
}

fn cmd_stats(cfg: &RunConfig) -> Result<()> {
    let stats = corpus_stats(&cfg.corpus()?);
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn cmd_synth(cfg: &RunConfig) -> Result<()> {
    let corpus = generate_synthetic(&cfg.synth.config)?;
    corpus
        .write_to(&cfg.synth.out_dir)
        .with_context(|| format!("writing {}", cfg.synth.out_dir.display()))?;
    println!(
        "{} pages, {} commands in {}",
        corpus.pages.len(),
        corpus.examples.len(),
        cfg.synth.out_dir.display()
    );
    Ok(())
}

/// Explicit artifacts when given, otherwise whatever `train` left in `out_dir`.
fn serve_artifacts(cfg: &RunConfig) -> Result<Artifacts> {
    let s = &cfg.serve;
    let (checkpoints, df) = if s.checkpoints.is_empty() && s.df.is_none() {
        let mut found = Vec::new();
        if cfg.out_dir.is_dir() {
            for entry in fs::read_dir(&cfg.out_dir)? {
                let p = entry?.path();
                if p.extension().is_some_and(|e| e == "ckpt") {
                    found.push(p);
                }
            }
        }
        found.sort();
        let df = cfg.out_dir.join(model_file_name(ModelKind::Retrieval));
        (found, df.is_file().then_some(df))
    } else {
        (s.checkpoints.clone(), s.df.clone())
    };
    Ok(Artifacts {
        snapshots: cfg.snapshots.clone(),
        checkpoints,
        df,
        retrieval: cfg.train.retrieval,
    })
}

fn cmd_serve(cfg: &RunConfig) -> Result<()> {
    let state = AppState::load(&serve_artifacts(cfg)?)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(ground_service::serve(cfg.serve.addr, state, cfg.serve.ui.clone()))?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train => cmd_train(&cfg),
        Command::Eval => cmd_eval(&cfg),
        Command::Ablate => cmd_ablate(&cfg),
        Command::Stats => cmd_stats(&cfg),
        Command::Synth => cmd_synth(&cfg),
        Command::Serve => cmd_serve(&cfg),
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
