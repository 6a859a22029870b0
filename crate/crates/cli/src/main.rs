use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use remp_client::{Client, Submitted};
use remp_core::crowd::{load_workers, LabelDesk, LabelLog, SharedDesk, DEFAULT_ASSIGNMENTS};
use remp_core::engine::{load_pairs, run_pipeline, score, write_matches, EngineConfig, LabelMode, PairSet, RunReport};
use remp_core::kb::load_kb;
use remp_core::truth::Answer;
use remp_core::KnowledgeBase;
use remp_server::{run_session, SessionOptions};
use tracing_subscriber::EnvFilter;

#[derive(Parser)]
#[command(name = "remp", version, about = "Crowdsourced entity resolution across two knowledge bases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resolve the two KBs, with simulated or human workers.
    Match(MatchArgs),
    /// Resolve the two KBs with human workers over HTTP.
    Serve(MatchArgs),
    /// Score a match file against a gold standard.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
    },
    /// Show the state of a running labeling session.
    Status {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
    },
    /// List the open questions of a worker.
    Questions {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[arg(long)]
        worker: String,
    },
    /// Post one answer to a running session.
    Label {
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        url: String,
        #[arg(long)]
        worker: String,
        #[arg(long)]
        question: u64,
        /// match, non_match or unsure
        #[arg(long)]
        answer: Answer,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Sim,
    Serve,
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    kb1_attrs: PathBuf,
    #[arg(long)]
    kb1_rels: PathBuf,
    #[arg(long)]
    kb2_attrs: PathBuf,
    #[arg(long)]
    kb2_rels: PathBuf,
    /// Required for simulation; enables metrics otherwise.
    #[arg(long)]
    gold: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sim")]
    mode: Mode,
    #[arg(long, default_value_t = 4)]
    k: usize,
    #[arg(long, default_value_t = 0.9)]
    tau: f64,
    #[arg(long, default_value_t = 10)]
    mu: usize,
    #[arg(long, default_value_t = 0.3)]
    t_label: f64,
    /// Total question budget; unlimited when absent.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0.0)]
    error_rate: f64,
    /// Worker pool file: worker_id, kind and quality or error rate per line.
    #[arg(long)]
    workers: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_ASSIGNMENTS)]
    assignments: usize,
    /// Match TSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Full run report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Append every collected label to this TSV.
    #[arg(long)]
    label_log: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    label_attr1: Option<String>,
    #[arg(long)]
    label_attr2: Option<String>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    /// Static files for the labeling UI.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

impl MatchArgs {
    fn config(&self) -> EngineConfig {
        EngineConfig {
            k: self.k,
            tau: self.tau,
            mu: self.mu,
            t_label: self.t_label,
            budget: self.budget,
            assignments: self.assignments,
            seed: self.seed,
            label_attr1: self.label_attr1.clone(),
            label_attr2: self.label_attr2.clone(),
            ..Default::default()
        }
    }
}

fn load(attrs: &Path, rels: &Path) -> Result<KnowledgeBase> {
    let (kb, report) = load_kb(attrs, rels)?;
    if !report.malformed.is_empty() {
        tracing::warn!(file = %attrs.display(), skipped = report.malformed.len(), "malformed lines skipped");
    }
    tracing::info!(entities = kb.num_entities(), file = %attrs.display(), "loaded KB");
    Ok(kb)
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    match Cli::parse().command {
        Command::Match(args) => run_match(args),
        Command::Serve(mut args) => {
            args.mode = Mode::Serve;
            run_match(args)
        }
        Command::Eval { pred, gold } => {
            let s = score(&load_pairs(&pred)?, &load_pairs(&gold)?);
            println!("precision\t{:.4}", s.precision);
            println!("recall\t{:.4}", s.recall);
            println!("f1\t{:.4}", s.f1);
            println!("true_positives\t{}", s.true_positives);
            println!("predicted\t{}", s.predicted);
            println!("gold\t{}", s.gold);
            Ok(())
        }
        Command::Status { url } => block_on(async {
            let c = Client::new(url);
            let session = c.session().await?;
            let progress = c.progress().await?;
            println!("{}", serde_json::json!({ "session": session, "progress": progress }));
            Ok(())
        }),
        Command::Questions { url, worker } => block_on(async {
            let qs = Client::new(url).questions(&worker).await?;
            println!("{}", serde_json::to_string_pretty(&qs)?);
            Ok(())
        }),
        Command::Label {
            url,
            worker,
            question,
            answer,
        } => block_on(async {
            match Client::new(url).submit(&worker, question, answer).await? {
                Submitted::Accepted(r) => println!("{}", serde_json::to_string(&r)?),
                Submitted::Duplicate => eprintln!("already answered"),
            }
            Ok(())
        }),
    }
}

fn block_on<F: std::future::Future<Output = Result<()>>>(f: F) -> Result<()> {
    tokio::runtime::Runtime::new()?.block_on(f)
}

fn run_match(args: MatchArgs) -> Result<()> {
    let config = args.config();
    config.validate()?;
    let kb1 = load(&args.kb1_attrs, &args.kb1_rels)?;
    let kb2 = load(&args.kb2_attrs, &args.kb2_rels)?;
    let gold: Option<PairSet> = args.gold.as_deref().map(load_pairs).transpose()?;
    let pool = args.workers.as_deref().map(load_workers).transpose()?;
    let log = args.label_log.as_deref().map(LabelLog::open).transpose()?;

    let report = match args.mode {
        Mode::Sim => {
            let mode = LabelMode::Simulated {
                error_rate: args.error_rate,
                workers: pool,
                log,
            };
            run_pipeline(&kb1, &kb2, gold.as_ref(), &config, mode)?
        }
        Mode::Serve => {
            // Without a pool file any worker id may answer.
            let mut desk = LabelDesk::new(pool.unwrap_or_default(), config.assignments)?;
            if let Some(log) = log {
                desk = desk.with_log(log);
            }
            let desk = Arc::new(SharedDesk::new(desk));
            let addr: SocketAddr = format!("{}:{}", args.host, args.port)
                .parse()
                .with_context(|| format!("bad listen address {}:{}", args.host, args.port))?;
            let options = SessionOptions {
                ui_dir: args.ui_dir.clone(),
                linger: Duration::from_secs(2),
            };
            tokio::runtime::Runtime::new()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("labeling service on http://{}", listener.local_addr()?);
                let engine = move |desk| run_pipeline(&kb1, &kb2, gold.as_ref(), &config, LabelMode::Service(desk));
                let interrupt = async {
                    let _ = tokio::signal::ctrl_c().await;
                };
                anyhow::Ok(run_session(listener, desk, options, engine, interrupt).await?)
            })?
        }
    };
    emit(&args, &report)
}

fn emit(args: &MatchArgs, report: &RunReport) -> Result<()> {
    match &args.out {
        Some(path) => {
            let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            let mut w = BufWriter::new(f);
            write_matches(&mut w, &report.matches)?;
            w.flush()?;
        }
        None => write_matches(io::stdout().lock(), &report.matches)?,
    }
    if let Some(path) = &args.report {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        serde_json::to_writer_pretty(BufWriter::new(f), report)?;
    }
    eprintln!(
        "{} matches, {} questions, {} labels, {} loops, stopped: {:?}",
        report.matches.len(),
        report.questions,
        report.labels,
        report.loops.len(),
        report.stop
    );
    if let Some(m) = &report.metrics {
        eprintln!(
            "precision {:.4}  recall {:.4}  f1 {:.4}  rr {:.4}  pc {:.4}",
            m.precision, m.recall, m.f1, m.reduction_ratio, m.pair_completeness
        );
    }
    Ok(())
}
