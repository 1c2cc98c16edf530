use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use trollhunter_client::Client;
use trollhunter_core::api::IterationRequest;
use trollhunter_core::ca::CoordinateMode;
use trollhunter_core::ingestion::{
    parse_timestamp, run_poller, HttpSource, IngestConfig, PollerOptions, PostStore, ReplaySource,
    SearchTermSet, TermsProvider,
};
use trollhunter_core::render::{render_biplot, render_report, BiplotStyle};
use trollhunter_core::session::{
    export_snapshot, import_snapshot, AnalysisSnapshot, Session, SessionConfig, TaggerChoice,
    Window,
};
use trollhunter_core::synth::{generate, write_output, ScenarioSpec};
use trollhunter_server::{forward_reports, router, serve, AppState, ServerOptions};

const DEFAULT_STORE: &str = "posts.jsonl";

#[derive(Parser)]
#[command(
    name = "trollhunter",
    version,
    about = "Verb/noun correspondence analysis of event posts"
)]
struct Cli {
    /// Log more to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Poll a live search endpoint into the store until interrupted.
    Ingest {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = DEFAULT_STORE)]
        store: PathBuf,
        /// Seconds between cycles; overrides the config file.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        interval: Option<u64>,
        #[arg(long)]
        max_cycles: Option<u64>,
    },
    /// Feed a recorded JSONL file through the ingestion path.
    Replay {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = DEFAULT_STORE)]
        store: PathBuf,
        /// Search term (repeatable).
        #[arg(long = "term")]
        terms: Vec<String>,
        #[arg(long, default_value = "replay")]
        event: String,
        /// Lines per cycle; whole file in one cycle when omitted.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        page_size: Option<u64>,
    },
    /// Run one analysis iteration and print the candidate report.
    Analyze(AnalyzeArgs),
    /// Print the candidate report of an exported snapshot.
    Report {
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Also write the biplot here.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve(ServeArgs),
    /// Generate a synthetic corpus from a scenario file.
    Synth {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long, default_value = DEFAULT_STORE)]
    store: PathBuf,
    /// Directory persisting the session and its snapshots.
    #[arg(long)]
    session_dir: Option<PathBuf>,
    /// Event name (default: the ingest config's, else "event").
    #[arg(long)]
    event: Option<String>,
    /// Terms kept per part of speech.
    #[arg(long, value_parser = clap::value_parser!(u64).range(2..))]
    top: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    dims: Option<u64>,
    /// Report principal coordinates instead of singular vectors.
    #[arg(long)]
    principal: bool,
    /// Only posts created at or after this RFC 3339 time.
    #[arg(long, requires = "to")]
    from: Option<String>,
    /// Only posts created at or before this RFC 3339 time.
    #[arg(long, requires = "from")]
    to: Option<String>,
    /// External tagger program speaking the line protocol.
    #[arg(long)]
    tagger_cmd: Option<String>,
    #[arg(long, requires = "tagger_cmd", allow_hyphen_values = true)]
    tagger_arg: Vec<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    session: SessionArgs,
    /// Lemma to exclude (repeatable).
    #[arg(long = "exclude")]
    exclude: Vec<String>,
    /// Write the snapshot export here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    report_top: usize,
    /// Run the iteration on a running service instead of in-process.
    #[arg(long, conflicts_with_all = ["session_dir", "top", "dims", "principal", "from", "tagger_cmd"])]
    server: Option<String>,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    session: SessionArgs,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Poll a live endpoint while serving.
    #[arg(long)]
    ingest_config: Option<PathBuf>,
    /// Exact origin allowed for cross-origin requests (default: any loopback origin).
    #[arg(long)]
    allowed_origin: Option<String>,
}

enum Failure {
    Usage(String),
    Pipeline(anyhow::Error),
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Pipeline(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let level = match cli.verbose {
        0 => tracing_subscriber::filter::LevelFilter::WARN,
        1 => tracing_subscriber::filter::LevelFilter::INFO,
        _ => tracing_subscriber::filter::LevelFilter::DEBUG,
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_max_level(level)
        .init();

    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return ExitCode::from(1);
        }
    };
    match runtime.block_on(run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Pipeline(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

async fn run(command: Command) -> Outcome {
    match command {
        Command::Ingest {
            config,
            store,
            interval,
            max_cycles,
        } => ingest(&config, &store, interval, max_cycles).await,
        Command::Replay {
            input,
            store,
            terms,
            event,
            page_size,
        } => replay(&input, &store, &terms, &event, page_size).await,
        Command::Analyze(args) => analyze(args).await,
        Command::Report { snapshot, top, svg } => report(&snapshot, top, svg.as_deref()),
        Command::Serve(args) => serve_cmd(args).await,
        Command::Synth { scenario, out } => synth(&scenario, &out),
    }
}

fn print(text: &str) -> Outcome {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .context("writing to stdout")?;
    Ok(())
}

async fn ingest(
    config: &Path,
    store: &Path,
    interval: Option<u64>,
    max_cycles: Option<u64>,
) -> Outcome {
    let cfg = IngestConfig::load(config)?;
    let source = HttpSource::new(cfg.live())?;
    let store = PostStore::open(store)?;
    let options = PollerOptions {
        interval: interval.map(Duration::from_secs).unwrap_or(cfg.interval()),
        stop_when_exhausted: false,
        max_cycles,
    };
    let mut handle = run_poller(
        Arc::new(source),
        TermsProvider::new(cfg.term_set()?),
        store,
        options,
    );
    let mut reports = handle.take_reports().expect("fresh handle has reports");
    let printer = tokio::spawn(async move {
        while let Some(r) = reports.recv().await {
            let line = serde_json::to_string(&r).expect("report serializes");
            if print(&format!("{line}\n")).is_err() {
                break;
            }
        }
    });
    let stopper = handle.stopper();
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            stopper.stop();
        }
    });
    let summary = handle.join().await?;
    let _ = printer.await;
    eprintln!(
        "ingest stopped after {} cycles, store holds {}",
        summary.cycles, summary.store_count
    );
    Ok(())
}

async fn replay(
    input: &Path,
    store: &Path,
    terms: &[String],
    event: &str,
    page_size: Option<u64>,
) -> Outcome {
    if !input.is_file() {
        return Err(anyhow!("NOT_FOUND: input file {} does not exist", input.display()).into());
    }
    if terms.is_empty() {
        return Err(Failure::Usage("replay needs at least one --term".into()));
    }
    let set = SearchTermSet::new(event, terms.iter().cloned())
        .map_err(|e| Failure::Usage(e.to_string()))?;
    let source = ReplaySource::new(input).with_page_size(page_size.map(|n| n as usize));
    let store = PostStore::open(store)?;
    let options = PollerOptions {
        interval: Duration::ZERO,
        stop_when_exhausted: true,
        max_cycles: None,
    };
    let mut handle = run_poller(Arc::new(source), TermsProvider::new(set), store, options);
    let mut reports = handle.take_reports().expect("fresh handle has reports");
    let summary = handle.join().await?;
    let (mut malformed, mut errors) = (0, Vec::new());
    while let Ok(r) = reports.try_recv() {
        malformed += r.malformed;
        errors.extend(r.errors);
    }
    if let Some(e) = errors.first() {
        return Err(anyhow!("replay failed: {e}").into());
    }
    print(&format!(
        "replayed {}: {} cycles, {} appended, {} malformed, store holds {}\n",
        input.display(),
        summary.cycles,
        summary.appended,
        malformed,
        summary.store_count
    ))
}

fn session_config(args: &SessionArgs, event: Option<&str>) -> Result<SessionConfig, Failure> {
    let event = args.event.as_deref().or(event).unwrap_or("event");
    let mut cfg = SessionConfig::new(event, &args.store);
    if let Some(k) = args.top {
        cfg.k = k as usize;
    }
    if let Some(d) = args.dims {
        cfg.dims = d as usize;
    }
    if args.principal {
        cfg.coordinate_mode = CoordinateMode::Principal;
    }
    if let (Some(from), Some(to)) = (&args.from, &args.to) {
        let parse = |s: &str| {
            parse_timestamp(s).map_err(|e| Failure::Usage(format!("bad time {s:?}: {e}")))
        };
        cfg.window = Window::Between {
            from: parse(from)?,
            to: parse(to)?,
        };
    }
    if let Some(program) = &args.tagger_cmd {
        cfg.tagger = TaggerChoice::External {
            program: program.clone(),
            args: args.tagger_arg.clone(),
        };
    }
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn open_session(args: &SessionArgs, terms: TermsProvider) -> Result<Session, Failure> {
    let event = terms.current().map(|t| t.event_name);
    let cfg = session_config(args, event.as_deref())?;
    let session = match &args.session_dir {
        Some(dir) => Session::create_or_open(dir, cfg, terms),
        None => Session::in_memory(cfg, terms),
    };
    Ok(session.context("opening session")?)
}

async fn analyze(args: AnalyzeArgs) -> Outcome {
    let snap: AnalysisSnapshot = match &args.server {
        Some(url) => {
            let client = Client::new(url).map_err(|e| Failure::Usage(e.to_string()))?;
            let req = IterationRequest {
                exclusions: args.exclude.clone(),
                reset: false,
            };
            client
                .create_iteration(&req)
                .await
                .context("creating iteration")?
                .snapshot
        }
        None => {
            let session = open_session(&args.session, TermsProvider::empty())?;
            let exclusions = args.exclude.clone();
            let snap = tokio::task::spawn_blocking(move || {
                if session.latest().is_some() {
                    session.exclude_and_rerun(exclusions)
                } else {
                    session.run_iteration(exclusions)
                }
            })
            .await
            .context("analysis task")?
            .context("analysis failed")?;
            Arc::unwrap_or_clone(snap)
        }
    };
    if let Some(out) = &args.out {
        std::fs::write(out, export_snapshot(&snap))
            .with_context(|| format!("writing {}", out.display()))?;
        eprintln!(
            "wrote snapshot {} to {}",
            snap.sequence_number,
            out.display()
        );
    }
    print(&render_report(&snap, args.report_top))
}

fn report(path: &Path, top: usize, svg: Option<&Path>) -> Outcome {
    let raw = std::fs::read_to_string(path)
        .with_context(|| format!("NOT_FOUND: reading {}", path.display()))?;
    let snap = import_snapshot(&raw).context("reading snapshot")?;
    if let Some(svg) = svg {
        let doc = render_biplot(&snap, &BiplotStyle::default()).context("rendering biplot")?;
        std::fs::write(svg, doc).with_context(|| format!("writing {}", svg.display()))?;
    }
    print(&render_report(&snap, top))
}

async fn serve_cmd(args: ServeArgs) -> Outcome {
    let ingest = match &args.ingest_config {
        Some(p) => Some(IngestConfig::load(p)?),
        None => None,
    };
    let terms = match &ingest {
        Some(cfg) => TermsProvider::new(cfg.term_set()?),
        None => TermsProvider::empty(),
    };
    // makes sure the store exists before the first iteration
    let store = PostStore::open(&args.session.store)?;
    let session = Arc::new(open_session(&args.session, terms)?);
    let state = AppState::new(session.clone());

    let poller = match &ingest {
        Some(cfg) => {
            let source = HttpSource::new(cfg.live())?;
            let options = PollerOptions {
                interval: cfg.interval(),
                ..PollerOptions::default()
            };
            let mut handle = run_poller(Arc::new(source), session.terms().clone(), store, options);
            forward_reports(
                state.clone(),
                handle.take_reports().expect("fresh handle has reports"),
            );
            Some(handle)
        }
        None => {
            drop(store);
            None
        }
    };

    let options = ServerOptions {
        allowed_origin: args.allowed_origin.clone(),
    };
    let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
        .await
        .with_context(|| format!("binding {}:{}", args.host, args.port))?;
    let addr = listener.local_addr().context("reading bound address")?;
    print(&format!("listening on http://{addr}\n"))?;
    let app = router(state.clone(), &options);
    serve(listener, app, state, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await
    .context("serving")?;
    if let Some(h) = poller {
        h.stop();
        h.join().await?;
    }
    Ok(())
}

fn synth(scenario: &Path, out: &Path) -> Outcome {
    let spec = ScenarioSpec::load(scenario)?;
    let posts = generate(&spec)?;
    write_output(&spec, &posts, out)?;
    print(&format!(
        "wrote {} posts to {}\n",
        posts.len(),
        out.display()
    ))
}
