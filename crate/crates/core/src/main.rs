use std::fs;
use std::net::SocketAddr;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use url::Url;

use formwatch::classifier::{ClassifiedRequest, ClassifyOptions, LevelStatus, classify_with};
use formwatch::crawler::{CrawlConfig, DirFetcher, HttpFetcher, crawl};
use formwatch::ingest::{CaptureFormat, parse_capture};
use formwatch::layout::{self, Scene, render_svg};
use formwatch::service::{Monitor, MonitorConfig, http};
use formwatch::simulator::{CorpusConfig, capture_text, generate_corpus, labels_text};
use formwatch::store::{load_structure, save_structure};

#[derive(Parser)]
#[command(name = "formwatch", version, about = "Form-structure monitor for web applications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Clf,
}

#[derive(Subcommand)]
enum Command {
    /// Crawl a site and write its form structure.
    Crawl {
        #[arg(long)]
        seed: Url,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = NonZeroUsize::new(100).unwrap())]
        max_pages: NonZeroUsize,
        /// Stay on the seed's host (pass `--same-host=false` to follow external links).
        #[arg(long, action = ArgAction::Set, num_args = 0..=1, default_value_t = true, default_missing_value = "true")]
        same_host: bool,
        /// Serve pages from a local mirror instead of the network.
        #[arg(long)]
        site_dir: Option<PathBuf>,
        /// Cookie header for authenticated crawls.
        #[arg(long)]
        cookie: Option<String>,
        #[arg(long, default_value_t = 10_000)]
        timeout_ms: u64,
        #[arg(long, default_value_t = 0)]
        delay_ms: u64,
        #[arg(long, default_value_t = NonZeroUsize::new(4).unwrap())]
        concurrency: NonZeroUsize,
    },
    /// Classify a capture file; exits 1 when any request violates the structure.
    Classify {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        capture: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
        /// Match requests without a referer against every source page.
        #[arg(long)]
        allow_missing_referer: bool,
    },
    /// Generate a labelled synthetic capture.
    Simulate {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        anomaly_rate: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Stack a second mutation on each tampered request.
        #[arg(long)]
        stack: bool,
    },
    /// Run the monitor service.
    Serve {
        #[arg(long)]
        structure: PathBuf,
        #[arg(long)]
        listen: SocketAddr,
        #[arg(long)]
        journal: Option<PathBuf>,
        #[arg(long, default_value_t = formwatch::service::DEFAULT_RETENTION)]
        retention: usize,
        /// Match requests without a referer against every source page.
        #[arg(long)]
        allow_missing_referer: bool,
    },
}

type Failure = Box<dyn std::error::Error>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Crawl { seed, out, max_pages, same_host, site_dir, cookie, timeout_ms, delay_ms, concurrency } => {
            let config = CrawlConfig {
                seed_url: seed,
                max_pages,
                same_host_only: same_host,
                request_timeout: Duration::from_millis(timeout_ms),
                politeness_delay: Duration::from_millis(delay_ms),
                concurrency,
                session_cookie: cookie,
            };
            cmd_crawl(&config, site_dir.as_deref(), &out)
        }
        Command::Classify { structure, capture, report, svg, format, allow_missing_referer } => {
            let format = match format {
                Format::Jsonl => CaptureFormat::JsonLines,
                Format::Clf => CaptureFormat::CommonLog,
            };
            let options = ClassifyOptions { allow_missing_referer };
            cmd_classify(&structure, &capture, &report, svg.as_deref(), format, &options)
        }
        Command::Simulate { structure, count, anomaly_rate, seed, out, labels, stack } => {
            let config = CorpusConfig { count, anomaly_rate, seed, stack };
            cmd_simulate(&structure, &config, &out, &labels)
        }
        Command::Serve { structure, listen, journal, retention, allow_missing_referer } => {
            let config = MonitorConfig { retention, classify: ClassifyOptions { allow_missing_referer } };
            cmd_serve(&structure, listen, journal.as_deref(), config)
        }
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("formwatch: {e}");
            ExitCode::FAILURE
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime, Failure> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn cmd_crawl(config: &CrawlConfig, site_dir: Option<&Path>, out: &Path) -> Result<ExitCode, Failure> {
    let rt = runtime()?;
    let (structure, report) = match site_dir {
        Some(dir) => {
            let fetcher = DirFetcher::new(dir, config.seed_url.clone());
            rt.block_on(crawl(config, &fetcher))
        }
        None => {
            let fetcher = HttpFetcher::new(config.request_timeout, config.session_cookie.as_deref())?;
            rt.block_on(crawl(config, &fetcher))
        }
    };
    save_structure(&structure, out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(ExitCode::SUCCESS)
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn cmd_classify(
    structure: &Path,
    capture: &Path,
    report: &Path,
    svg: Option<&Path>,
    format: CaptureFormat,
    options: &ClassifyOptions,
) -> Result<ExitCode, Failure> {
    let structure = load_structure(structure)?;
    let text = fs::read_to_string(capture)?;
    let file_id = capture.file_stem().and_then(|s| s.to_str()).unwrap_or("capture");

    let mut classified = Vec::new();
    let mut malformed = 0usize;
    for r in parse_capture(&text, file_id, &structure.base_url, format) {
        match r {
            Ok(req) => classified.push(classify_with(&req, &structure, options)),
            Err(e) => {
                malformed += 1;
                eprintln!("skipped: {e}");
            }
        }
    }

    let mut out = String::new();
    for c in &classified {
        out.push_str(&serde_json::to_string(c)?);
        out.push('\n');
    }
    fs::write(report, out)?;

    if let Some(dir) = svg {
        write_svgs(dir, &structure, &classified)?;
    }

    let count = |s: LevelStatus| classified.iter().filter(|c| c.worst_status() == s).count();
    let violations = count(LevelStatus::Violation);
    println!(
        "classified {} requests: {} normal, {} deep anomaly, {} violation; {} malformed lines skipped",
        classified.len(),
        count(LevelStatus::Normal),
        count(LevelStatus::DeepAnomaly),
        violations,
        malformed
    );
    Ok(if violations == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn write_svgs(
    dir: &Path,
    structure: &formwatch::model::ApplicationStructure,
    classified: &[ClassifiedRequest],
) -> Result<(), Failure> {
    fs::create_dir_all(dir)?;
    for group in &structure.groups {
        let events: Vec<ClassifiedRequest> =
            classified.iter().filter(|c| c.l1.destination() == Some(&group.destination_page)).cloned().collect();
        let scene = Scene::Overview(layout::layout_overview(group, &events)?);
        fs::write(dir.join(format!("group-{}.svg", group.group_id())), render_svg(&scene))?;
    }
    let unknown: Vec<ClassifiedRequest> = classified.iter().filter(|c| c.l1.destination().is_none()).cloned().collect();
    if !unknown.is_empty() {
        let scene = Scene::Overview(layout::layout_unknown(&unknown)?);
        fs::write(dir.join(format!("group-{}.svg", layout::UNKNOWN_GROUP_ID)), render_svg(&scene))?;
    }
    for c in classified.iter().filter(|c| c.worst_status() != LevelStatus::Normal) {
        let Some(form) = c.l1.form_id().and_then(|id| structure.form(id)) else { continue };
        let scene = Scene::Form(layout::layout_form(form, c)?);
        let name = format!("form-{}-{}.svg", form.form_id, file_safe(&c.request.request_id));
        fs::write(dir.join(name), render_svg(&scene))?;
    }
    Ok(())
}

fn cmd_simulate(structure: &Path, config: &CorpusConfig, out: &Path, labels: &Path) -> Result<ExitCode, Failure> {
    if !(0.0..=1.0).contains(&config.anomaly_rate) {
        return Err(format!("anomaly rate {} is outside [0, 1]", config.anomaly_rate).into());
    }
    let structure = load_structure(structure)?;
    let corpus = generate_corpus(&structure, config)?;
    fs::write(out, capture_text(&corpus, &structure.base_url))?;
    fs::write(labels, labels_text(&corpus))?;
    let tampered = corpus.iter().filter(|r| r.expected_violation_level.is_some()).count();
    println!("wrote {} requests ({} tampered)", corpus.len(), tampered);
    Ok(ExitCode::SUCCESS)
}

fn cmd_serve(
    structure: &Path,
    listen: SocketAddr,
    journal: Option<&Path>,
    config: MonitorConfig,
) -> Result<ExitCode, Failure> {
    let structure = load_structure(structure)?;
    let monitor = Arc::new(Monitor::new(config));
    monitor.replace_structure(structure)?;
    if let Some(path) = journal {
        if path.exists() {
            let replayed = monitor.replay_journal(path)?;
            eprintln!("replayed {} journal entries", replayed.accepted);
        }
        monitor.open_journal(path)?;
    }
    runtime()?.block_on(http::serve(monitor, listen))?;
    Ok(ExitCode::SUCCESS)
}
