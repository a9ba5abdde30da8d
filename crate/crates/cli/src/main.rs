//! `reprun`: ingest, analyze, clean, re-execute and report on R replication
//! packages.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use reprun_core::cleaner::{self, CleanOptions};
use reprun_core::executor::{self, ExecError, ExecOptions, InterpreterSpec, Mode};
use reprun_core::ingest::{self, DataverseClient, IngestError, PackageManifest, SearchQuery};
use reprun_core::metrics;
use reprun_core::results::{self, GroupKey, Level, Record, RunStore};

use config::{ConfigFile, Overrides, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_NETWORK: u8 = 3;
const EXIT_UNWRITABLE: u8 = 4;
const EXIT_INTERPRETER: u8 = 5;
const EXIT_EMPTY_STORE: u8 = 6;

/// An error paired with the process exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

type CmdResult = Result<(), Failure>;

trait ExitWith<T> {
    fn exit_with(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> ExitWith<T> for Result<T, E> {
    fn exit_with(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn general<T, E: Into<anyhow::Error>>(r: Result<T, E>) -> Result<T, Failure> {
    r.exit_with(1)
}

#[derive(Parser, Debug)]
#[command(name = "reprun", version, about = "Re-execute R replication packages and report on the outcomes")]
struct Cli {
    /// TOML config file; command-line flags take precedence over it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// More log output (repeat for debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Catalog packages from a Dataverse API or from local directories
    Ingest(IngestArgs),
    /// Compute static metrics over a cataloged corpus
    Analyze(AnalyzeArgs),
    /// Write cleaned copies of every R script in a corpus
    Clean(CleanArgs),
    /// Execute a corpus under the interpreter matrix and record outcomes
    Run(RunArgs),
    /// Derive combined, dataset and grouped reports from a results store
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct IngestArgs {
    /// Output directory; manifests go to DEST/manifests, downloads to DEST/packages
    #[arg(long, value_name = "DIR")]
    dest: PathBuf,
    /// Catalog every subdirectory of DIR as a package instead of using the API
    #[arg(long, value_name = "DIR")]
    local: Option<PathBuf>,
    /// CSV of package metadata for --local; column `package` names the subdirectory
    #[arg(long, value_name = "CSV", requires = "local")]
    metadata: Option<PathBuf>,
    /// Repository base URL; a token is read from DATAVERSE_API_TOKEN [default: https://dataverse.harvard.edu]
    #[arg(long, value_name = "URL")]
    api_base: Option<String>,
    /// Select datasets holding a file with this extension
    #[arg(long, default_value = "R", conflicts_with = "content_type")]
    extension: String,
    /// Select datasets holding a file with this content type instead
    #[arg(long, value_name = "TYPE")]
    content_type: Option<String>,
    /// Maximum number of packages to list
    #[arg(long, default_value_t = 100)]
    limit: usize,
    /// Parallel downloads [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
    /// Re-catalog packages that already have a manifest
    #[arg(long)]
    force: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    /// Corpus directory written by `ingest`
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Output directory [default: CORPUS/analysis]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Per-package output format; the corpus summary is always JSON
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Args, Debug)]
struct CleanArgs {
    /// Corpus directory written by `ingest`
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// Output directory [default: CORPUS/cleaned]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Print a unified diff for every changed file
    #[arg(long)]
    diff: bool,
    /// Mirror used by injected install calls [default: http://cran.us.r-project.org]
    #[arg(long, value_name = "URL")]
    cran_mirror: Option<String>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Corpus directory written by `ingest`
    #[arg(long, value_name = "DIR")]
    corpus: PathBuf,
    /// JSON Lines results store to append to [default: reprun-store.jsonl]
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// Cleaning modes to run, comma separated [default: raw,cleaned]
    #[arg(long, value_delimiter = ',', value_name = "MODE")]
    modes: Option<Vec<Mode>>,
    /// Worker threads, one package each [default: 1]
    #[arg(long)]
    jobs: Option<usize>,
    /// Per-file wall-clock budget in seconds [default: 3600]
    #[arg(long, value_name = "SECS")]
    per_file_secs: Option<f64>,
    /// Per-package wall-clock budget in seconds, per interpreter and mode [default: 18000]
    #[arg(long, value_name = "SECS")]
    per_package_secs: Option<f64>,
    /// Directory for scratch workspaces [default: system temp dir]
    #[arg(long, value_name = "DIR")]
    scratch_root: Option<PathBuf>,
    /// Leave scratch workspaces on disk
    #[arg(long)]
    keep_workspaces: bool,
    /// Cut interpreters off from the network
    #[arg(long)]
    no_network: bool,
    /// Cleaner output from `clean`; without it cleaned mode cleans on the fly
    #[arg(long, value_name = "DIR")]
    cleaned: Option<PathBuf>,
    /// Mirror used when cleaning on the fly [default: http://cran.us.r-project.org]
    #[arg(long, value_name = "URL")]
    cran_mirror: Option<String>,
    /// Interpreter as LABEL=COMMAND with a {script} placeholder; repeatable, replaces the configured matrix
    #[arg(long, value_name = "LABEL=CMD", value_parser = config::parse_interpreter)]
    interpreter: Vec<InterpreterSpec>,
    /// Rerun packages already completed in the store
    #[arg(long)]
    force: bool,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// JSON Lines results store [default: reprun-store.jsonl]
    #[arg(long, value_name = "FILE")]
    store: Option<PathBuf>,
    /// Output directory for report files [default: report/ next to the store]
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Grouping for a grouped report; repeatable
    #[arg(long, value_name = "KEY", value_parser = ["journal", "policy", "year", "subject", "version"])]
    group_by: Vec<String>,
    /// Rate printed for grouped reports
    #[arg(long, default_value = "file", value_parser = ["file", "dataset"])]
    level: String,
    /// Cleaning mode used for grouped reports
    #[arg(long, default_value = "raw")]
    mode: Mode,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let file = match cli.config.as_deref().map(ConfigFile::load).transpose() {
        Ok(f) => f,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a, file),
        Command::Analyze(a) => cmd_analyze(a),
        Command::Clean(a) => cmd_clean(a, file),
        Command::Run(a) => cmd_run(a, file),
        Command::Report(a) => cmd_report(a, file),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn manifest_path(dest: &Path, manifest: &PackageManifest) -> PathBuf {
    dest.join("manifests").join(format!("{}.json", manifest.package.dir_name()))
}

fn read_metadata(path: &Path) -> anyhow::Result<BTreeMap<String, BTreeMap<String, String>>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let key = headers
        .iter()
        .position(|h| h == "package")
        .ok_or_else(|| anyhow!("{} has no `package` column", path.display()))?;
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row?;
        let meta: BTreeMap<String, String> = headers
            .iter()
            .zip(row.iter())
            .enumerate()
            .filter(|&(i, (_, v))| i != key && !v.trim().is_empty())
            .map(|(_, (h, v))| (h.to_string(), v.trim().to_string()))
            .collect();
        out.insert(row.get(key).unwrap_or_default().to_string(), meta);
    }
    Ok(out)
}

fn cmd_ingest(a: IngestArgs, file: Option<ConfigFile>) -> CmdResult {
    let cfg = RunConfig::resolve(
        file,
        &Overrides {
            api_base: a.api_base.clone(),
            jobs: a.jobs,
            ..Default::default()
        },
    )
    .exit_with(EXIT_CONFIG)?;
    fs::create_dir_all(a.dest.join("manifests"))
        .with_context(|| format!("cannot create {}", a.dest.display()))
        .exit_with(EXIT_CONFIG)?;

    if let Some(local) = &a.local {
        let metadata = a
            .metadata
            .as_deref()
            .map(read_metadata)
            .transpose()
            .exit_with(EXIT_CONFIG)?
            .unwrap_or_default();
        let mut dirs: Vec<PathBuf> = fs::read_dir(local)
            .with_context(|| format!("cannot read {}", local.display()))
            .exit_with(EXIT_CONFIG)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        dirs.sort();
        for dir in dirs {
            let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let meta = metadata.get(&name).cloned().unwrap_or_default();
            let root = dir.canonicalize().unwrap_or(dir);
            let manifest = ingest::load_local_package(&root, meta).exit_with(EXIT_CONFIG)?;
            let out = manifest_path(&a.dest, &manifest);
            if out.exists() && !a.force {
                println!("{}: already cataloged", manifest.id());
                continue;
            }
            general(manifest.save(&out))?;
            println!("{}: {} files", manifest.id(), manifest.files.len());
        }
        return Ok(());
    }

    let client = DataverseClient::from_env(&cfg.api_base);
    let query = match &a.content_type {
        Some(ct) => SearchQuery::ContentType(ct.clone()),
        None => SearchQuery::Extension(a.extension.trim_start_matches('.').to_string()),
    };
    let network = |e: IngestError| match e {
        IngestError::Io(_) | IngestError::MissingDirectory(_) => Failure {
            code: 1,
            error: e.into(),
        },
        _ => Failure {
            code: EXIT_NETWORK,
            error: e.into(),
        },
    };
    let refs = ingest::list_packages(&client, &query, a.limit).map_err(network)?;
    let todo: Vec<_> = refs
        .into_iter()
        .filter(|r| {
            let done = a.dest.join("manifests").join(format!("{}.json", r.dir_name())).exists();
            if done && !a.force {
                println!("{}: already cataloged", r.persistent_id);
            }
            a.force || !done
        })
        .collect();
    let mut network_failures = 0;
    for (r, result) in todo.iter().zip(ingest::fetch_all(&client, &todo, &a.dest.join("packages"), cfg.jobs)) {
        match result {
            Ok(manifest) => {
                general(manifest.save(&manifest_path(&a.dest, &manifest)))?;
                let status = serde_json::to_string(&manifest.fetch_status).unwrap_or_default();
                println!("{}: {} ({} files)", manifest.id(), status, manifest.files.len());
            }
            Err(e) => {
                network_failures += 1;
                eprintln!("{}: {e}", r.persistent_id);
            }
        }
    }
    if network_failures > 0 {
        return Err(Failure {
            code: EXIT_NETWORK,
            error: anyhow!("{network_failures} package(s) could not be fetched"),
        });
    }
    Ok(())
}

/// Manifests of a corpus, sorted by package id.
fn load_corpus(corpus: &Path) -> Result<Vec<PackageManifest>, Failure> {
    let dir = corpus.join("manifests");
    let entries = fs::read_dir(&dir)
        .with_context(|| format!("cannot read corpus manifests in {}", dir.display()))
        .exit_with(EXIT_CONFIG)?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    paths.sort();
    let mut manifests = Vec::new();
    for p in paths {
        manifests.push(PackageManifest::load(&p).exit_with(EXIT_CONFIG)?);
    }
    manifests.sort_by(|a, b| a.id().cmp(b.id()));
    Ok(manifests)
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn cmd_analyze(a: AnalyzeArgs) -> CmdResult {
    let manifests = load_corpus(&a.corpus)?;
    let out = a.out.unwrap_or_else(|| a.corpus.join("analysis"));
    general(fs::create_dir_all(&out))?;
    let analyses: Vec<_> = manifests.iter().map(metrics::analyze_package).collect();
    let summary = metrics::corpus_stats(&analyses);
    general(write_json(&out.join("corpus_summary.json"), &summary))?;
    match a.format {
        Format::Json => general(write_json(&out.join("packages.json"), &analyses))?,
        Format::Csv => {
            let census: Vec<_> = analyses.iter().map(|p| p.census_row()).collect();
            general(results::write_csv(&out.join("packages.csv"), &census))?;
            let files: Vec<_> = analyses.iter().flat_map(|p| p.file_rows()).collect();
            general(results::write_csv(&out.join("files.csv"), &files))?;
            general(results::write_csv(&out.join("libraries.csv"), &summary.libraries))?;
        }
    }
    println!(
        "analyzed {} packages, {} R files -> {}",
        summary.package_count,
        analyses.iter().map(|p| p.files.len()).sum::<usize>(),
        out.display()
    );
    Ok(())
}

fn cmd_clean(a: CleanArgs, file: Option<ConfigFile>) -> CmdResult {
    let cfg = RunConfig::resolve(
        file,
        &Overrides {
            cran_mirror: a.cran_mirror.clone(),
            ..Default::default()
        },
    )
    .exit_with(EXIT_CONFIG)?;
    let manifests = load_corpus(&a.corpus)?;
    let out = a.out.unwrap_or_else(|| a.corpus.join("cleaned"));
    fs::create_dir_all(&out)
        .with_context(|| format!("cannot create {}", out.display()))
        .exit_with(EXIT_UNWRITABLE)?;
    let opts = CleanOptions {
        cran_mirror: cfg.cran_mirror,
    };
    let mut reports = Vec::new();
    let mut failed = 0;
    for m in &manifests {
        let pkg_out = executor::cleaned_dir_for(&out, m);
        for report in cleaner::clean_package(m, &pkg_out, &opts) {
            if let Some(e) = &report.error {
                failed += 1;
                eprintln!("{}: {e}", report.path);
            } else if a.diff && !report.actions.is_empty() {
                let original = fs::read(&report.path).unwrap_or_default();
                let cleaned = fs::read_to_string(&report.output_path).unwrap_or_default();
                print!("{}", cleaner::unified_diff(&report.path, &original, &cleaned));
            }
            reports.push(report);
        }
    }
    write_json(&out.join("clean_report.json"), &reports).exit_with(EXIT_UNWRITABLE)?;
    let actions: usize = reports.iter().map(|r| r.actions.len()).sum();
    let changed = reports.iter().filter(|r| !r.actions.is_empty()).count();
    eprintln!(
        "cleaned {} files ({} changed, {} actions) -> {}",
        reports.len(),
        changed,
        actions,
        out.display()
    );
    if failed > 0 {
        return Err(Failure {
            code: EXIT_UNWRITABLE,
            error: anyhow!("{failed} file(s) could not be written"),
        });
    }
    Ok(())
}

fn run_id() -> String {
    format!("{}-{}", chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ"), std::process::id())
}

fn cmd_run(a: RunArgs, file: Option<ConfigFile>) -> CmdResult {
    let cfg = RunConfig::resolve(
        file,
        &Overrides {
            jobs: a.jobs,
            modes: a.modes.clone(),
            store: a.store.clone(),
            scratch_root: a.scratch_root.clone(),
            no_network: a.no_network,
            cran_mirror: a.cran_mirror.clone(),
            per_file_secs: a.per_file_secs,
            per_package_secs: a.per_package_secs,
            interpreters: a.interpreter.clone(),
            ..Default::default()
        },
    )
    .exit_with(EXIT_CONFIG)?;
    executor::check_interpreters(&cfg.interpreters).exit_with(EXIT_INTERPRETER)?;
    let manifests = load_corpus(&a.corpus)?;

    let done = if a.force || !cfg.store.exists() {
        Default::default()
    } else {
        general(RunStore::load(&cfg.store))?.completed()
    };
    let pending: Vec<PackageManifest> = manifests.into_iter().filter(|m| !done.contains(m.id())).collect();
    if !done.is_empty() {
        eprintln!("resuming: {} package(s) already complete, {} to run", done.len(), pending.len());
    }
    if pending.is_empty() {
        println!("nothing to run -> {}", cfg.store.display());
        return Ok(());
    }

    let store = general(RunStore::open(&cfg.store).with_context(|| format!("cannot open store {}", cfg.store.display())))?;
    let snapshot = serde_json::json!({
        "interpreters": cfg.interpreters,
        "budget": cfg.budget,
        "modes": cfg.modes,
        "jobs": cfg.jobs,
        "network_allowed": cfg.network_allowed,
        "cran_mirror": cfg.cran_mirror,
        "corpus": a.corpus,
        "cleaned": a.cleaned,
    });
    general(store.append(&Record::RunStarted {
        run_id: run_id(),
        started_at: chrono::Utc::now(),
        config: snapshot,
    }))?;

    let opts = ExecOptions {
        network_allowed: cfg.network_allowed,
        scratch_root: cfg.scratch_root.clone(),
        keep_workspaces: a.keep_workspaces,
        cleaned_root: a.cleaned.clone(),
        clean_options: CleanOptions {
            cran_mirror: cfg.cran_mirror.clone(),
        },
        ..Default::default()
    };
    let summary = executor::run_matrix(
        &pending,
        &cfg.interpreters,
        cfg.budget,
        &cfg.modes,
        cfg.jobs,
        &opts,
        &mut |rec| store.append(rec),
    )
    .map_err(|e| match e {
        ExecError::InterpreterMissing { .. } | ExecError::InvalidConfig(_) => Failure {
            code: EXIT_INTERPRETER,
            error: e.into(),
        },
        other => Failure {
            code: 1,
            error: other.into(),
        },
    })?;
    println!(
        "{} packages completed ({} skipped), {} outcomes, {} unassigned, {} infrastructure failures -> {}",
        summary.packages_completed,
        summary.packages_skipped,
        summary.outcomes,
        summary.unassigned,
        summary.infrastructure_failures,
        cfg.store.display()
    );
    Ok(())
}

fn cmd_report(a: ReportArgs, file: Option<ConfigFile>) -> CmdResult {
    let cfg = RunConfig::resolve(
        file,
        &Overrides {
            store: a.store.clone(),
            ..Default::default()
        },
    )
    .exit_with(EXIT_CONFIG)?;
    if !cfg.store.exists() {
        return Err(Failure {
            code: EXIT_EMPTY_STORE,
            error: anyhow!("store {} does not exist", cfg.store.display()),
        });
    }
    let loaded = general(RunStore::load(&cfg.store))?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    let tables = loaded.derive();
    if tables.packages.is_empty() {
        return Err(Failure {
            code: EXIT_EMPTY_STORE,
            error: anyhow!("store {} holds no completed packages", cfg.store.display()),
        });
    }
    let out = a.out.unwrap_or_else(|| {
        let parent = cfg.store.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        parent.join("report")
    });
    general(fs::create_dir_all(&out))?;

    let summary = tables.summary();
    let text = summary.to_text();
    general(fs::write(out.join("summary.txt"), &text))?;
    general(write_json(&out.join("summary.json"), &summary))?;
    general(results::write_csv(&out.join("combined.csv"), &tables.combined_rows()))?;
    general(results::write_csv(&out.join("datasets.csv"), &tables.dataset_rows()))?;
    general(results::write_csv(&out.join("outcomes.csv"), &tables.outcome_rows()))?;
    print!("{text}");

    let level: Level = a.level.parse().map_err(|e: String| anyhow!(e)).exit_with(EXIT_CONFIG)?;
    for key in &a.group_by {
        let key: GroupKey = key.parse().map_err(|e: String| anyhow!(e)).exit_with(EXIT_CONFIG)?;
        let rows = results::group_report(&tables, a.mode, key);
        let stem = format!("groups_{}_{}", key.as_str(), a.mode.as_str());
        general(results::write_csv(&out.join(format!("{stem}.csv")), &rows))?;
        general(write_json(&out.join(format!("{stem}.json")), &rows))?;
        println!("\n[{} by {}, {} level]", a.mode.as_str(), key.as_str(), a.level);
        for r in rows {
            let (rate, num, den) = match level {
                Level::File => (r.file_success_rate, r.file_successes, r.n_files),
                Level::Dataset => (r.dataset_success_rate, r.dataset_successes, r.n_datasets),
            };
            let shown = rate.map(|x| format!("{:.1}%", x * 100.0)).unwrap_or_else(|| "undefined".into());
            println!("  {:<30} {:>9} ({num}/{den})", r.group, shown);
        }
    }
    eprintln!("reports written to {}", out.display());
    Ok(())
}
