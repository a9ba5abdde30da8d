//! Re-execution of R scripts under a matrix of interpreters.
//!
//! Each (package, interpreter, mode) triple runs in its own scratch copy of
//! the package. Files run sequentially in lexicographic order under a per-file
//! timeout capped by what remains of the package budget. Children are placed
//! in their own process group so a timeout kills every descendant.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Read};
use std::os::unix::process::CommandExt;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, LazyLock};
use std::thread;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use crossbeam_channel::{bounded, SendTimeoutError};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wait_timeout::ChildExt;

use crate::cleaner::{self, CleanOptions};
use crate::ingest::PackageManifest;
use crate::results::{Record, UnassignedCell};

pub const DEFAULT_STDERR_LIMIT: usize = 16 * 1024;

/// Proxy address that refuses connections; used to cut interpreters off from
/// the network.
const DEAD_PROXY: &str = "http://127.0.0.1:9";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpreterSpec {
    pub label: String,
    /// Argument vector. `{script}` becomes the script path relative to the
    /// working directory, `{workdir}` the absolute working directory.
    pub command: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub release_date: Option<NaiveDate>,
}

impl InterpreterSpec {
    pub fn new(label: &str, command: &[&str]) -> Self {
        InterpreterSpec {
            label: label.to_string(),
            command: command.iter().map(|s| s.to_string()).collect(),
            release_date: None,
        }
    }
    /// R 3.2.1, 3.6.0 and 4.0.1, run from the official `r-base` docker
    /// images.
    pub fn default_matrix() -> Vec<InterpreterSpec> {
        [("R3.2", "3.2.1", (2015, 6, 18)), ("R3.6", "3.6.0", (2019, 4, 26)), ("R4.0", "4.0.1", (2020, 6, 6))]
            .into_iter()
            .map(|(label, version, (y, m, d))| InterpreterSpec {
                label: label.to_string(),
                command: [
                    "docker",
                    "run",
                    "--rm",
                    "-v",
                    "{workdir}:/work",
                    "-w",
                    "/work",
                    &format!("r-base:{version}"),
                    "Rscript",
                    "{script}",
                ]
                .iter()
                .map(|s| s.to_string())
                .collect(),
                release_date: NaiveDate::from_ymd_opt(y, m, d),
            })
            .collect()
    }

    fn argv(&self, script: &str, workdir: &Path) -> Vec<String> {
        let wd = workdir.to_string_lossy();
        self.command
            .iter()
            .map(|a| a.replace("{script}", script).replace("{workdir}", &wd))
            .collect()
    }

    /// Checks the template and that the program can be found.
    pub fn check(&self) -> Result<(), ExecError> {
        let Some(program) = self.command.first() else {
            return Err(ExecError::InvalidConfig(format!("interpreter {} has an empty command", self.label)));
        };
        if !self.command.iter().any(|a| a.contains("{script}")) {
            return Err(ExecError::InvalidConfig(format!(
                "interpreter {} command lacks a {{script}} placeholder",
                self.label
            )));
        }
        if find_program(program).is_none() {
            return Err(ExecError::InterpreterMissing {
                label: self.label.clone(),
                program: program.clone(),
            });
        }
        Ok(())
    }
}

fn find_program(program: &str) -> Option<PathBuf> {
    let p = Path::new(program);
    if p.components().count() > 1 {
        return p.is_file().then(|| p.to_path_buf());
    }
    std::env::var_os("PATH").and_then(|paths| {
        std::env::split_paths(&paths)
            .map(|dir| dir.join(program))
            .find(|c| c.is_file())
    })
}

/// Checks a whole matrix: labels unique, every entry usable.
pub fn check_interpreters(interpreters: &[InterpreterSpec]) -> Result<(), ExecError> {
    if interpreters.is_empty() {
        return Err(ExecError::InvalidConfig("no interpreters configured".into()));
    }
    let mut seen = BTreeSet::new();
    for i in interpreters {
        if !seen.insert(i.label.as_str()) {
            return Err(ExecError::InvalidConfig(format!("duplicate interpreter label {}", i.label)));
        }
        i.check()?;
    }
    Ok(())
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Budget {
    #[serde(rename = "per_file_secs", with = "secs")]
    pub per_file: Duration,
    #[serde(rename = "per_package_secs", with = "secs")]
    pub per_package: Duration,
}

impl Default for Budget {
    fn default() -> Self {
        Budget {
            per_file: Duration::from_secs(3600),
            per_package: Duration::from_secs(5 * 3600),
        }
    }
}

impl Budget {
    pub fn new(per_file: Duration, per_package: Duration) -> Result<Self, ExecError> {
        let b = Budget { per_file, per_package };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), ExecError> {
        if self.per_file.is_zero() || self.per_file > self.per_package {
            return Err(ExecError::InvalidConfig(format!(
                "budget must satisfy 0 < per_file ({:?}) <= per_package ({:?})",
                self.per_file, self.per_package
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Raw,
    Cleaned,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Raw => "raw",
            Mode::Cleaned => "cleaned",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "raw" => Ok(Mode::Raw),
            "cleaned" => Ok(Mode::Cleaned),
            other => Err(format!("unknown mode {other:?} (expected raw or cleaned)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Success,
    Error,
    Tle,
}

/// Declaration order doubles as the tie-break order when categories are
/// folded across interpreters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Setwd,
    Library,
    FilePathOutput,
    ObjectNotFound,
    Other,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 5] = [
        ErrorCategory::Setwd,
        ErrorCategory::Library,
        ErrorCategory::FilePathOutput,
        ErrorCategory::ObjectNotFound,
        ErrorCategory::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Setwd => "setwd",
            ErrorCategory::Library => "library",
            ErrorCategory::FilePathOutput => "file_path_output",
            ErrorCategory::ObjectNotFound => "object_not_found",
            ErrorCategory::Other => "other",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionOutcome {
    pub package_id: String,
    pub file: String,
    pub interpreter_label: String,
    pub cleaning_mode: Mode,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_category: Option<ErrorCategory>,
    pub stderr_tail: String,
    pub wall_time_secs: f64,
    pub exit_code: Option<i32>,
}

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("interpreter {label}: program {program:?} not found")]
    InterpreterMissing { label: String, program: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("cannot prepare workspace: {0}")]
    Workspace(io::Error),
    #[error("cleaned output missing for {0}")]
    MissingCleaned(PathBuf),
    #[error("results store unavailable: {0}")]
    StoreUnavailable(String),
    #[error("run aborted")]
    Aborted,
}

static RULES: LazyLock<Vec<(ErrorCategory, Regex)>> = LazyLock::new(|| {
    let rules: [(ErrorCategory, &str); 4] = [
        (ErrorCategory::Setwd, r"cannot change working directory|setwd"),
        (
            ErrorCategory::Library,
            r"there is no package called|unable to load|package .* is not available",
        ),
        (
            ErrorCategory::FilePathOutput,
            r"cannot open file|No such file or directory|cannot open the connection",
        ),
        (ErrorCategory::ObjectNotFound, r"object .* not found"),
    ];
    rules
        .into_iter()
        .map(|(c, p)| (c, Regex::new(p).expect("static pattern")))
        .collect()
});

/// First matching rule wins; anything unmatched is `Other`.
pub fn classify_error(stderr: &str) -> ErrorCategory {
    RULES
        .iter()
        .find(|(_, re)| re.is_match(stderr))
        .map(|(c, _)| *c)
        .unwrap_or(ErrorCategory::Other)
}

/// Settings shared by every execution in a run.
#[derive(Clone)]
pub struct ExecOptions {
    pub network_allowed: bool,
    pub stderr_limit: usize,
    /// Parent of the scratch workspaces; the system temp dir when unset.
    pub scratch_root: Option<PathBuf>,
    pub keep_workspaces: bool,
    /// Directory holding cleaner output, laid out as
    /// `<cleaned_root>/<package dir>/<relative path>`. When unset, cleaned
    /// mode cleans the scratch copy in place.
    pub cleaned_root: Option<PathBuf>,
    pub clean_options: CleanOptions,
    /// Called with the package id when a worker starts a package. Lets tests
    /// inject worker crashes.
    pub fault_hook: Option<Arc<dyn Fn(&str) + Send + Sync>>,
}

impl Default for ExecOptions {
    fn default() -> Self {
        ExecOptions {
            network_allowed: true,
            stderr_limit: DEFAULT_STDERR_LIMIT,
            scratch_root: None,
            keep_workspaces: false,
            cleaned_root: None,
            clean_options: CleanOptions::default(),
            fault_hook: None,
        }
    }
}

impl std::fmt::Debug for ExecOptions {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExecOptions")
            .field("network_allowed", &self.network_allowed)
            .field("stderr_limit", &self.stderr_limit)
            .field("scratch_root", &self.scratch_root)
            .field("keep_workspaces", &self.keep_workspaces)
            .field("cleaned_root", &self.cleaned_root)
            .finish_non_exhaustive()
    }
}

/// Where the cleaner output for a package lives under a cleaned root.
pub fn cleaned_dir_for(cleaned_root: &Path, manifest: &PackageManifest) -> PathBuf {
    cleaned_root.join(manifest.package.dir_name())
}

fn read_tail(mut pipe: impl Read, limit: usize) -> Vec<u8> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 8192];
    loop {
        match pipe.read(&mut chunk) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                buf.extend_from_slice(&chunk[..n]);
                if buf.len() > limit * 2 {
                    buf.drain(..buf.len() - limit);
                }
            }
        }
    }
    if buf.len() > limit {
        buf.drain(..buf.len() - limit);
    }
    buf
}

fn kill_group(pid: u32) {
    // SAFETY: killpg only sends a signal; a stale group id yields ESRCH.
    unsafe {
        libc::killpg(pid as libc::pid_t, libc::SIGKILL);
    }
}

/// Identity of the outcome being produced.
#[derive(Debug, Clone)]
pub struct RunContext<'a> {
    pub package_id: &'a str,
    pub mode: Mode,
    pub options: &'a ExecOptions,
}

/// Runs one script. `script` is relative to `workdir`.
pub fn execute_file(
    script: &str,
    interpreter: &InterpreterSpec,
    budget: Duration,
    workdir: &Path,
    ctx: &RunContext<'_>,
) -> Result<ExecutionOutcome, ExecError> {
    let workdir = workdir.canonicalize().map_err(ExecError::Workspace)?;
    let argv = interpreter.argv(script, &workdir);
    let (program, args) = argv
        .split_first()
        .ok_or_else(|| ExecError::InvalidConfig(format!("interpreter {} has an empty command", interpreter.label)))?;
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(&workdir)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped())
        .process_group(0);
    if !ctx.options.network_allowed {
        for var in ["http_proxy", "https_proxy", "HTTP_PROXY", "HTTPS_PROXY"] {
            cmd.env(var, DEAD_PROXY);
        }
        cmd.env("REPRUN_OFFLINE", "1");
    }

    let started = Instant::now();
    let mut child = cmd.spawn().map_err(|e| match e.kind() {
        io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => ExecError::InterpreterMissing {
            label: interpreter.label.clone(),
            program: program.clone(),
        },
        _ => ExecError::Workspace(e),
    })?;
    let pid = child.id();
    let stderr = child.stderr.take().expect("stderr is piped");
    let limit = ctx.options.stderr_limit;
    let reader = thread::spawn(move || read_tail(stderr, limit));

    let waited = child.wait_timeout(budget).map_err(ExecError::Workspace)?;
    let status = match waited {
        Some(status) => {
            // reap anything the script left running in its group
            kill_group(pid);
            Some(status)
        }
        None => {
            kill_group(pid);
            let _ = child.wait();
            None
        }
    };
    let wall_time = started.elapsed();
    let tail = reader.join().unwrap_or_default();
    let stderr_tail = String::from_utf8_lossy(&tail).into_owned();

    let (verdict, exit_code, error_category) = match status {
        None => (Verdict::Tle, None, None),
        Some(s) => {
            use std::os::unix::process::ExitStatusExt;
            let code = s.code().or_else(|| s.signal().map(|sig| 128 + sig));
            if s.success() {
                (Verdict::Success, code, None)
            } else {
                (Verdict::Error, code, Some(classify_error(&stderr_tail)))
            }
        }
    };
    Ok(ExecutionOutcome {
        package_id: ctx.package_id.to_string(),
        file: script.to_string(),
        interpreter_label: interpreter.label.clone(),
        cleaning_mode: ctx.mode,
        verdict,
        error_category,
        stderr_tail,
        wall_time_secs: wall_time.as_secs_f64(),
        exit_code,
    })
}

fn copy_tree(from: &Path, to: &Path) -> io::Result<()> {
    for entry in walkdir::WalkDir::new(from) {
        let entry = entry.map_err(io::Error::other)?;
        let rel = entry.path().strip_prefix(from).expect("child of root");
        let dest = to.join(rel);
        if entry.file_type().is_dir() {
            fs::create_dir_all(&dest)?;
        } else if entry.file_type().is_file() {
            fs::copy(entry.path(), &dest)?;
        }
    }
    Ok(())
}

fn prepare_workspace(
    manifest: &PackageManifest,
    mode: Mode,
    opts: &ExecOptions,
) -> Result<tempfile::TempDir, ExecError> {
    let mut builder = tempfile::Builder::new();
    builder.prefix("reprun-");
    let dir = match &opts.scratch_root {
        Some(root) => {
            fs::create_dir_all(root).map_err(ExecError::Workspace)?;
            builder.tempdir_in(root)
        }
        None => builder.tempdir(),
    }
    .map_err(ExecError::Workspace)?;
    copy_tree(&manifest.root, dir.path()).map_err(ExecError::Workspace)?;
    if mode == Mode::Cleaned {
        for entry in manifest.r_scripts() {
            let target = dir.path().join(&entry.relative_path);
            match &opts.cleaned_root {
                Some(root) => {
                    let src = cleaned_dir_for(root, manifest).join(&entry.relative_path);
                    if !src.is_file() {
                        return Err(ExecError::MissingCleaned(src));
                    }
                    fs::copy(&src, &target).map_err(ExecError::Workspace)?;
                }
                None => {
                    let raw = fs::read(&target).map_err(ExecError::Workspace)?;
                    let cleaned = cleaner::clean_source(&raw, &opts.clean_options);
                    fs::write(&target, cleaned.text).map_err(ExecError::Workspace)?;
                }
            }
        }
    }
    Ok(dir)
}

/// Result of running one package in one mode.
#[derive(Debug, Clone, Default)]
pub struct PackageRun {
    pub outcomes: Vec<ExecutionOutcome>,
    pub unassigned: Vec<UnassignedCell>,
    /// Workspaces left on disk because `keep_workspaces` was set.
    pub kept_workspaces: Vec<PathBuf>,
}

/// Runs every R script of a package under each interpreter in `mode`.
pub fn execute_package(
    manifest: &PackageManifest,
    interpreters: &[InterpreterSpec],
    budget: Budget,
    mode: Mode,
    opts: &ExecOptions,
) -> Result<PackageRun, ExecError> {
    let mut run = PackageRun::default();
    run.kept_workspaces = execute_package_with(manifest, interpreters, budget, mode, opts, &mut |rec| {
        match rec {
            Record::Outcome(o) => run.outcomes.push(o),
            Record::Unassigned(u) => run.unassigned.push(u),
            _ => {}
        }
        true
    })?;
    Ok(run)
}

/// Streaming form of [`execute_package`]: every outcome or unassigned cell
/// is handed to `emit` as soon as it is known. `emit` returning false stops
/// the package with [`ExecError::Aborted`].
pub fn execute_package_with(
    manifest: &PackageManifest,
    interpreters: &[InterpreterSpec],
    budget: Budget,
    mode: Mode,
    opts: &ExecOptions,
    emit: &mut dyn FnMut(Record) -> bool,
) -> Result<Vec<PathBuf>, ExecError> {
    let scripts: Vec<String> = manifest.r_scripts().iter().map(|e| e.relative_path.clone()).collect();
    let ctx = RunContext {
        package_id: manifest.id(),
        mode,
        options: opts,
    };
    let mut kept = Vec::new();
    for interpreter in interpreters {
        let workspace = prepare_workspace(manifest, mode, opts)?;
        let started = Instant::now();
        for (i, script) in scripts.iter().enumerate() {
            let remaining = budget.per_package.saturating_sub(started.elapsed());
            if remaining.is_zero() {
                for rest in &scripts[i..] {
                    let cell = UnassignedCell {
                        package_id: manifest.id().to_string(),
                        file: rest.clone(),
                        interpreter_label: interpreter.label.clone(),
                        cleaning_mode: mode,
                    };
                    if !emit(Record::Unassigned(cell)) {
                        return Err(ExecError::Aborted);
                    }
                }
                break;
            }
            let outcome = execute_file(script, interpreter, budget.per_file.min(remaining), workspace.path(), &ctx)?;
            log::debug!(
                "{} {} {} {}: {:?}",
                manifest.id(),
                interpreter.label,
                mode.as_str(),
                script,
                outcome.verdict
            );
            if !emit(Record::Outcome(outcome)) {
                return Err(ExecError::Aborted);
            }
        }
        if opts.keep_workspaces {
            kept.push(workspace.keep());
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MatrixSummary {
    pub packages_completed: usize,
    pub packages_skipped: usize,
    pub infrastructure_failures: usize,
    pub outcomes: usize,
    pub unassigned: usize,
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    payload
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| payload.downcast_ref::<String>().cloned())
        .unwrap_or_else(|| "unknown panic".to_string())
}

/// Why a package is not executed at all, if it is not.
fn skip_reason(manifest: &PackageManifest) -> Option<String> {
    if !manifest.is_executable() {
        let status = serde_json::to_value(&manifest.fetch_status).unwrap_or_default();
        return Some(format!("fetch_status {status}"));
    }
    manifest.r_scripts().is_empty().then(|| "no_r_files".to_string())
}

/// Runs `manifests` over a pool of `jobs` workers. Records are handed to
/// `sink` on the calling thread in completion order. A package's
/// `PackageComplete` record follows all of its outcomes, so a store cut short
/// can be resumed by rerunning packages without one.
pub fn run_matrix(
    manifests: &[PackageManifest],
    interpreters: &[InterpreterSpec],
    budget: Budget,
    modes: &[Mode],
    jobs: usize,
    opts: &ExecOptions,
    sink: &mut dyn FnMut(&Record) -> io::Result<()>,
) -> Result<MatrixSummary, ExecError> {
    if jobs == 0 {
        return Err(ExecError::InvalidConfig("jobs must be at least 1".into()));
    }
    if modes.is_empty() {
        return Err(ExecError::InvalidConfig("no modes selected".into()));
    }
    budget.validate()?;
    let mut modes = modes.to_vec();
    modes.sort();
    modes.dedup();

    let (work_tx, work_rx) = bounded::<&PackageManifest>(manifests.len().max(1));
    for m in manifests {
        work_tx.send(m).expect("receiver alive");
    }
    drop(work_tx);
    let (rec_tx, rec_rx) = bounded::<Record>(256);
    let abort = AtomicBool::new(false);
    let mut summary = MatrixSummary::default();
    let mut store_error: Option<String> = None;

    thread::scope(|scope| {
        for _ in 0..jobs.min(manifests.len().max(1)) {
            let work_rx = work_rx.clone();
            let rec_tx = rec_tx.clone();
            let abort = &abort;
            let modes = &modes;
            scope.spawn(move || {
                let send = |rec: Record| -> bool {
                    let mut rec = rec;
                    loop {
                        if abort.load(Ordering::SeqCst) {
                            return false;
                        }
                        match rec_tx.send_timeout(rec, Duration::from_millis(100)) {
                            Ok(()) => return true,
                            Err(SendTimeoutError::Timeout(r)) => rec = r,
                            Err(SendTimeoutError::Disconnected(_)) => return false,
                        }
                    }
                };
                while let Ok(manifest) = work_rx.recv() {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let id = manifest.id().to_string();
                    if !send(Record::registered(&manifest.package)) {
                        break;
                    }
                    if let Some(reason) = skip_reason(manifest) {
                        if !send(Record::PackageSkipped {
                            package_id: id.clone(),
                            reason,
                        }) || !send(Record::PackageComplete { package_id: id })
                        {
                            break;
                        }
                        continue;
                    }
                    let result = panic::catch_unwind(AssertUnwindSafe(|| {
                        if let Some(hook) = &opts.fault_hook {
                            hook(&id);
                        }
                        for &mode in modes {
                            execute_package_with(manifest, interpreters, budget, mode, opts, &mut |r| send(r))?;
                        }
                        Ok::<(), ExecError>(())
                    }));
                    let final_record = match result {
                        Ok(Ok(())) => Record::PackageComplete { package_id: id },
                        Ok(Err(ExecError::Aborted)) => break,
                        Ok(Err(e)) => Record::InfrastructureFailure {
                            package_id: id,
                            message: e.to_string(),
                        },
                        Err(payload) => Record::InfrastructureFailure {
                            package_id: id,
                            message: format!("worker panicked: {}", panic_message(payload.as_ref())),
                        },
                    };
                    if !send(final_record) {
                        break;
                    }
                }
            });
        }
        drop(rec_tx);
        for rec in rec_rx.iter() {
            if store_error.is_some() {
                continue;
            }
            if let Err(e) = sink(&rec) {
                store_error = Some(e.to_string());
                abort.store(true, Ordering::SeqCst);
                continue;
            }
            match &rec {
                Record::Outcome(_) => summary.outcomes += 1,
                Record::Unassigned(_) => summary.unassigned += 1,
                Record::PackageComplete { .. } => summary.packages_completed += 1,
                Record::PackageSkipped { .. } => summary.packages_skipped += 1,
                Record::InfrastructureFailure { .. } => summary.infrastructure_failures += 1,
                _ => {}
            }
        }
    });

    match store_error {
        Some(e) => Err(ExecError::StoreUnavailable(e)),
        None => Ok(summary),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_order() {
        let cases = [
            (r#"Error in setwd("/x") : cannot change working directory"#, ErrorCategory::Setwd),
            ("Error in library(foo) : there is no package called \u{2018}foo\u{2019}", ErrorCategory::Library),
            ("Warning: package 'zz' is not available (for R version 3.6.0)", ErrorCategory::Library),
            ("Error: package or namespace load failed for 'rJava':\n unable to load shared object", ErrorCategory::Library),
            ("cannot open file 'x.csv': No such file or directory", ErrorCategory::FilePathOutput),
            ("Error in file(file, \"rt\") : cannot open the connection", ErrorCategory::FilePathOutput),
            ("Error: object 'y' not found", ErrorCategory::ObjectNotFound),
            ("Error in lm.fit(x, y) : 0 (non-NA) cases", ErrorCategory::Other),
            ("", ErrorCategory::Other),
            // earlier rules win over later ones
            ("cannot change working directory\nobject 'a' not found", ErrorCategory::Setwd),
        ];
        for (text, want) in cases {
            assert_eq!(classify_error(text), want, "{text}");
        }
    }

    #[test]
    fn budget_invariant() {
        assert!(Budget::new(Duration::from_secs(2), Duration::from_secs(1)).is_err());
        assert!(Budget::new(Duration::ZERO, Duration::from_secs(1)).is_err());
        assert!(Budget::default().validate().is_ok());
        let json = serde_json::to_string(&Budget::default()).unwrap();
        assert_eq!(json, r#"{"per_file_secs":3600.0,"per_package_secs":18000.0}"#);
    }

    #[test]
    fn default_matrix_labels() {
        let m = InterpreterSpec::default_matrix();
        let labels: Vec<_> = m.iter().map(|i| i.label.as_str()).collect();
        assert_eq!(labels, ["R3.2", "R3.6", "R4.0"]);
        assert!(m.iter().all(|i| i.command.iter().any(|a| a == "{script}")));
        assert_eq!(m[0].argv("a.R", Path::new("/w"))[4], "/w:/work");
    }

    #[test]
    fn interpreter_checks() {
        let sh = InterpreterSpec::new("sh", &["sh", "{script}"]);
        assert!(sh.check().is_ok());
        let missing = InterpreterSpec::new("x", &["definitely-not-a-program-4821", "{script}"]);
        assert!(matches!(missing.check(), Err(ExecError::InterpreterMissing { .. })));
        let no_placeholder = InterpreterSpec::new("y", &["sh", "-c", "true"]);
        assert!(matches!(no_placeholder.check(), Err(ExecError::InvalidConfig(_))));
        assert!(check_interpreters(&[sh.clone(), sh]).is_err());
        assert!(check_interpreters(&[]).is_err());
    }

    #[test]
    fn stderr_tail_is_bounded() {
        let data = vec![b'a'; 100_000];
        let mut with_end = data.clone();
        with_end.extend_from_slice(b"END");
        let tail = read_tail(&with_end[..], 1024);
        assert_eq!(tail.len(), 1024);
        assert!(tail.ends_with(b"END"));
        assert_eq!(read_tail(&b"short"[..], 1024), b"short");
    }

    #[test]
    fn sh_scripts_as_interpreter() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("ok.sh"), "exit 0\n").unwrap();
        fs::write(dir.path().join("bad.sh"), "echo 'object x not found' >&2; exit 3\n").unwrap();
        let sh = InterpreterSpec::new("sh", &["sh", "{script}"]);
        let opts = ExecOptions::default();
        let ctx = RunContext {
            package_id: "p",
            mode: Mode::Raw,
            options: &opts,
        };
        let ok = execute_file("ok.sh", &sh, Duration::from_secs(5), dir.path(), &ctx).unwrap();
        assert_eq!((ok.verdict, ok.exit_code), (Verdict::Success, Some(0)));
        let bad = execute_file("bad.sh", &sh, Duration::from_secs(5), dir.path(), &ctx).unwrap();
        assert_eq!(bad.verdict, Verdict::Error);
        assert_eq!(bad.exit_code, Some(3));
        assert_eq!(bad.error_category, Some(ErrorCategory::ObjectNotFound));
        assert!(bad.stderr_tail.contains("object x not found"));
    }

    #[test]
    fn offline_sets_dead_proxy() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("env.sh"),
            "[ \"$https_proxy\" = http://127.0.0.1:9 ] && [ \"$REPRUN_OFFLINE\" = 1 ]\n",
        )
        .unwrap();
        let sh = InterpreterSpec::new("sh", &["sh", "{script}"]);
        let mut opts = ExecOptions::default();
        let run = |opts: &ExecOptions| {
            let ctx = RunContext {
                package_id: "p",
                mode: Mode::Raw,
                options: opts,
            };
            execute_file("env.sh", &sh, Duration::from_secs(5), dir.path(), &ctx)
                .unwrap()
                .verdict
        };
        assert_eq!(run(&opts), Verdict::Error);
        opts.network_allowed = false;
        assert_eq!(run(&opts), Verdict::Success);
    }
}
