//! Outcome persistence and the folding rules that turn per-interpreter
//! outcomes into file-level, dataset-level and grouped success rates.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::{ErrorCategory, ExecutionOutcome, Mode, Verdict};
use crate::ingest::PackageRef;

/// A (file, interpreter, mode) cell that never ran because the package budget
/// was used up first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnassignedCell {
    pub package_id: String,
    pub file: String,
    pub interpreter_label: String,
    pub cleaning_mode: Mode,
}

/// One line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Record {
    RunStarted {
        run_id: String,
        started_at: DateTime<Utc>,
        config: serde_json::Value,
    },
    PackageRegistered {
        package_id: String,
        #[serde(default)]
        title: String,
        #[serde(default)]
        publication_date: Option<NaiveDate>,
        #[serde(default)]
        metadata: BTreeMap<String, String>,
    },
    Outcome(ExecutionOutcome),
    Unassigned(UnassignedCell),
    PackageSkipped {
        package_id: String,
        reason: String,
    },
    InfrastructureFailure {
        package_id: String,
        message: String,
    },
    /// Written after every other record of a package; marks it done.
    PackageComplete {
        package_id: String,
    },
}

impl Record {
    pub fn registered(package: &PackageRef) -> Record {
        Record::PackageRegistered {
            package_id: package.persistent_id.clone(),
            title: package.title.clone(),
            publication_date: package.publication_date,
            metadata: package.metadata.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinedVerdict {
    Success,
    Error,
    Tle,
    Unassigned,
}

impl CombinedVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            CombinedVerdict::Success => "success",
            CombinedVerdict::Error => "error",
            CombinedVerdict::Tle => "tle",
            CombinedVerdict::Unassigned => "unassigned",
        }
    }
}

/// Folds one file's verdicts across interpreters: any success wins, then any
/// timeout, then error. No verdicts at all means unassigned.
pub fn combine_outcomes(verdicts: &[Verdict]) -> CombinedVerdict {
    if verdicts.contains(&Verdict::Success) {
        CombinedVerdict::Success
    } else if verdicts.contains(&Verdict::Tle) {
        CombinedVerdict::Tle
    } else if verdicts.is_empty() {
        CombinedVerdict::Unassigned
    } else {
        CombinedVerdict::Error
    }
}

/// Most frequent category, ties going to the earlier category.
pub fn dominant_category(categories: &[ErrorCategory]) -> Option<ErrorCategory> {
    let mut counts: BTreeMap<ErrorCategory, usize> = BTreeMap::new();
    for &c in categories {
        *counts.entry(c).or_default() += 1;
    }
    let max = *counts.values().max()?;
    counts.into_iter().find(|&(_, n)| n == max).map(|(c, _)| c)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CombinedResult {
    pub package_id: String,
    pub file: String,
    pub cleaning_mode: Mode,
    pub verdict: CombinedVerdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_category: Option<ErrorCategory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetVerdict {
    Success,
    Error,
    ExcludedTle,
    /// No file of the package produced a verdict.
    ExcludedNoResults,
}

impl DatasetVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetVerdict::Success => "success",
            DatasetVerdict::Error => "error",
            DatasetVerdict::ExcludedTle => "excluded_tle",
            DatasetVerdict::ExcludedNoResults => "excluded_no_results",
        }
    }
}

/// Folds a package's combined file results: any success wins, otherwise any
/// timeout excludes the package, otherwise error. Unassigned files carry no
/// result; a package with nothing else is excluded for lack of results.
pub fn aggregate_dataset(file_verdicts: &[CombinedVerdict]) -> DatasetVerdict {
    if file_verdicts.contains(&CombinedVerdict::Success) {
        DatasetVerdict::Success
    } else if file_verdicts.contains(&CombinedVerdict::Tle) {
        DatasetVerdict::ExcludedTle
    } else if file_verdicts.contains(&CombinedVerdict::Error) {
        DatasetVerdict::Error
    } else {
        DatasetVerdict::ExcludedNoResults
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictCounts {
    pub success: usize,
    pub error: usize,
    pub tle: usize,
    pub unassigned: usize,
}

impl VerdictCounts {
    pub fn of(verdicts: &[CombinedVerdict]) -> Self {
        let mut c = VerdictCounts::default();
        for v in verdicts {
            match v {
                CombinedVerdict::Success => c.success += 1,
                CombinedVerdict::Error => c.error += 1,
                CombinedVerdict::Tle => c.tle += 1,
                CombinedVerdict::Unassigned => c.unassigned += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetResult {
    pub package_id: String,
    pub cleaning_mode: Mode,
    pub verdict: DatasetVerdict,
    pub counts: VerdictCounts,
}

/// Dataset result for files that all belong to one package and mode.
pub fn dataset_result(package_id: &str, mode: Mode, files: &[CombinedResult]) -> DatasetResult {
    let verdicts: Vec<CombinedVerdict> = files.iter().map(|f| f.verdict).collect();
    DatasetResult {
        package_id: package_id.to_string(),
        cleaning_mode: mode,
        verdict: aggregate_dataset(&verdicts),
        counts: VerdictCounts::of(&verdicts),
    }
}

/// A success rate with its counts. Timeouts, exclusions and unassigned
/// cells are left out of the denominator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rate {
    pub numerator: usize,
    pub denominator: usize,
    pub rate: Option<f64>,
}

impl Rate {
    pub fn new(successes: usize, errors: usize) -> Self {
        let denominator = successes + errors;
        Rate {
            numerator: successes,
            denominator,
            rate: (denominator > 0).then(|| successes as f64 / denominator as f64),
        }
    }

    pub fn display(&self) -> String {
        match self.rate {
            Some(r) => format!("{:.1}% ({}/{})", r * 100.0, self.numerator, self.denominator),
            None => format!("undefined (0/{})", self.denominator),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    File,
    Dataset,
}

impl std::str::FromStr for Level {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "file" => Ok(Level::File),
            "dataset" => Ok(Level::Dataset),
            other => Err(format!("unknown level {other:?} (expected file or dataset)")),
        }
    }
}

pub fn file_success_rate(results: &[CombinedResult]) -> Rate {
    let c = VerdictCounts::of(&results.iter().map(|r| r.verdict).collect::<Vec<_>>());
    Rate::new(c.success, c.error)
}

pub fn dataset_success_rate(results: &[DatasetResult]) -> Rate {
    let s = results.iter().filter(|d| d.verdict == DatasetVerdict::Success).count();
    let e = results.iter().filter(|d| d.verdict == DatasetVerdict::Error).count();
    Rate::new(s, e)
}

/// Rate over raw per-interpreter outcomes.
pub fn outcome_success_rate<'a>(outcomes: impl IntoIterator<Item = &'a ExecutionOutcome>) -> Rate {
    let (mut s, mut e) = (0, 0);
    for o in outcomes {
        match o.verdict {
            Verdict::Success => s += 1,
            Verdict::Error => e += 1,
            Verdict::Tle => {}
        }
    }
    Rate::new(s, e)
}

#[derive(Debug, Error)]
pub enum ResultsError {
    #[error("raw and cleaned runs cover different files ({only_raw} only raw, {only_cleaned} only cleaned; e.g. {example})")]
    FileSetMismatch {
        only_raw: usize,
        only_cleaned: usize,
        example: String,
    },
    #[error("store {path}: line {line} is corrupt: {message}")]
    Corrupt {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-file effect of cleaning, restricted to files with an explicit success
/// or error verdict in both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningEffectReport {
    pub considered: usize,
    /// Files left out because one of the modes timed out or was unassigned.
    pub excluded: usize,
    pub fixed: usize,
    pub broken: usize,
    pub unchanged_success: usize,
    pub unchanged_error: usize,
    /// raw state -> cleaned state -> count. States are `success` or an error
    /// category name.
    pub transitions: BTreeMap<String, BTreeMap<String, usize>>,
    pub raw_rate: Rate,
    pub cleaned_rate: Rate,
    pub best_of_both: Rate,
}

fn state_name(r: &CombinedResult) -> String {
    match r.verdict {
        CombinedVerdict::Success => "success".to_string(),
        _ => r.error_category.unwrap_or(ErrorCategory::Other).as_str().to_string(),
    }
}

fn is_explicit(r: &CombinedResult) -> bool {
    matches!(r.verdict, CombinedVerdict::Success | CombinedVerdict::Error)
}

pub fn compare_runs(raw: &[CombinedResult], cleaned: &[CombinedResult]) -> Result<CleaningEffectReport, ResultsError> {
    let key = |r: &CombinedResult| (r.package_id.clone(), r.file.clone());
    let raw_map: BTreeMap<_, _> = raw.iter().map(|r| (key(r), r)).collect();
    let cleaned_map: BTreeMap<_, _> = cleaned.iter().map(|r| (key(r), r)).collect();
    let raw_keys: BTreeSet<_> = raw_map.keys().cloned().collect();
    let cleaned_keys: BTreeSet<_> = cleaned_map.keys().cloned().collect();
    if raw_keys != cleaned_keys {
        let only_raw: Vec<_> = raw_keys.difference(&cleaned_keys).collect();
        let only_cleaned: Vec<_> = cleaned_keys.difference(&raw_keys).collect();
        let example = only_raw
            .first()
            .or(only_cleaned.first())
            .map(|(p, f)| format!("{p}/{f}"))
            .unwrap_or_default();
        return Err(ResultsError::FileSetMismatch {
            only_raw: only_raw.len(),
            only_cleaned: only_cleaned.len(),
            example,
        });
    }

    let mut report = CleaningEffectReport {
        considered: 0,
        excluded: 0,
        fixed: 0,
        broken: 0,
        unchanged_success: 0,
        unchanged_error: 0,
        transitions: BTreeMap::new(),
        raw_rate: Rate::default(),
        cleaned_rate: Rate::default(),
        best_of_both: Rate::default(),
    };
    let (mut raw_ok, mut cleaned_ok, mut best_ok) = (0, 0, 0);
    for (k, r) in &raw_map {
        let c = cleaned_map[k];
        if !is_explicit(r) || !is_explicit(c) {
            report.excluded += 1;
            continue;
        }
        report.considered += 1;
        let rs = r.verdict == CombinedVerdict::Success;
        let cs = c.verdict == CombinedVerdict::Success;
        match (rs, cs) {
            (false, true) => report.fixed += 1,
            (true, false) => report.broken += 1,
            (true, true) => report.unchanged_success += 1,
            (false, false) => report.unchanged_error += 1,
        }
        raw_ok += rs as usize;
        cleaned_ok += cs as usize;
        best_ok += (rs || cs) as usize;
        *report
            .transitions
            .entry(state_name(r))
            .or_default()
            .entry(state_name(c))
            .or_default() += 1;
    }
    let n = report.considered;
    report.raw_rate = Rate::new(raw_ok, n - raw_ok);
    report.cleaned_rate = Rate::new(cleaned_ok, n - cleaned_ok);
    report.best_of_both = Rate::new(best_ok, n - best_ok);
    Ok(report)
}

/// Package identity and metadata as registered in the store.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageInfo {
    pub package_id: String,
    pub title: String,
    pub publication_date: Option<NaiveDate>,
    pub metadata: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Journal,
    Policy,
    Year,
    Subject,
    Version,
}

impl GroupKey {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupKey::Journal => "journal",
            GroupKey::Policy => "policy",
            GroupKey::Year => "year",
            GroupKey::Subject => "subject",
            GroupKey::Version => "version",
        }
    }
}

impl std::str::FromStr for GroupKey {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "journal" => Ok(GroupKey::Journal),
            "policy" | "policy_class" => Ok(GroupKey::Policy),
            "year" => Ok(GroupKey::Year),
            "subject" => Ok(GroupKey::Subject),
            "version" | "interpreter_label" => Ok(GroupKey::Version),
            other => Err(format!(
                "unknown group key {other:?} (expected journal, policy, year, subject or version)"
            )),
        }
    }
}

pub const UNLABELED: &str = "(unlabeled)";
const GENERIC_SUBJECT: &str = "social science";

fn is_generic_subject(label: &str) -> bool {
    let l = label.trim().to_ascii_lowercase();
    l == GENERIC_SUBJECT || l == "social sciences"
}

/// Subject labels after the specificity rule: the generic social-science
/// label is dropped whenever a more specific one is present.
pub fn subject_labels(raw: &str) -> Vec<String> {
    let labels: Vec<String> = raw
        .split([';', ','])
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let specific: Vec<String> = labels.iter().filter(|l| !is_generic_subject(l)).cloned().collect();
    let mut out = if specific.is_empty() { labels } else { specific };
    out.sort();
    out.dedup();
    out
}

/// Group labels a package belongs to under `key`. `Version` is not a package
/// attribute and yields nothing here.
pub fn package_groups(info: &PackageInfo, key: GroupKey) -> Vec<String> {
    let meta = |k: &str| info.metadata.get(k).map(|v| v.trim()).filter(|v| !v.is_empty());
    let labels = match key {
        GroupKey::Journal => meta("journal").map(|v| vec![v.to_string()]).unwrap_or_default(),
        GroupKey::Policy => meta("policy_class").map(|v| vec![v.to_string()]).unwrap_or_default(),
        GroupKey::Year => meta("year")
            .map(str::to_string)
            .or_else(|| info.publication_date.map(|d| d.year().to_string()))
            .map(|y| vec![y])
            .unwrap_or_default(),
        GroupKey::Subject => meta("subject").map(subject_labels).unwrap_or_default(),
        GroupKey::Version => Vec::new(),
    };
    if labels.is_empty() {
        vec![UNLABELED.to_string()]
    } else {
        labels
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub file_success_rate: Option<f64>,
    pub dataset_success_rate: Option<f64>,
    pub n_files: usize,
    pub n_datasets: usize,
    pub file_successes: usize,
    pub dataset_successes: usize,
}

impl GroupRow {
    fn new(group: String, file: Rate, dataset: Rate) -> Self {
        GroupRow {
            group,
            file_success_rate: file.rate,
            dataset_success_rate: dataset.rate,
            n_files: file.denominator,
            n_datasets: dataset.denominator,
            file_successes: file.numerator,
            dataset_successes: dataset.numerator,
        }
    }
}

/// Success rates per group for one cleaning mode. Package-level keys use
/// combined and dataset results; `Version` uses each interpreter's own
/// outcomes.
pub fn group_report(tables: &DerivedTables, mode: Mode, key: GroupKey) -> Vec<GroupRow> {
    if key == GroupKey::Version {
        let mut by_label: BTreeMap<&str, Vec<&ExecutionOutcome>> = BTreeMap::new();
        for o in tables.outcomes.iter().filter(|o| o.cleaning_mode == mode) {
            by_label.entry(o.interpreter_label.as_str()).or_default().push(o);
        }
        return by_label
            .into_iter()
            .map(|(label, outcomes)| {
                let mut per_package: BTreeMap<&str, Vec<CombinedVerdict>> = BTreeMap::new();
                for o in &outcomes {
                    per_package.entry(&o.package_id).or_default().push(match o.verdict {
                        Verdict::Success => CombinedVerdict::Success,
                        Verdict::Error => CombinedVerdict::Error,
                        Verdict::Tle => CombinedVerdict::Tle,
                    });
                }
                let datasets: Vec<DatasetResult> = per_package
                    .into_iter()
                    .map(|(p, v)| DatasetResult {
                        package_id: p.to_string(),
                        cleaning_mode: mode,
                        verdict: aggregate_dataset(&v),
                        counts: VerdictCounts::of(&v),
                    })
                    .collect();
                GroupRow::new(
                    label.to_string(),
                    outcome_success_rate(outcomes.iter().copied()),
                    dataset_success_rate(&datasets),
                )
            })
            .collect();
    }

    let mut files: BTreeMap<String, Vec<CombinedResult>> = BTreeMap::new();
    let mut datasets: BTreeMap<String, Vec<DatasetResult>> = BTreeMap::new();
    let groups_of = |pid: &str| {
        tables
            .packages
            .get(pid)
            .map(|info| package_groups(info, key))
            .unwrap_or_else(|| vec![UNLABELED.to_string()])
    };
    for r in tables.combined.iter().filter(|r| r.cleaning_mode == mode) {
        for g in groups_of(&r.package_id) {
            files.entry(g).or_default().push(r.clone());
        }
    }
    for d in tables.datasets.iter().filter(|d| d.cleaning_mode == mode) {
        for g in groups_of(&d.package_id) {
            datasets.entry(g).or_default().push(d.clone());
        }
    }
    let names: BTreeSet<String> = files.keys().chain(datasets.keys()).cloned().collect();
    names
        .into_iter()
        .map(|g| {
            let f = files.get(&g).map(|v| file_success_rate(v)).unwrap_or_default();
            let d = datasets.get(&g).map(|v| dataset_success_rate(v)).unwrap_or_default();
            GroupRow::new(g, f, d)
        })
        .collect()
}

/// Append-only JSON Lines log of [`Record`]s. Each record is written with a
/// single `write` on a descriptor opened in append mode, so concurrent
/// producers never interleave within a line.
#[derive(Debug)]
pub struct RunStore {
    path: PathBuf,
    file: File,
}

impl RunStore {
    /// Opens or creates the log. A torn final line left by an interrupted
    /// writer is cut off so new records start on a fresh line.
    pub fn open(path: &Path) -> io::Result<Self> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        repair_tail(path)?;
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RunStore {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &Record) -> io::Result<()> {
        let mut line = serde_json::to_vec(record).map_err(io::Error::other)?;
        line.push(b'\n');
        (&self.file).write_all(&line)
    }

    pub fn load(path: &Path) -> Result<LoadedStore, ResultsError> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .collect();
        let mut records = Vec::with_capacity(lines.len());
        let mut warnings = Vec::new();
        let mut truncated_tail = false;
        for (i, (no, line)) in lines.iter().enumerate() {
            match serde_json::from_str::<Record>(line) {
                Ok(r) => records.push(r),
                Err(e) if i + 1 == lines.len() => {
                    truncated_tail = true;
                    let msg = format!("{}: dropped torn final record on line {}: {e}", path.display(), no + 1);
                    log::warn!("{msg}");
                    warnings.push(msg);
                }
                Err(e) => {
                    return Err(ResultsError::Corrupt {
                        path: path.to_path_buf(),
                        line: no + 1,
                        message: e.to_string(),
                    })
                }
            }
        }
        Ok(LoadedStore {
            records,
            warnings,
            truncated_tail,
        })
    }
}

fn repair_tail(path: &Path) -> io::Result<()> {
    let mut file = match OpenOptions::new().read(true).write(true).open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(e),
    };
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes)?;
    if bytes.is_empty() || bytes.ends_with(b"\n") {
        return Ok(());
    }
    let cut = bytes.iter().rposition(|&b| b == b'\n').map(|p| p + 1).unwrap_or(0);
    if serde_json::from_slice::<Record>(&bytes[cut..]).is_ok() {
        file.seek(SeekFrom::End(0))?;
        file.write_all(b"\n")?;
    } else {
        log::warn!("{}: discarding torn final record ({} bytes)", path.display(), bytes.len() - cut);
        file.set_len(cut as u64)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadedStore {
    pub records: Vec<Record>,
    pub warnings: Vec<String>,
    pub truncated_tail: bool,
}

/// Tables rebuilt from the log. Only packages with a completion record
/// contribute; for each cell the latest record wins.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct DerivedTables {
    pub run_ids: Vec<String>,
    pub packages: BTreeMap<String, PackageInfo>,
    pub modes: Vec<Mode>,
    pub outcomes: Vec<ExecutionOutcome>,
    pub unassigned: Vec<UnassignedCell>,
    pub combined: Vec<CombinedResult>,
    pub datasets: Vec<DatasetResult>,
    pub skipped: BTreeMap<String, String>,
    /// Latest failure message per package that has not completed since.
    pub infrastructure_failures: BTreeMap<String, String>,
    /// Registered packages without a completion record.
    pub incomplete: Vec<String>,
}

enum Cell {
    Ran(ExecutionOutcome),
    Unassigned(UnassignedCell),
}

impl LoadedStore {
    /// Ids of packages that have a completion record.
    pub fn completed(&self) -> BTreeSet<String> {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::PackageComplete { package_id } => Some(package_id.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn derive(&self) -> DerivedTables {
        let completed = self.completed();
        let mut t = DerivedTables::default();
        let mut cells: HashMap<(String, String, String, Mode), Cell> = HashMap::new();
        let mut registered = BTreeSet::new();
        let mut modes = BTreeSet::new();
        for r in &self.records {
            match r {
                Record::RunStarted { run_id, .. } => t.run_ids.push(run_id.clone()),
                Record::PackageRegistered {
                    package_id,
                    title,
                    publication_date,
                    metadata,
                } => {
                    registered.insert(package_id.clone());
                    t.packages.insert(
                        package_id.clone(),
                        PackageInfo {
                            package_id: package_id.clone(),
                            title: title.clone(),
                            publication_date: *publication_date,
                            metadata: metadata.clone(),
                        },
                    );
                }
                Record::Outcome(o) => {
                    modes.insert(o.cleaning_mode);
                    let k = (o.package_id.clone(), o.file.clone(), o.interpreter_label.clone(), o.cleaning_mode);
                    cells.insert(k, Cell::Ran(o.clone()));
                }
                Record::Unassigned(u) => {
                    modes.insert(u.cleaning_mode);
                    let k = (u.package_id.clone(), u.file.clone(), u.interpreter_label.clone(), u.cleaning_mode);
                    cells.insert(k, Cell::Unassigned(u.clone()));
                }
                Record::PackageSkipped { package_id, reason } => {
                    t.skipped.insert(package_id.clone(), reason.clone());
                }
                Record::InfrastructureFailure { package_id, message } => {
                    t.infrastructure_failures.insert(package_id.clone(), message.clone());
                }
                Record::PackageComplete { package_id } => {
                    t.infrastructure_failures.remove(package_id);
                }
            }
        }
        t.modes = modes.into_iter().collect();
        t.packages.retain(|id, _| completed.contains(id));
        t.skipped.retain(|id, _| completed.contains(id));
        t.incomplete = registered.difference(&completed).cloned().collect();

        let mut per_file: BTreeMap<(String, Mode, String), (Vec<Verdict>, Vec<ErrorCategory>)> = BTreeMap::new();
        for (_, cell) in cells {
            match cell {
                Cell::Ran(o) if completed.contains(&o.package_id) => {
                    let e = per_file
                        .entry((o.package_id.clone(), o.cleaning_mode, o.file.clone()))
                        .or_default();
                    e.0.push(o.verdict);
                    e.1.extend(o.error_category);
                    t.outcomes.push(o);
                }
                Cell::Unassigned(u) if completed.contains(&u.package_id) => {
                    per_file
                        .entry((u.package_id.clone(), u.cleaning_mode, u.file.clone()))
                        .or_default();
                    t.unassigned.push(u);
                }
                _ => {}
            }
        }
        t.outcomes.sort_by(|a, b| {
            (&a.package_id, a.cleaning_mode, &a.file, &a.interpreter_label).cmp(&(
                &b.package_id,
                b.cleaning_mode,
                &b.file,
                &b.interpreter_label,
            ))
        });
        t.unassigned.sort_by(|a, b| {
            (&a.package_id, a.cleaning_mode, &a.file, &a.interpreter_label).cmp(&(
                &b.package_id,
                b.cleaning_mode,
                &b.file,
                &b.interpreter_label,
            ))
        });

        for ((package_id, mode, file), (verdicts, categories)) in per_file {
            let verdict = combine_outcomes(&verdicts);
            let error_category = (verdict == CombinedVerdict::Error)
                .then(|| dominant_category(&categories))
                .flatten();
            t.combined.push(CombinedResult {
                package_id,
                file,
                cleaning_mode: mode,
                verdict,
                error_category,
            });
        }

        for pid in t.packages.keys() {
            for &mode in &t.modes {
                let files: Vec<CombinedResult> = t
                    .combined
                    .iter()
                    .filter(|c| &c.package_id == pid && c.cleaning_mode == mode)
                    .cloned()
                    .collect();
                t.datasets.push(dataset_result(pid, mode, &files));
            }
        }
        t
    }
}

impl DerivedTables {
    pub fn combined_for(&self, mode: Mode) -> Vec<CombinedResult> {
        self.combined.iter().filter(|c| c.cleaning_mode == mode).cloned().collect()
    }

    pub fn datasets_for(&self, mode: Mode) -> Vec<DatasetResult> {
        self.datasets.iter().filter(|d| d.cleaning_mode == mode).cloned().collect()
    }

    pub fn summary(&self) -> RunSummary {
        let modes = self
            .modes
            .iter()
            .map(|&mode| {
                let mut per_interpreter: BTreeMap<String, Rate> = BTreeMap::new();
                let mut labels: BTreeSet<&str> = BTreeSet::new();
                for o in self.outcomes.iter().filter(|o| o.cleaning_mode == mode) {
                    labels.insert(&o.interpreter_label);
                }
                for l in labels {
                    per_interpreter.insert(
                        l.to_string(),
                        outcome_success_rate(
                            self.outcomes
                                .iter()
                                .filter(|o| o.cleaning_mode == mode && o.interpreter_label == l),
                        ),
                    );
                }
                let combined = self.combined_for(mode);
                let datasets = self.datasets_for(mode);
                let dataset_counts = datasets.iter().fold(BTreeMap::new(), |mut m, d| {
                    *m.entry(d.verdict.as_str().to_string()).or_insert(0usize) += 1;
                    m
                });
                ModeSummary {
                    mode,
                    file_verdicts: VerdictCounts::of(&combined.iter().map(|c| c.verdict).collect::<Vec<_>>()),
                    file_rate: file_success_rate(&combined),
                    dataset_verdicts: dataset_counts,
                    dataset_rate: dataset_success_rate(&datasets),
                    per_interpreter,
                }
            })
            .collect();
        let comparison = if self.modes.contains(&Mode::Raw) && self.modes.contains(&Mode::Cleaned) {
            Some(
                compare_runs(&self.combined_for(Mode::Raw), &self.combined_for(Mode::Cleaned))
                    .map_err(|e| e.to_string()),
            )
        } else {
            None
        };
        RunSummary {
            run_ids: self.run_ids.clone(),
            packages: self.packages.len(),
            skipped_packages: self.skipped.len(),
            incomplete_packages: self.incomplete.len(),
            infrastructure_failures: self.infrastructure_failures.len(),
            modes,
            comparison,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSummary {
    pub mode: Mode,
    pub file_verdicts: VerdictCounts,
    pub file_rate: Rate,
    pub dataset_verdicts: BTreeMap<String, usize>,
    pub dataset_rate: Rate,
    pub per_interpreter: BTreeMap<String, Rate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub run_ids: Vec<String>,
    pub packages: usize,
    pub skipped_packages: usize,
    pub incomplete_packages: usize,
    pub infrastructure_failures: usize,
    pub modes: Vec<ModeSummary>,
    pub comparison: Option<Result<CleaningEffectReport, String>>,
}

pub const DATASET_FOOTNOTE: &str = "Dataset verdicts: a package with any successful file counts as a success even \
if other files timed out; packages whose remaining files timed out are excluded; packages with no file verdicts \
are excluded as no_results.";

impl RunSummary {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "packages: {} completed, {} without R code or skipped, {} incomplete, {} infrastructure failures\n",
            self.packages, self.skipped_packages, self.incomplete_packages, self.infrastructure_failures
        ));
        for m in &self.modes {
            let v = &m.file_verdicts;
            s.push_str(&format!("\n[{}]\n", m.mode.as_str()));
            s.push_str(&format!(
                "  files: {} success, {} error, {} tle, {} unassigned\n",
                v.success, v.error, v.tle, v.unassigned
            ));
            s.push_str(&format!("  file success rate: {}\n", m.file_rate.display()));
            let ds: Vec<String> = m.dataset_verdicts.iter().map(|(k, n)| format!("{n} {k}")).collect();
            s.push_str(&format!("  datasets: {}\n", ds.join(", ")));
            s.push_str(&format!("  dataset success rate: {}\n", m.dataset_rate.display()));
            for (label, r) in &m.per_interpreter {
                s.push_str(&format!("  {label}: {}\n", r.display()));
            }
        }
        match &self.comparison {
            Some(Ok(c)) => {
                s.push_str("\n[raw vs cleaned]\n");
                s.push_str(&format!(
                    "  files with explicit verdicts in both modes: {} ({} excluded)\n",
                    c.considered, c.excluded
                ));
                s.push_str(&format!(
                    "  fixed {}, broken {}, unchanged success {}, unchanged error {}\n",
                    c.fixed, c.broken, c.unchanged_success, c.unchanged_error
                ));
                s.push_str(&format!("  raw: {}\n", c.raw_rate.display()));
                s.push_str(&format!("  cleaned: {}\n", c.cleaned_rate.display()));
                s.push_str(&format!("  best of both: {}\n", c.best_of_both.display()));
                for (from, tos) in &c.transitions {
                    for (to, n) in tos {
                        s.push_str(&format!("  {from} -> {to}: {n}\n"));
                    }
                }
            }
            Some(Err(e)) => s.push_str(&format!("\n[raw vs cleaned]\n  not comparable: {e}\n")),
            None => {}
        }
        s.push_str(&format!("\n{DATASET_FOOTNOTE}\n"));
        s
    }
}

/// Writes rows as CSV with a header taken from the row type.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(io::Error::other)?;
    for r in rows {
        w.serialize(r).map_err(io::Error::other)?;
    }
    w.flush()
}

/// Flat CSV forms of the derived tables.
#[derive(Debug, Serialize)]
pub struct CombinedRow<'a> {
    pub package_id: &'a str,
    pub file: &'a str,
    pub cleaning_mode: &'static str,
    pub verdict: &'static str,
    pub error_category: &'static str,
}

#[derive(Debug, Serialize)]
pub struct DatasetRow<'a> {
    pub package_id: &'a str,
    pub cleaning_mode: &'static str,
    pub verdict: &'static str,
    pub n_success: usize,
    pub n_error: usize,
    pub n_tle: usize,
    pub n_unassigned: usize,
}

#[derive(Debug, Serialize)]
pub struct OutcomeRow<'a> {
    pub package_id: &'a str,
    pub file: &'a str,
    pub interpreter_label: &'a str,
    pub cleaning_mode: &'static str,
    pub verdict: &'static str,
    pub error_category: &'static str,
    pub exit_code: Option<i32>,
    pub wall_time_secs: f64,
}

impl DerivedTables {
    pub fn combined_rows(&self) -> Vec<CombinedRow<'_>> {
        self.combined
            .iter()
            .map(|c| CombinedRow {
                package_id: &c.package_id,
                file: &c.file,
                cleaning_mode: c.cleaning_mode.as_str(),
                verdict: c.verdict.as_str(),
                error_category: c.error_category.map(|e| e.as_str()).unwrap_or(""),
            })
            .collect()
    }

    pub fn dataset_rows(&self) -> Vec<DatasetRow<'_>> {
        self.datasets
            .iter()
            .map(|d| DatasetRow {
                package_id: &d.package_id,
                cleaning_mode: d.cleaning_mode.as_str(),
                verdict: d.verdict.as_str(),
                n_success: d.counts.success,
                n_error: d.counts.error,
                n_tle: d.counts.tle,
                n_unassigned: d.counts.unassigned,
            })
            .collect()
    }

    pub fn outcome_rows(&self) -> Vec<OutcomeRow<'_>> {
        self.outcomes
            .iter()
            .map(|o| OutcomeRow {
                package_id: &o.package_id,
                file: &o.file,
                interpreter_label: &o.interpreter_label,
                cleaning_mode: o.cleaning_mode.as_str(),
                verdict: match o.verdict {
                    Verdict::Success => "success",
                    Verdict::Error => "error",
                    Verdict::Tle => "tle",
                },
                error_category: o.error_category.map(|e| e.as_str()).unwrap_or(""),
                exit_code: o.exit_code,
                wall_time_secs: o.wall_time_secs,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const ALL: [Verdict; 3] = [Verdict::Success, Verdict::Error, Verdict::Tle];

    fn outcome(pkg: &str, file: &str, label: &str, mode: Mode, v: Verdict, cat: Option<ErrorCategory>) -> ExecutionOutcome {
        ExecutionOutcome {
            package_id: pkg.into(),
            file: file.into(),
            interpreter_label: label.into(),
            cleaning_mode: mode,
            verdict: v,
            error_category: if v == Verdict::Error { cat.or(Some(ErrorCategory::Other)) } else { None },
            stderr_tail: String::new(),
            wall_time_secs: 0.1,
            exit_code: match v {
                Verdict::Success => Some(0),
                Verdict::Error => Some(1),
                Verdict::Tle => None,
            },
        }
    }

    fn combined(pkg: &str, file: &str, mode: Mode, v: CombinedVerdict, cat: Option<ErrorCategory>) -> CombinedResult {
        CombinedResult {
            package_id: pkg.into(),
            file: file.into(),
            cleaning_mode: mode,
            verdict: v,
            error_category: cat,
        }
    }

    #[test]
    fn combination_rows() {
        use Verdict::*;
        assert_eq!(combine_outcomes(&[Success, Error, Tle]), CombinedVerdict::Success);
        assert_eq!(combine_outcomes(&[Tle, Error, Error]), CombinedVerdict::Tle);
        assert_eq!(combine_outcomes(&[Error, Error, Error]), CombinedVerdict::Error);
        assert_eq!(combine_outcomes(&[]), CombinedVerdict::Unassigned);
    }

    #[test]
    fn dataset_rules() {
        use CombinedVerdict::*;
        assert_eq!(aggregate_dataset(&[Success, Error]), DatasetVerdict::Success);
        assert_eq!(aggregate_dataset(&[Error, Tle]), DatasetVerdict::ExcludedTle);
        assert_eq!(aggregate_dataset(&[Error, Error]), DatasetVerdict::Error);
        assert_eq!(aggregate_dataset(&[Success, Tle]), DatasetVerdict::Success);
        assert_eq!(aggregate_dataset(&[]), DatasetVerdict::ExcludedNoResults);
        assert_eq!(aggregate_dataset(&[Unassigned]), DatasetVerdict::ExcludedNoResults);
    }

    #[test]
    fn rate_excludes_timeouts() {
        let mut rs = Vec::new();
        for (i, v) in [(2, CombinedVerdict::Success), (2, CombinedVerdict::Error), (6, CombinedVerdict::Tle)] {
            for n in 0..i {
                rs.push(combined("p", &format!("{v:?}{n}"), Mode::Raw, v, None));
            }
        }
        let r = file_success_rate(&rs);
        assert_eq!((r.numerator, r.denominator, r.rate), (2, 4, Some(0.5)));
        let all_tle = vec![combined("p", "a", Mode::Raw, CombinedVerdict::Tle, None)];
        assert_eq!(file_success_rate(&all_tle).rate, None);
        let ok = vec![combined("p", "a", Mode::Raw, CombinedVerdict::Success, None)];
        assert_eq!(file_success_rate(&ok).rate, Some(1.0));
    }

    #[test]
    fn dominant_category_tie_break() {
        use ErrorCategory::*;
        assert_eq!(dominant_category(&[Other, Library, Library]), Some(Library));
        assert_eq!(dominant_category(&[Other, ObjectNotFound]), Some(ObjectNotFound));
        assert_eq!(dominant_category(&[Library, Setwd]), Some(Setwd));
        assert_eq!(dominant_category(&[]), None);
    }

    #[test]
    fn compare_counts_and_transitions() {
        use CombinedVerdict as C;
        let raw = vec![
            combined("p", "a", Mode::Raw, C::Error, Some(ErrorCategory::Setwd)),
            combined("p", "b", Mode::Raw, C::Success, None),
            combined("p", "c", Mode::Raw, C::Error, Some(ErrorCategory::Other)),
            combined("p", "d", Mode::Raw, C::Tle, None),
            combined("p", "e", Mode::Raw, C::Success, None),
        ];
        let cleaned = vec![
            combined("p", "a", Mode::Cleaned, C::Success, None),
            combined("p", "b", Mode::Cleaned, C::Success, None),
            combined("p", "c", Mode::Cleaned, C::Error, Some(ErrorCategory::Other)),
            combined("p", "d", Mode::Cleaned, C::Success, None),
            combined("p", "e", Mode::Cleaned, C::Error, Some(ErrorCategory::Library)),
        ];
        let r = compare_runs(&raw, &cleaned).unwrap();
        assert_eq!((r.considered, r.excluded), (4, 1));
        assert_eq!((r.fixed, r.broken, r.unchanged_success, r.unchanged_error), (1, 1, 1, 1));
        assert_eq!(r.transitions["setwd"]["success"], 1);
        assert_eq!(r.transitions["success"]["library"], 1);
        assert_eq!(r.transitions["other"]["other"], 1);
        assert_eq!((r.raw_rate.numerator, r.raw_rate.denominator), (2, 4));
        assert_eq!((r.best_of_both.numerator, r.best_of_both.denominator), (3, 4));

        let err = compare_runs(&raw, &cleaned[..4]).unwrap_err();
        assert!(matches!(err, ResultsError::FileSetMismatch { only_raw: 1, only_cleaned: 0, .. }));
    }

    #[test]
    fn subject_specificity() {
        assert_eq!(subject_labels("Social Sciences; Law"), ["Law"]);
        assert_eq!(subject_labels("social science"), ["social science"]);
        assert_eq!(subject_labels("Law;Medicine"), ["Law", "Medicine"]);
        let info = PackageInfo {
            package_id: "p".into(),
            title: String::new(),
            publication_date: NaiveDate::from_ymd_opt(2018, 3, 1),
            metadata: BTreeMap::new(),
        };
        assert_eq!(package_groups(&info, GroupKey::Subject), [UNLABELED]);
        assert_eq!(package_groups(&info, GroupKey::Year), ["2018"]);
    }

    fn store_with(records: Vec<Record>) -> LoadedStore {
        LoadedStore {
            records,
            warnings: Vec::new(),
            truncated_tail: false,
        }
    }

    fn register(pkg: &str, meta: &[(&str, &str)]) -> Record {
        Record::PackageRegistered {
            package_id: pkg.into(),
            title: String::new(),
            publication_date: None,
            metadata: meta.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }
    }

    #[test]
    fn grouping_by_journal() {
        let mut recs = Vec::new();
        // journal A: 2 of 4 files succeed; journal B: 3 of 3
        for (pkg, journal, verdicts) in [
            ("a1", "A", vec![Verdict::Success, Verdict::Error]),
            ("a2", "A", vec![Verdict::Success, Verdict::Error]),
            ("b1", "B", vec![Verdict::Success, Verdict::Success, Verdict::Success]),
        ] {
            recs.push(register(pkg, &[("journal", journal)]));
            for (i, v) in verdicts.into_iter().enumerate() {
                recs.push(Record::Outcome(outcome(pkg, &format!("f{i}.R"), "R4.0", Mode::Raw, v, None)));
            }
            recs.push(Record::PackageComplete { package_id: pkg.into() });
        }
        let t = store_with(recs).derive();
        let rows = group_report(&t, Mode::Raw, GroupKey::Journal);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].group.as_str(), rows[0].file_success_rate, rows[0].n_files), ("A", Some(0.5), 4));
        assert_eq!((rows[1].group.as_str(), rows[1].file_success_rate, rows[1].n_files), ("B", Some(1.0), 3));
        assert_eq!(rows[0].n_datasets, 2);
        let unlabeled = group_report(&t, Mode::Raw, GroupKey::Policy);
        assert_eq!(unlabeled.len(), 1);
        assert_eq!(unlabeled[0].group, UNLABELED);
    }

    #[test]
    fn grouping_by_version_uses_raw_outcomes() {
        let recs = vec![
            register("p", &[]),
            Record::Outcome(outcome("p", "a.R", "R3.2", Mode::Raw, Verdict::Error, Some(ErrorCategory::Library))),
            Record::Outcome(outcome("p", "a.R", "R4.0", Mode::Raw, Verdict::Success, None)),
            Record::PackageComplete { package_id: "p".into() },
        ];
        let t = store_with(recs).derive();
        assert_eq!(t.combined[0].verdict, CombinedVerdict::Success);
        let rows = group_report(&t, Mode::Raw, GroupKey::Version);
        let rates: Vec<_> = rows.iter().map(|r| (r.group.as_str(), r.file_success_rate)).collect();
        assert_eq!(rates, [("R3.2", Some(0.0)), ("R4.0", Some(1.0))]);
    }

    #[test]
    fn derive_keeps_latest_and_complete_only() {
        let recs = vec![
            register("p", &[]),
            Record::Outcome(outcome("p", "a.R", "R", Mode::Raw, Verdict::Error, None)),
            Record::Outcome(outcome("p", "a.R", "R", Mode::Raw, Verdict::Success, None)),
            Record::Unassigned(UnassignedCell {
                package_id: "p".into(),
                file: "b.R".into(),
                interpreter_label: "R".into(),
                cleaning_mode: Mode::Raw,
            }),
            Record::PackageComplete { package_id: "p".into() },
            register("q", &[]),
            Record::Outcome(outcome("q", "a.R", "R", Mode::Raw, Verdict::Success, None)),
            Record::InfrastructureFailure {
                package_id: "q".into(),
                message: "boom".into(),
            },
        ];
        let t = store_with(recs).derive();
        assert_eq!(t.outcomes.len(), 1);
        assert_eq!(t.outcomes[0].verdict, Verdict::Success);
        assert_eq!(t.incomplete, ["q"]);
        assert_eq!(t.infrastructure_failures["q"], "boom");
        let verdicts: Vec<_> = t.combined.iter().map(|c| (c.file.as_str(), c.verdict)).collect();
        assert_eq!(verdicts, [("a.R", CombinedVerdict::Success), ("b.R", CombinedVerdict::Unassigned)]);
        assert_eq!(t.datasets.len(), 1);
        assert_eq!(t.datasets[0].verdict, DatasetVerdict::Success);
        assert_eq!(t.datasets[0].counts.unassigned, 1);
    }

    #[test]
    fn store_round_trip_and_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let store = RunStore::open(&path).unwrap();
        for i in 0..100 {
            store
                .append(&Record::PackageComplete {
                    package_id: format!("p{i}"),
                })
                .unwrap();
        }
        assert_eq!(RunStore::load(&path).unwrap().records.len(), 100);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        let loaded = RunStore::load(&path).unwrap();
        assert_eq!(loaded.records.len(), 99);
        assert!(loaded.truncated_tail);
        assert_eq!(loaded.warnings.len(), 1);

        // reopening cuts the torn line so appends stay parseable
        let store = RunStore::open(&path).unwrap();
        store.append(&Record::PackageComplete { package_id: "x".into() }).unwrap();
        let loaded = RunStore::load(&path).unwrap();
        assert_eq!(loaded.records.len(), 100);
        assert!(!loaded.truncated_tail);
    }

    #[test]
    fn corrupt_middle_line_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        fs::write(
            &path,
            "{\"kind\":\"package_complete\",\"package_id\":\"a\"}\nnot json\n{\"kind\":\"package_complete\",\"package_id\":\"b\"}\n",
        )
        .unwrap();
        assert!(matches!(RunStore::load(&path), Err(ResultsError::Corrupt { line: 2, .. })));
    }

    #[test]
    fn concurrent_appends_stay_intact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        std::thread::scope(|s| {
            for t in 0..2 {
                let path = path.clone();
                s.spawn(move || {
                    let store = RunStore::open(&path).unwrap();
                    for i in 0..50 {
                        store
                            .append(&Record::Outcome(outcome(
                                &format!("t{t}"),
                                &format!("{i}.R"),
                                "R4.0",
                                Mode::Raw,
                                Verdict::Success,
                                None,
                            )))
                            .unwrap();
                    }
                });
            }
        });
        let loaded = RunStore::load(&path).unwrap();
        assert_eq!(loaded.records.len(), 100);
        assert!(loaded.warnings.is_empty());
    }

    #[test]
    fn record_json_shape() {
        let json = serde_json::to_value(Record::Outcome(outcome("p", "a.R", "R4.0", Mode::Cleaned, Verdict::Error, Some(ErrorCategory::Setwd)))).unwrap();
        assert_eq!(json["kind"], "outcome");
        assert_eq!(json["cleaning_mode"], "cleaned");
        assert_eq!(json["verdict"], "error");
        assert_eq!(json["error_category"], "setwd");
    }

    fn verdict() -> impl Strategy<Value = Verdict> {
        prop::sample::select(ALL.to_vec())
    }

    proptest! {
        #[test]
        fn combine_is_order_insensitive(mut vs in prop::collection::vec(verdict(), 0..6), seed in any::<u64>()) {
            let before = combine_outcomes(&vs);
            let n = vs.len();
            if n > 1 {
                vs.rotate_left((seed as usize) % n);
                vs.reverse();
            }
            prop_assert_eq!(combine_outcomes(&vs), before);
        }

        #[test]
        fn adding_success_never_lowers(vs in prop::collection::vec(verdict(), 0..6)) {
            fn rank(c: CombinedVerdict) -> u8 {
                match c {
                    CombinedVerdict::Unassigned => 0,
                    CombinedVerdict::Error => 1,
                    CombinedVerdict::Tle => 2,
                    CombinedVerdict::Success => 3,
                }
            }
            let mut more = vs.clone();
            more.push(Verdict::Success);
            prop_assert!(rank(combine_outcomes(&more)) >= rank(combine_outcomes(&vs)));
            prop_assert_eq!(combine_outcomes(&more), CombinedVerdict::Success);
        }

        #[test]
        fn compare_conserves_files(pairs in prop::collection::vec((0u8..4, 0u8..4), 0..20)) {
            let to = |code: u8, mode: Mode, i: usize| match code {
                0 => combined("p", &i.to_string(), mode, CombinedVerdict::Success, None),
                1 => combined("p", &i.to_string(), mode, CombinedVerdict::Error, Some(ErrorCategory::Library)),
                2 => combined("p", &i.to_string(), mode, CombinedVerdict::Tle, None),
                _ => combined("p", &i.to_string(), mode, CombinedVerdict::Unassigned, None),
            };
            let raw: Vec<_> = pairs.iter().enumerate().map(|(i, (r, _))| to(*r, Mode::Raw, i)).collect();
            let cleaned: Vec<_> = pairs.iter().enumerate().map(|(i, (_, c))| to(*c, Mode::Cleaned, i)).collect();
            let r = compare_runs(&raw, &cleaned).unwrap();
            prop_assert_eq!(r.fixed + r.broken + r.unchanged_success + r.unchanged_error, r.considered);
            prop_assert_eq!(r.considered + r.excluded, pairs.len());
            let total: usize = r.transitions.values().flat_map(|m| m.values()).sum();
            prop_assert_eq!(total, r.considered);
        }
    }
}
