//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::Deserialize;

use reprun_core::cleaner::DEFAULT_CRAN_MIRROR;
use reprun_core::executor::{Budget, InterpreterSpec, Mode};

pub const DEFAULT_API_BASE: &str = "https://dataverse.harvard.edu";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileBudget {
    pub per_file_secs: Option<f64>,
    pub per_package_secs: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileInterpreter {
    pub label: String,
    pub command: Vec<String>,
    pub release_date: Option<NaiveDate>,
}

/// The config file as written. Every field is optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub api_base: Option<String>,
    pub jobs: Option<usize>,
    pub modes: Option<Vec<Mode>>,
    pub store: Option<PathBuf>,
    pub scratch_root: Option<PathBuf>,
    pub network_allowed: Option<bool>,
    pub cran_mirror: Option<String>,
    pub budget: Option<FileBudget>,
    #[serde(default, rename = "interpreter")]
    pub interpreters: Vec<FileInterpreter>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("invalid config {}: {e}", path.display()))
    }
}

/// Effective settings after applying precedence.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub api_base: String,
    pub interpreters: Vec<InterpreterSpec>,
    pub budget: Budget,
    pub modes: Vec<Mode>,
    pub jobs: usize,
    pub store: PathBuf,
    pub scratch_root: Option<PathBuf>,
    pub network_allowed: bool,
    pub cran_mirror: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            api_base: DEFAULT_API_BASE.to_string(),
            interpreters: InterpreterSpec::default_matrix(),
            budget: Budget::default(),
            modes: vec![Mode::Raw, Mode::Cleaned],
            jobs: 1,
            store: PathBuf::from("reprun-store.jsonl"),
            scratch_root: None,
            network_allowed: true,
            cran_mirror: DEFAULT_CRAN_MIRROR.to_string(),
        }
    }
}

/// Values given on the command line; `None` means not given.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub api_base: Option<String>,
    pub jobs: Option<usize>,
    pub modes: Option<Vec<Mode>>,
    pub store: Option<PathBuf>,
    pub scratch_root: Option<PathBuf>,
    pub no_network: bool,
    pub cran_mirror: Option<String>,
    pub per_file_secs: Option<f64>,
    pub per_package_secs: Option<f64>,
    pub interpreters: Vec<InterpreterSpec>,
}

fn secs(v: f64, what: &str) -> anyhow::Result<std::time::Duration> {
    std::time::Duration::try_from_secs_f64(v).map_err(|_| anyhow::anyhow!("{what} must be a non-negative number of seconds"))
}

impl RunConfig {
    pub fn resolve(file: Option<ConfigFile>, cli: &Overrides) -> anyhow::Result<Self> {
        let file = file.unwrap_or_default();
        let mut c = RunConfig::default();
        if let Some(v) = cli.api_base.clone().or(file.api_base) {
            c.api_base = v;
        }
        if let Some(v) = cli.jobs.or(file.jobs) {
            c.jobs = v;
        }
        if let Some(v) = cli.modes.clone().or(file.modes) {
            c.modes = v;
        }
        if let Some(v) = cli.store.clone().or(file.store) {
            c.store = v;
        }
        c.scratch_root = cli.scratch_root.clone().or(file.scratch_root);
        if cli.no_network {
            c.network_allowed = false;
        } else if let Some(v) = file.network_allowed {
            c.network_allowed = v;
        }
        if let Some(v) = cli.cran_mirror.clone().or(file.cran_mirror) {
            c.cran_mirror = v;
        }
        let fb = file.budget.unwrap_or_default();
        if let Some(v) = cli.per_file_secs.or(fb.per_file_secs) {
            c.budget.per_file = secs(v, "per-file budget")?;
        }
        if let Some(v) = cli.per_package_secs.or(fb.per_package_secs) {
            c.budget.per_package = secs(v, "per-package budget")?;
        }
        if !cli.interpreters.is_empty() {
            c.interpreters = cli.interpreters.clone();
        } else if !file.interpreters.is_empty() {
            c.interpreters = file
                .interpreters
                .into_iter()
                .map(|i| InterpreterSpec {
                    label: i.label,
                    command: i.command,
                    release_date: i.release_date,
                })
                .collect();
        }

        if c.jobs == 0 {
            anyhow::bail!("jobs must be at least 1");
        }
        c.modes.sort();
        c.modes.dedup();
        if c.modes.is_empty() {
            anyhow::bail!("at least one mode is required");
        }
        c.budget.validate()?;
        Ok(c)
    }
}

/// Parses `LABEL=COMMAND ARGS...`; the command is split on whitespace.
pub fn parse_interpreter(s: &str) -> Result<InterpreterSpec, String> {
    let (label, cmd) = s
        .split_once('=')
        .ok_or_else(|| format!("expected LABEL=COMMAND, got {s:?}"))?;
    let command: Vec<String> = cmd.split_whitespace().map(str::to_string).collect();
    if label.trim().is_empty() || command.is_empty() {
        return Err(format!("expected LABEL=COMMAND, got {s:?}"));
    }
    Ok(InterpreterSpec {
        label: label.trim().to_string(),
        command,
        release_date: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_defaults() {
        let c = RunConfig::resolve(None, &Overrides::default()).unwrap();
        assert_eq!(c.budget.per_file.as_secs(), 3600);
        assert_eq!(c.budget.per_package.as_secs(), 18000);
        assert_eq!(c.interpreters.len(), 3);
        assert_eq!(c.cran_mirror, "http://cran.us.r-project.org");
        assert!(c.network_allowed);
    }

    #[test]
    fn flag_beats_file_beats_default() {
        let file: ConfigFile = toml::from_str(
            r#"
            jobs = 3
            cran_mirror = "https://cloud.r-project.org"
            network_allowed = false
            [budget]
            per_file_secs = 10
            per_package_secs = 20
            [[interpreter]]
            label = "stub"
            command = ["stub-r", "{script}"]
            "#,
        )
        .unwrap();
        let cli = Overrides {
            jobs: Some(5),
            per_package_secs: Some(30.0),
            ..Default::default()
        };
        let c = RunConfig::resolve(Some(file), &cli).unwrap();
        assert_eq!(c.jobs, 5);
        assert_eq!(c.cran_mirror, "https://cloud.r-project.org");
        assert_eq!(c.budget.per_file.as_secs(), 10);
        assert_eq!(c.budget.per_package.as_secs(), 30);
        assert!(!c.network_allowed);
        assert_eq!(c.interpreters[0].label, "stub");
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let cli = Overrides {
            jobs: Some(0),
            ..Default::default()
        };
        assert!(RunConfig::resolve(None, &cli).is_err());
        let cli = Overrides {
            per_file_secs: Some(100.0),
            per_package_secs: Some(10.0),
            ..Default::default()
        };
        assert!(RunConfig::resolve(None, &cli).is_err());
        assert!(toml::from_str::<ConfigFile>("unknown_key = 1").is_err());
    }

    #[test]
    fn interpreter_flag_syntax() {
        let i = parse_interpreter("R4.0=Rscript --vanilla {script}").unwrap();
        assert_eq!(i.label, "R4.0");
        assert_eq!(i.command, ["Rscript", "--vanilla", "{script}"]);
        assert!(parse_interpreter("nolabel").is_err());
    }
}
