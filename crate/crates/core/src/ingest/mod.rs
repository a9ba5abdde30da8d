//! Discovery, download, verification and cataloging of replication packages.

mod dataverse;
pub mod mock;

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dataverse::{fetch_all, fetch_package, list_packages, DataverseClient, SearchQuery};

/// Environment variable holding an optional repository API token.
pub const API_TOKEN_ENV: &str = "DATAVERSE_API_TOKEN";

#[derive(Debug, Error)]
pub enum IngestError {
    /// Transport-level failure after retries. Safe to retry later.
    #[error("network error for {url}: {message}")]
    Network { url: String, message: String },
    #[error("malformed response from {url}: {message}; payload starts with {excerpt:?}")]
    Parse {
        url: String,
        message: String,
        excerpt: String,
    },
    #[error("repository returned HTTP {status} for {url}")]
    Status { url: String, status: u16 },
    #[error("package directory {0} does not exist")]
    MissingDirectory(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IngestError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, IngestError::Network { .. })
            || matches!(self, IngestError::Status { status, .. } if *status >= 500)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackageRef {
    pub persistent_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub publication_date: Option<NaiveDate>,
    /// Grouping labels such as `journal`, `policy_class`, `subject`, `year`.
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

impl PackageRef {
    pub fn new(persistent_id: impl Into<String>) -> Self {
        PackageRef {
            persistent_id: persistent_id.into(),
            title: String::new(),
            publication_date: None,
            metadata: BTreeMap::new(),
        }
    }

    /// Directory name used for this package's files.
    pub fn dir_name(&self) -> String {
        sanitize_component(&self.persistent_id)
    }
}

/// Maps an arbitrary string to a single safe path component.
pub(crate) fn sanitize_component(raw: &str) -> String {
    let cleaned: String = raw
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect();
    match cleaned.trim_matches('.') {
        "" => "_".to_string(),
        _ => cleaned,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FetchStatus {
    Ok,
    Partial,
    Failed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verification {
    Ok,
    Mismatch,
    Unchecked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checksum {
    /// Algorithm name as reported by the repository, e.g. `MD5`, `SHA-256`.
    pub algorithm: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub relative_path: String,
    pub size: u64,
    #[serde(default)]
    pub checksum: Option<Checksum>,
    pub verified: Verification,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_note: Option<String>,
    /// Set when the download of this file failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fetch_error: Option<String>,
    /// Repository-side path when it differs from `relative_path`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_type: Option<String>,
}

impl FileEntry {
    pub fn local(relative_path: String, size: u64) -> Self {
        FileEntry {
            relative_path,
            size,
            checksum: None,
            verified: Verification::Unchecked,
            verify_note: None,
            fetch_error: None,
            source_path: None,
            file_id: None,
            content_type: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageManifest {
    #[serde(flatten)]
    pub package: PackageRef,
    pub root: PathBuf,
    pub files: Vec<FileEntry>,
    pub fetched_at: DateTime<Utc>,
    pub fetch_status: FetchStatus,
}

impl PackageManifest {
    pub fn id(&self) -> &str {
        &self.package.persistent_id
    }

    pub fn is_executable(&self) -> bool {
        self.fetch_status == FetchStatus::Ok
    }

    /// R scripts that were fetched, in lexicographic path order.
    pub fn r_scripts(&self) -> Vec<&FileEntry> {
        let mut scripts: Vec<&FileEntry> = self
            .files
            .iter()
            .filter(|f| f.fetch_error.is_none() && crate::metrics::is_r_script(&f.relative_path))
            .collect();
        scripts.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
        scripts
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| IngestError::Parse {
            url: path.display().to_string(),
            message: e.to_string(),
            excerpt: excerpt(&text),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), IngestError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json + "\n")?;
        Ok(())
    }
}

pub(crate) fn excerpt(text: &str) -> String {
    text.chars().take(200).collect()
}

/// Catalogs a package that already sits on disk. Every regular file below
/// `dir` becomes an entry; nothing carries a repository checksum.
pub fn load_local_package(
    dir: &Path,
    metadata: BTreeMap<String, String>,
) -> Result<PackageManifest, IngestError> {
    if !dir.is_dir() {
        return Err(IngestError::MissingDirectory(dir.to_path_buf()));
    }
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| std::io::Error::other(e.to_string()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(dir)
            .expect("walkdir yields children of its root");
        let relative_path = rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        files.push(FileEntry::local(relative_path, entry.metadata().map(|m| m.len()).unwrap_or(0)));
    }
    files.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));

    let mut metadata = metadata;
    let persistent_id = metadata.remove("persistent_id").unwrap_or_else(|| {
        dir.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string())
    });
    let title = metadata.remove("title").unwrap_or_default();
    let publication_date = metadata
        .get("publication_date")
        .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok());
    Ok(PackageManifest {
        package: PackageRef {
            persistent_id,
            title,
            publication_date,
            metadata,
        },
        root: dir.to_path_buf(),
        files,
        fetched_at: Utc::now(),
        fetch_status: FetchStatus::Ok,
    })
}

/// Recomputes digests for every entry that carries a repository checksum.
pub fn verify_checksums(mut manifest: PackageManifest) -> PackageManifest {
    for entry in &mut manifest.files {
        let (verified, note) = verify_entry(&manifest.root, entry);
        entry.verified = verified;
        entry.verify_note = note;
    }
    manifest
}

fn verify_entry(root: &Path, entry: &FileEntry) -> (Verification, Option<String>) {
    if let Some(err) = &entry.fetch_error {
        return (Verification::Mismatch, Some(format!("not downloaded: {err}")));
    }
    let Some(checksum) = &entry.checksum else {
        return (Verification::Unchecked, None);
    };
    let path = root.join(&entry.relative_path);
    match file_digest(&path, &checksum.algorithm) {
        Ok(Some(actual)) if actual.eq_ignore_ascii_case(checksum.value.trim()) => (Verification::Ok, None),
        Ok(Some(actual)) => (
            Verification::Mismatch,
            Some(format!("expected {}, computed {actual}", checksum.value)),
        ),
        Ok(None) => (
            Verification::Unchecked,
            Some(format!("unsupported algorithm {}", checksum.algorithm)),
        ),
        Err(e) => (Verification::Mismatch, Some(format!("unreadable: {e}"))),
    }
}

/// Hex digest of a file, or `None` for an algorithm we do not implement.
pub fn file_digest(path: &Path, algorithm: &str) -> std::io::Result<Option<String>> {
    use sha2::Digest;

    fn run<D: Digest>(mut file: fs::File) -> std::io::Result<String> {
        let mut hasher = D::new();
        let mut buf = vec![0u8; 64 * 1024];
        loop {
            let n = file.read(&mut buf)?;
            if n == 0 {
                break;
            }
            hasher.update(&buf[..n]);
        }
        Ok(hex::encode(hasher.finalize()))
    }

    let normalized = algorithm.to_ascii_uppercase().replace(['-', '_'], "");
    let file = fs::File::open(path)?;
    let digest = match normalized.as_str() {
        "MD5" => run::<md5::Md5>(file)?,
        "SHA1" => run::<sha1::Sha1>(file)?,
        "SHA256" => run::<sha2::Sha256>(file)?,
        "SHA512" => run::<sha2::Sha512>(file)?,
        _ => return Ok(None),
    };
    Ok(Some(digest))
}
