//! Client for the Dataverse search and file-access APIs.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::thread;
use std::time::Duration;

use chrono::{NaiveDate, Utc};
use serde::Deserialize;
use serde_json::Value;

use super::{
    excerpt, sanitize_component, verify_checksums, Checksum, FetchStatus, FileEntry, IngestError,
    PackageManifest, PackageRef, Verification, API_TOKEN_ENV,
};

const SEARCH_PAGE_SIZE: usize = 100;
const RETRIES: u32 = 3;

/// Which files mark a dataset as containing R code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SearchQuery {
    /// File extension without the dot, matched case-insensitively.
    Extension(String),
    ContentType(String),
}

impl SearchQuery {
    fn to_q(&self) -> String {
        match self {
            SearchQuery::Extension(ext) => format!("fileName:*.{ext}"),
            SearchQuery::ContentType(ct) => format!("fileContentType:\"{ct}\""),
        }
    }

    fn matches(&self, item: &SearchItem) -> bool {
        match self {
            SearchQuery::Extension(ext) => item
                .name
                .as_deref()
                .and_then(|n| n.rsplit_once('.'))
                .is_some_and(|(_, e)| e.eq_ignore_ascii_case(ext)),
            SearchQuery::ContentType(ct) => item
                .file_content_type
                .as_deref()
                .is_some_and(|c| c.eq_ignore_ascii_case(ct)),
        }
    }
}

#[derive(Debug, Deserialize)]
struct Envelope<T> {
    status: String,
    data: Option<T>,
    #[serde(default)]
    message: Option<String>,
}

#[derive(Debug, Deserialize)]
struct SearchData {
    total_count: usize,
    #[serde(default)]
    items: Vec<SearchItem>,
}

#[derive(Debug, Deserialize)]
struct SearchItem {
    #[serde(rename = "type")]
    kind: String,
    name: Option<String>,
    file_content_type: Option<String>,
    dataset_persistent_id: Option<String>,
    dataset_name: Option<String>,
    published_at: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DatasetData {
    publication_date: Option<String>,
    latest_version: DatasetVersion,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DatasetVersion {
    #[serde(default)]
    files: Vec<DatasetFile>,
    #[serde(default)]
    metadata_blocks: BTreeMap<String, MetadataBlock>,
}

#[derive(Debug, Deserialize)]
struct MetadataBlock {
    #[serde(default)]
    fields: Vec<MetadataField>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct MetadataField {
    type_name: String,
    value: Value,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DatasetFile {
    label: Option<String>,
    directory_label: Option<String>,
    data_file: DataFile,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
struct DataFile {
    id: Value,
    filename: Option<String>,
    #[serde(default)]
    filesize: u64,
    content_type: Option<String>,
    md5: Option<String>,
    checksum: Option<RawChecksum>,
}

#[derive(Debug, Deserialize)]
struct RawChecksum {
    #[serde(rename = "type")]
    kind: String,
    value: String,
}

pub struct DataverseClient {
    base: String,
    token: Option<String>,
    agent: ureq::Agent,
    retry_backoff: Duration,
}

enum Fetched {
    Body(String),
    Status(u16),
}

impl DataverseClient {
    pub fn new(api_base: &str, token: Option<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(300)))
            .http_status_as_error(false)
            .build()
            .into();
        DataverseClient {
            base: api_base.trim_end_matches('/').to_string(),
            token,
            agent,
            retry_backoff: Duration::from_millis(200),
        }
    }

    /// Reads the API token from the environment.
    pub fn from_env(api_base: &str) -> Self {
        let token = std::env::var(API_TOKEN_ENV).ok().filter(|t| !t.is_empty());
        Self::new(api_base, token)
    }

    pub fn with_retry_backoff(mut self, backoff: Duration) -> Self {
        self.retry_backoff = backoff;
        self
    }

    fn request(&self, path: &str, query: &[(&str, String)]) -> ureq::RequestBuilder<ureq::typestate::WithoutBody> {
        let mut req = self.agent.get(format!("{}{path}", self.base));
        for (k, v) in query {
            req = req.query(*k, v);
        }
        if let Some(token) = &self.token {
            req = req.header("X-Dataverse-key", token);
        }
        req
    }

    /// GET returning the body for 2xx and the status otherwise. Transport
    /// failures and 5xx responses are retried.
    fn get_text(&self, path: &str, query: &[(&str, String)]) -> Result<Fetched, IngestError> {
        let url = format!("{}{path}", self.base);
        let mut last = None;
        for attempt in 0..RETRIES {
            if attempt > 0 {
                thread::sleep(self.retry_backoff * 2u32.pow(attempt - 1));
            }
            match self.request(path, query).call() {
                Ok(mut resp) => {
                    let status = resp.status().as_u16();
                    if status >= 500 {
                        last = Some(IngestError::Status { url: url.clone(), status });
                        continue;
                    }
                    if !(200..300).contains(&status) {
                        return Ok(Fetched::Status(status));
                    }
                    return match resp.body_mut().read_to_string() {
                        Ok(body) => Ok(Fetched::Body(body)),
                        Err(e) => {
                            last = Some(IngestError::Network {
                                url: url.clone(),
                                message: e.to_string(),
                            });
                            continue;
                        }
                    };
                }
                Err(e) => {
                    last = Some(IngestError::Network {
                        url: url.clone(),
                        message: e.to_string(),
                    });
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn get_json<T: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        query: &[(&str, String)],
    ) -> Result<Result<T, u16>, IngestError> {
        let url = format!("{}{path}", self.base);
        let body = match self.get_text(path, query)? {
            Fetched::Body(b) => b,
            Fetched::Status(s) => return Ok(Err(s)),
        };
        let parse_err = |message: String| IngestError::Parse {
            url: url.clone(),
            message,
            excerpt: excerpt(&body),
        };
        let env: Envelope<T> = serde_json::from_str(&body).map_err(|e| parse_err(e.to_string()))?;
        if env.status != "OK" {
            return Err(parse_err(format!(
                "status {}: {}",
                env.status,
                env.message.unwrap_or_default()
            )));
        }
        env.data
            .map(Ok)
            .ok_or_else(|| parse_err("missing data field".to_string()))
    }

    fn download(&self, file_id: &str, dest: &Path) -> Result<Result<u64, u16>, IngestError> {
        let path = format!("/api/access/datafile/{file_id}");
        let url = format!("{}{path}", self.base);
        let mut last = None;
        for attempt in 0..RETRIES {
            if attempt > 0 {
                thread::sleep(self.retry_backoff * 2u32.pow(attempt - 1));
            }
            let mut resp = match self.request(&path, &[]).call() {
                Ok(r) => r,
                Err(e) => {
                    last = Some(IngestError::Network {
                        url: url.clone(),
                        message: e.to_string(),
                    });
                    continue;
                }
            };
            let status = resp.status().as_u16();
            if status >= 500 {
                last = Some(IngestError::Status { url: url.clone(), status });
                continue;
            }
            if !(200..300).contains(&status) {
                return Ok(Err(status));
            }
            let part = dest.with_file_name(format!(
                ".{}.part",
                dest.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
            ));
            let result = (|| -> io::Result<u64> {
                let mut out = fs::File::create(&part)?;
                let mut reader = resp.body_mut().with_config().limit(u64::MAX).reader();
                let n = io::copy(&mut reader, &mut out)?;
                out.flush()?;
                Ok(n)
            })();
            match result {
                Ok(n) => {
                    fs::rename(&part, dest)?;
                    return Ok(Ok(n));
                }
                Err(e) => {
                    let _ = fs::remove_file(&part);
                    last = Some(IngestError::Network {
                        url: url.clone(),
                        message: e.to_string(),
                    });
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }
}

fn date_prefix(raw: &str) -> Option<NaiveDate> {
    raw.get(..10)
        .and_then(|d| NaiveDate::parse_from_str(d, "%Y-%m-%d").ok())
}

/// Lists datasets holding at least one file matched by `query`. Datasets are
/// returned in the order the search first reports one of their files.
pub fn list_packages(
    client: &DataverseClient,
    query: &SearchQuery,
    limit: usize,
) -> Result<Vec<PackageRef>, IngestError> {
    let mut refs = Vec::new();
    let mut seen = HashSet::new();
    let mut start = 0;
    while refs.len() < limit {
        let page: SearchData = client
            .get_json(
                "/api/search",
                &[
                    ("q", query.to_q()),
                    ("type", "file".to_string()),
                    ("start", start.to_string()),
                    ("per_page", SEARCH_PAGE_SIZE.to_string()),
                ],
            )?
            .map_err(|status| IngestError::Status {
                url: format!("{}/api/search", client.base),
                status,
            })?;
        let count = page.items.len();
        for item in page.items {
            if item.kind != "file" || !query.matches(&item) {
                continue;
            }
            let Some(pid) = item.dataset_persistent_id.clone().filter(|p| !p.is_empty()) else {
                continue;
            };
            if seen.insert(pid.clone()) {
                let mut r = PackageRef::new(pid);
                r.title = item.dataset_name.clone().unwrap_or_default();
                r.publication_date = item.published_at.as_deref().and_then(date_prefix);
                refs.push(r);
                if refs.len() == limit {
                    break;
                }
            }
        }
        start += count;
        if count == 0 || start >= page.total_count {
            break;
        }
    }
    Ok(refs)
}

fn id_string(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Picks a flat file name inside the package directory, suffixing `_1`,
/// `_2`, ... before the extension on collision.
fn flat_name(raw: &str, file_id: &str, taken: &mut HashSet<String>) -> String {
    let base = raw.rsplit(['/', '\\']).next().unwrap_or(raw);
    let base = match base {
        "" | "." | ".." => format!("file_{}", sanitize_component(file_id)),
        b => b.replace('\0', "_"),
    };
    if taken.insert(base.clone()) {
        return base;
    }
    let (stem, ext) = match base.rfind('.') {
        Some(dot) if dot > 0 => (&base[..dot], &base[dot..]),
        _ => (base.as_str(), ""),
    };
    (1..)
        .map(|i| format!("{stem}_{i}{ext}"))
        .find(|candidate| taken.insert(candidate.clone()))
        .expect("unbounded suffix search")
}

/// Downloads every file of a dataset flat into `dest/<package dir>` and
/// verifies repository checksums.
pub fn fetch_package(
    client: &DataverseClient,
    package: &PackageRef,
    dest: &Path,
) -> Result<PackageManifest, IngestError> {
    let root = dest.join(package.dir_name());
    fs::create_dir_all(&root)?;
    let mut manifest = PackageManifest {
        package: package.clone(),
        root: root.clone(),
        files: Vec::new(),
        fetched_at: Utc::now(),
        fetch_status: FetchStatus::Ok,
    };

    let listing: DatasetData = match client.get_json(
        "/api/datasets/:persistentId/",
        &[("persistentId", package.persistent_id.clone())],
    ) {
        Ok(Ok(data)) => data,
        Ok(Err(401 | 403)) => {
            manifest.fetch_status = FetchStatus::Failed("authorization".into());
            return Ok(manifest);
        }
        Ok(Err(status)) => {
            manifest.fetch_status = FetchStatus::Failed(format!("http {status}"));
            return Ok(manifest);
        }
        Err(e @ IngestError::Network { .. }) | Err(e @ IngestError::Status { .. }) => {
            manifest.fetch_status = FetchStatus::Failed(format!("network: {e}"));
            return Ok(manifest);
        }
        Err(e) => return Err(e),
    };

    enrich_metadata(&mut manifest.package, &listing);

    let mut taken = HashSet::new();
    let mut authorization_failed = false;
    for file in &listing.latest_version.files {
        let file_id = id_string(&file.data_file.id);
        let repo_name = file
            .data_file
            .filename
            .clone()
            .or_else(|| file.label.clone())
            .unwrap_or_else(|| format!("file_{file_id}"));
        let source = match file.directory_label.as_deref() {
            Some(dir) if !dir.is_empty() => format!("{dir}/{repo_name}"),
            _ => repo_name.clone(),
        };
        let name = flat_name(&repo_name, &file_id, &mut taken);
        let checksum = file
            .data_file
            .checksum
            .as_ref()
            .map(|c| Checksum {
                algorithm: c.kind.clone(),
                value: c.value.clone(),
            })
            .or_else(|| {
                file.data_file.md5.as_ref().map(|v| Checksum {
                    algorithm: "MD5".into(),
                    value: v.clone(),
                })
            });
        let mut entry = FileEntry {
            relative_path: name.clone(),
            size: file.data_file.filesize,
            checksum,
            verified: Verification::Unchecked,
            verify_note: None,
            fetch_error: None,
            source_path: (source != name).then_some(source),
            file_id: Some(file_id.clone()),
            content_type: file.data_file.content_type.clone(),
        };
        match client.download(&file_id, &root.join(&name)) {
            Ok(Ok(n)) => entry.size = n,
            Ok(Err(401 | 403)) => {
                authorization_failed = true;
                entry.fetch_error = Some("authorization".into());
            }
            Ok(Err(status)) => entry.fetch_error = Some(format!("http {status}")),
            Err(e) => entry.fetch_error = Some(e.to_string()),
        }
        manifest.files.push(entry);
    }

    manifest.fetch_status = if authorization_failed {
        FetchStatus::Failed("authorization".into())
    } else if manifest.files.iter().any(|f| f.fetch_error.is_some()) {
        FetchStatus::Partial
    } else {
        FetchStatus::Ok
    };
    manifest.fetched_at = Utc::now();
    Ok(verify_checksums(manifest))
}

fn enrich_metadata(package: &mut PackageRef, listing: &DatasetData) {
    if package.publication_date.is_none() {
        package.publication_date = listing.publication_date.as_deref().and_then(date_prefix);
    }
    if let Some(date) = package.publication_date {
        package
            .metadata
            .entry("year".into())
            .or_insert_with(|| date.format("%Y").to_string());
    }
    let Some(citation) = listing.latest_version.metadata_blocks.get("citation") else {
        return;
    };
    for field in &citation.fields {
        match (field.type_name.as_str(), &field.value) {
            ("title", Value::String(t)) if package.title.is_empty() => package.title = t.clone(),
            ("subject", Value::Array(values)) => {
                let subjects: Vec<&str> = values.iter().filter_map(Value::as_str).collect();
                if !subjects.is_empty() {
                    package
                        .metadata
                        .entry("subject".into())
                        .or_insert_with(|| subjects.join(";"));
                }
            }
            _ => {}
        }
    }
}

/// Fetches packages on up to `jobs` threads. Each package is handled by one
/// worker; finished manifests are handed back over a channel and returned in
/// input order.
pub fn fetch_all(
    client: &DataverseClient,
    packages: &[PackageRef],
    dest: &Path,
    jobs: usize,
) -> Vec<Result<PackageManifest, IngestError>> {
    let (work_tx, work_rx) = crossbeam_channel::unbounded::<usize>();
    let (done_tx, done_rx) = crossbeam_channel::unbounded();
    for i in 0..packages.len() {
        work_tx.send(i).expect("receiver alive");
    }
    drop(work_tx);
    thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            let work_rx = work_rx.clone();
            let done_tx = done_tx.clone();
            scope.spawn(move || {
                for i in work_rx.iter() {
                    let result = fetch_package(client, &packages[i], dest);
                    if done_tx.send((i, result)).is_err() {
                        break;
                    }
                }
            });
        }
    });
    drop(done_tx);
    let mut results: Vec<_> = done_rx.iter().collect();
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_names_suffix_on_collision() {
        let mut taken = HashSet::new();
        assert_eq!(flat_name("data.csv", "1", &mut taken), "data.csv");
        assert_eq!(flat_name("a/data.csv", "2", &mut taken), "data_1.csv");
        assert_eq!(flat_name("data.csv", "3", &mut taken), "data_2.csv");
        assert_eq!(flat_name("..", "9", &mut taken), "file_9");
        assert_eq!(flat_name("README", "4", &mut taken), "README");
        assert_eq!(flat_name("README", "5", &mut taken), "README_1");
    }

    #[test]
    fn query_matching() {
        let item = |name: &str, ct: &str| SearchItem {
            kind: "file".into(),
            name: Some(name.into()),
            file_content_type: Some(ct.into()),
            dataset_persistent_id: Some("doi:x".into()),
            dataset_name: None,
            published_at: None,
        };
        let ext = SearchQuery::Extension("R".into());
        assert!(ext.matches(&item("a.r", "text/plain")));
        assert!(!ext.matches(&item("a.Rmd", "text/plain")));
        let ct = SearchQuery::ContentType("type/x-r-syntax".into());
        assert!(ct.matches(&item("a.txt", "type/x-r-syntax")));
    }
}
