//! In-process stand-in for a Dataverse installation, serving the search,
//! dataset and file-access endpoints over loopback HTTP. Used by tests and
//! for offline demonstrations of the ingest stage.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde_json::{json, Value};
use sha2::Digest;

#[derive(Debug, Clone)]
pub struct MockFile {
    pub name: String,
    pub directory: Option<String>,
    pub content: Vec<u8>,
    pub content_type: String,
    /// Download answers 403.
    pub forbidden: bool,
    /// Download answers 500.
    pub server_error: bool,
    /// The advertised checksum does not match the content.
    pub wrong_checksum: bool,
}

impl MockFile {
    pub fn new(name: &str, content: impl Into<Vec<u8>>) -> Self {
        let content_type = if name.to_ascii_lowercase().ends_with(".r") {
            "type/x-r-syntax"
        } else {
            "application/octet-stream"
        };
        MockFile {
            name: name.to_string(),
            directory: None,
            content: content.into(),
            content_type: content_type.to_string(),
            forbidden: false,
            server_error: false,
            wrong_checksum: false,
        }
    }

    pub fn forbidden(mut self) -> Self {
        self.forbidden = true;
        self
    }

    pub fn in_directory(mut self, dir: &str) -> Self {
        self.directory = Some(dir.to_string());
        self
    }
}

#[derive(Debug, Clone)]
pub struct MockDataset {
    pub persistent_id: String,
    pub title: String,
    pub publication_date: Option<String>,
    pub subjects: Vec<String>,
    pub files: Vec<MockFile>,
    /// Dataset metadata answers 403.
    pub restricted: bool,
}

impl MockDataset {
    pub fn new(persistent_id: &str, files: Vec<MockFile>) -> Self {
        MockDataset {
            persistent_id: persistent_id.to_string(),
            title: format!("Replication data for {persistent_id}"),
            publication_date: Some("2019-05-01".to_string()),
            subjects: vec!["Social Sciences".to_string()],
            files,
            restricted: false,
        }
    }
}

struct Shared {
    datasets: Vec<MockDataset>,
    /// file id -> (dataset index, file index)
    files: HashMap<u64, (usize, usize)>,
    malformed_search: AtomicBool,
    requests: AtomicUsize,
}

pub struct MockDataverse {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockDataverse {
    pub fn start(datasets: Vec<MockDataset>) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let mut files = HashMap::new();
        let mut next_id = 1u64;
        for (di, d) in datasets.iter().enumerate() {
            for fi in 0..d.files.len() {
                files.insert(next_id, (di, fi));
                next_id += 1;
            }
        }
        let shared = Arc::new(Shared {
            datasets,
            files,
            malformed_search: AtomicBool::new(false),
            requests: AtomicUsize::new(0),
        });
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let shared = Arc::clone(&shared);
            let stop = Arc::clone(&stop);
            thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    if let Ok(stream) = stream {
                        let shared = Arc::clone(&shared);
                        thread::spawn(move || {
                            let _ = serve(stream, &shared);
                        });
                    }
                }
            })
        };
        Ok(MockDataverse {
            addr,
            shared,
            stop,
            handle: Some(handle),
        })
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Makes the search endpoint return a non-JSON body.
    pub fn set_malformed_search(&self, on: bool) {
        self.shared.malformed_search.store(on, Ordering::SeqCst);
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockDataverse {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn file_id_of(shared: &Shared, di: usize, fi: usize) -> u64 {
    shared
        .files
        .iter()
        .find(|(_, &loc)| loc == (di, fi))
        .map(|(&id, _)| id)
        .expect("every file has an id")
}

fn serve(stream: TcpStream, shared: &Shared) -> std::io::Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line)?;
    loop {
        let mut header = String::new();
        if reader.read_line(&mut header)? == 0 || header == "\r\n" || header == "\n" {
            break;
        }
    }
    shared.requests.fetch_add(1, Ordering::SeqCst);
    let target = request_line.split_whitespace().nth(1).unwrap_or("/");
    let url = url::Url::parse(&format!("http://mock{target}")).expect("valid request target");
    let params: HashMap<String, String> = url.query_pairs().into_owned().collect();
    let (status, content_type, body) = route(url.path(), &params, shared);
    let mut stream = stream;
    let reason = match status {
        200 => "OK",
        403 => "Forbidden",
        404 => "Not Found",
        _ => "Internal Server Error",
    };
    write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: {content_type}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(&body)?;
    stream.flush()
}

fn ok_json(data: Value) -> (u16, &'static str, Vec<u8>) {
    (
        200,
        "application/json",
        json!({"status": "OK", "data": data}).to_string().into_bytes(),
    )
}

fn error_json(status: u16, message: &str) -> (u16, &'static str, Vec<u8>) {
    (
        status,
        "application/json",
        json!({"status": "ERROR", "message": message}).to_string().into_bytes(),
    )
}

fn query_matches(q: &str, file: &MockFile) -> bool {
    if let Some(ext) = q.strip_prefix("fileName:*.") {
        return file
            .name
            .rsplit_once('.')
            .is_some_and(|(_, e)| e.eq_ignore_ascii_case(ext));
    }
    if let Some(ct) = q.strip_prefix("fileContentType:") {
        return file.content_type.eq_ignore_ascii_case(ct.trim_matches('"'));
    }
    true
}

fn route(path: &str, params: &HashMap<String, String>, shared: &Shared) -> (u16, &'static str, Vec<u8>) {
    if path == "/api/search" {
        if shared.malformed_search.load(Ordering::SeqCst) {
            return (200, "text/html", b"<html>Service temporarily unavailable</html>".to_vec());
        }
        let q = params.get("q").map(String::as_str).unwrap_or("*");
        let start: usize = params.get("start").and_then(|s| s.parse().ok()).unwrap_or(0);
        let per_page: usize = params.get("per_page").and_then(|s| s.parse().ok()).unwrap_or(10);
        let mut items = Vec::new();
        for (di, d) in shared.datasets.iter().enumerate() {
            for (fi, f) in d.files.iter().enumerate() {
                if query_matches(q, f) {
                    items.push(json!({
                        "name": f.name,
                        "type": "file",
                        "file_id": file_id_of(shared, di, fi).to_string(),
                        "file_content_type": f.content_type,
                        "dataset_name": d.title,
                        "dataset_persistent_id": d.persistent_id,
                        "published_at": d.publication_date.as_ref().map(|p| format!("{p}T00:00:00Z")),
                    }));
                }
            }
        }
        let total = items.len();
        let page: Vec<Value> = items.into_iter().skip(start).take(per_page).collect();
        return ok_json(json!({
            "q": q,
            "total_count": total,
            "start": start,
            "count_in_response": page.len(),
            "items": page,
        }));
    }
    if path == "/api/datasets/:persistentId/" {
        let pid = params.get("persistentId").cloned().unwrap_or_default();
        let Some((di, d)) = shared
            .datasets
            .iter()
            .enumerate()
            .find(|(_, d)| d.persistent_id == pid)
        else {
            return error_json(404, "dataset not found");
        };
        if d.restricted {
            return error_json(403, "not authorized");
        }
        let files: Vec<Value> = d
            .files
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                let mut digest = hex::encode(md5::Md5::digest(&f.content));
                if f.wrong_checksum {
                    digest = "0".repeat(32);
                }
                json!({
                    "label": f.name,
                    "directoryLabel": f.directory,
                    "restricted": f.forbidden,
                    "dataFile": {
                        "id": file_id_of(shared, di, fi),
                        "filename": f.name,
                        "filesize": f.content.len(),
                        "contentType": f.content_type,
                        "md5": digest,
                        "checksum": {"type": "MD5", "value": digest},
                    }
                })
            })
            .collect();
        return ok_json(json!({
            "id": di + 1,
            "publicationDate": d.publication_date,
            "latestVersion": {
                "files": files,
                "metadataBlocks": {
                    "citation": {
                        "fields": [
                            {"typeName": "title", "multiple": false, "typeClass": "primitive", "value": d.title},
                            {"typeName": "subject", "multiple": true, "typeClass": "controlledVocabulary", "value": d.subjects},
                        ]
                    }
                }
            }
        }));
    }
    if let Some(id) = path.strip_prefix("/api/access/datafile/") {
        let Some(&(di, fi)) = id.parse::<u64>().ok().and_then(|id| shared.files.get(&id)) else {
            return error_json(404, "file not found");
        };
        let d = &shared.datasets[di];
        let f = &d.files[fi];
        if f.forbidden || d.restricted {
            return error_json(403, "not authorized");
        }
        if f.server_error {
            return error_json(500, "internal error");
        }
        return (200, "application/octet-stream", f.content.clone());
    }
    error_json(404, "no such endpoint")
}
