//! Conservative source rewrites that remove common causes of re-execution
//! failure in R scripts.
//!
//! Passes run in a fixed order: encoding normalization, `setwd` rewrite,
//! absolute-path basenaming, then library guarding. Every rewrite is
//! intra-line, so the physical line count never changes, and no pass touches
//! a line whose first non-blank character is `#`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding;
use crate::ingest::PackageManifest;
use crate::rsource::{self, OpenParen, Scanner, Token};

pub const DEFAULT_CRAN_MIRROR: &str = "http://cran.us.r-project.org";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanActionKind {
    EncodingNormalized,
    SetwdRewritten,
    PathBasenamed,
    LibraryGuarded,
    MirrorInjected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanAction {
    pub kind: CleanActionKind,
    /// 1-based line number in the input.
    pub line: usize,
    pub before: String,
    pub after: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanReport {
    pub path: String,
    pub actions: Vec<CleanAction>,
    pub was_ascii: bool,
    pub output_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Error)]
pub enum CleanError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanOptions {
    pub cran_mirror: String,
}

impl Default for CleanOptions {
    fn default() -> Self {
        CleanOptions {
            cran_mirror: DEFAULT_CRAN_MIRROR.to_string(),
        }
    }
}

/// Converts arbitrary bytes to ASCII text. UTF-8 is tried first, then a
/// single-byte decoding; each remaining non-ASCII character becomes `?` and a
/// leading byte-order mark is dropped.
pub fn normalize_encoding(raw: &[u8]) -> (String, bool) {
    let (text, was_ascii, _) = normalize_with_actions(raw);
    (text, was_ascii)
}

fn normalize_with_actions(raw: &[u8]) -> (String, bool, Vec<CleanAction>) {
    if raw.is_ascii() {
        let text = String::from_utf8(raw.to_vec()).expect("ascii is utf-8");
        return (text, true, Vec::new());
    }
    let decoded = encoding::decode(raw);
    let decoded = decoded.strip_prefix('\u{feff}').unwrap_or(&decoded);
    let mut out = String::with_capacity(decoded.len());
    let mut actions = Vec::new();
    for (idx, (line, end)) in rsource::split_lines(decoded).into_iter().enumerate() {
        let ascii: String = line
            .chars()
            .map(|c| if c.is_ascii() { c } else { '?' })
            .collect();
        if ascii != line || (idx == 0 && raw.starts_with(b"\xef\xbb\xbf")) {
            let before = if idx == 0 && raw.starts_with(b"\xef\xbb\xbf") {
                format!("\u{feff}{line}")
            } else {
                line.to_string()
            };
            actions.push(CleanAction {
                kind: CleanActionKind::EncodingNormalized,
                line: idx + 1,
                before,
                after: ascii.clone(),
            });
        }
        out.push_str(&ascii);
        out.push_str(end);
    }
    (out, false, actions)
}

struct Edit {
    start: usize,
    end: usize,
    text: String,
}

fn apply_edits(line: &str, mut edits: Vec<Edit>) -> String {
    edits.sort_by(|a, b| b.start.cmp(&a.start).then(b.end.cmp(&a.end)));
    let mut out = line.to_string();
    for e in edits {
        out.replace_range(e.start..e.end, &e.text);
    }
    out
}

/// Runs `f` on each non-comment line and reassembles the text.
fn rewrite_each_line(
    text: &str,
    mut f: impl FnMut(usize, &str) -> (Vec<Edit>, Vec<CleanAction>),
) -> (String, Vec<CleanAction>) {
    let mut out = String::with_capacity(text.len());
    let mut actions = Vec::new();
    for (idx, (line, end)) in rsource::split_lines(text).into_iter().enumerate() {
        if rsource::is_comment_line(line) {
            out.push_str(line);
        } else {
            let (edits, mut acts) = f(idx + 1, line);
            out.push_str(&apply_edits(line, edits));
            actions.append(&mut acts);
        }
        out.push_str(end);
    }
    (out, actions)
}

fn is_current_dir_literal(arg: &str) -> bool {
    rsource::as_string_literal(arg).is_some_and(|l| l.raw == ".")
}

/// Points every `setwd(...)` call at the current directory.
pub fn rewrite_setwd(text: &str) -> (String, Vec<CleanAction>) {
    rewrite_each_line(text, |line_no, line| {
        let code = rsource::code_part(line);
        let (calls, _) = rsource::calls_on_line(code);
        let mut edits = Vec::new();
        let mut actions = Vec::new();
        let mut covered_until = 0;
        for call in calls.iter().filter(|c| c.name == "setwd") {
            if call.start < covered_until || is_current_dir_literal(call.inner(code)) {
                continue;
            }
            covered_until = call.close + 1;
            let replacement = r#"setwd(".")"#.to_string();
            actions.push(CleanAction {
                kind: CleanActionKind::SetwdRewritten,
                line: line_no,
                before: call.text(code).to_string(),
                after: replacement.clone(),
            });
            edits.push(Edit {
                start: call.start,
                end: call.close + 1,
                text: replacement,
            });
        }
        (edits, actions)
    })
}

/// Heuristic absolute-path test on a literal's value: POSIX root, home
/// directory, drive letter or UNC share.
pub fn is_absolute_path(value: &str) -> bool {
    let b = value.as_bytes();
    if value.starts_with("\\\\") {
        return b.len() > 2 && !value[2..].trim().is_empty();
    }
    if b.len() >= 3 && b[0].is_ascii_alphabetic() && b[1] == b':' && (b[2] == b'/' || b[2] == b'\\') {
        return true;
    }
    if let Some(rest) = value.strip_prefix('/') {
        return rest.chars().next().is_some_and(|c| !c.is_whitespace() && c != '/');
    }
    if let Some(rest) = value.strip_prefix('~') {
        return rest.starts_with('/') && rest.len() > 1
            || (rest.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) && rest.contains('/'));
    }
    false
}

/// Calls that assemble a path from pieces; the whole call gets wrapped.
const PATH_BUILDERS: [&str; 3] = ["file.path", "paste0", "paste"];

/// Calls whose string arguments are not file paths, or are handled elsewhere.
const NON_PATH_CALLS: [&str; 21] = [
    "basename",
    "setwd",
    "library",
    "require",
    "install.packages",
    "system",
    "system2",
    "shell",
    "Sys.setenv",
    "Sys.getenv",
    "Sys.setlocale",
    ".libPaths",
    "grepl",
    "grep",
    "sub",
    "gsub",
    "regexpr",
    "gregexpr",
    "strsplit",
    "startsWith",
    "endsWith",
];

/// True when the literal spanning `start..end` of `line` is a whole call
/// argument (positional or named).
fn is_whole_argument(line: &str, start: usize, end: usize, continued: bool) -> bool {
    let before = line[..start].trim_end();
    let after = line[end..].trim_start();
    let opens = (continued && before.is_empty())
        || before.ends_with('(')
        || before.ends_with(',')
        || (before.ends_with('=') && {
            let b = before.as_bytes();
            b.len() < 2 || !matches!(b[b.len() - 2], b'=' | b'!' | b'<' | b'>')
        });
    let closes = after.is_empty() || after.starts_with(')') || after.starts_with(',');
    opens && closes
}

/// Wraps absolute-path literals passed to calls in `basename(...)`. Path
/// builders (`file.path`, `paste`, `paste0`) holding such a literal are
/// wrapped as a whole.
pub fn rewrite_paths(text: &str) -> (String, Vec<CleanAction>) {
    let mut scanner = Scanner::new();
    let mut out = String::with_capacity(text.len());
    let mut actions = Vec::new();
    for (idx, (line, end)) in rsource::split_lines(text).into_iter().enumerate() {
        let line_no = idx + 1;
        let start_stack = scanner.open_calls().to_vec();
        let continued = !start_stack.is_empty();
        let tokens = scanner.scan(line);
        if rsource::is_comment_line(line) {
            out.push_str(line);
            out.push_str(end);
            continue;
        }

        // Replay the tokens to learn each literal's enclosing call and the
        // parent of every paren opened on this line.
        let mut stack: Vec<OpenParen> = start_stack;
        let mut literal_parents = Vec::new();
        let mut parent_of_open: Vec<(usize, Option<String>)> = Vec::new();
        let mut close_of_open: Vec<(usize, usize)> = Vec::new();
        for tok in &tokens {
            match tok {
                Token::Open(o) => {
                    parent_of_open.push((o.paren, stack.last().and_then(|p| p.callee.clone())));
                    stack.push(o.clone());
                }
                Token::Close { at, open } => {
                    stack.pop();
                    if let Some(o) = open {
                        if o.line == idx {
                            close_of_open.push((o.paren, *at));
                        }
                    }
                }
                Token::Literal(lit) => literal_parents.push((lit.clone(), stack.last().cloned())),
                _ => {}
            }
        }

        let mut edits: Vec<Edit> = Vec::new();
        let mut wrapped_builders: Vec<usize> = Vec::new();
        for (lit, parent) in literal_parents {
            if !is_absolute_path(&lit.value()) || !is_whole_argument(line, lit.start, lit.end, continued) {
                continue;
            }
            let Some(parent) = parent else { continue };
            let Some(callee) = parent.callee.as_deref() else { continue };
            if PATH_BUILDERS.contains(&callee) {
                if parent.line != idx || wrapped_builders.contains(&parent.paren) {
                    continue;
                }
                let grand = parent_of_open
                    .iter()
                    .find(|(p, _)| *p == parent.paren)
                    .and_then(|(_, g)| g.clone());
                let close = close_of_open.iter().find(|(p, _)| *p == parent.paren).map(|(_, c)| *c);
                let (Some(close), false) = (close, grand.as_deref() == Some("basename")) else {
                    continue;
                };
                wrapped_builders.push(parent.paren);
                let before = &line[parent.start..=close];
                let after = format!("basename({before})");
                actions.push(CleanAction {
                    kind: CleanActionKind::PathBasenamed,
                    line: line_no,
                    before: before.to_string(),
                    after: after.clone(),
                });
                edits.push(Edit {
                    start: parent.start,
                    end: parent.start,
                    text: "basename(".into(),
                });
                edits.push(Edit {
                    start: close + 1,
                    end: close + 1,
                    text: ")".into(),
                });
            } else if !NON_PATH_CALLS.contains(&callee) {
                let before = &line[lit.start..lit.end];
                let after = format!("basename({before})");
                actions.push(CleanAction {
                    kind: CleanActionKind::PathBasenamed,
                    line: line_no,
                    before: before.to_string(),
                    after: after.clone(),
                });
                edits.push(Edit {
                    start: lit.start,
                    end: lit.end,
                    text: after,
                });
            }
        }
        out.push_str(&apply_edits(line, edits));
        out.push_str(end);
    }
    (out, actions)
}

const STATEMENT_WRAPPERS: [&str; 4] = [
    "suppressMessages",
    "suppressPackageStartupMessages",
    "suppressWarnings",
    "invisible",
];

fn guard_prefix(pkg: &str, mirror: &str) -> String {
    format!(r#"if (!require("{pkg}")) install.packages("{pkg}", repos="{mirror}"); "#)
}

/// Package named by a `library`/`require` call, when it is a literal name.
fn loaded_package(inner: &str) -> Option<String> {
    let args: Vec<&str> = rsource::split_args(inner)
        .into_iter()
        .map(|(s, e)| &inner[s..e])
        .collect();
    if args.iter().any(|a| {
        rsource::named_arg(a).is_some_and(|(n, v)| n == "character.only" && v.starts_with('T'))
    }) {
        return None;
    }
    let first = args
        .iter()
        .find_map(|a| match rsource::named_arg(a) {
            Some(("package", v)) => Some(v),
            _ => None,
        })
        .or_else(|| args.iter().copied().find(|a| rsource::named_arg(a).is_none()))?;
    let name = match rsource::as_string_literal(first) {
        Some(lit) => lit.value(),
        None => rsource::as_identifier(first)?.to_string(),
    };
    let valid = name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '.');
    valid.then_some(name)
}

fn has_repos_argument(inner: &str) -> bool {
    let args: Vec<&str> = rsource::split_args(inner)
        .into_iter()
        .map(|(s, e)| &inner[s..e])
        .collect();
    let positional = args.iter().filter(|a| rsource::named_arg(a).is_none()).count();
    positional >= 3
        || args
            .iter()
            .any(|a| rsource::named_arg(a).is_some_and(|(n, _)| n == "repos"))
}

/// Guards `library`/`require` statements with a conditional install from
/// `mirror`, and adds `repos=` to bare `install.packages` calls.
pub fn rewrite_library_loads(text: &str, mirror: &str) -> (String, Vec<CleanAction>) {
    let mut scanner = Scanner::new();
    let mut out = String::with_capacity(text.len());
    let mut actions = Vec::new();
    for (idx, (line, end)) in rsource::split_lines(text).into_iter().enumerate() {
        let line_no = idx + 1;
        let continuation = !scanner.open_calls().is_empty();
        scanner.scan(line);
        if rsource::is_comment_line(line) {
            out.push_str(line);
            out.push_str(end);
            continue;
        }
        let code = rsource::code_part(line);
        let (calls, _) = rsource::calls_on_line(code);
        let mut edits = Vec::new();

        for call in calls.iter().filter(|c| c.name == "install.packages") {
            let inner = call.inner(code);
            if inner.trim().is_empty() || has_repos_argument(inner) {
                continue;
            }
            let addition = format!(r#", repos="{mirror}""#);
            actions.push(CleanAction {
                kind: CleanActionKind::MirrorInjected,
                line: line_no,
                before: call.text(code).to_string(),
                after: format!("{}{addition})", &code[call.start..call.close]),
            });
            edits.push(Edit {
                start: call.close,
                end: call.close,
                text: addition,
            });
        }

        if !continuation {
            for call in calls
                .iter()
                .filter(|c| c.name == "library" || c.name == "require")
            {
                let Some(pkg) = loaded_package(call.inner(code)) else { continue };
                // the statement is the call itself or a single wrapper around it
                let (stmt_start, stmt_end) = match call.parent.as_deref() {
                    None => (call.start, call.close),
                    Some(w) if STATEMENT_WRAPPERS.contains(&w) => {
                        let Some(wrapper) = calls.iter().find(|o| {
                            o.name == w && o.start < call.start && o.close > call.close && o.parent.is_none()
                        }) else {
                            continue;
                        };
                        if wrapper.inner(code).trim() != call.text(code) {
                            continue;
                        }
                        (wrapper.start, wrapper.close)
                    }
                    Some(_) => continue,
                };
                let stmt_start = statement_start(code, stmt_start);
                let before_text = code[..stmt_start].trim_end();
                let after_text = code[stmt_end + 1..].trim_start();
                let starts_statement =
                    before_text.is_empty() || before_text.ends_with(';') || before_text.ends_with('{');
                let ends_statement =
                    after_text.is_empty() || after_text.starts_with(';') || after_text.starts_with('}');
                if !starts_statement || !ends_statement {
                    continue;
                }
                if before_text.contains(&format!(r#"if (!require("{pkg}"))"#)) {
                    continue;
                }
                let prefix = guard_prefix(&pkg, mirror);
                let statement = &code[stmt_start..=stmt_end];
                actions.push(CleanAction {
                    kind: CleanActionKind::LibraryGuarded,
                    line: line_no,
                    before: statement.to_string(),
                    after: format!("{prefix}{statement}"),
                });
                edits.push(Edit {
                    start: stmt_start,
                    end: stmt_start,
                    text: prefix,
                });
            }
        }
        out.push_str(&apply_edits(line, edits));
        out.push_str(end);
    }
    (out, actions)
}

/// Moves a call start back over a `pkg::` or `pkg:::` qualifier.
fn statement_start(code: &str, call_start: usize) -> usize {
    let head = &code[..call_start];
    let Some(rest) = head.strip_suffix("::").map(|r| r.strip_suffix(':').unwrap_or(r)) else {
        return call_start;
    };
    let ns_len = rest
        .chars()
        .rev()
        .take_while(|&c| rsource::is_ident_char(c))
        .count();
    rest.len() - ns_len
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanedSource {
    pub text: String,
    pub actions: Vec<CleanAction>,
    pub was_ascii: bool,
}

/// Applies every pass in order to one script held in memory.
pub fn clean_source(raw: &[u8], options: &CleanOptions) -> CleanedSource {
    let (text, was_ascii, mut actions) = normalize_with_actions(raw);
    let (text, mut a) = rewrite_setwd(&text);
    actions.append(&mut a);
    let (text, mut a) = rewrite_paths(&text);
    actions.append(&mut a);
    let (text, mut a) = rewrite_library_loads(&text, &options.cran_mirror);
    actions.append(&mut a);
    CleanedSource {
        text,
        actions,
        was_ascii,
    }
}

/// Cleans `path` into `out_dir`, keeping the file name. The original file is
/// never modified.
pub fn clean_file(path: &Path, out_dir: &Path, options: &CleanOptions) -> Result<CleanReport, CleanError> {
    let name = path.file_name().map(PathBuf::from).unwrap_or_default();
    clean_to(path, &out_dir.join(name), options)
}

fn clean_to(path: &Path, output: &Path, options: &CleanOptions) -> Result<CleanReport, CleanError> {
    let raw = fs::read(path).map_err(|source| CleanError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let cleaned = clean_source(&raw, options);
    let write = || -> std::io::Result<()> {
        if let Some(parent) = output.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(output, cleaned.text.as_bytes())
    };
    let error = write().err().map(|e| e.to_string());
    Ok(CleanReport {
        path: path.to_string_lossy().into_owned(),
        actions: cleaned.actions,
        was_ascii: cleaned.was_ascii,
        output_path: output.to_string_lossy().into_owned(),
        error,
    })
}

/// Cleans every R script of a package into `out_root`, mirroring relative
/// paths. Unreadable scripts yield a report carrying the error.
pub fn clean_package(manifest: &PackageManifest, out_root: &Path, options: &CleanOptions) -> Vec<CleanReport> {
    manifest
        .r_scripts()
        .into_iter()
        .map(|entry| {
            let src = manifest.root.join(&entry.relative_path);
            let dst = out_root.join(&entry.relative_path);
            clean_to(&src, &dst, options).unwrap_or_else(|e| CleanReport {
                path: src.to_string_lossy().into_owned(),
                actions: Vec::new(),
                was_ascii: false,
                output_path: dst.to_string_lossy().into_owned(),
                error: Some(e.to_string()),
            })
        })
        .collect()
}

/// Unified diff between an original script and its cleaned form. Cleaning
/// keeps lines aligned, so hunks pair lines by index.
pub fn unified_diff(label: &str, original: &[u8], cleaned: &str) -> String {
    const CONTEXT: usize = 3;
    let original = encoding::decode(original);
    let old: Vec<&str> = original.lines().collect();
    let new: Vec<&str> = cleaned.lines().collect();
    let n = old.len().max(new.len());
    let changed: Vec<usize> = (0..n).filter(|&i| old.get(i) != new.get(i)).collect();
    if changed.is_empty() {
        return String::new();
    }
    let mut out = format!("--- a/{label}\n+++ b/{label}\n");
    let mut i = 0;
    while i < changed.len() {
        let first = changed[i];
        let mut last = first;
        while i + 1 < changed.len() && changed[i + 1] <= last + 2 * CONTEXT + 1 {
            i += 1;
            last = changed[i];
        }
        let lo = first.saturating_sub(CONTEXT);
        let hi = (last + CONTEXT + 1).min(n);
        let old_len = hi.min(old.len()).saturating_sub(lo);
        let new_len = hi.min(new.len()).saturating_sub(lo);
        out.push_str(&format!("@@ -{},{} +{},{} @@\n", lo + 1, old_len, lo + 1, new_len));
        for j in lo..hi {
            match (old.get(j), new.get(j)) {
                (Some(a), Some(b)) if a == b => out.push_str(&format!(" {a}\n")),
                (a, b) => {
                    if let Some(a) = a {
                        out.push_str(&format!("-{a}\n"));
                    }
                    if let Some(b) = b {
                        out.push_str(&format!("+{b}\n"));
                    }
                }
            }
        }
        i += 1;
    }
    out
}
