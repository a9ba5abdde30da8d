//! `stub-r`: a stand-in for `Rscript` that understands a small slice of R.
//!
//! It exists so the execution pipeline can be exercised on machines without
//! R. Error messages copy the wording of real R for the failure modes the
//! classifier distinguishes. Supported: assignment, `if`/`else` blocks,
//! `library`/`require`/`install.packages` against a local package registry,
//! `setwd`/`getwd`, common file readers and writers, `source`, `Sys.sleep`,
//! `quit`, `stop`, `stopifnot`, `getRversion`, `cat`/`message`/`print`,
//! `system`, `paste`/`paste0`/`file.path`/`basename`/`c`. Function bodies and
//! loops are skipped. Calls to anything else do nothing.
//!
//! Usage: `stub-r [--r-version X.Y.Z] [--repo FILE] [--lib DIR]
//! [--preinstalled a,b] SCRIPT`. The repo file lists one installable package
//! per line. Installs go to `--lib` (default `.stub-lib`, relative to the
//! working directory). `REPRUN_OFFLINE=1` makes installs fail as they would
//! without network access.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{exit, Command};
use std::time::Duration;

use reprun_core::rsource::{self, Scanner, Token};

const BASE_PACKAGES: [&str; 14] = [
    "base", "compiler", "datasets", "graphics", "grDevices", "grid", "methods", "parallel", "splines", "stats",
    "stats4", "tcltk", "tools", "utils",
];

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Null,
    Logical(bool),
    Num(f64),
    Str(String),
    Strs(Vec<String>),
    Version(Vec<u32>),
    Other,
}

enum Halt {
    Error(String),
    Quit(i32),
}

type Res<T> = Result<T, Halt>;

fn err<T>(msg: impl Into<String>) -> Res<T> {
    Err(Halt::Error(msg.into()))
}

fn parse_version(s: &str) -> Vec<u32> {
    s.split(['.', '-']).filter_map(|p| p.parse().ok()).collect()
}

fn truthy(v: &Value) -> bool {
    match v {
        Value::Logical(b) => *b,
        Value::Num(n) => *n != 0.0,
        Value::Null => false,
        _ => true,
    }
}

fn as_text(v: &Value) -> String {
    match v {
        Value::Str(s) => s.clone(),
        Value::Strs(v) => v.join(" "),
        Value::Num(n) => n.to_string(),
        Value::Logical(b) => if *b { "TRUE" } else { "FALSE" }.to_string(),
        Value::Version(v) => v.iter().map(u32::to_string).collect::<Vec<_>>().join("."),
        Value::Null | Value::Other => String::new(),
    }
}

/// Replaces string-literal contents with `_` so structural characters inside
/// strings are ignored. Byte offsets are preserved.
fn mask(code: &str) -> String {
    let mut out = code.as_bytes().to_vec();
    for tok in Scanner::new().scan(code) {
        if let Token::Literal(l) = tok {
            for b in &mut out[(l.start + 1).min(l.end)..l.end.saturating_sub(1).max(l.start + 1)] {
                *b = b'_';
            }
        }
    }
    String::from_utf8(out).expect("masking keeps ascii structure")
}

/// Top-level positions of any of `needles` in masked text, at paren depth 0.
fn top_level_find(masked: &str, needle: &str) -> Option<usize> {
    let mut depth = 0i32;
    let b = masked.as_bytes();
    for i in 0..b.len() {
        match b[i] {
            b'(' | b'[' => depth += 1,
            b')' | b']' => depth -= 1,
            _ => {}
        }
        if depth == 0 && masked[i..].starts_with(needle) {
            return Some(i);
        }
    }
    None
}

enum Event {
    Stmt(String),
    Open,
    Close,
}

/// Splits one logical line into statements and brace events.
fn events(code: &str) -> Vec<Event> {
    let masked = mask(code);
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    let push = |out: &mut Vec<Event>, s: &str| {
        let s = s.trim();
        if !s.is_empty() {
            out.push(Event::Stmt(s.to_string()));
        }
    };
    for (i, c) in masked.bytes().enumerate() {
        match c {
            b'(' | b'[' => depth += 1,
            b')' | b']' => depth -= 1,
            b';' | b'{' | b'}' if depth == 0 => {
                push(&mut out, &code[start..i]);
                match c {
                    b'{' => out.push(Event::Open),
                    b'}' => out.push(Event::Close),
                    _ => {}
                }
                start = i + 1;
            }
            _ => {}
        }
    }
    push(&mut out, &code[start..]);
    out
}

/// Joins physical lines into logical lines: a line with an unclosed paren
/// continues on the next.
fn logical_lines(text: &str) -> Vec<String> {
    let mut scanner = Scanner::new();
    let mut out = Vec::new();
    let mut buf = String::new();
    for line in text.lines() {
        scanner.scan(line);
        if rsource::is_comment_line(line) {
            continue;
        }
        buf.push_str(rsource::code_part(line));
        buf.push(' ');
        if scanner.open_calls().is_empty() {
            out.push(std::mem::take(&mut buf));
        }
    }
    if !buf.trim().is_empty() {
        out.push(buf);
    }
    out
}

/// `if (cond) rest` split into `(cond, rest)`.
fn split_if(stmt: &str) -> Option<(&str, &str)> {
    let rest = stmt.strip_prefix("if")?;
    if !rest.trim_start().starts_with('(') {
        return None;
    }
    let (calls, _) = rsource::calls_on_line(stmt);
    let call = calls.iter().find(|c| c.name == "if" && c.start == 0)?;
    Some((call.inner(stmt), stmt[call.close + 1..].trim()))
}

fn starts_with_word(s: &str, word: &str) -> bool {
    s.strip_prefix(word)
        .is_some_and(|r| r.is_empty() || !rsource::is_ident_char(r.chars().next().unwrap()))
}

struct Block {
    executing: bool,
    /// For `if` chains: whether some branch has already run.
    chain_taken: Option<bool>,
}

struct Arg<'a> {
    name: Option<&'a str>,
    value: &'a str,
}

fn parse_args(inner: &str) -> Vec<Arg<'_>> {
    rsource::split_args(inner)
        .into_iter()
        .map(|(s, e)| {
            let a = &inner[s..e];
            match rsource::named_arg(a) {
                Some((n, v)) => Arg { name: Some(n), value: v },
                None => Arg { name: None, value: a },
            }
        })
        .collect()
}

fn arg<'a>(args: &'a [Arg<'a>], name: &str, position: usize) -> Option<&'a str> {
    args.iter()
        .find(|a| a.name == Some(name))
        .or_else(|| args.iter().filter(|a| a.name.is_none()).nth(position))
        .map(|a| a.value)
}

struct Interp {
    version: Vec<u32>,
    lib_dir: PathBuf,
    repo: BTreeSet<String>,
    preinstalled: BTreeSet<String>,
    offline: bool,
    vars: HashMap<String, Value>,
    source_depth: usize,
}

impl Interp {
    fn installed(&self, pkg: &str) -> bool {
        BASE_PACKAGES.contains(&pkg) || self.preinstalled.contains(pkg) || self.lib_dir.join(pkg).is_dir()
    }

    fn run_text(&mut self, text: &str) -> Res<()> {
        let mut stack: Vec<Block> = Vec::new();
        // block closed most recently, for a following `else`
        let mut last_closed: Option<Block> = None;
        for line in logical_lines(text) {
            let evs = events(&line);
            let mut i = 0;
            while i < evs.len() {
                let executing = stack.iter().all(|b| b.executing);
                let next_is_open = matches!(evs.get(i + 1), Some(Event::Open));
                match &evs[i] {
                    Event::Open => {
                        stack.push(Block {
                            executing,
                            chain_taken: None,
                        });
                        last_closed = None;
                    }
                    Event::Close => {
                        last_closed = stack.pop();
                    }
                    Event::Stmt(s) => {
                        let closed = last_closed.take();
                        let (s, chain) = match s.strip_prefix("else") {
                            Some(rest) if starts_with_word(s, "else") => {
                                let prior = closed.and_then(|b| b.chain_taken).unwrap_or(true);
                                (rest.trim(), Some(prior))
                            }
                            _ => (s.as_str(), None),
                        };
                        // an else branch runs only if no earlier branch did
                        let executing = executing && !chain.unwrap_or(false);
                        let already = chain.unwrap_or(false);
                        if let Some((cond, body)) = split_if(s) {
                            let taken = executing && truthy(&self.eval(cond)?);
                            if body.is_empty() && next_is_open {
                                stack.push(Block {
                                    executing: taken,
                                    chain_taken: Some(already || taken),
                                });
                                i += 2;
                                continue;
                            }
                            if taken && !body.is_empty() {
                                self.exec(body)?;
                            }
                        } else if s.is_empty() && next_is_open {
                            stack.push(Block {
                                executing,
                                chain_taken: Some(true),
                            });
                            i += 2;
                            continue;
                        } else if ["for", "while", "repeat"].iter().any(|w| starts_with_word(s, w)) {
                            if next_is_open {
                                stack.push(Block {
                                    executing: false,
                                    chain_taken: None,
                                });
                                i += 2;
                                continue;
                            }
                        } else if mask(s).contains("function(") || mask(s).contains("function (") {
                            if executing {
                                self.define_function(s);
                            }
                            if next_is_open {
                                stack.push(Block {
                                    executing: false,
                                    chain_taken: None,
                                });
                                i += 2;
                                continue;
                            }
                        } else if executing {
                            self.exec(s)?;
                        }
                    }
                }
                i += 1;
            }
        }
        Ok(())
    }

    fn define_function(&mut self, stmt: &str) {
        let masked = mask(stmt);
        if let Some(p) = top_level_find(&masked, "<-").or_else(|| top_level_find(&masked, "=")) {
            if let Some(name) = rsource::as_identifier(&stmt[..p]) {
                self.vars.insert(name.to_string(), Value::Other);
            }
        }
    }

    fn exec(&mut self, stmt: &str) -> Res<()> {
        let masked = mask(stmt);
        let assign = top_level_find(&masked, "<<-")
            .map(|p| (p, 3))
            .or_else(|| top_level_find(&masked, "<-").map(|p| (p, 2)))
            .or_else(|| {
                let p = top_level_find(&masked, "=")?;
                let b = masked.as_bytes();
                let prev = p.checked_sub(1).map(|q| b[q]);
                let next = b.get(p + 1).copied();
                (!matches!(prev, Some(b'=' | b'!' | b'<' | b'>')) && next != Some(b'=')).then_some((p, 1))
            });
        if let Some((p, len)) = assign {
            let lhs = stmt[..p].trim();
            let value = self.eval(&stmt[p + len..])?;
            match rsource::as_identifier(lhs) {
                Some(name) => {
                    self.vars.insert(name.to_string(), value);
                }
                None => {
                    let base: String = lhs.chars().take_while(|&c| rsource::is_ident_char(c)).collect();
                    let is_call = lhs[base.len()..].trim_start().starts_with('(');
                    if !base.is_empty() && !is_call && !self.vars.contains_key(&base) {
                        return err(format!("Error: object '{base}' not found"));
                    }
                }
            }
            return Ok(());
        }
        self.eval(stmt).map(|_| ())
    }

    fn lookup(&self, name: &str) -> Res<Value> {
        match name {
            "TRUE" | "T" => Ok(Value::Logical(true)),
            "FALSE" | "F" => Ok(Value::Logical(false)),
            "NULL" | "NA" => Ok(Value::Null),
            "pi" | "letters" | "LETTERS" | "iris" | "mtcars" | "Inf" | "NaN" => Ok(Value::Other),
            _ => self
                .vars
                .get(name)
                .cloned()
                .ok_or_else(|| Halt::Error(format!("Error: object '{name}' not found"))),
        }
    }

    fn eval(&mut self, expr: &str) -> Res<Value> {
        let e = expr.trim();
        if e.is_empty() {
            return Ok(Value::Null);
        }
        if let Some(rest) = e.strip_prefix('!') {
            return Ok(Value::Logical(!truthy(&self.eval(rest)?)));
        }
        let masked = mask(e);
        for op in [">=", "<=", "==", "!=", ">", "<"] {
            if let Some(p) = top_level_find(&masked, op) {
                if op == "<" && masked[p..].starts_with("<-") {
                    continue;
                }
                let l = self.eval(&e[..p])?;
                let r = self.eval(&e[p + op.len()..])?;
                return Ok(compare(&l, &r, op));
            }
        }
        if let Some(lit) = rsource::as_string_literal(e) {
            return Ok(Value::Str(lit.value()));
        }
        if let Some(n) = parse_number(e) {
            return Ok(Value::Num(n));
        }
        if matches!(e, "TRUE" | "T" | "FALSE" | "F" | "NULL" | "NA") {
            return self.lookup(e);
        }
        if let Some(name) = rsource::as_identifier(e) {
            return self.lookup(name);
        }
        if e.starts_with('(') && e.ends_with(')') && top_level_find(&masked[1..], ")") == Some(e.len() - 2) {
            return self.eval(&e[1..e.len() - 1]);
        }
        let (calls, _) = rsource::calls_on_line(e);
        if let Some(call) = calls.iter().find(|c| c.close == e.len() - 1 && is_whole_call(e, c.start)) {
            return self.call(&call.name, call.inner(e), call.text(e));
        }
        // arithmetic and indexing: operands must exist, the value is opaque
        if !masked.contains('~') {
            for piece in masked.split(['+', '-', '*', '/', '^']) {
                let start = piece.as_ptr() as usize - masked.as_ptr() as usize;
                let operand = e[start..start + piece.len()].trim();
                let base: String = operand.chars().take_while(|&c| rsource::is_ident_char(c)).collect();
                let rest = operand[base.len()..].trim_start();
                if !base.is_empty()
                    && base.chars().next().is_some_and(|c| c.is_ascii_alphabetic() || c == '.')
                    && (rest.is_empty() || rest.starts_with('$') || rest.starts_with('['))
                {
                    self.lookup(&base)?;
                }
            }
        }
        Ok(Value::Other)
    }

    fn eval_args(&mut self, args: &[Arg<'_>]) -> Res<Vec<Value>> {
        args.iter().map(|a| self.eval(a.value)).collect()
    }

    fn path_arg(&mut self, args: &[Arg<'_>], names: &[&str], position: usize) -> Res<Option<String>> {
        let raw = names
            .iter()
            .find_map(|n| args.iter().find(|a| a.name == Some(*n)))
            .map(|a| a.value)
            .or_else(|| args.iter().filter(|a| a.name.is_none()).nth(position).map(|a| a.value));
        match raw {
            Some(r) => Ok(Some(as_text(&self.eval(r)?))),
            None => Ok(None),
        }
    }

    fn call(&mut self, name: &str, inner: &str, text: &str) -> Res<Value> {
        let args = parse_args(inner);
        match name {
            "library" | "require" | "requireNamespace" => self.load_package(name, &args),
            "install.packages" => self.install(&args),
            "setwd" => {
                let dir = self.path_arg(&args, &["dir"], 0)?.unwrap_or_default();
                let old = std::env::current_dir().map(|p| p.display().to_string()).unwrap_or_default();
                if Path::new(&dir).is_dir() && std::env::set_current_dir(&dir).is_ok() {
                    Ok(Value::Str(old))
                } else {
                    err(format!("Error in {text} : cannot change working directory"))
                }
            }
            "getwd" => Ok(Value::Str(
                std::env::current_dir().map(|p| p.display().to_string()).unwrap_or_default(),
            )),
            "file.path" => {
                let parts = self.eval_args(&args)?;
                Ok(Value::Str(parts.iter().map(as_text).collect::<Vec<_>>().join("/")))
            }
            "paste" | "paste0" => {
                let sep = match args.iter().find(|a| a.name == Some("sep")) {
                    Some(a) => as_text(&self.eval(a.value)?),
                    None if name == "paste" => " ".to_string(),
                    None => String::new(),
                };
                let positional: Vec<Arg> = args.into_iter().filter(|a| a.name.is_none()).collect();
                let parts = self.eval_args(&positional)?;
                Ok(Value::Str(parts.iter().map(as_text).collect::<Vec<_>>().join(&sep)))
            }
            "basename" => {
                let p = self.path_arg(&args, &["path"], 0)?.unwrap_or_default();
                let trimmed = p.trim_end_matches(['/', '\\']);
                Ok(Value::Str(trimmed.rsplit(['/', '\\']).next().unwrap_or("").to_string()))
            }
            "c" => {
                let vals = self.eval_args(&args)?;
                if vals.iter().all(|v| matches!(v, Value::Str(_))) {
                    Ok(Value::Strs(vals.iter().map(as_text).collect()))
                } else {
                    Ok(Value::Other)
                }
            }
            "getRversion" => Ok(Value::Version(self.version.clone())),
            "file.exists" | "dir.exists" => {
                let p = self.path_arg(&args, &[], 0)?.unwrap_or_default();
                Ok(Value::Logical(Path::new(&p).exists()))
            }
            "dir.create" => {
                let p = self.path_arg(&args, &["path"], 0)?.unwrap_or_default();
                Ok(Value::Logical(fs::create_dir_all(p).is_ok()))
            }
            "exists" => {
                let n = self.path_arg(&args, &["x"], 0)?.unwrap_or_default();
                Ok(Value::Logical(self.vars.contains_key(&n)))
            }
            "source" => {
                let p = self.path_arg(&args, &["file"], 0)?.unwrap_or_default();
                match fs::read(&p) {
                    Ok(bytes) if self.source_depth < 16 => {
                        self.source_depth += 1;
                        let r = self.run_text(&String::from_utf8_lossy(&bytes));
                        self.source_depth -= 1;
                        r.map(|_| Value::Null)
                    }
                    Ok(_) => err("Error: evaluation nested too deeply"),
                    Err(_) => err(open_error("file(filename, \"r\", encoding = encoding)", &p)),
                }
            }
            "read.csv" | "read.table" | "read.delim" | "read_csv" | "read_dta" | "read.dta" | "fread"
            | "read_excel" | "readLines" | "scan" | "read_sav" | "read.xlsx" => {
                let p = self.path_arg(&args, &["file", "path", "con", "input"], 0)?.unwrap_or_default();
                if Path::new(&p).is_file() {
                    Ok(Value::Other)
                } else {
                    err(open_error("file(file, \"rt\")", &p))
                }
            }
            "readRDS" | "load" => {
                let p = self.path_arg(&args, &["file"], 0)?.unwrap_or_default();
                if Path::new(&p).is_file() {
                    Ok(Value::Other)
                } else {
                    err(open_error("gzfile(file, \"rb\")", &p))
                }
            }
            "write.csv" | "write.table" | "saveRDS" | "writeLines" | "write_csv" => {
                if let Some(obj) = arg(&args, "x", 0).or_else(|| arg(&args, "object", 0)) {
                    self.eval(obj)?;
                }
                let p = self.path_arg(&args, &["file", "con", "path"], 1)?;
                self.write_output(p)
            }
            "png" | "pdf" | "jpeg" | "sink" | "ggsave" | "svg" => {
                let p = self.path_arg(&args, &["filename", "file"], 0)?;
                self.write_output(p)
            }
            "save" => {
                let p = match args.iter().find(|a| a.name == Some("file")) {
                    Some(a) => Some(as_text(&self.eval(a.value)?)),
                    None => None,
                };
                self.write_output(p)
            }
            "Sys.sleep" => {
                let secs = match self.eval(arg(&args, "time", 0).unwrap_or("0"))? {
                    Value::Num(n) => n,
                    _ => 0.0,
                };
                std::thread::sleep(Duration::from_secs_f64(secs.max(0.0)));
                Ok(Value::Null)
            }
            "quit" | "q" => {
                let status = match arg(&args, "status", 1) {
                    Some(s) => match self.eval(s)? {
                        Value::Num(n) => n as i32,
                        _ => 0,
                    },
                    None => 0,
                };
                Err(Halt::Quit(status))
            }
            "stop" => {
                let parts = self.eval_args(&args)?;
                err(format!("Error: {}", parts.iter().map(as_text).collect::<String>()))
            }
            "stopifnot" => {
                for a in &args {
                    if !truthy(&self.eval(a.value)?) {
                        return err(format!("Error: {} is not TRUE", a.value));
                    }
                }
                Ok(Value::Null)
            }
            "cat" | "print" | "message" | "warning" => {
                let positional: Vec<Arg> = args.iter().filter(|a| a.name.is_none()).map(|a| Arg { name: None, value: a.value }).collect();
                let parts = self.eval_args(&positional)?;
                let text: String = parts.iter().map(as_text).collect::<Vec<_>>().join(if name == "message" { "" } else { " " });
                if name == "message" {
                    eprintln!("{text}");
                } else if name == "warning" {
                    eprintln!("Warning message:\n{text}");
                } else {
                    println!("{text}");
                }
                Ok(Value::Null)
            }
            "summary" | "head" | "tail" | "mean" | "sum" | "nrow" | "ncol" | "length" | "str" | "plot"
            | "hist" | "table" | "invisible" | "suppressMessages" | "suppressWarnings"
            | "suppressPackageStartupMessages" | "is.null" | "names" => {
                let vals = self.eval_args(&args)?;
                Ok(if vals.len() == 1 && name.starts_with("suppress") || name == "invisible" {
                    vals.into_iter().next().unwrap_or(Value::Null)
                } else {
                    Value::Other
                })
            }
            "system" => {
                let cmd = self.path_arg(&args, &["command"], 0)?.unwrap_or_default();
                let status = Command::new("sh").arg("-c").arg(&cmd).status();
                Ok(Value::Num(status.ok().and_then(|s| s.code()).unwrap_or(127) as f64))
            }
            _ => Ok(Value::Other),
        }
    }

    fn write_output(&mut self, path: Option<String>) -> Res<Value> {
        let Some(p) = path else { return Ok(Value::Null) };
        match fs::write(&p, b"stub output\n") {
            Ok(()) => Ok(Value::Null),
            Err(_) => err(open_error("file(file, ifelse(append, \"a\", \"w\"))", &p)),
        }
    }

    fn package_name(&mut self, args: &[Arg<'_>]) -> Res<Option<String>> {
        let character_only = args
            .iter()
            .any(|a| a.name == Some("character.only") && a.value.starts_with('T'));
        let Some(raw) = arg(args, "package", 0) else { return Ok(None) };
        if character_only {
            return Ok(Some(as_text(&self.eval(raw)?)));
        }
        Ok(rsource::as_string_literal(raw)
            .map(|l| l.value())
            .or_else(|| rsource::as_identifier(raw).map(str::to_string)))
    }

    fn load_package(&mut self, which: &str, args: &[Arg<'_>]) -> Res<Value> {
        let Some(pkg) = self.package_name(args)? else {
            return Ok(Value::Null);
        };
        if self.installed(&pkg) {
            if which == "require" {
                eprintln!("Loading required package: {pkg}");
            }
            return Ok(Value::Logical(true));
        }
        match which {
            "library" => err(format!("Error in library({pkg}) : there is no package called \u{2018}{pkg}\u{2019}")),
            "requireNamespace" => Ok(Value::Logical(false)),
            _ => {
                eprintln!(
                    "Loading required package: {pkg}\nWarning message:\nIn library(package, lib.loc = lib.loc, character.only = TRUE, logical.return = TRUE,  :\n  there is no package called \u{2018}{pkg}\u{2019}"
                );
                Ok(Value::Logical(false))
            }
        }
    }

    fn install(&mut self, args: &[Arg<'_>]) -> Res<Value> {
        let pkgs = match arg(args, "pkgs", 0) {
            Some(p) => match self.eval(p)? {
                Value::Str(s) => vec![s],
                Value::Strs(v) => v,
                _ => Vec::new(),
            },
            None => Vec::new(),
        };
        let Some(repos) = arg(args, "repos", 2) else {
            return err("Error in contrib.url(repos, \"source\") : \n  trying to use CRAN without setting a mirror");
        };
        let repos = as_text(&self.eval(repos)?);
        let rv = as_text(&Value::Version(self.version.clone()));
        if self.offline {
            eprintln!(
                "Warning: unable to access index for repository {repos}/src/contrib:\n  cannot open URL '{repos}/src/contrib/PACKAGES'"
            );
            for p in &pkgs {
                eprintln!("Warning message:\npackage \u{2018}{p}\u{2019} is not available (for R version {rv})");
            }
            return Ok(Value::Null);
        }
        for p in &pkgs {
            if self.repo.contains(p) {
                if fs::create_dir_all(self.lib_dir.join(p)).is_err() {
                    return err(format!("Error: cannot install \u{2018}{p}\u{2019}: library not writable"));
                }
                eprintln!("* installing *source* package \u{2018}{p}\u{2019} ...\n* DONE ({p})");
            } else {
                eprintln!("Warning message:\npackage \u{2018}{p}\u{2019} is not available (for R version {rv})");
            }
        }
        Ok(Value::Null)
    }
}

fn is_whole_call(e: &str, start: usize) -> bool {
    let head = e[..start].trim();
    head.is_empty() || (head.ends_with("::") && head.trim_end_matches(':').chars().all(rsource::is_ident_char))
}

fn open_error(call: &str, path: &str) -> String {
    format!(
        "Error in {call} : cannot open the connection\nIn addition: Warning message:\nIn {call} :\n  cannot open file '{path}': No such file or directory"
    )
}

fn parse_number(e: &str) -> Option<f64> {
    let t = e.strip_suffix('L').unwrap_or(e);
    if t.starts_with(|c: char| c.is_ascii_digit() || c == '-' || c == '.') {
        t.parse().ok()
    } else {
        None
    }
}

fn compare(l: &Value, r: &Value, op: &str) -> Value {
    use std::cmp::Ordering;
    let ord = match (l, r) {
        (Value::Version(a), b) | (b, Value::Version(a)) => {
            let other = parse_version(&as_text(b));
            let o = a.cmp(&other);
            if matches!(l, Value::Version(_)) { Some(o) } else { Some(o.reverse()) }
        }
        (Value::Num(a), Value::Num(b)) => a.partial_cmp(b),
        (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
        (Value::Logical(a), Value::Logical(b)) => Some(a.cmp(b)),
        _ => None,
    };
    let Some(o) = ord else { return Value::Null };
    Value::Logical(match op {
        ">=" => o != Ordering::Less,
        "<=" => o != Ordering::Greater,
        "==" => o == Ordering::Equal,
        "!=" => o != Ordering::Equal,
        ">" => o == Ordering::Greater,
        _ => o == Ordering::Less,
    })
}

fn main() {
    let mut args = std::env::args().skip(1);
    let mut version = "4.0.1".to_string();
    let mut repo_file: Option<PathBuf> = None;
    let mut lib_dir = PathBuf::from(".stub-lib");
    let mut preinstalled = BTreeSet::new();
    let mut script: Option<String> = None;
    while let Some(a) = args.next() {
        match a.as_str() {
            "--version" => {
                println!("R scripting front-end version {version} (stub)");
                return;
            }
            "--r-version" => version = args.next().unwrap_or(version),
            "--repo" => repo_file = args.next().map(PathBuf::from),
            "--lib" => lib_dir = args.next().map(PathBuf::from).unwrap_or(lib_dir),
            "--preinstalled" => {
                preinstalled = args
                    .next()
                    .unwrap_or_default()
                    .split(',')
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            other => script = Some(other.to_string()),
        }
    }
    let Some(script) = script else {
        eprintln!("Usage: stub-r [--r-version V] [--repo FILE] [--lib DIR] [--preinstalled a,b] SCRIPT");
        exit(2);
    };
    let repo = repo_file
        .and_then(|p| fs::read_to_string(p).ok())
        .map(|t| t.lines().map(|l| l.trim().to_string()).filter(|l| !l.is_empty()).collect())
        .unwrap_or_default();
    // resolve once so a later setwd does not move the library
    let lib_dir = std::env::current_dir().map(|cwd| cwd.join(&lib_dir)).unwrap_or(lib_dir);
    let text = match fs::read(&script) {
        Ok(b) => String::from_utf8_lossy(&b).into_owned(),
        Err(_) => {
            eprintln!("Fatal error: cannot open file '{script}': No such file or directory");
            exit(2);
        }
    };
    let mut interp = Interp {
        version: parse_version(&version),
        lib_dir,
        repo,
        preinstalled,
        offline: std::env::var("REPRUN_OFFLINE").is_ok_and(|v| v == "1"),
        vars: HashMap::new(),
        source_depth: 0,
    };
    let code = match interp.run_text(&text) {
        Ok(()) => 0,
        Err(Halt::Quit(status)) => status,
        Err(Halt::Error(msg)) => {
            eprintln!("{msg}\nExecution halted");
            1
        }
    };
    let _ = std::io::stdout().flush();
    exit(code);
}
