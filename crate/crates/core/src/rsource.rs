//! Line-oriented lexical helpers for R source.
//!
//! Nothing here parses R. The scanner tracks quote state within one line so
//! that `#` and parentheses inside string literals are ignored, and it keeps a
//! paren stack across lines so call arguments on continuation lines still know
//! their enclosing call. Strings spanning multiple lines are not tracked.

/// Splits text into `(content, terminator)` pairs. The terminator is `"\n"`,
/// `"\r\n"` or empty for a final unterminated line.
pub fn split_lines(text: &str) -> Vec<(&str, &str)> {
    let mut out = Vec::new();
    for chunk in text.split_inclusive('\n') {
        if let Some(body) = chunk.strip_suffix("\r\n") {
            out.push((body, "\r\n"));
        } else if let Some(body) = chunk.strip_suffix('\n') {
            out.push((body, "\n"));
        } else {
            out.push((chunk, ""));
        }
    }
    out
}

/// Number of physical lines, matching `str::lines`.
pub fn physical_line_count(text: &str) -> usize {
    text.lines().count()
}

pub fn is_comment_line(line: &str) -> bool {
    line.trim_start().starts_with('#')
}

pub fn is_blank_line(line: &str) -> bool {
    line.trim().is_empty()
}

pub fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '.' || c == '_'
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '.'
}

/// A string literal found on a line. Offsets are byte offsets into the line;
/// `start` points at the opening quote and `end` one past the closing quote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Literal {
    pub start: usize,
    pub end: usize,
    pub quote: char,
    /// Source text between the quotes, escapes untouched.
    pub raw: String,
}

impl Literal {
    /// Literal content with backslash escapes resolved for the common cases.
    pub fn value(&self) -> String {
        let mut out = String::with_capacity(self.raw.len());
        let mut chars = self.raw.chars();
        while let Some(c) = chars.next() {
            if c == '\\' {
                match chars.next() {
                    Some('n') => out.push('\n'),
                    Some('t') => out.push('\t'),
                    Some(other) => out.push(other),
                    None => out.push('\\'),
                }
            } else {
                out.push(c);
            }
        }
        out
    }
}

/// An open paren on the scanner's stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpenParen {
    /// Name of the called function, if the paren follows an identifier.
    pub callee: Option<String>,
    /// Line index and byte offset of the callee start (or the paren itself).
    pub line: usize,
    pub start: usize,
    pub paren: usize,
}

/// Lexical events on one line, in source order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Literal(Literal),
    Open(OpenParen),
    /// Closing paren; carries the matching open paren when one was on the stack.
    Close { at: usize, open: Option<OpenParen> },
    Comma { at: usize },
    Semicolon { at: usize },
    /// Start of a trailing comment.
    Comment { at: usize },
}

/// Stateful scanner over consecutive lines of one file.
#[derive(Debug, Default)]
pub struct Scanner {
    stack: Vec<OpenParen>,
    line_no: usize,
}

impl Scanner {
    pub fn new() -> Self {
        Self::default()
    }

    /// Calls currently open, innermost last.
    pub fn open_calls(&self) -> &[OpenParen] {
        &self.stack
    }

    /// Scans one line. Comment-only lines produce a single `Comment` token and
    /// leave the paren stack alone.
    pub fn scan(&mut self, line: &str) -> Vec<Token> {
        let idx = self.line_no;
        self.line_no += 1;
        let mut tokens = Vec::new();
        let bytes = line.as_bytes();
        let mut i = 0;
        // (start, end) of the last identifier seen, reset by any other token
        let mut last_ident: Option<(usize, usize)> = None;
        while i < bytes.len() {
            let c = bytes[i] as char;
            match c {
                '#' => {
                    tokens.push(Token::Comment { at: i });
                    break;
                }
                '"' | '\'' | '`' => {
                    let start = i;
                    i += 1;
                    let content_start = i;
                    let mut closed = false;
                    while i < bytes.len() {
                        let d = bytes[i] as char;
                        if d == '\\' {
                            i += 2;
                            continue;
                        }
                        if d == c {
                            closed = true;
                            break;
                        }
                        i += 1;
                    }
                    let content_end = i.min(bytes.len());
                    let raw = line
                        .get(content_start..content_end)
                        .unwrap_or_default()
                        .to_string();
                    if closed {
                        i += 1;
                    }
                    if c == '`' {
                        // backtick names behave like identifiers
                        last_ident = Some((start, i.min(bytes.len())));
                        continue;
                    }
                    tokens.push(Token::Literal(Literal {
                        start,
                        end: i.min(bytes.len()),
                        quote: c,
                        raw,
                    }));
                    last_ident = None;
                    continue;
                }
                '(' => {
                    let (callee, start) = match last_ident {
                        Some((s, e)) => (Some(line[s..e].trim_matches('`').to_string()), s),
                        None => (None, i),
                    };
                    let open = OpenParen {
                        callee,
                        line: idx,
                        start,
                        paren: i,
                    };
                    self.stack.push(open.clone());
                    tokens.push(Token::Open(open));
                    last_ident = None;
                }
                ')' => {
                    let open = self.stack.pop();
                    tokens.push(Token::Close { at: i, open });
                    last_ident = None;
                }
                ',' => {
                    tokens.push(Token::Comma { at: i });
                    last_ident = None;
                }
                ';' => {
                    tokens.push(Token::Semicolon { at: i });
                    last_ident = None;
                }
                c if is_ident_start(c) => {
                    let start = i;
                    while i < bytes.len() && is_ident_char(bytes[i] as char) {
                        i += 1;
                    }
                    last_ident = Some((start, i));
                    continue;
                }
                c if c.is_ascii_digit() => {
                    while i < bytes.len() && is_ident_char(bytes[i] as char) {
                        i += 1;
                    }
                    last_ident = None;
                    continue;
                }
                c if c.is_whitespace() => {
                    // `f (x)` is still a call
                }
                ':' => {
                    // `pkg::fn(` keeps the namespace out of the callee name
                    last_ident = None;
                }
                _ => {
                    last_ident = None;
                }
            }
            i += 1;
        }
        tokens
    }
}

/// Byte offset where the code part of a line ends (start of a trailing
/// comment, or the line length).
pub fn code_end(line: &str) -> usize {
    let mut scanner = Scanner::new();
    scanner
        .scan(line)
        .iter()
        .find_map(|t| match t {
            Token::Comment { at } => Some(*at),
            _ => None,
        })
        .unwrap_or(line.len())
}

/// The code part of a line with any trailing comment removed.
pub fn code_part(line: &str) -> &str {
    &line[..code_end(line)]
}

/// A call whose opening and closing parens are both on one line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CallSite {
    pub name: String,
    /// Offset of the callee name.
    pub start: usize,
    pub open: usize,
    /// Offset of the closing paren.
    pub close: usize,
    /// Name of the immediately enclosing call, if any.
    pub parent: Option<String>,
}

impl CallSite {
    pub fn text<'a>(&self, line: &'a str) -> &'a str {
        &line[self.start..=self.close]
    }

    pub fn inner<'a>(&self, line: &'a str) -> &'a str {
        &line[self.open + 1..self.close]
    }
}

/// All single-line calls on a line (outside strings and comments), in order of
/// their opening position. Calls left open at end of line are reported through
/// `unclosed`.
pub fn calls_on_line(line: &str) -> (Vec<CallSite>, Vec<OpenParen>) {
    let mut scanner = Scanner::new();
    let mut calls = Vec::new();
    let mut stack: Vec<Option<String>> = Vec::new();
    for tok in scanner.scan(line) {
        match tok {
            Token::Open(o) => stack.push(o.callee),
            Token::Close {
                at,
                open: Some(open),
            } => {
                stack.pop();
                if let Some(name) = open.callee {
                    calls.push(CallSite {
                        name,
                        start: open.start,
                        open: open.paren,
                        close: at,
                        parent: stack.last().cloned().flatten(),
                    });
                }
            }
            _ => {}
        }
    }
    calls.sort_by_key(|c| c.start);
    let unclosed = scanner.open_calls().to_vec();
    (calls, unclosed)
}

/// Splits the inside of a call into top-level arguments, returning trimmed
/// `(start, end)` byte ranges relative to `inner`.
pub fn split_args(inner: &str) -> Vec<(usize, usize)> {
    let mut scanner = Scanner::new();
    let mut depth = 0usize;
    let mut cuts = Vec::new();
    for tok in scanner.scan(inner) {
        match tok {
            Token::Open(_) => depth += 1,
            Token::Close { .. } => depth = depth.saturating_sub(1),
            Token::Comma { at } if depth == 0 => cuts.push(at),
            _ => {}
        }
    }
    let mut ranges = Vec::new();
    let mut begin = 0;
    for cut in cuts.into_iter().chain(std::iter::once(inner.len())) {
        let piece = &inner[begin..cut];
        let lead = piece.len() - piece.trim_start().len();
        let trimmed = piece.trim();
        if !trimmed.is_empty() {
            ranges.push((begin + lead, begin + lead + trimmed.len()));
        }
        begin = cut + 1;
    }
    ranges
}

/// If `arg` is `name = value`, returns `(name, value)`.
pub fn named_arg(arg: &str) -> Option<(&str, &str)> {
    let eq = arg.find('=')?;
    let (name, rest) = arg.split_at(eq);
    let name = name.trim();
    if rest.starts_with("==") || name.is_empty() || !name.chars().all(is_ident_char) {
        return None;
    }
    Some((name, rest[1..].trim()))
}

/// The whole argument as a single string literal, if it is one.
pub fn as_string_literal(arg: &str) -> Option<Literal> {
    let arg = arg.trim();
    let mut scanner = Scanner::new();
    let toks = scanner.scan(arg);
    match toks.as_slice() {
        [Token::Literal(lit)] if lit.start == 0 && lit.end == arg.len() => Some(lit.clone()),
        _ => None,
    }
}

/// The whole argument as a bare identifier, if it is one.
pub fn as_identifier(arg: &str) -> Option<&str> {
    let arg = arg.trim();
    let first = arg.chars().next()?;
    if (is_ident_start(first) && arg.chars().all(is_ident_char))
        && !matches!(arg, "TRUE" | "FALSE" | "NULL" | "NA" | "function")
    {
        Some(arg)
    } else {
        None
    }
}
