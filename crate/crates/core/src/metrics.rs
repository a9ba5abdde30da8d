//! Static measurements of replication packages and their R scripts.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::Read;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::encoding::{self, TextEncoding};
use crate::ingest::PackageManifest;
use crate::rsource::{self, Scanner, Token};

/// Keywords that mark a file as documentation when found in its name.
pub const DOCUMENTATION_KEYWORDS: [&str; 5] =
    ["readme", "codebook", "documentation", "guide", "instruction"];

/// Bytes read from non-R files when sniffing their encoding.
const ENCODING_SAMPLE_BYTES: u64 = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Stata,
    Python,
    Sas,
    Cpp,
    Matlab,
}

impl Language {
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "do" => Some(Language::Stata),
            "py" => Some(Language::Python),
            "sas" => Some(Language::Sas),
            "cpp" | "cc" => Some(Language::Cpp),
            "m" => Some(Language::Matlab),
            _ => None,
        }
    }
}

/// True for `.R` / `.r` scripts (R markdown and Sweave are not scripts).
pub fn is_r_script(path: &str) -> bool {
    matches!(extension(path).as_deref(), Some("r"))
}

fn extension(path: &str) -> Option<String> {
    let name = file_name(path);
    let dot = name.rfind('.')?;
    if dot == 0 {
        return None;
    }
    Some(name[dot + 1..].to_ascii_lowercase())
}

fn file_name(path: &str) -> &str {
    path.rsplit(['/', '\\']).next().unwrap_or(path)
}

/// File name without its final extension. A leading dot is part of the stem.
pub fn file_stem(path: &str) -> &str {
    let name = file_name(path);
    match name.rfind('.') {
        Some(dot) if dot > 0 => &name[..dot],
        _ => name,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub min: f64,
    pub mean: f64,
    pub median: f64,
    pub max: f64,
}

impl SummaryStats {
    pub fn from_samples(samples: &[f64]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        Some(SummaryStats {
            min: sorted[0],
            mean: sorted.iter().sum::<f64>() / n as f64,
            median,
            max: sorted[n - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageCensus {
    pub package_id: String,
    pub total_size: u64,
    pub file_count: usize,
    pub other_languages: BTreeSet<Language>,
    pub has_rmd: bool,
    pub has_rnw: bool,
    pub has_documentation: bool,
    pub documentation_files: Vec<String>,
    pub encoding_histogram: BTreeMap<String, usize>,
    pub filenames_with_spaces: usize,
    pub filename_length_stats: Option<SummaryStats>,
    /// Per-file name lengths in manifest order, extension excluded.
    pub filename_lengths: Vec<usize>,
    pub config_file_candidates: Vec<String>,
    pub r_file_count: usize,
}

pub fn census(manifest: &PackageManifest) -> PackageCensus {
    let mut other_languages = BTreeSet::new();
    let mut documentation_files = Vec::new();
    let mut encoding_histogram = BTreeMap::new();
    let mut config_file_candidates = Vec::new();
    let mut name_lengths = Vec::new();
    let (mut has_rmd, mut has_rnw) = (false, false);
    let mut filenames_with_spaces = 0;
    let mut r_file_count = 0;

    for entry in &manifest.files {
        let path = entry.relative_path.as_str();
        let name = file_name(path);
        let lower = name.to_ascii_lowercase();
        let ext = extension(path);

        if let Some(lang) = ext.as_deref().and_then(Language::from_extension) {
            other_languages.insert(lang);
        }
        match ext.as_deref() {
            Some("rmd") => has_rmd = true,
            Some("rnw") => has_rnw = true,
            Some("r") => r_file_count += 1,
            _ => {}
        }
        if DOCUMENTATION_KEYWORDS.iter().any(|k| lower.contains(k)) {
            documentation_files.push(path.to_string());
        }
        if (lower.contains("install") && ext.as_deref() == Some("r"))
            || file_stem(&lower) == "postinstall"
        {
            config_file_candidates.push(path.to_string());
        }
        if name.contains(' ') {
            filenames_with_spaces += 1;
        }
        name_lengths.push(file_stem(path).chars().count());

        let enc = sniff_encoding(&manifest.root.join(path), ext.as_deref() == Some("r"));
        *encoding_histogram.entry(enc.name().to_string()).or_insert(0) += 1;
    }

    PackageCensus {
        package_id: manifest.package.persistent_id.clone(),
        total_size: manifest.files.iter().map(|f| f.size).sum(),
        file_count: manifest.files.len(),
        other_languages,
        has_rmd,
        has_rnw,
        has_documentation: !documentation_files.is_empty(),
        documentation_files,
        encoding_histogram,
        filenames_with_spaces,
        filename_length_stats: SummaryStats::from_samples(
            &name_lengths.iter().map(|&n| n as f64).collect::<Vec<_>>(),
        ),
        filename_lengths: name_lengths,
        config_file_candidates,
        r_file_count,
    }
}

fn sniff_encoding(path: &Path, whole: bool) -> TextEncoding {
    let Ok(file) = fs::File::open(path) else {
        return TextEncoding::Unknown;
    };
    let mut buf = Vec::new();
    let read = if whole {
        file.take(u64::MAX).read_to_end(&mut buf)
    } else {
        file.take(ENCODING_SAMPLE_BYTES).read_to_end(&mut buf)
    };
    match read {
        Ok(_) => encoding::detect_sample(&buf, !whole && buf.len() as u64 == ENCODING_SAMPLE_BYTES),
        Err(_) => TextEncoding::Unknown,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyScan {
    /// Library names, deduplicated in first-seen order.
    pub names: Vec<String>,
    /// Load calls whose package argument could not be read statically.
    pub skipped_call_sites: usize,
}

const LOAD_FUNCTIONS: [&str; 3] = ["library", "require", "install.packages"];

/// Extracts library names from `library`, `require` and `install.packages`
/// calls outside comments.
pub fn detect_dependencies(source: &str) -> DependencyScan {
    let mut scan = DependencyScan::default();
    let mut seen = HashSet::new();
    for line in source.lines() {
        if rsource::is_comment_line(line) {
            continue;
        }
        let code = rsource::code_part(line);
        let (calls, unclosed) = rsource::calls_on_line(code);
        for call in calls.iter().filter(|c| LOAD_FUNCTIONS.contains(&c.name.as_str())) {
            match load_call_packages(&call.name, call.inner(code)) {
                Some(names) => {
                    for name in names {
                        if seen.insert(name.clone()) {
                            scan.names.push(name);
                        }
                    }
                }
                None => scan.skipped_call_sites += 1,
            }
        }
        scan.skipped_call_sites += unclosed
            .iter()
            .filter(|o| {
                o.callee
                    .as_deref()
                    .is_some_and(|c| LOAD_FUNCTIONS.contains(&c))
            })
            .count();
    }
    scan
}

/// Package names named by one load call, or `None` when they are computed.
fn load_call_packages(function: &str, inner: &str) -> Option<Vec<String>> {
    let args: Vec<&str> = rsource::split_args(inner)
        .into_iter()
        .map(|(s, e)| &inner[s..e])
        .collect();
    let character_only = args.iter().any(|a| {
        rsource::named_arg(a).is_some_and(|(n, v)| n == "character.only" && v.starts_with('T'))
    });
    let target_name = if function == "install.packages" { "pkgs" } else { "package" };
    let first = args
        .iter()
        .find_map(|a| match rsource::named_arg(a) {
            Some((n, v)) if n == target_name => Some(v),
            _ => None,
        })
        .or_else(|| {
            args.iter()
                .copied()
                .find(|a| rsource::named_arg(a).is_none())
        })?;

    if let Some(lit) = rsource::as_string_literal(first) {
        return valid_package_name(&lit.value()).map(|n| vec![n]);
    }
    if let Some(ident) = rsource::as_identifier(first) {
        if character_only {
            return None;
        }
        return valid_package_name(ident).map(|n| vec![n]);
    }
    // c("a", "b")
    let (calls, _) = rsource::calls_on_line(first);
    let vector = calls.first().filter(|c| c.name == "c" && c.start == 0 && c.close + 1 == first.len())?;
    let inner = vector.inner(first);
    let names: Option<Vec<String>> = rsource::split_args(inner)
        .into_iter()
        .map(|(s, e)| {
            rsource::as_string_literal(&inner[s..e]).and_then(|l| valid_package_name(&l.value()))
        })
        .collect();
    names.filter(|n| !n.is_empty())
}

fn valid_package_name(name: &str) -> Option<String> {
    let ok = !name.is_empty()
        && name.chars().next().is_some_and(|c| c.is_ascii_alphabetic())
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '.');
    ok.then(|| name.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileMetrics {
    pub path: String,
    pub code_lines: usize,
    pub comment_lines: usize,
    pub blank_lines: usize,
    /// `code_lines / comment_lines`; null when there are no comment lines.
    pub code_to_comment_ratio: Option<f64>,
    pub dependencies: Vec<String>,
    pub dependency_diagnostics: usize,
    pub function_count: usize,
    pub class_count: usize,
    pub variable_names: Vec<String>,
    pub mean_variable_name_length: Option<f64>,
    pub is_ascii: bool,
    pub detected_encoding: String,
}

impl FileMetrics {
    pub fn total_lines(&self) -> usize {
        self.code_lines + self.comment_lines + self.blank_lines
    }
}

static FUNCTION_DEF: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:^|[^A-Za-z0-9._$@])(?:[A-Za-z.][A-Za-z0-9._]*|`[^`]+`)\s*(?:<<-|<-|=)\s*function\s*\(")
        .unwrap()
});
static CLASS_DEF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?:^|[^A-Za-z0-9._])(?:setClass|setRefClass|R6Class)\s*\(").unwrap());
static ARROW_TARGET: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:^|[\s;{(,])([A-Za-z.][A-Za-z0-9._]*|`[^`]+`)\s*<<?-").unwrap()
});
static EQUALS_TARGET: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^\s*([A-Za-z.][A-Za-z0-9._]*|`[^`]+`)\s*=[^=]").unwrap()
});

pub fn analyze_r_file(path: &Path) -> std::io::Result<FileMetrics> {
    let bytes = fs::read(path)?;
    let mut metrics = analyze_r_source(&bytes);
    metrics.path = path.to_string_lossy().into_owned();
    Ok(metrics)
}

/// Measures an R script held in memory. `path` is left empty.
pub fn analyze_r_source(bytes: &[u8]) -> FileMetrics {
    let enc = encoding::detect(bytes);
    let text = encoding::decode(bytes);
    let (mut code, mut comment, mut blank) = (0, 0, 0);
    let mut functions = 0;
    let mut classes = 0;
    let mut variables: Vec<String> = Vec::new();
    let mut seen_vars = HashSet::new();

    for line in text.lines() {
        if rsource::is_blank_line(line) {
            blank += 1;
            continue;
        }
        if rsource::is_comment_line(line) {
            comment += 1;
            continue;
        }
        code += 1;
        let masked = mask_strings(rsource::code_part(line));
        functions += FUNCTION_DEF.find_iter(&masked).count();
        classes += CLASS_DEF.find_iter(&masked).count();
        let mut push_var = |raw: &str| {
            let name = raw.trim_matches('`').to_string();
            if !name.is_empty() && seen_vars.insert(name.clone()) {
                variables.push(name);
            }
        };
        for cap in ARROW_TARGET.captures_iter(&masked) {
            push_var(&cap[1]);
        }
        if let Some(cap) = EQUALS_TARGET.captures(&masked) {
            push_var(&cap[1]);
        }
    }

    let deps = detect_dependencies(&text);
    let mean_len = (!variables.is_empty()).then(|| {
        variables.iter().map(|v| v.chars().count()).sum::<usize>() as f64 / variables.len() as f64
    });
    FileMetrics {
        path: String::new(),
        code_lines: code,
        comment_lines: comment,
        blank_lines: blank,
        code_to_comment_ratio: (comment > 0).then(|| code as f64 / comment as f64),
        dependencies: deps.names,
        dependency_diagnostics: deps.skipped_call_sites,
        function_count: functions,
        class_count: classes,
        variable_names: variables,
        mean_variable_name_length: mean_len,
        is_ascii: enc == TextEncoding::Ascii,
        detected_encoding: enc.name().to_string(),
    }
}

/// Replaces the contents of string literals with spaces so regexes over code
/// do not match inside them. Offsets are preserved.
fn mask_strings(code: &str) -> String {
    let mut out = code.to_string();
    let mut scanner = Scanner::new();
    let mut ranges = Vec::new();
    for tok in scanner.scan(code) {
        if let Token::Literal(lit) = tok {
            if lit.end - lit.start >= 2 {
                ranges.push((lit.start + 1, lit.end - 1));
            }
        }
    }
    for (s, e) in ranges {
        if out.is_char_boundary(s) && out.is_char_boundary(e) {
            out.replace_range(s..e, &" ".repeat(e - s));
        }
    }
    out
}

/// A histogram bucket covering `[lower, upper)`; the last bucket is unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bucket {
    pub lower: f64,
    pub upper: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub samples: usize,
    pub stats: Option<SummaryStats>,
    pub buckets: Vec<Bucket>,
}

impl Distribution {
    /// `edges` are ascending lower bounds; the first should not exceed the
    /// smallest expected sample. Samples below the first edge land in it.
    pub fn new(samples: &[f64], edges: &[f64]) -> Self {
        let mut buckets: Vec<Bucket> = edges
            .iter()
            .enumerate()
            .map(|(i, &lower)| Bucket {
                lower,
                upper: edges.get(i + 1).copied(),
                count: 0,
            })
            .collect();
        for &s in samples {
            let idx = edges.iter().rposition(|&e| s >= e).unwrap_or(0);
            if let Some(b) = buckets.get_mut(idx) {
                b.count += 1;
            }
        }
        Distribution {
            samples: samples.len(),
            stats: SummaryStats::from_samples(samples),
            buckets,
        }
    }
}

/// Metrics for one package: its census plus per-file R metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackageAnalysis {
    pub census: PackageCensus,
    pub files: Vec<FileMetrics>,
}

impl PackageAnalysis {
    /// Unique dependencies across all R files of the package.
    pub fn dependencies(&self) -> BTreeSet<&str> {
        self.files
            .iter()
            .flat_map(|f| f.dependencies.iter().map(String::as_str))
            .collect()
    }
}

pub fn analyze_package(manifest: &PackageManifest) -> PackageAnalysis {
    let census = census(manifest);
    let mut files = Vec::new();
    for entry in manifest.files.iter().filter(|e| is_r_script(&e.relative_path)) {
        if entry.fetch_error.is_some() {
            continue;
        }
        match fs::read(manifest.root.join(&entry.relative_path)) {
            Ok(bytes) => {
                let mut m = analyze_r_source(&bytes);
                m.path = entry.relative_path.clone();
                files.push(m);
            }
            Err(e) => log::warn!("skipping {}: {e}", entry.relative_path),
        }
    }
    PackageAnalysis { census, files }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryCount {
    pub library: String,
    /// Number of packages using the library.
    pub packages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub package_count: usize,
    pub file_count: usize,
    pub package_size_mb: Distribution,
    pub files_per_package: Distribution,
    pub filename_length: Distribution,
    pub r_files_per_package: Distribution,
    pub code_lines_per_file: Distribution,
    pub code_to_comment_ratio: Distribution,
    pub dependencies_per_package: Distribution,
    pub dependencies_per_file: Distribution,
    pub variable_name_length: Distribution,
    pub libraries: Vec<LibraryCount>,
    pub packages_with_other_languages: BTreeMap<String, usize>,
    pub packages_with_documentation: usize,
    pub packages_with_rmd: usize,
    pub packages_with_rnw: usize,
    pub encoding_histogram: BTreeMap<String, usize>,
    pub filenames_with_spaces: usize,
    /// comment lines / (code + comment lines) over all files.
    pub comment_share: Option<f64>,
    pub files_with_modules: usize,
    /// Code lines of module-bearing files divided by their function and class
    /// count. A coarse estimate of lines per function, not a measurement.
    pub approx_lines_per_module: Option<f64>,
    pub files_with_short_variable_names: usize,
}

const MB: f64 = 1024.0 * 1024.0;

pub fn corpus_stats(packages: &[PackageAnalysis]) -> CorpusSummary {
    let files: Vec<&FileMetrics> = packages.iter().flat_map(|p| p.files.iter()).collect();
    let sizes: Vec<f64> = packages.iter().map(|p| p.census.total_size as f64 / MB).collect();
    let file_counts: Vec<f64> = packages.iter().map(|p| p.census.file_count as f64).collect();
    let r_counts: Vec<f64> = packages.iter().map(|p| p.census.r_file_count as f64).collect();
    let name_lengths: Vec<f64> = packages
        .iter()
        .flat_map(|p| p.census.filename_lengths.iter().map(|&n| n as f64))
        .collect();
    let code_lines: Vec<f64> = files.iter().map(|f| f.code_lines as f64).collect();
    let ratios: Vec<f64> = files.iter().filter_map(|f| f.code_to_comment_ratio).collect();
    let deps_pkg: Vec<f64> = packages.iter().map(|p| p.dependencies().len() as f64).collect();
    let deps_file: Vec<f64> = files.iter().map(|f| f.dependencies.len() as f64).collect();
    let var_lengths: Vec<f64> = files.iter().filter_map(|f| f.mean_variable_name_length).collect();

    let mut library_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for p in packages {
        for dep in p.dependencies() {
            *library_counts.entry(dep).or_insert(0) += 1;
        }
    }
    let mut libraries: Vec<LibraryCount> = library_counts
        .into_iter()
        .map(|(library, packages)| LibraryCount {
            library: library.to_string(),
            packages,
        })
        .collect();
    libraries.sort_by(|a, b| b.packages.cmp(&a.packages).then_with(|| a.library.cmp(&b.library)));

    let mut langs = BTreeMap::new();
    let mut encodings = BTreeMap::new();
    for p in packages {
        for lang in &p.census.other_languages {
            let key = serde_json::to_value(lang)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default();
            *langs.entry(key).or_insert(0) += 1;
        }
        for (enc, n) in &p.census.encoding_histogram {
            *encodings.entry(enc.clone()).or_insert(0) += n;
        }
    }

    let code_total: usize = files.iter().map(|f| f.code_lines).sum();
    let comment_total: usize = files.iter().map(|f| f.comment_lines).sum();
    let module_files: Vec<&&FileMetrics> = files
        .iter()
        .filter(|f| f.function_count + f.class_count > 0)
        .collect();
    let module_lines: usize = module_files.iter().map(|f| f.code_lines).sum();
    let modules: usize = module_files.iter().map(|f| f.function_count + f.class_count).sum();

    CorpusSummary {
        package_count: packages.len(),
        file_count: files.len(),
        package_size_mb: Distribution::new(&sizes, &[0.0, 1.0, 5.0, 10.0, 50.0, 100.0, 500.0, 1000.0]),
        files_per_package: Distribution::new(&file_counts, &[0.0, 5.0, 10.0, 15.0, 20.0, 30.0, 50.0, 100.0]),
        filename_length: Distribution::new(&name_lengths, &[0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0, 40.0]),
        r_files_per_package: Distribution::new(&r_counts, &[0.0, 1.0, 2.0, 3.0, 5.0, 10.0, 20.0]),
        code_lines_per_file: Distribution::new(
            &code_lines,
            &[0.0, 50.0, 100.0, 200.0, 300.0, 500.0, 1000.0, 2000.0],
        ),
        code_to_comment_ratio: Distribution::new(&ratios, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 7.5, 10.0, 20.0]),
        dependencies_per_package: Distribution::new(&deps_pkg, &[0.0, 1.0, 3.0, 5.0, 10.0, 15.0, 20.0]),
        dependencies_per_file: Distribution::new(&deps_file, &[0.0, 1.0, 3.0, 5.0, 10.0, 15.0, 20.0]),
        variable_name_length: Distribution::new(&var_lengths, &[0.0, 3.0, 5.0, 10.0, 15.0, 20.0]),
        libraries,
        packages_with_other_languages: langs,
        packages_with_documentation: packages.iter().filter(|p| p.census.has_documentation).count(),
        packages_with_rmd: packages.iter().filter(|p| p.census.has_rmd).count(),
        packages_with_rnw: packages.iter().filter(|p| p.census.has_rnw).count(),
        encoding_histogram: encodings,
        filenames_with_spaces: packages.iter().map(|p| p.census.filenames_with_spaces).sum(),
        comment_share: (code_total + comment_total > 0)
            .then(|| comment_total as f64 / (code_total + comment_total) as f64),
        files_with_modules: module_files.len(),
        approx_lines_per_module: (modules > 0).then(|| module_lines as f64 / modules as f64),
        files_with_short_variable_names: files
            .iter()
            .filter(|f| f.variable_names.iter().any(|v| v.chars().count() <= 2))
            .count(),
    }
}

/// One CSV row per R file.
#[derive(Debug, Serialize)]
pub struct FileMetricsRow<'a> {
    pub package_id: &'a str,
    pub path: &'a str,
    pub code_lines: usize,
    pub comment_lines: usize,
    pub blank_lines: usize,
    pub code_to_comment_ratio: Option<f64>,
    pub dependencies: String,
    pub function_count: usize,
    pub class_count: usize,
    pub variable_count: usize,
    pub mean_variable_name_length: Option<f64>,
    pub is_ascii: bool,
    pub detected_encoding: &'a str,
}

/// One CSV row per package.
#[derive(Debug, Serialize)]
pub struct CensusRow<'a> {
    pub package_id: &'a str,
    pub total_size: u64,
    pub file_count: usize,
    pub r_file_count: usize,
    pub other_languages: String,
    pub has_rmd: bool,
    pub has_rnw: bool,
    pub has_documentation: bool,
    pub filenames_with_spaces: usize,
    pub mean_filename_length: Option<f64>,
    pub config_file_candidates: String,
    pub encodings: String,
}

impl PackageAnalysis {
    pub fn census_row(&self) -> CensusRow<'_> {
        let c = &self.census;
        CensusRow {
            package_id: &c.package_id,
            total_size: c.total_size,
            file_count: c.file_count,
            r_file_count: c.r_file_count,
            other_languages: c
                .other_languages
                .iter()
                .map(|l| format!("{l:?}").to_ascii_lowercase())
                .collect::<Vec<_>>()
                .join(";"),
            has_rmd: c.has_rmd,
            has_rnw: c.has_rnw,
            has_documentation: c.has_documentation,
            filenames_with_spaces: c.filenames_with_spaces,
            mean_filename_length: c.filename_length_stats.as_ref().map(|s| s.mean),
            config_file_candidates: c.config_file_candidates.join(";"),
            encodings: c
                .encoding_histogram
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect::<Vec<_>>()
                .join(";"),
        }
    }

    pub fn file_rows(&self) -> impl Iterator<Item = FileMetricsRow<'_>> {
        self.files.iter().map(|f| FileMetricsRow {
            package_id: &self.census.package_id,
            path: &f.path,
            code_lines: f.code_lines,
            comment_lines: f.comment_lines,
            blank_lines: f.blank_lines,
            code_to_comment_ratio: f.code_to_comment_ratio,
            dependencies: f.dependencies.join(";"),
            function_count: f.function_count,
            class_count: f.class_count,
            variable_count: f.variable_names.len(),
            mean_variable_name_length: f.mean_variable_name_length,
            is_ascii: f.is_ascii,
            detected_encoding: &f.detected_encoding,
        })
    }
}
