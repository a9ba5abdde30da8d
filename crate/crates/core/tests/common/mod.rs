#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use reprun_core::executor::{Budget, ExecOptions, InterpreterSpec, Mode};
use reprun_core::ingest::{self, PackageManifest};
use reprun_core::results::{LoadedStore, Record, RunStore};

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn stub_r() -> &'static str {
    env!("CARGO_BIN_EXE_stub-r")
}

pub fn registry() -> PathBuf {
    fixtures().join("synthetic/registry.txt")
}

/// A stub interpreter reporting `version` and installing from the fixture
/// registry.
pub fn stub_interpreter(label: &str, version: &str) -> InterpreterSpec {
    let registry = registry();
    InterpreterSpec::new(
        label,
        &[stub_r(), "--r-version", version, "--repo", registry.to_str().unwrap(), "{script}"],
    )
}

pub fn stub_matrix() -> Vec<InterpreterSpec> {
    vec![stub_interpreter("stub-3.6", "3.6.0"), stub_interpreter("stub-4.0", "4.0.1")]
}

/// Budget used for the synthetic corpus: its one slow script times out fast.
pub fn corpus_budget() -> Budget {
    Budget::new(Duration::from_secs(1), Duration::from_secs(20)).unwrap()
}

fn read_metadata(path: &Path) -> BTreeMap<String, BTreeMap<String, String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let headers = reader.headers().unwrap().clone();
    let mut out = BTreeMap::new();
    for row in reader.records() {
        let row = row.unwrap();
        let mut meta = BTreeMap::new();
        for (h, v) in headers.iter().zip(row.iter()).skip(1) {
            if !v.is_empty() {
                meta.insert(h.to_string(), v.to_string());
            }
        }
        out.insert(row[0].to_string(), meta);
    }
    out
}

/// Manifests of the six synthetic packages, sorted by id.
pub fn synthetic_corpus() -> Vec<PackageManifest> {
    let root = fixtures().join("synthetic");
    let meta = read_metadata(&root.join("metadata.csv"));
    meta.iter()
        .map(|(name, m)| ingest::load_local_package(&root.join(name), m.clone()).unwrap())
        .collect()
}

pub fn local_package(dir: &Path) -> PackageManifest {
    ingest::load_local_package(dir, BTreeMap::new()).unwrap()
}

/// Runs the matrix into a fresh store and loads it back.
pub fn run_into_store(
    manifests: &[PackageManifest],
    interpreters: &[InterpreterSpec],
    budget: Budget,
    jobs: usize,
    opts: &ExecOptions,
    store_path: &Path,
) -> LoadedStore {
    let store = RunStore::open(store_path).unwrap();
    reprun_core::executor::run_matrix(
        manifests,
        interpreters,
        budget,
        &[Mode::Raw, Mode::Cleaned],
        jobs,
        opts,
        &mut |rec: &Record| store.append(rec),
    )
    .unwrap();
    RunStore::load(store_path).unwrap()
}
