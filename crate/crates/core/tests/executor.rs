mod common;

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use reprun_core::cleaner::{self, CleanOptions};
use reprun_core::executor::{
    execute_package, run_matrix, Budget, ErrorCategory, ExecError, ExecOptions, InterpreterSpec, Mode, Verdict,
};
use reprun_core::ingest::{FetchStatus, PackageManifest};
use reprun_core::results::{CombinedVerdict, DatasetVerdict, Record, RunStore};

fn sh() -> InterpreterSpec {
    InterpreterSpec::new("sh", &["sh", "{script}"])
}

fn package(dir: &Path, files: &[(&str, &str)]) -> PackageManifest {
    for (name, body) in files {
        let p = dir.join(name);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, body).unwrap();
    }
    common::local_package(dir)
}

fn secs(a: u64, b: u64) -> Budget {
    Budget::new(Duration::from_secs(a), Duration::from_secs(b)).unwrap()
}

fn alive(pid: i32) -> bool {
    match fs::read_to_string(format!("/proc/{pid}/stat")) {
        // third field is the state; zombies are dead but unreaped
        Ok(stat) => stat.rsplit(')').next().and_then(|s| s.split_whitespace().next()) != Some("Z"),
        Err(_) => false,
    }
}

fn wait_dead(pid: i32) -> bool {
    let until = Instant::now() + Duration::from_secs(2);
    while Instant::now() < until {
        if !alive(pid) {
            return true;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    false
}

#[test]
fn timeout_kills_the_whole_process_tree() {
    let pkg_dir = tempfile::tempdir().unwrap();
    let pid_file = tempfile::NamedTempFile::new().unwrap();
    // R scripts are what the executor runs; sh does not care about the name
    let script = format!("sleep 30 &\necho $! > {}\nsleep 30\n", pid_file.path().display());
    let m = package(pkg_dir.path(), &[("tree.R", &script)]);
    let start = Instant::now();
    let run = execute_package(&m, &[sh()], secs(1, 10), Mode::Raw, &ExecOptions::default()).unwrap();
    assert!(start.elapsed() < Duration::from_secs(3));
    assert_eq!(run.outcomes[0].verdict, Verdict::Tle);
    assert_eq!(run.outcomes[0].exit_code, None);
    let pid: i32 = fs::read_to_string(pid_file.path()).unwrap().trim().parse().unwrap();
    assert!(wait_dead(pid), "grandchild {pid} survived the timeout");
}

#[test]
fn background_children_are_reaped_after_success() {
    let pkg_dir = tempfile::tempdir().unwrap();
    let pid_file = tempfile::NamedTempFile::new().unwrap();
    let script = format!("sleep 30 &\necho $! > {}\nexit 0\n", pid_file.path().display());
    let m = package(pkg_dir.path(), &[("bg.R", &script)]);
    let run = execute_package(&m, &[sh()], secs(10, 10), Mode::Raw, &ExecOptions::default()).unwrap();
    assert_eq!(run.outcomes[0].verdict, Verdict::Success);
    let pid: i32 = fs::read_to_string(pid_file.path()).unwrap().trim().parse().unwrap();
    assert!(wait_dead(pid), "background child {pid} outlived its script");
}

#[test]
fn outcomes_follow_interpreter_then_file_order() {
    let pkg_dir = tempfile::tempdir().unwrap();
    let m = package(pkg_dir.path(), &[("b.R", "exit 0\n"), ("a.R", "exit 1\n"), ("sub/c.R", "exit 0\n")]);
    let interps = [InterpreterSpec::new("one", &["sh", "{script}"]), InterpreterSpec::new("two", &["sh", "{script}"])];
    let run = execute_package(&m, &interps, secs(5, 50), Mode::Raw, &ExecOptions::default()).unwrap();
    let order: Vec<(&str, &str)> = run.outcomes.iter().map(|o| (o.interpreter_label.as_str(), o.file.as_str())).collect();
    assert_eq!(
        order,
        [("one", "a.R"), ("one", "b.R"), ("one", "sub/c.R"), ("two", "a.R"), ("two", "b.R"), ("two", "sub/c.R")]
    );
    assert_eq!(run.outcomes[0].verdict, Verdict::Error);
    assert_eq!(run.outcomes[0].exit_code, Some(1));
}

#[test]
fn package_budget_caps_each_file_and_leaves_the_rest_unassigned() {
    let pkg_dir = tempfile::tempdir().unwrap();
    let m = package(
        pkg_dir.path(),
        &[("1.R", "sleep 0.2\n"), ("2.R", "sleep 5\n"), ("3.R", "exit 0\n"), ("4.R", "exit 0\n")],
    );
    let budget = Budget::new(Duration::from_millis(1500), Duration::from_millis(1500)).unwrap();
    let run = execute_package(&m, &[sh()], budget, Mode::Raw, &ExecOptions::default()).unwrap();
    let verdicts: Vec<_> = run.outcomes.iter().map(|o| (o.file.as_str(), o.verdict)).collect();
    assert_eq!(verdicts, [("1.R", Verdict::Success), ("2.R", Verdict::Tle)]);
    // 2.R only got what was left of the package budget
    let total = run.outcomes[0].wall_time_secs + run.outcomes[1].wall_time_secs;
    assert!(run.outcomes[1].wall_time_secs < 1.45 && total < 1.7, "{total}");
    let rest: Vec<_> = run.unassigned.iter().map(|u| u.file.as_str()).collect();
    assert_eq!(rest, ["3.R", "4.R"]);
}

#[test]
fn each_interpreter_and_mode_gets_a_fresh_workspace() {
    let pkg_dir = tempfile::tempdir().unwrap();
    let m = package(pkg_dir.path(), &[("w.R", "[ ! -e marker ] && touch marker && touch data/new\n"), ("data/x", "1")]);
    let interps = [InterpreterSpec::new("one", &["sh", "{script}"]), InterpreterSpec::new("two", &["sh", "{script}"])];
    for mode in [Mode::Raw, Mode::Cleaned] {
        let run = execute_package(&m, &interps, secs(5, 50), mode, &ExecOptions::default()).unwrap();
        assert!(run.outcomes.iter().all(|o| o.verdict == Verdict::Success), "{mode:?}: {:?}", run.outcomes);
    }
    assert!(!pkg_dir.path().join("marker").exists());
    assert!(!pkg_dir.path().join("data/new").exists());
}

#[test]
fn kept_workspaces_live_under_the_scratch_root() {
    let pkg_dir = tempfile::tempdir().unwrap();
    let scratch = tempfile::tempdir().unwrap();
    let m = package(pkg_dir.path(), &[("k.R", "echo hi > out.txt\n")]);
    let opts = ExecOptions {
        scratch_root: Some(scratch.path().to_path_buf()),
        keep_workspaces: true,
        ..Default::default()
    };
    let run = execute_package(&m, &[sh()], secs(5, 5), Mode::Raw, &opts).unwrap();
    assert_eq!(run.kept_workspaces.len(), 1);
    assert!(run.kept_workspaces[0].starts_with(scratch.path()));
    assert!(run.kept_workspaces[0].join("out.txt").is_file());
}

#[test]
fn cleaned_mode_uses_cleaner_output_when_given() {
    let pkg_dir = tempfile::tempdir().unwrap();
    let m = package(pkg_dir.path(), &[("s.R", "setwd(\"/nonexistent/dir\")\n")]);
    let stub = common::stub_interpreter("stub", "4.0.1");

    let raw = execute_package(&m, &[stub.clone()], secs(10, 10), Mode::Raw, &ExecOptions::default()).unwrap();
    assert_eq!(raw.outcomes[0].error_category, Some(ErrorCategory::Setwd));

    let on_the_fly = execute_package(&m, &[stub.clone()], secs(10, 10), Mode::Cleaned, &ExecOptions::default()).unwrap();
    assert_eq!(on_the_fly.outcomes[0].verdict, Verdict::Success);

    let out = tempfile::tempdir().unwrap();
    let pkg_out = reprun_core::executor::cleaned_dir_for(out.path(), &m);
    let reports = cleaner::clean_package(&m, &pkg_out, &CleanOptions::default());
    assert!(reports.iter().all(|r| r.error.is_none()));
    // plant a marker in the cleaned copy to prove it is the one executed
    let cleaned_file = pkg_out.join("s.R");
    let text = fs::read_to_string(&cleaned_file).unwrap();
    fs::write(&cleaned_file, format!("{text}stop(\"from cleaned root\")\n")).unwrap();
    let opts = ExecOptions {
        cleaned_root: Some(out.path().to_path_buf()),
        ..Default::default()
    };
    let from_root = execute_package(&m, &[stub.clone()], secs(10, 10), Mode::Cleaned, &opts).unwrap();
    assert!(from_root.outcomes[0].stderr_tail.contains("from cleaned root"));

    let empty = tempfile::tempdir().unwrap();
    let opts = ExecOptions {
        cleaned_root: Some(empty.path().to_path_buf()),
        ..Default::default()
    };
    let err = execute_package(&m, &[stub], secs(10, 10), Mode::Cleaned, &opts).unwrap_err();
    assert!(matches!(err, ExecError::MissingCleaned(_)));
}

#[test]
fn offline_runs_cannot_install_packages() {
    let pkg_dir = tempfile::tempdir().unwrap();
    let m = package(pkg_dir.path(), &[("m.R", "library(fixpkg)\n")]);
    let stub = common::stub_interpreter("stub", "4.0.1");
    let online = execute_package(&m, &[stub.clone()], secs(10, 10), Mode::Cleaned, &ExecOptions::default()).unwrap();
    assert_eq!(online.outcomes[0].verdict, Verdict::Success);
    let opts = ExecOptions {
        network_allowed: false,
        ..Default::default()
    };
    let offline = execute_package(&m, &[stub], secs(10, 10), Mode::Cleaned, &opts).unwrap();
    assert_eq!(offline.outcomes[0].verdict, Verdict::Error);
    assert_eq!(offline.outcomes[0].error_category, Some(ErrorCategory::Library));
}

#[test]
fn missing_interpreter_is_reported() {
    let pkg_dir = tempfile::tempdir().unwrap();
    let m = package(pkg_dir.path(), &[("a.R", "x <- 1\n")]);
    let bogus = InterpreterSpec::new("bogus", &["/nonexistent/Rscript", "{script}"]);
    let err = execute_package(&m, &[bogus], secs(5, 5), Mode::Raw, &ExecOptions::default()).unwrap_err();
    assert!(matches!(err, ExecError::InterpreterMissing { .. }), "{err:?}");
}

#[test]
fn repeated_runs_are_deterministic() {
    let corpus = common::synthetic_corpus();
    let tmp = tempfile::tempdir().unwrap();
    let a = common::run_into_store(&corpus, &common::stub_matrix(), common::corpus_budget(), 3, &ExecOptions::default(), &tmp.path().join("a"));
    let b = common::run_into_store(&corpus, &common::stub_matrix(), common::corpus_budget(), 3, &ExecOptions::default(), &tmp.path().join("b"));
    let (a, b) = (a.derive(), b.derive());
    assert_eq!(a.combined, b.combined);
    assert_eq!(a.datasets, b.datasets);
    let cats = |t: &reprun_core::results::DerivedTables| {
        t.combined
            .iter()
            .filter(|c| c.cleaning_mode == Mode::Raw)
            .map(|c| (c.package_id.clone(), c.verdict, c.error_category))
            .collect::<Vec<_>>()
    };
    assert_eq!(
        cats(&a),
        [
            ("p1_success".to_string(), CombinedVerdict::Success, None),
            ("p2_setwd".to_string(), CombinedVerdict::Error, Some(ErrorCategory::Setwd)),
            ("p3_library".to_string(), CombinedVerdict::Error, Some(ErrorCategory::Library)),
            ("p4_object".to_string(), CombinedVerdict::Error, Some(ErrorCategory::ObjectNotFound)),
            ("p5_timeout".to_string(), CombinedVerdict::Tle, None),
        ]
    );
    let ds: Vec<_> = a.datasets_for(Mode::Raw).iter().map(|d| d.verdict).collect();
    assert_eq!(
        ds,
        [
            DatasetVerdict::Success,
            DatasetVerdict::Error,
            DatasetVerdict::Error,
            DatasetVerdict::Error,
            DatasetVerdict::ExcludedTle,
            // skipped for having no R code
            DatasetVerdict::ExcludedNoResults,
        ]
    );
}

#[test]
fn worker_crash_is_recorded_and_resumable() {
    let corpus = common::synthetic_corpus();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("store.jsonl");
    let opts = ExecOptions {
        fault_hook: Some(Arc::new(|id: &str| {
            if id == "p4_object" {
                panic!("injected fault");
            }
        })),
        ..Default::default()
    };
    let loaded = common::run_into_store(&corpus, &common::stub_matrix(), common::corpus_budget(), 3, &opts, &path);
    let failures: Vec<_> = loaded
        .records
        .iter()
        .filter_map(|r| match r {
            Record::InfrastructureFailure { package_id, message } => Some((package_id.clone(), message.clone())),
            _ => None,
        })
        .collect();
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0].0, "p4_object");
    assert!(failures[0].1.contains("injected fault"));
    let done = loaded.completed();
    assert_eq!(done.len(), 5);
    assert!(!done.contains("p4_object"));
    assert!(loaded.derive().infrastructure_failures.contains_key("p4_object"));

    // resume: only the package without a completion record runs again
    let pending: Vec<_> = corpus.iter().filter(|m| !done.contains(m.id())).cloned().collect();
    assert_eq!(pending.len(), 1);
    let resumed = common::run_into_store(&pending, &common::stub_matrix(), common::corpus_budget(), 1, &ExecOptions::default(), &path);
    let tables = resumed.derive();
    assert_eq!(tables.packages.len(), 6);
    assert!(tables.infrastructure_failures.is_empty());
    assert!(tables.incomplete.is_empty());
}

#[test]
fn failing_sink_aborts_without_hanging() {
    let corpus = common::synthetic_corpus();
    let mut seen = 0;
    let start = Instant::now();
    let err = run_matrix(
        &corpus,
        &common::stub_matrix(),
        common::corpus_budget(),
        &[Mode::Raw, Mode::Cleaned],
        3,
        &ExecOptions::default(),
        &mut |_rec| {
            seen += 1;
            if seen > 3 {
                Err(io::Error::other("disk full"))
            } else {
                Ok(())
            }
        },
    )
    .unwrap_err();
    assert!(matches!(err, ExecError::StoreUnavailable(ref m) if m.contains("disk full")));
    assert!(start.elapsed() < Duration::from_secs(20));
}

#[test]
fn unfetched_and_codeless_packages_are_skipped() {
    let pkg_dir = tempfile::tempdir().unwrap();
    let mut partial = package(pkg_dir.path(), &[("a.R", "exit 0\n")]);
    partial.package.persistent_id = "partial".into();
    partial.fetch_status = FetchStatus::Partial;
    let nocode_dir = tempfile::tempdir().unwrap();
    let mut nocode = package(nocode_dir.path(), &[("README.md", "hi\n")]);
    nocode.package.persistent_id = "nocode".into();
    let mut records = Vec::new();
    let summary = run_matrix(&[partial, nocode], &[sh()], secs(5, 5), &[Mode::Raw], 2, &ExecOptions::default(), &mut |r| {
        records.push(r.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(summary.packages_skipped, 2);
    assert_eq!(summary.packages_completed, 2);
    assert_eq!(summary.outcomes, 0);
    let reasons: BTreeSet<String> = records
        .iter()
        .filter_map(|r| match r {
            Record::PackageSkipped { reason, .. } => Some(reason.clone()),
            _ => None,
        })
        .collect();
    assert!(reasons.contains("no_r_files"));
    assert!(reasons.iter().any(|r| r.contains("partial")));
}

#[test]
fn each_package_is_registered_before_its_outcomes_and_completed_after() {
    let corpus = common::synthetic_corpus();
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("order.jsonl");
    let store = RunStore::open(&path).unwrap();
    run_matrix(&corpus, &common::stub_matrix(), common::corpus_budget(), &[Mode::Raw], 4, &ExecOptions::default(), &mut |r| {
        store.append(r)
    })
    .unwrap();
    let records = RunStore::load(&path).unwrap().records;
    for m in &corpus {
        let idx: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| match r {
                Record::PackageRegistered { package_id, .. } | Record::PackageComplete { package_id } => package_id == m.id(),
                Record::Outcome(o) => o.package_id == m.id(),
                _ => false,
            })
            .map(|(i, _)| i)
            .collect();
        assert!(matches!(records[idx[0]], Record::PackageRegistered { .. }));
        assert!(matches!(records[*idx.last().unwrap()], Record::PackageComplete { .. }));
    }
}
