use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reprun_core::ingest::mock::{MockDataset, MockDataverse, MockFile};

fn reprun(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reprun"))
        .args(args)
        .env_remove("DATAVERSE_API_TOKEN")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Three local packages whose `.R` files are shell scripts, run with `sh`.
fn local_tree(root: &Path) -> PathBuf {
    let src = root.join("src");
    let files = [
        ("good/main.R", "exit 0\n"),
        ("bad/main.R", "echo \"Error: object 'x' not found\" >&2\nexit 1\n"),
        ("bad/data/in.csv", "a\n1\n"),
        ("mixed/a.R", "exit 0\n"),
        ("mixed/b.R", "sleep 5\n"),
        ("mixed/README.md", "# readme\n"),
    ];
    for (rel, body) in files {
        let p = src.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, body).unwrap();
    }
    fs::write(
        root.join("meta.csv"),
        "package,journal,publication_date\ngood,J1,2019-01-01\nbad,J1,2020-01-01\nmixed,J2,2020-06-01\n",
    )
    .unwrap();
    src
}

fn ingested(root: &Path) -> PathBuf {
    let src = local_tree(root);
    let corpus = root.join("corpus");
    let o = reprun(&["ingest", "--local", s(&src), "--metadata", s(&root.join("meta.csv")), "--dest", s(&corpus)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    corpus
}

const SH: &str = "sh=sh {script}";

#[test]
fn help_matches_readme_reference() {
    let readme = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md")).unwrap();
    for sub in [None, Some("ingest"), Some("analyze"), Some("clean"), Some("run"), Some("report")] {
        let mut args: Vec<&str> = sub.into_iter().collect();
        args.push("--help");
        let o = reprun(&args);
        assert_eq!(code(&o), 0);
        let help = String::from_utf8(o.stdout).unwrap();
        assert!(
            readme.contains(help.trim_end()),
            "README CLI reference is out of date for `reprun {}`",
            args.join(" ")
        );
    }
}

#[test]
fn local_ingest_writes_manifests_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = ingested(tmp.path());
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(corpus.join("manifests/bad.json")).unwrap()).unwrap();
    assert_eq!(manifest["persistent_id"], "bad");
    assert_eq!(manifest["metadata"]["journal"], "J1");
    assert_eq!(manifest["publication_date"], "2020-01-01");
    assert_eq!(manifest["files"].as_array().unwrap().len(), 2);
    let before = fs::read(corpus.join("manifests/bad.json")).unwrap();

    let o = reprun(&["ingest", "--local", s(&tmp.path().join("src")), "--dest", s(&corpus)]);
    assert_eq!(code(&o), 0);
    assert!(text(&o).contains("already cataloged"));
    assert_eq!(fs::read(corpus.join("manifests/bad.json")).unwrap(), before);
}

#[test]
fn api_ingest_downloads_and_reports_network_failures() {
    let server = MockDataverse::start(vec![
        MockDataset::new("doi:10.1/A", vec![MockFile::new("a.R", "x <- 1\n")]),
        MockDataset::new("doi:10.1/B", vec![MockFile::new("b.R", "y <- 2\n"), MockFile::new("d.csv", "1\n")]),
    ])
    .unwrap();
    let tmp = tempfile::tempdir().unwrap();
    let dest = tmp.path().join("corpus");
    let o = reprun(&["ingest", "--api-base", &server.base_url(), "--dest", s(&dest), "--jobs", "2"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(dest.join("manifests/doi_10.1_B.json").is_file());
    assert!(dest.join("packages/doi_10.1_B/d.csv").is_file());

    let o = reprun(&["ingest", "--api-base", &server.base_url(), "--dest", s(&dest), "--limit", "1"]);
    assert_eq!(code(&o), 0);
    assert!(text(&o).contains("already cataloged"));

    let dead = {
        let gone = MockDataverse::start(vec![]).unwrap();
        gone.base_url()
    };
    let o = reprun(&["ingest", "--api-base", &dead, "--dest", s(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 3, "{}", text(&o));
}

#[test]
fn analyze_writes_json_and_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = ingested(tmp.path());
    let o = reprun(&["analyze", "--corpus", s(&corpus)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(corpus.join("analysis/corpus_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["package_count"], 3);
    assert_eq!(summary["packages_with_documentation"], 1);
    assert!(corpus.join("analysis/packages.json").is_file());

    let out = tmp.path().join("csv");
    let o = reprun(&["analyze", "--corpus", s(&corpus), "--format", "csv", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let files = fs::read_to_string(out.join("files.csv")).unwrap();
    assert_eq!(files.lines().count(), 5);
    assert!(out.join("packages.csv").is_file());
}

#[test]
fn unreadable_corpus_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = reprun(&["analyze", "--corpus", s(&tmp.path().join("missing"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn clean_writes_copies_report_and_diff() {
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("src/pkg");
    fs::create_dir_all(&src).unwrap();
    fs::write(src.join("m.R"), "setwd(\"/home/me\")\nlibrary(dplyr)\n").unwrap();
    let corpus = tmp.path().join("corpus");
    assert_eq!(code(&reprun(&["ingest", "--local", s(&tmp.path().join("src")), "--dest", s(&corpus)])), 0);

    let o = reprun(&["clean", "--corpus", s(&corpus), "--diff", "--cran-mirror", "https://cloud.r-project.org"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let diff = String::from_utf8_lossy(&o.stdout);
    assert!(diff.contains("-setwd(\"/home/me\")") && diff.contains("+setwd(\".\")"), "{diff}");
    let cleaned = fs::read_to_string(corpus.join("cleaned/pkg/m.R")).unwrap();
    assert!(cleaned.contains(r#"install.packages("dplyr", repos="https://cloud.r-project.org")"#), "{cleaned}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(corpus.join("cleaned/clean_report.json")).unwrap()).unwrap();
    assert_eq!(report[0]["actions"].as_array().unwrap().len(), 2);
    // the original is untouched
    assert_eq!(fs::read_to_string(src.join("m.R")).unwrap(), "setwd(\"/home/me\")\nlibrary(dplyr)\n");

    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = reprun(&["clean", "--corpus", s(&corpus), "--out", s(&blocker.join("sub"))]);
    assert_eq!(code(&o), 4, "{}", text(&o));
}

#[test]
fn run_then_report_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = ingested(tmp.path());
    let store = tmp.path().join("store.jsonl");
    let run = |extra: &[&str]| {
        let mut args = vec![
            "run", "--corpus", s(&corpus), "--store", s(&store), "--interpreter", SH, "--jobs", "3",
            "--per-file-secs", "1", "--per-package-secs", "10",
        ];
        args.extend_from_slice(extra);
        reprun(&args)
    };
    let o = run(&[]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("3 packages completed"), "{}", text(&o));

    let before = fs::read(&store).unwrap();
    let o = run(&[]);
    assert_eq!(code(&o), 0);
    assert!(text(&o).contains("3 package(s) already complete, 0 to run"), "{}", text(&o));
    assert_eq!(fs::read(&store).unwrap(), before, "a no-op resume must leave the store alone");

    let out = tmp.path().join("report");
    let o = reprun(&["report", "--store", s(&store), "--out", s(&out), "--group-by", "journal", "--group-by", "year"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let raw = &summary["modes"][0];
    assert_eq!(raw["mode"], "raw");
    assert_eq!(raw["file_rate"]["numerator"], 2);
    assert_eq!(raw["file_rate"]["denominator"], 3);
    assert_eq!(summary["comparison"]["Ok"]["excluded"], 1);
    let txt = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(txt.contains("file success rate"));
    for f in ["combined.csv", "datasets.csv", "outcomes.csv", "groups_journal_raw.csv", "groups_year_raw.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let journal = fs::read_to_string(out.join("groups_journal_raw.csv")).unwrap();
    assert!(journal.lines().any(|l| l.starts_with("J1,")), "{journal}");

    // --force reruns everything; later records win
    let o = run(&["--force", "--modes", "raw"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("3 packages completed"));
}

#[test]
fn cleaned_root_from_clean_is_used() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = ingested(tmp.path());
    assert_eq!(code(&reprun(&["clean", "--corpus", s(&corpus)])), 0);
    let store = tmp.path().join("s.jsonl");
    let o = reprun(&[
        "run", "--corpus", s(&corpus), "--store", s(&store), "--interpreter", SH, "--modes", "cleaned",
        "--cleaned", s(&corpus.join("cleaned")), "--per-file-secs", "1", "--per-package-secs", "5",
    ]);
    assert_eq!(code(&o), 0, "{}", text(&o));

    let empty = tmp.path().join("nothing");
    fs::create_dir_all(&empty).unwrap();
    let o = reprun(&[
        "run", "--corpus", s(&corpus), "--store", s(&tmp.path().join("t.jsonl")), "--interpreter", SH,
        "--modes", "cleaned", "--cleaned", s(&empty), "--per-file-secs", "1", "--per-package-secs", "5",
    ]);
    // missing cleaner output is an infrastructure failure per package, not a crash
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(text(&o).contains("3 infrastructure failures"), "{}", text(&o));
}

#[test]
fn interpreter_problems_exit_5() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = ingested(tmp.path());
    let store = tmp.path().join("s.jsonl");
    let o = reprun(&["run", "--corpus", s(&corpus), "--store", s(&store), "--interpreter", "x=/nonexistent/Rscript {script}"]);
    assert_eq!(code(&o), 5, "{}", text(&o));
    let o = reprun(&["run", "--corpus", s(&corpus), "--store", s(&store), "--interpreter", "x=sh -c true"]);
    assert_eq!(code(&o), 5, "{}", text(&o));
    assert!(!store.exists() || fs::read_to_string(&store).unwrap().is_empty());
}

#[test]
fn bad_settings_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = ingested(tmp.path());
    let o = reprun(&[
        "run", "--corpus", s(&corpus), "--interpreter", SH, "--per-file-secs", "10", "--per-package-secs", "1",
    ]);
    assert_eq!(code(&o), 2, "{}", text(&o));
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let o = reprun(&["--config", s(&cfg), "report"]);
    assert_eq!(code(&o), 2, "{}", text(&o));
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = ingested(tmp.path());
    let store = tmp.path().join("from-config.jsonl");
    let cfg = tmp.path().join("reprun.toml");
    fs::write(
        &cfg,
        format!(
            "store = {:?}\njobs = 2\nmodes = [\"raw\"]\n[budget]\nper_file_secs = 1\nper_package_secs = 4\n\
             [[interpreter]]\nlabel = \"cfg-sh\"\ncommand = [\"sh\", \"{{script}}\"]\n",
            s(&store)
        ),
    )
    .unwrap();
    let o = reprun(&["--config", s(&cfg), "run", "--corpus", s(&corpus)]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let log = fs::read_to_string(&store).unwrap();
    assert!(log.contains("\"interpreter_label\":\"cfg-sh\""));
    assert!(!log.contains("\"cleaning_mode\":\"cleaned\""));

    // a flag wins over the file
    let o = reprun(&["--config", s(&cfg), "run", "--corpus", s(&corpus), "--interpreter", "flag-sh=sh {script}", "--force"]);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(fs::read_to_string(&store).unwrap().contains("\"interpreter_label\":\"flag-sh\""));
}

#[test]
fn empty_store_exits_6() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("none.jsonl");
    assert_eq!(code(&reprun(&["report", "--store", s(&missing)])), 6);
    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    assert_eq!(code(&reprun(&["report", "--store", s(&empty)])), 6);
}
