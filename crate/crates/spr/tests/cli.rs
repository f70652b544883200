use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spr::episode::read_episode;
use spr::format::{load_embeddings, load_encoder, load_snapshot};
use spr::report::parse_kv;
use spr_core::pipeline::run_spr;
use spr_core::SprConfig;

const EPISODE: &str = "num_tasks = 3\nclasses_per_task = 2\nsamples_per_class = 50\nnoise_kind = \"symmetric\"\n\
                       noise_rate = 0.4\nseed = 5\nfeature_dim = 8\ncluster_separation = 4.0\n";
const RUN: &str = "delayed_capacity = 100\npurified_capacity = 60\nseed = 9\n\
                   [base]\nepochs = 2\n[expert]\nepochs = 4\n[finetune]\nepochs = 6\n";

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        let sb = Self {
            dir: tempfile::tempdir().unwrap(),
        };
        std::fs::write(sb.path("episode.toml"), EPISODE).unwrap();
        std::fs::write(sb.path("run.toml"), RUN).unwrap();
        sb
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.path().join(p)
    }

    fn arg(&self, p: &str) -> String {
        self.path(p).to_str().unwrap().to_string()
    }

    fn spr(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_spr")).args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> Output {
        let out = self.spr(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    }

    fn gen(&self, out: &str) {
        self.ok(&["gen", "--config", &self.arg("episode.toml"), "--out", &self.arg(out)]);
    }

    fn kv(&self, file: &str) -> std::collections::BTreeMap<String, String> {
        parse_kv(&std::fs::read_to_string(self.path(file)).unwrap()).unwrap()
    }
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    v.sort();
    v
}

#[test]
fn gen_writes_three_files_deterministically() {
    let sb = Sandbox::new();
    sb.gen("a");
    sb.gen("b");
    assert_eq!(files(&sb.path("a")), ["episode.toml", "stream.spre", "truth.tsv"]);
    for f in files(&sb.path("a")) {
        assert_eq!(
            std::fs::read(sb.path("a").join(&f)).unwrap(),
            std::fs::read(sb.path("b").join(&f)).unwrap()
        );
    }
    let data = load_embeddings(&sb.path("a/stream.spre")).unwrap();
    // 50 stream plus 12 test samples for each of 6 classes.
    assert_eq!(data.samples.len(), 6 * 62);
    assert_eq!(data.feature_dim, 8);

    sb.ok(&[
        "gen",
        "--config",
        &sb.arg("episode.toml"),
        "--out",
        &sb.arg("c"),
        "--seed",
        "6",
    ]);
    assert_ne!(
        std::fs::read(sb.path("a/stream.spre")).unwrap(),
        std::fs::read(sb.path("c/stream.spre")).unwrap()
    );
    assert!(std::fs::read_to_string(sb.path("c/episode.toml"))
        .unwrap()
        .contains("seed = 6"));
}

#[test]
fn gen_rejects_an_invalid_spec() {
    let sb = Sandbox::new();
    std::fs::write(
        sb.path("bad.toml"),
        EPISODE.replace("noise_rate = 0.4", "noise_rate = 1.5"),
    )
    .unwrap();
    let out = sb.spr(&["gen", "--config", &sb.arg("bad.toml"), "--out", &sb.arg("x")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("noise_rate"));
    assert!(!sb.path("x").exists());

    std::fs::write(sb.path("typo.toml"), format!("{EPISODE}noise_rat = 0.1\n")).unwrap();
    let out = sb.spr(&["gen", "--config", &sb.arg("typo.toml"), "--out", &sb.arg("x")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("noise_rat"));

    let out = sb.spr(&["gen", "--out", &sb.arg("x")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_reports_that_match_the_library() {
    let sb = Sandbox::new();
    sb.gen("ep");
    sb.ok(&[
        "run",
        "--config",
        &sb.arg("run.toml"),
        "--episode",
        &sb.arg("ep"),
        "--out",
        &sb.arg("r"),
        "--filter",
        "non_stochastic",
        "--seed",
        "4",
    ]);
    assert_eq!(
        files(&sb.path("r")),
        [
            "base.sprw",
            "classifier.sprw",
            "config.toml",
            "fits.tsv",
            "metrics.kv",
            "metrics.tsv",
            "purified.sprb"
        ]
    );
    let kv = sb.kv("r/metrics.kv");
    for key in [
        "overall_accuracy",
        "per_task_accuracy_curve",
        "purified_noise_fraction",
        "filtered_noise_percentage",
        "first_task_curve",
    ] {
        assert!(kv.contains_key(key), "{key}");
    }
    assert_eq!(kv["config.filter"], "non_stochastic");
    assert_eq!(kv["config.seed"], "4");

    // The same run through the library on the loaded episode.
    let episode = read_episode(&sb.path("ep")).unwrap();
    let cfg = spr::config::load_run_config(&sb.path("r/config.toml")).unwrap();
    assert_eq!(cfg.seed, 4);
    let run = run_spr(&episode, &cfg).unwrap();
    assert_eq!(kv["overall_accuracy"], format!("{:?}", run.metrics.overall_accuracy));
    assert_eq!(kv["run.noisy_presented"], run.noisy_presented.to_string());

    let snap = load_snapshot(&sb.path("r/purified.sprb")).unwrap();
    assert_eq!(snap.entries.len().to_string(), kv["run.buffer_size"]);
    let noisy = snap
        .entries
        .iter()
        .filter(|e| e.sample.is_noisy() == Some(true))
        .count();
    assert_eq!(
        format!("{:?}", noisy as f64 / snap.entries.len() as f64),
        kv["purified_noise_fraction"]
    );
    assert_eq!(load_encoder(&sb.path("r/base.sprw")).unwrap(), run.base);

    let fits = std::fs::read_to_string(sb.path("r/fits.tsv")).unwrap();
    assert_eq!(fits.lines().count(), 1 + run.diagnostics.len());

    // Rerunning from the echoed config reproduces the report.
    sb.ok(&[
        "run",
        "--config",
        &sb.arg("r/config.toml"),
        "--episode",
        &sb.arg("ep"),
        "--out",
        &sb.arg("r2"),
    ]);
    assert_eq!(
        std::fs::read(sb.path("r/metrics.kv")).unwrap(),
        std::fs::read(sb.path("r2/metrics.kv")).unwrap()
    );
}

#[test]
fn run_error_exit_codes() {
    let sb = Sandbox::new();
    let out = sb.spr(&["run", "--episode", &sb.arg("nowhere"), "--out", &sb.arg("r")]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("stream.spre"));

    sb.gen("ep");
    std::fs::write(sb.path("zero.toml"), "e_max = 0\n").unwrap();
    let out = sb.spr(&[
        "run",
        "--config",
        &sb.arg("zero.toml"),
        "--episode",
        &sb.arg("ep"),
        "--out",
        &sb.arg("r"),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("e_max"));

    let out = sb.spr(&[
        "run",
        "--episode",
        &sb.arg("ep"),
        "--out",
        &sb.arg("r"),
        "--filter",
        "fuzzy",
    ]);
    assert_eq!(out.status.code(), Some(2));

    // An absurd step size blows the expert up inside the first cycle.
    std::fs::write(
        sb.path("diverge.toml"),
        "[expert]\nlearning_rate = 1e300\nepochs = 2\n[base]\nepochs = 1\n",
    )
    .unwrap();
    let out = sb.spr(&[
        "run",
        "--config",
        &sb.arg("diverge.toml"),
        "--episode",
        &sb.arg("ep"),
        "--out",
        &sb.arg("r"),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("cycle 0"));
}

#[test]
fn compare_filters_writes_paired_rows() {
    let sb = Sandbox::new();
    sb.gen("ep");
    sb.ok(&[
        "compare-filters",
        "--config",
        &sb.arg("run.toml"),
        "--episode",
        &sb.arg("ep"),
        "--out",
        &sb.arg("c"),
        "--seeds",
        "2,7,3",
    ]);
    let tsv = std::fs::read_to_string(sb.path("c/compare.tsv")).unwrap();
    let rows: Vec<&str> = tsv.lines().skip(1).collect();
    assert_eq!(rows.len(), 3 * 2 + 1);
    let seeds: Vec<&str> = rows.iter().map(|r| r.split('\t').next().unwrap()).collect();
    assert_eq!(seeds, ["2", "2", "7", "7", "3", "3", "mean"]);

    let kv = sb.kv("c/compare.kv");
    let f = |k: &str| kv[k].parse::<f64>().unwrap();
    let diff = f("stochastic.filtered_noise_percentage") - f("non_stochastic.filtered_noise_percentage");
    assert!((diff - f("difference.filtered_noise_percentage")).abs() < 1e-12);

    // Each row equals a single run of that variant and seed.
    sb.ok(&[
        "run",
        "--config",
        &sb.arg("run.toml"),
        "--episode",
        &sb.arg("ep"),
        "--out",
        &sb.arg("r"),
        "--seed",
        "7",
    ]);
    let single = sb.kv("r/metrics.kv");
    assert_eq!(
        kv["seed.7.stochastic.filtered_noise_percentage"],
        single["filtered_noise_percentage"]
    );

    let out = sb.spr(&[
        "compare-filters",
        "--episode",
        &sb.arg("ep"),
        "--out",
        &sb.arg("c1"),
        "--seeds",
        "1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn baseline_and_report() {
    let sb = Sandbox::new();
    sb.gen("ep");
    sb.ok(&[
        "baseline",
        "--config",
        &sb.arg("run.toml"),
        "--episode",
        &sb.arg("ep"),
        "--out",
        &sb.arg("b"),
    ]);
    let kv = sb.kv("b/metrics.kv");
    assert_eq!(kv["config.method"], "crs");
    assert_eq!(kv["filtered_noise_percentage"], "none");
    let reservoir = load_embeddings(&sb.path("b/reservoir.spre")).unwrap();
    assert_eq!(reservoir.samples.len(), 60);
    assert!(reservoir.samples.iter().all(|s| s.true_label.is_some()));

    sb.ok(&[
        "run",
        "--config",
        &sb.arg("run.toml"),
        "--episode",
        &sb.arg("ep"),
        "--out",
        &sb.arg("r"),
    ]);
    let out = sb.ok(&["report", "--out", &sb.arg("r")]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("filtered_noise_percentage"));
    assert!(text.contains("purified.sprb: 60 entries"));

    let out = sb.spr(&["report", "--out", &sb.arg("empty")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn default_config_matches_library_defaults() {
    let sb = Sandbox::new();
    std::fs::write(sb.path("empty.toml"), "").unwrap();
    assert_eq!(
        spr::config::load_run_config(&sb.path("empty.toml")).unwrap(),
        SprConfig::default()
    );
}
