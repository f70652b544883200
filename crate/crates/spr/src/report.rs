//! Text reports.
//!
//! The structured report is one `key = value` pair per line. Keys without a
//! dot are exactly the `RunMetrics` field names; `config.*` and `run.*` keys
//! echo the settings and counters of the run. Numbers use Rust's shortest
//! round-trip formatting, lists are comma-separated, matrix rows are
//! separated by `;`, and a missing value is written `none`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use spr_core::pipeline::CycleDiagnostic;
use spr_core::{RunMetrics, SprConfig};

pub const METRICS_KV: &str = "metrics.kv";
pub const METRICS_TSV: &str = "metrics.tsv";
pub const CONFIG_ECHO: &str = "config.toml";
pub const FITS_TSV: &str = "fits.tsv";
pub const COMPARE_TSV: &str = "compare.tsv";
pub const COMPARE_KV: &str = "compare.kv";
pub const NONE: &str = "none";

pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| NONE.to_string(), num)
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| num(*x)).collect::<Vec<_>>().join(",")
}

fn matrix(rows: &[Vec<f64>]) -> String {
    rows.iter().map(|r| list(r)).collect::<Vec<_>>().join(";")
}

/// Ordered key/value lines.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct KvWriter {
    lines: Vec<(String, String)>,
}

impl KvWriter {
    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.lines.push((key.into(), value.to_string()));
        self
    }

    pub fn finish(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.lines {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}

pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, String> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(format!("line {}: duplicate key {k}", i + 1));
        }
    }
    Ok(out)
}

pub fn push_metrics(kv: &mut KvWriter, m: &RunMetrics) {
    kv.push("overall_accuracy", num(m.overall_accuracy))
        .push("per_task_accuracy_curve", matrix(&m.per_task_accuracy_curve))
        .push("purified_noise_fraction", num(m.purified_noise_fraction))
        .push("filtered_noise_percentage", opt(m.filtered_noise_percentage))
        .push("first_task_curve", list(&m.first_task_curve));
}

pub fn push_config(kv: &mut KvWriter, method: &str, cfg: &SprConfig) {
    kv.push("config.method", method)
        .push("config.seed", cfg.seed)
        .push("config.filter", cfg.filter.name())
        .push("config.e_max", cfg.e_max)
        .push("config.delayed_capacity", cfg.delayed_capacity)
        .push("config.purified_capacity", cfg.purified_capacity)
        .push("config.replay_includes_delayed", cfg.replay_includes_delayed);
}

/// Long-format table: one row per value.
pub fn metrics_tsv(m: &RunMetrics) -> String {
    let mut s = String::from("metric\tafter_task\ttask\tvalue\n");
    writeln!(s, "overall_accuracy\t-\t-\t{}", num(m.overall_accuracy)).unwrap();
    writeln!(s, "purified_noise_fraction\t-\t-\t{}", num(m.purified_noise_fraction)).unwrap();
    writeln!(
        s,
        "filtered_noise_percentage\t-\t-\t{}",
        opt(m.filtered_noise_percentage)
    )
    .unwrap();
    for (b, row) in m.per_task_accuracy_curve.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            writeln!(s, "per_task_accuracy_curve\t{b}\t{t}\t{}", num(*v)).unwrap();
        }
    }
    for (b, v) in m.first_task_curve.iter().enumerate() {
        writeln!(s, "first_task_curve\t{b}\t0\t{}", num(*v)).unwrap();
    }
    s
}

/// One row per mixture fit; `member` is `-` for the weighted graph.
pub fn fits_tsv(diags: &[CycleDiagnostic]) -> String {
    let mut s = String::from(
        "cycle\tclass\tmember\tpi_0\tpi_1\talpha_0\talpha_1\tbeta_0\tbeta_1\tclean_index\titerations\tlog_likelihood\n",
    );
    for d in diags {
        let f = &d.fit;
        let m = &f.mixture;
        let member = f.member.map_or_else(|| "-".to_string(), |e| e.to_string());
        writeln!(
            s,
            "{}\t{}\t{member}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            d.cycle,
            f.class_label,
            num(m.weights[0]),
            num(m.weights[1]),
            num(m.alpha[0]),
            num(m.alpha[1]),
            num(m.beta[0]),
            num(m.beta[1]),
            m.clean_index,
            f.iterations,
            num(f.log_likelihood),
        )
        .unwrap();
    }
    s
}

/// Per-seed results of both filter variants.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedPair {
    pub seed: u64,
    pub stochastic: RunMetrics,
    pub non_stochastic: RunMetrics,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    let v = v?;
    if v.is_empty() {
        return None;
    }
    Some(v.iter().sum::<f64>() / v.len() as f64)
}

/// Means over seeds of filtered noise, buffer noise and accuracy.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareSummary {
    pub stochastic: [Option<f64>; 3],
    pub non_stochastic: [Option<f64>; 3],
    pub difference: [Option<f64>; 3],
}

const COMPARED: [&str; 3] = [
    "filtered_noise_percentage",
    "purified_noise_fraction",
    "overall_accuracy",
];

fn compared(m: &RunMetrics) -> [Option<f64>; 3] {
    [
        m.filtered_noise_percentage,
        Some(m.purified_noise_fraction),
        Some(m.overall_accuracy),
    ]
}

pub fn summarize(pairs: &[SeedPair]) -> CompareSummary {
    let col = |f: &dyn Fn(&SeedPair) -> [Option<f64>; 3], k: usize| mean(pairs.iter().map(|p| f(p)[k]));
    let st = |p: &SeedPair| compared(&p.stochastic);
    let ns = |p: &SeedPair| compared(&p.non_stochastic);
    let diff = |p: &SeedPair| {
        let (a, b) = (st(p), ns(p));
        [0, 1, 2].map(|k| Some(a[k]? - b[k]?))
    };
    CompareSummary {
        stochastic: [0, 1, 2].map(|k| col(&st, k)),
        non_stochastic: [0, 1, 2].map(|k| col(&ns, k)),
        difference: [0, 1, 2].map(|k| col(&diff, k)),
    }
}

/// Rows are seeds x variants in seed order, then one summary row holding
/// the mean paired difference (stochastic minus non-stochastic).
pub fn compare_tsv(pairs: &[SeedPair]) -> String {
    let mut s = format!("seed\tfilter\t{}\n", COMPARED.join("\t"));
    let row = |s: &mut String, a: &str, b: &str, v: [Option<f64>; 3]| {
        writeln!(s, "{a}\t{b}\t{}\t{}\t{}", opt(v[0]), opt(v[1]), opt(v[2])).unwrap();
    };
    for p in pairs {
        row(&mut s, &p.seed.to_string(), "stochastic", compared(&p.stochastic));
        row(
            &mut s,
            &p.seed.to_string(),
            "non_stochastic",
            compared(&p.non_stochastic),
        );
    }
    row(&mut s, "mean", "difference", summarize(pairs).difference);
    s
}

pub fn compare_kv(pairs: &[SeedPair], cfg: &SprConfig) -> String {
    let sum = summarize(pairs);
    let mut kv = KvWriter::default();
    let seeds: Vec<String> = pairs.iter().map(|p| p.seed.to_string()).collect();
    kv.push("config.seeds", seeds.join(","))
        .push("config.e_max", cfg.e_max)
        .push("config.delayed_capacity", cfg.delayed_capacity)
        .push("config.purified_capacity", cfg.purified_capacity);
    for (k, name) in COMPARED.iter().enumerate() {
        kv.push(format!("stochastic.{name}"), opt(sum.stochastic[k]))
            .push(format!("non_stochastic.{name}"), opt(sum.non_stochastic[k]))
            .push(format!("difference.{name}"), opt(sum.difference[k]));
    }
    for p in pairs {
        kv.push(
            format!("seed.{}.stochastic.filtered_noise_percentage", p.seed),
            opt(p.stochastic.filtered_noise_percentage),
        )
        .push(
            format!("seed.{}.non_stochastic.filtered_noise_percentage", p.seed),
            opt(p.non_stochastic.filtered_noise_percentage),
        );
    }
    kv.finish()
}
