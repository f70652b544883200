use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use spr_core::bmm::fit_em;
use spr_core::buffers::AdmissionMode;
use spr_core::centrality::{power_method, AdjacencyMatrix};
use spr_core::encoder::ntxent_loss;
use spr_core::pipeline::{run_crs_baseline, run_spr};
use spr_core::stream_gen::generate_episode;
use spr_core::{
    EmConfig, EpisodeSpec, FilterVariant, PurifiedBuffer, PurifiedEntry, ReservoirBuffer, RunMetrics, Sample, SprConfig,
};

/// Mean stochastic filtered-noise percentage of the first verified run on
/// the reference benchmark, seeds 0..5.
const FILTERED_NOISE_REFERENCE: f64 = 0.9640;
/// Mean SPR minus CRS accuracy at 40% noise from the first verified run.
const SPR_OVER_CRS_REFERENCE: f64 = 0.3992;

const BENCH_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn verdict(id: &str, ok: bool, detail: String) {
    println!("{id} {}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{id} failed: {detail}");
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[test]
fn a1_power_method_matches_dense_eigensolver() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1);
    let (mut worst_cos, mut worst_rel) = (1.0f64, 0.0f64);
    for t in 0..100 {
        let n = [5, 20, 50][t % 3];
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = 1.0 - rng.random::<f64>();
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        let r = power_method(&AdjacencyMatrix::from_rows(n, a.clone()).unwrap(), 1e-10, 10_000).unwrap();
        let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, &a));
        let (k, lambda) = eig
            .eigenvalues
            .iter()
            .copied()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        let v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
        worst_cos = worst_cos.min(cosine(&r.c, &v).abs());
        worst_rel = worst_rel.max(((r.lambda - lambda) / lambda).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "A1",
        worst_cos >= 1.0 - 1e-8 && worst_rel <= 1e-8 && secs < 5.0,
        format!("min cosine {worst_cos:.12}, max eigenvalue rel err {worst_rel:.2e}, {secs:.2}s"),
    );
}

#[test]
fn a2_beta_mixture_recovery() {
    let start = Instant::now();
    let clean_dist = Beta::new(8.0, 2.0).unwrap();
    let noisy_dist = Beta::new(2.0, 8.0).unwrap();
    let mut misses = Vec::new();
    let mut monotone = true;
    let mut identified = true;
    let mut worst_pi = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..2000)
            .map(|_| {
                let c: f64 = if rng.random_bool(0.5) {
                    clean_dist.sample(&mut rng)
                } else {
                    noisy_dist.sample(&mut rng)
                };
                c.clamp(1e-4, 1.0 - 1e-4)
            })
            .collect();
        let fit = fit_em(&scores, &EmConfig::default()).unwrap();
        monotone &= fit.trace.windows(2).all(|w| w[1] >= w[0]);
        let m = fit.mixture;
        let (c, n) = (m.clean_index, 1 - m.clean_index);
        identified &= m.mean(c) > 0.5 && m.mean(n) < 0.5;
        worst_pi = worst_pi.max((m.weights[c] - 0.5).abs());
        let err = [m.alpha[c] - 8.0, m.beta[c] - 2.0, m.alpha[n] - 2.0, m.beta[n] - 8.0]
            .iter()
            .fold(0.0f64, |a, e| a.max(e.abs()));
        if err > 0.75 {
            misses.push(format!("seed {seed} off by {err:.2}"));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "A2",
        misses.is_empty() && monotone && identified && worst_pi <= 0.05 && secs < 10.0,
        format!(
            "{} of 20 trials outside +-0.75 {misses:?}, max |pi - 0.5| {worst_pi:.4}, clean identified {identified}, monotone {monotone}, {secs:.2}s",
            misses.len()
        ),
    );
}

/// Direct evaluation of the summed loss on raw dot products.
fn reference_loss(units: &[Vec<f64>], tau: f64) -> f64 {
    let n = units.len();
    let sim = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / tau;
    (0..n)
        .map(|i| {
            let denom: f64 = (0..n)
                .filter(|&k| k != i)
                .map(|k| sim(&units[i], &units[k]).exp())
                .sum();
            denom.ln() - sim(&units[i], &units[i ^ 1])
        })
        .sum()
}

#[test]
fn a3_ntxent_gradient_check() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA3);
    let dim = 8;
    let mut worst = 0.0f64;
    for b in 0..50 {
        let n = 2 * rng.random_range(2..=8);
        let tau = [0.1, 0.5, 1.0][b % 3];
        let units: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / norm).collect()
            })
            .collect();
        let (_, grad) = ntxent_loss(&units, tau).unwrap();
        let h = 1e-5;
        for i in 0..n {
            for k in 0..dim {
                let mut plus = units.clone();
                let mut minus = units.clone();
                plus[i][k] += h;
                minus[i][k] -= h;
                let fd = (reference_loss(&plus, tau) - reference_loss(&minus, tau)) / (2.0 * h);
                let an = grad[i][k];
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-6));
            }
        }
    }
    let pair: Vec<Vec<f64>> = vec![vec![0.6, 0.8], vec![1.0, 0.0]];
    let (zero, zero_grad) = ntxent_loss(&pair, 0.5).unwrap();
    let degenerate = zero == 0.0 && zero_grad.iter().flatten().all(|g| *g == 0.0);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "A3",
        worst <= 1e-4 && degenerate && secs < 5.0,
        format!("max relative gradient error {worst:.2e}, two-embedding loss {zero}, {secs:.2}s"),
    );
}

struct SprBench {
    stochastic: Vec<RunMetrics>,
    non_stochastic: Vec<RunMetrics>,
}

fn spr_bench() -> &'static SprBench {
    static CELL: OnceLock<SprBench> = OnceLock::new();
    CELL.get_or_init(|| {
        let run = |seed: u64, filter: FilterVariant| {
            let ep = generate_episode(&EpisodeSpec::reference(0.4, seed)).unwrap();
            let cfg = SprConfig {
                seed,
                filter,
                ..SprConfig::default()
            };
            run_spr(&ep, &cfg).unwrap().metrics
        };
        SprBench {
            stochastic: BENCH_SEEDS.iter().map(|&s| run(s, FilterVariant::Stochastic)).collect(),
            non_stochastic: BENCH_SEEDS
                .iter()
                .map(|&s| run(s, FilterVariant::NonStochastic))
                .collect(),
        }
    })
}

fn crs_accuracy(noise: f64, seed: u64) -> f64 {
    static CELL: OnceLock<std::sync::Mutex<BTreeMap<(u64, u64), f64>>> = OnceLock::new();
    let cache = CELL.get_or_init(Default::default);
    let key = (noise.to_bits(), seed);
    if let Some(v) = cache.lock().unwrap().get(&key) {
        return *v;
    }
    let ep = generate_episode(&EpisodeSpec::reference(noise, seed)).unwrap();
    let cfg = SprConfig {
        seed,
        ..SprConfig::default()
    };
    let acc = run_crs_baseline(&ep, &cfg).unwrap().metrics.overall_accuracy;
    cache.lock().unwrap().insert(key, acc);
    acc
}

fn filtered(runs: &[RunMetrics]) -> Vec<f64> {
    runs.iter().map(|m| m.filtered_noise_percentage.unwrap()).collect()
}

#[test]
fn a4_filtering_efficacy() {
    let start = Instant::now();
    let bench = spr_bench();
    let f = filtered(&bench.stochastic);
    let fractions: Vec<f64> = bench.stochastic.iter().map(|m| m.purified_noise_fraction).collect();
    let m = mean(&f);
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "A4",
        m >= FILTERED_NOISE_REFERENCE - 0.05 && fractions.iter().all(|x| *x < 0.4) && secs < 600.0,
        format!(
            "mean filtered {m:.4} (reference {FILTERED_NOISE_REFERENCE}), per seed {f:.4?}, buffer noise {fractions:.4?}"
        ),
    );
}

#[test]
fn a5_stochastic_at_least_non_stochastic() {
    let bench = spr_bench();
    let st = filtered(&bench.stochastic);
    let ns = filtered(&bench.non_stochastic);
    let (ms, mn) = (mean(&st), mean(&ns));
    verdict(
        "A5",
        ms >= mn,
        format!("stochastic {ms:.4} vs non-stochastic {mn:.4}; per seed {st:.4?} vs {ns:.4?}"),
    );
}

#[test]
fn a6_noise_accelerates_forgetting() {
    let noise = [0.0, 0.2, 0.4, 0.6];
    let acc: Vec<f64> = noise
        .iter()
        .map(|&r| mean(&BENCH_SEEDS[..3].iter().map(|&s| crs_accuracy(r, s)).collect::<Vec<_>>()))
        .collect();
    let rises: Vec<f64> = acc.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    let ok = rises.is_empty() || (rises.len() == 1 && rises[0] <= 0.01);
    verdict("A6", ok, format!("CRS accuracy at noise {noise:?}: {acc:.4?}"));
}

#[test]
fn a7_spr_beats_noisy_crs() {
    let bench = spr_bench();
    let spr: Vec<f64> = bench.stochastic.iter().map(|m| m.overall_accuracy).collect();
    let crs: Vec<f64> = BENCH_SEEDS.iter().map(|&s| crs_accuracy(0.4, s)).collect();
    let margin = mean(&spr) - mean(&crs);
    verdict(
        "A7",
        margin >= 0.05f64.max(SPR_OVER_CRS_REFERENCE - 0.1),
        format!(
            "SPR {:.4} vs CRS {:.4}, margin {margin:.4} (reference {SPR_OVER_CRS_REFERENCE})",
            mean(&spr),
            mean(&crs)
        ),
    );
}

fn spr_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_spr")).args(args).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn a8_reports_are_bit_identical_across_processes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(
        d.join("episode.toml"),
        "num_tasks = 3\nclasses_per_task = 2\nsamples_per_class = 50\nnoise_kind = \"symmetric\"\n\
         noise_rate = 0.4\nseed = 5\nfeature_dim = 8\ncluster_separation = 4.0\n",
    )
    .unwrap();
    std::fs::write(
        d.join("run.toml"),
        "delayed_capacity = 100\npurified_capacity = 60\nseed = 9\n\
         [base]\nepochs = 3\n[expert]\nepochs = 5\n[finetune]\nepochs = 8\n",
    )
    .unwrap();
    let s = |p: &str| d.join(p).to_str().unwrap().to_string();
    spr_cli(&["gen", "--config", &s("episode.toml"), "--out", &s("ep")]);
    for out in ["r1", "r2"] {
        spr_cli(&[
            "run",
            "--config",
            &s("run.toml"),
            "--episode",
            &s("ep"),
            "--out",
            &s(out),
        ]);
    }
    for out in ["c1", "c2"] {
        spr_cli(&[
            "compare-filters",
            "--config",
            &s("run.toml"),
            "--episode",
            &s("ep"),
            "--out",
            &s(out),
            "--seeds",
            "3,4",
        ]);
    }
    let run_same = ["metrics.kv", "metrics.tsv", "fits.tsv", "purified.sprb", "base.sprw"]
        .iter()
        .all(|f| read(&d.join("r1"), f) == read(&d.join("r2"), f));
    let cmp_same = ["compare.kv", "compare.tsv"]
        .iter()
        .all(|f| read(&d.join("c1"), f) == read(&d.join("c2"), f));
    verdict(
        "A8",
        run_same && cmp_same,
        format!("run identical {run_same}, compare-filters identical {cmp_same}"),
    );
}

fn entry(id: u64, class: usize, p: f64) -> PurifiedEntry {
    PurifiedEntry {
        sample: Sample {
            id,
            features: vec![0.0],
            observed_label: class,
            true_label: None,
            task_id: 0,
        },
        clean_posterior: p,
    }
}

/// Returns the first violated invariant, if any.
fn fuzz_purified(mode: AdmissionMode, seed: u64) -> Option<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let capacity = rng.random_range(8..64);
    let mut buf = PurifiedBuffer::with_mode(capacity, mode);
    let mut next = 0u64;
    let mut ops = 0;
    while ops < 10_000 {
        let classes = rng.random_range(1..10);
        let batch: Vec<PurifiedEntry> = (0..rng.random_range(1..16))
            .map(|_| {
                next += 1;
                entry(
                    next,
                    rng.random_range(0..classes),
                    f64::from(rng.random_range(0..=20u8)) / 20.0,
                )
            })
            .collect();
        ops += batch.len();
        let mut pool: BTreeMap<u64, (usize, f64)> = buf
            .entries()
            .map(|e| (e.sample.id, (e.sample.observed_label, e.clean_posterior)))
            .collect();
        for e in &batch {
            pool.insert(e.sample.id, (e.sample.observed_label, e.clean_posterior));
        }
        let report = buf.admit(batch, &mut rng).unwrap();
        if buf.len() > capacity {
            return Some(format!("size {} over capacity {capacity}", buf.len()));
        }
        if buf.len() == capacity {
            let counts: Vec<usize> = buf.classes_seen().iter().map(|&c| buf.class_count(c)).collect();
            if counts.iter().max().unwrap() - counts.iter().min().unwrap() > 1 {
                return Some(format!("unbalanced counts {counts:?} at capacity"));
            }
        }
        for id in &report.evicted {
            let (class, p) = pool[id];
            if let Some(kept) = buf
                .class_entries(class)
                .iter()
                .find(|e| (e.clean_posterior, e.sample.id) < (p, *id))
            {
                return Some(format!(
                    "evicted {id} (p {p}) while keeping {} (p {})",
                    kept.sample.id, kept.clean_posterior
                ));
            }
        }
    }
    None
}

#[test]
fn a9_buffer_invariants_under_fuzz() {
    let mut failures = Vec::new();
    for (mode, seed) in [(AdmissionMode::Bernoulli, 1), (AdmissionMode::TopK, 2)] {
        if let Some(f) = fuzz_purified(mode, seed) {
            failures.push(f);
        }
    }
    let (n, cap, trials) = (100usize, 10usize, 10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(0xA9);
    let mut hits = vec![0usize; n];
    for _ in 0..trials {
        let mut r = ReservoirBuffer::new(cap);
        for i in 0..n {
            r.update(entry(i as u64, 0, 1.0).sample, &mut rng);
        }
        for s in r.items() {
            hits[s.id as usize] += 1;
        }
    }
    let freq: Vec<f64> = hits.iter().map(|h| *h as f64 / trials as f64).collect();
    let worst = freq.iter().fold(0.0f64, |a, f| a.max((f - 0.1).abs()));
    verdict(
        "A9",
        failures.is_empty() && worst <= 0.01,
        format!("purified fuzz violations {failures:?}, max reservoir retention deviation {worst:.4}"),
    );
}
