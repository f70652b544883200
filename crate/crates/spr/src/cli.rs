//! Subcommands. Seeds resolve as `--seed`, then the config file, then the
//! built-in default.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use spr_core::pipeline::{run_crs_baseline, run_spr};
use spr_core::stream_gen::generate_episode;
use spr_core::{Dataset, Episode, FilterVariant, PurifiedEntry, Sample, SprConfig};

use crate::config::{load_episode_spec, load_run_config, to_toml, MAX_SEED};
use crate::episode::{read_episode, write_episode};
use crate::error::{CliError, Result};
use crate::format::{encode_snapshot, load_snapshot, save_embeddings, save_layers, write_file};
use crate::report::{
    compare_kv, compare_tsv, fits_tsv, metrics_tsv, parse_kv, push_config, push_metrics, KvWriter, SeedPair,
    COMPARE_KV, COMPARE_TSV, CONFIG_ECHO, FITS_TSV, METRICS_KV, METRICS_TSV,
};

pub const PURIFIED_SNAPSHOT: &str = "purified.sprb";
pub const RESERVOIR_FILE: &str = "reservoir.spre";
pub const BASE_WEIGHTS: &str = "base.sprw";
pub const CLASSIFIER_WEIGHTS: &str = "classifier.sprw";

#[derive(Debug, Parser)]
#[command(name = "spr", version, about = "Purify noisy-labeled data streams online")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic episode directory from an episode config.
    Gen {
        /// Episode config (TOML).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the purification pipeline on an episode.
    Run {
        #[command(flatten)]
        common: RunArgs,
        #[arg(long, value_enum)]
        filter: Option<FilterArg>,
        /// Ensemble size of the stochastic filter.
        #[arg(long)]
        emax: Option<usize>,
    },
    /// Run the reservoir replay baseline on an episode.
    Baseline {
        #[command(flatten)]
        common: RunArgs,
    },
    /// Run both filter variants over several seeds and compare them.
    CompareFilters {
        /// Run config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        episode: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated run seeds, at least two.
        #[arg(long, value_delimiter = ',', required = true)]
        seeds: Vec<u64>,
        #[arg(long)]
        emax: Option<usize>,
    },
    /// Print a summary of a run output directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run config (TOML); defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Episode directory written by `gen`.
    #[arg(long)]
    pub episode: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum FilterArg {
    Stochastic,
    NonStochastic,
}

impl From<FilterArg> for FilterVariant {
    fn from(f: FilterArg) -> Self {
        match f {
            FilterArg::Stochastic => FilterVariant::Stochastic,
            FilterArg::NonStochastic => FilterVariant::NonStochastic,
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out, seed } => cmd_gen(&config, &out, seed),
        Command::Run { common, filter, emax } => {
            let mut cfg = run_config(&common)?;
            if let Some(f) = filter {
                cfg.filter = f.into();
            }
            if let Some(e) = emax {
                cfg.e_max = e;
            }
            cmd_run(&cfg, &common.episode, &common.out)
        }
        Command::Baseline { common } => cmd_baseline(&run_config(&common)?, &common.episode, &common.out),
        Command::CompareFilters {
            config,
            episode,
            out,
            seeds,
            emax,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(e) = emax {
                cfg.e_max = e;
            }
            cmd_compare_filters(&cfg, &episode, &out, &seeds)
        }
        Command::Report { out } => {
            print!("{}", cmd_report(&out)?);
            Ok(())
        }
    }
}

fn check_seed(seed: u64) -> Result<()> {
    if seed > MAX_SEED {
        return Err(CliError::Usage(format!("--seed {seed} exceeds {MAX_SEED}")));
    }
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<SprConfig> {
    path.map_or_else(|| Ok(SprConfig::default()), load_run_config)
}

fn run_config(args: &RunArgs) -> Result<SprConfig> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        check_seed(seed)?;
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    write_file(&dir.join(name), text.as_bytes())
}

pub fn cmd_gen(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec = load_episode_spec(config)?;
    if let Some(seed) = seed {
        check_seed(seed)?;
        spec.seed = seed;
    }
    let episode = generate_episode(&spec).map_err(CliError::from_core)?;
    write_episode(out, &spec, &episode)?;
    info!(
        "wrote {} stream and {} test samples to {}",
        episode.stream.len(),
        episode.test.len(),
        out.display()
    );
    Ok(())
}

/// Re-attaches ground truth, which the learner never sees, for export.
fn with_truth(samples: impl Iterator<Item = Sample>, episode: &Episode) -> Vec<Sample> {
    let truth: BTreeMap<u64, (Option<usize>, usize)> = episode
        .stream
        .iter()
        .map(|s| (s.id, (s.true_label, s.task_id)))
        .collect();
    samples
        .map(|mut s| {
            if let Some(&(t, task)) = truth.get(&s.id) {
                s.true_label = t;
                s.task_id = task;
            }
            s
        })
        .collect()
}

pub fn cmd_run(cfg: &SprConfig, episode_dir: &Path, out: &Path) -> Result<()> {
    let episode = read_episode(episode_dir)?;
    info!("running {} filter, seed {}", cfg.filter.name(), cfg.seed);
    let run = run_spr(&episode, cfg).map_err(CliError::from_core)?;
    create_dir(out)?;

    let mut kv = KvWriter::default();
    push_metrics(&mut kv, &run.metrics);
    push_config(&mut kv, "spr", cfg);
    kv.push("run.cycles", run.cycles)
        .push("run.noisy_presented", run.noisy_presented)
        .push("run.noisy_admitted", run.noisy_admitted)
        .push("run.buffer_size", run.purified.len());
    write_text(out, METRICS_KV, &kv.finish())?;
    write_text(out, METRICS_TSV, &metrics_tsv(&run.metrics))?;
    write_text(out, CONFIG_ECHO, &to_toml(cfg))?;
    write_text(out, FITS_TSV, &fits_tsv(&run.diagnostics))?;

    let samples = with_truth(run.purified.entries().map(|e| e.sample.clone()), &episode);
    let entries: Vec<PurifiedEntry> = samples
        .into_iter()
        .zip(run.purified.entries())
        .map(|(sample, e)| PurifiedEntry {
            sample,
            clean_posterior: e.clean_posterior,
        })
        .collect();
    let path = out.join(PURIFIED_SNAPSHOT);
    let bytes =
        encode_snapshot(&entries, episode.num_classes, episode.feature_dim).map_err(|source| CliError::Format {
            path: path.clone(),
            source,
        })?;
    write_file(&path, &bytes)?;
    save_layers(&out.join(BASE_WEIGHTS), run.base.layers())?;
    if let Some(clf) = &run.classifier {
        save_layers(&out.join(CLASSIFIER_WEIGHTS), clf.layers())?;
    }
    info!("overall accuracy {:.4}", run.metrics.overall_accuracy);
    Ok(())
}

pub fn cmd_baseline(cfg: &SprConfig, episode_dir: &Path, out: &Path) -> Result<()> {
    let episode = read_episode(episode_dir)?;
    info!("running reservoir baseline, seed {}", cfg.seed);
    let run = run_crs_baseline(&episode, cfg).map_err(CliError::from_core)?;
    create_dir(out)?;

    let mut kv = KvWriter::default();
    push_metrics(&mut kv, &run.metrics);
    push_config(&mut kv, "crs", cfg);
    kv.push("run.buffer_size", run.buffer.items().len())
        .push("run.seen", run.buffer.seen_count());
    write_text(out, METRICS_KV, &kv.finish())?;
    write_text(out, METRICS_TSV, &metrics_tsv(&run.metrics))?;
    write_text(out, CONFIG_ECHO, &to_toml(cfg))?;
    let data = Dataset {
        samples: with_truth(run.buffer.items().iter().cloned(), &episode),
        num_classes: episode.num_classes,
        feature_dim: episode.feature_dim,
    };
    save_embeddings(&out.join(RESERVOIR_FILE), &data)?;
    save_layers(&out.join(CLASSIFIER_WEIGHTS), run.classifier.layers())?;
    info!("overall accuracy {:.4}", run.metrics.overall_accuracy);
    Ok(())
}

/// Both variants read the same loaded episode. Seeds run on separate
/// threads and results are merged in the order given.
pub fn cmd_compare_filters(cfg: &SprConfig, episode_dir: &Path, out: &Path, seeds: &[u64]) -> Result<()> {
    if seeds.len() < 2 {
        return Err(CliError::Usage("--seeds needs at least two seeds".into()));
    }
    for &s in seeds {
        check_seed(s)?;
    }
    let episode = read_episode(episode_dir)?;
    let run = |seed: u64, filter: FilterVariant| {
        let c = SprConfig {
            seed,
            filter,
            ..cfg.clone()
        };
        run_spr(&episode, &c).map(|r| r.metrics)
    };
    let results: Vec<_> = thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                scope.spawn(move || {
                    let st = run(seed, FilterVariant::Stochastic)?;
                    let ns = run(seed, FilterVariant::NonStochastic)?;
                    Ok(SeedPair {
                        seed,
                        stochastic: st,
                        non_stochastic: ns,
                    })
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("comparison worker panicked"))
            .collect()
    });
    let pairs = results
        .into_iter()
        .collect::<std::result::Result<Vec<SeedPair>, spr_core::Error>>()
        .map_err(CliError::from_core)?;
    create_dir(out)?;
    write_text(out, COMPARE_TSV, &compare_tsv(&pairs))?;
    write_text(out, COMPARE_KV, &compare_kv(&pairs, cfg))?;
    write_text(out, CONFIG_ECHO, &to_toml(cfg))?;
    Ok(())
}

/// Human-readable summary of whatever reports `dir` holds.
pub fn cmd_report(dir: &Path) -> Result<String> {
    let mut text = String::new();
    let mut found = false;
    for name in [METRICS_KV, COMPARE_KV] {
        let path = dir.join(name);
        if !path.exists() {
            continue;
        }
        found = true;
        let raw = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        let kv = parse_kv(&raw).map_err(|m| CliError::config(&path, m))?;
        let width = kv.keys().map(String::len).max().unwrap_or(0);
        text.push_str(&format!("{name}\n"));
        for (k, v) in kv {
            if k == "per_task_accuracy_curve" {
                text.push_str(&format!("  {k}\n"));
                for (b, row) in v.split(';').enumerate() {
                    text.push_str(&format!("    after task {b}: {}\n", row.replace(',', " ")));
                }
            } else {
                text.push_str(&format!("  {k:width$}  {v}\n"));
            }
        }
    }
    let path = dir.join(PURIFIED_SNAPSHOT);
    if path.exists() {
        found = true;
        let snap = load_snapshot(&path)?;
        let mut per_class: BTreeMap<usize, (usize, usize, f64)> = BTreeMap::new();
        for e in &snap.entries {
            let c = per_class.entry(e.sample.observed_label).or_default();
            c.0 += 1;
            c.1 += usize::from(e.sample.is_noisy() == Some(true));
            c.2 += e.clean_posterior;
        }
        text.push_str(&format!("{PURIFIED_SNAPSHOT}: {} entries\n", snap.entries.len()));
        text.push_str("  class  count  noisy  mean_posterior\n");
        for (class, (n, noisy, p)) in per_class {
            text.push_str(&format!("  {class:>5}  {n:>5}  {noisy:>5}  {:.4}\n", p / n as f64));
        }
    }
    if !found {
        return Err(CliError::Missing(dir.join(METRICS_KV)));
    }
    Ok(text)
}
