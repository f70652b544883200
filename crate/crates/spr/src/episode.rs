//! Episode directories.
//!
//! `stream.spre` holds the stream followed by the test set, `truth.tsv`
//! says which split and task each id belongs to, and `episode.toml` echoes
//! the spec that produced them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use spr_core::{Dataset, Episode, EpisodeSpec, Sample};

use crate::config::to_toml;
use crate::error::{CliError, Result};
use crate::format::{load_embeddings, save_embeddings};

pub const STREAM_FILE: &str = "stream.spre";
pub const TRUTH_FILE: &str = "truth.tsv";
pub const SPEC_FILE: &str = "episode.toml";

const TRUTH_HEADER: &str = "id\tsplit\ttask_id\ttrue_label\tnoisy";

pub fn write_episode(dir: &Path, spec: &EpisodeSpec, episode: &Episode) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let samples: Vec<Sample> = episode.stream.iter().chain(&episode.test).cloned().collect();
    let data = Dataset {
        samples,
        num_classes: episode.num_classes,
        feature_dim: episode.feature_dim,
    };
    save_embeddings(&dir.join(STREAM_FILE), &data)?;

    let mut truth = String::from(TRUTH_HEADER);
    truth.push('\n');
    for (split, samples) in [("stream", &episode.stream), ("test", &episode.test)] {
        for s in samples {
            let label = s.true_label.map_or_else(|| "-".to_string(), |t| t.to_string());
            let noisy = match s.is_noisy() {
                Some(true) => "1",
                Some(false) => "0",
                None => "-",
            };
            writeln!(truth, "{}\t{split}\t{}\t{label}\t{noisy}", s.id, s.task_id).unwrap();
        }
    }
    let path = dir.join(TRUTH_FILE);
    fs::write(&path, truth).map_err(|e| CliError::io(&path, e))?;

    let path = dir.join(SPEC_FILE);
    fs::write(&path, to_toml(spec)).map_err(|e| CliError::io(&path, e))
}

struct TruthRow {
    test: bool,
    task_id: usize,
    true_label: Option<usize>,
}

fn parse_truth(path: &Path, text: &str) -> Result<BTreeMap<u64, TruthRow>> {
    let bad = |line: usize, msg: String| CliError::config(path, format!("line {line}: {msg}"));
    let mut lines = text.lines();
    if lines.next() != Some(TRUTH_HEADER) {
        return Err(bad(1, format!("expected header `{TRUTH_HEADER}`")));
    }
    let mut rows = BTreeMap::new();
    for (i, line) in lines.enumerate() {
        let n = i + 2;
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad(n, format!("{} columns, expected 5", cols.len())));
        }
        let id: u64 = cols[0].parse().map_err(|e| bad(n, format!("id: {e}")))?;
        let test = match cols[1] {
            "stream" => false,
            "test" => true,
            other => return Err(bad(n, format!("unknown split `{other}`"))),
        };
        let task_id = cols[2].parse().map_err(|e| bad(n, format!("task_id: {e}")))?;
        let true_label = match cols[3] {
            "-" => None,
            v => Some(v.parse().map_err(|e| bad(n, format!("true_label: {e}")))?),
        };
        if rows
            .insert(
                id,
                TruthRow {
                    test,
                    task_id,
                    true_label,
                },
            )
            .is_some()
        {
            return Err(bad(n, format!("duplicate id {id}")));
        }
    }
    Ok(rows)
}

/// Loads an episode directory. Task class lists are rebuilt from the data
/// and sorted within each task.
pub fn read_episode(dir: &Path) -> Result<Episode> {
    let stream_path = dir.join(STREAM_FILE);
    let data = load_embeddings(&stream_path)?;
    let truth_path = dir.join(TRUTH_FILE);
    let text = fs::read_to_string(&truth_path).map_err(|e| CliError::io(&truth_path, e))?;
    let rows = parse_truth(&truth_path, &text)?;
    if rows.len() != data.samples.len() {
        return Err(CliError::config(
            &truth_path,
            format!("{} rows for {} samples", rows.len(), data.samples.len()),
        ));
    }

    let mut stream = Vec::new();
    let mut test = Vec::new();
    let mut classes: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for mut s in data.samples {
        let row = rows
            .get(&s.id)
            .ok_or_else(|| CliError::config(&truth_path, format!("no row for id {}", s.id)))?;
        if row.true_label != s.true_label {
            return Err(CliError::config(
                &truth_path,
                format!("id {}: true label disagrees with {STREAM_FILE}", s.id),
            ));
        }
        s.task_id = row.task_id;
        let set = classes.entry(row.task_id).or_default();
        if row.test {
            set.extend(s.true_label);
            test.push(s);
        } else {
            set.insert(s.observed_label);
            stream.push(s);
        }
    }
    let num_tasks = classes.keys().next_back().map_or(0, |t| t + 1);
    if classes.len() != num_tasks {
        return Err(CliError::config(&truth_path, "task ids are not contiguous from 0"));
    }
    Ok(Episode {
        stream,
        test,
        num_classes: data.num_classes,
        feature_dim: data.feature_dim,
        task_classes: classes.into_values().map(|s| s.into_iter().collect()).collect(),
    })
}
