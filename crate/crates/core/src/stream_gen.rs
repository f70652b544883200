//! Noisy-labeled continual-learning episodes.
//!
//! A dataset is a flat list of labeled feature vectors. Label noise is
//! injected on a fixed fraction of it, then classes are grouped into tasks
//! and the samples are streamed task by task in a shuffled order.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::rng::{derive_rng, stream};
use crate::{Error, Result};

/// One stream element.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sample {
    /// Unique id. Inside an episode stream this is the arrival index.
    pub id: u64,
    pub features: Vec<f64>,
    pub observed_label: usize,
    /// Ground truth, for evaluation only. `None` when unknown or stripped.
    pub true_label: Option<usize>,
    pub task_id: usize,
}

impl Sample {
    /// A copy with the ground truth and task removed, as seen by the learner.
    pub fn observed(&self) -> Sample {
        Sample {
            id: self.id,
            features: self.features.clone(),
            observed_label: self.observed_label,
            true_label: None,
            task_id: 0,
        }
    }

    pub fn is_noisy(&self) -> Option<bool> {
        self.true_label.map(|t| t != self.observed_label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NoiseKind {
    Symmetric,
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EpisodeSpec {
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub noise_kind: NoiseKind,
    pub noise_rate: f64,
    /// Unordered class pairs; asymmetric noise only.
    #[cfg_attr(feature = "serde", serde(default))]
    pub pair_map: Vec<(usize, usize)>,
    pub seed: u64,
    pub feature_dim: usize,
    pub cluster_separation: f64,
}

impl EpisodeSpec {
    /// Five two-class tasks on 16-dimensional clusters, 200 samples per class.
    pub fn reference(noise_rate: f64, seed: u64) -> Self {
        Self {
            num_tasks: 5,
            classes_per_task: 2,
            samples_per_class: 200,
            noise_kind: NoiseKind::Symmetric,
            noise_rate,
            pair_map: Vec::new(),
            seed,
            feature_dim: 16,
            cluster_separation: 4.0,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 {
            return Err(Error::param("num_tasks", "must be at least 1"));
        }
        if self.classes_per_task == 0 {
            return Err(Error::param("classes_per_task", "must be at least 1"));
        }
        if self.num_classes() < 2 {
            return Err(Error::param("classes_per_task", "episode needs at least 2 classes"));
        }
        if self.samples_per_class == 0 {
            return Err(Error::param("samples_per_class", "must be at least 1"));
        }
        check_rate(self.noise_rate)?;
        if self.feature_dim < 2 {
            return Err(Error::param("feature_dim", "must be at least 2"));
        }
        if !(self.cluster_separation.is_finite() && self.cluster_separation > 0.0) {
            return Err(Error::param("cluster_separation", "must be a positive number"));
        }
        if self.noise_kind == NoiseKind::Asymmetric {
            pair_lookup(&self.pair_map, self.num_classes())?;
            if !self.classes_per_task.is_multiple_of(2) {
                return Err(Error::Config(
                    "asymmetric episodes group class pairs into tasks; classes_per_task must be even".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub feature_dim: usize,
}

/// A streamed episode plus its clean held-out test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub stream: Vec<Sample>,
    pub test: Vec<Sample>,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Classes of each task, in stream order.
    pub task_classes: Vec<Vec<usize>>,
}

impl Episode {
    pub fn num_tasks(&self) -> usize {
        self.task_classes.len()
    }

    /// Stream indices at which each task ends (exclusive), in task order.
    pub fn task_ends(&self) -> Vec<usize> {
        let mut ends = Vec::with_capacity(self.num_tasks());
        for (i, pair) in self.stream.windows(2).enumerate() {
            if pair[0].task_id != pair[1].task_id {
                ends.push(i + 1);
            }
        }
        if !self.stream.is_empty() {
            ends.push(self.stream.len());
        }
        ends
    }

    /// Fraction of stream samples whose observed label differs from the truth.
    pub fn noise_fraction(&self) -> f64 {
        if self.stream.is_empty() {
            return 0.0;
        }
        let noisy = self.stream.iter().filter(|s| s.is_noisy() == Some(true)).count();
        noisy as f64 / self.stream.len() as f64
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::param("noise_rate", format!("{rate} is outside [0, 1]")));
    }
    Ok(())
}

/// Number of samples to corrupt: floor(rate * n), robust to `0.2 * 1000`
/// landing a hair below an integer.
pub fn corrupted_count(rate: f64, n: usize) -> usize {
    let raw = rate * n as f64;
    let rounded = libm::round(raw);
    let count = if (raw - rounded).abs() < 1e-9 {
        rounded
    } else {
        libm::floor(raw)
    };
    (count as usize).min(n)
}

/// Cluster centers with all pairwise distances at least `separation`.
///
/// Centers are drawn from an isotropic Gaussian whose scale grows whenever
/// rejection keeps failing, so the loop terminates for any class count.
pub fn synth_centers(num_classes: usize, dim: usize, separation: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    if num_classes < 2 {
        return Err(Error::param("num_classes", "must be at least 2"));
    }
    if dim < 2 {
        return Err(Error::param("dim", "must be at least 2"));
    }
    if !(separation.is_finite() && separation > 0.0) {
        return Err(Error::param("separation", "must be a positive number"));
    }
    let mut rng = derive_rng(seed, stream::CENTERS);
    // Expected pairwise distance of N(0, s^2 I) draws is about s * sqrt(2 dim).
    let mut scale = 1.25 * separation / libm::sqrt(2.0 * dim as f64);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    let mut failures = 0usize;
    while centers.len() < num_classes {
        let candidate: Vec<f64> = (0..dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            })
            .collect();
        if centers.iter().all(|c| euclidean(c, &candidate) >= separation) {
            centers.push(candidate);
            failures = 0;
        } else {
            failures += 1;
            if failures.is_multiple_of(64) {
                scale *= 1.1;
            }
        }
    }
    Ok(centers)
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Isotropic unit-variance Gaussian clusters, `per_class` samples each,
/// emitted class by class with ids `0..num_classes * per_class`.
pub fn synth_clusters(num_classes: usize, dim: usize, separation: f64, per_class: usize, seed: u64) -> Result<Dataset> {
    if per_class == 0 {
        return Err(Error::param("per_class", "must be at least 1"));
    }
    let centers = synth_centers(num_classes, dim, separation, seed)?;
    let mut rng = derive_rng(seed, stream::SAMPLES);
    let mut samples = Vec::with_capacity(num_classes * per_class);
    for (label, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            let features = center
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + z
                })
                .collect();
            samples.push(Sample {
                id: samples.len() as u64,
                features,
                observed_label: label,
                true_label: Some(label),
                task_id: 0,
            });
        }
    }
    Ok(Dataset {
        samples,
        num_classes,
        feature_dim: dim,
    })
}

fn clean_label(s: &Sample) -> usize {
    s.true_label.unwrap_or(s.observed_label)
}

/// Reassigns exactly `floor(rate * N)` uniformly chosen samples to a label
/// drawn uniformly from the other classes.
pub fn inject_symmetric_noise(mut dataset: Dataset, rate: f64, seed: u64) -> Result<Dataset> {
    check_rate(rate)?;
    if dataset.num_classes < 2 {
        return Err(Error::param("num_classes", "symmetric noise needs at least 2 classes"));
    }
    let n = dataset.samples.len();
    let count = corrupted_count(rate, n);
    let mut rng = derive_rng(seed, stream::NOISE);
    let chosen = rand::seq::index::sample(&mut rng, n, count);
    for idx in chosen.iter() {
        let s = &mut dataset.samples[idx];
        let truth = clean_label(s);
        let mut label = rng.random_range(0..dataset.num_classes - 1);
        if label >= truth {
            label += 1;
        }
        s.true_label = Some(truth);
        s.observed_label = label;
    }
    Ok(dataset)
}

/// Class -> partner lookup for an involutive pair map.
pub fn pair_lookup(pairs: &[(usize, usize)], num_classes: usize) -> Result<Vec<usize>> {
    let mut partner: Vec<Option<usize>> = vec![None; num_classes];
    for &(a, b) in pairs {
        if a >= num_classes || b >= num_classes {
            return Err(Error::Config(format!(
                "pair ({a}, {b}) references a class outside 0..{num_classes}"
            )));
        }
        if a == b {
            return Err(Error::Config(format!("pair ({a}, {b}) maps a class to itself")));
        }
        for (x, y) in [(a, b), (b, a)] {
            match partner[x] {
                None => partner[x] = Some(y),
                Some(p) if p == y => {}
                Some(p) => {
                    return Err(Error::Config(format!(
                        "class {x} is paired with both {p} and {y}; pair map must be an involution"
                    )))
                }
            }
        }
    }
    partner
        .iter()
        .enumerate()
        .map(|(class, p)| p.ok_or_else(|| Error::Config(format!("class {class} is missing from pair_map"))))
        .collect()
}

/// Replaces the label of exactly `floor(rate * N)` uniformly chosen samples
/// with the partner of their true class.
pub fn inject_asymmetric_noise(
    mut dataset: Dataset,
    rate: f64,
    pairs: &[(usize, usize)],
    seed: u64,
) -> Result<Dataset> {
    check_rate(rate)?;
    let partner = pair_lookup(pairs, dataset.num_classes)?;
    let n = dataset.samples.len();
    let count = corrupted_count(rate, n);
    let mut rng = derive_rng(seed, stream::NOISE);
    for idx in rand::seq::index::sample(&mut rng, n, count).iter() {
        let s = &mut dataset.samples[idx];
        let truth = clean_label(s);
        s.true_label = Some(truth);
        s.observed_label = partner[truth];
    }
    Ok(dataset)
}

/// Splits off `per_class` samples of every class (by true label) as a test
/// set. Returns `(remaining, held_out)`, each in original order.
pub fn split_holdout(dataset: Dataset, per_class: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in dataset.samples.iter().enumerate() {
        by_class.entry(clean_label(s)).or_default().push(i);
    }
    let mut rng = derive_rng(seed, stream::HOLDOUT);
    let mut held = vec![false; dataset.samples.len()];
    for (class, idx) in by_class.iter_mut() {
        if idx.len() <= per_class {
            return Err(Error::param(
                "holdout",
                format!("class {class} has {} samples, cannot hold out {per_class}", idx.len()),
            ));
        }
        idx.shuffle(&mut rng);
        for &i in idx.iter().take(per_class) {
            held[i] = true;
        }
    }
    let Dataset {
        samples,
        num_classes,
        feature_dim,
    } = dataset;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, h) in samples.into_iter().zip(held) {
        if h {
            test.push(s);
        } else {
            train.push(s);
        }
    }
    Ok((
        Dataset {
            samples: train,
            num_classes,
            feature_dim,
        },
        Dataset {
            samples: test,
            num_classes,
            feature_dim,
        },
    ))
}

/// Assigns classes to tasks without replacement.
///
/// Symmetric episodes use a seeded permutation of the classes; asymmetric
/// ones keep each noise pair inside one task.
pub fn assign_tasks(spec: &EpisodeSpec) -> Result<Vec<Vec<usize>>> {
    let mut rng = derive_rng(spec.seed, stream::TASKS);
    let num_classes = spec.num_classes();
    let units: Vec<Vec<usize>> = match spec.noise_kind {
        NoiseKind::Symmetric => (0..num_classes).map(|c| vec![c]).collect(),
        NoiseKind::Asymmetric => {
            let partner = pair_lookup(&spec.pair_map, num_classes)?;
            (0..num_classes)
                .filter(|&c| c < partner[c])
                .map(|c| vec![c, partner[c]])
                .collect()
        }
    };
    let mut units = units;
    units.shuffle(&mut rng);
    let flat: Vec<usize> = units.into_iter().flatten().collect();
    Ok(flat.chunks(spec.classes_per_task).map(<[usize]>::to_vec).collect())
}

/// Orders the dataset task by task. A sample belongs to the task of its
/// observed label; within a task the order is a seeded shuffle. Ids are
/// reassigned to arrival indices.
pub fn build_episode(spec: &EpisodeSpec, dataset: Dataset) -> Result<Vec<Sample>> {
    spec.validate()?;
    if dataset.num_classes != spec.num_classes() {
        return Err(Error::Config(format!(
            "episode expects {} classes ({} tasks x {}), dataset has {}",
            spec.num_classes(),
            spec.num_tasks,
            spec.classes_per_task,
            dataset.num_classes
        )));
    }
    let tasks = assign_tasks(spec)?;
    let mut task_of = vec![0usize; spec.num_classes()];
    for (t, classes) in tasks.iter().enumerate() {
        for &c in classes {
            task_of[c] = t;
        }
    }
    let mut per_task: Vec<Vec<Sample>> = vec![Vec::new(); tasks.len()];
    for mut s in dataset.samples {
        if s.observed_label >= spec.num_classes() {
            return Err(Error::Config(format!(
                "sample {} has label {} outside 0..{}",
                s.id,
                s.observed_label,
                spec.num_classes()
            )));
        }
        s.task_id = task_of[s.observed_label];
        per_task[s.task_id].push(s);
    }
    let mut rng = derive_rng(spec.seed, stream::ORDER);
    let mut stream = Vec::new();
    for mut chunk in per_task {
        chunk.shuffle(&mut rng);
        stream.extend(chunk);
    }
    for (i, s) in stream.iter_mut().enumerate() {
        s.id = i as u64;
    }
    Ok(stream)
}

/// Full synthetic episode: clusters, a clean 20% test split, noise on the
/// remainder, then task ordering.
///
/// `samples_per_class` counts stream samples; a quarter as many extra
/// samples per class are generated for the test set.
pub fn generate_episode(spec: &EpisodeSpec) -> Result<Episode> {
    spec.validate()?;
    let holdout = (spec.samples_per_class / 4).max(1);
    let dataset = synth_clusters(
        spec.num_classes(),
        spec.feature_dim,
        spec.cluster_separation,
        spec.samples_per_class + holdout,
        spec.seed,
    )?;
    episode_from_dataset(spec, dataset, holdout)
}

/// Episode from an existing clean dataset, holding out `holdout` samples per
/// class for testing.
pub fn episode_from_dataset(spec: &EpisodeSpec, dataset: Dataset, holdout: usize) -> Result<Episode> {
    spec.validate()?;
    let (train, test) = split_holdout(dataset, holdout, spec.seed)?;
    let noisy = match spec.noise_kind {
        NoiseKind::Symmetric => inject_symmetric_noise(train, spec.noise_rate, spec.seed)?,
        NoiseKind::Asymmetric => inject_asymmetric_noise(train, spec.noise_rate, &spec.pair_map, spec.seed)?,
    };
    let num_classes = noisy.num_classes;
    let feature_dim = noisy.feature_dim;
    let stream = build_episode(spec, noisy)?;
    let offset = stream.len() as u64;
    let task_classes = assign_tasks(spec)?;
    let mut task_of = vec![0usize; num_classes];
    for (t, classes) in task_classes.iter().enumerate() {
        for &c in classes {
            task_of[c] = t;
        }
    }
    let test = test
        .samples
        .into_iter()
        .enumerate()
        .map(|(i, mut s)| {
            s.id = offset + i as u64;
            s.task_id = task_of[clean_label(&s)];
            s
        })
        .collect();
    Ok(Episode {
        stream,
        test,
        num_classes,
        feature_dim,
        task_classes,
    })
}
