//! Online driver: stream -> delayed buffer -> clean-sample filter ->
//! purified buffer -> contrastive replay, with finetune-and-classify
//! evaluation at task boundaries, plus a reservoir-replay baseline.
//!
//! Task boundaries and true labels are evaluation metadata only. Samples are
//! stripped to `(id, features, observed_label)` before they reach a buffer;
//! metrics re-join ground truth by id.

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::IndexedRandom;

use crate::bmm::{non_stochastic_clean_posterior, stochastic_clean_posterior, EmConfig, FitDiagnostic};
use crate::buffers::{AdmissionMode, DelayedBuffer, PurifiedBuffer, PurifiedEntry, PushOutcome, ReservoirBuffer};
use crate::centrality::{CentralityConfig, ClassFeatureSet};
use crate::encoder::{
    finetune_classifier, train_self_supervised, Classifier, EncoderDims, EncoderParams, FinetuneConfig,
    SupervisedLearner, TrainConfig,
};
use crate::rng::{derive_rng, derive_seed, stream};
use crate::stream_gen::{Episode, Sample};
use crate::{Error, Result};

/// Posterior assigned to every sample of a class whose scores carry no signal.
pub const UNDECIDED_POSTERIOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FilterVariant {
    /// Monte Carlo ensemble over Bernoulli graphs.
    #[default]
    Stochastic,
    /// Single fit on the weighted cosine graph.
    NonStochastic,
}

impl FilterVariant {
    pub fn name(self) -> &'static str {
        match self {
            FilterVariant::Stochastic => "stochastic",
            FilterVariant::NonStochastic => "non_stochastic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stochastic" => Some(FilterVariant::Stochastic),
            "non_stochastic" => Some(FilterVariant::NonStochastic),
            _ => None,
        }
    }
}

/// Reservoir-replay baseline settings.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CrsConfig {
    /// Incoming samples per update.
    pub stream_batch: usize,
    /// Replayed samples added to each update.
    pub replay_batch: usize,
    pub steps_per_batch: usize,
    pub learning_rate: f64,
}

impl Default for CrsConfig {
    fn default() -> Self {
        Self {
            stream_batch: 10,
            replay_batch: 10,
            steps_per_batch: 3,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SprConfig {
    pub delayed_capacity: usize,
    pub purified_capacity: usize,
    pub e_max: usize,
    pub filter: FilterVariant,
    pub admission: AdmissionMode,
    /// Replay on D and P together; when off the base network replays P only.
    pub replay_includes_delayed: bool,
    /// Hidden sizes; the input size always comes from the episode.
    pub dims: EncoderDims,
    pub base: TrainConfig,
    pub expert: TrainConfig,
    pub finetune: FinetuneConfig,
    pub centrality: CentralityConfig,
    pub em: EmConfig,
    pub crs: CrsConfig,
    /// Run seed. Every per-phase seed inside the nested configs is derived
    /// from it and the nested `seed` fields are ignored.
    pub seed: u64,
}

impl Default for SprConfig {
    fn default() -> Self {
        Self {
            delayed_capacity: 300,
            purified_capacity: 300,
            e_max: 5,
            filter: FilterVariant::Stochastic,
            admission: AdmissionMode::Bernoulli,
            replay_includes_delayed: true,
            dims: EncoderDims::default(),
            base: TrainConfig {
                epochs: 15,
                batch_delayed: 64,
                batch_purified: 64,
                learning_rate: 1e-3,
                aug_noise: 1.0,
                ..TrainConfig::default()
            },
            expert: TrainConfig {
                epochs: 30,
                batch_delayed: 64,
                batch_purified: 0,
                learning_rate: 1e-3,
                aug_noise: 1.0,
                ..TrainConfig::default()
            },
            finetune: FinetuneConfig::default(),
            centrality: CentralityConfig::default(),
            em: EmConfig::default(),
            crs: CrsConfig::default(),
            seed: 1,
        }
    }
}

impl SprConfig {
    pub fn validate(&self, classes_per_task: usize) -> Result<()> {
        if self.delayed_capacity == 0 {
            return Err(Error::param("delayed_capacity", "must be at least 1"));
        }
        if self.purified_capacity < classes_per_task.max(1) {
            return Err(Error::param(
                "purified_capacity",
                format!("must hold at least one sample per class of a task ({classes_per_task})"),
            ));
        }
        if self.delayed_capacity < classes_per_task {
            return Err(Error::param(
                "delayed_capacity",
                format!("must be at least the classes per task ({classes_per_task})"),
            ));
        }
        if self.e_max == 0 {
            return Err(Error::param("e_max", "must be at least 1"));
        }
        self.base.validate()?;
        self.expert.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    /// Final accuracy on the whole clean test set.
    pub overall_accuracy: f64,
    /// Row `b`: accuracy on each task's test classes after task `b`.
    pub per_task_accuracy_curve: Vec<Vec<f64>>,
    /// Share of final buffer entries whose observed label is wrong.
    pub purified_noise_fraction: f64,
    /// Share of noisy samples shown to the filter that were kept out of the
    /// buffer; `None` when no noisy sample was ever presented.
    pub filtered_noise_percentage: Option<f64>,
    /// Accuracy on the first task after each boundary.
    pub first_task_curve: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassTally {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub per_class: Vec<ClassTally>,
}

/// Accuracy against the true labels of `test`.
pub fn evaluate(classifier: &Classifier, test: &[Sample]) -> Result<Evaluation> {
    if test.is_empty() {
        return Err(Error::param("test", "test set is empty"));
    }
    let mut tallies: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    let mut correct = 0;
    for s in test {
        let truth = s
            .true_label
            .ok_or_else(|| Error::ContractViolation(format!("test sample {} has no true label", s.id)))?;
        let hit = classifier.classify(&s.features)?.label == truth;
        let t = tallies.entry(truth).or_default();
        t.1 += 1;
        if hit {
            t.0 += 1;
            correct += 1;
        }
    }
    Ok(Evaluation {
        accuracy: correct as f64 / test.len() as f64,
        per_class: tallies
            .into_iter()
            .map(|(class, (correct, total))| ClassTally { class, correct, total })
            .collect(),
    })
}

/// `1 - admitted / presented` over noisy samples; `None` with nothing presented.
pub fn filtered_noise_percentage(noisy_presented: usize, noisy_admitted: usize) -> Option<f64> {
    if noisy_presented == 0 {
        None
    } else {
        Some(1.0 - noisy_admitted as f64 / noisy_presented as f64)
    }
}

/// Per-cycle fit record.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleDiagnostic {
    pub cycle: usize,
    pub fit: FitDiagnostic,
}

#[derive(Debug, Clone)]
pub struct SprRun {
    pub metrics: RunMetrics,
    pub purified: PurifiedBuffer,
    pub base: EncoderParams,
    /// Inference network from the last evaluation, if the buffer was non-empty.
    pub classifier: Option<Classifier>,
    pub diagnostics: Vec<CycleDiagnostic>,
    pub cycles: usize,
    pub noisy_presented: usize,
    pub noisy_admitted: usize,
}

/// Ground truth by id, kept on the evaluator side.
struct Truth {
    labels: BTreeMap<u64, Option<usize>>,
}

impl Truth {
    fn new(stream: &[Sample]) -> Self {
        Self {
            labels: stream.iter().map(|s| (s.id, s.true_label)).collect(),
        }
    }

    fn is_noisy(&self, s: &Sample) -> bool {
        matches!(self.labels.get(&s.id), Some(Some(t)) if *t != s.observed_label)
    }
}

/// Clean posteriors for every sample of the delayed buffer, grouped by
/// observed label. Only features and observed labels are read.
pub fn self_centered_filter(
    expert: &EncoderParams,
    delayed: &[Sample],
    cfg: &SprConfig,
    key: u64,
) -> Result<(Vec<PurifiedEntry>, Vec<FitDiagnostic>)> {
    let mut by_class: BTreeMap<usize, Vec<&Sample>> = BTreeMap::new();
    for s in delayed {
        by_class.entry(s.observed_label).or_default().push(s);
    }
    let mut entries = Vec::with_capacity(delayed.len());
    let mut diagnostics = Vec::new();
    for (class, members) in by_class {
        let features = members
            .iter()
            .map(|s| expert.penultimate(&s.features))
            .collect::<Result<Vec<_>>>()?;
        let fs = ClassFeatureSet::new(class, members.iter().map(|s| s.id).collect(), features)?;
        let outcome = match cfg.filter {
            FilterVariant::Stochastic => {
                stochastic_clean_posterior(&fs, cfg.e_max, &cfg.centrality, &cfg.em, derive_seed(key, class as u64))
            }
            FilterVariant::NonStochastic => non_stochastic_clean_posterior(&fs, &cfg.centrality, &cfg.em),
        };
        let posteriors = match outcome {
            Ok(p) => {
                diagnostics.extend(p.diagnostics);
                p.posteriors
            }
            Err(e) if e.is_degenerate() => {
                log::debug!("class {class}: {e}; admitting with posterior {UNDECIDED_POSTERIOR}");
                vec![UNDECIDED_POSTERIOR; members.len()]
            }
            Err(e) => {
                return Err(Error::Filter {
                    class,
                    source: Box::new(e),
                })
            }
        };
        for (s, p) in members.into_iter().zip(posteriors) {
            entries.push(PurifiedEntry {
                sample: s.clone(),
                clean_posterior: p,
            });
        }
    }
    // Back to arrival order so admission draws follow the stream.
    entries.sort_by_key(|e| e.sample.id);
    Ok((entries, diagnostics))
}

fn features_of(samples: &[Sample]) -> Vec<&[f64]> {
    samples.iter().map(|s| s.features.as_slice()).collect()
}

fn with_seed(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

struct SprState<'a> {
    cfg: &'a SprConfig,
    dims: EncoderDims,
    truth: Truth,
    delayed: DelayedBuffer,
    purified: PurifiedBuffer,
    base: EncoderParams,
    admission_rng: crate::rng::SprRng,
    cycles: usize,
    noisy_presented: usize,
    noisy_admitted: usize,
    diagnostics: Vec<CycleDiagnostic>,
}

impl SprState<'_> {
    fn run_cycle(&mut self) -> Result<()> {
        let cycle = self.cycles;
        let cfg = self.cfg;
        let wrap = |e: Error| Error::Cycle {
            cycle,
            source: Box::new(e),
        };
        let items = self.delayed.items();
        let delayed_x = features_of(items);

        // (a) fresh expert trained on D only
        let expert_init = EncoderParams::init(
            self.dims,
            derive_seed(derive_seed(cfg.seed, stream::EXPERT), 2 * cycle as u64),
        );
        let expert_cfg = with_seed(
            &cfg.expert,
            derive_seed(derive_seed(cfg.seed, stream::EXPERT), 2 * cycle as u64 + 1),
        );
        let expert = train_self_supervised(&expert_init, &delayed_x, &[], &expert_cfg, false).map_err(wrap)?;

        // (b) clean posteriors per class
        let key = derive_seed(derive_seed(cfg.seed, stream::ENSEMBLE), cycle as u64);
        let (candidates, fits) = self_centered_filter(&expert, items, cfg, key).map_err(wrap)?;
        self.diagnostics
            .extend(fits.into_iter().map(|fit| CycleDiagnostic { cycle, fit }));
        self.noisy_presented += items.iter().filter(|s| self.truth.is_noisy(s)).count();
        let noisy_ids: Vec<u64> = items.iter().filter(|s| self.truth.is_noisy(s)).map(|s| s.id).collect();

        // (c) admission
        let report = self.purified.admit(candidates, &mut self.admission_rng).map_err(wrap)?;
        self.noisy_admitted += report
            .retained
            .iter()
            .filter(|id| noisy_ids.binary_search(id).is_ok())
            .count();

        // (d) self-supervised replay of the base network
        let purified_samples: Vec<Sample> = self.purified.entries().map(|e| e.sample.clone()).collect();
        let purified_x = features_of(&purified_samples);
        let base_cfg = with_seed(
            &cfg.base,
            derive_seed(derive_seed(cfg.seed, stream::BASE_TRAIN), cycle as u64),
        );
        let delayed_side: &[&[f64]] = if cfg.replay_includes_delayed { &delayed_x } else { &[] };
        if !delayed_side.is_empty() || !purified_x.is_empty() {
            self.base = train_self_supervised(&self.base, delayed_side, &purified_x, &base_cfg, true).map_err(wrap)?;
        }

        // (e) reset
        self.delayed.reset();
        self.cycles += 1;
        Ok(())
    }

    fn inference_network(&self, boundary: usize, num_classes: usize) -> Result<Option<Classifier>> {
        if self.purified.is_empty() {
            return Ok(None);
        }
        let examples: Vec<(&[f64], usize)> = self
            .purified
            .entries()
            .map(|e| (e.sample.features.as_slice(), e.sample.observed_label))
            .collect();
        let ft = FinetuneConfig {
            seed: derive_seed(derive_seed(self.cfg.seed, stream::FINETUNE), boundary as u64),
            ..self.cfg.finetune.clone()
        };
        finetune_classifier(&self.base, &examples, num_classes, &ft).map(Some)
    }
}

/// Accuracy of `classifier` on each task's test samples; zeros without one.
fn task_accuracies(classifier: Option<&Classifier>, episode: &Episode) -> Result<(Vec<f64>, f64)> {
    let tasks = episode.num_tasks();
    let Some(clf) = classifier else {
        return Ok((vec![0.0; tasks], 0.0));
    };
    let mut row = Vec::with_capacity(tasks);
    for t in 0..tasks {
        let members: Vec<Sample> = episode.test.iter().filter(|s| s.task_id == t).cloned().collect();
        row.push(if members.is_empty() {
            0.0
        } else {
            evaluate(clf, &members)?.accuracy
        });
    }
    let overall = evaluate(clf, &episode.test)?.accuracy;
    Ok((row, overall))
}

fn check_episode(episode: &Episode) -> Result<()> {
    if episode.stream.is_empty() {
        return Err(Error::param("stream", "episode stream is empty"));
    }
    if episode.test.is_empty() {
        return Err(Error::param("test", "episode has no test samples"));
    }
    if let Some(s) = episode.stream.iter().find(|s| s.features.len() != episode.feature_dim) {
        return Err(Error::ContractViolation(format!(
            "sample {} has dimension {}, episode declares {}",
            s.id,
            s.features.len(),
            episode.feature_dim
        )));
    }
    Ok(())
}

fn classes_per_task(episode: &Episode) -> usize {
    episode.task_classes.iter().map(Vec::len).max().unwrap_or(1)
}

/// Consumes the stream once, filtering and replaying whenever the delayed
/// buffer fills, and evaluates at every task boundary.
pub fn run_spr(episode: &Episode, cfg: &SprConfig) -> Result<SprRun> {
    check_episode(episode)?;
    cfg.validate(classes_per_task(episode))?;
    let dims = EncoderDims {
        input: episode.feature_dim,
        ..cfg.dims
    };
    let mut state = SprState {
        cfg,
        dims,
        truth: Truth::new(&episode.stream),
        delayed: DelayedBuffer::new(cfg.delayed_capacity),
        purified: PurifiedBuffer::with_mode(cfg.purified_capacity, cfg.admission),
        base: EncoderParams::init(dims, derive_seed(cfg.seed, stream::BASE_INIT)),
        admission_rng: derive_rng(cfg.seed, stream::ADMISSION),
        cycles: 0,
        noisy_presented: 0,
        noisy_admitted: 0,
        diagnostics: Vec::new(),
    };
    let ends = episode.task_ends();
    let mut curve: Vec<Vec<f64>> = Vec::with_capacity(ends.len());
    let mut overall = 0.0;
    let mut classifier = None;

    for (i, sample) in episode.stream.iter().enumerate() {
        let observed = sample.observed();
        if state.delayed.push(observed.clone()) == PushOutcome::Full {
            state.run_cycle()?;
            let again = state.delayed.push(observed);
            debug_assert_eq!(again, PushOutcome::Accepted);
        }
        let at_boundary = ends.binary_search(&(i + 1)).is_ok();
        if at_boundary && i + 1 < episode.stream.len() {
            classifier = state.inference_network(curve.len(), episode.num_classes)?;
            let (row, acc) = task_accuracies(classifier.as_ref(), episode)?;
            curve.push(row);
            overall = acc;
        }
    }
    if !state.delayed.is_empty() {
        state.run_cycle()?;
    }
    classifier = state
        .inference_network(curve.len(), episode.num_classes)?
        .or(classifier);
    let (row, acc) = task_accuracies(classifier.as_ref(), episode)?;
    curve.push(row);
    overall = if classifier.is_some() { acc } else { overall };

    let size = state.purified.len();
    let noisy_in_buffer = state
        .purified
        .entries()
        .filter(|e| state.truth.is_noisy(&e.sample))
        .count();
    let metrics = RunMetrics {
        overall_accuracy: overall,
        first_task_curve: curve.iter().map(|r| r[0]).collect(),
        per_task_accuracy_curve: curve,
        purified_noise_fraction: if size == 0 {
            0.0
        } else {
            noisy_in_buffer as f64 / size as f64
        },
        filtered_noise_percentage: filtered_noise_percentage(state.noisy_presented, state.noisy_admitted),
    };
    Ok(SprRun {
        metrics,
        purified: state.purified,
        base: state.base,
        classifier,
        diagnostics: state.diagnostics,
        cycles: state.cycles,
        noisy_presented: state.noisy_presented,
        noisy_admitted: state.noisy_admitted,
    })
}

#[derive(Debug, Clone)]
pub struct CrsRun {
    pub metrics: RunMetrics,
    pub buffer: ReservoirBuffer,
    pub classifier: Classifier,
}

/// Experience replay with a reservoir buffer: supervised cross-entropy on
/// each incoming minibatch plus a replayed minibatch, no filtering.
pub fn run_crs_baseline(episode: &Episode, cfg: &SprConfig) -> Result<CrsRun> {
    check_episode(episode)?;
    if cfg.crs.stream_batch == 0 {
        return Err(Error::param("crs.stream_batch", "must be at least 1"));
    }
    let dims = EncoderDims {
        input: episode.feature_dim,
        ..cfg.dims
    };
    let truth = Truth::new(&episode.stream);
    let init = EncoderParams::init(dims, derive_seed(cfg.seed, stream::BASE_INIT));
    let classifier = Classifier::from_encoder(&init, episode.num_classes, derive_seed(cfg.seed, stream::SUPERVISED));
    let opt = FinetuneConfig {
        learning_rate: cfg.crs.learning_rate,
        ..cfg.finetune.clone()
    };
    let mut learner = SupervisedLearner::new(classifier, &opt);
    let mut buffer = ReservoirBuffer::new(cfg.purified_capacity);
    let mut rng = derive_rng(cfg.seed, stream::RESERVOIR);
    let mut curve = Vec::new();
    let mut overall = 0.0;

    let mut start = 0;
    for end in episode.task_ends() {
        for chunk in episode.stream[start..end].chunks(cfg.crs.stream_batch) {
            let incoming: Vec<Sample> = chunk.iter().map(Sample::observed).collect();
            let replay: Vec<&Sample> = buffer.items().choose_multiple(&mut rng, cfg.crs.replay_batch).collect();
            let batch: Vec<(&[f64], usize)> = incoming
                .iter()
                .chain(replay)
                .map(|s| (s.features.as_slice(), s.observed_label))
                .collect();
            for _ in 0..cfg.crs.steps_per_batch {
                learner.step(&batch)?;
            }
            for s in incoming {
                buffer.update(s, &mut rng);
            }
        }
        let (row, acc) = task_accuracies(Some(learner.classifier()), episode)?;
        curve.push(row);
        overall = acc;
        start = end;
    }
    let size = buffer.items().len();
    let noisy = buffer.items().iter().filter(|s| truth.is_noisy(s)).count();
    let metrics = RunMetrics {
        overall_accuracy: overall,
        first_task_curve: curve.iter().map(|r: &Vec<f64>| r[0]).collect(),
        per_task_accuracy_curve: curve,
        purified_noise_fraction: if size == 0 { 0.0 } else { noisy as f64 / size as f64 },
        filtered_noise_percentage: None,
    };
    Ok(CrsRun {
        metrics,
        buffer,
        classifier: learner.into_classifier(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filtered_percentage_arithmetic() {
        assert_eq!(filtered_noise_percentage(10, 0), Some(1.0));
        assert_eq!(filtered_noise_percentage(10, 10), Some(0.0));
        assert!((filtered_noise_percentage(10, 2).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(filtered_noise_percentage(0, 0), None);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in [FilterVariant::Stochastic, FilterVariant::NonStochastic] {
            assert_eq!(FilterVariant::parse(v.name()), Some(v));
        }
        assert_eq!(FilterVariant::parse("other"), None);
    }
}
