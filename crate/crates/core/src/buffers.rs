//! Replay stores: the delayed staging buffer, the class-balanced purified
//! buffer and a reservoir-sampling baseline.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::stream_gen::Sample;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PushOutcome {
    Accepted,
    /// The buffer was already at capacity; the sample was not stored.
    Full,
}

/// Fixed-capacity staging store emptied after every filtering cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedBuffer {
    capacity: usize,
    items: Vec<Sample>,
}

impl DelayedBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, sample: Sample) -> PushOutcome {
        if self.items.len() >= self.capacity {
            return PushOutcome::Full;
        }
        self.items.push(sample);
        PushOutcome::Accepted
    }

    pub fn reset(&mut self) {
        self.items.clear();
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PurifiedEntry {
    pub sample: Sample,
    pub clean_posterior: f64,
}

/// How candidates enter the purified buffer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum AdmissionMode {
    /// Each candidate enters with probability equal to its clean posterior.
    #[default]
    Bernoulli,
    /// Every candidate enters; the quota then keeps the highest posteriors.
    TopK,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdmissionReport {
    /// Candidates that passed the admission draw.
    pub admitted: Vec<u64>,
    /// Entries removed to restore class quotas, incumbents or fresh admits.
    pub evicted: Vec<u64>,
    /// Candidates still in the buffer when the call returns.
    pub retained: Vec<u64>,
}

/// Class-balanced store of samples judged clean.
///
/// Each class seen so far gets a quota of `capacity / classes`, with the
/// remainder going one apiece to the earliest-seen classes. After every
/// [`admit`](Self::admit) no class exceeds its quota, so a full buffer has
/// per-class counts differing by at most one.
#[derive(Debug, Clone, PartialEq)]
pub struct PurifiedBuffer {
    capacity: usize,
    mode: AdmissionMode,
    class_order: Vec<usize>,
    classes: BTreeMap<usize, Vec<PurifiedEntry>>,
}

fn eviction_order(a: &PurifiedEntry, b: &PurifiedEntry) -> core::cmp::Ordering {
    a.clean_posterior
        .total_cmp(&b.clean_posterior)
        .then(a.sample.id.cmp(&b.sample.id))
}

impl PurifiedBuffer {
    pub fn new(capacity: usize) -> Self {
        Self::with_mode(capacity, AdmissionMode::default())
    }

    pub fn with_mode(capacity: usize, mode: AdmissionMode) -> Self {
        Self {
            capacity,
            mode,
            class_order: Vec::new(),
            classes: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Classes in the order they were first presented.
    pub fn classes_seen(&self) -> &[usize] {
        &self.class_order
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.classes.get(&class).map_or(0, Vec::len)
    }

    pub fn class_entries(&self, class: usize) -> &[PurifiedEntry] {
        self.classes.get(&class).map_or(&[], Vec::as_slice)
    }

    /// Entries grouped by class, classes ascending.
    pub fn entries(&self) -> impl Iterator<Item = &PurifiedEntry> {
        self.classes.values().flatten()
    }

    /// Quota of `class`, or `None` if the class has never been presented.
    pub fn quota(&self, class: usize) -> Option<usize> {
        let k = self.class_order.len();
        let pos = self.class_order.iter().position(|&c| c == class)?;
        let base = self.capacity / k;
        Some(base + usize::from(pos < self.capacity % k))
    }

    pub fn admit<R: Rng + ?Sized>(&mut self, candidates: Vec<PurifiedEntry>, rng: &mut R) -> Result<AdmissionReport> {
        for c in &candidates {
            let p = c.clean_posterior;
            if !(p.is_finite() && (0.0..=1.0).contains(&p)) {
                return Err(Error::ContractViolation(format!(
                    "clean posterior {p} of sample {} is not a probability",
                    c.sample.id
                )));
            }
        }
        let mut report = AdmissionReport::default();
        let mut candidate_ids = Vec::new();
        for c in candidates {
            let class = c.sample.observed_label;
            if !self.class_order.contains(&class) {
                self.class_order.push(class);
            }
            let accept = match self.mode {
                AdmissionMode::Bernoulli => rng.random::<f64>() < c.clean_posterior,
                AdmissionMode::TopK => true,
            };
            if accept {
                report.admitted.push(c.sample.id);
                candidate_ids.push(c.sample.id);
                self.classes.entry(class).or_default().push(c);
            }
        }
        let quotas: Vec<(usize, usize)> = self
            .class_order
            .iter()
            .map(|&c| (c, self.quota(c).unwrap_or(0)))
            .collect();
        for (class, quota) in quotas {
            let Some(entries) = self.classes.get_mut(&class) else {
                continue;
            };
            if entries.len() <= quota {
                continue;
            }
            let excess = entries.len() - quota;
            let mut ranked: Vec<usize> = (0..entries.len()).collect();
            ranked.sort_by(|&a, &b| eviction_order(&entries[a], &entries[b]));
            let mut drop = alloc::vec![false; entries.len()];
            for &i in &ranked[..excess] {
                drop[i] = true;
                report.evicted.push(entries[i].sample.id);
            }
            let mut keep = drop.iter().map(|d| !d);
            entries.retain(|_| keep.next().unwrap_or(true));
        }
        self.classes.retain(|_, v| !v.is_empty());
        report.retained = candidate_ids
            .into_iter()
            .filter(|id| !report.evicted.contains(id))
            .collect();
        Ok(report)
    }
}

/// Uniform fixed-size sample of a stream (Vitter's Algorithm R).
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirBuffer {
    capacity: usize,
    items: Vec<Sample>,
    seen_count: u64,
}

impl ReservoirBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
            seen_count: 0,
        }
    }

    /// Offers one arrival. The `n`-th arrival (`n > capacity`) replaces a
    /// uniformly chosen slot when a uniform draw falls below `capacity / n`.
    pub fn update<R: Rng + ?Sized>(&mut self, sample: Sample, rng: &mut R) -> Option<Sample> {
        self.seen_count += 1;
        if self.items.len() < self.capacity {
            self.items.push(sample);
            return None;
        }
        if self.capacity == 0 {
            return Some(sample);
        }
        let keep = self.capacity as f64 / self.seen_count as f64;
        if rng.random::<f64>() < keep {
            let slot = rng.random_range(0..self.capacity);
            Some(core::mem::replace(&mut self.items[slot], sample))
        } else {
            Some(sample)
        }
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }
}
