//! Two-component Beta mixture over centrality scores and the clean-sample
//! posteriors derived from it.
//!
//! EM alternates a Bayes-rule E-step with a weighted method-of-moments
//! M-step:
//!
//! ```text
//! alpha_z = m_z * (m_z (1 - m_z) / s2_z - 1)
//! beta_z  = alpha_z (1 - m_z) / m_z
//! pi_z    = mean_i gamma_z(c_i)
//! ```
//!
//! where `m_z` and `s2_z` are the responsibility-weighted mean and variance.
//! Moment matching is not an exact likelihood maximizer, so a step that would
//! lower the log-likelihood is rejected and the fit stops there.

use alloc::vec;
use alloc::vec::Vec;

use crate::centrality::{cosine_adjacency, power_method, sample_binary_adjacency, CentralityConfig, ClassFeatureSet};
use crate::rng::derive_seed;
use crate::{Error, Result};

/// Lower clamp of normalized scores; the upper one is `1 - SCORE_DELTA`.
pub const SCORE_DELTA: f64 = 1e-4;
pub const SHAPE_MIN: f64 = 1e-2;
pub const SHAPE_MAX: f64 = 1e4;
const MIN_SCORES: usize = 4;
const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BetaMixture {
    pub weights: [f64; 2],
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub clean_index: usize,
}

impl BetaMixture {
    /// Builds a mixture and labels its clean component.
    pub fn new(weights: [f64; 2], alpha: [f64; 2], beta: [f64; 2]) -> Self {
        let mut m = Self {
            weights,
            alpha,
            beta,
            clean_index: 0,
        };
        m.clean_index = identify_clean_component(&m);
        m
    }

    pub fn mean(&self, z: usize) -> f64 {
        self.alpha[z] / (self.alpha[z] + self.beta[z])
    }

    fn log_joint(&self, z: usize, c: f64) -> f64 {
        libm::log(self.weights[z]) + beta_log_pdf(c, self.alpha[z], self.beta[z])
    }

    /// Total log-likelihood of `scores`.
    pub fn log_likelihood(&self, scores: &[f64]) -> f64 {
        scores
            .iter()
            .map(|&c| log_sum_exp(self.log_joint(0, c), self.log_joint(1, c)))
            .sum()
    }
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + libm::log(libm::exp(a - m) + libm::exp(b - m))
}

pub fn beta_log_pdf(c: f64, a: f64, b: f64) -> f64 {
    let log_norm = libm::lgamma(a + b) - libm::lgamma(a) - libm::lgamma(b);
    log_norm + (a - 1.0) * libm::log(c) + (b - 1.0) * libm::log1p(-c)
}

/// Centrality scores mapped into the Beta support.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    pub ids: Vec<u64>,
    pub scores: Vec<f64>,
}

/// Divides by the batch maximum and clamps to `[delta, 1 - delta]`.
pub fn normalize_scores(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() || raw.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::DegenerateScores);
    }
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || max - min <= 1e-12 * max {
        return Err(Error::DegenerateScores);
    }
    Ok(raw
        .iter()
        .map(|r| (r / max).clamp(SCORE_DELTA, 1.0 - SCORE_DELTA))
        .collect())
}

impl ScoreBatch {
    pub fn from_raw(ids: Vec<u64>, raw: &[f64]) -> Result<Self> {
        Ok(Self {
            ids,
            scores: normalize_scores(raw)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct EmConfig {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmFit {
    pub mixture: BetaMixture,
    /// Accepted EM iterations.
    pub iterations: usize,
    pub log_likelihood: f64,
    /// Log-likelihood after every accepted M-step.
    pub trace: Vec<f64>,
}

/// Weighted method-of-moments M-step.
fn m_step(scores: &[f64], resp: &[[f64; 2]]) -> Result<BetaMixture> {
    let n = scores.len() as f64;
    let mut weights = [0.0; 2];
    let mut alpha = [0.0; 2];
    let mut beta = [0.0; 2];
    for z in 0..2 {
        let mass: f64 = resp.iter().map(|g| g[z]).sum();
        if !(mass > 0.0) {
            return Err(Error::DegenerateVariance {
                component: z,
                variance: 0.0,
            });
        }
        let mean = scores.iter().zip(resp).map(|(c, g)| g[z] * c).sum::<f64>() / mass;
        let var = scores
            .iter()
            .zip(resp)
            .map(|(c, g)| g[z] * (c - mean) * (c - mean))
            .sum::<f64>()
            / mass;
        if !(var > VARIANCE_FLOOR) {
            return Err(Error::DegenerateVariance {
                component: z,
                variance: var,
            });
        }
        let (a, b) = moments_to_shapes(mean, var);
        alpha[z] = a;
        beta[z] = b;
        weights[z] = mass / n;
    }
    let total = weights[0] + weights[1];
    weights[0] /= total;
    weights[1] /= total;
    Ok(BetaMixture::new(weights, alpha, beta))
}

/// Beta shapes whose mean and variance are `mean`, `var`, clamped to
/// `[SHAPE_MIN, SHAPE_MAX]`.
pub fn moments_to_shapes(mean: f64, var: f64) -> (f64, f64) {
    let alpha = mean * (mean * (1.0 - mean) / var - 1.0);
    let beta = alpha * (1.0 - mean) / mean;
    (alpha.clamp(SHAPE_MIN, SHAPE_MAX), beta.clamp(SHAPE_MIN, SHAPE_MAX))
}

fn e_step(mix: &BetaMixture, scores: &[f64], resp: &mut [[f64; 2]]) -> Result<()> {
    for (c, g) in scores.iter().zip(resp.iter_mut()) {
        let p = posterior_unchecked(mix, *c);
        if !(p[0].is_finite() && p[1].is_finite()) {
            return Err(Error::NonFiniteResponsibility);
        }
        *g = p;
    }
    Ok(())
}

/// Fits the mixture to scores in `(0, 1)`.
///
/// Responsibilities start from a median split (below: component 0, above:
/// component 1, ties shared evenly), which makes the fit deterministic.
pub fn fit_em(scores: &[f64], cfg: &EmConfig) -> Result<EmFit> {
    if scores.len() < MIN_SCORES {
        return Err(Error::TooFewScores {
            min: MIN_SCORES,
            got: scores.len(),
        });
    }
    if let Some(c) = scores.iter().find(|c| !(**c > 0.0 && **c < 1.0)) {
        return Err(Error::Domain(*c));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 1e-6 {
        return Err(Error::DegenerateScores);
    }

    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    let median = if k % 2 == 1 {
        sorted[k / 2]
    } else {
        0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
    };
    let mut resp: Vec<[f64; 2]> = scores
        .iter()
        .map(|&c| {
            if c < median {
                [1.0, 0.0]
            } else if c > median {
                [0.0, 1.0]
            } else {
                [0.5, 0.5]
            }
        })
        .collect();

    let mut mixture = m_step(scores, &resp)?;
    let mut ll = mixture.log_likelihood(scores);
    if !ll.is_finite() {
        return Err(Error::NonFiniteResponsibility);
    }
    let mut trace = vec![ll];
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        e_step(&mixture, scores, &mut resp)?;
        let next = match m_step(scores, &resp) {
            Ok(m) => m,
            // A component emptied out; the previous fit is the best we have.
            Err(Error::DegenerateVariance { .. }) => break,
            Err(e) => return Err(e),
        };
        let next_ll = next.log_likelihood(scores);
        if !next_ll.is_finite() || next_ll < ll {
            break;
        }
        let gain = next_ll - ll;
        mixture = next;
        ll = next_ll;
        trace.push(ll);
        iterations += 1;
        if gain < cfg.tol {
            break;
        }
    }
    Ok(EmFit {
        mixture,
        iterations,
        log_likelihood: ll,
        trace,
    })
}

fn posterior_unchecked(mix: &BetaMixture, c: f64) -> [f64; 2] {
    let l0 = mix.log_joint(0, c);
    let l1 = mix.log_joint(1, c);
    let total = log_sum_exp(l0, l1);
    let p0 = libm::exp(l0 - total);
    let p1 = libm::exp(l1 - total);
    [p0, p1]
}

/// `p(z | c)` for both components.
pub fn posterior(mix: &BetaMixture, c: f64) -> Result<[f64; 2]> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Domain(c));
    }
    let p = posterior_unchecked(mix, c);
    if !(p[0].is_finite() && p[1].is_finite()) {
        return Err(Error::NonFiniteResponsibility);
    }
    Ok(p)
}

/// The component with the larger mean; ties go to the larger `alpha`.
pub fn identify_clean_component(mix: &BetaMixture) -> usize {
    let (m0, m1) = (mix.mean(0), mix.mean(1));
    if m1 > m0 || (m1 == m0 && mix.alpha[1] > mix.alpha[0]) {
        1
    } else {
        0
    }
}

/// Per-fit record kept for diagnostics export.
#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostic {
    pub class_label: usize,
    /// Ensemble member index; `None` for the weighted (non-stochastic) graph.
    pub member: Option<usize>,
    pub mixture: BetaMixture,
    pub iterations: usize,
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanPosteriors {
    /// Clean probability per sample, aligned with the feature set.
    pub posteriors: Vec<f64>,
    pub diagnostics: Vec<FitDiagnostic>,
    /// Ensemble members that produced a fit.
    pub members_used: usize,
}

/// Centrality -> normalized scores -> BMM -> clean posterior for one graph.
fn posteriors_from_graph(raw_centrality: &[f64], em: &EmConfig) -> Result<(Vec<f64>, EmFit)> {
    let scores = normalize_scores(raw_centrality)?;
    let fit = fit_em(&scores, em)?;
    let clean = fit.mixture.clean_index;
    let post = scores
        .iter()
        .map(|&c| posterior(&fit.mixture, c).map(|p| p[clean]))
        .collect::<Result<Vec<f64>>>()?;
    Ok((post, fit))
}

/// The set sorted by id plus the original index of each sorted position.
/// Fitting in this order makes results independent of how the set is laid out.
fn by_id(fs: &ClassFeatureSet) -> (ClassFeatureSet, Vec<usize>) {
    let mut order: Vec<usize> = (0..fs.len()).collect();
    order.sort_by_key(|&i| fs.ids[i]);
    let sorted = ClassFeatureSet {
        class_label: fs.class_label,
        ids: order.iter().map(|&i| fs.ids[i]).collect(),
        features: order.iter().map(|&i| fs.features[i].clone()).collect(),
    };
    (sorted, order)
}

fn restore(mut out: CleanPosteriors, order: &[usize]) -> CleanPosteriors {
    let mut posteriors = vec![0.0; order.len()];
    for (p, &i) in out.posteriors.iter().zip(order) {
        posteriors[i] = *p;
    }
    out.posteriors = posteriors;
    out
}

/// Clean posterior from the weighted cosine graph and a single fit.
pub fn non_stochastic_clean_posterior(
    fs: &ClassFeatureSet,
    centrality: &CentralityConfig,
    em: &EmConfig,
) -> Result<CleanPosteriors> {
    let (sorted, order) = by_id(fs);
    non_stochastic_sorted(&sorted, centrality, em).map(|out| restore(out, &order))
}

fn non_stochastic_sorted(
    fs: &ClassFeatureSet,
    centrality: &CentralityConfig,
    em: &EmConfig,
) -> Result<CleanPosteriors> {
    let a = cosine_adjacency(fs, centrality.epsilon, centrality.diagonal)?;
    let cent = power_method(&a, centrality.tol, centrality.max_iter)?;
    let (posteriors, fit) = posteriors_from_graph(&cent.c, em)?;
    Ok(CleanPosteriors {
        posteriors,
        diagnostics: vec![FitDiagnostic {
            class_label: fs.class_label,
            member: None,
            mixture: fit.mixture,
            iterations: fit.iterations,
            log_likelihood: fit.log_likelihood,
        }],
        members_used: 0,
    })
}

/// Monte Carlo average of clean posteriors over `e_max` Bernoulli graphs.
///
/// Member `e` draws its edges with key `derive_seed(key, e)`. Members whose
/// graph or fit is degenerate are skipped; if all are skipped the weighted
/// graph posterior is returned instead.
pub fn stochastic_clean_posterior(
    fs: &ClassFeatureSet,
    e_max: usize,
    centrality: &CentralityConfig,
    em: &EmConfig,
    key: u64,
) -> Result<CleanPosteriors> {
    if e_max == 0 {
        return Err(Error::param("e_max", "must be at least 1"));
    }
    let (sorted, order) = by_id(fs);
    stochastic_sorted(&sorted, e_max, centrality, em, key).map(|out| restore(out, &order))
}

fn stochastic_sorted(
    fs: &ClassFeatureSet,
    e_max: usize,
    centrality: &CentralityConfig,
    em: &EmConfig,
    key: u64,
) -> Result<CleanPosteriors> {
    let mut sum = vec![0.0; fs.len()];
    let mut diagnostics = Vec::new();
    let mut used = 0;
    for member in 0..e_max {
        let a = sample_binary_adjacency(
            fs,
            centrality.epsilon,
            centrality.diagonal,
            derive_seed(key, member as u64),
        )?;
        let outcome =
            power_method(&a, centrality.tol, centrality.max_iter).and_then(|cent| posteriors_from_graph(&cent.c, em));
        match outcome {
            Ok((post, fit)) => {
                for (s, p) in sum.iter_mut().zip(&post) {
                    *s += p;
                }
                diagnostics.push(FitDiagnostic {
                    class_label: fs.class_label,
                    member: Some(member),
                    mixture: fit.mixture,
                    iterations: fit.iterations,
                    log_likelihood: fit.log_likelihood,
                });
                used += 1;
            }
            Err(e) if e.is_degenerate() => {
                log::debug!("class {} member {member} skipped: {e}", fs.class_label);
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return non_stochastic_sorted(fs, centrality, em);
    }
    let posteriors = sum.iter().map(|s| (s / used as f64).clamp(0.0, 1.0)).collect();
    Ok(CleanPosteriors {
        posteriors,
        diagnostics,
        members_used: used,
    })
}
