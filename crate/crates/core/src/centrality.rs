//! Per-class similarity graphs and eigenvector centrality.
//!
//! Vertices are the samples sharing one observed label; edges carry the
//! ReLU-truncated cosine similarity of their expert features. Zero entries are
//! lifted to a small `epsilon` so the matrix is strictly positive and the
//! Perron vector is unique and positive.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::rng::keyed_uniform;
use crate::{Error, Result};

/// Features of one class, keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassFeatureSet {
    pub class_label: usize,
    pub ids: Vec<u64>,
    pub features: Vec<Vec<f64>>,
}

impl ClassFeatureSet {
    pub fn new(class_label: usize, ids: Vec<u64>, features: Vec<Vec<f64>>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::ContractViolation(format!("class {class_label} has no members")));
        }
        if ids.len() != features.len() {
            return Err(Error::ContractViolation("ids and features differ in length".into()));
        }
        Ok(Self {
            class_label,
            ids,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Unit-normalized copies of the features.
    fn unit_features(&self) -> Result<Vec<Vec<f64>>> {
        self.ids
            .iter()
            .zip(&self.features)
            .map(|(&id, f)| {
                let n = libm::sqrt(f.iter().map(|v| v * v).sum::<f64>());
                if !(n > 0.0 && n.is_finite()) {
                    return Err(Error::ZeroNormFeature { id });
                }
                Ok(f.iter().map(|v| v / n).collect())
            })
            .collect()
    }

    /// `max(0, cos(d_i, d_j))` for every ordered pair (diagonal included).
    fn relu_cosines(&self) -> Result<Vec<f64>> {
        let units = self.unit_features()?;
        let n = units.len();
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let c: f64 = units[i].iter().zip(&units[j]).map(|(a, b)| a * b).sum();
                let c = c.clamp(0.0, 1.0);
                out[i * n + j] = c;
                out[j * n + i] = c;
            }
        }
        Ok(out)
    }
}

/// What goes on the diagonal of a class graph.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DiagonalFill {
    /// No self-loops beyond the positivity floor.
    #[default]
    Epsilon,
    /// Unit self-similarity.
    One,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct CentralityConfig {
    pub epsilon: f64,
    pub diagonal: DiagonalFill,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CentralityConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            diagonal: DiagonalFill::Epsilon,
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

/// Dense symmetric matrix with entries in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AdjacencyMatrix {
    /// Validates symmetry and strict positivity of a row-major matrix.
    pub fn from_rows(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n || n == 0 {
            return Err(Error::ContractViolation(format!(
                "expected {n}x{n} entries, got {}",
                data.len()
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let a = data[i * n + j];
                if !(a > 0.0 && a <= 1.0) {
                    return Err(Error::ContractViolation(format!(
                        "entry ({i}, {j}) = {a} is outside (0, 1]"
                    )));
                }
                if a != data[j * n + i] {
                    return Err(Error::ContractViolation(format!("entry ({i}, {j}) breaks symmetry")));
                }
            }
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `k * A`, without the `(0, 1]` check (used for scaling checks only).
    pub fn scaled(&self, k: f64) -> ScaledMatrix {
        ScaledMatrix {
            n: self.n,
            data: self.data.iter().map(|a| a * k).collect(),
        }
    }

    fn mul(&self, v: &[f64], out: &mut [f64]) {
        mat_vec(&self.data, self.n, v, out);
    }
}

/// A positive multiple of an adjacency matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledMatrix {
    n: usize,
    data: Vec<f64>,
}

fn mat_vec(data: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for (row, o) in data.chunks_exact(n).zip(out.iter_mut()) {
        *o = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn fill(n: usize, mut raw: Vec<f64>, epsilon: f64, diagonal: DiagonalFill) -> Result<AdjacencyMatrix> {
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(Error::param("epsilon", format!("{epsilon} is outside (0, 1e-3]")));
    }
    for i in 0..n {
        raw[i * n + i] = match diagonal {
            DiagonalFill::Epsilon => epsilon,
            DiagonalFill::One => 1.0,
        };
    }
    raw.iter_mut().filter(|a| **a <= 0.0).for_each(|a| *a = epsilon);
    Ok(AdjacencyMatrix { n, data: raw })
}

/// Weighted graph: `a_vu = max(0, cos(d_v, d_u))`, zeros lifted to `epsilon`.
pub fn cosine_adjacency(fs: &ClassFeatureSet, epsilon: f64, diagonal: DiagonalFill) -> Result<AdjacencyMatrix> {
    let cos = fs.relu_cosines()?;
    fill(fs.len(), cos, epsilon, diagonal)
}

/// Binary graph with `P(a_ij = 1) = max(0, cos(d_i, d_j))`.
///
/// Each unordered pair is drawn once from a uniform keyed by
/// `(member_key, min id, max id)` and mirrored, so the draw for a pair does
/// not depend on where its samples sit in the set.
pub fn sample_binary_adjacency(
    fs: &ClassFeatureSet,
    epsilon: f64,
    diagonal: DiagonalFill,
    member_key: u64,
) -> Result<AdjacencyMatrix> {
    let mut a = fs.relu_cosines()?;
    let n = fs.len();
    for i in 0..n {
        for j in (i + 1)..n {
            let (lo, hi) = if fs.ids[i] <= fs.ids[j] {
                (fs.ids[i], fs.ids[j])
            } else {
                (fs.ids[j], fs.ids[i])
            };
            let edge = if keyed_uniform(member_key, lo, hi) < a[i * n + j] {
                1.0
            } else {
                0.0
            };
            a[i * n + j] = edge;
            a[j * n + i] = edge;
        }
    }
    fill(n, a, epsilon, diagonal)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentralityResult {
    /// Positive, unit-L2 centrality vector.
    pub c: Vec<f64>,
    /// Dominant eigenvalue (Rayleigh quotient).
    pub lambda: f64,
    pub iterations: usize,
}

fn power_iterate(data: &[f64], n: usize, tol: f64, max_iter: usize) -> Result<CentralityResult> {
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    if n == 1 {
        return Ok(CentralityResult {
            c: vec![1.0],
            lambda: data[0],
            iterations: 0,
        });
    }
    let mut v = vec![1.0 / libm::sqrt(n as f64); n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        mat_vec(data, n, &v, &mut next);
        let norm = libm::sqrt(next.iter().map(|x| x * x).sum::<f64>());
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::Convergence {
                iterations: it,
                residual,
            });
        }
        next.iter_mut().for_each(|x| *x /= norm);
        residual = libm::sqrt(v.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        core::mem::swap(&mut v, &mut next);
        if residual < tol {
            mat_vec(data, n, &v, &mut next);
            let lambda: f64 = v.iter().zip(&next).map(|(a, b)| a * b).sum();
            if v.iter().any(|x| *x <= 0.0) {
                return Err(Error::ContractViolation(
                    "power iteration produced a non-positive centrality".into(),
                ));
            }
            return Ok(CentralityResult {
                c: v,
                lambda,
                iterations: it,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual,
    })
}

/// Dominant eigenpair by power iteration from the uniform positive vector.
pub fn power_method(a: &AdjacencyMatrix, tol: f64, max_iter: usize) -> Result<CentralityResult> {
    power_iterate(&a.data, a.n, tol, max_iter)
}

/// Power iteration on a scaled adjacency matrix.
pub fn power_method_scaled(a: &ScaledMatrix, tol: f64, max_iter: usize) -> Result<CentralityResult> {
    power_iterate(&a.data, a.n, tol, max_iter)
}

impl AdjacencyMatrix {
    /// `||A c - lambda c||_2`.
    pub fn eigen_residual(&self, r: &CentralityResult) -> f64 {
        let mut av = vec![0.0; self.n];
        self.mul(&r.c, &mut av);
        libm::sqrt(
            av.iter()
                .zip(&r.c)
                .map(|(a, c)| (a - r.lambda * c) * (a - r.lambda * c))
                .sum::<f64>(),
        )
    }
}
