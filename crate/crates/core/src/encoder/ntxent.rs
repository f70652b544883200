use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// NT-Xent loss summed over every anchor, with its exact gradient.
///
/// `units` holds `2B` unit vectors where `(2k, 2k + 1)` are positives. For
/// anchor `i` with positive `j` the term is
/// `-log(exp(u_i.u_j / t) / sum_{k != i} exp(u_i.u_k / t))`.
pub fn ntxent_loss(units: &[Vec<f64>], temperature: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let n = units.len();
    if n < 2 || !n.is_multiple_of(2) {
        return Err(Error::ContractViolation(format!(
            "NT-Xent needs an even number (>= 2) of embeddings, got {n}"
        )));
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::param("temperature", "must be positive"));
    }
    let dim = units[0].len();
    for (i, u) in units.iter().enumerate() {
        if u.len() != dim {
            return Err(Error::ContractViolation(format!(
                "embedding {i} has the wrong dimension"
            )));
        }
        let norm = libm::sqrt(dot(u, u));
        if !((norm - 1.0).abs() <= 1e-6) {
            return Err(Error::ContractViolation(format!(
                "embedding {i} has norm {norm}, expected unit length"
            )));
        }
    }

    let inv_t = 1.0 / temperature;
    let mut logits = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let s = dot(&units[i], &units[k]) * inv_t;
            logits[i * n + k] = s;
            logits[k * n + i] = s;
        }
    }

    // probs[i][k]: softmax over k != i of logits[i][k].
    let mut probs = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let row = &logits[i * n..(i + 1) * n];
        let m = row
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for k in (0..n).filter(|&k| k != i) {
            let e = libm::exp(row[k] - m);
            probs[i * n + k] = e;
            total += e;
        }
        for k in (0..n).filter(|&k| k != i) {
            probs[i * n + k] /= total;
        }
        let lse = m + libm::log(total);
        loss += lse - row[i ^ 1];
    }

    let mut grads = vec![vec![0.0; dim]; n];
    for i in 0..n {
        let g = &mut grads[i];
        for k in (0..n).filter(|&k| k != i) {
            let w = probs[i * n + k] + probs[k * n + i] - if k == (i ^ 1) { 2.0 } else { 0.0 };
            if w != 0.0 {
                for (gd, uk) in g.iter_mut().zip(&units[k]) {
                    *gd += w * inv_t * uk;
                }
            }
        }
    }
    Ok((loss, grads))
}
