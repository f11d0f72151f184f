// SPDX-License-Identifier: Apache-2.0

//! Class-balanced, L2-regularized logistic regression fit by Newton steps.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::AnalysisError;

const MAX_ITER: usize = 50;
const TOL: f64 = 1e-9;
const MAX_STEP: f64 = 5.0;

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    mean: Vec<f64>,
    scale: Vec<f64>,
    weights: Vec<f64>,
    bias: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    /// Features are standardized on the training rows; the bias is not penalized.
    pub fn fit(x: &[Vec<f64>], y: &[bool], lambda: f64) -> Result<Self, AnalysisError> {
        let n = x.len();
        if n == 0 || x[0].is_empty() {
            return Err(AnalysisError::NoFeatures);
        }
        let n_pos = y.iter().filter(|&&b| b).count();
        if n_pos == 0 || n_pos == n {
            return Err(AnalysisError::SingleClass {
                kind: String::new(),
                missing: if n_pos == 0 { "positive" } else { "negative" },
            });
        }
        let p = x[0].len();
        let mut mean = vec![0.0; p];
        let mut scale = vec![0.0; p];
        for row in x {
            for j in 0..p {
                mean[j] += row[j] / n as f64;
            }
        }
        for row in x {
            for j in 0..p {
                scale[j] += (row[j] - mean[j]).powi(2) / n as f64;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }

        // row-major design with the intercept in column 0
        let q = p + 1;
        let mut design = vec![0.0; n * q];
        for (i, row) in x.iter().enumerate() {
            design[i * q] = 1.0;
            for j in 0..p {
                design[i * q + j + 1] = (row[j] - mean[j]) / scale[j];
            }
        }
        let w_pos = n as f64 / (2.0 * n_pos as f64);
        let w_neg = n as f64 / (2.0 * (n - n_pos) as f64);

        let mut beta = DVector::<f64>::zeros(q);
        for _ in 0..MAX_ITER {
            let mut grad = DVector::<f64>::zeros(q);
            let mut hess = DMatrix::<f64>::zeros(q, q);
            for d in 1..q {
                grad[d] = lambda * beta[d];
                hess[(d, d)] = lambda;
            }
            // tiny jitter keeps the unpenalized intercept solvable
            hess[(0, 0)] = 1e-12;
            for i in 0..n {
                let row = &design[i * q..(i + 1) * q];
                let z: f64 = row.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
                let pi = sigmoid(z);
                let cw = if y[i] { w_pos } else { w_neg };
                let r = cw * (pi - f64::from(u8::from(y[i])));
                let h = cw * pi * (1.0 - pi);
                for a in 0..q {
                    grad[a] += row[a] * r;
                    let ha = h * row[a];
                    for b in a..q {
                        hess[(a, b)] += ha * row[b];
                    }
                }
            }
            for a in 0..q {
                for b in 0..a {
                    hess[(a, b)] = hess[(b, a)];
                }
            }
            let Some(mut step) = hess
                .clone()
                .cholesky()
                .map(|c| c.solve(&grad))
                .or_else(|| hess.lu().solve(&grad))
            else {
                break;
            };
            let norm = step.norm();
            if norm > MAX_STEP {
                step *= MAX_STEP / norm;
            }
            beta -= &step;
            if step.norm() < TOL {
                break;
            }
        }
        Ok(Self {
            mean,
            scale,
            weights: beta.iter().skip(1).copied().collect(),
            bias: beta[0],
        })
    }

    pub fn score(&self, x: &[f64]) -> f64 {
        let z = self.bias
            + x.iter()
                .zip(&self.weights)
                .enumerate()
                .map(|(j, (v, w))| w * (v - self.mean[j]) / self.scale[j])
                .sum::<f64>();
        sigmoid(z)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Fold index per sample: distinct windows sorted and cut into `folds`
/// contiguous blocks, so train and test windows never interleave.
pub fn blocked_folds(windows: &[u64], folds: usize) -> Vec<usize> {
    let distinct: Vec<u64> = windows
        .iter()
        .copied()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let k = folds.clamp(1, distinct.len().max(1));
    let block: BTreeMap<u64, usize> = distinct
        .iter()
        .enumerate()
        .map(|(i, &w)| (w, i * k / distinct.len()))
        .collect();
    windows.iter().map(|w| block[w]).collect()
}
