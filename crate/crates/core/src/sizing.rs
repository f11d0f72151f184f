// SPDX-License-Identifier: Apache-2.0

//! Detectability condition and the width/depth sizing rules derived from it.
//!
//! Notation follows the count-min bound `x <= x_hat <= x + eps * N` with
//! `eps = e / w`. For a flow `k` with baseline mass `x_k` (of which `x_k_T`
//! sits in the diagnostic region `T`), an anomaly that adds `delta_T` packets
//! to `T` and `beta * delta_T` elsewhere is visible once
//!
//! ```text
//! delta_T > (eps N_T x_k + (x_k_T + eps N_T) eps N') / (x_k_notT - eps N_T - beta (x_k_T + eps N_T))
//! ```
//!
//! All arithmetic is `f64`; integer results are ceilings taken at the API
//! boundary with a relative tolerance so exact products such as
//! `486 * 1.5` do not round up on representation error.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

const CEIL_RTOL: f64 = 1e-9;

fn ceil_tol(x: f64) -> f64 {
    (x - x.abs() * CEIL_RTOL).ceil()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectabilityParams {
    /// Spillover fraction of anomaly packets landing outside `T`.
    pub beta: f64,
    pub beta_max: f64,
    /// Smallest anomaly lift in `T` the deployment must catch (packets).
    pub delta_t_min: f64,
    /// Budget for any of the `K + 1` bounds failing in a window.
    pub zeta: f64,
    /// Per-bound failure probability, `e^-d`.
    pub delta_conf: f64,
}

impl DetectabilityParams {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..1.0).contains(&self.beta_max) {
            return Err(ConfigError::invalid(
                "beta_max",
                format!("{} outside [0, 1)", self.beta_max),
            ));
        }
        if !(0.0..=self.beta_max).contains(&self.beta) {
            return Err(ConfigError::invalid(
                "beta",
                format!("{} outside [0, beta_max]", self.beta),
            ));
        }
        if self.delta_t_min < 1.0 {
            return Err(ConfigError::invalid(
                "delta_t_min",
                "must be at least one packet",
            ));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(ConfigError::invalid(
                "zeta",
                format!("{} outside (0, 1)", self.zeta),
            ));
        }
        Ok(())
    }
}

/// Baseline masses of one flow in one window.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowBaseline {
    pub x_k: f64,
    pub x_k_t: f64,
    pub x_k_not_t: f64,
    /// Diagnostic occupancy `N_T` of the sketch.
    pub n_t: f64,
    /// Total packet mass `N'` of the sketch.
    pub n_prime: f64,
}

impl FlowBaseline {
    pub fn new(x_k: f64, x_k_t: f64, n_t: f64, n_prime: f64) -> Self {
        Self {
            x_k,
            x_k_t,
            x_k_not_t: x_k - x_k_t,
            n_t,
            n_prime,
        }
    }

    /// Largest diagnostic ratio the baseline can show under collisions.
    pub fn max_baseline_ratio(&self, eps: f64) -> f64 {
        (self.x_k_t + eps * self.n_t) / self.x_k
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Detectability {
    /// Minimum diagnostic lift (packets) that is guaranteed to show.
    Threshold(f64),
    /// The flow is too small, or `T` too noisy, for any lift to show.
    NotDetectable,
}

impl Detectability {
    pub fn threshold(self) -> Option<f64> {
        match self {
            Detectability::Threshold(t) => Some(t),
            Detectability::NotDetectable => None,
        }
    }
}

pub fn detectability_threshold(base: &FlowBaseline, eps: f64, beta: f64) -> Detectability {
    let noise_t = eps * base.n_t;
    let denom = base.x_k_not_t - noise_t - beta * (base.x_k_t + noise_t);
    if denom <= 0.0 || !denom.is_finite() {
        return Detectability::NotDetectable;
    }
    let numer = noise_t * base.x_k + (base.x_k_t + noise_t) * eps * base.n_prime;
    Detectability::Threshold(numer / denom)
}

/// The sparse-regime form `(1 - beta) delta_T >= eps N_T`, i.e. `eps N_T / (1 - beta)`.
pub fn sparse_threshold(eps: f64, n_t: f64, beta: f64) -> Detectability {
    if beta >= 1.0 {
        return Detectability::NotDetectable;
    }
    Detectability::Threshold(eps * n_t / (1.0 - beta))
}

/// `ceil(e N_T^max / ((1 - beta_max) delta_T^min))`, never below 2.
pub fn required_width(n_t_max: f64, beta_max: f64, delta_t_min: f64) -> Result<usize, ConfigError> {
    if !(0.0..1.0).contains(&beta_max) {
        return Err(ConfigError::invalid(
            "beta_max",
            format!("{beta_max} must lie in [0, 1)"),
        ));
    }
    if delta_t_min <= 0.0 || n_t_max < 0.0 {
        return Err(ConfigError::invalid(
            "sizing inputs",
            "n_t_max >= 0 and delta_t_min > 0 required",
        ));
    }
    let w = ceil_tol(E * n_t_max / ((1.0 - beta_max) * delta_t_min));
    Ok((w as usize).max(2))
}

/// `ceil(ln((K + 1) / zeta))`.
pub fn required_depth(k_bins: usize, zeta: f64) -> Result<usize, ConfigError> {
    if k_bins < 1 {
        return Err(ConfigError::invalid("k_bins", "must be at least 1"));
    }
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(ConfigError::invalid(
            "zeta",
            format!("{zeta} outside (0, 1)"),
        ));
    }
    Ok((ceil_tol(((k_bins + 1) as f64 / zeta).ln()) as usize).max(1))
}

/// Probability that all `K + 1` bounds hold at depth `d`, by the union bound.
pub fn simultaneous_success(k_bins: usize, depth: usize) -> f64 {
    (1.0 - (k_bins + 1) as f64 * (-(depth as f64)).exp()).max(0.0)
}

/// `(e / w) N_T`.
pub fn collision_floor(width: usize, n_t: f64) -> f64 {
    E / width as f64 * n_t
}

/// Width needed after diagnostic occupancy drifts from `rho_old` to `rho_new`.
pub fn drift_width_scaling(w_old: usize, rho_old: f64, rho_new: f64) -> usize {
    ceil_tol(w_old as f64 * rho_new / rho_old) as usize
}
