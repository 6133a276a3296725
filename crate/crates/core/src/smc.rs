//! The basic sequential Monte Carlo filter.
//!
//! Each step propagates every particle through the process, weights it by
//! the measurement density and resamples unconditionally. Weights live in
//! log space and are exponentiated relative to their maximum, so long series
//! do not underflow. Propagation and weighting run in parallel with one
//! stream per (step, particle); resampling draws from a per-step stream, so
//! results do not depend on the number of threads.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Callback, Error, Result};
use crate::model::{Bound, Model, ObservationSeries, Process};
use crate::resample::Resampler;
use crate::rng::RngStream;
use crate::transform::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prediction,
    Filtering,
}

/// J particles stored row-major, with log-weights.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    dim: usize,
    states: Vec<f64>,
    log_weights: Vec<f64>,
    stage: Stage,
}

impl ParticleEnsemble {
    fn new(particles: usize, dim: usize) -> Self {
        Self {
            dim,
            states: vec![0.0; particles * dim],
            log_weights: vec![0.0; particles],
            stage: Stage::Filtering,
        }
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn particle(&self, j: usize) -> &[f64] {
        &self.states[j * self.dim..(j + 1) * self.dim]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim.max(1))
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Unweighted mean of coordinates `range`.
    fn mean(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        let mut m = vec![0.0; range.len()];
        for p in self.particles() {
            for (acc, v) in m.iter_mut().zip(&p[range.clone()]) {
                *acc += v;
            }
        }
        let j = self.len() as f64;
        m.iter_mut().for_each(|v| *v /= j);
        m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterOptions {
    pub particles: usize,
    pub resampler: Resampler,
    /// Record the mean of the filtered state particles at every step.
    pub state_means: bool,
}

impl FilterOptions {
    pub fn new(particles: usize) -> Self {
        Self {
            particles,
            resampler: Resampler::default(),
            state_means: false,
        }
    }

    pub fn resampler(mut self, resampler: Resampler) -> Self {
        self.resampler = resampler;
        self
    }

    pub fn with_state_means(mut self) -> Self {
        self.state_means = true;
        self
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FilterResult {
    /// Monte Carlo filter means of the parameter block for `n = 0..=N`, the
    /// first being the center. Empty for processes without a parameter block.
    pub filter_means: Vec<Vec<f64>>,
    /// Prediction variances for `n = 1..=N`, taken about the previous filter
    /// mean with divisor `J − 1` (all zero when `J = 1`).
    pub prediction_variances: Vec<DMatrix<f64>>,
    /// `log((1/J) Σ_j w(n, j))` per step.
    pub cond_loglik: Vec<f64>,
    /// Log of the unbiased likelihood estimate.
    pub loglik: f64,
    /// Effective sample size `(Σw)² / Σw²` per step, before resampling.
    pub ess: Vec<f64>,
    /// Means of the state part of the filtered particles for `n = 0..=N`.
    pub state_filter_means: Option<Vec<Vec<f64>>>,
}

/// Filter `data` under `model` at unconstrained parameters `theta`.
pub fn particle_filter<M: Model + ?Sized>(
    model: &M,
    theta: &ParamVector,
    data: &ObservationSeries,
    options: &FilterOptions,
    stream: &RngStream,
) -> Result<FilterResult> {
    filter_process(&Bound::new(model, theta)?, data, options, stream)
}

pub fn filter_process<P: Process + ?Sized>(
    process: &P,
    data: &ObservationSeries,
    options: &FilterOptions,
    stream: &RngStream,
) -> Result<FilterResult> {
    filter_process_observed(process, data, options, stream, &mut |_, _| {})
}

/// As [`filter_process`], calling `observer(n, ensemble)` on the filtered
/// ensemble at every step `n = 0..=N`.
pub fn filter_process_observed<P: Process + ?Sized>(
    process: &P,
    data: &ObservationSeries,
    options: &FilterOptions,
    stream: &RngStream,
    observer: &mut dyn FnMut(usize, &ParticleEnsemble),
) -> Result<FilterResult> {
    let j_count = options.particles;
    if j_count == 0 {
        return Err(Error::Invalid("the particle filter needs at least one particle".into()));
    }
    if !data.is_empty() && data.dim() != process.obs_dim() {
        return Err(Error::Dimension {
            what: "observation vector",
            expected: process.obs_dim(),
            got: data.dim(),
        });
    }
    let dim = process.state_dim();
    let grid = data.grid();
    let n_obs = data.len();
    let param_block = match (process.param_offset(), process.param_center()) {
        (Some(off), Some(center)) => {
            if center.len() != dim - off {
                return Err(Error::Dimension {
                    what: "parameter center",
                    expected: dim - off,
                    got: center.len(),
                });
            }
            Some((off..dim, center.to_vec()))
        }
        _ => None,
    };
    let state_range = 0..param_block.as_ref().map_or(dim, |(r, _)| r.start);

    let mut result = FilterResult {
        filter_means: Vec::new(),
        prediction_variances: Vec::with_capacity(n_obs),
        cond_loglik: Vec::with_capacity(n_obs),
        loglik: 0.0,
        ess: Vec::with_capacity(n_obs),
        state_filter_means: options.state_means.then(Vec::new),
    };

    // Step 1: initial filter particles.
    let mut filtered = ParticleEnsemble::new(j_count, dim);
    let init = stream.child(0);
    let failure = filtered
        .states
        .par_chunks_mut(dim.max(1))
        .enumerate()
        .find_map_first(|(j, z)| {
            let z = &mut z[..dim];
            match process.init(&init.child(j as u64), z) {
                Err(e) => Some(e),
                Ok(()) if z.iter().any(|v| !v.is_finite()) => Some(Error::ModelEvaluation {
                    step: 0,
                    callback: Callback::InitState,
                }),
                Ok(()) => None,
            }
        });
    if let Some(e) = failure {
        return Err(e);
    }
    if let Some((_, center)) = &param_block {
        result.filter_means.push(center.clone());
    }
    if let Some(means) = result.state_filter_means.as_mut() {
        means.push(filtered.mean(state_range.clone()));
    }
    observer(0, &filtered);

    let mut predicted = ParticleEnsemble::new(j_count, dim);
    predicted.stage = Stage::Prediction;
    let mut weights = vec![0.0; j_count];

    for n in 1..=n_obs {
        let (t_prev, t) = (grid.time(n - 1), grid.time(n));
        let y = data.get(n);
        let step = stream.child(n as u64);

        // Steps 3–4: propagate and weight.
        let prev = &filtered;
        let failure = predicted
            .states
            .par_chunks_mut(dim.max(1))
            .zip(predicted.log_weights.par_iter_mut())
            .enumerate()
            .find_map_first(|(j, (z, lw))| {
                let z = &mut z[..dim];
                if let Err(e) = process.transition(prev.particle(j), t_prev, t, &step.child(j as u64), z) {
                    return Some(e);
                }
                if z.iter().any(|v| !v.is_finite()) {
                    return Some(Error::ModelEvaluation {
                        step: n,
                        callback: Callback::Transition,
                    });
                }
                *lw = match y {
                    Some(y) => process.log_measurement(y, z, t),
                    None => 0.0,
                };
                if lw.is_nan() || *lw == f64::INFINITY {
                    return Some(Error::ModelEvaluation {
                        step: n,
                        callback: Callback::MeasurementDensity,
                    });
                }
                None
            });
        if let Some(e) = failure {
            return Err(e);
        }

        let summary = summarize_log_weights(&predicted.log_weights, &mut weights).ok_or(Error::Degeneracy {
            step: n,
            max_log_weight: f64::NEG_INFINITY,
        })?;
        let max_lw = summary.max_log_weight;
        result.cond_loglik.push(summary.log_mean_weight);
        result.loglik += summary.log_mean_weight;
        result.ess.push(summary.ess);

        if let Some((range, _)) = &param_block {
            let prev_mean = result.filter_means.last().expect("filter mean for previous step");
            result
                .prediction_variances
                .push(prediction_variance(&predicted, range.clone(), prev_mean));
        }

        // Steps 5–6: resample.
        let ancestors = options
            .resampler
            .resample(&weights, &mut step.named("resample").rng())
            .map_err(|e| match e {
                Error::Degeneracy { .. } => Error::Degeneracy {
                    step: n,
                    max_log_weight: max_lw,
                },
                other => other,
            })?;
        for (dst, &k) in filtered.states.chunks_exact_mut(dim.max(1)).zip(&ancestors) {
            dst[..dim].copy_from_slice(predicted.particle(k));
        }

        if let Some((range, _)) = &param_block {
            result.filter_means.push(filtered.mean(range.clone()));
        }
        if let Some(means) = result.state_filter_means.as_mut() {
            means.push(filtered.mean(state_range.clone()));
        }
        observer(n, &filtered);
    }

    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSummary {
    pub max_log_weight: f64,
    /// `log((1/J) Σ_j w_j)`.
    pub log_mean_weight: f64,
    /// `(Σw)² / Σw²`.
    pub ess: f64,
}

/// Exponentiate log-weights relative to their maximum into `weights` and
/// summarize them. `None` when every weight is zero.
pub fn summarize_log_weights(log_weights: &[f64], weights: &mut [f64]) -> Option<WeightSummary> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || log_weights.is_empty() {
        return None;
    }
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for (w, lw) in weights.iter_mut().zip(log_weights) {
        *w = (lw - max).exp();
        sum += *w;
        sum_sq += *w * *w;
    }
    Some(WeightSummary {
        max_log_weight: max,
        log_mean_weight: max + (sum / log_weights.len() as f64).ln(),
        ess: sum * sum / sum_sq,
    })
}

/// `(1/(J−1)) Σ_j (Θ_j − center)(Θ_j − center)ᵀ` over the parameter block.
fn prediction_variance(ensemble: &ParticleEnsemble, range: std::ops::Range<usize>, center: &[f64]) -> DMatrix<f64> {
    let d = range.len();
    let mut v = DMatrix::zeros(d, d);
    let mut dev = vec![0.0; d];
    for p in ensemble.particles() {
        for (k, (x, c)) in p[range.clone()].iter().zip(center).enumerate() {
            dev[k] = x - c;
        }
        for a in 0..d {
            for b in 0..=a {
                v[(a, b)] += dev[a] * dev[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            v[(b, a)] = v[(a, b)];
        }
    }
    if ensemble.len() > 1 {
        v /= (ensemble.len() - 1) as f64;
    } else {
        v.fill(0.0);
    }
    v
}
