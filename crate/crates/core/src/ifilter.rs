//! Score estimation from filter moments of the perturbed model, and the
//! iterated-filtering recursion built on it.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernel::{extend_model, KernelSpec, PerturbationScales};
use crate::model::{Model, ObservationSeries};
use crate::resample::Resampler;
use crate::rng::RngStream;
use crate::schedule::{Schedule, ScheduleStep};
use crate::smc::{filter_process, FilterOptions, FilterResult};
use crate::transform::ParamVector;

/// Condition number above which a prediction variance counts as singular.
pub const MAX_CONDITION: f64 = 1e12;
const JITTER: f64 = 1e-10;

#[derive(Debug, Clone, Serialize)]
pub struct ScoreEstimate {
    /// `Σ_n (Ṽ^P_n)⁻¹ (θ̃^F_n − θ̃^F_{n−1})`.
    pub value: Vec<f64>,
    /// The summands, one per observation time.
    pub terms: Vec<Vec<f64>>,
    pub filter: FilterResult,
}

/// Estimate the log-likelihood gradient at `theta` (unconstrained scale) from
/// a particle filter run on the parameter-perturbed model.
pub fn score_estimate<M: Model + ?Sized>(
    model: &M,
    theta: &ParamVector,
    data: &ObservationSeries,
    kernel: &KernelSpec,
    scales: PerturbationScales,
    options: &FilterOptions,
    stream: &RngStream,
) -> Result<ScoreEstimate> {
    let d = model.param_dim();
    let min_particles = 2.max(d + 1);
    if options.particles < min_particles {
        return Err(Error::Invalid(format!(
            "score estimation with {d} parameters needs at least {min_particles} particles, got {}",
            options.particles
        )));
    }
    let extended = extend_model(model, kernel, scales, theta)?;
    let filter = filter_process(&extended, data, options, stream)?;

    let mut value = DVector::zeros(d);
    let mut terms = Vec::with_capacity(data.len());
    for (n, v) in filter.prediction_variances.iter().enumerate() {
        let step = DVector::from_iterator(
            d,
            filter.filter_means[n + 1]
                .iter()
                .zip(&filter.filter_means[n])
                .map(|(a, b)| a - b),
        );
        let term = solve_spd(v, &step, n + 1)?;
        value += &term;
        terms.push(term.as_slice().to_vec());
    }
    Ok(ScoreEstimate {
        value: value.as_slice().to_vec(),
        terms,
        filter,
    })
}

fn condition_number(v: &DMatrix<f64>) -> f64 {
    let eig = v.clone().symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Solve `V x = rhs` for a Monte Carlo covariance estimate, jittering the
/// diagonal by `1e-10·trace(V)` once if it is numerically singular.
fn solve_spd(v: &DMatrix<f64>, rhs: &DVector<f64>, step: usize) -> Result<DVector<f64>> {
    let attempt = |m: &DMatrix<f64>| -> Option<DVector<f64>> {
        if condition_number(m) > MAX_CONDITION {
            return None;
        }
        m.clone().cholesky().map(|c| c.solve(rhs))
    };
    if let Some(x) = attempt(v) {
        return Ok(x);
    }
    let trace = v.trace();
    if trace > 0.0 && trace.is_finite() {
        let jittered = v + DMatrix::identity(v.nrows(), v.ncols()) * (JITTER * trace);
        if let Some(x) = attempt(&jittered) {
            return Ok(x);
        }
    }
    Err(Error::SingularVariance {
        step,
        condition: condition_number(v),
    })
}

/// Diagnostics recorded for each iteration of [`mif_run`].
#[derive(Debug, Clone, Serialize)]
pub struct MifIteration {
    pub iteration: usize,
    pub settings: ScheduleStep,
    /// Log-likelihood estimate of the perturbed model at this iteration.
    pub loglik: f64,
    pub score: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MifResult {
    /// `θ̂_0, ..., θ̂_M` on the unconstrained scale.
    pub trajectory: Vec<Vec<f64>>,
    /// The same on the natural scale.
    pub natural: Vec<Vec<f64>>,
    pub iterations: Vec<MifIteration>,
    pub schedule: Schedule,
    /// First iteration whose estimate left the divergence bound, if any.
    pub left_bound_at: Option<usize>,
}

impl MifResult {
    pub fn last(&self) -> &[f64] {
        self.trajectory.last().expect("trajectory holds the starting point")
    }
}

/// A run that stopped early; `partial` holds everything up to the failure.
#[derive(Debug, Clone)]
pub struct MifAbort {
    pub partial: MifResult,
    pub iteration: usize,
    pub error: Error,
}

impl std::fmt::Display for MifAbort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "iterated filtering aborted at iteration {}: {}",
            self.iteration, self.error
        )
    }
}

impl std::error::Error for MifAbort {}

#[derive(Debug, Clone)]
pub struct MifOptions {
    pub kernel: KernelSpec,
    pub schedule: Schedule,
    pub resampler: Resampler,
    /// Flag (without stopping) the first estimate with `max|θ̂_i|` above this.
    pub divergence_bound: Option<f64>,
}

/// Run `θ̂_{m+1} = θ̂_m + a_m · score_estimate(θ̂_m; σ_m, τ_m, J_m)`.
/// Iteration `m` draws from `stream.child(m)`.
#[allow(clippy::result_large_err)]
pub fn mif_run<M: Model + ?Sized>(
    model: &M,
    data: &ObservationSeries,
    start: &ParamVector,
    options: &MifOptions,
    stream: &RngStream,
) -> std::result::Result<MifResult, MifAbort> {
    let transform = model.transform();
    let mut result = MifResult {
        trajectory: vec![start.to_vec()],
        natural: vec![transform.from_unconstrained(start)],
        iterations: Vec::with_capacity(options.schedule.iterations()),
        schedule: options.schedule.clone(),
        left_bound_at: None,
    };
    let abort = |result: MifResult, iteration, error| MifAbort {
        partial: result,
        iteration,
        error,
    };
    if let Err(msg) = options.schedule.validate() {
        return Err(abort(result, 0, Error::Invalid(msg)));
    }

    let mut theta = start.clone();
    for m in 0..options.schedule.iterations() {
        let settings = options.schedule.step(m);
        let outcome = PerturbationScales::new(settings.sigma, settings.tau).and_then(|scales| {
            let filter = FilterOptions::new(settings.particles).resampler(options.resampler);
            score_estimate(
                model,
                &theta,
                data,
                &options.kernel,
                scales,
                &filter,
                &stream.child(m as u64),
            )
        });
        let score = match outcome {
            Ok(s) => s,
            Err(e) => return Err(abort(result, m, e)),
        };
        let next: Vec<f64> = theta
            .iter()
            .zip(&score.value)
            .map(|(t, s)| t + settings.gain * s)
            .collect();
        theta = match ParamVector::new(next) {
            Ok(t) => t,
            Err(_) => return Err(abort(result, m, Error::Diverged { iteration: m })),
        };
        if let Some(bound) = options.divergence_bound {
            if result.left_bound_at.is_none() && theta.iter().any(|v| v.abs() > bound) {
                result.left_bound_at = Some(m + 1);
            }
        }
        result.iterations.push(MifIteration {
            iteration: m,
            settings,
            loglik: score.filter.loglik,
            score: score.value,
        });
        result.natural.push(transform.from_unconstrained(&theta));
        result.trajectory.push(theta.to_vec());
    }
    Ok(result)
}
