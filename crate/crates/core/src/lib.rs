//! Maximum likelihood for partially observed Markov models by iterated
//! filtering.
//!
//! A model is supplied as simulators plus a measurement density ([`Model`]).
//! [`particle_filter`] estimates its likelihood without bias;
//! [`score_estimate`] turns the filtering moments of a parameter-perturbed
//! copy of the model into a gradient estimate; [`mif_run`] iterates that into
//! a stochastic-approximation search for the maximum. The [`oracle`] module
//! holds exact linear-Gaussian references used to check all of it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod ifilter;
pub mod kernel;
pub mod model;
pub mod models;
pub mod oracle;
pub mod resample;
pub mod rng;
pub mod schedule;
pub mod smc;
pub mod transform;

pub use error::{Callback, Error, Result};
pub use ifilter::{mif_run, score_estimate, MifAbort, MifIteration, MifOptions, MifResult, ScoreEstimate};
pub use kernel::{extend_model, Extended, KernelSpec, PerturbationScales};
pub use model::{simulate, simulate_process, Bound, Model, ObservationSeries, Process, Simulation, TimeGrid};
pub use resample::{multinomial_resample, systematic_resample, Resampler};
pub use rng::{RngStream, StreamRng};
pub use schedule::{
    check_schedule, Gain, PowerLaw, PowerLawSchedule, PracticalSchedule, RateCondition, Schedule, ScheduleReport,
    ScheduleStep, Tempering,
};
pub use smc::{
    filter_process, filter_process_observed, particle_filter, summarize_log_weights, FilterOptions, FilterResult,
    ParticleEnsemble, Stage, WeightSummary,
};
pub use transform::{ParamTransform, ParamVector, Transform};
