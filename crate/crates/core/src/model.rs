//! Partially observed Markov models and their simulation.
//!
//! Users describe a model through [`Model`]: an initial-state sampler, a
//! transition simulator and a measurement density. Transition densities are
//! never required. The engine works with [`Process`], a model whose
//! parameters are already fixed; [`Bound`] makes one from a `Model` and an
//! unconstrained [`ParamVector`], and the kernel module builds the
//! parameter-perturbed process.

use serde::{Deserialize, Serialize};

use crate::error::{Callback, Error, Result};
use crate::rng::{RngStream, StreamRng};
use crate::transform::{ParamTransform, ParamVector};

/// Observation times `t_1 < ... < t_N` together with the initial time `t_0 < t_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t0: f64,
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t0: f64, times: Vec<f64>) -> Result<Self> {
        if !t0.is_finite() || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Invalid("time grid contains non-finite values".into()));
        }
        let mut prev = t0;
        for (n, &t) in times.iter().enumerate() {
            if t <= prev {
                return Err(Error::Invalid(format!(
                    "time grid is not strictly increasing at index {}",
                    n + 1
                )));
            }
            prev = t;
        }
        Ok(Self { t0, times })
    }

    /// `t_0 = t0`, `t_n = t0 + n dt`.
    pub fn regular(t0: f64, dt: f64, n: usize) -> Result<Self> {
        Self::new(t0, (1..=n).map(|i| t0 + dt * i as f64).collect())
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Number of observation times N.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `t_n` for `n = 0..=N`.
    pub fn time(&self, n: usize) -> f64 {
        if n == 0 {
            self.t0
        } else {
            self.times[n - 1]
        }
    }
}

/// Observations `y_{1:N}` on a time grid; `None` marks a missing observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    grid: TimeGrid,
    dim: usize,
    values: Vec<Option<Vec<f64>>>,
}

impl ObservationSeries {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<Option<Vec<f64>>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension {
                what: "observation series length",
                expected: grid.len(),
                got: values.len(),
            });
        }
        for (n, y) in values.iter().enumerate() {
            if let Some(y) = y {
                if y.len() != dim {
                    return Err(Error::Dimension {
                        what: "observation vector",
                        expected: dim,
                        got: y.len(),
                    });
                }
                if y.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Invalid(format!("observation {} is not finite", n + 1)));
                }
            }
        }
        Ok(Self { grid, dim, values })
    }

    /// A fully observed series.
    pub fn complete(grid: TimeGrid, values: Vec<Vec<f64>>) -> Result<Self> {
        let dim = values.first().map_or(0, Vec::len);
        Self::new(grid, dim, values.into_iter().map(Some).collect())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `y_n` for `n = 1..=N`.
    pub fn get(&self, n: usize) -> Option<&[f64]> {
        self.values[n - 1].as_deref()
    }

    pub fn values(&self) -> &[Option<Vec<f64>>] {
        &self.values
    }

    /// The first `n` observations.
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.min(self.len());
        Self {
            grid: TimeGrid {
                t0: self.grid.t0,
                times: self.grid.times[..n].to_vec(),
            },
            dim: self.dim,
            values: self.values[..n].to_vec(),
        }
    }
}

/// A partially observed Markov model given by simulators and a measurement density.
///
/// Every callback receives the parameter vector on its natural scale. Callbacks
/// may be invoked concurrently from several threads.
pub trait Model: Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    /// Names and transforms of the parameters; its length is the parameter dimension.
    fn transform(&self) -> &ParamTransform;

    fn param_dim(&self) -> usize {
        self.transform().len()
    }

    /// Draw `x_0 ~ f(x_0 | θ)` into `x0`.
    fn init_state(&self, theta: &[f64], rng: &mut StreamRng, x0: &mut [f64]);

    /// Draw `x_n ~ f(x_n | x_{n-1}, θ)` into `x`.
    fn transition(&self, x_prev: &[f64], theta: &[f64], t_prev: f64, t: f64, rng: &mut StreamRng, x: &mut [f64]);

    /// `log f(y_n | x_n, θ)`; `-inf` for a zero density.
    fn log_measurement_density(&self, y: &[f64], x: &[f64], theta: &[f64], t: f64) -> f64;

    /// Draw `y_n ~ f(y_n | x_n, θ)` into `y`. Returns `false` if the model has
    /// no observation sampler; only simulation needs one.
    fn sample_observation(&self, _x: &[f64], _theta: &[f64], _t: f64, _rng: &mut StreamRng, _y: &mut [f64]) -> bool {
        false
    }
}

/// Stream label for state draws.
pub(crate) const STATE_STREAM: &str = "x";
/// Stream label for observation draws.
pub(crate) const OBS_STREAM: &str = "y";

/// A Markov process with fixed parameters, as consumed by the particle filter.
///
/// For processes built on the extended state `(x, θ)`, `param_offset` gives
/// the index at which the θ block starts.
pub trait Process: Sync {
    fn state_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;

    fn param_offset(&self) -> Option<usize> {
        None
    }

    /// The parameter value the θ block is centered on at time zero.
    fn param_center(&self) -> Option<&[f64]> {
        None
    }

    fn init(&self, stream: &RngStream, z0: &mut [f64]) -> Result<()>;

    fn transition(&self, z_prev: &[f64], t_prev: f64, t: f64, stream: &RngStream, z: &mut [f64]) -> Result<()>;

    fn log_measurement(&self, y: &[f64], z: &[f64], t: f64) -> f64;

    fn sample_observation(&self, z: &[f64], t: f64, stream: &RngStream, y: &mut [f64]) -> bool;
}

/// A [`Model`] evaluated at a fixed parameter vector.
pub struct Bound<'a, M: Model + ?Sized> {
    model: &'a M,
    natural: Vec<f64>,
}

impl<'a, M: Model + ?Sized> Bound<'a, M> {
    pub fn new(model: &'a M, theta: &ParamVector) -> Result<Self> {
        if theta.len() != model.param_dim() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: model.param_dim(),
                got: theta.len(),
            });
        }
        Ok(Self {
            model,
            natural: model.transform().from_unconstrained(theta),
        })
    }

    pub fn natural(&self) -> &[f64] {
        &self.natural
    }
}

impl<M: Model + ?Sized> Process for Bound<'_, M> {
    fn state_dim(&self) -> usize {
        self.model.state_dim()
    }

    fn obs_dim(&self) -> usize {
        self.model.obs_dim()
    }

    fn init(&self, stream: &RngStream, z0: &mut [f64]) -> Result<()> {
        let mut rng = stream.named(STATE_STREAM).rng();
        self.model.init_state(&self.natural, &mut rng, z0);
        Ok(())
    }

    fn transition(&self, z_prev: &[f64], t_prev: f64, t: f64, stream: &RngStream, z: &mut [f64]) -> Result<()> {
        let mut rng = stream.named(STATE_STREAM).rng();
        self.model.transition(z_prev, &self.natural, t_prev, t, &mut rng, z);
        Ok(())
    }

    fn log_measurement(&self, y: &[f64], z: &[f64], t: f64) -> f64 {
        self.model.log_measurement_density(y, z, &self.natural, t)
    }

    fn sample_observation(&self, z: &[f64], t: f64, stream: &RngStream, y: &mut [f64]) -> bool {
        let mut rng = stream.named(OBS_STREAM).rng();
        self.model.sample_observation(z, &self.natural, t, &mut rng, y)
    }
}

/// A simulated state trajectory `x_{0:N}` and the matching observations.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub states: Vec<Vec<f64>>,
    pub observations: ObservationSeries,
}

/// Simulate `model` at `theta` on `grid`.
pub fn simulate<M: Model + ?Sized>(
    model: &M,
    theta: &ParamVector,
    grid: &TimeGrid,
    stream: &RngStream,
) -> Result<Simulation> {
    simulate_process(&Bound::new(model, theta)?, grid, stream)
}

/// Simulate any [`Process`]. Step `n` draws from `stream.child(n)`.
pub fn simulate_process<P: Process + ?Sized>(process: &P, grid: &TimeGrid, stream: &RngStream) -> Result<Simulation> {
    let dz = process.state_dim();
    let dy = process.obs_dim();
    let mut states = Vec::with_capacity(grid.len() + 1);
    let mut observations = Vec::with_capacity(grid.len());

    let mut z = vec![0.0; dz];
    process.init(&stream.child(0), &mut z)?;
    check_finite(&z, 0, Callback::InitState)?;
    states.push(z);

    for n in 1..=grid.len() {
        let step = stream.child(n as u64);
        let mut z = vec![0.0; dz];
        process.transition(&states[n - 1], grid.time(n - 1), grid.time(n), &step, &mut z)?;
        check_finite(&z, n, Callback::Transition)?;
        let mut y = vec![0.0; dy];
        if !process.sample_observation(&z, grid.time(n), &step, &mut y) {
            return Err(Error::NoObservationSampler);
        }
        check_finite(&y, n, Callback::ObservationSampler)?;
        states.push(z);
        observations.push(y);
    }

    Ok(Simulation {
        states,
        observations: ObservationSeries::new(grid.clone(), dy, observations.into_iter().map(Some).collect())?,
    })
}

pub(crate) fn check_finite(values: &[f64], step: usize, callback: Callback) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::ModelEvaluation { step, callback })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// x_n = x_{n-1}, x_0 = 3, y_n = x_n.
    struct Constant {
        transform: ParamTransform,
    }

    impl Model for Constant {
        fn state_dim(&self) -> usize {
            1
        }
        fn obs_dim(&self) -> usize {
            1
        }
        fn transform(&self) -> &ParamTransform {
            &self.transform
        }
        fn init_state(&self, _: &[f64], _: &mut StreamRng, x0: &mut [f64]) {
            x0[0] = 3.0;
        }
        fn transition(&self, xp: &[f64], _: &[f64], _: f64, _: f64, _: &mut StreamRng, x: &mut [f64]) {
            x[0] = xp[0];
        }
        fn log_measurement_density(&self, _: &[f64], _: &[f64], _: &[f64], _: f64) -> f64 {
            0.0
        }
        fn sample_observation(&self, x: &[f64], _: &[f64], _: f64, _: &mut StreamRng, y: &mut [f64]) -> bool {
            y[0] = x[0];
            true
        }
    }

    /// Blows up at t > 2.
    struct Exploding;

    impl Model for Exploding {
        fn state_dim(&self) -> usize {
            1
        }
        fn obs_dim(&self) -> usize {
            1
        }
        fn transform(&self) -> &ParamTransform {
            static T: std::sync::OnceLock<ParamTransform> = std::sync::OnceLock::new();
            T.get_or_init(|| ParamTransform::identity(0))
        }
        fn init_state(&self, _: &[f64], _: &mut StreamRng, x0: &mut [f64]) {
            x0[0] = 0.0;
        }
        fn transition(&self, _: &[f64], _: &[f64], _: f64, t: f64, _: &mut StreamRng, x: &mut [f64]) {
            x[0] = if t > 2.0 { f64::NAN } else { t };
        }
        fn log_measurement_density(&self, _: &[f64], _: &[f64], _: &[f64], _: f64) -> f64 {
            0.0
        }
        fn sample_observation(&self, x: &[f64], _: &[f64], _: f64, _: &mut StreamRng, y: &mut [f64]) -> bool {
            y[0] = x[0];
            true
        }
    }

    #[test]
    fn degenerate_dynamics() {
        let model = Constant {
            transform: ParamTransform::identity(0),
        };
        let grid = TimeGrid::regular(0.0, 1.0, 10).unwrap();
        let sim = simulate(&model, &ParamVector::new(vec![]).unwrap(), &grid, &RngStream::new(1)).unwrap();
        assert_eq!(sim.states.len(), 11);
        assert!(sim.states.iter().all(|x| x == &[3.0]));
        assert!((1..=10).all(|n| sim.observations.get(n) == Some(&[3.0][..])));
    }

    #[test]
    fn non_finite_callback_output_is_reported() {
        let grid = TimeGrid::regular(0.0, 1.0, 5).unwrap();
        let err = simulate(
            &Exploding,
            &ParamVector::new(vec![]).unwrap(),
            &grid,
            &RngStream::new(1),
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::ModelEvaluation {
                step: 3,
                callback: Callback::Transition
            }
        );
    }

    #[test]
    fn time_grid_validation() {
        assert!(TimeGrid::new(0.0, vec![1.0, 1.0]).is_err());
        assert!(TimeGrid::new(1.0, vec![1.0]).is_err());
        let g = TimeGrid::new(0.0, vec![0.5, 2.0]).unwrap();
        assert_eq!((g.time(0), g.time(2), g.len()), (0.0, 2.0, 2));
    }

    #[test]
    fn observation_series_validation() {
        let g = TimeGrid::regular(0.0, 1.0, 2).unwrap();
        assert!(ObservationSeries::new(g.clone(), 1, vec![Some(vec![1.0])]).is_err());
        assert!(ObservationSeries::new(g.clone(), 1, vec![Some(vec![1.0]), Some(vec![f64::INFINITY])]).is_err());
        assert!(ObservationSeries::new(g.clone(), 1, vec![Some(vec![1.0, 2.0]), None]).is_err());
        let s = ObservationSeries::new(g, 1, vec![None, Some(vec![2.0])]).unwrap();
        assert_eq!(s.get(1), None);
        assert_eq!(s.truncated(1).len(), 1);
    }

    #[test]
    fn bound_checks_parameter_dimension() {
        let model = Constant {
            transform: ParamTransform::identity(1),
        };
        assert!(Bound::new(&model, &ParamVector::new(vec![]).unwrap()).is_err());
    }
}
