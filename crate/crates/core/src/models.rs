//! Ready-made models beyond the linear-Gaussian oracle family.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::model::Model;
use crate::oracle::LgssSpec;
use crate::rng::StreamRng;
use crate::transform::{ParamTransform, Transform};

/// Ornstein–Uhlenbeck process sampled exactly at the observation times and
/// observed with Gaussian noise.
///
/// `dX = λ(μ − X) dt + s dW`, `X_0` from the stationary law, `Y_n ~ N(X_n, r)`.
/// Parameters: `mu` (identity), `lambda`, `s`, `r` (log).
#[derive(Debug, Clone)]
pub struct OuDiscretized {
    transform: ParamTransform,
}

impl Default for OuDiscretized {
    fn default() -> Self {
        Self {
            transform: ParamTransform::new([
                ("mu", Transform::Identity),
                ("lambda", Transform::Log),
                ("s", Transform::Log),
                ("r", Transform::Log),
            ]),
        }
    }
}

impl OuDiscretized {
    fn moments(theta: &[f64], dt: f64) -> (f64, f64) {
        let (lambda, s) = (theta[1], theta[2]);
        let decay = (-lambda * dt).exp();
        let var = s * s * (1.0 - decay * decay) / (2.0 * lambda);
        (decay, var)
    }

    /// The equivalent linear-Gaussian model for observations spaced `dt` apart.
    pub fn lgss(&self, theta: &[f64], dt: f64) -> LgssSpec {
        let (mu, lambda, s, r) = (theta[0], theta[1], theta[2], theta[3]);
        let (decay, var) = Self::moments(theta, dt);
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        LgssSpec {
            a: m(decay),
            b: DVector::from_element(1, mu * (1.0 - decay)),
            q: m(var),
            h: m(1.0),
            r: m(r),
            m0: DVector::from_element(1, mu),
            p0: m(s * s / (2.0 * lambda)),
        }
    }
}

impl Model for OuDiscretized {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn transform(&self) -> &ParamTransform {
        &self.transform
    }

    fn init_state(&self, theta: &[f64], rng: &mut StreamRng, x0: &mut [f64]) {
        let sd = theta[2] / (2.0 * theta[1]).sqrt();
        let z: f64 = StandardNormal.sample(rng);
        x0[0] = theta[0] + sd * z;
    }

    fn transition(&self, x_prev: &[f64], theta: &[f64], t_prev: f64, t: f64, rng: &mut StreamRng, x: &mut [f64]) {
        let (decay, var) = Self::moments(theta, t - t_prev);
        let z: f64 = StandardNormal.sample(rng);
        x[0] = theta[0] + (x_prev[0] - theta[0]) * decay + var.sqrt() * z;
    }

    fn log_measurement_density(&self, y: &[f64], x: &[f64], theta: &[f64], _: f64) -> f64 {
        let r = theta[3];
        let e = y[0] - x[0];
        -0.5 * ((2.0 * std::f64::consts::PI * r).ln() + e * e / r)
    }

    fn sample_observation(&self, x: &[f64], theta: &[f64], _: f64, rng: &mut StreamRng, y: &mut [f64]) -> bool {
        let z: f64 = StandardNormal.sample(rng);
        y[0] = x[0] + theta[3].sqrt() * z;
        true
    }
}

/// A Gaussian random walk whose observations carry no information: the
/// measurement density is the constant `c` whatever the state. Observations
/// are simulated as the state plus unit noise.
#[derive(Debug, Clone)]
pub struct FlatObservation {
    transform: ParamTransform,
}

impl Default for FlatObservation {
    fn default() -> Self {
        Self {
            transform: ParamTransform::new([("c", Transform::Log)]),
        }
    }
}

impl Model for FlatObservation {
    fn state_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn transform(&self) -> &ParamTransform {
        &self.transform
    }

    fn init_state(&self, _: &[f64], rng: &mut StreamRng, x0: &mut [f64]) {
        x0[0] = StandardNormal.sample(rng);
    }

    fn transition(&self, x_prev: &[f64], _: &[f64], _: f64, _: f64, rng: &mut StreamRng, x: &mut [f64]) {
        let z: f64 = StandardNormal.sample(rng);
        x[0] = x_prev[0] + z;
    }

    fn log_measurement_density(&self, _: &[f64], _: &[f64], theta: &[f64], _: f64) -> f64 {
        theta[0].ln()
    }

    fn sample_observation(&self, x: &[f64], _: &[f64], _: f64, rng: &mut StreamRng, y: &mut [f64]) -> bool {
        let z: f64 = StandardNormal.sample(rng);
        y[0] = x[0] + z;
        true
    }
}
