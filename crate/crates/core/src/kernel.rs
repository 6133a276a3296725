//! Random-walk perturbation kernel and the parameter-perturbed model.
//!
//! The kernel is a mean-zero multivariate normal with scale matrix Σ,
//! truncated to the Mahalanobis ball of radius `c` and renormalized, so it
//! has compact spherical support (after whitening) and a smooth density
//! inside it.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Callback, Error, Result};
use crate::model::{check_finite, Model, Process, OBS_STREAM, STATE_STREAM};
use crate::rng::{RngStream, StreamRng};
use crate::transform::ParamVector;

pub const DEFAULT_RADIUS: f64 = 6.0;
const MAX_REJECTIONS: usize = 100;
const THETA_STREAM: &str = "theta";

/// P(χ²_d ≤ r²).
fn chi2_mass(d: usize, r: f64) -> f64 {
    gamma_lr(d as f64 / 2.0, r * r / 2.0)
}

#[derive(Debug, Clone)]
pub struct KernelSpec {
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    log_det_chol: f64,
    radius: f64,
    mass: f64,
}

impl KernelSpec {
    pub fn new(sigma: DMatrix<f64>, radius: f64) -> Result<Self> {
        let d = sigma.nrows();
        if d == 0 || sigma.ncols() != d {
            return Err(Error::Invalid(
                "kernel scale matrix must be square and non-empty".into(),
            ));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::Invalid(format!(
                "truncation radius must be positive, got {radius}"
            )));
        }
        let asym = (&sigma - sigma.transpose()).abs().max();
        if !(asym <= 1e-12 * sigma.abs().max()) {
            return Err(Error::Invalid("kernel scale matrix is not symmetric".into()));
        }
        let eig = sigma.clone().symmetric_eigenvalues();
        if eig.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Invalid("kernel scale matrix is not positive definite".into()));
        }
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Invalid("kernel scale matrix is not positive definite".into()))?
            .unpack();
        let log_det_chol = chol.diagonal().iter().map(|v| v.ln()).sum();
        Ok(Self {
            mass: chi2_mass(d, radius),
            sigma,
            chol,
            log_det_chol,
            radius,
        })
    }

    pub fn diagonal(diag: &[f64], radius: f64) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)), radius)
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim], DEFAULT_RADIUS).expect("identity is positive definite")
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Ratio of the truncated covariance to the nominal `s²Σ`.
    ///
    /// For a radially truncated normal this is `P(χ²_{d+2} ≤ c²) / P(χ²_d ≤ c²)`.
    pub fn variance_factor(&self) -> f64 {
        chi2_mass(self.dim() + 2, self.radius) / self.mass
    }

    /// Draw a perturbation with nominal covariance `scale²Σ` into `out`.
    pub fn sample_into(&self, scale: f64, rng: &mut StreamRng, out: &mut [f64]) -> Result<()> {
        debug_assert!(scale >= 0.0);
        let d = self.dim();
        if scale == 0.0 {
            out[..d].fill(0.0);
            return Ok(());
        }
        let r2 = self.radius * self.radius;
        let mut z = [0.0f64; 8];
        let mut z_heap;
        let z: &mut [f64] = if d <= z.len() {
            &mut z[..d]
        } else {
            z_heap = vec![0.0; d];
            &mut z_heap
        };
        for _ in 0..MAX_REJECTIONS {
            let mut norm2 = 0.0;
            for v in z.iter_mut() {
                *v = StandardNormal.sample(rng);
                norm2 += *v * *v;
            }
            if norm2 <= r2 {
                for i in 0..d {
                    let mut acc = 0.0;
                    for k in 0..=i {
                        acc += self.chol[(i, k)] * z[k];
                    }
                    out[i] = scale * acc;
                }
                return Ok(());
            }
        }
        Err(Error::KernelRejection {
            attempts: MAX_REJECTIONS,
        })
    }

    pub fn sample(&self, scale: f64, rng: &mut StreamRng) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(scale, rng, &mut out)?;
        Ok(out)
    }

    /// Squared Mahalanobis norm of `u` with respect to `scale²Σ`.
    fn mahalanobis2(&self, scale: f64, u: &[f64]) -> f64 {
        let w = self
            .chol
            .solve_lower_triangular(&DVector::from_column_slice(u))
            .expect("cholesky factor has a positive diagonal");
        w.norm_squared() / (scale * scale)
    }

    pub fn log_density(&self, scale: f64, u: &[f64]) -> Result<f64> {
        if !(scale > 0.0) {
            return Err(Error::Invalid(format!(
                "kernel density needs a positive scale, got {scale}"
            )));
        }
        if u.len() != self.dim() {
            return Err(Error::Dimension {
                what: "kernel argument",
                expected: self.dim(),
                got: u.len(),
            });
        }
        let m2 = self.mahalanobis2(scale, u);
        if m2 > self.radius * self.radius {
            return Ok(f64::NEG_INFINITY);
        }
        let d = self.dim() as f64;
        Ok(-0.5 * m2
            - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
            - d * scale.ln()
            - self.log_det_chol
            - self.mass.ln())
    }

    pub fn density(&self, scale: f64, u: &[f64]) -> Result<f64> {
        self.log_density(scale, u).map(f64::exp)
    }
}

/// Random-walk scale σ and initial spread τ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationScales {
    pub sigma: f64,
    pub tau: f64,
}

impl PerturbationScales {
    pub fn new(sigma: f64, tau: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::Invalid(format!("sigma must be non-negative, got {sigma}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Invalid(format!("tau must be positive, got {tau}")));
        }
        Ok(Self { sigma, tau })
    }
}

/// The base model with a random-walk parameter process attached.
///
/// State layout is `z = (x, θ)` with θ unconstrained. Initialization draws
/// `θ_0 = center + τ·κ` and `x_0 ~ f(x_0 | θ_0)`; each step draws
/// `θ_n = θ_{n-1} + σ·κ` and `x_n ~ f(x_n | x_{n-1}, θ_{n-1})`; the
/// measurement density is `f(y_n | x_n, θ_n)`. Parameter increments and state
/// draws use disjoint streams.
pub struct Extended<'a, M: Model + ?Sized> {
    model: &'a M,
    kernel: &'a KernelSpec,
    scales: PerturbationScales,
    center: ParamVector,
}

pub fn extend_model<'a, M: Model + ?Sized>(
    model: &'a M,
    kernel: &'a KernelSpec,
    scales: PerturbationScales,
    center: &ParamVector,
) -> Result<Extended<'a, M>> {
    let d = model.param_dim();
    if kernel.dim() != d {
        return Err(Error::Dimension {
            what: "kernel scale matrix",
            expected: d,
            got: kernel.dim(),
        });
    }
    if center.len() != d {
        return Err(Error::Dimension {
            what: "parameter vector",
            expected: d,
            got: center.len(),
        });
    }
    Ok(Extended {
        model,
        kernel,
        scales,
        center: center.clone(),
    })
}

impl<M: Model + ?Sized> Extended<'_, M> {
    fn dx(&self) -> usize {
        self.model.state_dim()
    }

    fn natural(&self, theta: &[f64]) -> Vec<f64> {
        self.model.transform().from_unconstrained(theta)
    }

    pub fn scales(&self) -> PerturbationScales {
        self.scales
    }

    pub fn center(&self) -> &ParamVector {
        &self.center
    }
}

impl<M: Model + ?Sized> Process for Extended<'_, M> {
    fn state_dim(&self) -> usize {
        self.dx() + self.model.param_dim()
    }

    fn obs_dim(&self) -> usize {
        self.model.obs_dim()
    }

    fn param_offset(&self) -> Option<usize> {
        Some(self.dx())
    }

    fn param_center(&self) -> Option<&[f64]> {
        Some(&self.center)
    }

    fn init(&self, stream: &RngStream, z0: &mut [f64]) -> Result<()> {
        let (x, theta) = z0.split_at_mut(self.dx());
        let mut rng = stream.named(THETA_STREAM).rng();
        self.kernel.sample_into(self.scales.tau, &mut rng, theta)?;
        for (t, c) in theta.iter_mut().zip(self.center.iter()) {
            *t += c;
        }
        let natural = self.natural(theta);
        check_finite(&natural, 0, Callback::InitState)?;
        let mut rng = stream.named(STATE_STREAM).rng();
        self.model.init_state(&natural, &mut rng, x);
        Ok(())
    }

    fn transition(&self, z_prev: &[f64], t_prev: f64, t: f64, stream: &RngStream, z: &mut [f64]) -> Result<()> {
        let dx = self.dx();
        let (x_prev, theta_prev) = z_prev.split_at(dx);
        let (x, theta) = z.split_at_mut(dx);
        let mut rng = stream.named(THETA_STREAM).rng();
        self.kernel.sample_into(self.scales.sigma, &mut rng, theta)?;
        for (t, p) in theta.iter_mut().zip(theta_prev) {
            *t += p;
        }
        let natural = self.natural(theta_prev);
        let mut rng = stream.named(STATE_STREAM).rng();
        self.model.transition(x_prev, &natural, t_prev, t, &mut rng, x);
        Ok(())
    }

    fn log_measurement(&self, y: &[f64], z: &[f64], t: f64) -> f64 {
        let (x, theta) = z.split_at(self.dx());
        self.model.log_measurement_density(y, x, &self.natural(theta), t)
    }

    fn sample_observation(&self, z: &[f64], t: f64, stream: &RngStream, y: &mut [f64]) -> bool {
        let (x, theta) = z.split_at(self.dx());
        let mut rng = stream.named(OBS_STREAM).rng();
        self.model.sample_observation(x, &self.natural(theta), t, &mut rng, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate, simulate_process, TimeGrid};
    use crate::oracle::LgssModel;

    /// Simpson's rule on [a, b] with n (even) panels.
    fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
        let h = (b - a) / n as f64;
        let mut s = f(a) + f(b);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * f(a + i as f64 * h);
        }
        s * h / 3.0
    }

    /// E|z|²/d restricted to |z| ≤ c, for z ~ N(0, I_d), by radial quadrature.
    fn radial_variance_factor(d: usize, c: f64) -> f64 {
        let num = simpson(|r| r.powi(d as i32 + 1) * (-r * r / 2.0).exp(), 0.0, c, 20_000);
        let den = simpson(|r| r.powi(d as i32 - 1) * (-r * r / 2.0).exp(), 0.0, c, 20_000);
        num / (d as f64 * den)
    }

    #[test]
    fn zero_scale_is_exactly_zero() {
        let k = KernelSpec::identity(3);
        let mut rng = RngStream::new(1).rng();
        assert_eq!(k.sample(0.0, &mut rng).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn draws_stay_in_support() {
        let k = KernelSpec::identity(2);
        let mut rng = RngStream::new(2).rng();
        for _ in 0..100_000 {
            let u = k.sample(1.0, &mut rng).unwrap();
            assert!(u[0].hypot(u[1]) <= 6.0);
        }
        // A tight radius exercises rejection heavily.
        let k = KernelSpec::diagonal(&[1.0, 4.0], 0.5).unwrap();
        let mut rng = RngStream::new(3).rng();
        for _ in 0..10_000 {
            if let Ok(u) = k.sample(2.0, &mut rng) {
                assert!(k.mahalanobis2(2.0, &u) <= 0.25 + 1e-12);
            }
        }
    }

    #[test]
    fn variance_factor_matches_radial_quadrature() {
        for (d, c) in [(1, 6.0), (2, 6.0), (2, 1.5), (3, 2.0)] {
            let k = KernelSpec::identity(d);
            let k = KernelSpec::new(k.sigma().clone(), c).unwrap();
            let oracle = radial_variance_factor(d, c);
            assert!((k.variance_factor() - oracle).abs() < 1e-9, "d={d} c={c}");
        }
    }

    #[test]
    fn empirical_covariance() {
        let k = KernelSpec::diagonal(&[1.0, 4.0], 6.0).unwrap();
        let factor = radial_variance_factor(2, 6.0);
        let mut rng = RngStream::new(4).rng();
        let r = 100_000;
        let (mut s00, mut s11, mut s01) = (0.0, 0.0, 0.0);
        for _ in 0..r {
            let u = k.sample(1.0, &mut rng).unwrap();
            s00 += u[0] * u[0];
            s11 += u[1] * u[1];
            s01 += u[0] * u[1];
        }
        let r = r as f64;
        // se of a sample second moment of N(0, v): v·√(2/R); cross term: √(v0·v1/R).
        assert!((s00 / r - factor).abs() < 3.0 * (2.0f64 / r).sqrt());
        assert!((s11 / r - 4.0 * factor).abs() < 3.0 * 4.0 * (2.0f64 / r).sqrt());
        assert!((s01 / r).abs() < 3.0 * (4.0f64 / r).sqrt());
    }

    #[test]
    fn density_at_origin_1d() {
        let k = KernelSpec::identity(1);
        // Φ(−6) = 1/2 − ∫_0^6 φ.
        let inner = simpson(
            |x| (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            0.0,
            6.0,
            20_000,
        );
        let phi_m6 = 0.5 - inner;
        let expected = (2.0 * std::f64::consts::PI).powf(-0.5) / (1.0 - 2.0 * phi_m6);
        assert!((k.density(1.0, &[0.0]).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn density_support_symmetry_and_mass() {
        let k = KernelSpec::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.5]), 2.0).unwrap();
        assert_eq!(k.density(1.0, &[10.0, 0.0]).unwrap(), 0.0);
        assert!(k.density(1.0, &[0.0, 0.0]).unwrap() > 0.0);
        assert!(k.density(0.0, &[0.0, 0.0]).is_err());
        let mut rng = RngStream::new(5).rng();
        for _ in 0..100 {
            let u = k.sample(0.7, &mut rng).unwrap();
            let neg: Vec<f64> = u.iter().map(|v| -v).collect();
            assert_eq!(k.density(0.7, &u).unwrap(), k.density(0.7, &neg).unwrap());
        }
        // Integrates to one on a grid covering the support.
        let (n, half) = (800, 2.5);
        let h = 2.0 * half / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let u = [-half + (i as f64 + 0.5) * h, -half + (j as f64 + 0.5) * h];
                total += k.density(1.0, &u).unwrap();
            }
        }
        assert!((total * h * h - 1.0).abs() < 5e-3, "mass {}", total * h * h);
    }

    #[test]
    fn rejects_invalid_specs() {
        assert!(KernelSpec::diagonal(&[1.0, 0.0], 6.0).is_err());
        assert!(KernelSpec::diagonal(&[1.0], 0.0).is_err());
        assert!(KernelSpec::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.2, 1.0]), 6.0).is_err());
        assert!(PerturbationScales::new(-1.0, 1.0).is_err());
        assert!(PerturbationScales::new(0.0, 0.0).is_err());
    }

    fn lgss() -> LgssModel {
        LgssModel::scalar_ar1(0.8, 1.0, 1.0)
    }

    #[test]
    fn zero_sigma_freezes_parameters_and_reproduces_base_model() {
        let model = lgss();
        let kernel = KernelSpec::identity(2);
        let center = ParamVector::new(vec![0.8, 0.1]).unwrap();
        let grid = TimeGrid::regular(0.0, 1.0, 30).unwrap();
        let scales = PerturbationScales::new(0.0, f64::MIN_POSITIVE).unwrap();
        let g = extend_model(&model, &kernel, scales, &center).unwrap();
        let stream = RngStream::new(17);
        let ext = simulate_process(&g, &grid, &stream).unwrap();
        let base = simulate(&model, &center, &grid, &stream).unwrap();
        for (z, x) in ext.states.iter().zip(&base.states) {
            assert_eq!(&z[1..], center.as_slice());
            assert_eq!(&z[..1], x.as_slice());
        }
        assert_eq!(ext.observations, base.observations);
    }

    #[test]
    fn initial_parameter_moments() {
        let model = lgss();
        let kernel = KernelSpec::diagonal(&[1.0, 2.0], 3.0).unwrap();
        let center = ParamVector::new(vec![0.5, -0.2]).unwrap();
        let tau = 0.3;
        let g = extend_model(&model, &kernel, PerturbationScales::new(0.1, tau).unwrap(), &center).unwrap();
        let r = 100_000;
        let root = RngStream::new(8);
        let mut z = vec![0.0; 3];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for j in 0..r {
            g.init(&root.child(j), &mut z).unwrap();
            for i in 0..2 {
                let d = z[1 + i] - center[i];
                m[i] += d;
                v[i] += d * d;
            }
        }
        let factor = radial_variance_factor(2, 3.0);
        let r = r as f64;
        for (i, s) in [1.0f64, 2.0].into_iter().enumerate() {
            let nominal = tau * tau * s * factor;
            assert!((m[i] / r).abs() < 4.0 * (nominal / r).sqrt());
            assert!((v[i] / r - nominal).abs() < 4.0 * nominal * (2.0 / r).sqrt());
        }
    }

    #[test]
    fn increments_have_mean_zero() {
        let model = lgss();
        let kernel = KernelSpec::diagonal(&[1.0, 3.0], 6.0).unwrap();
        let center = ParamVector::new(vec![0.5, 0.0]).unwrap();
        let sigma = 0.05;
        let g = extend_model(&model, &kernel, PerturbationScales::new(sigma, 0.2).unwrap(), &center).unwrap();
        let r = 100_000u64;
        let root = RngStream::new(9);
        let prev = [0.3, 0.5, -0.1];
        let mut z = [0.0; 3];
        let mut sum = [0.0; 2];
        for j in 0..r {
            g.transition(&prev, 0.0, 1.0, &root.child(j), &mut z).unwrap();
            sum[0] += z[1] - prev[1];
            sum[1] += z[2] - prev[2];
        }
        let bound = 4.0 * sigma * 3.0f64.sqrt() / (r as f64).sqrt();
        assert!(sum.iter().all(|s| (s / r as f64).abs() <= bound));
    }

    #[test]
    fn parameter_and_state_streams_are_disjoint() {
        // The state path depends on θ only through the dynamics; with a = 0.8
        // fixed by a zero-length perturbation the x draws must not move when σ
        // changes, and the θ path must not depend on the state draws.
        let model = lgss();
        let kernel = KernelSpec::identity(2);
        let center = ParamVector::new(vec![0.8, 0.0]).unwrap();
        let stream = RngStream::new(10);
        let prev = [1.0, 0.8, 0.0];
        let mut a = [0.0; 3];
        let mut b = [0.0; 3];
        let g0 = extend_model(&model, &kernel, PerturbationScales::new(0.0, 1.0).unwrap(), &center).unwrap();
        let g1 = extend_model(&model, &kernel, PerturbationScales::new(0.5, 1.0).unwrap(), &center).unwrap();
        g0.transition(&prev, 0.0, 1.0, &stream, &mut a).unwrap();
        g1.transition(&prev, 0.0, 1.0, &stream, &mut b).unwrap();
        assert_eq!(a[0], b[0]);
        assert_ne!(a[1..], b[1..]);

        let other = [-3.0, 0.8, 0.0];
        let mut c = [0.0; 3];
        g1.transition(&other, 0.0, 1.0, &stream, &mut c).unwrap();
        assert_eq!(b[1..], c[1..]);
    }

    #[test]
    fn dimension_checks() {
        let model = lgss();
        let center = ParamVector::new(vec![0.8, 0.0]).unwrap();
        let scales = PerturbationScales::new(0.1, 0.1).unwrap();
        assert!(extend_model(&model, &KernelSpec::identity(3), scales, &center).is_err());
        let short = ParamVector::new(vec![0.8]).unwrap();
        assert!(extend_model(&model, &KernelSpec::identity(2), scales, &short).is_err());
    }
}
