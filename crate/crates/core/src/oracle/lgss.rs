use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::StreamRng;
use crate::transform::{ParamTransform, Transform};

/// `x_n = A x_{n-1} + b + w_n`, `w_n ~ N(0, Q)`; `y_n = H x_n + v_n`, `v_n ~ N(0, R)`;
/// `x_0 ~ N(m0, P0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LgssSpec {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub q: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub m0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

impl LgssSpec {
    pub fn scalar(a: f64, q: f64, r: f64, m0: f64, p0: f64) -> Self {
        let m = |v: f64| DMatrix::from_element(1, 1, v);
        Self {
            a: m(a),
            b: DVector::zeros(1),
            q: m(q),
            h: m(1.0),
            r: m(r),
            m0: DVector::from_element(1, m0),
            p0: m(p0),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let dx = self.state_dim();
        let dy = self.obs_dim();
        let shapes = [
            ("A", self.a.shape(), (dx, dx)),
            ("b", self.b.shape(), (dx, 1)),
            ("Q", self.q.shape(), (dx, dx)),
            ("H", self.h.shape(), (dy, dx)),
            ("R", self.r.shape(), (dy, dy)),
            ("m0", self.m0.shape(), (dx, 1)),
            ("P0", self.p0.shape(), (dx, dx)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(Error::Invalid(format!(
                    "LGSS matrix {name} has shape {got:?}, expected {want:?}"
                )));
            }
        }
        for (name, m) in [("Q", &self.q), ("R", &self.r), ("P0", &self.p0)] {
            if (m - m.transpose()).abs().max() > 1e-12 * (1.0 + m.abs().max()) {
                return Err(Error::Invalid(format!("LGSS matrix {name} is not symmetric")));
            }
            if m.clone().symmetric_eigenvalues().iter().any(|&e| e < -1e-12) {
                return Err(Error::Invalid(format!(
                    "LGSS matrix {name} is not positive semidefinite"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Slot {
    A,
    B,
    Q,
    H,
    R,
    M0,
    P0,
}

/// One matrix entry a parameter writes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub slot: Slot,
    pub row: usize,
    pub col: usize,
}

impl Target {
    pub fn new(slot: Slot, row: usize, col: usize) -> Self {
        Self { slot, row, col }
    }
}

/// A named parameter and the entries it sets (natural scale).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Binding {
    pub name: String,
    pub transform: Transform,
    pub targets: Vec<Target>,
}

impl Binding {
    pub fn new(name: &str, transform: Transform, targets: Vec<Target>) -> Self {
        Self {
            name: name.to_owned(),
            transform,
            targets,
        }
    }
}

/// A linear-Gaussian model whose entries are partly set by named parameters.
#[derive(Debug, Clone)]
pub struct LgssModel {
    base: LgssSpec,
    bindings: Vec<Binding>,
    transform: ParamTransform,
}

impl LgssModel {
    pub fn new(base: LgssSpec, bindings: Vec<Binding>) -> Result<Self> {
        base.validate()?;
        for b in &bindings {
            for t in &b.targets {
                let shape = match t.slot {
                    Slot::A => base.a.shape(),
                    Slot::B => base.b.shape(),
                    Slot::Q => base.q.shape(),
                    Slot::H => base.h.shape(),
                    Slot::R => base.r.shape(),
                    Slot::M0 => base.m0.shape(),
                    Slot::P0 => base.p0.shape(),
                };
                if t.row >= shape.0 || t.col >= shape.1 {
                    return Err(Error::Invalid(format!(
                        "binding `{}` targets {:?}[{}, {}] outside a {:?} matrix",
                        b.name, t.slot, t.row, t.col, shape
                    )));
                }
            }
        }
        let transform = ParamTransform::new(bindings.iter().map(|b| (b.name.clone(), b.transform)));
        Ok(Self {
            base,
            bindings,
            transform,
        })
    }

    /// Scalar AR(1) observed with noise: unknown `a` (identity) and `q` (log),
    /// fixed observation variance `r`, `x_0 ~ N(0, 1)`. Values are the
    /// defaults stored in the base spec.
    pub fn scalar_ar1(a: f64, q: f64, r: f64) -> Self {
        Self::new(
            LgssSpec::scalar(a, q, r, 0.0, 1.0),
            vec![
                Binding::new("a", Transform::Identity, vec![Target::new(Slot::A, 0, 0)]),
                Binding::new("q", Transform::Log, vec![Target::new(Slot::Q, 0, 0)]),
            ],
        )
        .expect("valid scalar model")
    }

    pub fn base(&self) -> &LgssSpec {
        &self.base
    }

    pub fn bindings(&self) -> &[Binding] {
        &self.bindings
    }

    fn apply(&self, natural: &[f64], slot: Slot, m: &mut DMatrix<f64>) {
        for (b, &v) in self.bindings.iter().zip(natural) {
            for t in b.targets.iter().filter(|t| t.slot == slot) {
                m[(t.row, t.col)] = v;
            }
        }
    }

    fn apply_vec(&self, natural: &[f64], slot: Slot, m: &mut DVector<f64>) {
        for (b, &v) in self.bindings.iter().zip(natural) {
            for t in b.targets.iter().filter(|t| t.slot == slot) {
                m[t.row] = v;
            }
        }
    }

    fn matrix(&self, natural: &[f64], slot: Slot) -> DMatrix<f64> {
        let mut m = match slot {
            Slot::A => self.base.a.clone(),
            Slot::Q => self.base.q.clone(),
            Slot::H => self.base.h.clone(),
            Slot::R => self.base.r.clone(),
            Slot::P0 => self.base.p0.clone(),
            Slot::B | Slot::M0 => unreachable!("vector slot"),
        };
        self.apply(natural, slot, &mut m);
        m
    }

    fn vector(&self, natural: &[f64], slot: Slot) -> DVector<f64> {
        let mut v = match slot {
            Slot::B => self.base.b.clone(),
            Slot::M0 => self.base.m0.clone(),
            _ => unreachable!("matrix slot"),
        };
        self.apply_vec(natural, slot, &mut v);
        v
    }

    fn scalar(&self, natural: &[f64], slot: Slot) -> f64 {
        let mut v = match slot {
            Slot::A => self.base.a[0],
            Slot::B => self.base.b[0],
            Slot::Q => self.base.q[0],
            Slot::H => self.base.h[0],
            Slot::R => self.base.r[0],
            Slot::M0 => self.base.m0[0],
            Slot::P0 => self.base.p0[0],
        };
        for (b, &x) in self.bindings.iter().zip(natural) {
            if b.targets.iter().any(|t| t.slot == slot) {
                v = x;
            }
        }
        v
    }

    fn is_scalar(&self) -> bool {
        self.base.state_dim() == 1 && self.base.obs_dim() == 1
    }

    /// The concrete model at natural-scale parameters.
    pub fn spec_at(&self, natural: &[f64]) -> LgssSpec {
        LgssSpec {
            a: self.matrix(natural, Slot::A),
            b: self.vector(natural, Slot::B),
            q: self.matrix(natural, Slot::Q),
            h: self.matrix(natural, Slot::H),
            r: self.matrix(natural, Slot::R),
            m0: self.vector(natural, Slot::M0),
            p0: self.matrix(natural, Slot::P0),
        }
    }

    /// The concrete model at unconstrained parameters.
    pub fn spec_at_unconstrained(&self, theta: &[f64]) -> LgssSpec {
        self.spec_at(&self.transform.from_unconstrained(theta))
    }
}

/// Lower Cholesky factor of a PSD matrix; zero rows where the matrix is singular.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 1 {
        return DMatrix::from_element(1, 1, m[(0, 0)].max(0.0).sqrt());
    }
    match m.clone().cholesky() {
        Some(c) => c.unpack(),
        None => {
            let eig = m.clone().symmetric_eigen();
            let d = eig.eigenvalues.map(|e| e.max(0.0).sqrt());
            &eig.eigenvectors * DMatrix::from_diagonal(&d)
        }
    }
}

fn gaussian_draw(mean: &DVector<f64>, sqrt: &DMatrix<f64>, rng: &mut StreamRng, out: &mut [f64]) {
    let z = DVector::from_fn(mean.len(), |_, _| StandardNormal.sample(rng));
    let v = mean + sqrt * z;
    out.copy_from_slice(v.as_slice());
}

/// log N(resid; 0, cov).
pub(crate) fn gaussian_log_density(resid: &DVector<f64>, cov: &DMatrix<f64>) -> Option<f64> {
    let d = resid.len() as f64;
    let ln2pi = (2.0 * std::f64::consts::PI).ln();
    if resid.len() == 1 {
        let v = cov[(0, 0)];
        if !(v > 0.0) {
            return None;
        }
        return Some(-0.5 * (ln2pi + v.ln() + resid[0] * resid[0] / v));
    }
    let chol = cov.clone().cholesky()?;
    let w = chol.l().solve_lower_triangular(resid)?;
    let log_det: f64 = chol.l().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
    Some(-0.5 * (d * ln2pi + log_det + w.norm_squared()))
}

impl Model for LgssModel {
    fn state_dim(&self) -> usize {
        self.base.state_dim()
    }

    fn obs_dim(&self) -> usize {
        self.base.obs_dim()
    }

    fn transform(&self) -> &ParamTransform {
        &self.transform
    }

    fn init_state(&self, theta: &[f64], rng: &mut StreamRng, x0: &mut [f64]) {
        if self.is_scalar() {
            let z: f64 = StandardNormal.sample(rng);
            x0[0] = self.scalar(theta, Slot::M0) + self.scalar(theta, Slot::P0).max(0.0).sqrt() * z;
            return;
        }
        let m0 = self.vector(theta, Slot::M0);
        let s = psd_sqrt(&self.matrix(theta, Slot::P0));
        gaussian_draw(&m0, &s, rng, x0);
    }

    fn transition(&self, x_prev: &[f64], theta: &[f64], _: f64, _: f64, rng: &mut StreamRng, x: &mut [f64]) {
        if self.is_scalar() {
            let z: f64 = StandardNormal.sample(rng);
            let mean = self.scalar(theta, Slot::A) * x_prev[0] + self.scalar(theta, Slot::B);
            x[0] = mean + self.scalar(theta, Slot::Q).max(0.0).sqrt() * z;
            return;
        }
        let a = self.matrix(theta, Slot::A);
        let mean = a * DVector::from_column_slice(x_prev) + self.vector(theta, Slot::B);
        let s = psd_sqrt(&self.matrix(theta, Slot::Q));
        gaussian_draw(&mean, &s, rng, x);
    }

    fn log_measurement_density(&self, y: &[f64], x: &[f64], theta: &[f64], _: f64) -> f64 {
        if self.is_scalar() {
            let resid = y[0] - self.scalar(theta, Slot::H) * x[0];
            let v = self.scalar(theta, Slot::R);
            if !(v > 0.0) {
                return f64::NAN;
            }
            return -0.5 * ((2.0 * std::f64::consts::PI).ln() + v.ln() + resid * resid / v);
        }
        let h = self.matrix(theta, Slot::H);
        let resid = DVector::from_column_slice(y) - h * DVector::from_column_slice(x);
        gaussian_log_density(&resid, &self.matrix(theta, Slot::R)).unwrap_or(f64::NAN)
    }

    fn sample_observation(&self, x: &[f64], theta: &[f64], _: f64, rng: &mut StreamRng, y: &mut [f64]) -> bool {
        if self.is_scalar() {
            let z: f64 = StandardNormal.sample(rng);
            y[0] = self.scalar(theta, Slot::H) * x[0] + self.scalar(theta, Slot::R).max(0.0).sqrt() * z;
            return true;
        }
        let h = self.matrix(theta, Slot::H);
        let mean = h * DVector::from_column_slice(x);
        let s = psd_sqrt(&self.matrix(theta, Slot::R));
        gaussian_draw(&mean, &s, rng, y);
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn scalar_path_matches_matrix_formulas() {
        let model = LgssModel::scalar_ar1(0.7, 2.0, 0.5);
        let theta = [0.6, 1.5];
        let spec = model.spec_at(&theta);
        let (y, x) = ([0.3], [-1.1]);
        let resid = DVector::from_column_slice(&y) - &spec.h * DVector::from_column_slice(&x);
        let want = gaussian_log_density(&resid, &spec.r).unwrap();
        assert!((model.log_measurement_density(&y, &x, &theta, 1.0) - want).abs() < 1e-14);

        let mut rng = RngStream::new(1).rng();
        let mut out = [0.0];
        model.transition(&x, &theta, 0.0, 1.0, &mut rng, &mut out);
        let mut rng = RngStream::new(1).rng();
        let z: f64 = StandardNormal.sample(&mut rng);
        assert!((out[0] - (0.6 * x[0] + 1.5f64.sqrt() * z)).abs() < 1e-14);
    }
}
