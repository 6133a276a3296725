//! Named model constructors and the parameter layer applied on top of them.

use std::collections::BTreeMap;
use std::sync::Arc;

use iterfilt_core::models::{FlatObservation, OuDiscretized};
use iterfilt_core::oracle::{Binding, LgssModel, LgssSpec, Slot, Target};
use iterfilt_core::{Error, Model, ParamTransform, ParamVector, StreamRng, TimeGrid, Transform};
use serde::Deserialize;

use crate::config::ParamConfig;
use crate::error::{CliError, CliResult};

pub type SharedModel = Arc<dyn Model + Send + Sync>;

/// Exact linear-Gaussian equivalent of a model at full natural parameters.
pub type ExactFn = dyn Fn(&[f64], &TimeGrid) -> iterfilt_core::Result<LgssSpec> + Send + Sync;

pub struct ModelEntry {
    pub model: SharedModel,
    /// Present when the Kalman oracle applies (`--exact`).
    pub exact: Option<Arc<ExactFn>>,
}

pub type Builder = Box<dyn Fn(Option<&serde_json::Value>) -> CliResult<ModelEntry> + Send + Sync>;

pub struct Registry {
    builders: BTreeMap<String, Builder>,
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            builders: BTreeMap::new(),
        }
    }

    /// `lgss`, `ou-discretized` and `constant-density`.
    pub fn builtin() -> Self {
        let mut r = Self::empty();
        r.register("lgss", Box::new(build_lgss));
        r.register("ou-discretized", Box::new(build_ou));
        r.register("constant-density", Box::new(build_flat));
        r
    }

    /// Add or replace a model under `name`.
    pub fn register(&mut self, name: &str, builder: Builder) {
        self.builders.insert(name.to_owned(), builder);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.builders.keys().map(String::as_str)
    }

    pub fn build(&self, name: &str, options: Option<&serde_json::Value>) -> CliResult<ModelEntry> {
        let builder = self.builders.get(name).ok_or_else(|| {
            let known: Vec<&str> = self.names().collect();
            CliError::config(format!("unknown model `{name}` (known: {})", known.join(", ")))
        })?;
        builder(options)
    }
}

fn no_options(name: &str, options: Option<&serde_json::Value>) -> CliResult<()> {
    match options {
        None | Some(serde_json::Value::Null) => Ok(()),
        Some(_) => Err(CliError::config(format!("model `{name}` takes no model_options"))),
    }
}

/// Matrices as row lists. Anything left out keeps the scalar default
/// `x_n = 0.8 x_{n−1} + N(0, 1)`, `y_n = x_n + N(0, 1)`, `x_0 ~ N(0, 1)`.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct LgssOptions {
    a: Option<Vec<Vec<f64>>>,
    b: Option<Vec<f64>>,
    q: Option<Vec<Vec<f64>>>,
    h: Option<Vec<Vec<f64>>>,
    r: Option<Vec<Vec<f64>>>,
    m0: Option<Vec<f64>>,
    p0: Option<Vec<Vec<f64>>>,
    bindings: Option<Vec<Binding>>,
}

fn matrix(name: &str, rows: &[Vec<f64>]) -> CliResult<nalgebra::DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::config(format!(
            "model_options.{name} is not a rectangular matrix"
        )));
    }
    Ok(nalgebra::DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn build_lgss(options: Option<&serde_json::Value>) -> CliResult<ModelEntry> {
    let o: LgssOptions = match options {
        None | Some(serde_json::Value::Null) => LgssOptions::default(),
        Some(v) => serde_json::from_value(v.clone()).map_err(|e| CliError::config(format!("model_options: {e}")))?,
    };
    let mut spec = LgssSpec::scalar(0.8, 1.0, 1.0, 0.0, 1.0);
    for (name, rows, slot) in [
        ("a", &o.a, &mut spec.a),
        ("q", &o.q, &mut spec.q),
        ("h", &o.h, &mut spec.h),
        ("r", &o.r, &mut spec.r),
        ("p0", &o.p0, &mut spec.p0),
    ] {
        if let Some(rows) = rows {
            *slot = matrix(name, rows)?;
        }
    }
    if let Some(b) = &o.b {
        spec.b = nalgebra::DVector::from_column_slice(b);
    }
    if let Some(m0) = &o.m0 {
        spec.m0 = nalgebra::DVector::from_column_slice(m0);
    }
    let bindings = match o.bindings {
        Some(b) => b,
        None if spec.state_dim() == 1 && spec.obs_dim() == 1 => vec![
            Binding::new("a", Transform::Identity, vec![Target::new(Slot::A, 0, 0)]),
            Binding::new("q", Transform::Log, vec![Target::new(Slot::Q, 0, 0)]),
            Binding::new("r", Transform::Log, vec![Target::new(Slot::R, 0, 0)]),
        ],
        None => {
            return Err(CliError::config(
                "model_options.bindings is required for a multivariate lgss",
            ))
        }
    };
    let model = Arc::new(LgssModel::new(spec, bindings)?);
    let oracle = model.clone();
    Ok(ModelEntry {
        model,
        exact: Some(Arc::new(move |theta: &[f64], _: &TimeGrid| Ok(oracle.spec_at(theta)))),
    })
}

fn build_ou(options: Option<&serde_json::Value>) -> CliResult<ModelEntry> {
    no_options("ou-discretized", options)?;
    let model = OuDiscretized::default();
    let oracle = model.clone();
    Ok(ModelEntry {
        model: Arc::new(model),
        exact: Some(Arc::new(move |theta: &[f64], grid: &TimeGrid| {
            let dt = uniform_spacing(grid).ok_or_else(|| {
                Error::Invalid("the exact ou-discretized likelihood needs equally spaced times".into())
            })?;
            Ok(oracle.lgss(theta, dt))
        })),
    })
}

fn uniform_spacing(grid: &TimeGrid) -> Option<f64> {
    let mut prev = grid.t0();
    let first = grid.times().first()? - prev;
    for &t in grid.times() {
        if ((t - prev) - first).abs() > 1e-9 * first.abs().max(1.0) {
            return None;
        }
        prev = t;
    }
    Some(first)
}

fn build_flat(options: Option<&serde_json::Value>) -> CliResult<ModelEntry> {
    no_options("constant-density", options)?;
    Ok(ModelEntry {
        model: Arc::new(FlatObservation::default()),
        exact: None,
    })
}

/// A model with some parameters held fixed and optional transform
/// overrides; its parameter vector holds only the estimated coordinates.
pub struct Configured {
    inner: SharedModel,
    /// Full natural parameter vector; free slots are overwritten per call.
    template: Vec<f64>,
    free: Vec<usize>,
    transform: ParamTransform,
}

const STACK_PARAMS: usize = 16;

impl Configured {
    pub fn new(inner: SharedModel, params: &[ParamConfig]) -> CliResult<Self> {
        let base = inner.transform();
        for p in params {
            if base.index_of(&p.name).is_none() {
                let known: Vec<&str> = base.names().collect();
                return Err(CliError::config(format!(
                    "model has no parameter `{}` (parameters: {})",
                    p.name,
                    known.join(", ")
                )));
            }
        }
        let mut template = Vec::with_capacity(base.len());
        let mut free = Vec::new();
        let mut coords = Vec::new();
        for (i, c) in base.coordinates().iter().enumerate() {
            let p = params
                .iter()
                .find(|p| p.name == c.name)
                .ok_or_else(|| CliError::config(format!("parameter `{}` needs a value", c.name)))?;
            let transform = p.transform.unwrap_or(c.transform);
            if !transform.in_domain(p.value) {
                return Err(CliError::config(format!(
                    "parameter `{}` = {} is outside the {} domain",
                    p.name,
                    p.value,
                    transform.name()
                )));
            }
            template.push(p.value);
            if p.estimate {
                free.push(i);
                coords.push((c.name.clone(), transform));
            }
        }
        Ok(Self {
            inner,
            template,
            free,
            transform: ParamTransform::new(coords),
        })
    }

    /// Configured values of the estimated coordinates, unconstrained.
    pub fn start(&self) -> CliResult<ParamVector> {
        let natural: Vec<f64> = self.free.iter().map(|&i| self.template[i]).collect();
        Ok(self.transform.to_unconstrained(&natural)?)
    }

    /// Full natural parameter vector of the underlying model.
    pub fn full(&self, natural_free: &[f64]) -> Vec<f64> {
        let mut full = self.template.clone();
        for (&i, &v) in self.free.iter().zip(natural_free) {
            full[i] = v;
        }
        full
    }

    pub fn inner(&self) -> &SharedModel {
        &self.inner
    }

    fn with_full<R>(&self, theta: &[f64], f: impl FnOnce(&[f64]) -> R) -> R {
        let d = self.template.len();
        if d <= STACK_PARAMS {
            let mut buf = [0.0; STACK_PARAMS];
            buf[..d].copy_from_slice(&self.template);
            for (&i, &v) in self.free.iter().zip(theta) {
                buf[i] = v;
            }
            f(&buf[..d])
        } else {
            f(&self.full(theta))
        }
    }
}

impl Model for Configured {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn obs_dim(&self) -> usize {
        self.inner.obs_dim()
    }

    fn transform(&self) -> &ParamTransform {
        &self.transform
    }

    fn init_state(&self, theta: &[f64], rng: &mut StreamRng, x0: &mut [f64]) {
        self.with_full(theta, |full| self.inner.init_state(full, rng, x0))
    }

    fn transition(&self, x_prev: &[f64], theta: &[f64], t_prev: f64, t: f64, rng: &mut StreamRng, x: &mut [f64]) {
        self.with_full(theta, |full| self.inner.transition(x_prev, full, t_prev, t, rng, x))
    }

    fn log_measurement_density(&self, y: &[f64], x: &[f64], theta: &[f64], t: f64) -> f64 {
        self.with_full(theta, |full| self.inner.log_measurement_density(y, x, full, t))
    }

    fn sample_observation(&self, x: &[f64], theta: &[f64], t: f64, rng: &mut StreamRng, y: &mut [f64]) -> bool {
        self.with_full(theta, |full| self.inner.sample_observation(x, full, t, rng, y))
    }
}
