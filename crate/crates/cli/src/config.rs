//! The JSON run configuration.
//!
//! One file describes the model, its parameters and every algorithmic
//! setting. Unknown keys are rejected. Command-line flags override the file
//! and the resolved result is written back into every JSON output, so an
//! output's `config` block can be fed back in to reproduce it.

use std::path::{Path, PathBuf};

use iterfilt_core::{Resampler, Schedule, Transform};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Registry key, e.g. `lgss` or `ou-discretized`.
    pub model: String,
    /// Model-specific construction options, passed to the registry builder.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_options: Option<serde_json::Value>,
    pub params: Vec<ParamConfig>,
    /// Observation times for `simulate`; `t0` also anchors data read from CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<TimesConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Schedule>,
    #[serde(default)]
    pub score: ScoreConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileConfig>,
    /// Flag iterates whose largest unconstrained coordinate exceeds this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub divergence_bound: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replicates: usize,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_output() -> PathBuf {
    PathBuf::from("iterfilt-out")
}

/// A model parameter, given on the natural scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamConfig {
    pub name: String,
    pub value: f64,
    /// Overrides the model's own transform for this coordinate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
    /// Fixed parameters are held at `value` and excluded from θ.
    #[serde(default = "yes")]
    pub estimate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimesConfig {
    #[serde(default)]
    pub t0: f64,
    #[serde(default = "unit")]
    pub dt: f64,
    #[serde(default)]
    pub n: usize,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    /// Diagonal of Σ on the unconstrained scale; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_diag: Option<Vec<f64>>,
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    iterfilt_core::kernel::DEFAULT_RADIUS
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            sigma_diag: None,
            radius: default_radius(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default)]
    pub resampler: Resampler,
}

fn default_particles() -> usize {
    1000
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            particles: default_particles(),
            resampler: Resampler::default(),
        }
    }
}

/// Perturbation scales for a single score estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_sigma() -> f64 {
    0.01
}

fn default_tau() -> f64 {
    0.1
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            sigma: default_sigma(),
            tau: default_tau(),
        }
    }
}

/// A likelihood slice: one parameter moved along `values` (natural scale),
/// all others held at their configured values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileConfig {
    pub parameter: String,
    pub values: Vec<f64>,
}

/// Command-line settings that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data: Option<PathBuf>,
    pub seed: Option<u64>,
    pub particles: Option<usize>,
    pub replicates: Option<usize>,
    pub output: Option<PathBuf>,
    pub resampler: Option<Resampler>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(e.to_string()))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Apply flags. `--particles` also sets the iterated-filtering sample
    /// size (the base size for power-law schedules).
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(d) = &o.data {
            self.data = Some(d.clone());
        }
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(j) = o.particles {
            self.filter.particles = j;
            match &mut self.schedule {
                Some(Schedule::Practical(s)) => s.particles = j,
                Some(Schedule::Theoretical(s)) => s.base_particles = j,
                None => {}
            }
        }
        if let Some(r) = o.replicates {
            self.replicates = r;
        }
        if let Some(out) = &o.output {
            self.output = out.clone();
        }
        if let Some(r) = o.resampler {
            self.filter.resampler = r;
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.filter.particles == 0 {
            return Err(CliError::config("filter.particles must be positive"));
        }
        if self.replicates == 0 {
            return Err(CliError::config("replicates must be positive"));
        }
        if !(self.kernel.radius > 0.0) {
            return Err(CliError::config("kernel.radius must be positive"));
        }
        for (i, p) in self.params.iter().enumerate() {
            if !p.value.is_finite() {
                return Err(CliError::config(format!("parameter `{}` is not finite", p.name)));
            }
            if self.params[..i].iter().any(|q| q.name == p.name) {
                return Err(CliError::config(format!("parameter `{}` listed twice", p.name)));
            }
        }
        if let Some(s) = &self.schedule {
            s.validate().map_err(|e| CliError::config(format!("schedule: {e}")))?;
        }
        Ok(())
    }

    pub fn data_path(&self) -> CliResult<&Path> {
        self.data
            .as_deref()
            .ok_or_else(|| CliError::config("no data file: pass --data or set `data`"))
    }

    pub fn t0(&self) -> f64 {
        self.times.map_or(0.0, |t| t.t0)
    }
}
