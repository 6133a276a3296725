//! Cooling schedules for iterated filtering and a checker for the rate
//! conditions that guarantee convergence of the recursion.

use serde::{Deserialize, Serialize};

/// `scale · m^(−exponent)` for `m = 1, 2, ...`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLaw {
    pub scale: f64,
    pub exponent: f64,
}

impl PowerLaw {
    pub fn new(scale: f64, exponent: f64) -> Self {
        Self { scale, exponent }
    }

    pub fn at(&self, m: usize) -> f64 {
        self.scale * (m as f64).powf(-self.exponent)
    }
}

/// Sequences of the form `a_m = m^{-p_a}`, `τ_m = m^{-p_τ}`, `σ_m = m^{-p_σ}`,
/// `J_m = ⌈m^{p_J}⌉ · J_base`, indexed from `m = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawSchedule {
    pub iterations: usize,
    pub base_particles: usize,
    pub particles_exponent: f64,
    pub gain: PowerLaw,
    pub tau: PowerLaw,
    pub sigma: PowerLaw,
}

impl PowerLawSchedule {
    /// `a_m = 1/m`, `τ_m² = 1/m`, `σ_m² = m^{-(1+δ)}`, `J_m = ⌈m^{δ+1/2}⌉ J_base`.
    pub fn standard(delta: f64, base_particles: usize, iterations: usize) -> Self {
        Self {
            iterations,
            base_particles,
            particles_exponent: delta + 0.5,
            gain: PowerLaw::new(1.0, 1.0),
            tau: PowerLaw::new(1.0, 0.5),
            sigma: PowerLaw::new(1.0, (1.0 + delta) / 2.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", deny_unknown_fields)]
pub enum Gain {
    /// `a_m = initial · ratio^m`.
    Geometric { initial: f64, ratio: f64 },
    /// `a_m = initial · (m + 1)^(−exponent)`.
    Power { initial: f64, exponent: f64 },
}

impl Gain {
    pub fn at(&self, m: usize) -> f64 {
        match *self {
            Gain::Geometric { initial, ratio } => initial * ratio.powi(m as i32),
            Gain::Power { initial, exponent } => initial * ((m + 1) as f64).powf(-exponent),
        }
    }
}

/// Re-raise (σ, τ) by `factor` at each listed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tempering {
    pub restarts: Vec<usize>,
    pub factor: f64,
}

/// Fixed particle count, geometric cooling of τ with σ/τ held constant.
/// Indexed from `m = 0`: `τ_m = τ_0 α^m β^{r(m)}` where `r(m)` counts the
/// restarts at or before `m`, and `σ_m = (σ_0/τ_0) τ_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PracticalSchedule {
    pub iterations: usize,
    pub particles: usize,
    pub sigma0: f64,
    pub tau0: f64,
    pub cooling: f64,
    pub gain: Gain,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tempering: Option<Tempering>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode")]
pub enum Schedule {
    Theoretical(PowerLawSchedule),
    Practical(PracticalSchedule),
}

/// Algorithmic settings for one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScheduleStep {
    pub gain: f64,
    pub sigma: f64,
    pub tau: f64,
    pub particles: usize,
}

impl Schedule {
    pub fn iterations(&self) -> usize {
        match self {
            Schedule::Theoretical(s) => s.iterations,
            Schedule::Practical(s) => s.iterations,
        }
    }

    /// Settings for iteration `m = 0..iterations`.
    pub fn step(&self, m: usize) -> ScheduleStep {
        match self {
            Schedule::Theoretical(s) => {
                let k = m + 1;
                ScheduleStep {
                    gain: s.gain.at(k),
                    sigma: s.sigma.at(k),
                    tau: s.tau.at(k),
                    particles: (k as f64).powf(s.particles_exponent).ceil() as usize * s.base_particles,
                }
            }
            Schedule::Practical(s) => {
                let raised = s
                    .tempering
                    .as_ref()
                    .map_or(0, |t| t.restarts.iter().filter(|&&r| r <= m).count());
                let heat = s.tempering.as_ref().map_or(1.0, |t| t.factor.powi(raised as i32));
                let tau = s.tau0 * s.cooling.powi(m as i32) * heat;
                ScheduleStep {
                    gain: s.gain.at(m),
                    sigma: tau * s.sigma0 / s.tau0,
                    tau,
                    particles: s.particles,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            Schedule::Theoretical(s) => {
                if s.base_particles == 0 {
                    return Err("base_particles must be positive".into());
                }
                for (name, p) in [("gain", s.gain), ("tau", s.tau), ("sigma", s.sigma)] {
                    if !(p.scale >= 0.0 && p.scale.is_finite() && p.exponent.is_finite()) {
                        return Err(format!("{name} power law is invalid"));
                    }
                }
                if !(s.tau.scale > 0.0) {
                    return Err("tau scale must be positive".into());
                }
            }
            Schedule::Practical(s) => {
                if s.particles == 0 {
                    return Err("particles must be positive".into());
                }
                if !(s.tau0 > 0.0 && s.tau0.is_finite()) {
                    return Err("tau0 must be positive".into());
                }
                if !(s.sigma0 >= 0.0 && s.sigma0.is_finite()) {
                    return Err("sigma0 must be non-negative".into());
                }
                if !(s.cooling > 0.0 && s.cooling <= 1.0) {
                    return Err("cooling factor must lie in (0, 1]".into());
                }
                if let Some(t) = &s.tempering {
                    if !(t.factor >= 1.0 && t.factor.is_finite()) {
                        return Err("tempering factor must be at least 1".into());
                    }
                }
            }
        }
        Ok(())
    }
}

/// Asymptotic form `m^power · ratio^m`; `ratio = 0` is the zero sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Rate {
    power: f64,
    ratio: f64,
}

const RATIO_TOL: f64 = 1e-12;

impl Rate {
    fn poly(power: f64) -> Self {
        Self { power, ratio: 1.0 }
    }

    fn geometric(ratio: f64) -> Self {
        Self { power: 0.0, ratio }
    }

    fn zero() -> Self {
        Self { power: 0.0, ratio: 0.0 }
    }

    fn mul(self, o: Rate) -> Rate {
        Rate {
            power: self.power + o.power,
            ratio: self.ratio * o.ratio,
        }
    }

    fn pow(self, k: i32) -> Rate {
        Rate {
            power: self.power * k as f64,
            ratio: self.ratio.powi(k),
        }
    }

    fn is_zero(self) -> bool {
        self.ratio == 0.0
    }

    fn unit_ratio(self) -> bool {
        (self.ratio - 1.0).abs() < RATIO_TOL
    }

    fn to_zero(self) -> bool {
        self.is_zero() || (!self.unit_ratio() && self.ratio < 1.0) || (self.unit_ratio() && self.power < 0.0)
    }

    fn to_infinity(self) -> bool {
        (!self.unit_ratio() && self.ratio > 1.0) || (self.unit_ratio() && self.power > 0.0)
    }

    fn sum_diverges(self) -> bool {
        !self.is_zero() && ((!self.unit_ratio() && self.ratio > 1.0) || (self.unit_ratio() && self.power >= -1.0))
    }

    fn describe(self) -> String {
        if self.is_zero() {
            return "0".into();
        }
        let poly = if self.power == 0.0 {
            None
        } else {
            Some(format!("m^{}", fmt_num(self.power)))
        };
        let geo = if self.unit_ratio() {
            None
        } else {
            Some(format!("{}^m", fmt_num(self.ratio)))
        };
        match (poly, geo) {
            (None, None) => "const".into(),
            (Some(p), None) => p,
            (None, Some(g)) => g,
            (Some(p), Some(g)) => format!("{p}·{g}"),
        }
    }
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCondition {
    pub name: &'static str,
    pub holds: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleReport {
    pub mode: &'static str,
    pub conditions: Vec<RateCondition>,
    pub notes: Vec<String>,
}

impl ScheduleReport {
    pub fn all_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.holds)
    }

    pub fn violations(&self) -> impl Iterator<Item = &RateCondition> {
        self.conditions.iter().filter(|c| !c.holds)
    }

    pub fn condition(&self, name: &str) -> Option<&RateCondition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

pub const TAU_TO_ZERO: &str = "τ_m→0";
pub const RATIO_TO_ZERO: &str = "σ_m/τ_m→0";
pub const J_TAU_TO_INF: &str = "J_mτ_m→∞";
pub const GAIN_TO_ZERO: &str = "a_m→0";
pub const GAIN_SUM_INF: &str = "Σa_m=∞";
pub const NOISE_SUM_FINITE: &str = "Σa_m²J_m⁻¹τ_m⁻²<∞";

/// Check the asymptotic rate conditions on (a_m, σ_m, τ_m, J_m).
///
/// Informational only: practical schedules usually violate some of them.
pub fn check_schedule(schedule: &Schedule) -> ScheduleReport {
    let mut notes = Vec::new();
    let (mode, a, tau, sigma, j) = match schedule {
        Schedule::Theoretical(s) => (
            "theoretical",
            if s.gain.scale == 0.0 {
                Rate::zero()
            } else {
                Rate::poly(-s.gain.exponent)
            },
            Rate::poly(-s.tau.exponent),
            if s.sigma.scale == 0.0 {
                Rate::zero()
            } else {
                Rate::poly(-s.sigma.exponent)
            },
            Rate::poly(s.particles_exponent),
        ),
        Schedule::Practical(s) => {
            if s.tempering.is_some() {
                notes.push("finitely many tempering restarts do not change the asymptotic rates".into());
            }
            let a = match s.gain {
                Gain::Geometric { initial, .. } | Gain::Power { initial, .. } if initial == 0.0 => Rate::zero(),
                Gain::Geometric { ratio, .. } => Rate::geometric(ratio),
                Gain::Power { exponent, .. } => Rate::poly(-exponent),
            };
            let tau = Rate::geometric(s.cooling);
            let sigma = if s.sigma0 == 0.0 { Rate::zero() } else { tau };
            ("practical", a, tau, sigma, Rate::poly(0.0))
        }
    };

    let ratio = if sigma.is_zero() {
        Rate::zero()
    } else {
        sigma.mul(tau.pow(-1))
    };
    let j_tau = j.mul(tau);
    let noise = a.pow(2).mul(j.pow(-1)).mul(tau.pow(-2));
    let cond = |name, holds, rate: Rate, verdict: &str| RateCondition {
        name,
        holds,
        detail: format!("~ {} {verdict}", rate.describe()),
    };

    let conditions = vec![
        cond(
            TAU_TO_ZERO,
            tau.to_zero(),
            tau,
            if tau.to_zero() { "→ 0" } else { "does not vanish" },
        ),
        cond(
            RATIO_TO_ZERO,
            ratio.to_zero(),
            ratio,
            if ratio.to_zero() { "→ 0" } else { "does not vanish" },
        ),
        cond(
            J_TAU_TO_INF,
            j_tau.to_infinity(),
            j_tau,
            if j_tau.to_infinity() {
                "→ ∞"
            } else {
                "stays bounded"
            },
        ),
        cond(
            GAIN_TO_ZERO,
            a.to_zero(),
            a,
            if a.to_zero() { "→ 0" } else { "does not vanish" },
        ),
        cond(
            GAIN_SUM_INF,
            a.sum_diverges(),
            a,
            if a.sum_diverges() {
                "sum diverges"
            } else {
                "sum converges"
            },
        ),
        cond(
            NOISE_SUM_FINITE,
            !noise.sum_diverges(),
            noise,
            if noise.sum_diverges() {
                "sum diverges"
            } else {
                "sum converges"
            },
        ),
    ];
    ScheduleReport {
        mode,
        conditions,
        notes,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn practical(gain: Gain) -> Schedule {
        Schedule::Practical(PracticalSchedule {
            iterations: 50,
            particles: 2000,
            sigma0: 0.05,
            tau0: 0.5,
            cooling: 0.95,
            gain,
            tempering: None,
        })
    }

    #[test]
    fn standard_family_satisfies_everything() {
        for delta in [0.1, 0.5, 2.0] {
            let report = check_schedule(&Schedule::Theoretical(PowerLawSchedule::standard(delta, 10, 5)));
            assert!(report.all_hold(), "δ = {delta}: {report:?}");
        }
        let report = check_schedule(&Schedule::Theoretical(PowerLawSchedule::standard(0.5, 10, 5)));
        assert_eq!(report.condition(J_TAU_TO_INF).unwrap().detail, "~ m^0.5 → ∞");
        assert_eq!(
            report.condition(NOISE_SUM_FINITE).unwrap().detail,
            "~ m^-2 sum converges"
        );
    }

    #[test]
    fn fast_gain_decay_breaks_divergent_sum() {
        let mut s = PowerLawSchedule::standard(0.5, 10, 5);
        s.gain = PowerLaw::new(1.0, 2.0);
        let report = check_schedule(&Schedule::Theoretical(s));
        let bad: Vec<_> = report.violations().map(|c| c.name).collect();
        assert_eq!(bad, vec![GAIN_SUM_INF]);
    }

    #[test]
    fn practical_mode_is_flagged() {
        let report = check_schedule(&practical(Gain::Geometric {
            initial: 0.1,
            ratio: 0.95,
        }));
        let bad: Vec<_> = report.violations().map(|c| c.name).collect();
        assert!(bad.contains(&J_TAU_TO_INF));
        assert!(bad.contains(&RATIO_TO_ZERO));
        assert!(bad.contains(&GAIN_SUM_INF));
        assert!(report.condition(TAU_TO_ZERO).unwrap().holds);
        // a_m²/τ_m² ~ (0.95²/0.95²)^m: constant, so the sum diverges.
        assert!(!report.condition(NOISE_SUM_FINITE).unwrap().holds);
    }

    #[test]
    fn schedule_values() {
        let s = Schedule::Theoretical(PowerLawSchedule::standard(0.5, 10, 5));
        let st = s.step(3); // m = 4
        assert!((st.gain - 0.25).abs() < 1e-15);
        assert!((st.tau - 0.5).abs() < 1e-15);
        assert!((st.sigma - 4f64.powf(-0.75)).abs() < 1e-15);
        assert_eq!(st.particles, 40);

        let s = practical(Gain::Geometric {
            initial: 0.1,
            ratio: 0.95,
        });
        let st = s.step(2);
        assert!((st.tau - 0.5 * 0.95 * 0.95).abs() < 1e-15);
        assert!((st.sigma / st.tau - 0.1).abs() < 1e-12);
        assert!((st.gain - 0.1 * 0.95f64.powi(2)).abs() < 1e-15);
    }

    #[test]
    fn tempering_reraises_scales() {
        let s = Schedule::Practical(PracticalSchedule {
            iterations: 10,
            particles: 10,
            sigma0: 0.1,
            tau0: 1.0,
            cooling: 0.5,
            gain: Gain::Power {
                initial: 1.0,
                exponent: 1.0,
            },
            tempering: Some(Tempering {
                restarts: vec![3],
                factor: 8.0,
            }),
        });
        assert_eq!(s.step(2).tau, 0.25);
        assert_eq!(s.step(3).tau, 1.0);
        assert_eq!(s.step(4).tau, 0.5);
        assert!(check_schedule(&s).notes.len() == 1);
    }

    #[test]
    fn serde_round_trip() {
        let s = practical(Gain::Geometric {
            initial: 0.1,
            ratio: 0.95,
        });
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(serde_json::from_str::<Schedule>(&json).unwrap(), s);
        assert!(serde_json::from_str::<Schedule>(r#"{"mode":"practical","iterations":1}"#).is_err());
    }
}
