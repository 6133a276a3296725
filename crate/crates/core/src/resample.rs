//! Ancestor selection for the resampling step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampler {
    /// Independent categorical draws.
    Multinomial,
    /// One uniform offset shared by J evenly spaced points.
    #[default]
    Systematic,
}

impl Resampler {
    pub fn resample(self, weights: &[f64], rng: &mut StreamRng) -> Result<Vec<usize>> {
        match self {
            Resampler::Multinomial => multinomial_resample(weights, rng),
            Resampler::Systematic => systematic_resample(weights, rng),
        }
    }
}

impl std::str::FromStr for Resampler {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multinomial" => Ok(Resampler::Multinomial),
            "systematic" => Ok(Resampler::Systematic),
            other => Err(Error::Invalid(format!("unknown resampler `{other}`"))),
        }
    }
}

fn cumulative(weights: &[f64]) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::Invalid("cannot resample an empty ensemble".into()));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0 && w.is_finite())) {
        return Err(Error::Invalid(format!(
            "resampling weight {w} is not a finite non-negative number"
        )));
    }
    let mut acc = 0.0;
    let cdf: Vec<f64> = weights
        .iter()
        .map(|w| {
            acc += w;
            acc
        })
        .collect();
    if !(acc > 0.0) {
        return Err(Error::Degeneracy {
            step: 0,
            max_log_weight: f64::NEG_INFINITY,
        });
    }
    Ok(cdf)
}

/// First index whose cumulative weight exceeds `point`, skipping zero-weight tails.
fn locate(cdf: &[f64], point: f64) -> usize {
    let i = cdf.partition_point(|&c| c <= point);
    i.min(cdf.len() - 1)
}

/// J i.i.d. ancestors with `P(k = i) ∝ weights[i]`.
pub fn multinomial_resample(weights: &[f64], rng: &mut StreamRng) -> Result<Vec<usize>> {
    let cdf = cumulative(weights)?;
    let total = *cdf.last().unwrap();
    Ok((0..weights.len())
        .map(|_| {
            let u: f64 = rng.random();
            settle(&cdf, weights, locate(&cdf, u * total))
        })
        .collect())
}

/// Systematic resampling: points `(u + k) / J`, `u ~ U[0, 1)`, so that index
/// `i` is copied either `⌊J w̄_i⌋` or `⌈J w̄_i⌉` times.
pub fn systematic_resample(weights: &[f64], rng: &mut StreamRng) -> Result<Vec<usize>> {
    let u: f64 = rng.random();
    systematic_with_offset(weights, u)
}

/// Systematic resampling for a given offset `u ∈ [0, 1)`.
pub fn systematic_with_offset(weights: &[f64], u: f64) -> Result<Vec<usize>> {
    let cdf = cumulative(weights)?;
    let total = *cdf.last().unwrap();
    let j = weights.len();
    let scale = j as f64 / total;
    // Cumulative weight in units of points. Values within rounding distance
    // of an integer are snapped so that integral J·w̄ gives exact counts.
    let bounds: Vec<f64> = cdf
        .iter()
        .map(|&c| {
            let s = c * scale;
            let r = s.round();
            if (s - r).abs() <= SNAP * j as f64 {
                r
            } else {
                s
            }
        })
        .collect();
    let mut out = Vec::with_capacity(j);
    let mut i = 0;
    for k in 0..j {
        // Point k sits at u + k; subtracting k from the bound avoids rounding u + k.
        while i < j - 1 && bounds[i] - k as f64 <= u {
            i += 1;
        }
        out.push(settle(&cdf, weights, i));
    }
    Ok(out)
}

const SNAP: f64 = 1e-12;

/// Rounding can land a point in the flat tail after the last positive weight.
fn settle(cdf: &[f64], weights: &[f64], i: usize) -> usize {
    if weights[i] > 0.0 {
        return i;
    }
    let last = cdf.len() - 1 - weights.iter().rev().position(|&w| w > 0.0).unwrap();
    if i > last {
        last
    } else {
        // Inside the cdf a zero-weight index is never selected: cdf[i] == cdf[i-1].
        i
    }
}

/// Ancestor counts per index.
pub fn counts(ancestors: &[usize], len: usize) -> Vec<usize> {
    let mut c = vec![0; len];
    for &a in ancestors {
        c[a] += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use proptest::prelude::*;

    #[test]
    fn point_mass() {
        let mut rng = RngStream::new(1).rng();
        for r in [Resampler::Multinomial, Resampler::Systematic] {
            assert_eq!(r.resample(&[1.0, 0.0, 0.0], &mut rng).unwrap(), vec![0, 0, 0]);
            assert_eq!(r.resample(&[0.0, 0.0, 2.0], &mut rng).unwrap(), vec![2, 2, 2]);
        }
    }

    #[test]
    fn all_zero_weights_is_degenerate() {
        let mut rng = RngStream::new(1).rng();
        for r in [Resampler::Multinomial, Resampler::Systematic] {
            assert!(matches!(
                r.resample(&[0.0, 0.0], &mut rng),
                Err(Error::Degeneracy { .. })
            ));
        }
        assert!(multinomial_resample(&[1.0, f64::NAN], &mut rng).is_err());
    }

    #[test]
    fn systematic_equal_weights_copy_each_once() {
        for g in 0..100 {
            let u = g as f64 / 100.0;
            assert_eq!(systematic_with_offset(&[0.25; 4], u).unwrap(), vec![0, 1, 2, 3]);
            assert_eq!(
                counts(&systematic_with_offset(&[0.5, 0.5, 0.0, 0.0], u).unwrap(), 4),
                vec![2, 2, 0, 0]
            );
        }
    }

    #[test]
    fn systematic_integral_expectations() {
        let mut w = vec![0.0; 10];
        w[..3].copy_from_slice(&[0.7, 0.2, 0.1]);
        for g in 0..=1000 {
            let u = (g as f64 / 1000.0).min(1.0 - f64::EPSILON);
            let c = counts(&systematic_with_offset(&w, u).unwrap(), 10);
            assert_eq!(&c[..3], &[7, 2, 1], "u = {u}");
        }
    }

    #[test]
    fn multinomial_uniform_case_is_uniform() {
        let mut rng = RngStream::new(2).rng();
        let mut c = [0usize; 4];
        let reps = 25_000;
        for _ in 0..reps {
            for a in multinomial_resample(&[1.0; 4], &mut rng).unwrap() {
                c[a] += 1;
            }
        }
        let e = reps as f64;
        let chi2: f64 = c.iter().map(|&o| (o as f64 - e).powi(2) / e).sum();
        // χ²_3 upper 0.001 quantile.
        assert!(chi2 < 16.266, "chi2 = {chi2}");
    }

    proptest! {
        #[test]
        fn counts_sum_to_ensemble_size(w in prop::collection::vec(0.0..1.0f64, 1..50), seed in any::<u64>()) {
            prop_assume!(w.iter().sum::<f64>() > 0.0);
            let mut rng = RngStream::new(seed).rng();
            for r in [Resampler::Multinomial, Resampler::Systematic] {
                let a = r.resample(&w, &mut rng).unwrap();
                prop_assert_eq!(a.len(), w.len());
                prop_assert!(a.iter().all(|&i| w[i] > 0.0));
            }
        }

        #[test]
        fn systematic_counts_are_floor_or_ceil(w in prop::collection::vec(0.0..1.0f64, 1..50), u in 0.0..1.0f64) {
            let total: f64 = w.iter().sum();
            prop_assume!(total > 0.0);
            let c = counts(&systematic_with_offset(&w, u).unwrap(), w.len());
            for (ci, wi) in c.iter().zip(&w) {
                let e = w.len() as f64 * wi / total;
                prop_assert!((*ci as f64) >= e.floor() - 1e-9 && (*ci as f64) <= e.ceil() + 1e-9);
            }
        }
    }
}
