//! Per-coordinate reparameterization between the natural parameter scale and
//! the unconstrained scale on which all estimation arithmetic happens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Transform {
    #[default]
    Identity,
    /// Natural scale (0, ∞).
    Log,
    /// Natural scale (0, 1).
    Logit,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::Log => "log",
            Transform::Logit => "logit",
        }
    }

    pub fn in_domain(self, natural: f64) -> bool {
        match self {
            Transform::Identity => natural.is_finite(),
            Transform::Log => natural.is_finite() && natural > 0.0,
            Transform::Logit => natural > 0.0 && natural < 1.0,
        }
    }

    pub fn forward(self, natural: f64) -> f64 {
        match self {
            Transform::Identity => natural,
            Transform::Log => natural.ln(),
            Transform::Logit => (natural / (1.0 - natural)).ln(),
        }
    }

    pub fn inverse(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Logit => {
                if u >= 0.0 {
                    1.0 / (1.0 + (-u).exp())
                } else {
                    let e = u.exp();
                    e / (1.0 + e)
                }
            }
        }
    }
}

/// An unconstrained parameter vector. Every component is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!(
                "parameter component {i} is not finite ({})",
                values[i]
            )));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(p: ParamVector) -> Vec<f64> {
        p.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinate {
    pub name: String,
    #[serde(default)]
    pub transform: Transform,
}

/// Named coordinates, each with its own [`Transform`].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamTransform {
    coordinates: Vec<Coordinate>,
}

impl ParamTransform {
    pub fn new<S: Into<String>>(coords: impl IntoIterator<Item = (S, Transform)>) -> Self {
        Self {
            coordinates: coords
                .into_iter()
                .map(|(name, transform)| Coordinate {
                    name: name.into(),
                    transform,
                })
                .collect(),
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new((0..dim).map(|i| (format!("theta{}", i + 1), Transform::Identity)))
    }

    pub fn len(&self) -> usize {
        self.coordinates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coordinates.is_empty()
    }

    pub fn coordinates(&self) -> &[Coordinate] {
        &self.coordinates
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.coordinates.iter().map(|c| c.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.coordinates.iter().position(|c| c.name == name)
    }

    pub fn to_unconstrained(&self, natural: &[f64]) -> Result<ParamVector> {
        self.check_len(natural.len())?;
        let values = self
            .coordinates
            .iter()
            .zip(natural)
            .map(|(c, &v)| {
                if c.transform.in_domain(v) {
                    Ok(c.transform.forward(v))
                } else {
                    Err(Error::Domain {
                        name: c.name.clone(),
                        value: v,
                        transform: c.transform.name(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        ParamVector::new(values)
    }

    pub fn from_unconstrained(&self, theta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; theta.len()];
        self.from_unconstrained_into(theta, &mut out);
        out
    }

    pub fn from_unconstrained_into(&self, theta: &[f64], natural: &mut [f64]) {
        debug_assert_eq!(theta.len(), self.len());
        for ((c, &u), out) in self.coordinates.iter().zip(theta).zip(natural.iter_mut()) {
            *out = c.transform.inverse(u);
        }
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.len() {
            return Err(Error::Dimension {
                what: "parameter vector",
                expected: self.len(),
                got,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_points() {
        let id = ParamTransform::identity(2);
        assert_eq!(id.to_unconstrained(&[1.5, -2.0]).unwrap().as_slice(), &[1.5, -2.0]);
        let t = ParamTransform::new([("q", Transform::Log), ("p", Transform::Logit)]);
        assert_eq!(t.to_unconstrained(&[1.0, 0.5]).unwrap().as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn domain_errors_name_the_coordinate() {
        let t = ParamTransform::new([("a", Transform::Identity), ("q", Transform::Log)]);
        match t.to_unconstrained(&[1.0, -1.0]) {
            Err(Error::Domain { name, .. }) => assert_eq!(name, "q"),
            other => panic!("unexpected {other:?}"),
        }
        let t = ParamTransform::new([("rho", Transform::Logit)]);
        assert!(matches!(t.to_unconstrained(&[1.0]), Err(Error::Domain { .. })));
        assert!(matches!(t.to_unconstrained(&[0.2, 0.3]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn param_vector_rejects_nan() {
        assert!(ParamVector::new(vec![1.0, f64::NAN]).is_err());
        assert!(serde_json::from_str::<ParamVector>("[1.0, 2.0]").is_ok());
    }

    fn in_domain_point() -> impl Strategy<Value = (Transform, f64)> {
        prop_oneof![
            (-1e6..1e6f64).prop_map(|x| (Transform::Identity, x)),
            (-20.0..20.0f64).prop_map(|l| (Transform::Log, l.exp())),
            (1e-6..1.0 - 1e-6f64).prop_map(|p| (Transform::Logit, p)),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn round_trip((kind, x) in in_domain_point()) {
            let back = kind.inverse(kind.forward(x));
            prop_assert!((back - x).abs() <= 1e-12 * (1.0 + x.abs()), "{kind:?} {x} -> {back}");
        }
    }
}
