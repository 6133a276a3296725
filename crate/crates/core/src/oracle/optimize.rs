//! A plain derivative-free maximizer: coordinate search with step expansion
//! and halving. Good enough to certify a local maximum of a smooth, low
//! dimensional likelihood.

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evaluations: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            min_step: 1e-8,
            max_evaluations: 200_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Optimum {
    pub theta: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// False when the evaluation cap was hit before the step fell below `min_step`.
    pub converged: bool,
}

/// Maximize `objective` from `start`, optionally inside a box.
///
/// Non-finite objective values are treated as `-inf`.
pub fn reference_optimize(
    mut objective: impl FnMut(&[f64]) -> f64,
    start: &[f64],
    bounds: Option<&[(f64, f64)]>,
    options: &OptimizeOptions,
) -> Optimum {
    let clamp = |i: usize, v: f64| match bounds {
        Some(b) => v.clamp(b[i].0, b[i].1),
        None => v,
    };
    let mut eval = |x: &[f64], count: &mut usize| {
        *count += 1;
        let v = objective(x);
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };

    let mut evaluations = 0;
    let mut x: Vec<f64> = start.iter().enumerate().map(|(i, &v)| clamp(i, v)).collect();
    let mut best = eval(&x, &mut evaluations);
    let mut step = options.initial_step;

    while step >= options.min_step {
        if evaluations >= options.max_evaluations {
            return Optimum {
                theta: x,
                value: best,
                evaluations,
                converged: false,
            };
        }
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let mut stride = step;
                loop {
                    let mut trial = x.clone();
                    trial[i] = clamp(i, x[i] + dir * stride);
                    if trial[i] == x[i] {
                        break;
                    }
                    let v = eval(&trial, &mut evaluations);
                    if v > best {
                        best = v;
                        x = trial;
                        improved = true;
                        stride *= 2.0;
                    } else {
                        break;
                    }
                }
                if improved {
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Optimum {
        theta: x,
        value: best,
        evaluations,
        converged: true,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_maximum() {
        let opt = reference_optimize(|t| -(t[0] - 1.0).powi(2), &[-3.0], None, &OptimizeOptions::default());
        assert!(opt.converged);
        assert!((opt.theta[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn correlated_quadratic() {
        let f = |t: &[f64]| {
            let (a, b) = (t[0] - 0.5, t[1] + 2.0);
            -(a * a + 1.8 * a * b + b * b)
        };
        let opt = reference_optimize(f, &[3.0, 3.0], None, &OptimizeOptions::default());
        assert!(
            (opt.theta[0] - 0.5).abs() < 1e-5 && (opt.theta[1] + 2.0).abs() < 1e-5,
            "{opt:?}"
        );
    }

    #[test]
    fn respects_bounds() {
        let bounds = [(-1.0, 0.25)];
        let opt = reference_optimize(
            |t| -(t[0] - 1.0).powi(2),
            &[0.0],
            Some(&bounds),
            &OptimizeOptions::default(),
        );
        assert_eq!(opt.theta[0], 0.25);
    }

    #[test]
    fn evaluation_cap_returns_best_so_far() {
        let opts = OptimizeOptions {
            max_evaluations: 10,
            ..Default::default()
        };
        let opt = reference_optimize(|t| -(t[0] - 100.0).powi(2), &[0.0], None, &opts);
        assert!(!opt.converged);
        assert!(opt.value > -1e4);
    }
}
