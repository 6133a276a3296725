#![allow(dead_code)]

use iterfilt_core::oracle::{kalman_loglik, reference_optimize, LgssModel, OptimizeOptions};
use iterfilt_core::{simulate, Model, ObservationSeries, ParamVector, RngStream, TimeGrid};

/// x_n = a x_{n-1} + N(0, q), y_n = x_n + N(0, 1), x_0 ~ N(0, 1); θ = (a, log q).
pub fn lgss() -> LgssModel {
    LgssModel::scalar_ar1(0.8, 1.0, 1.0)
}

pub fn truth(model: &LgssModel) -> ParamVector {
    model.transform().to_unconstrained(&[0.8, 1.0]).unwrap()
}

pub fn dataset(model: &LgssModel, n: usize, seed: u64) -> ObservationSeries {
    let grid = TimeGrid::regular(0.0, 1.0, n).unwrap();
    simulate(model, &truth(model), &grid, &RngStream::new(seed))
        .unwrap()
        .observations
}

pub fn exact_loglik(model: &LgssModel, theta: &[f64], data: &ObservationSeries) -> f64 {
    kalman_loglik(&model.spec_at_unconstrained(theta), data)
        .map(|k| k.loglik)
        .unwrap_or(f64::NEG_INFINITY)
}

pub fn mle(model: &LgssModel, data: &ObservationSeries) -> Vec<f64> {
    let start = truth(model);
    let bounds = [(-0.999, 0.999), (-10.0, 10.0)];
    let opt = reference_optimize(
        |t| exact_loglik(model, t, data),
        &start,
        Some(&bounds),
        &OptimizeOptions::default(),
    );
    assert!(opt.converged);
    opt.theta
}

pub fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}
