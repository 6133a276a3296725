//! Fixtures shared by the benchmarks.

use iterfilt_core::oracle::LgssModel;
use iterfilt_core::{simulate, Model, ObservationSeries, ParamVector, RngStream, TimeGrid};

/// Scalar AR(1) observed with unit noise, `n` simulated observations at
/// `a = 0.8`, `q = 1`.
pub fn lgss_fixture(n: usize) -> (LgssModel, ParamVector, ObservationSeries) {
    let model = LgssModel::scalar_ar1(0.8, 1.0, 1.0);
    let theta = model.transform().to_unconstrained(&[0.8, 1.0]).expect("in domain");
    let grid = TimeGrid::regular(0.0, 1.0, n).expect("regular grid");
    let data = simulate(&model, &theta, &grid, &RngStream::new(1))
        .expect("simulation")
        .observations;
    (model, theta, data)
}

/// Unnormalized weights decaying exponentially across the ensemble.
pub fn skewed_weights(len: usize) -> Vec<f64> {
    (0..len).map(|i| (-(i as f64) / (len as f64 / 8.0)).exp()).collect()
}
