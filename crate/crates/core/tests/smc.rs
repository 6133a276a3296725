mod common;

use common::*;
use iterfilt_core::{
    extend_model, filter_process, particle_filter, Bound, Callback, Error, FilterOptions, KernelSpec, Model,
    ObservationSeries, ParamTransform, PerturbationScales, Process, Resampler, RngStream, StreamRng, TimeGrid,
};

#[test]
fn single_particle_follows_one_path() {
    let model = lgss();
    let theta = truth(&model);
    let data = dataset(&model, 30, 1);
    let stream = RngStream::new(5);
    for resampler in [Resampler::Multinomial, Resampler::Systematic] {
        let r = particle_filter(
            &model,
            &theta,
            &data,
            &FilterOptions::new(1).resampler(resampler),
            &stream,
        )
        .unwrap();
        // Rebuild the same path by hand from the per-(n, j) streams.
        let process = Bound::new(&model, &theta).unwrap();
        let mut x = vec![0.0];
        process.init(&stream.child(0).child(0), &mut x).unwrap();
        let mut ll = 0.0;
        for n in 1..=data.len() {
            let mut next = vec![0.0];
            let (t0, t1) = (data.grid().time(n - 1), data.grid().time(n));
            process
                .transition(&x, t0, t1, &stream.child(n as u64).child(0), &mut next)
                .unwrap();
            ll += process.log_measurement(data.get(n).unwrap(), &next, t1);
            x = next;
        }
        assert!((r.loglik - ll).abs() < 1e-9, "{} vs {ll}", r.loglik);
    }
}

#[test]
fn lgss_loglik_close_and_unbiased() {
    let model = lgss();
    let theta = truth(&model);
    let data = dataset(&model, 25, 2);
    let exact = exact_loglik(&model, &theta, &data);

    let single = particle_filter(&model, &theta, &data, &FilterOptions::new(5000), &RngStream::new(3)).unwrap();
    assert!((single.loglik - exact).abs() <= 1.0, "{} vs {exact}", single.loglik);

    let opts = FilterOptions::new(5000).resampler(Resampler::Multinomial);
    let ratios: Vec<f64> = (0..200)
        .map(|s| {
            let r = particle_filter(&model, &theta, &data, &opts, &RngStream::new(1000 + s)).unwrap();
            (r.loglik - exact).exp()
        })
        .collect();
    let (mean, sd) = mean_sd(&ratios);
    let se = sd / (ratios.len() as f64).sqrt();
    assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean}, se {se}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let model = lgss();
    let data = dataset(&model, 40, 4);
    let kernel = KernelSpec::identity(2);
    let g = extend_model(
        &model,
        &kernel,
        PerturbationScales::new(0.02, 0.2).unwrap(),
        &truth(&model),
    )
    .unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            filter_process(
                &g,
                &data,
                &FilterOptions::new(3000).with_state_means(),
                &RngStream::new(6),
            )
            .unwrap()
        })
    };
    let a = run(1);
    let b = run(4);
    assert_eq!(a.loglik.to_bits(), b.loglik.to_bits());
    assert_eq!(a.filter_means, b.filter_means);
    assert_eq!(a.prediction_variances, b.prediction_variances);
    assert_eq!(a.state_filter_means, b.state_filter_means);
}

#[test]
fn prediction_variances_are_psd_and_start_at_the_center() {
    let model = lgss();
    let data = dataset(&model, 40, 5);
    let kernel = KernelSpec::diagonal(&[1.0, 0.5], 6.0).unwrap();
    let center = truth(&model);
    for (seed, j) in [(1, 3), (2, 10), (3, 500)] {
        let g = extend_model(&model, &kernel, PerturbationScales::new(0.01, 0.1).unwrap(), &center).unwrap();
        let r = filter_process(&g, &data, &FilterOptions::new(j), &RngStream::new(seed)).unwrap();
        assert_eq!(r.filter_means.len(), data.len() + 1);
        assert_eq!(r.filter_means[0], center.to_vec());
        assert_eq!(r.prediction_variances.len(), data.len());
        for v in &r.prediction_variances {
            assert_eq!(v, &v.transpose());
            let slack = 1e-10 * v.trace();
            assert!(v.clone().symmetric_eigenvalues().min() >= -slack);
        }
    }
}

#[test]
fn first_prediction_variance_tracks_initial_spread() {
    // With σ = 0, Θ^P_1 = Θ_0 so Ṽ^P_1 estimates τ²Σ·(truncation factor).
    let model = lgss();
    let data = dataset(&model, 5, 6);
    let kernel = KernelSpec::diagonal(&[1.0, 2.0], 6.0).unwrap();
    let tau = 0.3;
    let g = extend_model(
        &model,
        &kernel,
        PerturbationScales::new(0.0, tau).unwrap(),
        &truth(&model),
    )
    .unwrap();
    let j = 20_000;
    let r = filter_process(&g, &data, &FilterOptions::new(j), &RngStream::new(7)).unwrap();
    let v = &r.prediction_variances[0];
    let f = kernel.variance_factor();
    for (i, s) in [1.0, 2.0].into_iter().enumerate() {
        let nominal = tau * tau * s * f;
        assert!((v[(i, i)] - nominal).abs() < 4.0 * nominal * (2.0 / j as f64).sqrt());
    }
}

#[test]
fn missing_observations_weigh_one() {
    let model = lgss();
    let full = dataset(&model, 10, 8);
    let values: Vec<Option<Vec<f64>>> = (1..=10)
        .map(|n| {
            if n % 3 == 0 {
                None
            } else {
                full.get(n).map(<[f64]>::to_vec)
            }
        })
        .collect();
    let data = ObservationSeries::new(full.grid().clone(), 1, values).unwrap();
    let r = particle_filter(
        &model,
        &truth(&model),
        &data,
        &FilterOptions::new(200),
        &RngStream::new(9),
    )
    .unwrap();
    for n in [3, 6, 9] {
        assert_eq!(r.cond_loglik[n - 1], 0.0);
        assert_eq!(r.ess[n - 1], 200.0);
    }
    let none = ObservationSeries::new(full.grid().clone(), 1, vec![None; 10]).unwrap();
    let r = particle_filter(
        &model,
        &truth(&model),
        &none,
        &FilterOptions::new(50),
        &RngStream::new(9),
    )
    .unwrap();
    assert_eq!(r.loglik, 0.0);
}

/// Zero density at every step from `dead_from` on; NaN density at `nan_at`.
struct Broken {
    dead_from: usize,
    nan_at: usize,
    transform: ParamTransform,
}

impl Model for Broken {
    fn state_dim(&self) -> usize {
        1
    }
    fn obs_dim(&self) -> usize {
        1
    }
    fn transform(&self) -> &ParamTransform {
        &self.transform
    }
    fn init_state(&self, _: &[f64], _: &mut StreamRng, x0: &mut [f64]) {
        x0[0] = 0.0;
    }
    fn transition(&self, _: &[f64], _: &[f64], _: f64, t: f64, _: &mut StreamRng, x: &mut [f64]) {
        x[0] = t;
    }
    fn log_measurement_density(&self, _: &[f64], x: &[f64], _: &[f64], _: f64) -> f64 {
        let n = x[0] as usize;
        if n == self.nan_at {
            f64::NAN
        } else if n >= self.dead_from {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }
}

#[test]
fn degeneracy_and_bad_densities_are_reported_with_their_step() {
    let grid = TimeGrid::regular(0.0, 1.0, 6).unwrap();
    let data = ObservationSeries::complete(grid, vec![vec![0.0]; 6]).unwrap();
    let theta = iterfilt_core::ParamVector::new(vec![]).unwrap();
    let model = Broken {
        dead_from: 3,
        nan_at: 100,
        transform: ParamTransform::identity(0),
    };
    let err = particle_filter(&model, &theta, &data, &FilterOptions::new(10), &RngStream::new(1)).unwrap_err();
    assert!(matches!(err, Error::Degeneracy { step: 3, .. }), "{err:?}");

    let model = Broken {
        dead_from: 100,
        nan_at: 4,
        transform: ParamTransform::identity(0),
    };
    let err = particle_filter(&model, &theta, &data, &FilterOptions::new(10), &RngStream::new(1)).unwrap_err();
    assert_eq!(
        err,
        Error::ModelEvaluation {
            step: 4,
            callback: Callback::MeasurementDensity
        }
    );
}

#[test]
fn observation_dimension_mismatch() {
    let model = lgss();
    let grid = TimeGrid::regular(0.0, 1.0, 2).unwrap();
    let data = ObservationSeries::complete(grid, vec![vec![0.0, 1.0]; 2]).unwrap();
    let err = particle_filter(
        &model,
        &truth(&model),
        &data,
        &FilterOptions::new(10),
        &RngStream::new(1),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}
