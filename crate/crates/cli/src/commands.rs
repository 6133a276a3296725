//! The five subcommands. Each resolves the model, runs, and writes its
//! files into the output directory; every JSON file carries the resolved
//! configuration and seed.

use std::path::PathBuf;
use std::sync::Arc;

use iterfilt_core::oracle::{fd_score, kalman_loglik};
use iterfilt_core::{
    check_schedule, mif_run, particle_filter, score_estimate, simulate, summarize_log_weights, FilterOptions,
    KernelSpec, MifAbort, MifOptions, MifResult, Model, ObservationSeries, ParamVector, PerturbationScales, RngStream,
    ScheduleReport, TimeGrid,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{observations_table, read_observations, series_header, write_json, Table};
use crate::registry::{Configured, ExactFn, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Pfilter,
    Mif,
    Score,
    Profile,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Pfilter => "pfilter",
            Command::Mif => "mif",
            Command::Score => "score",
            Command::Profile => "profile",
        }
    }
}

/// Files written by a command, in order.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a, T> {
    command: &'static str,
    seed: u64,
    config: &'a RunConfig,
    #[serde(flatten)]
    result: T,
}

struct Prepared {
    model: Configured,
    exact: Option<Arc<ExactFn>>,
}

fn prepare(registry: &Registry, config: &RunConfig) -> CliResult<Prepared> {
    config.validate()?;
    let entry = registry.build(&config.model, config.model_options.as_ref())?;
    Ok(Prepared {
        model: Configured::new(entry.model, &config.params)?,
        exact: entry.exact,
    })
}

fn replicate_stream(seed: u64, r: usize) -> RngStream {
    RngStream::new(seed).named("replicate").child(r as u64)
}

fn load_data(config: &RunConfig, model: &dyn Model) -> CliResult<ObservationSeries> {
    read_observations(config.data_path()?, config.t0(), model.obs_dim())
}

fn exact_oracle(p: &Prepared) -> CliResult<&ExactFn> {
    p.exact
        .as_deref()
        .ok_or_else(|| CliError::config("--exact needs a model with a linear-Gaussian equivalent"))
}

fn exact_loglik_at(p: &Prepared, oracle: &ExactFn, theta: &[f64], data: &ObservationSeries) -> CliResult<f64> {
    let natural = p.model.transform().from_unconstrained(theta);
    let spec = oracle(&p.model.full(&natural), data.grid())?;
    Ok(kalman_loglik(&spec, data)?.loglik)
}

fn log_mean_exp(values: &[f64]) -> f64 {
    let mut scratch = vec![0.0; values.len()];
    summarize_log_weights(values, &mut scratch).map_or(f64::NEG_INFINITY, |s| s.log_mean_weight)
}

fn sample_sd(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn first_error<T>(results: Vec<iterfilt_core::Result<T>>) -> CliResult<Vec<T>> {
    results.into_iter().map(|r| r.map_err(CliError::from)).collect()
}

fn named(names: &[String], values: &[f64]) -> serde_json::Map<String, serde_json::Value> {
    names.iter().cloned().zip(values.iter().map(|&v| v.into())).collect()
}

pub fn run(registry: &Registry, command: Command, config: &RunConfig, exact: bool) -> CliResult<Outcome> {
    let p = prepare(registry, config)?;
    match command {
        Command::Simulate => cmd_simulate(&p, config),
        Command::Pfilter => cmd_pfilter(&p, config, exact),
        Command::Mif => cmd_mif(&p, config, exact),
        Command::Score => cmd_score(&p, config, exact),
        Command::Profile => cmd_profile(registry, &p, config),
    }
}

fn cmd_simulate(p: &Prepared, config: &RunConfig) -> CliResult<Outcome> {
    let times = config
        .times
        .ok_or_else(|| CliError::config("simulate needs a `times` block"))?;
    let grid = TimeGrid::regular(times.t0, times.dt, times.n)?;
    let sim = simulate(
        &p.model,
        &p.model.start()?,
        &grid,
        &RngStream::new(config.seed).named("simulate"),
    )?;

    let mut states = Table::new(series_header("x", p.model.state_dim()));
    for (n, x) in sim.states.iter().enumerate() {
        states.push_values(std::iter::once(grid.time(n)).chain(x.iter().copied()));
    }
    let dir = &config.output;
    let files = vec![
        dir.join("observations.csv"),
        dir.join("states.csv"),
        dir.join("simulate.json"),
    ];
    observations_table(&sim.observations).write(&files[0])?;
    states.write(&files[1])?;

    #[derive(Serialize)]
    struct Summary {
        observations: usize,
        state_rows: usize,
    }
    write_json(
        &files[2],
        &Envelope {
            command: "simulate",
            seed: config.seed,
            config,
            result: Summary {
                observations: sim.observations.len(),
                state_rows: states.len(),
            },
        },
    )?;
    Ok(Outcome { files })
}

#[derive(Serialize)]
struct ExactLoglik {
    loglik: f64,
    /// Reported log-likelihood minus the exact one.
    difference: f64,
}

fn cmd_pfilter(p: &Prepared, config: &RunConfig, exact: bool) -> CliResult<Outcome> {
    let data = load_data(config, &p.model)?;
    let theta = p.model.start()?;
    let oracle = if exact { Some(exact_oracle(p)?) } else { None };
    let opts = FilterOptions::new(config.filter.particles)
        .resampler(config.filter.resampler)
        .with_state_means();
    let runs = first_error(
        (0..config.replicates)
            .into_par_iter()
            .map(|r| particle_filter(&p.model, &theta, &data, &opts, &replicate_stream(config.seed, r)))
            .collect(),
    )?;
    let logliks: Vec<f64> = runs.iter().map(|r| r.loglik).collect();
    let loglik = log_mean_exp(&logliks);
    let first = &runs[0];
    let means = first.state_filter_means.clone().unwrap_or_default();

    let mut trace = Table::new(
        ["time", "cond_loglik", "ess"]
            .into_iter()
            .map(String::from)
            .chain((1..=p.model.state_dim()).map(|i| format!("x{i}")))
            .collect(),
    );
    for n in 1..=data.len() {
        let row = [data.grid().time(n), first.cond_loglik[n - 1], first.ess[n - 1]];
        trace.push_values(row.into_iter().chain(means[n].iter().copied()));
    }

    #[derive(Serialize)]
    struct Report<'a> {
        /// Log of the average likelihood estimate over replicates.
        loglik: f64,
        replicate_logliks: &'a [f64],
        replicate_sd: f64,
        particles: usize,
        /// Series below come from the first replicate.
        cond_loglik: &'a [f64],
        ess: &'a [f64],
        filter_means: &'a [Vec<f64>],
        #[serde(skip_serializing_if = "Option::is_none")]
        exact: Option<ExactLoglik>,
    }
    let exact = match oracle {
        Some(o) => {
            let exact = exact_loglik_at(p, o, &theta, &data)?;
            Some(ExactLoglik {
                loglik: exact,
                difference: loglik - exact,
            })
        }
        None => None,
    };
    let dir = &config.output;
    let files = vec![dir.join("pfilter.json"), dir.join("pfilter_trace.csv")];
    write_json(
        &files[0],
        &Envelope {
            command: "pfilter",
            seed: config.seed,
            config,
            result: Report {
                loglik,
                replicate_logliks: &logliks,
                replicate_sd: sample_sd(&logliks),
                particles: config.filter.particles,
                cond_loglik: &first.cond_loglik,
                ess: &first.ess,
                filter_means: &means,
                exact,
            },
        },
    )?;
    trace.write(&files[1])?;
    Ok(Outcome { files })
}

fn kernel_for(config: &RunConfig, dim: usize) -> CliResult<KernelSpec> {
    let diag = match &config.kernel.sigma_diag {
        Some(d) if d.len() != dim => {
            return Err(CliError::config(format!(
                "kernel.sigma_diag has {} entries for {dim} estimated parameters",
                d.len()
            )))
        }
        Some(d) => d.clone(),
        None => vec![1.0; dim],
    };
    Ok(KernelSpec::diagonal(&diag, config.kernel.radius)?)
}

fn names(model: &Configured) -> Vec<String> {
    model.transform().names().map(String::from).collect()
}

fn mif_trace(model: &Configured, r: &MifResult) -> Table {
    let names = names(model);
    let header = ["iteration", "loglik", "gain", "sigma", "tau", "particles"]
        .into_iter()
        .map(String::from)
        .chain(names.iter().map(|n| format!("u_{n}")))
        .chain(names.iter().cloned())
        .collect();
    let mut t = Table::new(header).integer_columns(&[0, 5]);
    for (m, (u, nat)) in r.trajectory.iter().zip(&r.natural).enumerate() {
        let mut row = vec![Some(m as f64)];
        match r.iterations.get(m) {
            Some(it) => row.extend(
                [
                    it.loglik,
                    it.settings.gain,
                    it.settings.sigma,
                    it.settings.tau,
                    it.settings.particles as f64,
                ]
                .map(Some),
            ),
            None => row.extend([None; 5]),
        }
        row.extend(u.iter().chain(nat).map(|&v| Some(v)));
        t.push(row);
    }
    t
}

fn cmd_mif(p: &Prepared, config: &RunConfig, exact: bool) -> CliResult<Outcome> {
    let data = load_data(config, &p.model)?;
    let schedule = config
        .schedule
        .clone()
        .ok_or_else(|| CliError::config("mif needs a `schedule` block"))?;
    let start = p.model.start()?;
    let oracle = if exact { Some(exact_oracle(p)?) } else { None };
    let options = MifOptions {
        kernel: kernel_for(config, start.len())?,
        schedule: schedule.clone(),
        resampler: config.filter.resampler,
        divergence_bound: config.divergence_bound,
    };
    let outcome = mif_run(
        &p.model,
        &data,
        &start,
        &options,
        &RngStream::new(config.seed).named("mif"),
    );
    let (result, failure) = match outcome {
        Ok(r) => (r, None),
        Err(MifAbort {
            partial,
            iteration,
            error,
        }) => (partial, Some((iteration, error))),
    };

    #[derive(Serialize)]
    struct Report<'a> {
        status: &'static str,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        #[serde(skip_serializing_if = "Option::is_none")]
        aborted_at: Option<usize>,
        parameters: Vec<String>,
        final_unconstrained: serde_json::Map<String, serde_json::Value>,
        final_natural: serde_json::Map<String, serde_json::Value>,
        #[serde(skip_serializing_if = "Option::is_none")]
        final_exact_loglik: Option<f64>,
        schedule_check: ScheduleReport,
        #[serde(flatten)]
        result: &'a MifResult,
    }
    let parameters = names(&p.model);
    let final_exact_loglik = match oracle {
        Some(o) => Some(exact_loglik_at(p, o, result.last(), &data)?),
        None => None,
    };
    let report = Report {
        status: if failure.is_some() { "aborted" } else { "completed" },
        error: failure.as_ref().map(|(_, e)| e.to_string()),
        aborted_at: failure.as_ref().map(|(m, _)| *m),
        final_unconstrained: named(&parameters, result.last()),
        final_natural: named(&parameters, result.natural.last().expect("start is recorded")),
        parameters,
        final_exact_loglik,
        schedule_check: check_schedule(&schedule),
        result: &result,
    };
    let dir = &config.output;
    let files = vec![dir.join("mif.json"), dir.join("mif_trace.csv")];
    write_json(
        &files[0],
        &Envelope {
            command: "mif",
            seed: config.seed,
            config,
            result: report,
        },
    )?;
    mif_trace(&p.model, &result).write(&files[1])?;
    match failure {
        Some((iteration, error)) => Err(CliError::Aborted { iteration, error }),
        None => Ok(Outcome { files }),
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (norm(a) * norm(b))
}

fn cmd_score(p: &Prepared, config: &RunConfig, exact: bool) -> CliResult<Outcome> {
    let data = load_data(config, &p.model)?;
    let theta = p.model.start()?;
    let oracle = if exact { Some(exact_oracle(p)?) } else { None };
    let kernel = kernel_for(config, theta.len())?;
    let scales = PerturbationScales::new(config.score.sigma, config.score.tau)?;
    let opts = FilterOptions::new(config.filter.particles).resampler(config.filter.resampler);
    let estimates = first_error(
        (0..config.replicates)
            .into_par_iter()
            .map(|r| {
                score_estimate(
                    &p.model,
                    &theta,
                    &data,
                    &kernel,
                    scales,
                    &opts,
                    &replicate_stream(config.seed, r),
                )
            })
            .collect(),
    )?;
    let d = theta.len();
    let per_replicate: Vec<Vec<f64>> = estimates.iter().map(|e| e.value.clone()).collect();
    let column = |i: usize| per_replicate.iter().map(|v| v[i]).collect::<Vec<f64>>();
    let mean: Vec<f64> = (0..d)
        .map(|i| column(i).iter().sum::<f64>() / per_replicate.len() as f64)
        .collect();
    let sd: Vec<f64> = (0..d).map(|i| sample_sd(&column(i))).collect();
    let first = &estimates[0];

    #[derive(Serialize)]
    struct ExactScore {
        score: Vec<f64>,
        /// Relative disagreement of the step-halved finite differences.
        fd_disagreement: f64,
        cosine: f64,
    }
    #[derive(Serialize)]
    struct Report<'a> {
        parameters: Vec<String>,
        theta_unconstrained: &'a [f64],
        sigma: f64,
        tau: f64,
        particles: usize,
        /// Mean over replicates.
        score: &'a [f64],
        replicate_scores: &'a [Vec<f64>],
        replicate_sd: &'a [f64],
        /// Per-observation summands of the first replicate.
        terms: &'a [Vec<f64>],
        term_count: usize,
        loglik: f64,
        #[serde(skip_serializing_if = "Option::is_none")]
        exact: Option<ExactScore>,
    }
    let exact = match oracle {
        Some(o) => {
            let fd = fd_score(
                |u| {
                    let natural = p.model.transform().from_unconstrained(u);
                    Ok(kalman_loglik(&o(&p.model.full(&natural), data.grid())?, &data)?.loglik)
                },
                &theta,
            )?;
            Some(ExactScore {
                cosine: cosine(&mean, &fd.score),
                fd_disagreement: fd.disagreement,
                score: fd.score,
            })
        }
        None => None,
    };
    let parameters = names(&p.model);
    let mut terms = Table::new(
        std::iter::once("time".to_owned())
            .chain(parameters.iter().map(|n| format!("term_{n}")))
            .collect(),
    );
    for (n, t) in first.terms.iter().enumerate() {
        terms.push_values(std::iter::once(data.grid().time(n + 1)).chain(t.iter().copied()));
    }
    let dir = &config.output;
    let files = vec![dir.join("score.json"), dir.join("score_terms.csv")];
    write_json(
        &files[0],
        &Envelope {
            command: "score",
            seed: config.seed,
            config,
            result: Report {
                parameters,
                theta_unconstrained: &theta,
                sigma: scales.sigma,
                tau: scales.tau,
                particles: config.filter.particles,
                score: &mean,
                replicate_scores: &per_replicate,
                replicate_sd: &sd,
                terms: &first.terms,
                term_count: first.terms.len(),
                loglik: first.filter.loglik,
                exact,
            },
        },
    )?;
    terms.write(&files[1])?;
    Ok(Outcome { files })
}

/// Likelihood slice along one parameter. Every grid point reuses the same
/// replicate streams, so neighbouring points share their Monte Carlo noise.
fn cmd_profile(registry: &Registry, p: &Prepared, config: &RunConfig) -> CliResult<Outcome> {
    let data = load_data(config, &p.model)?;
    let slice = config
        .profile
        .as_ref()
        .ok_or_else(|| CliError::config("profile needs a `profile` block"))?;
    if slice.values.is_empty() {
        return Err(CliError::config("profile.values is empty"));
    }
    if !config.params.iter().any(|q| q.name == slice.parameter) {
        return Err(CliError::config(format!(
            "unknown profile parameter `{}`",
            slice.parameter
        )));
    }
    let entry = registry.build(&config.model, config.model_options.as_ref())?;
    let points = slice
        .values
        .iter()
        .map(|&v| {
            let mut params = config.params.clone();
            for q in params.iter_mut().filter(|q| q.name == slice.parameter) {
                q.value = v;
            }
            let model = Configured::new(entry.model.clone(), &params)?;
            let theta = model.start()?;
            Ok((model, theta))
        })
        .collect::<CliResult<Vec<(Configured, ParamVector)>>>()?;
    let opts = FilterOptions::new(config.filter.particles).resampler(config.filter.resampler);
    let r = config.replicates;
    let logliks = first_error(
        (0..points.len() * r)
            .into_par_iter()
            .map(|k| {
                let (model, theta) = &points[k / r];
                particle_filter(model, theta, &data, &opts, &replicate_stream(config.seed, k % r)).map(|f| f.loglik)
            })
            .collect(),
    )?;

    let mut table = Table::new(vec![slice.parameter.clone(), "loglik".into(), "sd".into()]);
    #[derive(Serialize)]
    struct Row {
        value: f64,
        loglik: f64,
        sd: f64,
        replicate_logliks: Vec<f64>,
    }
    let mut rows = Vec::with_capacity(slice.values.len());
    for (i, &v) in slice.values.iter().enumerate() {
        let reps = &logliks[i * r..(i + 1) * r];
        let row = Row {
            value: v,
            loglik: log_mean_exp(reps),
            sd: sample_sd(reps),
            replicate_logliks: reps.to_vec(),
        };
        table.push_values([row.value, row.loglik, row.sd]);
        rows.push(row);
    }
    let best = rows
        .iter()
        .max_by(|a, b| a.loglik.total_cmp(&b.loglik))
        .map(|r| r.value)
        .expect("non-empty grid");

    #[derive(Serialize)]
    struct Report<'a> {
        /// Other parameters are held fixed, not re-maximized.
        kind: &'static str,
        parameter: &'a str,
        best_value: f64,
        rows: Vec<Row>,
    }
    let dir = &config.output;
    let files = vec![dir.join("profile.csv"), dir.join("profile.json")];
    table.write(&files[0])?;
    write_json(
        &files[1],
        &Envelope {
            command: "profile",
            seed: config.seed,
            config,
            result: Report {
                kind: "slice",
                parameter: &slice.parameter,
                best_value: best,
                rows,
            },
        },
    )?;
    Ok(Outcome { files })
}
