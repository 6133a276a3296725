use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::lgss::{gaussian_log_density, LgssModel, LgssSpec};
use crate::error::{Error, Result};
use crate::model::ObservationSeries;

#[derive(Debug, Clone, Serialize)]
pub struct KalmanOutput {
    pub loglik: f64,
    /// Per-step log predictive densities `log f(y_n | y_{1:n-1})`.
    pub cond_loglik: Vec<f64>,
    pub pred_means: Vec<DVector<f64>>,
    pub pred_covs: Vec<DMatrix<f64>>,
    pub filter_means: Vec<DVector<f64>>,
    pub filter_covs: Vec<DMatrix<f64>>,
}

/// Exact log-likelihood of `data` under `spec` by the Kalman recursion.
/// Missing observations contribute nothing.
pub fn kalman_loglik(spec: &LgssSpec, data: &ObservationSeries) -> Result<KalmanOutput> {
    spec.validate()?;
    if !data.is_empty() && data.dim() != spec.obs_dim() {
        return Err(Error::Dimension {
            what: "observation vector",
            expected: spec.obs_dim(),
            got: data.dim(),
        });
    }
    let n_obs = data.len();
    let mut out = KalmanOutput {
        loglik: 0.0,
        cond_loglik: Vec::with_capacity(n_obs),
        pred_means: Vec::with_capacity(n_obs),
        pred_covs: Vec::with_capacity(n_obs),
        filter_means: Vec::with_capacity(n_obs + 1),
        filter_covs: Vec::with_capacity(n_obs + 1),
    };
    let mut m = spec.m0.clone();
    let mut p = spec.p0.clone();
    out.filter_means.push(m.clone());
    out.filter_covs.push(p.clone());

    for n in 1..=n_obs {
        let m_pred = &spec.a * &m + &spec.b;
        let p_pred = symmetrize(&spec.a * &p * spec.a.transpose() + &spec.q);
        match data.get(n) {
            Some(y) => {
                let resid = DVector::from_column_slice(y) - &spec.h * &m_pred;
                let s = symmetrize(&spec.h * &p_pred * spec.h.transpose() + &spec.r);
                let ll = gaussian_log_density(&resid, &s).ok_or(Error::SingularInnovation { step: n })?;
                let s_inv = s
                    .clone()
                    .cholesky()
                    .map(|c| c.inverse())
                    .ok_or(Error::SingularInnovation { step: n })?;
                let gain = &p_pred * spec.h.transpose() * s_inv;
                m = &m_pred + &gain * resid;
                // Joseph form keeps the covariance symmetric PSD.
                let i_kh = DMatrix::identity(spec.state_dim(), spec.state_dim()) - &gain * &spec.h;
                p = symmetrize(&i_kh * &p_pred * i_kh.transpose() + &gain * &spec.r * gain.transpose());
                out.loglik += ll;
                out.cond_loglik.push(ll);
            }
            None => {
                m = m_pred.clone();
                p = p_pred.clone();
                out.cond_loglik.push(0.0);
            }
        }
        out.pred_means.push(m_pred);
        out.pred_covs.push(p_pred);
        out.filter_means.push(m.clone());
        out.filter_covs.push(p.clone());
    }
    Ok(out)
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Finite-difference gradient of the exact log-likelihood on the
/// unconstrained scale.
#[derive(Debug, Clone, Serialize)]
pub struct FdScore {
    /// Central differences with step `h_i = 1e-5 (1 + |θ_i|)`.
    pub score: Vec<f64>,
    /// The same with step `h_i / 2`.
    pub half_step: Vec<f64>,
    /// Largest `|g_h − g_{h/2}| / max(|g_h|, 1)` over coordinates.
    pub disagreement: f64,
}

pub fn kalman_score(model: &LgssModel, data: &ObservationSeries, theta: &[f64]) -> Result<FdScore> {
    fd_score(
        |t: &[f64]| kalman_loglik(&model.spec_at_unconstrained(t), data).map(|k| k.loglik),
        theta,
    )
}

/// Central-difference gradient of any log-likelihood, with the half-step check.
pub fn fd_score(mut ll: impl FnMut(&[f64]) -> Result<f64>, theta: &[f64]) -> Result<FdScore> {
    let d = theta.len();
    let mut score = vec![0.0; d];
    let mut half_step = vec![0.0; d];
    let mut disagreement: f64 = 0.0;
    let mut probe = theta.to_vec();
    for i in 0..d {
        let h = 1e-5 * (1.0 + theta[i].abs());
        let mut central = |step: f64| -> Result<f64> {
            probe[i] = theta[i] + step;
            let up = ll(&probe)?;
            probe[i] = theta[i] - step;
            let down = ll(&probe)?;
            probe[i] = theta[i];
            Ok((up - down) / (2.0 * step))
        };
        score[i] = central(h)?;
        half_step[i] = central(h / 2.0)?;
        disagreement = disagreement.max((score[i] - half_step[i]).abs() / score[i].abs().max(1.0));
    }
    Ok(FdScore {
        score,
        half_step,
        disagreement,
    })
}
