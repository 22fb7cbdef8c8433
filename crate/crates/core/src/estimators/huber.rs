use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_well_posed, residual_norms, Diagnostics, FitError, LpfModel, RegressionProblem};
use crate::linalg::lstsq_rows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuberConfig {
    /// Threshold δ on the per-sample residual norm.
    pub delta: f64,
    pub irls_tol: f64,
    pub irls_max_iter: usize,
}

impl HuberConfig {
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            irls_tol: 1e-10,
            irls_max_iter: 200,
        }
    }
}

/// Penalty on one residual norm: `r²` up to δ, then `δ(2r − δ)`.
pub fn huber_penalty(r: f64, delta: f64) -> f64 {
    if r <= delta {
        r * r
    } else {
        delta * (2.0 * r - delta)
    }
}

/// Sum of Huber penalties of the per-sample residual norms.
pub fn huber_objective(residuals: &DMatrix<f64>, delta: f64) -> f64 {
    residual_norms(residuals)
        .into_iter()
        .map(|r| huber_penalty(r, delta))
        .sum()
}

/// Huber regression on per-sample residual norms by IRLS.
///
/// Each step solves a weighted least squares with `w_i = 1` for `r_i ≤ δ`
/// and `δ / r_i` otherwise. This is a majorize–minimize scheme, so the
/// objective never increases; a step that would increase it (round-off) is
/// rejected and iteration stops. A fit that hits `irls_max_iter` is returned
/// with `diagnostics.converged == false`.
pub fn fit_huber(prob: &RegressionProblem, cfg: &HuberConfig) -> Result<LpfModel, FitError> {
    if !(cfg.delta > 0.0) {
        return Err(FitError::IllPosed(format!("Huber delta must be positive, got {}", cfg.delta)));
    }
    check_well_posed(prob, prob.m())?;
    let design = prob.design();
    let rows: Vec<usize> = (0..prob.m()).collect();

    let fit = lstsq_rows(&design, &prob.y, &rows, None);
    if !fit.qr.is_full_rank() {
        return Err(FitError::RankDeficient {
            rank: fit.qr.rank(),
            dim: prob.design_dim(),
            condition: fit.qr.condition_estimate(),
        });
    }
    let mut coef = fit.coef;
    let mut res = &prob.y - &design * &coef;
    let mut obj = huber_objective(&res, cfg.delta);
    let mut history = vec![obj];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.irls_max_iter {
        iterations += 1;
        let scale: Vec<f64> = residual_norms(&res)
            .into_iter()
            .map(|r| if r <= cfg.delta { 1.0 } else { (cfg.delta / r).sqrt() })
            .collect();
        let next = lstsq_rows(&design, &prob.y, &rows, Some(&scale)).coef;
        let next_res = &prob.y - &design * &next;
        let next_obj = huber_objective(&next_res, cfg.delta);
        if next_obj > obj * (1.0 + 1e-12) {
            converged = true;
            break;
        }
        let step = (&next - &coef).amax();
        let size = coef.amax().max(1.0);
        coef = next;
        res = next_res;
        obj = next_obj;
        history.push(obj);
        if step <= cfg.irls_tol * size {
            converged = true;
            break;
        }
    }

    let diagnostics = Diagnostics {
        iterations,
        residuals: res,
        converged,
        objective_history: history,
        scales: vec![cfg.delta],
        ..Default::default()
    };
    Ok(LpfModel::from_coef(prob, &coef, vec![false; prob.m()], obj, diagnostics))
}
