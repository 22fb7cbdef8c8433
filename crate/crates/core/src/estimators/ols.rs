use nalgebra::DMatrix;

use super::{check_well_posed, Diagnostics, FitError, LpfModel, RegressionProblem};
use crate::linalg::{lstsq_rows, LsFit};

/// Least squares on a subset of rows of a precomputed design matrix.
pub fn ols_on_rows(design: &DMatrix<f64>, y: &DMatrix<f64>, rows: &[usize]) -> LsFit {
    lstsq_rows(design, y, rows, None)
}

/// Ordinary least squares over all samples.
///
/// Fails on a design whose pivoted QR drops a column (see
/// [`crate::linalg::RANK_RTOL`]); the error carries the condition estimate.
pub fn fit_ols(prob: &RegressionProblem) -> Result<LpfModel, FitError> {
    check_well_posed(prob, prob.m())?;
    let rows: Vec<usize> = (0..prob.m()).collect();
    let design = prob.design();
    let fit = ols_on_rows(&design, &prob.y, &rows);
    if !fit.qr.is_full_rank() {
        return Err(FitError::RankDeficient {
            rank: fit.qr.rank(),
            dim: prob.design_dim(),
            condition: fit.qr.condition_estimate(),
        });
    }
    let residuals = &prob.y - &design * &fit.coef;
    let objective = residuals.iter().map(|r| r * r).sum();
    let diagnostics = Diagnostics {
        iterations: 1,
        residuals,
        converged: true,
        objective_l2: Some(objective),
        ..Default::default()
    };
    Ok(LpfModel::from_coef(
        prob,
        &fit.coef,
        vec![false; prob.m()],
        objective,
        diagnostics,
    ))
}
