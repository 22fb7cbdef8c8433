use serde::{Deserialize, Serialize};

use super::{check_well_posed, Diagnostics, FitError, LpfModel, RegressionProblem};
use crate::linalg::lstsq_rows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LnrConfig {
    /// Normalized-residual cutoff.
    pub threshold: f64,
    pub max_removals: usize,
}

impl Default for LnrConfig {
    fn default() -> Self {
        Self {
            threshold: 3.0,
            max_removals: usize::MAX,
        }
    }
}

/// Two-stage largest-normalized-residual elimination.
///
/// Each round refits least squares on the retained samples and computes
/// `n_ij = r_ij / sqrt(σ̂_j² (1 − h_ii))` with `σ̂_j² = RSS_j / (m_active − d)`.
/// The sample with the largest `max_j |n_ij|` is dropped if that value exceeds
/// the threshold; one sample per round. Hitting `max_removals` stops the loop
/// with `diagnostics.converged == false`.
pub fn fit_lnr(prob: &RegressionProblem, cfg: &LnrConfig) -> Result<LpfModel, FitError> {
    if !(cfg.threshold > 0.0) {
        return Err(FitError::IllPosed(format!(
            "LNR threshold must be positive, got {}",
            cfg.threshold
        )));
    }
    check_well_posed(prob, prob.m())?;
    let (m, d, ny) = (prob.m(), prob.design_dim(), prob.n_y());
    let design = prob.design();
    let mut active: Vec<usize> = (0..m).collect();
    let mut z = vec![false; m];
    let mut removals = 0;
    let mut converged = true;
    let mut rounds = 0;

    let (fit, sigma2) = loop {
        rounds += 1;
        let fit = lstsq_rows(&design, &prob.y, &active, None);
        if !fit.qr.is_full_rank() {
            return Err(FitError::RankDeficient {
                rank: fit.qr.rank(),
                dim: d,
                condition: fit.qr.condition_estimate(),
            });
        }
        let dof = (active.len() - d) as f64;
        let sigma2: Vec<f64> = fit.rss.iter().map(|r| r / dof).collect();

        let mut worst: Option<(f64, usize)> = None;
        for (t, &i) in active.iter().enumerate() {
            let row: Vec<f64> = (0..d).map(|k| design[(i, k)]).collect();
            let h = fit.qr.leverage(&row);
            if h >= 1.0 - 1e-12 {
                continue;
            }
            let mut stat: f64 = 0.0;
            for j in 0..ny {
                if sigma2[j] <= 0.0 {
                    continue;
                }
                let pred: f64 = (0..d).map(|k| design[(i, k)] * fit.coef[(k, j)]).sum();
                let r = prob.y[(i, j)] - pred;
                stat = stat.max(r.abs() / (sigma2[j] * (1.0 - h)).sqrt());
            }
            if worst.is_none_or(|(s, _)| stat > s) {
                worst = Some((stat, t));
            }
        }

        match worst {
            Some((stat, t)) if stat > cfg.threshold => {
                if removals == cfg.max_removals {
                    converged = false;
                    break (fit, sigma2);
                }
                if active.len() - 1 < d + 1 {
                    return Err(FitError::TooFewSamples {
                        active: active.len() - 1,
                        needed: d + 1,
                    });
                }
                z[active[t]] = true;
                active.remove(t);
                removals += 1;
            }
            _ => break (fit, sigma2),
        }
    };

    let residuals = prob.residuals(&fit.coef);
    let objective = fit.total_rss();
    let diagnostics = Diagnostics {
        iterations: rounds,
        residuals,
        scales: sigma2.iter().map(|s| s.sqrt()).collect(),
        converged,
        objective_l2: Some(objective),
        note: Some(format!("{removals} samples removed")),
        ..Default::default()
    };
    Ok(LpfModel::from_coef(prob, &fit.coef, z, objective, diagnostics))
}
