use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{check_well_posed, Diagnostics, FitError, LpfModel, RegressionProblem};
use crate::linalg::lstsq_rows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvrConfig {
    /// Half-width of the insensitive tube, in output units.
    pub epsilon: f64,
    pub c_reg: f64,
    pub iters: usize,
    /// Fit on z-scored features (the regularizer then acts on the scaled
    /// coefficients). Coefficients are always reported on the raw scale.
    pub standardize: bool,
}

impl Default for SvrConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            c_reg: 10.0,
            iters: 5000,
            standardize: true,
        }
    }
}

/// `½‖w‖² + C Σ max(0, |r| − ε)` for one output, on transformed features.
fn output_objective(xt: &DMatrix<f64>, y: &[f64], w: &[f64], b: f64, cfg: &SvrConfig) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let hinge: f64 = (0..xt.nrows())
        .map(|i| {
            let pred: f64 = w.iter().enumerate().map(|(k, wk)| xt[(i, k)] * wk).sum::<f64>() + b;
            ((y[i] - pred).abs() - cfg.epsilon).max(0.0)
        })
        .sum();
    reg + cfg.c_reg * hinge
}

struct Transform {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

fn transform(prob: &RegressionProblem, cfg: &SvrConfig) -> Transform {
    let (m, nx) = (prob.m(), prob.n_x());
    let mut mean = vec![0.0; nx];
    let mut scale = vec![1.0; nx];
    for k in 0..nx {
        let col = prob.x.column(k);
        let mu = col.iter().sum::<f64>() / m as f64;
        if prob.fit_intercept {
            mean[k] = mu;
        }
        if cfg.standardize {
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / m as f64;
            if var > 0.0 {
                scale[k] = var.sqrt();
            }
        }
    }
    Transform { mean, scale }
}

/// SVR objective of a raw-scale model under `cfg`'s feature transform.
pub fn svr_objective(prob: &RegressionProblem, model: &LpfModel, cfg: &SvrConfig) -> f64 {
    let t = transform(prob, cfg);
    let xt = DMatrix::from_fn(prob.m(), prob.n_x(), |i, k| (prob.x[(i, k)] - t.mean[k]) / t.scale[k]);
    (0..prob.n_y())
        .map(|j| {
            let w: Vec<f64> = (0..prob.n_x()).map(|k| model.w[(j, k)] * t.scale[k]).collect();
            let b = model.b[j] + (0..prob.n_x()).map(|k| model.w[(j, k)] * t.mean[k]).sum::<f64>();
            let y: Vec<f64> = prob.y.column(j).iter().copied().collect();
            output_objective(&xt, &y, &w, b, cfg)
        })
        .sum()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Linear ε-insensitive support vector regression.
///
/// Full-batch normalized subgradient descent with step `η₀ / √(t+1)`, started
/// from the least-squares fit, keeping the best iterate. Outputs are fitted
/// independently.
pub fn fit_svr(prob: &RegressionProblem, cfg: &SvrConfig) -> Result<LpfModel, FitError> {
    if !(cfg.epsilon >= 0.0 && cfg.c_reg >= 0.0) {
        return Err(FitError::IllPosed("SVR epsilon and c_reg must be non-negative".into()));
    }
    check_well_posed(prob, prob.m())?;
    let (m, nx, ny) = (prob.m(), prob.n_x(), prob.n_y());
    let t = transform(prob, cfg);
    let xt = DMatrix::from_fn(m, nx, |i, k| (prob.x[(i, k)] - t.mean[k]) / t.scale[k]);
    let tprob = RegressionProblem::new(xt.clone(), prob.y.clone(), prob.fit_intercept);
    let rows: Vec<usize> = (0..m).collect();
    let start = lstsq_rows(&tprob.design(), &prob.y, &rows, None).coef;

    let mut coef = DMatrix::zeros(prob.design_dim(), ny);
    let mut total = 0.0;
    let mut initial = 0.0;
    for j in 0..ny {
        let y: Vec<f64> = prob.y.column(j).iter().copied().collect();
        let (mut w, mut b): (Vec<f64>, f64) = if cfg.c_reg > 0.0 {
            let w = (0..nx).map(|k| start[(k, j)]).collect();
            (w, if prob.fit_intercept { start[(nx, j)] } else { 0.0 })
        } else {
            (vec![0.0; nx], if prob.fit_intercept { median(&y) } else { 0.0 })
        };
        let mut best = output_objective(&xt, &y, &w, b, cfg);
        let (mut best_w, mut best_b) = (w.clone(), b);
        let spread = (y.iter().map(|v| v * v).sum::<f64>() / m as f64).sqrt();
        let eta0 = 0.5 * w.iter().fold(spread, |a, v| a.max(v.abs())).max(1e-8);
        let first = best;

        let mut gw = vec![0.0; nx];
        for it in 0..cfg.iters {
            gw.copy_from_slice(&w);
            let mut gb = 0.0;
            for i in 0..m {
                let pred: f64 = (0..nx).map(|k| xt[(i, k)] * w[k]).sum::<f64>() + b;
                let r = y[i] - pred;
                if r.abs() > cfg.epsilon {
                    let s = cfg.c_reg * r.signum();
                    for k in 0..nx {
                        gw[k] -= s * xt[(i, k)];
                    }
                    gb -= s;
                }
            }
            if !prob.fit_intercept {
                gb = 0.0;
            }
            let norm = (gw.iter().map(|g| g * g).sum::<f64>() + gb * gb).sqrt();
            if norm == 0.0 {
                break;
            }
            let step = eta0 / ((it + 1) as f64).sqrt() / norm;
            for k in 0..nx {
                w[k] -= step * gw[k];
            }
            b -= step * gb;
            let obj = output_objective(&xt, &y, &w, b, cfg);
            if obj < best {
                best = obj;
                best_w.copy_from_slice(&w);
                best_b = b;
            }
        }
        initial += first;
        total += best;
        for k in 0..nx {
            coef[(k, j)] = best_w[k] / t.scale[k];
        }
        if prob.fit_intercept {
            coef[(nx, j)] = best_b - (0..nx).map(|k| best_w[k] * t.mean[k] / t.scale[k]).sum::<f64>();
        }
    }
    let diagnostics = Diagnostics {
        iterations: cfg.iters,
        converged: true,
        objective_history: vec![initial, total],
        ..Default::default()
    };
    Ok(LpfModel::from_coef(prob, &coef, vec![false; m], total, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::testutil::random_problem;
    use crate::estimators::{fit_ols, residual_norms};

    #[test]
    fn wide_tube_is_bounded_by_ols_regularizer() {
        let prob = random_problem(30, 2, 2, 0.05, true, 4);
        let ols = fit_ols(&prob).unwrap();
        let max_r = residual_norms(&ols.diagnostics.residuals).into_iter().fold(0.0, f64::max);
        let cfg = SvrConfig {
            epsilon: max_r * 1.1,
            c_reg: 1e3,
            iters: 500,
            standardize: false,
        };
        let svr = fit_svr(&prob, &cfg).unwrap();
        let bound = 0.5 * ols.w.iter().map(|v| v * v).sum::<f64>();
        assert!(svr.objective <= bound + 1e-12);
        assert!((svr_objective(&prob, &svr, &cfg) - svr.objective).abs() < 1e-9 * (1.0 + bound));
    }

    #[test]
    fn no_loss_term_shrinks_to_median() {
        let prob = random_problem(21, 2, 1, 0.5, true, 2);
        let cfg = SvrConfig {
            c_reg: 0.0,
            ..SvrConfig::default()
        };
        let svr = fit_svr(&prob, &cfg).unwrap();
        assert!(svr.w.amax() < 1e-12);
        let y: Vec<f64> = prob.y.column(0).iter().copied().collect();
        assert!((svr.b[0] - median(&y)).abs() < 1e-12);
    }

    #[test]
    fn matches_grid_search_in_one_dimension() {
        let xs: Vec<f64> = (0..12).map(|i| i as f64 / 4.0).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 1.5 * x - 0.5 + 0.3 * ((i * 7 % 5) as f64 - 2.0))
            .collect();
        let prob = RegressionProblem::new(
            DMatrix::from_column_slice(12, 1, &xs),
            DMatrix::from_column_slice(12, 1, &ys),
            true,
        );
        let cfg = SvrConfig {
            epsilon: 0.1,
            c_reg: 1.0,
            iters: 5000,
            standardize: false,
        };
        let svr = fit_svr(&prob, &cfg).unwrap();
        let xt = DMatrix::from_fn(12, 1, |i, _| xs[i] - xs.iter().sum::<f64>() / 12.0);
        let mut grid_best = f64::INFINITY;
        for a in 0..=800 {
            let w = a as f64 * 0.005;
            for c in 0..=800 {
                let b = -1.0 + c as f64 * 0.005;
                grid_best = grid_best.min(output_objective(&xt, &ys, &[w], b, &cfg));
            }
        }
        assert!(svr.objective <= grid_best * 1.02, "{} vs {}", svr.objective, grid_best);
    }
}
