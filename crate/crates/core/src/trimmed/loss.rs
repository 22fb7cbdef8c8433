use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::complement;
use crate::estimators::{lav_on_rows, LavConfig, RegressionProblem};
use crate::linalg::{lstsq_rows, PivotedQr};

/// Per-sample loss of a trimmed fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    /// Sum of squared residuals.
    Squared,
    /// Sum of absolute residuals.
    Absolute,
}

/// Objective of the best fit after excluding the sorted sample set `excluded`.
pub fn subset_objective(prob: &RegressionProblem, loss: Loss, excluded: &[usize]) -> f64 {
    let design = prob.design();
    let ev = Evaluator::new(&design, &prob.y, loss);
    ev.fit(&complement(prob.m(), excluded), None).objective
}

/// Fit on a row subset together with a certified lower bound on the optimal
/// objective over those rows.
#[derive(Debug, Clone)]
pub(crate) struct SubsetFit {
    pub coef: DMatrix<f64>,
    pub objective: f64,
    pub lower: f64,
    cert: Certificate,
}

#[derive(Debug, Clone)]
enum Certificate {
    None,
    /// Full-rank QR of the fitted rows.
    Squared(PivotedQr),
    /// Per output: a dual-feasible point supported on an interpolation basis.
    Absolute(Vec<L1Dual>),
}

#[derive(Debug, Clone)]
struct L1Dual {
    /// Basis row coefficients `λ_B` after scaling into the unit box.
    lambda_b: Vec<f64>,
    /// Fit interpolating the basis rows.
    coef: Vec<f64>,
    /// Transposed LU of the basis rows, for `A_B^T v = a_j`.
    basis_t: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

pub(crate) struct Evaluator<'a> {
    pub design: &'a DMatrix<f64>,
    pub y: &'a DMatrix<f64>,
    pub loss: Loss,
    lav: LavConfig,
}

impl<'a> Evaluator<'a> {
    pub fn new(design: &'a DMatrix<f64>, y: &'a DMatrix<f64>, loss: Loss) -> Self {
        Self {
            design,
            y,
            loss,
            lav: LavConfig::default(),
        }
    }

    pub fn m(&self) -> usize {
        self.design.nrows()
    }

    pub fn dim(&self) -> usize {
        self.design.ncols()
    }

    fn residual(&self, coef: &DMatrix<f64>, i: usize, out: usize) -> f64 {
        let pred: f64 = (0..self.dim()).map(|k| self.design[(i, k)] * coef[(k, out)]).sum();
        self.y[(i, out)] - pred
    }

    /// Loss contribution of sample `i` under `coef`.
    pub fn sample_loss(&self, coef: &DMatrix<f64>, i: usize) -> f64 {
        let ny = self.y.ncols();
        match self.loss {
            Loss::Squared => (0..ny).map(|o| self.residual(coef, i, o).powi(2)).sum(),
            Loss::Absolute => (0..ny).map(|o| self.residual(coef, i, o).abs()).sum(),
        }
    }

    /// Plain fit without a bound certificate.
    pub fn fit(&self, rows: &[usize], warm: Option<&DMatrix<f64>>) -> SubsetFit {
        match self.loss {
            Loss::Squared => {
                let fit = lstsq_rows(self.design, self.y, rows, None);
                let objective = fit.total_rss();
                SubsetFit {
                    coef: fit.coef,
                    objective,
                    lower: objective,
                    cert: Certificate::None,
                }
            }
            Loss::Absolute => {
                let fit = lav_on_rows(self.design, self.y, rows, &self.lav, warm);
                SubsetFit {
                    objective: fit.total(),
                    coef: fit.coef,
                    lower: 0.0,
                    cert: Certificate::None,
                }
            }
        }
    }

    /// Fit plus the data needed by [`Evaluator::increments`].
    pub fn fit_certified(&self, rows: &[usize], warm: Option<&DMatrix<f64>>) -> SubsetFit {
        match self.loss {
            Loss::Squared => {
                let fit = lstsq_rows(self.design, self.y, rows, None);
                let objective = fit.total_rss();
                let cert = if fit.qr.is_full_rank() {
                    Certificate::Squared(fit.qr)
                } else {
                    Certificate::None
                };
                SubsetFit {
                    coef: fit.coef,
                    objective,
                    lower: objective,
                    cert,
                }
            }
            Loss::Absolute => {
                let mut fit = self.fit(rows, warm);
                let mut duals = Vec::with_capacity(self.y.ncols());
                let mut lower = 0.0;
                for out in 0..self.y.ncols() {
                    match self.l1_dual(rows, &fit.coef, out) {
                        Some((dual, bound)) => {
                            lower += bound;
                            duals.push(dual);
                        }
                        None => {
                            fit.lower = 0.0;
                            return fit;
                        }
                    }
                }
                fit.lower = lower.min(fit.objective);
                fit.cert = Certificate::Absolute(duals);
                fit
            }
        }
    }

    /// Dual-feasible point of the LAV problem on `rows` for one output.
    ///
    /// The basis is the `d` rows best fitted by `coef`. Non-basis multipliers
    /// are the residual signs of the interpolating fit; basis multipliers
    /// restore `A^T λ = 0`, and the whole vector is scaled into `[-1, 1]`.
    /// The dual value then equals the interpolating fit's L1 loss divided by
    /// that scale.
    fn l1_dual(&self, rows: &[usize], coef: &DMatrix<f64>, out: usize) -> Option<(L1Dual, f64)> {
        let d = self.dim();
        if rows.len() < d {
            return None;
        }
        let mut by_fit: Vec<(f64, usize)> = rows
            .iter()
            .map(|&i| (self.residual(coef, i, out).abs(), i))
            .collect();
        by_fit.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let basis: Vec<usize> = by_fit[..d].iter().map(|&(_, i)| i).collect();
        let a_b = DMatrix::from_fn(d, d, |r, k| self.design[(basis[r], k)]);
        let lu = a_b.clone().lu();
        let y_b = DVector::from_fn(d, |r, _| self.y[(basis[r], out)]);
        let c = lu.solve(&y_b)?;
        if c.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut rhs = DVector::zeros(d);
        let mut l1 = 0.0;
        for &i in rows {
            if basis.contains(&i) {
                continue;
            }
            let pred: f64 = (0..d).map(|k| self.design[(i, k)] * c[k]).sum();
            let r = self.y[(i, out)] - pred;
            l1 += r.abs();
            let s = sign(r);
            for k in 0..d {
                rhs[k] -= s * self.design[(i, k)];
            }
        }
        let basis_t = a_b.transpose().lu();
        let lambda = basis_t.solve(&rhs)?;
        let scale = lambda.iter().fold(1.0f64, |a, v| a.max(v.abs()));
        if !scale.is_finite() {
            return None;
        }
        let bound = l1 / scale;
        Some((
            L1Dual {
                lambda_b: lambda.iter().map(|v| v / scale).collect(),
                coef: c.iter().copied().collect(),
                basis_t,
            },
            bound,
        ))
    }

    /// How much dropping each of `rows` (all among the fitted rows) would
    /// lower the objective. For squared loss this is the exact deletion
    /// effect `‖e_i‖² / (1 − h_i)`, which exposes high-leverage samples that
    /// the fit bends towards; otherwise the sample's own loss.
    pub fn deletion_scores(&self, fit: &SubsetFit, rows: &[usize]) -> Vec<f64> {
        let d = self.dim();
        match &fit.cert {
            Certificate::Squared(qr) => rows
                .iter()
                .map(|&i| {
                    let row: Vec<f64> = (0..d).map(|k| self.design[(i, k)]).collect();
                    let slack = 1.0 - qr.leverage(&row);
                    let loss = self.sample_loss(&fit.coef, i);
                    if slack > 1e-12 {
                        loss / slack
                    } else if loss > 0.0 {
                        f64::INFINITY
                    } else {
                        0.0
                    }
                })
                .collect(),
            _ => rows.iter().map(|&i| self.sample_loss(&fit.coef, i)).collect(),
        }
    }

    /// For each sample in `candidates` (disjoint from the fitted rows), an
    /// amount `δ_j` such that the optimal objective over the fitted rows plus
    /// `j`, and so over any superset of them, is at least `fit.lower + δ_j`.
    /// Without a certificate every increment is zero.
    pub fn increments(&self, fit: &SubsetFit, candidates: &[usize]) -> Vec<f64> {
        let d = self.dim();
        let ny = self.y.ncols();
        match &fit.cert {
            Certificate::None => vec![0.0; candidates.len()],
            Certificate::Squared(qr) => candidates
                .iter()
                .map(|&j| {
                    let row: Vec<f64> = (0..d).map(|k| self.design[(j, k)]).collect();
                    let h = qr.leverage(&row);
                    let e2: f64 = (0..ny).map(|o| self.residual(&fit.coef, j, o).powi(2)).sum();
                    e2 / (1.0 + h)
                })
                .collect(),
            Certificate::Absolute(duals) => candidates
                .iter()
                .map(|&j| {
                    let a_j = DVector::from_fn(d, |k, _| self.design[(j, k)]);
                    duals
                        .iter()
                        .enumerate()
                        .map(|(out, dual)| {
                            let pred: f64 = (0..d).map(|k| a_j[k] * dual.coef[k]).sum();
                            let e = self.y[(j, out)] - pred;
                            let Some(v) = dual.basis_t.solve(&a_j) else {
                                return 0.0;
                            };
                            let s = sign(e);
                            let mut mu: f64 = 1.0;
                            for (lam, vi) in dual.lambda_b.iter().zip(v.iter()) {
                                let t = s * vi;
                                if t > 0.0 {
                                    mu = mu.min((1.0 + lam).max(0.0) / t);
                                } else if t < 0.0 {
                                    mu = mu.min((1.0 - lam).max(0.0) / -t);
                                }
                            }
                            mu * e.abs()
                        })
                        .sum()
                })
                .collect(),
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::testutil::random_problem;

    #[test]
    fn squared_increment_is_exact_rss_growth() {
        let prob = random_problem(30, 2, 2, 0.3, true, 4);
        let design = prob.design();
        let ev = Evaluator::new(&design, &prob.y, Loss::Squared);
        let rows: Vec<usize> = (0..20).collect();
        let fit = ev.fit_certified(&rows, None);
        let inc = ev.increments(&fit, &[25]);
        let mut grown = rows.clone();
        grown.push(25);
        let direct = ev.fit(&grown, None).objective;
        assert!((fit.lower + inc[0] - direct).abs() < 1e-10 * direct.max(1.0));
    }

    #[test]
    fn absolute_bounds_never_exceed_refits() {
        for seed in 0..8 {
            let mut prob = random_problem(25, 2, 2, 0.5, true, 40 + seed);
            prob.y[(21, 0)] += 6.0;
            let design = prob.design();
            let ev = Evaluator::new(&design, &prob.y, Loss::Absolute);
            let rows: Vec<usize> = (0..18).collect();
            let fit = ev.fit_certified(&rows, None);
            assert!(fit.lower <= fit.objective);
            assert!(fit.lower >= fit.objective * (1.0 - 1e-6), "{} vs {}", fit.lower, fit.objective);
            let cands: Vec<usize> = (18..25).collect();
            for (t, inc) in ev.increments(&fit, &cands).into_iter().enumerate() {
                assert!(inc >= 0.0);
                let mut grown = rows.clone();
                grown.push(cands[t]);
                let direct = ev.fit(&grown, None).objective;
                assert!(fit.lower + inc <= direct + 1e-9, "seed {seed} j {}", cands[t]);
            }
        }
    }

    #[test]
    fn deletion_score_is_exact_rss_drop() {
        let prob = random_problem(25, 3, 2, 0.3, true, 8);
        let design = prob.design();
        let ev = Evaluator::new(&design, &prob.y, Loss::Squared);
        let rows: Vec<usize> = (0..25).collect();
        let fit = ev.fit_certified(&rows, None);
        let scores = ev.deletion_scores(&fit, &rows);
        for i in [0, 7, 24] {
            let rest: Vec<usize> = rows.iter().copied().filter(|&r| r != i).collect();
            let drop = fit.objective - ev.fit(&rest, None).objective;
            assert!((scores[i] - drop).abs() < 1e-9 * fit.objective.max(1.0), "{i}");
        }
    }

    #[test]
    fn subset_objective_matches_manual_fit() {
        let prob = random_problem(15, 1, 1, 0.2, true, 1);
        let kept: Vec<usize> = (0..15).filter(|i| *i != 3 && *i != 9).collect();
        let manual = lstsq_rows(&prob.design(), &prob.y, &kept, None).total_rss();
        assert_eq!(subset_objective(&prob, Loss::Squared, &[3, 9]), manual);
    }
}
