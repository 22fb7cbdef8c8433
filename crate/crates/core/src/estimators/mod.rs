//! Baseline fitting methods for affine models `y = W x + b`.
//!
//! All estimators share one design matrix per problem (the `x` rows, plus a
//! trailing column of ones when an intercept is fitted), so every
//! multi-output fit decomposes into per-output solves against the same
//! factorization.

mod huber;
mod lav;
mod lnr;
mod ols;
mod svr;

pub use huber::{fit_huber, huber_objective, huber_penalty, HuberConfig};
pub use lav::{fit_lav, fit_lav_with, lav_on_rows, LavConfig};
pub use lnr::{fit_lnr, LnrConfig};
pub use ols::{fit_ols, ols_on_rows};
pub use svr::{fit_svr, svr_objective, SvrConfig};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub fit_intercept: bool,
}

impl RegressionProblem {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>, fit_intercept: bool) -> Self {
        assert_eq!(x.nrows(), y.nrows(), "x and y row counts differ");
        Self {
            x,
            y,
            fit_intercept,
        }
    }

    pub fn m(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_y(&self) -> usize {
        self.y.ncols()
    }

    /// Number of design columns (`n_x`, plus one for the intercept).
    pub fn design_dim(&self) -> usize {
        self.n_x() + usize::from(self.fit_intercept)
    }

    pub fn design(&self) -> DMatrix<f64> {
        let (m, nx) = (self.m(), self.n_x());
        DMatrix::from_fn(m, self.design_dim(), |i, j| if j < nx { self.x[(i, j)] } else { 1.0 })
    }

    /// The sub-problem made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            y: self.y.select_rows(rows),
            fit_intercept: self.fit_intercept,
        }
    }

    /// `y - A coef` for a `d x n_y` coefficient matrix.
    pub fn residuals(&self, coef: &DMatrix<f64>) -> DMatrix<f64> {
        &self.y - self.design() * coef
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    /// `m x n_y` residuals `y - ŷ` over the fitted problem's rows.
    #[serde(skip)]
    pub residuals: DMatrix<f64>,
    /// Per-output scale estimates (method specific; empty when unused).
    pub scales: Vec<f64>,
    pub converged: bool,
    /// Objective after each accepted iteration, for iterative methods.
    pub objective_history: Vec<f64>,
    pub objective_l1: Option<f64>,
    pub objective_l2: Option<f64>,
    pub note: Option<String>,
}

/// A fitted affine map `ŷ = W x + b` plus the trim assignment that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct LpfModel {
    /// `n_y x n_x`.
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `true` marks a sample excluded from the fit.
    pub z: Vec<bool>,
    pub objective: f64,
    pub diagnostics: Diagnostics,
}

impl LpfModel {
    /// Build from `d x n_y` design coefficients.
    pub fn from_coef(
        prob: &RegressionProblem,
        coef: &DMatrix<f64>,
        z: Vec<bool>,
        objective: f64,
        mut diagnostics: Diagnostics,
    ) -> Self {
        let nx = prob.n_x();
        let w = coef.rows(0, nx).transpose();
        let b = if prob.fit_intercept {
            coef.row(nx).transpose()
        } else {
            DVector::zeros(prob.n_y())
        };
        if diagnostics.residuals.is_empty() {
            diagnostics.residuals = prob.residuals(coef);
        }
        Self {
            w,
            b,
            z,
            objective,
            diagnostics,
        }
    }

    /// Coefficients in design layout (`d x n_y`).
    pub fn coef(&self, fit_intercept: bool) -> DMatrix<f64> {
        let nx = self.w.ncols();
        let ny = self.w.nrows();
        let d = nx + usize::from(fit_intercept);
        DMatrix::from_fn(d, ny, |i, j| if i < nx { self.w[(j, i)] } else { self.b[j] })
    }

    /// Predictions for every row of `x` (`m x n_y`).
    pub fn predict(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = x * self.w.transpose();
        for mut row in out.row_iter_mut() {
            row += self.b.transpose();
        }
        out
    }

    pub fn excluded(&self) -> Vec<usize> {
        self.z.iter().enumerate().filter(|(_, z)| **z).map(|(i, _)| i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("rank-deficient design: rank {rank} < {dim} (condition estimate {condition:e})")]
    RankDeficient {
        rank: usize,
        dim: usize,
        condition: f64,
    },
    #[error("ill-posed problem: {0}")]
    IllPosed(String),
    #[error("too few active samples: {active} left, at least {needed} required")]
    TooFewSamples { active: usize, needed: usize },
}

/// Euclidean norm of each residual row.
pub fn residual_norms(res: &DMatrix<f64>) -> Vec<f64> {
    res.row_iter().map(|r| r.norm()).collect()
}

pub(crate) fn check_well_posed(prob: &RegressionProblem, rows: usize) -> Result<(), FitError> {
    let d = prob.design_dim();
    if rows <= d {
        return Err(FitError::IllPosed(format!(
            "{rows} samples for {d} design columns"
        )));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::RegressionProblem;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// Linear data with Gaussian noise; returns the problem and true coefficients.
    pub fn random_problem(
        m: usize,
        nx: usize,
        ny: usize,
        noise: f64,
        intercept: bool,
        seed: u64,
    ) -> RegressionProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(m, nx, |_, _| rng.random_range(-1.0..1.0));
        let w = DMatrix::from_fn(ny, nx, |_, _| rng.random_range(-2.0..2.0));
        let b: Vec<f64> = (0..ny).map(|_| rng.random_range(-1.0..1.0)).collect();
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let y = DMatrix::from_fn(m, ny, |i, j| {
            let mut v: f64 = (0..nx).map(|k| w[(j, k)] * x[(i, k)]).sum();
            if intercept {
                v += b[j];
            }
            if noise > 0.0 {
                v += normal.sample(&mut rng);
            }
            v
        });
        RegressionProblem::new(x, y, intercept)
    }
}
