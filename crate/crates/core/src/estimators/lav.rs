use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_well_posed, Diagnostics, FitError, LpfModel, RegressionProblem};
use crate::linalg::lstsq_single;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LavConfig {
    /// Stop once an IRLS step improves the L1 objective by less than this
    /// fraction.
    pub tol: f64,
    pub max_iter: usize,
    /// Residual floor in the IRLS weights `1 / max(|r|, eps_smooth)`.
    pub eps_smooth: f64,
}

impl Default for LavConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100,
            eps_smooth: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LavFit {
    /// `d x n_y`.
    pub coef: DMatrix<f64>,
    /// Sum of absolute residuals over the fitted rows, per output.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LavFit {
    pub fn total(&self) -> f64 {
        self.objective.iter().sum()
    }
}

fn l1(design: &DMatrix<f64>, y: &DMatrix<f64>, out: usize, rows: &[usize], c: &[f64]) -> f64 {
    rows.iter()
        .map(|&i| {
            let pred: f64 = c.iter().enumerate().map(|(k, ck)| design[(i, k)] * ck).sum();
            (y[(i, out)] - pred).abs()
        })
        .sum()
}

/// Least absolute deviations on a subset of rows.
///
/// Per output: smoothed IRLS from the least-squares start (or `warm`), then
/// vertex exchange steps from the `d` best-fitted rows, since an L1 optimum
/// of a full-rank design always interpolates `d` samples.
pub fn lav_on_rows(
    design: &DMatrix<f64>,
    y: &DMatrix<f64>,
    rows: &[usize],
    cfg: &LavConfig,
    warm: Option<&DMatrix<f64>>,
) -> LavFit {
    let d = design.ncols();
    let ny = y.ncols();
    let col: Vec<Vec<f64>> = (0..ny).map(|j| y.column(j).iter().copied().collect()).collect();
    let ones = vec![1.0; rows.len()];
    let mut coef = DMatrix::zeros(d, ny);
    let mut objective = Vec::with_capacity(ny);
    let mut iterations = 0;
    let mut converged = true;

    for j in 0..ny {
        let mut c: Vec<f64> = match warm {
            Some(w) => w.column(j).iter().copied().collect(),
            None => lstsq_single(design, &col[j], rows, &ones).0,
        };
        let mut obj = l1(design, y, j, rows, &c);
        let mut done = obj == 0.0;
        let mut it = 0;
        while !done && it < cfg.max_iter {
            it += 1;
            let scale: Vec<f64> = rows
                .iter()
                .map(|&i| {
                    let pred: f64 = c.iter().enumerate().map(|(k, ck)| design[(i, k)] * ck).sum();
                    1.0 / (y[(i, j)] - pred).abs().max(cfg.eps_smooth).sqrt()
                })
                .collect();
            let (next, _) = lstsq_single(design, &col[j], rows, &scale);
            let next_obj = l1(design, y, j, rows, &next);
            if next_obj < obj {
                let gain = obj - next_obj;
                c = next;
                obj = next_obj;
                done = gain <= cfg.tol * obj.max(f64::MIN_POSITIVE);
            } else {
                done = true;
            }
        }
        iterations = iterations.max(it);
        if !done {
            converged = false;
        }
        if obj > 0.0 && rows.len() >= d {
            if let Some((p, p_obj)) = polish(design, y, j, rows, &c) {
                if p_obj < obj {
                    c = p;
                    obj = p_obj;
                }
            }
        }
        coef.set_column(j, &DVector::from_vec(c));
        objective.push(obj);
    }

    LavFit {
        coef,
        objective,
        iterations,
        converged,
    }
}

/// Exchange steps between vertices of the L1 objective.
///
/// Starts from the fit interpolating the `d` best-fitted rows. At a vertex
/// with basis `B`, the multipliers `λ_B` solve `A_Bᵀ λ_B = −Σ_N sign(r_j) a_j`;
/// the vertex is optimal when every `|λ_i| ≤ 1`. Otherwise releasing basis
/// row `i` in the direction of `−sign(λ_i)` has slope `1 − |λ_i| < 0`, and the
/// exact line minimum along that edge is a weighted median of the
/// breakpoints where non-basis residuals cross zero.
fn polish(
    design: &DMatrix<f64>,
    y: &DMatrix<f64>,
    out: usize,
    rows: &[usize],
    c: &[f64],
) -> Option<(Vec<f64>, f64)> {
    let d = design.ncols();
    let mut by_fit: Vec<(f64, usize)> = rows
        .iter()
        .map(|&i| {
            let pred: f64 = c.iter().enumerate().map(|(k, ck)| design[(i, k)] * ck).sum();
            ((y[(i, out)] - pred).abs(), i)
        })
        .collect();
    by_fit.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let row = |i: usize| DVector::from_fn(d, |k, _| design[(i, k)]);
    // Best-fitted rows that are linearly independent (Gram-Schmidt).
    let mut basis: Vec<usize> = Vec::with_capacity(d);
    let mut ortho: Vec<DVector<f64>> = Vec::with_capacity(d);
    for &(_, i) in &by_fit {
        if basis.len() == d {
            break;
        }
        let a = row(i);
        let mut v = a.clone();
        for q in &ortho {
            v -= q * q.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-10 * a.norm() {
            ortho.push(v / norm);
            basis.push(i);
        }
    }
    if basis.len() < d {
        return None;
    }

    // Residuals this small count as interpolated (degenerate vertices).
    let zero_tol = 1e-12 * rows.iter().fold(1.0f64, |a, &i| a.max(y[(i, out)].abs()));
    let mut best: Option<(Vec<f64>, f64)> = None;
    for _ in 0..4 * rows.len() + 10 {
        let a_b = DMatrix::from_fn(d, d, |r, k| design[(basis[r], k)]);
        let lu = a_b.clone().lu();
        let y_b = DVector::from_fn(d, |r, _| y[(basis[r], out)]);
        let cb = lu.solve(&y_b)?;
        if cb.iter().any(|v| !v.is_finite()) {
            return best;
        }
        let cv: Vec<f64> = cb.iter().copied().collect();
        let obj = l1(design, y, out, rows, &cv);
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((cv.clone(), obj));
        } else if obj > best.as_ref().map_or(f64::INFINITY, |b| b.1) {
            return best;
        }

        let mut rhs = DVector::zeros(d);
        let mut nonbasis = Vec::with_capacity(rows.len());
        for &j in rows {
            if basis.contains(&j) {
                continue;
            }
            let mut r = y[(j, out)] - row(j).dot(&cb);
            if r.abs() <= zero_tol {
                r = 0.0;
            } else {
                rhs -= row(j) * r.signum();
            }
            nonbasis.push((j, r));
        }
        let lambda = a_b.transpose().lu().solve(&rhs)?;
        // Steepest of the descent edges; zero-residual rows off the basis
        // (degenerate vertices) can cancel an apparent violation.
        let mut chosen: Option<(f64, usize, Vec<(f64, f64, usize)>)> = None;
        for (leave, lam) in lambda.iter().copied().enumerate() {
            if lam.abs() <= 1.0 + 1e-9 {
                continue;
            }
            let mut e = DVector::zeros(d);
            e[leave] = -lam.signum();
            let Some(dc) = lu.solve(&e) else {
                continue;
            };
            // Along c + step·dc: r_j(step) = r_j − step·g_j.
            let mut slope = 1.0;
            let mut points: Vec<(f64, f64, usize)> = Vec::new();
            for &(j, r) in &nonbasis {
                let g = row(j).dot(&dc);
                if g == 0.0 {
                    continue;
                }
                if r == 0.0 {
                    slope += g.abs();
                    continue;
                }
                slope -= r.signum() * g;
                let step = r / g;
                if step > 0.0 {
                    points.push((step, 2.0 * g.abs(), j));
                }
            }
            if slope < -1e-12 && chosen.as_ref().is_none_or(|(s, _, _)| slope < *s) {
                chosen = Some((slope, leave, points));
            }
        }
        let Some((mut slope, leave, mut points)) = chosen else {
            return best;
        };
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut enter = None;
        for &(_, w, j) in &points {
            slope += w;
            if slope >= 0.0 {
                enter = Some(j);
                break;
            }
        }
        let Some(j) = enter else {
            return best;
        };
        basis[leave] = j;
    }
    best
}

/// LAV fit with the given tolerance and default iteration settings.
pub fn fit_lav(prob: &RegressionProblem, tol: f64) -> Result<LpfModel, FitError> {
    fit_lav_with(
        prob,
        &LavConfig {
            tol,
            ..LavConfig::default()
        },
    )
}

pub fn fit_lav_with(prob: &RegressionProblem, cfg: &LavConfig) -> Result<LpfModel, FitError> {
    check_well_posed(prob, prob.m())?;
    let design = prob.design();
    let rows: Vec<usize> = (0..prob.m()).collect();
    let probe = crate::linalg::lstsq_rows(&design, &prob.y, &rows, None);
    if !probe.qr.is_full_rank() {
        return Err(FitError::RankDeficient {
            rank: probe.qr.rank(),
            dim: prob.design_dim(),
            condition: probe.qr.condition_estimate(),
        });
    }
    let fit = lav_on_rows(&design, &prob.y, &rows, cfg, Some(&probe.coef));
    let residuals = &prob.y - &design * &fit.coef;
    let l2 = residuals.iter().map(|r| r * r).sum();
    let total = fit.total();
    let diagnostics = Diagnostics {
        iterations: fit.iterations,
        residuals,
        converged: fit.converged,
        objective_l1: Some(total),
        objective_l2: Some(l2),
        ..Default::default()
    };
    Ok(LpfModel::from_coef(prob, &fit.coef, vec![false; prob.m()], total, diagnostics))
}
