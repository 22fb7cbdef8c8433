//! Trimmed fitting: choose at most `k = ⌊p·m⌋` samples to exclude so that the
//! least-squares (or least-absolute) fit of the remaining samples is minimal.
//!
//! With the exclusion set fixed, the mixed-integer model collapses to an
//! ordinary regression on the retained rows, so every solver here searches
//! over exclusion sets and evaluates candidates with exact regressions:
//!
//! - [`trim_bruteforce`] enumerates every exclusion set (small oracle).
//! - [`trim_cstep`] runs concentration steps from several starts (heuristic).
//! - [`trim_exact`] is a branch-and-bound over per-sample include/exclude
//!   decisions for the squared loss.
//! - [`trim_s1`] alternates relaxed-assignment and refit steps to build a warm
//!   start, then finishes with [`trim_exact`].
//! - [`trim_s2`] solves the absolute-loss variant with the same search.
//!
//! The big-M constant only appears in [`export_mps`] output; the internal
//! solvers never form big-M constraints.
//!
//! Ties between exclusion sets (objectives within [`tie_tolerance`]) are
//! broken in favor of the lexicographically smallest sorted index list, so
//! the empty set beats every non-empty set and `[0, 5]` beats `[1]`.

mod bnb;
mod bruteforce;
mod cstep;
mod loss;
mod mps;
mod strategies;

use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimators::{Diagnostics, FitError, LpfModel, RegressionProblem};
use loss::{Evaluator, SubsetFit};

pub use bnb::{trim_exact, NodeTrace};
pub use bruteforce::{l1_bruteforce, trim_bruteforce, BRUTEFORCE_LIMIT};
pub use cstep::{cstep_l1, trim_cstep};
pub use loss::{subset_objective, Loss};
pub use mps::{
    export_mps, parse_mps, save_mps, write_mps, MpsBound, MpsColumn, MpsError, MpsExport, MpsModel, MpsRow, MpsVariable,
    RowKind, TrimModelKind,
};
pub use strategies::{trim_s1, trim_s2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimConfig {
    /// Predefined outlier ratio; the exclusion budget is `⌊p·m⌋`.
    pub p: f64,
    /// Big-M constant for exported models.
    pub big_m: f64,
    pub node_limit: u64,
    /// Wall-clock budget in seconds.
    pub time_limit: f64,
    /// Absolute objective gap at which a subtree is pruned.
    pub gap_tol: f64,
    /// Restarts of the concentration heuristic that seeds a cold exact solve.
    pub cstep_restarts: usize,
    pub seed: u64,
    /// Cap on relaxation/refit alternations in S1.
    pub s1_max_iter: usize,
    /// Record every explored node (bound checks in tests).
    #[serde(default)]
    pub trace: bool,
}

impl TrimConfig {
    pub fn new(p: f64) -> Self {
        Self {
            p,
            big_m: 1e6,
            node_limit: 10_000_000,
            time_limit: 600.0,
            gap_tol: 1e-9,
            cstep_restarts: 10,
            seed: 0,
            s1_max_iter: 100,
            trace: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrimError> {
        if !(0.0..0.5).contains(&self.p) {
            return Err(TrimError::InvalidConfig(format!("p = {} outside [0, 0.5)", self.p)));
        }
        if !(self.big_m > 0.0) {
            return Err(TrimError::InvalidConfig("big_m must be positive".into()));
        }
        if !(self.gap_tol >= 0.0) {
            return Err(TrimError::InvalidConfig("gap_tol must be non-negative".into()));
        }
        if !(self.time_limit > 0.0) {
            return Err(TrimError::InvalidConfig("time_limit must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn time_budget(&self) -> Duration {
        Duration::from_secs_f64(self.time_limit.min(1e9))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrimStatus {
    Optimal,
    GapReached,
    Budget,
    HeuristicOnly,
}

#[derive(Debug, Clone)]
pub struct TrimResult {
    pub model: LpfModel,
    pub lower_bound: f64,
    pub nodes_explored: u64,
    pub status: TrimStatus,
    /// Seconds.
    pub wall_time: f64,
    /// Explored nodes, when [`TrimConfig::trace`] is set.
    pub trace: Vec<NodeTrace>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrimError {
    #[error("invalid trim configuration: {0}")]
    InvalidConfig(String),
    #[error("{retained} retained samples cannot determine {dim} design columns")]
    TooFewRetained { retained: usize, dim: usize },
    #[error("{count} exclusion sets exceed the enumeration limit of {limit}")]
    TooManySubsets { count: f64, limit: f64 },
    #[error(transparent)]
    Fit(#[from] FitError),
}

/// Exclusion budget `⌊p·m⌋`, robust to representation error in `p·m`.
pub fn trim_budget(p: f64, m: usize) -> usize {
    (p * m as f64 + 1e-9).floor() as usize
}

/// Objectives closer than this are considered tied.
pub fn tie_tolerance(reference: f64) -> f64 {
    1e-10 * reference.abs().max(1.0)
}

/// Strictly better objective, or tied with a lexicographically smaller set.
pub(crate) fn better(obj: f64, set: &[usize], best_obj: f64, best_set: &[usize]) -> bool {
    let tol = tie_tolerance(best_obj);
    if obj < best_obj - tol {
        return true;
    }
    obj <= best_obj + tol && set < best_set
}

pub(crate) fn check_retained(prob: &RegressionProblem, k: usize) -> Result<(), TrimError> {
    let retained = prob.m() - k.min(prob.m());
    let dim = prob.design_dim();
    if retained <= dim {
        return Err(TrimError::TooFewRetained { retained, dim });
    }
    Ok(())
}

/// Indices not in the sorted set `excluded`.
pub(crate) fn complement(m: usize, excluded: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(m - excluded.len());
    let mut e = excluded.iter().peekable();
    for i in 0..m {
        if e.peek() == Some(&&i) {
            e.next();
        } else {
            out.push(i);
        }
    }
    out
}

pub(crate) fn mask(m: usize, excluded: &[usize]) -> Vec<bool> {
    let mut z = vec![false; m];
    for &i in excluded {
        z[i] = true;
    }
    z
}

/// Re-admit the largest excluded index while that leaves the objective tied.
/// Dropping the last element yields a prefix, which is lexicographically
/// smaller, so optima padded with samples the fit already passes through
/// (exact data) shrink toward the empty set.
pub(crate) fn canonicalize(ev: &Evaluator, excluded: Vec<usize>, objective: f64) -> (Vec<usize>, SubsetFit) {
    let m = ev.m();
    let mut set = excluded;
    let mut fit = ev.fit(&complement(m, &set), None);
    while !set.is_empty() {
        let trial = &set[..set.len() - 1];
        let trial_fit = ev.fit(&complement(m, trial), None);
        if trial_fit.objective > objective + tie_tolerance(objective) {
            break;
        }
        set.pop();
        fit = trial_fit;
    }
    (set, fit)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn finish(
    prob: &RegressionProblem,
    ev: &Evaluator,
    coef: &DMatrix<f64>,
    excluded: &[usize],
    objective: f64,
    lower_bound: f64,
    nodes_explored: u64,
    status: TrimStatus,
    start: Instant,
    trace: Vec<NodeTrace>,
) -> TrimResult {
    let m = prob.m();
    let z = mask(m, excluded);
    let residuals = prob.residuals(coef);
    let (mut l1, mut l2) = (0.0, 0.0);
    for i in (0..m).filter(|&i| !z[i]) {
        for r in residuals.row(i).iter() {
            l1 += r.abs();
            l2 += r * r;
        }
    }
    let diagnostics = Diagnostics {
        iterations: nodes_explored as usize,
        residuals,
        converged: matches!(status, TrimStatus::Optimal),
        objective_l1: Some(l1),
        objective_l2: Some(l2),
        note: Some(format!("{:?} loss", ev.loss)),
        ..Default::default()
    };
    TrimResult {
        model: LpfModel::from_coef(prob, coef, z, objective, diagnostics),
        lower_bound: lower_bound.min(objective),
        nodes_explored,
        status,
        wall_time: start.elapsed().as_secs_f64(),
        trace,
    }
}
