use std::time::Instant;

use nalgebra::DMatrix;

use super::cstep::multi_start;
use super::loss::Evaluator;
use super::{better, canonicalize, check_retained, complement, finish, tie_tolerance, trim_budget, Loss, TrimConfig, TrimError, TrimResult, TrimStatus};
use crate::estimators::RegressionProblem;

/// One explored node: samples forced into the fit, samples forced out, and
/// the lower bound the search assigned to the subtree.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeTrace {
    pub forced_in: Vec<usize>,
    pub forced_out: Vec<usize>,
    pub lower_bound: f64,
}

struct Node {
    forced_in: Vec<usize>,
    forced_out: Vec<usize>,
    /// Bound inherited from the parent.
    bound: f64,
    warm: Option<DMatrix<f64>>,
}

struct Incumbent {
    excluded: Vec<usize>,
    objective: f64,
    coef: DMatrix<f64>,
}

impl Incumbent {
    fn offer(&mut self, excluded: &[usize], objective: f64, coef: &DMatrix<f64>) {
        if better(objective, excluded, self.objective, &self.excluded) {
            self.excluded = excluded.to_vec();
            self.objective = objective;
            self.coef = coef.clone();
        }
    }
}

/// Refits spent per node on rounding the node fit to a feasible exclusion set.
const ROUNDING_PASSES: usize = 4;

/// `(n+1)`-th largest value, or 0 when there are at most `n` values.
fn nth_largest(mut v: Vec<f64>, n: usize) -> f64 {
    if v.len() <= n {
        return 0.0;
    }
    v.sort_by(|a, b| b.total_cmp(a));
    v[n]
}

/// Exact trimmed least squares by branch-and-bound over exclusion decisions.
///
/// Each node fixes some samples in (`I`) and some out (`O`, with
/// `|O| ≤ k`); the rest (`U`) are undecided and at most `r = k − |O|` of
/// them may still be dropped. The fit on `I ∪ U` is feasible and updates the
/// incumbent. Lower bounds combine:
///
/// - the optimal loss on `I`, plus the `(r+1)`-th largest certified increase
///   from adding one sample of `U` (every completion keeps at least one of
///   the `r + 1` most damaging samples);
/// - a pigeonhole split of `U` into `r + 1` groups, one of which is kept
///   whole by every completion, with the same increment term per group.
///
/// A subtree is pruned once its bound reaches the incumbent minus
/// `gap_tol`. Branching is on the undecided sample whose removal lowers the
/// node fit most (the deletion effect, which accounts for leverage), with
/// the exclusion child first.
/// The incumbent starts from `warm` when that excludes at most `k` samples,
/// otherwise from concentration steps.
pub fn trim_exact(prob: &RegressionProblem, cfg: &TrimConfig, warm: Option<&TrimResult>) -> Result<TrimResult, TrimError> {
    search(prob, cfg, Loss::Squared, warm.map(|w| w.model.excluded()))
}

pub(crate) fn search(
    prob: &RegressionProblem,
    cfg: &TrimConfig,
    loss: Loss,
    warm: Option<Vec<usize>>,
) -> Result<TrimResult, TrimError> {
    let start = Instant::now();
    cfg.validate()?;
    let m = prob.m();
    let k = trim_budget(cfg.p, m);
    check_retained(prob, k)?;
    let design = prob.design();
    let ev = Evaluator::new(&design, &prob.y, loss);
    let d = ev.dim();

    let mut inc = match warm.filter(|w| w.len() <= k && w.iter().all(|&i| i < m)) {
        Some(mut set) => {
            set.sort_unstable();
            set.dedup();
            let fit = ev.fit(&complement(m, &set), None);
            Incumbent {
                excluded: set,
                objective: fit.objective,
                coef: fit.coef,
            }
        }
        None => {
            let c = multi_start(&ev, k, cfg.cstep_restarts, cfg.seed);
            Incumbent {
                excluded: c.excluded,
                objective: c.objective,
                coef: c.coef,
            }
        }
    };

    let budget = cfg.time_budget();
    let mut trace = Vec::new();
    let mut stack = vec![Node {
        forced_in: Vec::new(),
        forced_out: Vec::new(),
        bound: 0.0,
        warm: Some(inc.coef.clone()),
    }];
    let mut settled_lb = f64::INFINITY;
    let mut nodes = 0u64;
    let mut exhausted = true;
    let mut state = vec![0u8; m];

    while let Some(node) = stack.pop() {
        if nodes >= cfg.node_limit || start.elapsed() > budget {
            stack.push(node);
            exhausted = false;
            break;
        }
        nodes += 1;
        if node.bound >= inc.objective - cfg.gap_tol {
            settled_lb = settled_lb.min(node.bound);
            continue;
        }

        state.fill(0);
        for &i in &node.forced_in {
            state[i] = 1;
        }
        for &i in &node.forced_out {
            state[i] = 2;
        }
        let undecided: Vec<usize> = (0..m).filter(|&i| state[i] == 0).collect();
        let kept: Vec<usize> = (0..m).filter(|&i| state[i] != 2).collect();
        let r = k - node.forced_out.len();

        let relaxed = ev.fit_certified(&kept, node.warm.as_ref());
        inc.offer(&node.forced_out, relaxed.objective, &relaxed.coef);
        let mut lb = node.bound;

        if r == 0 || undecided.is_empty() {
            lb = lb.max(relaxed.lower);
            settled_lb = settled_lb.min(lb);
            if cfg.trace {
                trace.push(NodeTrace {
                    forced_in: node.forced_in,
                    forced_out: node.forced_out,
                    lower_bound: lb,
                });
            }
            continue;
        }

        let scores = ev.deletion_scores(&relaxed, &undecided);
        let mut by_loss: Vec<(f64, usize)> = scores.into_iter().zip(undecided.iter().copied()).collect();
        by_loss.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        // Rounded completion: also drop the r most harmful undecided samples,
        // then re-rank against the refit a few times.
        let mut harm = by_loss.clone();
        let mut prev: Option<Vec<usize>> = None;
        // Absolute-loss refits are costly and their re-ranking gains little.
        let passes = if loss == Loss::Squared { ROUNDING_PASSES } else { 1 };
        for pass in 0..passes {
            let mut rounded = node.forced_out.clone();
            rounded.extend(harm.iter().rev().take(r).map(|&(_, i)| i));
            rounded.sort_unstable();
            if prev.as_ref() == Some(&rounded) {
                break;
            }
            let rows = complement(m, &rounded);
            let last = pass + 1 == passes;
            let fit = if last {
                ev.fit(&rows, Some(&relaxed.coef))
            } else {
                ev.fit_certified(&rows, Some(&relaxed.coef))
            };
            inc.offer(&rounded, fit.objective, &fit.coef);
            if last {
                break;
            }
            let kept_u: Vec<usize> = undecided.iter().copied().filter(|i| rounded.binary_search(i).is_err()).collect();
            let dropped_u: Vec<usize> = undecided.iter().copied().filter(|i| rounded.binary_search(i).is_ok()).collect();
            harm = ev.deletion_scores(&fit, &kept_u).into_iter().zip(kept_u).collect();
            harm.extend(ev.increments(&fit, &dropped_u).into_iter().zip(dropped_u));
            harm.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            prev = Some(rounded);
        }

        let target = inc.objective - cfg.gap_tol;
        let mut fitted_in: Vec<usize> = node.forced_in.clone();
        fitted_in.sort_unstable();
        if fitted_in.len() > d {
            let base = ev.fit_certified(&fitted_in, Some(&relaxed.coef));
            let inc_base = ev.increments(&base, &undecided);
            lb = lb.max(base.lower + nth_largest(inc_base, r));
        }

        let groups = r + 1;
        if lb < target && fitted_in.len() + undecided.len() / groups > d {
            let mut group_lb = f64::INFINITY;
            for g in 0..groups {
                let members: Vec<usize> = by_loss.iter().skip(g).step_by(groups).map(|&(_, i)| i).collect();
                let mut rows = fitted_in.clone();
                rows.extend_from_slice(&members);
                rows.sort_unstable();
                let fit = ev.fit_certified(&rows, Some(&relaxed.coef));
                for &i in &members {
                    state[i] = 3;
                }
                let others: Vec<usize> = undecided.iter().copied().filter(|&i| state[i] == 0).collect();
                for &i in &members {
                    state[i] = 0;
                }
                let val = fit.lower + nth_largest(ev.increments(&fit, &others), r);
                group_lb = group_lb.min(val);
                if group_lb <= lb {
                    break;
                }
            }
            lb = lb.max(group_lb);
        }

        if cfg.trace {
            trace.push(NodeTrace {
                forced_in: node.forced_in.clone(),
                forced_out: node.forced_out.clone(),
                lower_bound: lb,
            });
        }
        if lb >= inc.objective - cfg.gap_tol {
            settled_lb = settled_lb.min(lb);
            continue;
        }

        let j = by_loss.last().expect("undecided is non-empty").1;
        let mut keep_j = node.forced_in.clone();
        keep_j.push(j);
        let mut drop_j = node.forced_out.clone();
        drop_j.push(j);
        drop_j.sort_unstable();
        stack.push(Node {
            forced_in: keep_j,
            forced_out: node.forced_out,
            bound: lb,
            warm: Some(relaxed.coef.clone()),
        });
        stack.push(Node {
            forced_in: node.forced_in,
            forced_out: drop_j,
            bound: lb,
            warm: Some(relaxed.coef),
        });
    }

    let open_lb = stack.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    let lower = settled_lb.min(open_lb).min(inc.objective);
    let status = if !exhausted {
        TrimStatus::Budget
    } else if inc.objective - lower <= cfg.gap_tol + tie_tolerance(inc.objective) {
        TrimStatus::Optimal
    } else {
        TrimStatus::GapReached
    };
    let (excluded, fit) = canonicalize(&ev, inc.excluded.clone(), inc.objective);
    let (excluded, coef, objective) = if fit.objective <= inc.objective + tie_tolerance(inc.objective) {
        (excluded, fit.coef, fit.objective)
    } else {
        (inc.excluded, inc.coef, inc.objective)
    };
    Ok(finish(prob, &ev, &coef, &excluded, objective, lower, nodes, status, start, trace))
}
