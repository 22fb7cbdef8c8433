use std::time::Instant;

use super::bnb::search;
use super::cstep::{concentrate, multi_start};
use super::loss::Evaluator;
use super::{check_retained, trim_budget, Loss, TrimConfig, TrimError, TrimResult};
use crate::estimators::RegressionProblem;

/// Alternating warm start followed by the exact search.
///
/// Starting from the full least-squares fit, each round assigns the
/// exclusion indicators that are optimal for the current coefficients (the
/// `k` largest residual norms) and refits least squares on the retained
/// samples, until the assignment repeats or `s1_max_iter` rounds pass. The
/// resulting exclusion set seeds [`super::trim_exact`], so the reported
/// optimum and bound carry the same guarantees as a cold solve.
pub fn trim_s1(prob: &RegressionProblem, cfg: &TrimConfig) -> Result<TrimResult, TrimError> {
    let start = Instant::now();
    cfg.validate()?;
    let k = trim_budget(cfg.p, prob.m());
    check_retained(prob, k)?;
    let design = prob.design();
    let ev = Evaluator::new(&design, &prob.y, Loss::Squared);
    let all: Vec<usize> = (0..prob.m()).collect();
    let warm = concentrate(&ev, k, ev.fit(&all, None).coef, cfg.s1_max_iter);
    let rounds = warm.history.len();
    let mut res = search(prob, cfg, Loss::Squared, Some(warm.excluded))?;
    res.wall_time = start.elapsed().as_secs_f64();
    res.model.diagnostics.note = Some(format!("{rounds} alternation rounds before search"));
    Ok(res)
}

/// Trimmed least absolute deviations, solved exactly by the same search.
///
/// The incumbent comes from multi-start squared-loss concentration steps
/// (cheap refits) followed by absolute-loss concentration steps. Node bounds
/// use dual certificates of the absolute-loss fits, so they stay valid even
/// though the fits themselves are iterative. The model objective is the L1 loss; both
/// L1 and L2 losses of the retained samples are in the diagnostics.
pub fn trim_s2(prob: &RegressionProblem, cfg: &TrimConfig) -> Result<TrimResult, TrimError> {
    let start = Instant::now();
    cfg.validate()?;
    let k = trim_budget(cfg.p, prob.m());
    check_retained(prob, k)?;
    let design = prob.design();
    let l2 = Evaluator::new(&design, &prob.y, Loss::Squared);
    let seed = multi_start(&l2, k, cfg.cstep_restarts, cfg.seed);
    let l1 = Evaluator::new(&design, &prob.y, Loss::Absolute);
    let warm = concentrate(&l1, k, seed.coef, cfg.s1_max_iter);
    let mut res = search(prob, cfg, Loss::Absolute, Some(warm.excluded))?;
    res.wall_time = start.elapsed().as_secs_f64();
    Ok(res)
}
