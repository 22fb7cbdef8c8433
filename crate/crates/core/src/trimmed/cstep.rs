use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::Evaluator;
use super::{better, canonicalize, check_retained, finish, trim_budget, Loss, TrimConfig, TrimError, TrimResult, TrimStatus};
use crate::estimators::RegressionProblem;

/// Iteration cap for one concentration run; runs normally stop within a few
/// dozen steps.
const MAX_STEPS: usize = 500;

#[derive(Debug, Clone)]
pub(crate) struct Concentrated {
    /// Sorted excluded indices.
    pub excluded: Vec<usize>,
    pub objective: f64,
    pub coef: DMatrix<f64>,
    /// Objective after each step, starting with the first refit.
    pub history: Vec<f64>,
}

/// The `m - k` samples with the smallest loss under `coef`; ties go to the
/// lower index.
pub(crate) fn best_fitted(ev: &Evaluator, coef: &DMatrix<f64>, keep: usize) -> Vec<usize> {
    let mut losses: Vec<(f64, usize)> = (0..ev.m()).map(|i| (ev.sample_loss(coef, i), i)).collect();
    losses.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut kept: Vec<usize> = losses[..keep].iter().map(|&(_, i)| i).collect();
    kept.sort_unstable();
    kept
}

/// Concentration steps from `coef`: keep the best-fitted `m - k` samples,
/// refit on them, repeat until the retained set stops changing. The
/// objective never increases from one step to the next.
pub(crate) fn concentrate(ev: &Evaluator, k: usize, coef: DMatrix<f64>, max_steps: usize) -> Concentrated {
    let m = ev.m();
    let keep = m - k;
    let mut kept = best_fitted(ev, &coef, keep);
    let mut fit = ev.fit(&kept, Some(&coef));
    let mut history = vec![fit.objective];
    for _ in 0..max_steps {
        let next = best_fitted(ev, &fit.coef, keep);
        if next == kept {
            break;
        }
        let carried: f64 = next.iter().map(|&i| ev.sample_loss(&fit.coef, i)).sum();
        let mut refit = ev.fit(&next, Some(&fit.coef));
        if refit.objective > carried {
            // Inexact refits (absolute loss) must not undo the descent.
            refit.coef = fit.coef.clone();
            refit.objective = carried;
        }
        debug_assert!(
            refit.objective <= fit.objective * (1.0 + 1e-12) + 1e-300,
            "concentration step increased the objective: {} -> {}",
            fit.objective,
            refit.objective
        );
        let stalled = refit.objective >= fit.objective;
        kept = next;
        fit = refit;
        history.push(fit.objective);
        if stalled {
            break;
        }
    }
    let excluded = complement_of(m, &kept);
    Concentrated {
        excluded,
        objective: fit.objective,
        coef: fit.coef,
        history,
    }
}

fn complement_of(m: usize, kept: &[usize]) -> Vec<usize> {
    let mut z = vec![true; m];
    for &i in kept {
        z[i] = false;
    }
    (0..m).filter(|&i| z[i]).collect()
}

/// Best of several concentration runs: one from the full-sample fit and
/// `restarts` from fits through random `d + 1` samples.
pub(crate) fn multi_start(ev: &Evaluator, k: usize, restarts: usize, seed: u64) -> Concentrated {
    let m = ev.m();
    let d = ev.dim();
    let all: Vec<usize> = (0..m).collect();
    let mut best = concentrate(ev, k, ev.fit(&all, None).coef, MAX_STEPS);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..restarts {
        let mut rows = sample(&mut rng, m, (d + 1).min(m)).into_vec();
        rows.sort_unstable();
        let start = ev.fit(&rows, None).coef;
        let run = concentrate(ev, k, start, MAX_STEPS);
        if better(run.objective, &run.excluded, best.objective, &best.excluded) {
            best = run;
        }
    }
    best
}

fn run(prob: &RegressionProblem, cfg: &TrimConfig, loss: Loss) -> Result<TrimResult, TrimError> {
    let start = Instant::now();
    cfg.validate()?;
    let k = trim_budget(cfg.p, prob.m());
    check_retained(prob, k)?;
    let design = prob.design();
    let ev = Evaluator::new(&design, &prob.y, loss);
    let best = multi_start(&ev, k, cfg.cstep_restarts, cfg.seed);
    let (excluded, fit) = canonicalize(&ev, best.excluded, best.objective);
    let (coef, objective) = if fit.objective <= best.objective {
        (fit.coef, fit.objective)
    } else {
        (best.coef, best.objective)
    };
    let mut res = finish(prob, &ev, &coef, &excluded, objective, 0.0, 0, TrimStatus::HeuristicOnly, start, Vec::new());
    res.model.diagnostics.objective_history = best.history;
    Ok(res)
}

/// Trimmed least squares by concentration steps (no optimality proof).
pub fn trim_cstep(prob: &RegressionProblem, cfg: &TrimConfig) -> Result<TrimResult, TrimError> {
    run(prob, cfg, Loss::Squared)
}

/// Trimmed least absolute deviations by concentration steps.
pub fn cstep_l1(prob: &RegressionProblem, cfg: &TrimConfig) -> Result<TrimResult, TrimError> {
    run(prob, cfg, Loss::Absolute)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::testutil::random_problem;

    #[test]
    fn every_run_descends() {
        for seed in 0..10 {
            let mut prob = random_problem(80, 3, 2, 0.1, true, seed);
            for i in (0..80).step_by(11) {
                prob.y[(i, 1)] += 8.0;
            }
            let design = prob.design();
            for loss in [Loss::Squared, Loss::Absolute] {
                let ev = Evaluator::new(&design, &prob.y, loss);
                let run = multi_start(&ev, 8, 4, seed);
                for w in run.history.windows(2) {
                    assert!(w[1] <= w[0] * (1.0 + 1e-12), "{loss:?} seed {seed}: {w:?}");
                }
                assert_eq!(run.excluded.len(), 8);
            }
        }
    }

    #[test]
    fn recovers_planted_outliers() {
        let mut prob = random_problem(60, 2, 1, 0.05, true, 12);
        let planted = [4, 19, 33, 50];
        for &i in &planted {
            prob.y[(i, 0)] += 3.0;
        }
        let res = trim_cstep(&prob, &TrimConfig::new(4.0 / 60.0)).unwrap();
        assert_eq!(res.model.excluded(), planted.to_vec());
        assert_eq!(res.status, TrimStatus::HeuristicOnly);
    }

    #[test]
    fn fixed_seed_is_reproducible() {
        let prob = random_problem(40, 2, 1, 0.5, true, 3);
        let cfg = TrimConfig { seed: 9, ..TrimConfig::new(0.2) };
        let a = trim_cstep(&prob, &cfg).unwrap();
        let b = trim_cstep(&prob, &cfg).unwrap();
        assert_eq!(a.model.w, b.model.w);
        assert_eq!(a.model.z, b.model.z);
    }
}
