use std::time::Instant;

use super::loss::Evaluator;
use super::{better, check_retained, complement, finish, trim_budget, Loss, TrimConfig, TrimError, TrimResult, TrimStatus};
use crate::estimators::RegressionProblem;

/// Largest `C(m, k)` that the enumerators accept.
pub const BRUTEFORCE_LIMIT: f64 = 1e6;

fn binomial(m: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

/// Exact trimmed least squares by enumerating every exclusion set of size at
/// most `⌊p·m⌋`.
pub fn trim_bruteforce(prob: &RegressionProblem, cfg: &TrimConfig) -> Result<TrimResult, TrimError> {
    enumerate(prob, cfg, Loss::Squared)
}

/// Absolute-loss counterpart of [`trim_bruteforce`].
pub fn l1_bruteforce(prob: &RegressionProblem, cfg: &TrimConfig) -> Result<TrimResult, TrimError> {
    enumerate(prob, cfg, Loss::Absolute)
}

fn enumerate(prob: &RegressionProblem, cfg: &TrimConfig, loss: Loss) -> Result<TrimResult, TrimError> {
    let start = Instant::now();
    cfg.validate()?;
    let m = prob.m();
    let k = trim_budget(cfg.p, m);
    check_retained(prob, k)?;
    let count = binomial(m, k);
    if count > BRUTEFORCE_LIMIT {
        return Err(TrimError::TooManySubsets {
            count,
            limit: BRUTEFORCE_LIMIT,
        });
    }
    let design = prob.design();
    let ev = Evaluator::new(&design, &prob.y, loss);

    let mut best_set: Vec<usize> = Vec::new();
    let mut best = ev.fit(&complement(m, &[]), None);
    let mut visited = 1u64;
    for size in 1..=k {
        let mut set: Vec<usize> = (0..size).collect();
        loop {
            let fit = ev.fit(&complement(m, &set), None);
            visited += 1;
            if better(fit.objective, &set, best.objective, &best_set) {
                best = fit;
                best_set = set.clone();
            }
            // Advance to the next combination in lexicographic order.
            let Some(pos) = (0..size).rev().find(|&t| set[t] < m - size + t) else {
                break;
            };
            set[pos] += 1;
            for t in pos + 1..size {
                set[t] = set[t - 1] + 1;
            }
        }
    }
    let objective = best.objective;
    Ok(finish(
        prob,
        &ev,
        &best.coef,
        &best_set,
        objective,
        objective,
        visited,
        TrimStatus::Optimal,
        start,
        Vec::new(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::testutil::random_problem;
    use crate::trimmed::subset_objective;

    #[test]
    fn visits_every_subset_up_to_budget() {
        let prob = random_problem(12, 1, 1, 0.1, true, 2);
        let res = trim_bruteforce(&prob, &TrimConfig::new(0.2)).unwrap();
        assert_eq!(res.nodes_explored, 1 + 12 + 66);
    }

    #[test]
    fn finds_planted_outlier() {
        let mut prob = random_problem(12, 1, 1, 0.05, true, 3);
        prob.y[(7, 0)] += 5.0;
        let res = trim_bruteforce(&prob, &TrimConfig::new(0.1)).unwrap();
        assert_eq!(res.model.excluded(), vec![7]);
        assert_eq!(res.model.objective, subset_objective(&prob, Loss::Squared, &[7]));
    }

    #[test]
    fn exact_data_keeps_every_sample() {
        let prob = random_problem(10, 2, 1, 0.0, true, 4);
        let res = trim_bruteforce(&prob, &TrimConfig::new(0.3)).unwrap();
        assert!(res.model.excluded().is_empty());
    }

    #[test]
    fn refuses_huge_enumerations() {
        let prob = random_problem(200, 1, 1, 0.1, true, 5);
        assert!(matches!(
            trim_bruteforce(&prob, &TrimConfig::new(0.1)),
            Err(TrimError::TooManySubsets { .. })
        ));
    }
}
