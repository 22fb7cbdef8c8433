//! Relative-error metrics and head-to-head method comparisons.
//!
//! Errors are measured per component as `|ŷ − y| / max(|y|, floor)` and
//! reported in percent. Training errors are always measured against the
//! clean copy of the training set (before outlier injection): scoring
//! against corrupted rows would reward models that fit the outliers.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{generate_samples, inject_outliers, Dataset, DatasetError, Direction, OutlierSpec, SampleSpec};
use crate::estimators::{
    fit_huber, fit_lav, fit_lnr, fit_ols, fit_svr, residual_norms, HuberConfig, LnrConfig, LpfModel, RegressionProblem,
    SvrConfig,
};
use crate::netcase::NetworkCase;
use crate::trimmed::{trim_cstep, trim_exact, trim_s1, trim_s2, TrimConfig};

/// Default denominator floor, in per-unit.
pub const DEFAULT_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("model maps {model_in} inputs to {model_out} outputs but data has {data_in} and {data_out}")]
    Dimension {
        model_in: usize,
        model_out: usize,
        data_in: usize,
        data_out: usize,
    },
    #[error("relative-error floor must be positive, got {0}")]
    Floor(f64),
}

/// `(max, mean)` of the per-component relative errors, in percent.
pub fn relative_errors_xy(model: &LpfModel, x: &DMatrix<f64>, y: &DMatrix<f64>, floor: f64) -> Result<(f64, f64), EvalError> {
    if !(floor > 0.0) {
        return Err(EvalError::Floor(floor));
    }
    if model.w.ncols() != x.ncols() || model.w.nrows() != y.ncols() || x.nrows() != y.nrows() {
        return Err(EvalError::Dimension {
            model_in: model.w.ncols(),
            model_out: model.w.nrows(),
            data_in: x.ncols(),
            data_out: y.ncols(),
        });
    }
    if y.is_empty() {
        return Ok((0.0, 0.0));
    }
    let pred = model.predict(x);
    let mut max: f64 = 0.0;
    let mut sum = 0.0;
    for (p, t) in pred.iter().zip(y.iter()) {
        let e = (p - t).abs() / t.abs().max(floor);
        max = max.max(e);
        sum += e;
    }
    Ok((100.0 * max, 100.0 * sum / y.len() as f64))
}

/// [`relative_errors_xy`] over every row of a dataset.
pub fn relative_errors(model: &LpfModel, data: &Dataset, floor: f64) -> Result<(f64, f64), EvalError> {
    relative_errors_xy(model, &data.x, &data.y, floor)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ols,
    Lav,
    Huber,
    Svr,
    Lnr,
    TrimCstep,
    TrimExact,
    TrimS1,
    TrimS2,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Ols,
        Method::Lav,
        Method::Huber,
        Method::Svr,
        Method::Lnr,
        Method::TrimCstep,
        Method::TrimExact,
        Method::TrimS1,
        Method::TrimS2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ols => "ols",
            Method::Lav => "lav",
            Method::Huber => "huber",
            Method::Svr => "svr",
            Method::Lnr => "lnr",
            Method::TrimCstep => "trim_cstep",
            Method::TrimExact => "trim_exact",
            Method::TrimS1 => "trim_s1",
            Method::TrimS2 => "trim_s2",
        }
    }

    /// Whether the method takes the assumed outlier ratio `p`.
    pub fn is_trimmed(self) -> bool {
        matches!(self, Method::TrimCstep | Method::TrimExact | Method::TrimS1 | Method::TrimS2)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                format!("unknown method `{s}` (known: {})", known.join(", "))
            })
    }
}

/// Per-method tuning shared by a comparison run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSettings {
    /// Huber threshold; `None` picks `1.345 · median(‖r_i‖) / 0.6745` from
    /// the least-squares residual norms.
    pub huber_delta: Option<f64>,
    pub lav_tol: f64,
    pub svr: SvrConfig,
    pub lnr: LnrConfig,
    /// Trimmed-fit settings; `p` is overridden per run.
    pub trim: TrimConfig,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            huber_delta: None,
            lav_tol: 1e-10,
            svr: SvrConfig::default(),
            lnr: LnrConfig::default(),
            trim: TrimConfig::new(0.0),
        }
    }
}

/// Robust default Huber threshold from least-squares residual norms.
pub fn default_huber_delta(prob: &RegressionProblem) -> Option<f64> {
    let ols = fit_ols(prob).ok()?;
    let mut norms = residual_norms(&ols.diagnostics.residuals);
    norms.sort_by(f64::total_cmp);
    let mid = norms[norms.len() / 2];
    let delta = 1.345 * mid / 0.6745;
    (delta > 0.0).then_some(delta)
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: Option<LpfModel>,
    /// `ok` for baselines; the trim status for trimmed methods; `error: …`
    /// when fitting failed.
    pub status: String,
    pub wall_time: f64,
    pub lower_bound: Option<f64>,
    pub nodes_explored: Option<u64>,
}

/// Fit one method, timing it with a monotonic clock. Failures become a
/// status string instead of an error.
pub fn fit_method(method: Method, prob: &RegressionProblem, settings: &MethodSettings, p: f64) -> FitOutcome {
    let start = Instant::now();
    let trim_cfg = TrimConfig {
        p,
        ..settings.trim.clone()
    };
    let plain = |r: Result<LpfModel, crate::estimators::FitError>| match r {
        Ok(m) => (Some(m), "ok".to_string(), None, None),
        Err(e) => (None, format!("error: {e}"), None, None),
    };
    let trimmed = |r: Result<crate::trimmed::TrimResult, crate::trimmed::TrimError>| match r {
        Ok(t) => (
            Some(t.model),
            format!("{:?}", t.status),
            Some(t.lower_bound),
            Some(t.nodes_explored),
        ),
        Err(e) => (None, format!("error: {e}"), None, None),
    };
    let (model, status, lower_bound, nodes_explored) = match method {
        Method::Ols => plain(fit_ols(prob)),
        Method::Lav => plain(fit_lav(prob, settings.lav_tol)),
        Method::Huber => match settings.huber_delta.or_else(|| default_huber_delta(prob)) {
            Some(delta) => plain(fit_huber(prob, &HuberConfig::new(delta))),
            None => plain(fit_ols(prob)),
        },
        Method::Svr => plain(fit_svr(prob, &settings.svr)),
        Method::Lnr => plain(fit_lnr(prob, &settings.lnr)),
        Method::TrimCstep => trimmed(trim_cstep(prob, &trim_cfg)),
        Method::TrimExact => trimmed(trim_exact(prob, &trim_cfg, None)),
        Method::TrimS1 => trimmed(trim_s1(prob, &trim_cfg)),
        Method::TrimS2 => trimmed(trim_s2(prob, &trim_cfg)),
    };
    FitOutcome {
        model,
        status,
        wall_time: start.elapsed().as_secs_f64(),
        lower_bound,
        nodes_explored,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    /// Assumed outlier ratio; empty for methods that take none.
    pub p: Option<f64>,
    /// Actual outlier ratio of the training data.
    pub p0: f64,
    pub split: Split,
    /// Empty on rows aggregated over seeds.
    pub seed: Option<u64>,
    pub max_rel_err: Option<f64>,
    pub avg_rel_err: Option<f64>,
    pub wall_time: f64,
    pub status: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub rows: Vec<ReportRow>,
}

const HEADER: [&str; 9] = [
    "method",
    "p",
    "p0",
    "split",
    "seed",
    "max_rel_err",
    "avg_rel_err",
    "wall_time",
    "status",
];

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ExperimentReport {
    /// Rows aggregated over seeds, or the per-seed rows of a single-seed run.
    pub fn summary(&self) -> impl Iterator<Item = &ReportRow> {
        let aggregated = self.rows.iter().any(|r| r.seed.is_none());
        self.rows.iter().filter(move |r| !aggregated || r.seed.is_none())
    }

    /// Look up an aggregated row.
    pub fn find(&self, method: &str, p: Option<f64>, split: Split) -> Option<&ReportRow> {
        self.summary().find(|r| r.method == method && r.p == p && r.split == split)
    }

    /// Append one median row per (method, p, p0, split) over the per-seed
    /// rows. Errors from failed seeds are left out of the medians; the status
    /// lists every distinct per-seed status. A single-seed report is left
    /// as is.
    pub fn aggregate(&mut self) {
        let seeds: BTreeSet<u64> = self.rows.iter().filter_map(|r| r.seed).collect();
        if seeds.len() < 2 {
            return;
        }
        let mut keys: Vec<(String, Option<u64>, u64, Split)> = Vec::new();
        for r in self.rows.iter().filter(|r| r.seed.is_some()) {
            let key = (r.method.clone(), r.p.map(f64::to_bits), r.p0.to_bits(), r.split);
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        let mut out = Vec::new();
        for (method, p, p0, split) in keys {
            let group: Vec<&ReportRow> = self
                .rows
                .iter()
                .filter(|r| {
                    r.seed.is_some()
                        && r.method == method
                        && r.p.map(f64::to_bits) == p
                        && r.p0.to_bits() == p0
                        && r.split == split
                })
                .collect();
            let mut maxes: Vec<f64> = group.iter().filter_map(|r| r.max_rel_err).collect();
            let mut avgs: Vec<f64> = group.iter().filter_map(|r| r.avg_rel_err).collect();
            let mut times: Vec<f64> = group.iter().map(|r| r.wall_time).collect();
            let statuses: BTreeSet<&str> = group.iter().map(|r| r.status.as_str()).collect();
            out.push(ReportRow {
                method,
                p: p.map(f64::from_bits),
                p0: f64::from_bits(p0),
                split,
                seed: None,
                max_rel_err: (!maxes.is_empty()).then(|| median(&mut maxes)),
                avg_rel_err: (!avgs.is_empty()).then(|| median(&mut avgs)),
                wall_time: median(&mut times),
                status: statuses.into_iter().collect::<Vec<_>>().join("/"),
            });
        }
        self.rows.extend(out);
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(HEADER).expect("in-memory write");
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            w.write_record([
                r.method.clone(),
                opt(r.p),
                r.p0.to_string(),
                r.split.to_string(),
                r.seed.map(|s| s.to_string()).unwrap_or_default(),
                opt(r.max_rel_err),
                opt(r.avg_rel_err),
                r.wall_time.to_string(),
                r.status.clone(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
    }

    /// Aligned markdown table of the [`summary`](Self::summary) rows.
    pub fn to_markdown(&self) -> String {
        let header = [
            "Method",
            "p (%)",
            "p0 (%)",
            "Split",
            "Max rel. err (%)",
            "Avg rel. err (%)",
            "Time (s)",
            "Status",
        ];
        let pct = |v: f64| format!("{:.1}", 100.0 * v);
        let num = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
        let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in self.summary() {
            cells.push(vec![
                r.method.clone(),
                r.p.map_or("-".to_string(), pct),
                pct(r.p0),
                r.split.to_string(),
                num(r.max_rel_err),
                num(r.avg_rel_err),
                format!("{:.3}", r.wall_time),
                r.status.clone(),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in cells.iter().enumerate() {
            out.push('|');
            for (c, cell) in row.iter().enumerate() {
                let _ = write!(out, " {:<w$} |", cell, w = widths[c]);
            }
            out.push('\n');
            if i == 0 {
                out.push('|');
                for w in &widths {
                    let _ = write!(out, "{}|", "-".repeat(w + 2));
                }
                out.push('\n');
            }
        }
        out
    }
}

/// Evaluate one fit on the clean training and test sets.
pub fn evaluate_outcome(
    method: Method,
    p: Option<f64>,
    p0: f64,
    seed: Option<u64>,
    outcome: &FitOutcome,
    train: &Dataset,
    test: &Dataset,
    floor: f64,
) -> Vec<ReportRow> {
    [(Split::Train, train), (Split::Test, test)]
        .into_iter()
        .map(|(split, data)| {
            let (errs, status) = match &outcome.model {
                Some(model) => match relative_errors(model, data, floor) {
                    Ok(e) => (Some(e), outcome.status.clone()),
                    Err(e) => (None, format!("error: {e}")),
                },
                None => (None, outcome.status.clone()),
            };
            ReportRow {
                method: method.name().to_string(),
                p,
                p0,
                split,
                seed,
                max_rel_err: errs.map(|e| e.0),
                avg_rel_err: errs.map(|e| e.1),
                wall_time: outcome.wall_time,
                status,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub case_name: String,
    pub direction: Direction,
    pub m_train: usize,
    pub m_test: usize,
    /// Actual outlier ratio injected into the training set.
    pub p0: f64,
    /// Assumed ratios for the trimmed methods.
    pub p_values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub settings: MethodSettings,
    /// Outlier shape; ratio and seed are set per run.
    pub outlier: OutlierSpec,
    pub floor: f64,
}

impl ComparisonSpec {
    pub fn new(case_name: &str, m_train: usize, m_test: usize, p0: f64, methods: Vec<Method>) -> Self {
        Self {
            case_name: case_name.to_string(),
            direction: Direction::VoltToPower,
            m_train,
            m_test,
            p0,
            p_values: vec![p0],
            seeds: vec![0],
            methods,
            settings: MethodSettings::default(),
            outlier: OutlierSpec::new(p0, 0),
            floor: DEFAULT_FLOOR,
        }
    }
}

/// Seeds of the clean training set, clean test set and outlier draw for a
/// comparison seed.
pub fn derived_seeds(seed: u64) -> (u64, u64, u64) {
    (
        seed.wrapping_mul(3),
        seed.wrapping_mul(3).wrapping_add(1),
        seed.wrapping_mul(3).wrapping_add(2),
    )
}

/// Training data with outliers plus the clean train and test sets.
pub fn comparison_data(case: &NetworkCase, spec: &ComparisonSpec, seed: u64) -> Result<(Dataset, Dataset, Dataset), DatasetError> {
    let (train_seed, test_seed, outlier_seed) = derived_seeds(seed);
    let train = generate_samples(case, &spec.case_name, &SampleSpec::new(spec.m_train, spec.direction, train_seed))?;
    let test = generate_samples(case, &spec.case_name, &SampleSpec::new(spec.m_test, spec.direction, test_seed))?;
    let outliers = OutlierSpec {
        ratio: spec.p0,
        seed: outlier_seed,
        ..spec.outlier.clone()
    };
    let dirty = inject_outliers(&train, &outliers)?;
    Ok((dirty, train, test))
}

/// Run every method on every seed and aggregate by median.
///
/// Baselines are fitted once per seed; trimmed methods once per assumed
/// ratio in `p_values`. Fitting failures become row statuses; only data
/// generation errors abort the sweep.
pub fn run_comparison(case: &NetworkCase, spec: &ComparisonSpec) -> Result<ExperimentReport, DatasetError> {
    let mut report = ExperimentReport::default();
    for &seed in &spec.seeds {
        let (dirty, train, test) = comparison_data(case, spec, seed)?;
        let prob = RegressionProblem::new(dirty.x.clone(), dirty.y.clone(), true);
        for &method in &spec.methods {
            let ps: Vec<Option<f64>> = if method.is_trimmed() {
                spec.p_values.iter().map(|&p| Some(p)).collect()
            } else {
                vec![None]
            };
            for p in ps {
                let outcome = fit_method(method, &prob, &spec.settings, p.unwrap_or(0.0));
                report.rows.extend(evaluate_outcome(
                    method,
                    p,
                    spec.p0,
                    Some(seed),
                    &outcome,
                    &train,
                    &test,
                    spec.floor,
                ));
            }
        }
    }
    report.aggregate();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::testutil::random_problem;
    use crate::netcase::parse_case;
    use nalgebra::{dmatrix, DVector};

    fn model(w: DMatrix<f64>, b: DVector<f64>) -> LpfModel {
        LpfModel {
            w,
            b,
            z: Vec::new(),
            objective: 0.0,
            diagnostics: Default::default(),
        }
    }

    #[test]
    fn perfect_prediction_has_zero_error() {
        let x = dmatrix![1.0, 2.0; 3.0, 4.0];
        let m = model(dmatrix![1.0, -1.0], DVector::from_element(1, 0.5));
        let y = m.predict(&x);
        assert_eq!(relative_errors_xy(&m, &x, &y, 1e-3).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn one_percent_by_definition() {
        let m = model(dmatrix![0.0], DVector::from_element(1, 1.01));
        let (mx, avg) = relative_errors_xy(&m, &dmatrix![0.0], &dmatrix![1.0], 1e-3).unwrap();
        assert!((mx - 1.0).abs() < 1e-12 && (avg - 1.0).abs() < 1e-12);
    }

    #[test]
    fn average_matches_direct_grid() {
        let prob = random_problem(30, 3, 4, 0.5, true, 2);
        let fit = fit_ols(&prob).unwrap();
        let (mx, avg) = relative_errors_xy(&fit, &prob.x, &prob.y, 0.05).unwrap();
        let mut grid = Vec::new();
        for i in 0..30 {
            for j in 0..4 {
                let mut pred = fit.b[j];
                for k in 0..3 {
                    pred += fit.w[(j, k)] * prob.x[(i, k)];
                }
                grid.push((pred - prob.y[(i, j)]).abs() / prob.y[(i, j)].abs().max(0.05));
            }
        }
        let mean = grid.iter().sum::<f64>() / grid.len() as f64 * 100.0;
        let top = grid.iter().cloned().fold(0.0, f64::max) * 100.0;
        assert!((avg - mean).abs() < 1e-10);
        assert!((mx - top).abs() < 1e-10);
        assert!(mx >= avg);
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = model(dmatrix![1.0, 1.0], DVector::zeros(1));
        assert!(matches!(
            relative_errors_xy(&m, &dmatrix![1.0], &dmatrix![1.0], 1e-3),
            Err(EvalError::Dimension { .. })
        ));
        let m = model(dmatrix![1.0], DVector::zeros(1));
        assert!(relative_errors_xy(&m, &dmatrix![1.0], &dmatrix![1.0], 0.0).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!("lasso".parse::<Method>().is_err());
    }

    fn case9() -> NetworkCase {
        parse_case(include_str!("../fixtures/case9.txt")).unwrap()
    }

    #[test]
    fn ols_only_report_structure() {
        let mut spec = ComparisonSpec::new("case9", 60, 30, 0.0, vec![Method::Ols]);
        spec.seeds = vec![0, 1];
        let report = run_comparison(&case9(), &spec).unwrap();
        let per_seed: Vec<_> = report.rows.iter().filter(|r| r.seed.is_some()).collect();
        assert_eq!(per_seed.len(), 4);
        assert_eq!(report.summary().count(), 2);
        for r in &report.rows {
            assert!(r.max_rel_err.unwrap() >= r.avg_rel_err.unwrap());
        }
        let csv = report.to_csv();
        assert!(csv.starts_with("method,p,p0,split,seed,max_rel_err,avg_rel_err,wall_time,status\n"));
        assert_eq!(csv.lines().count(), 7);
        assert!(report.to_markdown().lines().count() == 4);
    }

    #[test]
    fn single_seed_has_two_rows_per_method() {
        let spec = ComparisonSpec::new("case9", 40, 20, 0.0, vec![Method::Ols]);
        let report = run_comparison(&case9(), &spec).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert_eq!(report.summary().count(), 2);
        assert!(report.find("ols", None, Split::Test).is_some());
    }

    #[test]
    fn trimmed_with_zero_budget_equals_ols() {
        let mut spec = ComparisonSpec::new("case9", 60, 30, 0.0, vec![Method::Ols, Method::TrimExact]);
        spec.p_values = vec![0.0];
        let report = run_comparison(&case9(), &spec).unwrap();
        for split in [Split::Train, Split::Test] {
            let ols = report.find("ols", None, split).unwrap();
            let trim = report.find("trim_exact", Some(0.0), split).unwrap();
            assert_eq!(ols.max_rel_err, trim.max_rel_err);
            assert_eq!(ols.avg_rel_err, trim.avg_rel_err);
        }
    }

    #[test]
    fn failures_become_statuses() {
        let prob = random_problem(5, 6, 1, 0.1, true, 0);
        let out = fit_method(Method::Ols, &prob, &MethodSettings::default(), 0.0);
        assert!(out.model.is_none());
        assert!(out.status.starts_with("error:"));
    }

    #[test]
    fn empty_report_is_header_only() {
        let report = ExperimentReport::default();
        assert_eq!(report.to_csv().lines().count(), 1);
        assert_eq!(report.to_markdown().lines().count(), 2);
    }
}
