use std::path::{Path, PathBuf};

use lpf_core::datagen::{generate_samples, load_dataset, save_dataset, Dataset, SampleSpec};
use lpf_core::estimators::{Diagnostics, LpfModel, RegressionProblem};
use lpf_core::eval::{comparison_data, derived_seeds, evaluate_outcome, fit_method, ExperimentReport, FitOutcome, Method};
use lpf_core::trimmed::{export_mps, save_mps, TrimConfig, TrimModelKind};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::CliError;

pub fn train_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("train_s{seed}.csv"))
}

pub fn test_path(dir: &Path, seed: u64) -> PathBuf {
    dir.join(format!("test_s{seed}.csv"))
}

pub fn model_path(dir: &Path, method: Method, p: Option<f64>, seed: u64) -> PathBuf {
    match p {
        Some(p) => dir.join(format!("model_{method}_p{p}_s{seed}.json")),
        None => dir.join(format!("model_{method}_s{seed}.json")),
    }
}

/// The (method, p) cells of a run, in report order.
fn cells(cfg: &RunConfig) -> Vec<(Method, Option<f64>)> {
    let mut out = Vec::new();
    for &m in &cfg.spec.methods {
        if m.is_trimmed() {
            out.extend(cfg.spec.p_values.iter().map(|&p| (m, Some(p))));
        } else {
            out.push((m, None));
        }
    }
    out
}

fn runtime(msg: impl std::fmt::Display) -> CliError {
    CliError::Runtime(vec![msg.to_string()])
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    load_dataset(path).map_err(|e| runtime(format!("{e} (run `generate` first?)")))
}

fn summary(path: &Path, d: &Dataset) {
    let outliers = d.outlier_mask.as_ref().map_or(0, |m| m.iter().filter(|&&b| b).count());
    println!(
        "wrote {}: {} samples, {} inputs, {} outputs, {} outliers",
        path.display(),
        d.len(),
        d.x.ncols(),
        d.y.ncols(),
        outliers
    );
}

/// Training (with outliers) and clean test sets per seed.
pub fn generate(cfg: &RunConfig) -> Result<(), CliError> {
    ensure_dir(&cfg.output_dir)?;
    for &seed in &cfg.spec.seeds {
        let (dirty, _, test) = comparison_data(&cfg.case, &cfg.spec, seed).map_err(runtime)?;
        for (path, data) in [(train_path(&cfg.output_dir, seed), &dirty), (test_path(&cfg.output_dir, seed), &test)] {
            save_dataset(data, &path).map_err(runtime)?;
            summary(&path, data);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_time: f64,
}

/// On-disk fitted model. Everything except `timings` is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub method: String,
    pub p: Option<f64>,
    pub seed: u64,
    pub status: String,
    /// `n_y` rows of `n_x` weights.
    pub w: Option<Vec<Vec<f64>>>,
    pub b: Option<Vec<f64>>,
    pub z: Option<Vec<bool>>,
    pub objective: Option<f64>,
    pub lower_bound: Option<f64>,
    pub nodes_explored: Option<u64>,
    pub diagnostics: Option<Diagnostics>,
    pub timings: Timings,
}

impl ModelFile {
    fn new(method: Method, p: Option<f64>, seed: u64, out: &FitOutcome) -> Self {
        let m = out.model.as_ref();
        Self {
            method: method.name().to_string(),
            p,
            seed,
            status: out.status.clone(),
            w: m.map(|m| m.w.row_iter().map(|r| r.iter().copied().collect()).collect()),
            b: m.map(|m| m.b.iter().copied().collect()),
            z: m.map(|m| m.z.clone()),
            objective: m.map(|m| m.objective),
            lower_bound: out.lower_bound,
            nodes_explored: out.nodes_explored,
            diagnostics: m.map(|m| m.diagnostics.clone()),
            timings: Timings {
                wall_time: out.wall_time,
            },
        }
    }

    fn outcome(&self) -> Result<FitOutcome, String> {
        let model = match (&self.w, &self.b) {
            (Some(w), Some(b)) => {
                let n_x = w.first().map_or(0, Vec::len);
                if w.len() != b.len() || w.iter().any(|r| r.len() != n_x) {
                    return Err("inconsistent W/b shapes".into());
                }
                Some(LpfModel {
                    w: DMatrix::from_fn(w.len(), n_x, |i, j| w[i][j]),
                    b: DVector::from_vec(b.clone()),
                    z: self.z.clone().unwrap_or_default(),
                    objective: self.objective.unwrap_or(f64::NAN),
                    diagnostics: self.diagnostics.clone().unwrap_or_default(),
                })
            }
            _ => None,
        };
        Ok(FitOutcome {
            model,
            status: self.status.clone(),
            wall_time: self.timings.wall_time,
            lower_bound: self.lower_bound,
            nodes_explored: self.nodes_explored,
        })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(runtime)? + "\n";
    std::fs::write(path, text).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))
}

/// One model file per (method, p, seed). Fitting failures are recorded in
/// the model file and reported after the remaining fits run.
pub fn fit(cfg: &RunConfig, data_dir: &Path) -> Result<(), CliError> {
    ensure_dir(&cfg.output_dir)?;
    let mut failures = Vec::new();
    for &seed in &cfg.spec.seeds {
        let train = load(&train_path(data_dir, seed))?;
        let prob = RegressionProblem::new(train.x, train.y, true);
        for (method, p) in cells(cfg) {
            let out = fit_method(method, &prob, cfg.settings(method), p.unwrap_or(0.0));
            let path = model_path(&cfg.output_dir, method, p, seed);
            write_json(&path, &ModelFile::new(method, p, seed, &out))?;
            println!("wrote {}: {} in {:.3} s", path.display(), out.status, out.wall_time);
            if out.model.is_none() {
                failures.push(format!("{method} (seed {seed}): {}", out.status));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(failures))
    }
}

/// Score saved models on the clean training copy and the test set.
pub fn report(cfg: &RunConfig, data_dir: &Path) -> Result<ExperimentReport, CliError> {
    let mut missing = Vec::new();
    for &seed in &cfg.spec.seeds {
        for (method, p) in cells(cfg) {
            let path = model_path(&cfg.output_dir, method, p, seed);
            if !path.is_file() {
                missing.push(format!("missing model file {}", path.display()));
            }
        }
    }
    if !missing.is_empty() {
        return Err(CliError::Runtime(missing));
    }

    let mut report = ExperimentReport::default();
    for &seed in &cfg.spec.seeds {
        let test = load(&test_path(data_dir, seed))?;
        let (train_seed, _, _) = derived_seeds(seed);
        let clean_train = generate_samples(
            &cfg.case,
            &cfg.case_name,
            &SampleSpec::new(cfg.spec.m_train, cfg.spec.direction, train_seed),
        )
        .map_err(runtime)?;
        for (method, p) in cells(cfg) {
            let path = model_path(&cfg.output_dir, method, p, seed);
            let text = std::fs::read_to_string(&path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            let file: ModelFile =
                serde_json::from_str(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            let outcome = file.outcome().map_err(|e| runtime(format!("{}: {e}", path.display())))?;
            report.rows.extend(evaluate_outcome(
                method,
                p,
                cfg.spec.p0,
                Some(seed),
                &outcome,
                &clean_train,
                &test,
                cfg.spec.floor,
            ));
        }
    }
    report.aggregate();

    ensure_dir(&cfg.output_dir)?;
    let csv = cfg.output_dir.join("report.csv");
    let md = cfg.output_dir.join("report.md");
    for (path, body) in [(&csv, report.to_csv()), (&md, report.to_markdown())] {
        std::fs::write(path, body).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
        println!("wrote {}", path.display());
    }
    Ok(report)
}

/// Write the trimmed fit of one training set as an MPS model plus sidecar.
pub fn export(cfg: &RunConfig, data_dir: &Path, kind: TrimModelKind, seed: u64, p: f64) -> Result<PathBuf, CliError> {
    let train = load(&train_path(data_dir, seed))?;
    let prob = RegressionProblem::new(train.x, train.y, true);
    let trim = TrimConfig {
        p,
        ..cfg.spec.settings.trim.clone()
    };
    let ex = export_mps(&prob, &trim, kind);
    ensure_dir(&cfg.output_dir)?;
    let name = match kind {
        TrimModelKind::Squared => "squared",
        TrimModelKind::Absolute => "absolute",
    };
    let path = cfg.output_dir.join(format!("trim_{name}_p{p}_s{seed}.mps"));
    let sidecar = save_mps(&ex, &path).map_err(runtime)?;
    println!(
        "wrote {}: {} rows, {} columns",
        path.display(),
        ex.model.rows.len(),
        ex.model.columns.len()
    );
    println!("wrote {}", sidecar.display());
    Ok(path)
}
