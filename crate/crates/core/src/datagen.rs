//! Training/test dataset generation, outlier injection and persistence.
//!
//! Samples come from AC power flows solved under randomly scaled loads. Each
//! row pairs independent quantities `x` with dependent quantities `y`; the
//! pairing direction is configurable.
//!
//! Persistence is a CSV file (`x0..x{nx-1},y0..y{ny-1}` header, one sample per
//! line) plus a JSON sidecar with the same stem holding the outlier mask and
//! provenance.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcase::{build_ybus, BusKind, NetworkCase};
use crate::powerflow::{solve_newton, PowerFlowSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};

pub const SCHEMA_VERSION: u32 = 1;

/// Columns whose clean standard deviation is at or below this value are
/// treated as constant and never receive injected gross errors.
pub const CONSTANT_COLUMN_STD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// x = voltages, y = injections.
    VoltToPower,
    /// x = injections, y = voltages.
    PowerToVolt,
}

impl std::str::FromStr for Direction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "VoltToPower" | "volt-to-power" => Ok(Direction::VoltToPower),
            "PowerToVolt" | "power-to-volt" => Ok(Direction::PowerToVolt),
            _ => Err(format!("unknown direction '{s}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub case: String,
    pub direction: Direction,
    pub seed: u64,
    /// Actual outlier ratio p0 of the mask (0 for clean data).
    pub outlier_ratio: f64,
    pub x_columns: Vec<String>,
    pub y_columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Ground-truth outlier rows; `None` for data of unknown provenance.
    pub outlier_mask: Option<Vec<bool>>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("too many non-convergent power flows: {accepted} of {attempts} draws converged")]
    TooManyFailures { accepted: usize, attempts: usize },
    #[error("outlier ratio {ratio} flags no sample out of {m}")]
    NoFlaggableSample { ratio: f64, m: usize },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub m: usize,
    pub load_scale_lo: f64,
    pub load_scale_hi: f64,
    pub direction: Direction,
    pub seed: u64,
    /// Keep input columns that are fixed by construction (PV voltage
    /// magnitudes, injections at load-free buses). Off by default, since they
    /// make the design matrix rank deficient.
    pub keep_fixed_columns: bool,
}

impl SampleSpec {
    pub fn new(m: usize, direction: Direction, seed: u64) -> Self {
        Self {
            m,
            load_scale_lo: 0.8,
            load_scale_hi: 1.2,
            direction,
            seed,
            keep_fixed_columns: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Quantity {
    VMag,
    VAng,
    P,
    Q,
}

#[derive(Debug, Clone, Copy)]
struct Column {
    quantity: Quantity,
    bus: usize,
}

impl Column {
    fn name(&self, case: &NetworkCase) -> String {
        let prefix = match self.quantity {
            Quantity::VMag => "vm",
            Quantity::VAng => "va",
            Quantity::P => "p",
            Quantity::Q => "q",
        };
        format!("{prefix}{}", case.buses[self.bus].id)
    }

    fn value(&self, sol: &PowerFlowSolution) -> f64 {
        match self.quantity {
            Quantity::VMag => sol.v_mag[self.bus],
            Quantity::VAng => sol.v_ang[self.bus],
            Quantity::P => sol.p_inj[self.bus],
            Quantity::Q => sol.q_inj[self.bus],
        }
    }

    fn fixed_by_construction(&self, case: &NetworkCase) -> bool {
        let bus = &case.buses[self.bus];
        match self.quantity {
            Quantity::VMag => bus.kind != BusKind::Pq,
            Quantity::VAng => false,
            Quantity::P => bus.p_load == 0.0,
            Quantity::Q => bus.kind == BusKind::Pq && bus.q_load == 0.0,
        }
    }
}

fn layout(case: &NetworkCase, direction: Direction, keep_fixed: bool) -> (Vec<Column>, Vec<Column>) {
    let buses = case.non_slack();
    let block = |q: Quantity| -> Vec<Column> {
        buses.iter().map(|&bus| Column { quantity: q, bus }).collect()
    };
    let volts: Vec<Column> = block(Quantity::VMag).into_iter().chain(block(Quantity::VAng)).collect();
    let powers: Vec<Column> = block(Quantity::P).into_iter().chain(block(Quantity::Q)).collect();
    let (x, y) = match direction {
        Direction::VoltToPower => (volts, powers),
        Direction::PowerToVolt => (powers, volts),
    };
    let x = if keep_fixed {
        x
    } else {
        x.into_iter().filter(|c| !c.fixed_by_construction(case)).collect()
    };
    (x, y)
}

/// Names of the `x` and `y` columns `generate_samples` produces for a case.
pub fn column_names(case: &NetworkCase, direction: Direction, keep_fixed: bool) -> (Vec<String>, Vec<String>) {
    let (x, y) = layout(case, direction, keep_fixed);
    (
        x.iter().map(|c| c.name(case)).collect(),
        y.iter().map(|c| c.name(case)).collect(),
    )
}

fn scaled_case(case: &NetworkCase, factors: &[f64]) -> NetworkCase {
    let mut c = case.clone();
    for (k, bus) in c.buses.iter_mut().enumerate() {
        bus.p_load *= factors[2 * k];
        bus.q_load *= factors[2 * k + 1];
    }
    c
}

/// Draw `spec.m` power-flow samples under independently scaled bus loads.
pub fn generate_samples(
    case: &NetworkCase,
    case_name: &str,
    spec: &SampleSpec,
) -> Result<Dataset, DatasetError> {
    if spec.m == 0 {
        return Err(DatasetError::InvalidRequest("m must be at least 1".into()));
    }
    if !(spec.load_scale_lo > 0.0 && spec.load_scale_lo <= spec.load_scale_hi) {
        return Err(DatasetError::InvalidRequest(format!(
            "load scale range [{}, {}] is invalid",
            spec.load_scale_lo, spec.load_scale_hi
        )));
    }
    let (xcols, ycols) = layout(case, spec.direction, spec.keep_fixed_columns);
    let ybus = build_ybus(case);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_factors = 2 * case.n_buses();
    let max_attempts = 10 * spec.m;

    let mut solutions: Vec<PowerFlowSolution> = Vec::with_capacity(spec.m);
    let mut attempts = 0;
    while solutions.len() < spec.m {
        let need = (spec.m - solutions.len()).min(max_attempts - attempts);
        if need == 0 {
            return Err(DatasetError::TooManyFailures {
                accepted: solutions.len(),
                attempts,
            });
        }
        // Draws are sequential; solves may run in parallel. Results are
        // consumed in draw order so the dataset does not depend on threads.
        let draws: Vec<Vec<f64>> = (0..need)
            .map(|_| {
                (0..n_factors)
                    .map(|_| {
                        if spec.load_scale_lo == spec.load_scale_hi {
                            spec.load_scale_lo
                        } else {
                            rng.random_range(spec.load_scale_lo..spec.load_scale_hi)
                        }
                    })
                    .collect()
            })
            .collect();
        attempts += need;
        let solved: Vec<Option<PowerFlowSolution>> = draws
            .par_iter()
            .map(|f| solve_newton(&scaled_case(case, f), &ybus, DEFAULT_TOL, DEFAULT_MAX_ITER).ok())
            .collect();
        solutions.extend(solved.into_iter().flatten());
    }

    let x = DMatrix::from_fn(spec.m, xcols.len(), |i, j| xcols[j].value(&solutions[i]));
    let y = DMatrix::from_fn(spec.m, ycols.len(), |i, j| ycols[j].value(&solutions[i]));
    Ok(Dataset {
        x,
        y,
        outlier_mask: Some(vec![false; spec.m]),
        meta: DatasetMeta {
            case: case_name.to_string(),
            direction: spec.direction,
            seed: spec.seed,
            outlier_ratio: 0.0,
            x_columns: xcols.iter().map(|c| c.name(case)).collect(),
            y_columns: ycols.iter().map(|c| c.name(case)).collect(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComponentCount {
    Fixed(usize),
    /// Uniform integer in `lo..=hi`.
    Range { lo: usize, hi: usize },
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierTarget {
    Both,
    XOnly,
    YOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub ratio: f64,
    pub magnitude_lo: f64,
    pub magnitude_hi: f64,
    pub components_per_sample: ComponentCount,
    pub target: OutlierTarget,
    pub seed: u64,
}

impl OutlierSpec {
    /// Gross errors of 10–30 column standard deviations on 1–3 components.
    pub fn new(ratio: f64, seed: u64) -> Self {
        Self {
            ratio,
            magnitude_lo: 10.0,
            magnitude_hi: 30.0,
            components_per_sample: ComponentCount::Range { lo: 1, hi: 3 },
            target: OutlierTarget::Both,
            seed,
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        if !(0.0..0.5).contains(&self.ratio) {
            return Err(DatasetError::InvalidRequest(format!(
                "outlier ratio {} outside [0, 0.5)",
                self.ratio
            )));
        }
        if !(self.magnitude_lo > 0.0 && self.magnitude_hi >= self.magnitude_lo) {
            return Err(DatasetError::InvalidRequest(format!(
                "outlier magnitude range [{}, {}] is invalid",
                self.magnitude_lo, self.magnitude_hi
            )));
        }
        match self.components_per_sample {
            ComponentCount::Fixed(0) => Err(DatasetError::InvalidRequest(
                "components_per_sample must be positive".into(),
            )),
            ComponentCount::Range { lo, hi } if lo == 0 || hi < lo => Err(
                DatasetError::InvalidRequest(format!("component range {lo}..={hi} is invalid")),
            ),
            _ => Ok(()),
        }
    }
}

/// Sample standard deviation of every column.
pub fn column_std(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    (0..m.ncols())
        .map(|j| {
            if n < 2 {
                return 0.0;
            }
            let col = m.column(j);
            let mean = col.iter().sum::<f64>() / n as f64;
            (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        })
        .collect()
}

/// Corrupt `floor(ratio * m)` distinct rows with additive gross errors.
pub fn inject_outliers(clean: &Dataset, spec: &OutlierSpec) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    let m = clean.len();
    let k = (spec.ratio * m as f64).floor() as usize;
    if spec.ratio > 0.0 && k == 0 {
        return Err(DatasetError::NoFlaggableSample { ratio: spec.ratio, m });
    }
    let mut out = clean.clone();
    let mut mask = clean.outlier_mask.clone().unwrap_or_else(|| vec![false; m]);
    out.meta.outlier_ratio = spec.ratio;
    if k == 0 {
        out.outlier_mask = Some(mask);
        return Ok(out);
    }

    let nx = clean.x.ncols();
    let sx = column_std(&clean.x);
    let sy = column_std(&clean.y);
    let sigma: Vec<f64> = sx.iter().chain(&sy).copied().collect();
    let candidates: Vec<usize> = (0..sigma.len())
        .filter(|&c| match spec.target {
            OutlierTarget::Both => true,
            OutlierTarget::XOnly => c < nx,
            OutlierTarget::YOnly => c >= nx,
        })
        .filter(|&c| sigma[c] > CONSTANT_COLUMN_STD)
        .collect();
    if candidates.is_empty() {
        return Err(DatasetError::InvalidRequest(
            "no non-constant column available for outlier injection".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut rows = sample(&mut rng, m, k).into_vec();
    rows.sort_unstable();
    for &i in &rows {
        mask[i] = true;
        let count = match spec.components_per_sample {
            ComponentCount::Fixed(c) => c,
            ComponentCount::Range { lo, hi } => rng.random_range(lo..=hi),
            ComponentCount::All => candidates.len(),
        }
        .min(candidates.len());
        let mut picked: Vec<usize> = sample(&mut rng, candidates.len(), count)
            .into_iter()
            .map(|t| candidates[t])
            .collect();
        picked.sort_unstable();
        for c in picked {
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let u = if spec.magnitude_hi > spec.magnitude_lo {
                rng.random_range(spec.magnitude_lo..spec.magnitude_hi)
            } else {
                spec.magnitude_lo
            };
            let delta = sign * sigma[c] * u;
            if c < nx {
                out.x[(i, c)] += delta;
            } else {
                out.y[(i, c - nx)] += delta;
            }
        }
    }
    out.outlier_mask = Some(mask);
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    schema: u32,
    seed: u64,
    direction: Direction,
    outlier_mask: Option<Vec<bool>>,
    case: String,
    outlier_ratio: f64,
    x_columns: Vec<String>,
    y_columns: Vec<String>,
}

/// Path of the JSON sidecar for a dataset CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn schema_err(path: &Path, message: impl Into<String>) -> DatasetError {
    DatasetError::Schema {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

/// Write `path` (CSV) and its JSON sidecar.
pub fn save_dataset(d: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let header: Vec<String> = (0..d.x.ncols())
        .map(|j| format!("x{j}"))
        .chain((0..d.y.ncols()).map(|j| format!("y{j}")))
        .collect();
    let csv_err = |e: csv::Error| schema_err(path, e.to_string());
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..d.len() {
        let row: Vec<String> = d
            .x
            .row(i)
            .iter()
            .chain(d.y.row(i).iter())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| schema_err(path, e.to_string()))?;
    fs::write(path, bytes).map_err(io_err(path))?;

    let side = Sidecar {
        schema: SCHEMA_VERSION,
        seed: d.meta.seed,
        direction: d.meta.direction,
        outlier_mask: d.outlier_mask.clone(),
        case: d.meta.case.clone(),
        outlier_ratio: d.meta.outlier_ratio,
        x_columns: d.meta.x_columns.clone(),
        y_columns: d.meta.y_columns.clone(),
    };
    let sp = sidecar_path(path);
    let json = serde_json::to_string_pretty(&side).map_err(|e| schema_err(&sp, e.to_string()))?;
    fs::write(&sp, json + "\n").map_err(io_err(&sp))
}

/// Read a dataset written by [`save_dataset`].
pub fn load_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let sp = sidecar_path(path);
    let side_text = fs::read_to_string(&sp).map_err(io_err(&sp))?;
    let side: Sidecar = serde_json::from_str(&side_text).map_err(|e| schema_err(&sp, e.to_string()))?;
    if side.schema != SCHEMA_VERSION {
        return Err(schema_err(
            &sp,
            format!("schema version {} (expected {SCHEMA_VERSION})", side.schema),
        ));
    }

    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let header = r.headers().map_err(|e| schema_err(path, e.to_string()))?.clone();
    let nx = header.iter().filter(|h| h.starts_with('x')).count();
    let ny = header.len() - nx;
    for (j, h) in header.iter().enumerate() {
        let expect = if j < nx { format!("x{j}") } else { format!("y{}", j - nx) };
        if h != expect {
            return Err(schema_err(path, format!("column {j} is '{h}', expected '{expect}'")));
        }
    }
    if nx != side.x_columns.len() || ny != side.y_columns.len() {
        return Err(schema_err(
            path,
            format!(
                "CSV has {nx} x and {ny} y columns, sidecar lists {} and {}",
                side.x_columns.len(),
                side.y_columns.len()
            ),
        ));
    }

    let mut values: Vec<f64> = Vec::new();
    let mut m = 0;
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| schema_err(path, e.to_string()))?;
        if rec.len() != nx + ny {
            return Err(schema_err(
                path,
                format!("row {} has {} fields, expected {}", line + 1, rec.len(), nx + ny),
            ));
        }
        for f in rec.iter() {
            let v: f64 = f
                .parse()
                .map_err(|_| schema_err(path, format!("row {}: '{f}' is not a number", line + 1)))?;
            values.push(v);
        }
        m += 1;
    }
    if let Some(mask) = &side.outlier_mask {
        if mask.len() != m {
            return Err(schema_err(
                &sp,
                format!("mask has {} entries for {m} rows", mask.len()),
            ));
        }
    }
    let width = nx + ny;
    let x = DMatrix::from_fn(m, nx, |i, j| values[i * width + j]);
    let y = DMatrix::from_fn(m, ny, |i, j| values[i * width + nx + j]);
    Ok(Dataset {
        x,
        y,
        outlier_mask: side.outlier_mask,
        meta: DatasetMeta {
            case: side.case,
            direction: side.direction,
            seed: side.seed,
            outlier_ratio: side.outlier_ratio,
            x_columns: side.x_columns,
            y_columns: side.y_columns,
        },
    })
}
