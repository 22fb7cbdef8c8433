//! Run configuration: a TOML file with top-level keys plus optional tables.
//!
//! ```toml
//! case_path = "case9.txt"        # relative to this file
//! direction = "VoltToPower"      # or "PowerToVolt"
//! m_train = 500
//! m_test = 200
//! seeds = [0, 1, 2]
//! output_dir = "out"             # relative to this file; --out wins
//! methods = ["ols", "huber", "trim_s1"]
//! p_values = [0.08]              # trimmed methods only; default [outlier.ratio]
//!
//! [outlier]                      # datagen::OutlierSpec fields
//! ratio = 0.08
//!
//! [trim]                         # trimmed::TrimConfig fields except p
//! time_limit = 60
//!
//! [overrides.trim_exact]         # per-method keys over the method's table
//! time_limit = 600
//! ```
//!
//! Method tables are `[huber]` (`delta`), `[lav]` (`tol`), `[svr]`, `[lnr]`
//! and `[trim]`; every key is checked against the target type.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use lpf_core::datagen::{Direction, OutlierSpec};
use lpf_core::estimators::{LnrConfig, SvrConfig};
use lpf_core::eval::{ComparisonSpec, Method, MethodSettings, DEFAULT_FLOOR};
use lpf_core::netcase::{parse_case, NetworkCase};
use lpf_core::trimmed::TrimConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    case_path: PathBuf,
    case_name: Option<String>,
    direction: Option<String>,
    m_train: usize,
    m_test: usize,
    seeds: Option<Vec<u64>>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    methods: Vec<String>,
    p_values: Option<Vec<f64>>,
    floor: Option<f64>,
    #[serde(default)]
    outlier: toml::Table,
    #[serde(default)]
    trim: toml::Table,
    #[serde(default)]
    svr: toml::Table,
    #[serde(default)]
    lnr: toml::Table,
    #[serde(default)]
    huber: toml::Table,
    #[serde(default)]
    lav: toml::Table,
    #[serde(default)]
    overrides: BTreeMap<String, toml::Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HuberSection {
    delta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LavSection {
    tol: f64,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub case_name: String,
    pub case: NetworkCase,
    pub output_dir: PathBuf,
    pub spec: ComparisonSpec,
    /// Settings per method, after overrides.
    pub per_method: BTreeMap<Method, MethodSettings>,
}

impl RunConfig {
    pub fn settings(&self, method: Method) -> &MethodSettings {
        self.per_method.get(&method).unwrap_or(&self.spec.settings)
    }
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(vec![format!("config field `{field}`: {msg}")])
}

/// Lay the keys of `table` over the serialized `base`, rejecting keys the
/// target type does not have.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, table: &toml::Table, field: &str) -> Result<T, CliError> {
    let mut value = serde_json::to_value(base).expect("settings serialize to JSON");
    let obj = value.as_object_mut().expect("settings serialize to an object");
    for (key, v) in table {
        if !obj.contains_key(key) {
            return Err(invalid(&format!("{field}.{key}"), "unknown key"));
        }
        let v = serde_json::to_value(v).map_err(|e| invalid(&format!("{field}.{key}"), e))?;
        obj.insert(key.clone(), v);
    }
    serde_json::from_value(value).map_err(|e| invalid(field, e))
}

fn method_settings(
    base: &MethodSettings,
    method: Method,
    table: &toml::Table,
    field: &str,
) -> Result<MethodSettings, CliError> {
    let mut s = base.clone();
    match method {
        Method::Ols => {
            if let Some(key) = table.keys().next() {
                return Err(invalid(&format!("{field}.{key}"), "ols takes no settings"));
            }
        }
        Method::Lav => s.lav_tol = overlay(&LavSection { tol: s.lav_tol }, table, field)?.tol,
        Method::Huber => {
            s.huber_delta = overlay(&HuberSection { delta: s.huber_delta }, table, field)?.delta;
        }
        Method::Svr => s.svr = overlay(&s.svr, table, field)?,
        Method::Lnr => s.lnr = overlay(&s.lnr, table, field)?,
        _ => s.trim = overlay(&s.trim, table, field)?,
    }
    Ok(s)
}

fn check_ratio(field: &str, v: f64) -> Result<(), CliError> {
    if (0.0..0.5).contains(&v) {
        Ok(())
    } else {
        Err(invalid(field, format!("{v} outside [0, 0.5)")))
    }
}

/// Read and validate a configuration file.
pub fn load_config(path: &Path, out_override: Option<&Path>, seed_override: Option<u64>) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(vec![format!("cannot read config {}: {e}", path.display())]))?;
    let raw: RawConfig = toml::from_str(&text)
        .map_err(|e| CliError::Validation(vec![format!("config {}: {}", path.display(), e.to_string().trim_end())]))?;
    let base_dir = path.parent().unwrap_or(Path::new("."));

    let case_path = base_dir.join(&raw.case_path);
    if !case_path.is_file() {
        return Err(invalid("case_path", format!("file not found: {}", case_path.display())));
    }
    let case_text = std::fs::read_to_string(&case_path).map_err(|e| invalid("case_path", e))?;
    let case = parse_case(&case_text).map_err(|e| invalid("case_path", e))?;
    let case_name = raw.case_name.unwrap_or_else(|| {
        case_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "case".into())
    });

    let direction: Direction = match &raw.direction {
        Some(d) => d.parse().map_err(|e| invalid("direction", e))?,
        None => Direction::VoltToPower,
    };
    if raw.m_train == 0 {
        return Err(invalid("m_train", "must be positive"));
    }
    if raw.m_test == 0 {
        return Err(invalid("m_test", "must be positive"));
    }

    let mut methods = Vec::with_capacity(raw.methods.len());
    for (i, name) in raw.methods.iter().enumerate() {
        let m: Method = name.parse().map_err(|e| invalid(&format!("methods[{i}]"), e))?;
        if !methods.contains(&m) {
            methods.push(m);
        }
    }

    let seeds = match seed_override {
        Some(k) => vec![k],
        None => raw.seeds.unwrap_or_else(|| vec![0]),
    };
    if seeds.is_empty() {
        return Err(invalid("seeds", "must not be empty"));
    }

    let outlier: OutlierSpec = overlay(&OutlierSpec::new(0.0, 0), &raw.outlier, "outlier")?;
    check_ratio("outlier.ratio", outlier.ratio)?;
    let p_values = raw.p_values.unwrap_or_else(|| vec![outlier.ratio]);
    for (i, &p) in p_values.iter().enumerate() {
        check_ratio(&format!("p_values[{i}]"), p)?;
    }
    let floor = raw.floor.unwrap_or(DEFAULT_FLOOR);
    if !(floor > 0.0) {
        return Err(invalid("floor", "must be positive"));
    }

    let defaults = MethodSettings::default();
    let settings = MethodSettings {
        huber_delta: overlay(&HuberSection { delta: None }, &raw.huber, "huber")?.delta,
        lav_tol: overlay(&LavSection { tol: defaults.lav_tol }, &raw.lav, "lav")?.tol,
        svr: overlay(&SvrConfig::default(), &raw.svr, "svr")?,
        lnr: overlay(&LnrConfig::default(), &raw.lnr, "lnr")?,
        trim: overlay(&TrimConfig::new(0.0), &raw.trim, "trim")?,
    };
    if let Err(e) = settings.trim.validate() {
        return Err(invalid("trim", e));
    }

    let mut per_method = BTreeMap::new();
    for (name, table) in &raw.overrides {
        let field = format!("overrides.{name}");
        let m: Method = name.parse().map_err(|e| invalid(&field, e))?;
        per_method.insert(m, method_settings(&settings, m, table, &field)?);
    }

    let output_dir = match out_override {
        Some(o) => o.to_path_buf(),
        None => base_dir.join(raw.output_dir.unwrap_or_else(|| PathBuf::from("out"))),
    };

    let spec = ComparisonSpec {
        case_name: case_name.clone(),
        direction,
        m_train: raw.m_train,
        m_test: raw.m_test,
        p0: outlier.ratio,
        p_values,
        seeds,
        methods,
        settings,
        outlier,
        floor,
    };
    Ok(RunConfig {
        case_name,
        case,
        output_dir,
        spec,
        per_method,
    })
}
