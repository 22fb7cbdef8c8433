//! Export of the trimmed-fit mixed-integer models in MPS format.
//!
//! Two models are available. [`TrimModelKind::Squared`] minimizes `Σ u_ij²`
//! subject to `|y_ij − a_i ω_j| ≤ u_ij + M z_i` (two linear rows per residual)
//! and `Σ z_i ≤ p·m`. [`TrimModelKind::Absolute`] minimizes `Σ (e⁺ + e⁻)`
//! subject to `a_i ω_j − s_ij + e⁺_ij − e⁻_ij = y_ij`, `−M z_i ≤ s_ij ≤ M z_i`
//! and the same cardinality row. Binaries are wrapped in integer markers and
//! bounded above by 1; the quadratic objective is written as a `QMATRIX`
//! section (objective `½ xᵀQx`).
//!
//! Names follow `W{j}_{k}` (weight of feature `k` in output `j`), `B{j}`
//! (intercept), `U`/`S`/`EP`/`EN{i}_{j}` (per-residual auxiliaries) and
//! `Z{i}`. The sidecar JSON written by [`save_mps`] maps every column back to
//! its role and indices.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrimConfig;
use crate::estimators::RegressionProblem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrimModelKind {
    Squared,
    Absolute,
}

impl std::str::FromStr for TrimModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "squared" => Ok(Self::Squared),
            "absolute" => Ok(Self::Absolute),
            other => Err(format!("unknown model kind `{other}` (expected squared or absolute)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    N,
    L,
    G,
    E,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpsRow {
    pub name: String,
    pub kind: RowKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpsColumn {
    pub name: String,
    pub integer: bool,
    /// `(row, coefficient)` pairs; zero coefficients are not stored.
    pub entries: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpsBound {
    /// `UP`, `LO`, `FX`, `FR`, `MI`, `PL` or `BV`.
    pub kind: String,
    pub column: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MpsModel {
    pub name: String,
    pub rows: Vec<MpsRow>,
    pub columns: Vec<MpsColumn>,
    pub rhs: Vec<(String, f64)>,
    pub bounds: Vec<MpsBound>,
    /// `(column, column, q)` entries of the symmetric matrix `Q`.
    pub quadratic: Vec<(String, String, f64)>,
}

/// Meaning of one model column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpsVariable {
    pub name: String,
    /// `weight`, `intercept`, `u`, `s`, `e_pos`, `e_neg` or `z`.
    pub role: String,
    pub sample: Option<usize>,
    pub output: Option<usize>,
    pub feature: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MpsExport {
    pub kind: TrimModelKind,
    pub m: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub p: f64,
    pub big_m: f64,
    #[serde(skip)]
    pub model: MpsModel,
    pub variables: Vec<MpsVariable>,
}

#[derive(Debug, Error)]
pub enum MpsError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn var(name: String, role: &str, sample: Option<usize>, output: Option<usize>, feature: Option<usize>) -> MpsVariable {
    MpsVariable {
        name,
        role: role.into(),
        sample,
        output,
        feature,
    }
}

/// Build the mixed-integer model of `prob` with the budget `p·m` and big-M
/// constant from `cfg`.
pub fn export_mps(prob: &RegressionProblem, cfg: &TrimConfig, kind: TrimModelKind) -> MpsExport {
    let (m, nx, ny) = (prob.m(), prob.n_x(), prob.n_y());
    let design = prob.design();
    let d = design.ncols();
    let big_m = cfg.big_m;
    let obj = "OBJ".to_string();

    let mut rows = vec![MpsRow {
        name: obj.clone(),
        kind: RowKind::N,
    }];
    let mut rhs = Vec::new();
    // Per residual, the rows the weights enter and their sign.
    let mut fit_rows: Vec<Vec<(String, f64)>> = vec![Vec::new(); m * ny];
    let mut columns: Vec<MpsColumn> = Vec::new();
    let mut variables = Vec::new();
    let mut bounds = Vec::new();
    let mut quadratic = Vec::new();
    let mut z_entries: Vec<Vec<(String, f64)>> = vec![Vec::new(); m];
    let mut aux: Vec<MpsColumn> = Vec::new();

    for i in 0..m {
        for j in 0..ny {
            let y = prob.y[(i, j)];
            let t = i * ny + j;
            match kind {
                TrimModelKind::Squared => {
                    let (rp, rn, u) = (format!("RP{i}_{j}"), format!("RN{i}_{j}"), format!("U{i}_{j}"));
                    rows.push(MpsRow { name: rp.clone(), kind: RowKind::L });
                    rows.push(MpsRow { name: rn.clone(), kind: RowKind::L });
                    push_rhs(&mut rhs, &rp, y);
                    push_rhs(&mut rhs, &rn, -y);
                    fit_rows[t] = vec![(rp.clone(), 1.0), (rn.clone(), -1.0)];
                    z_entries[i].push((rp.clone(), -big_m));
                    z_entries[i].push((rn.clone(), -big_m));
                    aux.push(MpsColumn {
                        name: u.clone(),
                        integer: false,
                        entries: vec![(rp, -1.0), (rn, -1.0)],
                    });
                    quadratic.push((u.clone(), u.clone(), 2.0));
                    variables.push(var(u, "u", Some(i), Some(j), None));
                }
                TrimModelKind::Absolute => {
                    let (re, su, sl) = (format!("RE{i}_{j}"), format!("SU{i}_{j}"), format!("SL{i}_{j}"));
                    let (s, ep, en) = (format!("S{i}_{j}"), format!("EP{i}_{j}"), format!("EN{i}_{j}"));
                    rows.push(MpsRow { name: re.clone(), kind: RowKind::E });
                    rows.push(MpsRow { name: su.clone(), kind: RowKind::L });
                    rows.push(MpsRow { name: sl.clone(), kind: RowKind::G });
                    push_rhs(&mut rhs, &re, y);
                    fit_rows[t] = vec![(re.clone(), 1.0)];
                    z_entries[i].push((su.clone(), -big_m));
                    z_entries[i].push((sl.clone(), big_m));
                    aux.push(MpsColumn {
                        name: s.clone(),
                        integer: false,
                        entries: vec![(re.clone(), -1.0), (su, 1.0), (sl, 1.0)],
                    });
                    bounds.push(MpsBound { kind: "FR".into(), column: s.clone(), value: None });
                    aux.push(MpsColumn {
                        name: ep.clone(),
                        integer: false,
                        entries: vec![(obj.clone(), 1.0), (re.clone(), 1.0)],
                    });
                    aux.push(MpsColumn {
                        name: en.clone(),
                        integer: false,
                        entries: vec![(obj.clone(), 1.0), (re, -1.0)],
                    });
                    variables.push(var(s, "s", Some(i), Some(j), None));
                    variables.push(var(ep, "e_pos", Some(i), Some(j), None));
                    variables.push(var(en, "e_neg", Some(i), Some(j), None));
                }
            }
        }
    }
    rows.push(MpsRow {
        name: "CARD".into(),
        kind: RowKind::L,
    });
    push_rhs(&mut rhs, "CARD", cfg.p * m as f64);

    for j in 0..ny {
        for k in 0..d {
            let (name, v) = if k < nx {
                let n = format!("W{j}_{k}");
                (n.clone(), var(n, "weight", None, Some(j), Some(k)))
            } else {
                let n = format!("B{j}");
                (n.clone(), var(n, "intercept", None, Some(j), None))
            };
            let mut entries = Vec::new();
            for i in 0..m {
                let a = design[(i, k)];
                if a != 0.0 {
                    for (row, sign) in &fit_rows[i * ny + j] {
                        entries.push((row.clone(), sign * a));
                    }
                }
            }
            bounds.push(MpsBound { kind: "FR".into(), column: name.clone(), value: None });
            columns.push(MpsColumn { name, integer: false, entries });
            variables.push(v);
        }
    }
    columns.extend(aux);
    for (i, mut entries) in z_entries.into_iter().enumerate() {
        let name = format!("Z{i}");
        entries.push(("CARD".into(), 1.0));
        bounds.push(MpsBound { kind: "UP".into(), column: name.clone(), value: Some(1.0) });
        columns.push(MpsColumn { name: name.clone(), integer: true, entries });
        variables.push(var(name, "z", Some(i), None, None));
    }

    MpsExport {
        kind,
        m,
        n_x: nx,
        n_y: ny,
        p: cfg.p,
        big_m,
        model: MpsModel {
            name: "TRIMFIT".into(),
            rows,
            columns,
            rhs,
            bounds,
            quadratic,
        },
        variables,
    }
}

fn push_rhs(rhs: &mut Vec<(String, f64)>, row: &str, v: f64) {
    if v != 0.0 {
        rhs.push((row.to_string(), v));
    }
}

/// Shortest round-trip representation, switched to exponent form when long.
fn num(v: f64) -> String {
    let plain = format!("{v}");
    if plain.len() <= 12 {
        plain
    } else {
        format!("{v:e}")
    }
}

fn row_kind_code(kind: RowKind) -> &'static str {
    match kind {
        RowKind::N => "N",
        RowKind::L => "L",
        RowKind::G => "G",
        RowKind::E => "E",
    }
}

/// Render in fixed-field layout. Names longer than eight characters spill
/// over their field but remain whitespace separated.
pub fn write_mps(model: &MpsModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NAME          {}", model.name);
    out.push_str("ROWS\n");
    for r in &model.rows {
        let _ = writeln!(out, " {:<2} {}", row_kind_code(r.kind), r.name);
    }
    out.push_str("COLUMNS\n");
    let mut in_int = false;
    let mut markers = 0;
    for c in &model.columns {
        if c.integer != in_int {
            let tag = if c.integer { "'INTORG'" } else { "'INTEND'" };
            let _ = writeln!(out, "    {:<8}  {:<8}  {}", format!("M{markers}"), "'MARKER'", tag);
            markers += 1;
            in_int = c.integer;
        }
        for (row, v) in &c.entries {
            let _ = writeln!(out, "    {:<8}  {:<8}  {}", c.name, row, num(*v));
        }
    }
    if in_int {
        let _ = writeln!(out, "    {:<8}  {:<8}  'INTEND'", format!("M{markers}"), "'MARKER'");
    }
    out.push_str("RHS\n");
    for (row, v) in &model.rhs {
        let _ = writeln!(out, "    {:<8}  {:<8}  {}", "RHS", row, num(*v));
    }
    if !model.bounds.is_empty() {
        out.push_str("BOUNDS\n");
        for b in &model.bounds {
            match b.value {
                Some(v) => {
                    let _ = writeln!(out, " {:<2} {:<8}  {:<8}  {}", b.kind, "BND", b.column, num(v));
                }
                None => {
                    let _ = writeln!(out, " {:<2} {:<8}  {}", b.kind, "BND", b.column);
                }
            }
        }
    }
    if !model.quadratic.is_empty() {
        out.push_str("QMATRIX\n");
        for (a, b, v) in &model.quadratic {
            let _ = writeln!(out, "    {:<8}  {:<8}  {}", a, b, num(*v));
        }
    }
    out.push_str("ENDATA\n");
    out
}

fn parse_err(line: usize, message: impl Into<String>) -> MpsError {
    MpsError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_num(tok: &str, line: usize) -> Result<f64, MpsError> {
    tok.parse().map_err(|_| parse_err(line, format!("invalid number `{tok}`")))
}

/// Read an MPS file with the sections produced by [`write_mps`] (fixed or
/// free layout). `RANGES` and multiple right-hand-side sets are rejected.
pub fn parse_mps(text: &str) -> Result<MpsModel, MpsError> {
    #[derive(PartialEq)]
    enum Sec {
        None,
        Rows,
        Columns,
        Rhs,
        Bounds,
        Quad,
        End,
    }
    let mut model = MpsModel::default();
    let mut sec = Sec::None;
    let mut integer = false;
    let mut col_index: HashMap<String, usize> = HashMap::new();
    let mut rhs_set: Option<String> = None;

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        if raw.trim().is_empty() || raw.starts_with('*') {
            continue;
        }
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if !raw.starts_with(' ') && !raw.starts_with('\t') {
            sec = match toks[0] {
                "NAME" => {
                    model.name = toks.get(1).copied().unwrap_or_default().to_string();
                    Sec::None
                }
                "ROWS" => Sec::Rows,
                "COLUMNS" => Sec::Columns,
                "RHS" => Sec::Rhs,
                "BOUNDS" => Sec::Bounds,
                "QMATRIX" | "QUADOBJ" => Sec::Quad,
                "ENDATA" => Sec::End,
                other => return Err(parse_err(line, format!("unsupported section `{other}`"))),
            };
            continue;
        }
        match sec {
            Sec::Rows => {
                if toks.len() != 2 {
                    return Err(parse_err(line, "expected row type and name"));
                }
                let kind = match toks[0] {
                    "N" => RowKind::N,
                    "L" => RowKind::L,
                    "G" => RowKind::G,
                    "E" => RowKind::E,
                    other => return Err(parse_err(line, format!("unknown row type `{other}`"))),
                };
                model.rows.push(MpsRow {
                    name: toks[1].into(),
                    kind,
                });
            }
            Sec::Columns => {
                if toks.len() == 3 && toks[1] == "'MARKER'" {
                    integer = match toks[2] {
                        "'INTORG'" => true,
                        "'INTEND'" => false,
                        other => return Err(parse_err(line, format!("unknown marker `{other}`"))),
                    };
                    continue;
                }
                if toks.len() != 3 && toks.len() != 5 {
                    return Err(parse_err(line, "expected column, row, value [row, value]"));
                }
                let idx = *col_index.entry(toks[0].to_string()).or_insert_with(|| {
                    model.columns.push(MpsColumn {
                        name: toks[0].into(),
                        integer,
                        entries: Vec::new(),
                    });
                    model.columns.len() - 1
                });
                for pair in toks[1..].chunks(2) {
                    let v = parse_num(pair[1], line)?;
                    model.columns[idx].entries.push((pair[0].into(), v));
                }
            }
            Sec::Rhs => {
                if toks.len() != 3 && toks.len() != 5 {
                    return Err(parse_err(line, "expected set, row, value [row, value]"));
                }
                match &rhs_set {
                    Some(s) if s != toks[0] => return Err(parse_err(line, "multiple RHS sets")),
                    _ => rhs_set = Some(toks[0].into()),
                }
                for pair in toks[1..].chunks(2) {
                    model.rhs.push((pair[0].into(), parse_num(pair[1], line)?));
                }
            }
            Sec::Bounds => {
                let value = match toks.len() {
                    3 => None,
                    4 => Some(parse_num(toks[3], line)?),
                    _ => return Err(parse_err(line, "expected type, set, column [value]")),
                };
                model.bounds.push(MpsBound {
                    kind: toks[0].into(),
                    column: toks[2].into(),
                    value,
                });
            }
            Sec::Quad => {
                if toks.len() != 3 {
                    return Err(parse_err(line, "expected column, column, value"));
                }
                model
                    .quadratic
                    .push((toks[0].into(), toks[1].into(), parse_num(toks[2], line)?));
            }
            Sec::None | Sec::End => return Err(parse_err(line, "data outside a section")),
        }
    }
    if sec != Sec::End {
        return Err(parse_err(text.lines().count(), "missing ENDATA"));
    }
    Ok(model)
}

impl MpsModel {
    /// Objective value and largest constraint or bound violation at a point
    /// given by column name (missing columns are zero).
    pub fn evaluate(&self, point: &HashMap<String, f64>) -> (f64, f64) {
        let value = |c: &str| point.get(c).copied().unwrap_or(0.0);
        let mut activity: HashMap<&str, f64> = HashMap::new();
        for c in &self.columns {
            let x = value(&c.name);
            for (row, a) in &c.entries {
                *activity.entry(row.as_str()).or_insert(0.0) += a * x;
            }
        }
        let rhs: HashMap<&str, f64> = self.rhs.iter().map(|(r, v)| (r.as_str(), *v)).collect();
        let mut objective = 0.0;
        let mut violation: f64 = 0.0;
        for r in &self.rows {
            let a = activity.get(r.name.as_str()).copied().unwrap_or(0.0);
            let b = rhs.get(r.name.as_str()).copied().unwrap_or(0.0);
            match r.kind {
                RowKind::N => objective += a,
                RowKind::L => violation = violation.max(a - b),
                RowKind::G => violation = violation.max(b - a),
                RowKind::E => violation = violation.max((a - b).abs()),
            }
        }
        for (a, b, q) in &self.quadratic {
            objective += 0.5 * q * value(a) * value(b);
        }
        let mut lower: HashMap<&str, f64> = HashMap::new();
        let mut upper: HashMap<&str, f64> = HashMap::new();
        for b in &self.bounds {
            let v = b.value.unwrap_or(0.0);
            match b.kind.as_str() {
                "UP" => {
                    upper.insert(&b.column, v);
                }
                "LO" => {
                    lower.insert(&b.column, v);
                }
                "FX" => {
                    lower.insert(&b.column, v);
                    upper.insert(&b.column, v);
                }
                "FR" | "MI" => {
                    lower.insert(&b.column, f64::NEG_INFINITY);
                }
                "BV" => {
                    lower.insert(&b.column, 0.0);
                    upper.insert(&b.column, 1.0);
                }
                _ => {}
            }
        }
        for c in &self.columns {
            let x = value(&c.name);
            let lo = lower.get(c.name.as_str()).copied().unwrap_or(0.0);
            let hi = upper.get(c.name.as_str()).copied().unwrap_or(f64::INFINITY);
            violation = violation.max(lo - x).max(x - hi);
            if c.integer {
                violation = violation.max((x - x.round()).abs());
            }
        }
        (objective, violation)
    }
}

/// Write the model to `path` and its column map to `path` + `.json`.
pub fn save_mps(export: &MpsExport, path: &Path) -> Result<PathBuf, MpsError> {
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| MpsError::Io { path: p, source }
    };
    std::fs::write(path, write_mps(&export.model)).map_err(io(path))?;
    let mut sidecar = path.as_os_str().to_owned();
    sidecar.push(".json");
    let sidecar = PathBuf::from(sidecar);
    let json = serde_json::to_string_pretty(export).expect("export metadata serializes");
    std::fs::write(&sidecar, json + "\n").map_err(io(&sidecar))?;
    Ok(sidecar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::testutil::random_problem;
    use crate::trimmed::{trim_bruteforce, trim_s2};
    use nalgebra::dmatrix;

    fn tiny() -> RegressionProblem {
        RegressionProblem::new(dmatrix![1.0; 2.0], dmatrix![3.0; 5.0], false)
    }

    #[test]
    fn squared_model_shape() {
        let ex = export_mps(&tiny(), &TrimConfig::new(0.0), TrimModelKind::Squared);
        let model = &ex.model;
        assert_eq!(model.columns.iter().filter(|c| c.integer).count(), 2);
        assert_eq!(ex.variables.iter().filter(|v| v.role == "u").count(), 2);
        assert_eq!(model.quadratic.len(), 2);
        let constraints: Vec<_> = model.rows.iter().filter(|r| r.kind != RowKind::N).collect();
        assert_eq!(constraints.len(), 5);
        assert_eq!(constraints.iter().filter(|r| r.name.starts_with('R')).count(), 4);
        let card = model.rhs.iter().find(|(r, _)| r == "CARD").map(|p| p.1).unwrap_or(0.0);
        assert_eq!(card, 0.0);
    }

    #[test]
    fn round_trip_is_exact() {
        let prob = random_problem(7, 2, 2, 0.3, true, 1);
        for kind in [TrimModelKind::Squared, TrimModelKind::Absolute] {
            let ex = export_mps(&prob, &TrimConfig::new(0.3), kind);
            let text = write_mps(&ex.model);
            let back = parse_mps(&text).unwrap();
            assert_eq!(back, ex.model);
        }
    }

    #[test]
    fn optimal_point_is_feasible_with_matching_objective() {
        let mut prob = random_problem(10, 1, 1, 0.1, true, 6);
        prob.y[(4, 0)] += 3.0;
        let cfg = TrimConfig::new(0.1);
        let res = trim_bruteforce(&prob, &cfg).unwrap();
        let ex = export_mps(&prob, &cfg, TrimModelKind::Squared);
        let mut point = HashMap::new();
        point.insert("W0_0".to_string(), res.model.w[(0, 0)]);
        point.insert("B0".to_string(), res.model.b[0]);
        for i in 0..10 {
            point.insert(format!("Z{i}"), if res.model.z[i] { 1.0 } else { 0.0 });
            let r = res.model.diagnostics.residuals[(i, 0)];
            point.insert(format!("U{i}_0"), if res.model.z[i] { 0.0 } else { r.abs() });
        }
        let (obj, viol) = ex.model.evaluate(&point);
        assert!(viol <= 1e-9, "violation {viol}");
        assert!((obj - res.model.objective).abs() < 1e-9);

        let l1 = trim_s2(&prob, &cfg).unwrap();
        let ex = export_mps(&prob, &cfg, TrimModelKind::Absolute);
        let mut point = HashMap::new();
        point.insert("W0_0".to_string(), l1.model.w[(0, 0)]);
        point.insert("B0".to_string(), l1.model.b[0]);
        for i in 0..10 {
            let r = l1.model.diagnostics.residuals[(i, 0)];
            let z = l1.model.z[i];
            point.insert(format!("Z{i}"), if z { 1.0 } else { 0.0 });
            // y − aω = e⁺ − e⁻ − s
            let (s, e) = if z { (-r, 0.0) } else { (0.0, r) };
            point.insert(format!("S{i}_0"), s);
            point.insert(format!("EP{i}_0"), e.max(0.0));
            point.insert(format!("EN{i}_0"), (-e).max(0.0));
        }
        let (obj, viol) = ex.model.evaluate(&point);
        assert!(viol <= 1e-9, "violation {viol}");
        assert!((obj - l1.model.objective).abs() < 1e-9);
    }

    #[test]
    fn parser_reports_line_numbers() {
        let text = "NAME X\nROWS\n N  OBJ\n Q  R1\nENDATA\n";
        match parse_mps(text) {
            Err(MpsError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(parse_mps("NAME X\nROWS\n N  OBJ\n").is_err());
    }
}
