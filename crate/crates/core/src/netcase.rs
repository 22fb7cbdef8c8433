//! Network case files and the nodal admittance matrix.
//!
//! The case format is line oriented:
//!
//! ```text
//! # comment
//! BASE 100
//! BUS <id> <S|PV|PQ> <p_load> <q_load> <p_gen> <v_set>
//! BRANCH <from> <to> <r> <x> <b> <tap>
//! END
//! ```
//!
//! Quantities are per-unit on `BASE`. Bus ids are arbitrary integers; they are
//! re-indexed to `0..n` in file order and the original id is kept on each bus.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

impl BusKind {
    fn code(self) -> &'static str {
        match self {
            BusKind::Slack => "S",
            BusKind::Pv => "PV",
            BusKind::Pq => "PQ",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    /// Id as written in the case file.
    pub id: i64,
    pub kind: BusKind,
    pub p_load: f64,
    pub q_load: f64,
    pub p_gen: f64,
    pub v_setpoint: f64,
}

/// A π-model branch between two internal bus indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub r: f64,
    pub x: f64,
    pub b_shunt: f64,
    pub tap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    /// Internal index of the slack bus.
    pub slack_bus: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CaseError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("duplicate bus id {id} at line {line}")]
    DuplicateBus { id: i64, line: usize },
    #[error("missing slack bus")]
    MissingSlack,
    #[error("more than one slack bus (ids {first} and {second})")]
    MultipleSlack { first: i64, second: i64 },
    #[error("dangling endpoint: branch at line {line} references unknown bus {bus}")]
    DanglingEndpoint { line: usize, bus: i64 },
    #[error("invalid value at line {line}: {message}")]
    InvalidValue { line: usize, message: String },
}

impl CaseError {
    /// Stable machine-readable tag for each error class.
    pub fn kind(&self) -> &'static str {
        match self {
            CaseError::Syntax { .. } => "syntax",
            CaseError::DuplicateBus { .. } => "duplicate_bus",
            CaseError::MissingSlack => "missing_slack",
            CaseError::MultipleSlack { .. } => "multiple_slack",
            CaseError::DanglingEndpoint { .. } => "dangling_endpoint",
            CaseError::InvalidValue { .. } => "invalid_value",
        }
    }
}

impl NetworkCase {
    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    /// Internal index of an external bus id.
    pub fn index_of(&self, id: i64) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Internal indices of every non-slack bus, in order.
    pub fn non_slack(&self) -> Vec<usize> {
        (0..self.n_buses()).filter(|&i| i != self.slack_bus).collect()
    }

    pub fn pq_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .enumerate()
            .filter(|(_, b)| b.kind == BusKind::Pq)
            .map(|(i, _)| i)
            .collect()
    }
}

struct Tokens<'a> {
    line_no: usize,
    line: &'a str,
    items: Vec<(usize, &'a str)>,
}

impl<'a> Tokens<'a> {
    fn new(line_no: usize, line: &'a str) -> Self {
        let mut items = Vec::new();
        let mut start = None;
        for (pos, ch) in line.char_indices() {
            if ch.is_whitespace() {
                if let Some(s) = start.take() {
                    items.push((s, &line[s..pos]));
                }
            } else if start.is_none() {
                start = Some(pos);
            }
        }
        if let Some(s) = start {
            items.push((s, &line[s..]));
        }
        Tokens {
            line_no,
            line,
            items,
        }
    }

    fn column(&self, byte: usize) -> usize {
        self.line[..byte].chars().count() + 1
    }

    fn syntax(&self, byte: usize, message: impl Into<String>) -> CaseError {
        CaseError::Syntax {
            line: self.line_no,
            column: self.column(byte),
            message: message.into(),
        }
    }

    fn expect_len(&self, n: usize) -> Result<(), CaseError> {
        if self.items.len() < n {
            let end = self.line.trim_end().len();
            return Err(self.syntax(
                end,
                format!(
                    "{} expects {} fields, found {}",
                    self.items[0].1,
                    n - 1,
                    self.items.len() - 1
                ),
            ));
        }
        if self.items.len() > n {
            let (pos, tok) = self.items[n];
            return Err(self.syntax(pos, format!("unexpected trailing field '{tok}'")));
        }
        Ok(())
    }

    fn real(&self, idx: usize) -> Result<f64, CaseError> {
        let (pos, tok) = self.items[idx];
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.syntax(pos, format!("expected a number, found '{tok}'"))),
        }
    }

    fn int(&self, idx: usize) -> Result<i64, CaseError> {
        let (pos, tok) = self.items[idx];
        tok.parse::<i64>()
            .map_err(|_| self.syntax(pos, format!("expected an integer bus id, found '{tok}'")))
    }
}

/// Parse a case file.
pub fn parse_case(text: &str) -> Result<NetworkCase, CaseError> {
    let mut base = None;
    let mut buses: Vec<Bus> = Vec::new();
    let mut raw_branches: Vec<(usize, i64, i64, f64, f64, f64, f64)> = Vec::new();
    let mut index: HashMap<i64, usize> = HashMap::new();
    let mut ended = false;
    let mut last_line = 0;

    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        last_line = line_no;
        let content = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let toks = Tokens::new(line_no, content);
        if toks.items.is_empty() {
            continue;
        }
        let (pos, keyword) = toks.items[0];
        if ended {
            return Err(toks.syntax(pos, "content after END"));
        }
        match keyword.to_ascii_uppercase().as_str() {
            "BASE" => {
                toks.expect_len(2)?;
                if base.is_some() {
                    return Err(toks.syntax(pos, "BASE given twice"));
                }
                let mva = toks.real(1)?;
                if mva <= 0.0 {
                    return Err(CaseError::InvalidValue {
                        line: line_no,
                        message: format!("base MVA must be positive, got {mva}"),
                    });
                }
                base = Some(mva);
            }
            "BUS" => {
                toks.expect_len(7)?;
                let id = toks.int(1)?;
                let (kpos, ktok) = toks.items[2];
                let kind = match ktok.to_ascii_uppercase().as_str() {
                    "S" => BusKind::Slack,
                    "PV" => BusKind::Pv,
                    "PQ" => BusKind::Pq,
                    _ => {
                        return Err(toks.syntax(
                            kpos,
                            format!("bus kind must be S, PV or PQ, found '{ktok}'"),
                        ))
                    }
                };
                let bus = Bus {
                    id,
                    kind,
                    p_load: toks.real(3)?,
                    q_load: toks.real(4)?,
                    p_gen: toks.real(5)?,
                    v_setpoint: toks.real(6)?,
                };
                if kind != BusKind::Pq && bus.v_setpoint <= 0.0 {
                    return Err(CaseError::InvalidValue {
                        line: line_no,
                        message: format!("voltage setpoint of bus {id} must be positive"),
                    });
                }
                if index.insert(id, buses.len()).is_some() {
                    return Err(CaseError::DuplicateBus { id, line: line_no });
                }
                buses.push(bus);
            }
            "BRANCH" => {
                toks.expect_len(7)?;
                let from = toks.int(1)?;
                let to = toks.int(2)?;
                let (r, x, b, tap) = (toks.real(3)?, toks.real(4)?, toks.real(5)?, toks.real(6)?);
                if r == 0.0 && x == 0.0 {
                    return Err(CaseError::InvalidValue {
                        line: line_no,
                        message: "branch impedance is zero".into(),
                    });
                }
                if tap <= 0.0 {
                    return Err(CaseError::InvalidValue {
                        line: line_no,
                        message: format!("tap ratio must be positive, got {tap}"),
                    });
                }
                raw_branches.push((line_no, from, to, r, x, b, tap));
            }
            "END" => {
                toks.expect_len(1)?;
                ended = true;
            }
            _ => return Err(toks.syntax(pos, format!("unknown record '{keyword}'"))),
        }
    }

    if !ended {
        return Err(CaseError::Syntax {
            line: last_line + 1,
            column: 1,
            message: "missing END".into(),
        });
    }
    let base_mva = base.ok_or(CaseError::Syntax {
        line: 1,
        column: 1,
        message: "missing BASE record".into(),
    })?;

    let mut slack: Option<usize> = None;
    for (i, b) in buses.iter().enumerate() {
        if b.kind == BusKind::Slack {
            if let Some(first) = slack {
                return Err(CaseError::MultipleSlack {
                    first: buses[first].id,
                    second: b.id,
                });
            }
            slack = Some(i);
        }
    }
    let slack_bus = slack.ok_or(CaseError::MissingSlack)?;

    let mut branches = Vec::with_capacity(raw_branches.len());
    for (line, from, to, r, x, b_shunt, tap) in raw_branches {
        let f = *index
            .get(&from)
            .ok_or(CaseError::DanglingEndpoint { line, bus: from })?;
        let t = *index
            .get(&to)
            .ok_or(CaseError::DanglingEndpoint { line, bus: to })?;
        branches.push(Branch {
            from: f,
            to: t,
            r,
            x,
            b_shunt,
            tap,
        });
    }

    Ok(NetworkCase {
        base_mva,
        buses,
        branches,
        slack_bus,
    })
}

/// Write a case back to the text format. Floats use the shortest
/// representation that parses back to the same value.
pub fn serialize_case(case: &NetworkCase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "BASE {}", case.base_mva);
    for b in &case.buses {
        let _ = writeln!(
            out,
            "BUS {} {} {} {} {} {}",
            b.id,
            b.kind.code(),
            b.p_load,
            b.q_load,
            b.p_gen,
            b.v_setpoint
        );
    }
    for br in &case.branches {
        let _ = writeln!(
            out,
            "BRANCH {} {} {} {} {} {}",
            case.buses[br.from].id, case.buses[br.to].id, br.r, br.x, br.b_shunt, br.tap
        );
    }
    out.push_str("END\n");
    out
}

/// Dense complex admittance matrix in per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub n: usize,
    pub entries: DMatrix<Complex64>,
}

/// Assemble the nodal admittance matrix from π-model branches.
pub fn build_ybus(case: &NetworkCase) -> AdmittanceMatrix {
    let n = case.n_buses();
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in &case.branches {
        let series = Complex64::new(1.0, 0.0) / Complex64::new(br.r, br.x);
        let charging = Complex64::new(0.0, br.b_shunt / 2.0);
        let (f, t) = (br.from, br.to);
        y[(f, f)] += (series + charging) / (br.tap * br.tap);
        y[(t, t)] += series + charging;
        y[(f, t)] -= series / br.tap;
        y[(t, f)] -= series / br.tap;
    }
    AdmittanceMatrix { n, entries: y }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_BUS: &str = "BASE 100\nBUS 1 S 0 0 0 1.0\nBUS 2 PQ 0 0 0 1.0\nBRANCH 1 2 0 0.1 0 1\nEND\n";

    #[test]
    fn minimal_two_bus() {
        let case = parse_case(TWO_BUS).unwrap();
        assert_eq!(case.n_buses(), 2);
        assert_eq!(case.branches.len(), 1);
        assert_eq!(case.slack_bus, 0);
    }

    #[test]
    fn two_bus_ybus() {
        let y = build_ybus(&parse_case(TWO_BUS).unwrap());
        let expect = [[-10.0, 10.0], [10.0, -10.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((y.entries[(i, j)] - Complex64::new(0.0, expect[i][j])).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn dangling_endpoint() {
        let text = TWO_BUS.replace("BRANCH 1 2", "BRANCH 1 7");
        let err = parse_case(&text).unwrap_err();
        assert_eq!(err.kind(), "dangling_endpoint");
        assert_eq!(err, CaseError::DanglingEndpoint { line: 4, bus: 7 });
    }

    #[test]
    fn duplicate_and_missing_slack() {
        let dup = TWO_BUS.replace("BUS 2 PQ", "BUS 1 PQ");
        assert_eq!(parse_case(&dup).unwrap_err().kind(), "duplicate_bus");
        let no_slack = TWO_BUS.replace("BUS 1 S", "BUS 1 PV");
        assert_eq!(parse_case(&no_slack).unwrap_err(), CaseError::MissingSlack);
    }

    #[test]
    fn syntax_error_reports_column() {
        let bad = TWO_BUS.replace("0 0.1 0 1", "0 abc 0 1");
        match parse_case(&bad).unwrap_err() {
            CaseError::Syntax { line, column, .. } => {
                assert_eq!(line, 4);
                assert_eq!(column, 14);
            }
            other => panic!("unexpected {other:?}"),
        }
        let missing_end = TWO_BUS.replace("END\n", "");
        assert_eq!(parse_case(&missing_end).unwrap_err().kind(), "syntax");
    }

    #[test]
    fn rejects_zero_impedance_and_bad_tap() {
        let zero = TWO_BUS.replace("0 0.1 0 1", "0 0 0 1");
        assert_eq!(parse_case(&zero).unwrap_err().kind(), "invalid_value");
        let tap = TWO_BUS.replace("0 0.1 0 1", "0 0.1 0 0");
        assert_eq!(parse_case(&tap).unwrap_err().kind(), "invalid_value");
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = format!("# header\n\n{}", TWO_BUS.replace("BUS 2 PQ 0 0 0 1.0", "BUS 2 PQ 0 0 0 1.0  # load bus"));
        assert_eq!(parse_case(&text).unwrap().n_buses(), 2);
        let after_end = format!("{TWO_BUS}BUS 3 PQ 0 0 0 1\n");
        assert_eq!(parse_case(&after_end).unwrap_err().kind(), "syntax");
    }

    #[test]
    fn no_branches_gives_zero_matrix() {
        let case = parse_case("BASE 100\nBUS 1 S 0 0 0 1\nBUS 2 PQ 0.1 0 0 1\nEND\n").unwrap();
        let y = build_ybus(&case);
        assert!(y.entries.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn triangle_rows_sum_to_zero() {
        let text = "BASE 100\nBUS 1 S 0 0 0 1\nBUS 2 PQ 0 0 0 1\nBUS 3 PQ 0 0 0 1\n\
                    BRANCH 1 2 0.01 0.1 0 1\nBRANCH 2 3 0.01 0.1 0 1\nBRANCH 3 1 0.01 0.1 0 1\nEND\n";
        let y = build_ybus(&parse_case(text).unwrap());
        // Oracle: each branch adds +y to two diagonals and -y to two
        // off-diagonals, so every row cancels.
        let series = Complex64::new(1.0, 0.0) / Complex64::new(0.01, 0.1);
        for i in 0..3 {
            let sum: Complex64 = (0..3).map(|j| y.entries[(i, j)]).sum();
            assert!(sum.norm() < 1e-12);
            assert!((y.entries[(i, i)] - 2.0 * series).norm() < 1e-12);
        }
    }

    #[test]
    fn off_nominal_tap_breaks_symmetry_only_on_diagonal() {
        let text = "BASE 100\nBUS 1 S 0 0 0 1\nBUS 2 PQ 0 0 0 1\nBRANCH 1 2 0 0.1 0 0.95\nEND\n";
        let y = build_ybus(&parse_case(text).unwrap());
        let series = Complex64::new(0.0, -10.0);
        assert!((y.entries[(0, 0)] - series / (0.95 * 0.95)).norm() < 1e-12);
        assert!((y.entries[(1, 1)] - series).norm() < 1e-12);
        assert!((y.entries[(0, 1)] + series / 0.95).norm() < 1e-12);
    }
}
