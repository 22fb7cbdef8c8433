//! Polar-form Newton–Raphson AC power flow.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netcase::{AdmittanceMatrix, BusKind, NetworkCase};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub p_inj: Vec<f64>,
    pub q_inj: Vec<f64>,
    pub iterations: usize,
    pub max_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {iterations} iterations (max mismatch {mismatch:e} p.u.)")]
    NonConvergence { iterations: usize, mismatch: f64 },
    #[error("singular Jacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("invalid power flow input: {0}")]
    InvalidInput(String),
}

/// `S_i = V_i * conj(sum_j Y_ij V_j)`, split into active and reactive parts.
pub fn injections_from_voltages(
    ybus: &AdmittanceMatrix,
    v_mag: &[f64],
    v_ang: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(v_mag.len(), ybus.n);
    assert_eq!(v_ang.len(), ybus.n);
    let v: Vec<Complex64> = v_mag
        .iter()
        .zip(v_ang)
        .map(|(&m, &a)| Complex64::from_polar(m, a))
        .collect();
    let mut p = vec![0.0; ybus.n];
    let mut q = vec![0.0; ybus.n];
    for i in 0..ybus.n {
        let mut current = Complex64::new(0.0, 0.0);
        for (j, vj) in v.iter().enumerate() {
            current += ybus.entries[(i, j)] * vj;
        }
        let s = v[i] * current.conj();
        p[i] = s.re;
        q[i] = s.im;
    }
    (p, q)
}

/// Solve the power flow from a flat start.
pub fn solve_newton(
    case: &NetworkCase,
    ybus: &AdmittanceMatrix,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution, PowerFlowError> {
    if !(tol > 0.0) {
        return Err(PowerFlowError::InvalidInput(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(PowerFlowError::InvalidInput("max_iter must be at least 1".into()));
    }
    let n = case.n_buses();
    if ybus.n != n {
        return Err(PowerFlowError::InvalidInput(format!(
            "admittance matrix has {} buses, case has {n}",
            ybus.n
        )));
    }
    let pvpq = case.non_slack();
    let pq = case.pq_buses();
    if pvpq.is_empty() {
        return Err(PowerFlowError::InvalidInput("case has no PV or PQ bus".into()));
    }

    let mut v_mag: Vec<f64> = case
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_setpoint })
        .collect();
    let mut v_ang = vec![0.0; n];
    let p_spec: Vec<f64> = case.buses.iter().map(|b| b.p_gen - b.p_load).collect();
    let q_spec: Vec<f64> = case.buses.iter().map(|b| -b.q_load).collect();

    let g = ybus.entries.map(|c| c.re);
    let b = ybus.entries.map(|c| c.im);
    let npv = pvpq.len();
    let dim = npv + pq.len();

    let mismatch = |p: &[f64], q: &[f64]| -> DVector<f64> {
        let mut f = DVector::zeros(dim);
        for (k, &i) in pvpq.iter().enumerate() {
            f[k] = p_spec[i] - p[i];
        }
        for (k, &i) in pq.iter().enumerate() {
            f[npv + k] = q_spec[i] - q[i];
        }
        f
    };

    let mut iterations = 0;
    loop {
        let (p, q) = injections_from_voltages(ybus, &v_mag, &v_ang);
        let f = mismatch(&p, &q);
        let worst = f.amax();
        if !worst.is_finite() {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                mismatch: worst,
            });
        }
        if worst <= tol {
            return Ok(PowerFlowSolution {
                v_mag,
                v_ang,
                p_inj: p,
                q_inj: q,
                iterations,
                max_mismatch: worst,
            });
        }
        if iterations == max_iter {
            return Err(PowerFlowError::NonConvergence {
                iterations,
                mismatch: worst,
            });
        }
        iterations += 1;

        let jac = jacobian(&g, &b, &v_mag, &v_ang, &p, &q, &pvpq, &pq);
        let step = jac
            .lu()
            .solve(&f)
            .ok_or(PowerFlowError::SingularJacobian {
                iteration: iterations,
            })?;
        if step.iter().any(|s| !s.is_finite()) {
            return Err(PowerFlowError::SingularJacobian {
                iteration: iterations,
            });
        }
        for (k, &i) in pvpq.iter().enumerate() {
            v_ang[i] += step[k];
        }
        for (k, &i) in pq.iter().enumerate() {
            v_mag[i] += step[npv + k];
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn jacobian(
    g: &DMatrix<f64>,
    b: &DMatrix<f64>,
    vm: &[f64],
    va: &[f64],
    p: &[f64],
    q: &[f64],
    pvpq: &[usize],
    pq: &[usize],
) -> DMatrix<f64> {
    let npv = pvpq.len();
    let dim = npv + pq.len();
    let mut jac = DMatrix::zeros(dim, dim);

    // Rows: P at pvpq, then Q at pq. Columns: angle at pvpq, then magnitude at pq.
    let d_angle = |i: usize, j: usize, active: bool| -> f64 {
        if i == j {
            if active {
                -q[i] - b[(i, i)] * vm[i] * vm[i]
            } else {
                p[i] - g[(i, i)] * vm[i] * vm[i]
            }
        } else {
            let t = va[i] - va[j];
            let (s, c) = t.sin_cos();
            if active {
                vm[i] * vm[j] * (g[(i, j)] * s - b[(i, j)] * c)
            } else {
                -vm[i] * vm[j] * (g[(i, j)] * c + b[(i, j)] * s)
            }
        }
    };
    let d_mag = |i: usize, j: usize, active: bool| -> f64 {
        if i == j {
            if active {
                p[i] / vm[i] + g[(i, i)] * vm[i]
            } else {
                q[i] / vm[i] - b[(i, i)] * vm[i]
            }
        } else {
            let t = va[i] - va[j];
            let (s, c) = t.sin_cos();
            if active {
                vm[i] * (g[(i, j)] * c + b[(i, j)] * s)
            } else {
                vm[i] * (g[(i, j)] * s - b[(i, j)] * c)
            }
        }
    };

    for (r, &i) in pvpq.iter().enumerate() {
        for (c, &j) in pvpq.iter().enumerate() {
            jac[(r, c)] = d_angle(i, j, true);
        }
        for (c, &j) in pq.iter().enumerate() {
            jac[(r, npv + c)] = d_mag(i, j, true);
        }
    }
    for (r, &i) in pq.iter().enumerate() {
        for (c, &j) in pvpq.iter().enumerate() {
            jac[(npv + r, c)] = d_angle(i, j, false);
        }
        for (c, &j) in pq.iter().enumerate() {
            jac[(npv + r, npv + c)] = d_mag(i, j, false);
        }
    }
    jac
}
