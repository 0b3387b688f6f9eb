//! AC power flow in polar coordinates.
//!
//! The solver runs a full Newton-Raphson iteration on the mismatch
//! `S_spec - diag(V) conj(Y V)` with every non-slack bus treated as a PQ
//! node. Distributed generation enters as negative load, so no PV buses
//! exist and the state is `(theta, V)` at all non-slack buses. The slack bus
//! holds the external-grid voltage magnitude at angle zero and closes the
//! active and reactive balance.

pub mod deriv;

mod point;
mod solution;

pub use point::{OperatingPoint, PqMw};
pub use solution::{BranchFlow, BusVoltage, PowerFlowSolution};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::network::{build_admittance, AdmittanceMatrix, Network};

/// Newton-Raphson controls.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Convergence tolerance on the largest absolute mismatch (pu).
    pub tol_pu: f64,
    /// Iteration limit before the case is declared diverged.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_pu: 1e-8,
            max_iter: 30,
        }
    }
}

/// Complex power mismatch `S_inj - diag(V) conj(Y V)` per matrix row (pu).
///
/// This single function defines power balance for the Newton solver, the
/// redispatch optimizer and every verification step.
pub fn power_mismatch(
    adm: &AdmittanceMatrix,
    v: &[Complex64],
    s_inj_pu: &[Complex64],
) -> Vec<Complex64> {
    let n = adm.n();
    debug_assert_eq!(v.len(), n);
    debug_assert_eq!(s_inj_pu.len(), n);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..n {
            acc += adm.y[(i, j)] * v[j];
        }
        out.push(s_inj_pu[i] - v[i] * acc.conj());
    }
    out
}

/// Raw Newton solve: returns the complex voltage profile over the matrix
/// rows plus the per-iteration mismatch history.
pub(crate) fn newton_voltages(
    net: &Network,
    adm: &AdmittanceMatrix,
    s_inj_pu: &[Complex64],
    opts: &SolverOptions,
) -> Result<(Vec<Complex64>, Vec<f64>)> {
    let n = adm.n();
    let slack = adm.slack_row;
    // Flat start, slack magnitude from the external grid.
    let mut vm = vec![1.0_f64; n];
    let mut va = vec![0.0_f64; n];
    vm[slack] = net.ext_grid.vm_pu;

    // Unknown ordering: theta then vm over the non-slack rows.
    let free: Vec<usize> = (0..n).filter(|&i| i != slack).collect();
    let nf = free.len();

    let mut history = Vec::new();
    for iteration in 0..=opts.max_iter {
        let v: Vec<Complex64> = vm
            .iter()
            .zip(&va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect();
        let mis = power_mismatch(adm, &v, s_inj_pu);
        let max_mis = free
            .iter()
            .map(|&i| mis[i].re.abs().max(mis[i].im.abs()))
            .fold(0.0_f64, f64::max);
        history.push(max_mis);

        if !max_mis.is_finite() {
            return Err(Error::Diverged {
                iterations: iteration,
                last_mismatch: max_mis,
            });
        }
        if max_mis <= opts.tol_pu {
            return Ok((v, history));
        }
        if iteration == opts.max_iter {
            return Err(Error::Diverged {
                iterations: iteration,
                last_mismatch: max_mis,
            });
        }

        let (ds_dva, ds_dvm) = deriv::ds_dv(&adm.y, &v);
        // J = [dP/dth dP/dvm; dQ/dth dQ/dvm] over the free rows.
        let mut jac = DMatrix::zeros(2 * nf, 2 * nf);
        let mut rhs = DVector::zeros(2 * nf);
        for (r, &i) in free.iter().enumerate() {
            rhs[r] = mis[i].re;
            rhs[nf + r] = mis[i].im;
            for (c, &j) in free.iter().enumerate() {
                jac[(r, c)] = ds_dva[(i, j)].re;
                jac[(r, nf + c)] = ds_dvm[(i, j)].re;
                jac[(nf + r, c)] = ds_dva[(i, j)].im;
                jac[(nf + r, nf + c)] = ds_dvm[(i, j)].im;
            }
        }

        let lu = jac.lu();
        let Some(dx) = lu.solve(&rhs) else {
            return Err(Error::SingularSystem { iteration });
        };
        for (r, &i) in free.iter().enumerate() {
            va[i] += dx[r];
            vm[i] += dx[nf + r];
        }
        if vm.iter().any(|&m| !(m.is_finite() && m > 0.0)) {
            return Err(Error::Diverged {
                iterations: iteration + 1,
                last_mismatch: max_mis,
            });
        }
    }
    unreachable!("loop returns or errors before falling through")
}

/// Solves the power flow for one operating point, building the admittance
/// matrix on the fly. Prefer [`solve_with_admittance`] inside sweeps.
pub fn solve_power_flow(
    net: &Network,
    point: &OperatingPoint,
    opts: &SolverOptions,
) -> Result<PowerFlowSolution> {
    let adm = build_admittance(net)?;
    solve_with_admittance(net, &adm, point, opts)
}

/// Solves the power flow against a prebuilt admittance matrix.
pub fn solve_with_admittance(
    net: &Network,
    adm: &AdmittanceMatrix,
    point: &OperatingPoint,
    opts: &SolverOptions,
) -> Result<PowerFlowSolution> {
    point.validate(net)?;
    let s_inj = point.bus_injections_pu(net, adm);
    let (v, history) = newton_voltages(net, adm, &s_inj, opts)?;
    Ok(solution::assemble(net, adm, point, &s_inj, &v, &history))
}
