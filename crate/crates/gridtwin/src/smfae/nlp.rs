//! Dense primal-dual interior-point solver for smooth nonlinear programs:
//! `min f(x)` subject to `g(x) = 0`, `h(x) <= 0` and `xmin <= x <= xmax`.
//!
//! The method keeps slacks `z > 0` with `h(x) + z = 0` and multipliers
//! `mu > 0`, reduces the perturbed KKT system to a symmetric saddle system
//! in `(dx, dlambda)` and recovers `(dz, dmu)` by substitution. Primal and
//! dual step lengths are cut back to keep `z` and `mu` strictly positive.
//! Problems here have a few hundred variables at most, so all linear
//! algebra is dense.
//!
//! Box bounds are folded in as inequality rows internally; their structure
//! (one nonzero per row) is exploited when assembling the reduced system.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Problem callbacks. Jacobians are row-major: one row per constraint.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;

    /// `(xmin, xmax)`; use `f64::INFINITY` for absent bounds.
    fn bounds(&self) -> (DVector<f64>, DVector<f64>);

    /// Objective value and gradient.
    fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>);

    /// Equality residuals `g(x)` and Jacobian (`neq x nx`).
    fn equalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);

    /// Nonlinear inequality values `h(x)` (feasible when `<= 0`) and
    /// Jacobian (`nh x nx`). Box bounds must not be duplicated here.
    fn inequalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>);

    /// Hessian of `f + lam' g + mu' h` at `x`.
    fn lagrangian_hessian(
        &self,
        x: &DVector<f64>,
        lam: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlpOptions {
    pub feastol: f64,
    pub gradtol: f64,
    pub comptol: f64,
    pub costtol: f64,
    pub max_iter: usize,
    /// Fraction-to-boundary coefficient.
    pub xi: f64,
    /// Centering parameter for the barrier update.
    pub sigma: f64,
    /// Initial slack magnitude.
    pub z0: f64,
}

impl Default for NlpOptions {
    fn default() -> Self {
        NlpOptions {
            feastol: 1e-8,
            gradtol: 1e-6,
            comptol: 1e-7,
            costtol: 1e-9,
            max_iter: 150,
            xi: 0.99995,
            sigma: 0.1,
            z0: 1.0,
        }
    }
}

/// Width of the safeguard band keeping `mu[k]` near `gamma / z[k]`.
const KAPPA_SIGMA: f64 = 1e10;

/// Lower bound on the barrier parameter while iterating; complementarity is
/// still measured against the unfloored products.
const GAMMA_FLOOR: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NlpStatus {
    Converged,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct NlpSolution {
    pub x: DVector<f64>,
    pub f: f64,
    /// Equality multipliers.
    pub lam: DVector<f64>,
    /// Multipliers of the nonlinear inequality rows only.
    pub mu: DVector<f64>,
    pub iterations: usize,
    pub status: NlpStatus,
    pub feascond: f64,
    pub gradcond: f64,
    pub compcond: f64,
    /// Largest equality residual |g|_inf at the final point.
    pub max_eq_residual: f64,
    /// Largest nonlinear inequality value max(h) at the final point.
    pub max_ineq_value: f64,
}

/// Finite-bound rows derived from the box constraints.
struct BoxRows {
    /// `(variable, bound)` for rows `x_i - ub_i <= 0`.
    upper: Vec<(usize, f64)>,
    /// `(variable, bound)` for rows `lb_i - x_i <= 0`.
    lower: Vec<(usize, f64)>,
}

impl BoxRows {
    fn new(xmin: &DVector<f64>, xmax: &DVector<f64>) -> Self {
        let upper = xmax
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| (i, *v))
            .collect();
        let lower = xmin
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, v)| (i, *v))
            .collect();
        BoxRows { upper, lower }
    }

    fn len(&self) -> usize {
        self.upper.len() + self.lower.len()
    }

    /// Values of the box rows at `x`, appended after `nh` nonlinear rows.
    fn fill(&self, x: &DVector<f64>, h: &mut DVector<f64>, nh: usize) {
        for (k, &(i, ub)) in self.upper.iter().enumerate() {
            h[nh + k] = x[i] - ub;
        }
        let off = nh + self.upper.len();
        for (k, &(i, lb)) in self.lower.iter().enumerate() {
            h[off + k] = lb - x[i];
        }
    }

    /// `out += dh_box' * w` restricted to the box rows of `w`.
    fn add_jt_mul(&self, w: &DVector<f64>, nh: usize, out: &mut DVector<f64>) {
        for (k, &(i, _)) in self.upper.iter().enumerate() {
            out[i] += w[nh + k];
        }
        let off = nh + self.upper.len();
        for (k, &(i, _)) in self.lower.iter().enumerate() {
            out[i] -= w[off + k];
        }
    }

    /// `out[nh..] = dh_box * dx` for the box rows.
    fn j_mul(&self, dx: &DVector<f64>, nh: usize, out: &mut DVector<f64>) {
        for (k, &(i, _)) in self.upper.iter().enumerate() {
            out[nh + k] = dx[i];
        }
        let off = nh + self.upper.len();
        for (k, &(i, _)) in self.lower.iter().enumerate() {
            out[off + k] = -dx[i];
        }
    }

    /// `(variable, gradient entry)` of box row `r` counted from `nh`.
    fn entry(&self, r: usize, nh: usize) -> (usize, f64) {
        let k = r - nh;
        if k < self.upper.len() {
            (self.upper[k].0, 1.0)
        } else {
            (self.lower[k - self.upper.len()].0, -1.0)
        }
    }
}

/// Recovers bounded multipliers at a primal-feasible point by clipped least
/// squares on the stationarity system over the active rows. The interior
/// trajectory produces degenerate multiplier estimates when active-set
/// gradients are linearly dependent; stationarity only requires that some
/// nonnegative multipliers close the gradient, so they are reconstructed
/// directly. Returns `(lam, mu)` over all `niq` rows, or None when no
/// certificate was found.
fn polish_duals(
    df: &DVector<f64>,
    dg: &DMatrix<f64>,
    dh: &DMatrix<f64>,
    boxes: &BoxRows,
    h_full: &DVector<f64>,
    nh: usize,
) -> Option<(DVector<f64>, DVector<f64>)> {
    const ACTIVE_TOL: f64 = 1e-7;
    let nx = df.len();
    let neq = dg.nrows();
    let niq = h_full.len();
    let mut active: Vec<usize> = (0..niq).filter(|&k| h_full[k] >= -ACTIVE_TOL).collect();
    let rhs = -df.clone();

    for _ in 0..6 {
        let cols = neq + active.len();
        let mut basis = DMatrix::zeros(nx, cols);
        for r in 0..neq {
            for c in 0..nx {
                basis[(c, r)] = dg[(r, c)];
            }
        }
        for (j, &k) in active.iter().enumerate() {
            if k < nh {
                for c in 0..nx {
                    basis[(c, neq + j)] = dh[(k, c)];
                }
            } else {
                let (i, sign) = boxes.entry(k, nh);
                basis[(i, neq + j)] = sign;
            }
        }
        let y = basis.svd(true, true).solve(&rhs, 1e-12).ok()?;

        let negatives: Vec<usize> = active
            .iter()
            .enumerate()
            .filter(|&(j, _)| y[neq + j] < -1e-9)
            .map(|(j, _)| j)
            .collect();
        if negatives.is_empty() {
            let lam = DVector::from_fn(neq, |r, _| y[r]);
            let mut mu = DVector::zeros(niq);
            for (j, &k) in active.iter().enumerate() {
                mu[k] = y[neq + j].max(0.0);
            }
            return Some((lam, mu));
        }
        let mut j = 0usize;
        active.retain(|_| {
            let drop = negatives.contains(&j);
            j += 1;
            !drop
        });
    }
    None
}

/// Runs the interior-point iteration from `x0`.
pub fn solve_nlp(problem: &dyn NlpProblem, x0: &DVector<f64>, opts: &NlpOptions) -> Result<NlpSolution> {
    let nx = problem.num_vars();
    assert_eq!(x0.len(), nx, "starting point has wrong dimension");
    let (xmin, xmax) = problem.bounds();
    let boxes = BoxRows::new(&xmin, &xmax);

    let mut x = x0.clone();
    // Keep the start inside the box; the iteration itself maintains no such
    // guarantee for x (only z and mu stay positive), but starting far
    // outside makes the first barrier steps erratic.
    for i in 0..nx {
        x[i] = x[i].clamp(xmin[i], xmax[i]);
    }

    let (g0, _) = problem.equalities(&x);
    let neq = g0.len();
    let (h0, _) = problem.inequalities(&x);
    let nh = h0.len();
    let niq = nh + boxes.len();

    let mut lam = DVector::zeros(neq);
    let mut mu = DVector::from_element(niq, opts.z0);
    let mut z = DVector::from_element(niq, opts.z0);
    let mut gamma = 1.0_f64;

    let mut h_full = DVector::zeros(niq);
    {
        for k in 0..nh {
            h_full[k] = h0[k];
        }
        boxes.fill(&x, &mut h_full, nh);
        for k in 0..niq {
            if h_full[k] < -opts.z0 {
                z[k] = -h_full[k];
            }
            if gamma / z[k] > opts.z0 {
                mu[k] = gamma / z[k];
            }
        }
    }

    let (mut f, mut df) = problem.objective(&x);
    let mut f0 = f;

    let mut status = NlpStatus::MaxIterations;
    let mut iterations = 0;
    let mut feascond = f64::NAN;
    let mut gradcond = f64::NAN;
    let mut compcond = f64::NAN;
    let mut last_g = g0;
    let mut last_h = h0;
    let mut prev_gradcond = f64::INFINITY;
    let mut grad_stalled = 0usize;

    for iter in 0..=opts.max_iter {
        iterations = iter;
        let (g, dg) = problem.equalities(&x);
        let (h, dh) = problem.inequalities(&x);
        for k in 0..nh {
            h_full[k] = h[k];
        }
        boxes.fill(&x, &mut h_full, nh);

        // Lx = df + dg' lam + dh' mu  (box rows folded in separately).
        let mut lx = df.clone();
        lx.gemv_tr(1.0, &dg, &lam, 1.0);
        if nh > 0 {
            let mu_nl = DVector::from_fn(nh, |k, _| mu[k]);
            lx.gemv_tr(1.0, &dh, &mu_nl, 1.0);
        }
        boxes.add_jt_mul(&mu, nh, &mut lx);

        let norm_x = x.amax().max(z.amax());
        let norm_mult = if neq + niq == 0 {
            0.0
        } else {
            lam.amax().max(if niq > 0 { mu.amax() } else { 0.0 })
        };
        let max_h = if niq > 0 { h_full.max() } else { 0.0 };
        let norm_g = if neq > 0 { g.amax() } else { 0.0 };
        feascond = norm_g.max(max_h) / (1.0 + norm_x);
        gradcond = lx.amax() / (1.0 + norm_mult);
        compcond = if niq > 0 { z.dot(&mu) / (1.0 + x.amax()) } else { 0.0 };
        let costcond = (f - f0).abs() / (1.0 + f0.abs());

        if !(feascond.is_finite() && gradcond.is_finite() && compcond.is_finite())
            || compcond > 1e10
        {
            status = NlpStatus::NumericalFailure;
            last_g = g;
            last_h = h;
            break;
        }
        if feascond < opts.feastol
            && gradcond < opts.gradtol
            && compcond < opts.comptol
            && costcond < opts.costtol
        {
            status = NlpStatus::Converged;
            last_g = g;
            last_h = h;
            break;
        }

        // On degenerate active sets the primal converges while the trajectory
        // multipliers cycle or drift without closing the gradient. Once the
        // primal is done and gradcond has stopped moving, reconstruct the
        // multipliers directly and accept the point if they certify it.
        if (gradcond - prev_gradcond).abs() <= 0.25 * gradcond {
            grad_stalled += 1;
        } else {
            grad_stalled = 0;
        }
        prev_gradcond = gradcond;
        let primal_done =
            feascond < opts.feastol && compcond < opts.comptol && costcond < opts.costtol;
        if primal_done && (grad_stalled >= 5 || iter == opts.max_iter) {
            if let Some((lam_p, mu_p)) = polish_duals(&df, &dg, &dh, &boxes, &h_full, nh) {
                let mut lx_p = df.clone();
                lx_p.gemv_tr(1.0, &dg, &lam_p, 1.0);
                if nh > 0 {
                    let mu_nl = DVector::from_fn(nh, |k, _| mu_p[k]);
                    lx_p.gemv_tr(1.0, &dh, &mu_nl, 1.0);
                }
                boxes.add_jt_mul(&mu_p, nh, &mut lx_p);
                let norm_p = if neq + niq == 0 {
                    0.0
                } else {
                    lam_p.amax().max(if niq > 0 { mu_p.amax() } else { 0.0 })
                };
                let polished = lx_p.amax() / (1.0 + norm_p);
                if polished < opts.gradtol {
                    lam = lam_p;
                    mu = mu_p;
                    gradcond = polished;
                    status = NlpStatus::Converged;
                    last_g = g;
                    last_h = h;
                    break;
                }
            }
        }
        if iter == opts.max_iter {
            last_g = g;
            last_h = h;
            break;
        }

        // Reduced system: M dx + dg' dlam = -N, dg dx = -g.
        let mu_nl = DVector::from_fn(nh, |k, _| mu[k]);
        let mut m = problem.lagrangian_hessian(&x, &lam, &mu_nl);
        let mut n_vec = lx.clone();

        if nh > 0 {
            // dh' diag(mu/z) dh and dh' (1/z)(mu h + gamma e) over nonlinear rows.
            let mut scaled = DMatrix::zeros(nh, nx);
            for k in 0..nh {
                let w = mu[k] / z[k];
                for c in 0..nx {
                    scaled[(k, c)] = dh[(k, c)] * w;
                }
            }
            m.gemm_tr(1.0, &dh, &scaled, 1.0);
            let coeff = DVector::from_fn(nh, |k, _| (mu[k] * h_full[k] + gamma) / z[k]);
            n_vec.gemv_tr(1.0, &dh, &coeff, 1.0);
        }
        for (k, &(i, _)) in boxes.upper.iter().enumerate() {
            let r = nh + k;
            m[(i, i)] += mu[r] / z[r];
            n_vec[i] += (mu[r] * h_full[r] + gamma) / z[r];
        }
        let off = nh + boxes.upper.len();
        for (k, &(i, _)) in boxes.lower.iter().enumerate() {
            let r = off + k;
            m[(i, i)] += mu[r] / z[r];
            n_vec[i] -= (mu[r] * h_full[r] + gamma) / z[r];
        }

        // KKT assembly and solve, with escalating regularization on retry.
        let dim = nx + neq;
        let mut sol = None;
        for reg in [0.0, 1e-10, 1e-8, 1e-6, 1e-4] {
            let mut kkt = DMatrix::zeros(dim, dim);
            for r in 0..nx {
                for c in 0..nx {
                    kkt[(r, c)] = m[(r, c)];
                }
                kkt[(r, r)] += reg;
            }
            for r in 0..neq {
                for c in 0..nx {
                    kkt[(nx + r, c)] = dg[(r, c)];
                    kkt[(c, nx + r)] = dg[(r, c)];
                }
                kkt[(nx + r, nx + r)] = -reg;
            }
            let mut rhs = DVector::zeros(dim);
            for i in 0..nx {
                rhs[i] = -n_vec[i];
            }
            for r in 0..neq {
                rhs[nx + r] = -g[r];
            }
            if let Some(s) = kkt.lu().solve(&rhs) {
                if s.iter().all(|v| v.is_finite()) {
                    sol = Some(s);
                    break;
                }
            }
        }
        let Some(step) = sol else {
            status = NlpStatus::NumericalFailure;
            last_g = g;
            last_h = h;
            break;
        };

        let dx = DVector::from_fn(nx, |i, _| step[i]);
        let lam_new = DVector::from_fn(neq, |r, _| step[nx + r]);
        let dlam = &lam_new - &lam;

        // dz = -h - z - dh dx;  dmu = -mu + (gamma - mu dz)/z.
        let mut dh_dx = DVector::zeros(niq);
        if nh > 0 {
            let top = &dh * &dx;
            for k in 0..nh {
                dh_dx[k] = top[k];
            }
        }
        boxes.j_mul(&dx, nh, &mut dh_dx);
        let dz = DVector::from_fn(niq, |k, _| -h_full[k] - z[k] - dh_dx[k]);
        let dmu = DVector::from_fn(niq, |k, _| -mu[k] + (gamma - mu[k] * dz[k]) / z[k]);

        let mut alpha_p = 1.0_f64;
        let mut alpha_d = 1.0_f64;
        for k in 0..niq {
            if dz[k] < 0.0 {
                alpha_p = alpha_p.min(opts.xi * z[k] / -dz[k]);
            }
            if dmu[k] < 0.0 {
                alpha_d = alpha_d.min(opts.xi * mu[k] / -dmu[k]);
            }
        }

        x += alpha_p * &dx;
        z += alpha_p * &dz;
        lam += alpha_d * &dlam;
        mu += alpha_d * &dmu;
        if niq > 0 {
            gamma = (opts.sigma * z.dot(&mu) / niq as f64).max(GAMMA_FLOOR);
            // Keep each mu within a wide band of gamma/z so a degenerate row
            // cannot run the duals off to infinity through the gamma feedback.
            for k in 0..niq {
                mu[k] = mu[k].clamp(gamma / (KAPPA_SIGMA * z[k]), KAPPA_SIGMA * gamma / z[k]);
            }
        }

        f0 = f;
        let (fnew, dfnew) = problem.objective(&x);
        f = fnew;
        df = dfnew;
        if !f.is_finite() {
            status = NlpStatus::NumericalFailure;
            break;
        }
    }

    Ok(NlpSolution {
        f,
        lam,
        mu: DVector::from_fn(nh, |k, _| mu[k]),
        iterations,
        status,
        feascond,
        gradcond,
        compcond,
        max_eq_residual: if last_g.is_empty() { 0.0 } else { last_g.amax() },
        max_ineq_value: if last_h.is_empty() { f64::NEG_INFINITY } else { last_h.max() },
        x,
    })
}

/// Convenience wrapper that maps non-converged outcomes to errors.
pub fn solve_nlp_strict(
    problem: &dyn NlpProblem,
    x0: &DVector<f64>,
    opts: &NlpOptions,
) -> Result<NlpSolution> {
    let sol = solve_nlp(problem, x0, opts)?;
    match sol.status {
        NlpStatus::Converged => Ok(sol),
        NlpStatus::MaxIterations => Err(Error::SolverFailure(format!(
            "interior point hit the iteration limit ({}), feascond {:.3e} gradcond {:.3e}",
            sol.iterations, sol.feascond, sol.gradcond
        ))),
        NlpStatus::NumericalFailure => Err(Error::SolverFailure(format!(
            "interior point broke down numerically at iteration {}",
            sol.iterations
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct BoxQp;

    impl NlpProblem for BoxQp {
        fn num_vars(&self) -> usize {
            2
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (DVector::from_element(2, 0.0), DVector::from_element(2, 1.0))
        }
        fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
            let f = (x[0] - 2.0).powi(2) + (x[1] + 1.0).powi(2);
            let df = DVector::from_vec(vec![2.0 * (x[0] - 2.0), 2.0 * (x[1] + 1.0)]);
            (f, df)
        }
        fn equalities(&self, _x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            (DVector::zeros(0), DMatrix::zeros(0, 2))
        }
        fn inequalities(&self, _x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            (DVector::zeros(0), DMatrix::zeros(0, 2))
        }
        fn lagrangian_hessian(
            &self,
            _x: &DVector<f64>,
            _lam: &DVector<f64>,
            _mu: &DVector<f64>,
        ) -> DMatrix<f64> {
            DMatrix::from_diagonal_element(2, 2, 2.0)
        }
    }

    #[test]
    fn box_qp_lands_on_both_active_bounds() {
        let sol = solve_nlp(&BoxQp, &DVector::from_vec(vec![0.5, 0.5]), &NlpOptions::default())
            .unwrap();
        assert_eq!(sol.status, NlpStatus::Converged);
        assert!((sol.x[0] - 1.0).abs() < 1e-6, "x0 = {}", sol.x[0]);
        assert!(sol.x[1].abs() < 1e-6, "x1 = {}", sol.x[1]);
        assert!((sol.f - 2.0).abs() < 1e-5);
    }

    struct EqualityQp;

    impl NlpProblem for EqualityQp {
        fn num_vars(&self) -> usize {
            2
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (
                DVector::from_element(2, f64::NEG_INFINITY),
                DVector::from_element(2, f64::INFINITY),
            )
        }
        fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
            (x.dot(x), 2.0 * x)
        }
        fn equalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            (
                DVector::from_vec(vec![x[0] + x[1] - 1.0]),
                DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            )
        }
        fn inequalities(&self, _x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            (DVector::zeros(0), DMatrix::zeros(0, 2))
        }
        fn lagrangian_hessian(
            &self,
            _x: &DVector<f64>,
            _lam: &DVector<f64>,
            _mu: &DVector<f64>,
        ) -> DMatrix<f64> {
            DMatrix::from_diagonal_element(2, 2, 2.0)
        }
    }

    #[test]
    fn equality_qp_matches_analytic_optimum() {
        let sol = solve_nlp(
            &EqualityQp,
            &DVector::from_vec(vec![3.0, -3.0]),
            &NlpOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.status, NlpStatus::Converged);
        assert!((sol.x[0] - 0.5).abs() < 1e-7);
        assert!((sol.x[1] - 0.5).abs() < 1e-7);
        assert!((sol.lam[0] + 1.0).abs() < 1e-6, "lam = {}", sol.lam[0]);
    }

    struct IneqQp;

    impl NlpProblem for IneqQp {
        fn num_vars(&self) -> usize {
            1
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (
                DVector::from_element(1, f64::NEG_INFINITY),
                DVector::from_element(1, f64::INFINITY),
            )
        }
        fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
            (
                (x[0] - 3.0).powi(2),
                DVector::from_vec(vec![2.0 * (x[0] - 3.0)]),
            )
        }
        fn equalities(&self, _x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            (DVector::zeros(0), DMatrix::zeros(0, 1))
        }
        fn inequalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            (
                DVector::from_vec(vec![x[0] - 1.0]),
                DMatrix::from_row_slice(1, 1, &[1.0]),
            )
        }
        fn lagrangian_hessian(
            &self,
            _x: &DVector<f64>,
            _lam: &DVector<f64>,
            _mu: &DVector<f64>,
        ) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 2.0)
        }
    }

    #[test]
    fn active_inequality_recovers_multiplier() {
        let sol =
            solve_nlp(&IneqQp, &DVector::from_vec(vec![-2.0]), &NlpOptions::default()).unwrap();
        assert_eq!(sol.status, NlpStatus::Converged);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!((sol.mu[0] - 4.0).abs() < 1e-4, "mu = {}", sol.mu[0]);
    }

    /// Two scaled copies of the same active row: LICQ fails at the optimum,
    /// so the multipliers are non-unique and the trajectory estimates cannot
    /// settle. The certificate must come from the reconstruction step.
    struct DegenerateQp;

    impl NlpProblem for DegenerateQp {
        fn num_vars(&self) -> usize {
            1
        }
        fn bounds(&self) -> (DVector<f64>, DVector<f64>) {
            (
                DVector::from_element(1, f64::NEG_INFINITY),
                DVector::from_element(1, f64::INFINITY),
            )
        }
        fn objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
            (
                (x[0] - 1.0).powi(2),
                DVector::from_vec(vec![2.0 * (x[0] - 1.0)]),
            )
        }
        fn equalities(&self, _x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            (DVector::zeros(0), DMatrix::zeros(0, 1))
        }
        fn inequalities(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
            (
                DVector::from_vec(vec![x[0], 2.0 * x[0]]),
                DMatrix::from_row_slice(2, 1, &[1.0, 2.0]),
            )
        }
        fn lagrangian_hessian(
            &self,
            _x: &DVector<f64>,
            _lam: &DVector<f64>,
            _mu: &DVector<f64>,
        ) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 2.0)
        }
    }

    #[test]
    fn degenerate_active_set_still_converges() {
        let sol = solve_nlp(
            &DegenerateQp,
            &DVector::from_vec(vec![-0.5]),
            &NlpOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.status, NlpStatus::Converged);
        assert!(sol.x[0].abs() < 1e-6, "x = {}", sol.x[0]);
        // Stationarity with the returned multipliers.
        let resid = 2.0 * (sol.x[0] - 1.0) + sol.mu[0] + 2.0 * sol.mu[1];
        assert!(resid.abs() < 1e-5, "stationarity residual {resid}");
        assert!(sol.mu[0] >= 0.0 && sol.mu[1] >= 0.0);
    }
}
