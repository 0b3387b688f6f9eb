//! First and second partial derivatives of the complex bus injections
//! `S(V) = diag(V) conj(Y V)` with respect to voltage angle and magnitude.
//!
//! All formulas are the standard polar-coordinate expressions; everything is
//! dense and O(n^2), which is the right trade-off for distribution networks
//! of a few dozen buses. Correctness is pinned by finite-difference tests.

use nalgebra::DMatrix;
use num_complex::Complex64;

/// Returns `(dS/dtheta, dS/dVm)` evaluated at `v`.
pub fn ds_dv(y: &DMatrix<Complex64>, v: &[Complex64]) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = v.len();
    let ibus: Vec<Complex64> = (0..n)
        .map(|i| (0..n).map(|j| y[(i, j)] * v[j]).sum())
        .collect();
    let vnorm: Vec<Complex64> = v.iter().map(|vi| vi / vi.norm()).collect();

    let mut ds_dva = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let mut ds_dvm = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    let jay = Complex64::new(0.0, 1.0);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                ds_dva[(i, i)] = jay * v[i] * (ibus[i] - y[(i, i)] * v[i]).conj();
                ds_dvm[(i, i)] = v[i] * (y[(i, i)] * vnorm[i]).conj() + ibus[i].conj() * vnorm[i];
            } else {
                ds_dva[(i, j)] = jay * v[i] * (-y[(i, j)] * v[j]).conj();
                ds_dvm[(i, j)] = v[i] * (y[(i, j)] * vnorm[j]).conj();
            }
        }
    }
    (ds_dva, ds_dvm)
}

/// Second derivatives of the scalar `Re(lam)' P(V) + Im(-lam)' Q(V)` family.
///
/// For a real multiplier pair `(lam_p, lam_q)` on active and reactive
/// balance, call with `lam = lam_p - j lam_q` and take the real part of each
/// returned block: the result is the Hessian of `lam_p' P(V) + lam_q' Q(V)`.
/// Blocks are ordered `(aa, av, va, vv)` where `a` is angle and `v`
/// magnitude.
pub fn d2s_dv2(
    y: &DMatrix<Complex64>,
    v: &[Complex64],
    lam: &[Complex64],
) -> (
    DMatrix<Complex64>,
    DMatrix<Complex64>,
    DMatrix<Complex64>,
    DMatrix<Complex64>,
) {
    let n = v.len();
    let zero = Complex64::new(0.0, 0.0);
    let ibus: Vec<Complex64> = (0..n)
        .map(|i| (0..n).map(|j| y[(i, j)] * v[j]).sum())
        .collect();

    // B = Y diag(V), D = Y^H diag(V), all built column/row-scaled, O(n^2).
    let mut b = DMatrix::from_element(n, n, zero);
    let mut d = DMatrix::from_element(n, n, zero);
    for i in 0..n {
        for j in 0..n {
            b[(i, j)] = y[(i, j)] * v[j];
            d[(i, j)] = y[(j, i)].conj() * v[j];
        }
    }
    // A = diag(lam .* V), C = A conj(B), F = C - A diag(conj(Ibus)).
    let mut c = DMatrix::from_element(n, n, zero);
    let mut f = DMatrix::from_element(n, n, zero);
    for i in 0..n {
        let a_ii = lam[i] * v[i];
        for j in 0..n {
            c[(i, j)] = a_ii * b[(i, j)].conj();
        }
        f[(i, i)] = -a_ii * ibus[i].conj();
    }
    for i in 0..n {
        for j in 0..n {
            f[(i, j)] += c[(i, j)];
        }
    }
    // E = conj(diag(V)) (D diag(lam) - diag(D lam)).
    let dlam: Vec<Complex64> = (0..n)
        .map(|i| (0..n).map(|j| d[(i, j)] * lam[j]).sum())
        .collect();
    let mut e = DMatrix::from_element(n, n, zero);
    for i in 0..n {
        for j in 0..n {
            let inner = d[(i, j)] * lam[j] - if i == j { dlam[i] } else { zero };
            e[(i, j)] = v[i].conj() * inner;
        }
    }

    let g: Vec<f64> = v.iter().map(|vi| 1.0 / vi.norm()).collect();
    let jay = Complex64::new(0.0, 1.0);
    let mut gaa = DMatrix::from_element(n, n, zero);
    let mut gva = DMatrix::from_element(n, n, zero);
    let mut gav = DMatrix::from_element(n, n, zero);
    let mut gvv = DMatrix::from_element(n, n, zero);
    for i in 0..n {
        for j in 0..n {
            gaa[(i, j)] = e[(i, j)] + f[(i, j)];
            gva[(i, j)] = jay * g[i] * (e[(i, j)] - f[(i, j)]);
            gvv[(i, j)] = g[i] * (c[(i, j)] + c[(j, i)]) * g[j];
        }
    }
    for i in 0..n {
        for j in 0..n {
            gav[(i, j)] = gva[(j, i)];
        }
    }
    (gaa, gav, gva, gvv)
}
