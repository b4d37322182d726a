//! Shared independent oracles for the integration suites: a fixed-step RK4
//! reference integrator for the gating ODE (scalar right-hand side, never
//! touching the production matrix form) and a dense direct solver.
#![allow(dead_code)] // each test target uses a subset

use calwave::gating::RateConstants;

/// Scalar gating right-hand side from the underlying four-state chain.
pub fn gating_rhs(q: [f64; 3], u: f64, r: &RateConstants) -> [f64; 3] {
    let w = 1.0 - q[0] - q[1] - q[2];
    [
        -u.powi(4) * r.ka_plus * q[0] + r.ka_minus * w,
        u.powi(3) * r.kb_plus * w - r.kb_minus * q[1],
        r.kc_plus * w - r.kc_minus * q[2],
    ]
}

/// Classic RK4 with `n` fixed substeps over [t0, t1] at constant trace u.
pub fn rk4_reference(q0: [f64; 3], u: f64, span: f64, n: usize, rates: &RateConstants) -> [f64; 3] {
    let h = span / n as f64;
    let mut q = q0;
    let add =
        |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    for _ in 0..n {
        let k1 = gating_rhs(q, u, rates);
        let k2 = gating_rhs(add(q, k1, h / 2.0), u, rates);
        let k3 = gating_rhs(add(q, k2, h / 2.0), u, rates);
        let k4 = gating_rhs(add(q, k3, h), u, rates);
        for i in 0..3 {
            q[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    q
}

/// Dense Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x
}
