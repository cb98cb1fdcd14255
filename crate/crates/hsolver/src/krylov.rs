//! Outer iterations: full right-preconditioned GMRES and the stationary
//! iteration x_{k+1} = x_k + M^{-1}(b - A x_k).

use crate::solve::LinearOperator;
use nalgebra::DVector;
use serde::Serialize;

/// One solve's outcome. `residual_history` holds true relative residuals
/// (or relative errors for the stationary iteration with a known solution),
/// one entry per iteration.
#[derive(Debug, Clone, Serialize)]
pub struct IterationReport {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub diverged: bool,
    pub wall_time_s: f64,
    /// GMRES preconditioning side; recorded because the choice is ours, not
    /// prescribed.
    pub preconditioning: &'static str,
}

/// Stationary iteration with x_0 = 0.
///
/// Convergence is measured as ||x_k - x*|| / ||x*|| when the solution is
/// known, else as the true relative residual. A measure exceeding 1e6 stops
/// the loop with a divergence report rather than an error.
pub fn stationary_solve(
    a: &dyn LinearOperator,
    b: &DVector<f64>,
    precond: &dyn LinearOperator,
    rel_tol: f64,
    x_star: Option<&DVector<f64>>,
    max_iter: usize,
) -> (DVector<f64>, IterationReport) {
    let start = std::time::Instant::now();
    let n = a.dim();
    let mut x = DVector::zeros(n);
    let b_norm = b.norm();
    let x_star_norm = x_star.map(|v| v.norm()).unwrap_or(0.0);
    let measure = |x: &DVector<f64>| -> f64 {
        match x_star {
            Some(xs) => {
                if x_star_norm == 0.0 {
                    x.norm()
                } else {
                    (x - xs).norm() / x_star_norm
                }
            }
            None => {
                if b_norm == 0.0 {
                    0.0
                } else {
                    (b - a.apply_to(x)).norm() / b_norm
                }
            }
        }
    };

    let mut history = Vec::new();
    let mut converged = false;
    let mut diverged = false;
    let mut iterations = 0;
    if measure(&x) <= rel_tol {
        converged = true;
    } else {
        for k in 1..=max_iter {
            let r = b - a.apply_to(&x);
            x += precond.apply_to(&r);
            let m = measure(&x);
            history.push(m);
            iterations = k;
            if m <= rel_tol {
                converged = true;
                break;
            }
            if !m.is_finite() || m > 1e6 {
                diverged = true;
                break;
            }
        }
    }
    (
        x,
        IterationReport {
            iterations,
            residual_history: history,
            converged,
            diverged,
            wall_time_s: start.elapsed().as_secs_f64(),
            preconditioning: "stationary",
        },
    )
}

/// Full GMRES (no restart), right-preconditioned, x_0 = 0, modified
/// Gram-Schmidt with one reorthogonalization pass. Convergence is on the
/// true relative residual ||b - A x_k|| / ||b||.
pub fn gmres_solve(
    a: &dyn LinearOperator,
    b: &DVector<f64>,
    precond: Option<&dyn LinearOperator>,
    rel_res_tol: f64,
    max_iter: usize,
) -> (DVector<f64>, IterationReport) {
    let start = std::time::Instant::now();
    let n = a.dim();
    let b_norm = b.norm();
    let report = |iterations, history, converged, start: std::time::Instant| IterationReport {
        iterations,
        residual_history: history,
        converged,
        diverged: false,
        wall_time_s: start.elapsed().as_secs_f64(),
        preconditioning: "right",
    };
    if b_norm == 0.0 {
        return (DVector::zeros(n), report(0, Vec::new(), true, start));
    }

    let mut basis: Vec<DVector<f64>> = vec![b / b_norm];
    let mut z_basis: Vec<DVector<f64>> = Vec::new(); // M^{-1} v_j
    // Hessenberg columns after Givens, plus rotation state
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut cs: Vec<f64> = Vec::new();
    let mut sn: Vec<f64> = Vec::new();
    let mut g = vec![b_norm];

    let mut history = Vec::new();
    let mut x = DVector::zeros(n);
    let max_iter = max_iter.min(n);

    for k in 0..max_iter {
        let z = match precond {
            Some(m) => m.apply_to(&basis[k]),
            None => basis[k].clone(),
        };
        let mut w = a.apply_to(&z);
        z_basis.push(z);

        let mut h = vec![0.0; k + 2];
        for (j, v) in basis.iter().enumerate() {
            let c = v.dot(&w);
            h[j] = c;
            w.axpy(-c, v, 1.0);
        }
        for (j, v) in basis.iter().enumerate() {
            let c = v.dot(&w);
            h[j] += c;
            w.axpy(-c, v, 1.0);
        }
        let wn = w.norm();
        h[k + 1] = wn;
        let breakdown = wn <= 1e-300;
        if !breakdown {
            basis.push(w / wn);
        }

        // apply accumulated Givens rotations, then a new one
        for j in 0..k {
            let t = cs[j] * h[j] + sn[j] * h[j + 1];
            h[j + 1] = -sn[j] * h[j] + cs[j] * h[j + 1];
            h[j] = t;
        }
        let denom = (h[k] * h[k] + h[k + 1] * h[k + 1]).sqrt();
        let (c, s) = if denom == 0.0 {
            (1.0, 0.0)
        } else {
            (h[k] / denom, h[k + 1] / denom)
        };
        cs.push(c);
        sn.push(s);
        h[k] = c * h[k] + s * h[k + 1];
        h[k + 1] = 0.0;
        g.push(-s * g[k]);
        g[k] *= c;
        r_cols.push(h);

        // assemble the current iterate and its true residual
        let m = k + 1;
        let mut y = vec![0.0; m];
        for i in (0..m).rev() {
            let mut acc = g[i];
            for (j, yj) in y.iter().enumerate().skip(i + 1) {
                acc -= r_cols[j][i] * yj;
            }
            y[i] = acc / r_cols[i][i];
        }
        let mut xk = DVector::zeros(n);
        for (j, yj) in y.iter().enumerate() {
            xk.axpy(*yj, &z_basis[j], 1.0);
        }
        let res = (b - a.apply_to(&xk)).norm() / b_norm;
        history.push(res);
        x = xk;

        if res <= rel_res_tol {
            return (x, report(m, history, true, start));
        }
        if breakdown {
            // exact Krylov solution reached; residual should already be tiny
            return (x, report(m, history, res <= rel_res_tol, start));
        }
    }
    let iters = history.len();
    (x, report(iters, history, false, start))
}
