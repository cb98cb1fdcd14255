//! Dense linear-algebra kernels: truncated SVD, preserving compression,
//! SPD factor/solve, and the approximate-preservation projection schemes.
//!
//! All kernels accept zero-dimension operands so degenerate nodes flow
//! through the factorization without special cases.

use crate::error::{Error, Result};
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Truncation rule applied to a singular-value profile.
///
/// `RelTwoNorm` is the benchmark semantics (sigma_{k+1} <= eps * ref_norm,
/// where the reference is the 2-norm of the matrix being compressed).
/// `AbsFrobenius` keeps the tail Frobenius norm under an absolute tolerance
/// and exists for the error-bound diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TolRule {
    RelTwoNorm(f64),
    AbsTwoNorm(f64),
    AbsFrobenius(f64),
}

impl TolRule {
    /// Smallest k such that the discarded tail sigma_{k+1..} passes the rule.
    pub fn rank(&self, sigmas: &[f64], ref_two_norm: f64) -> usize {
        let cut = |tail_start: usize| -> bool {
            match *self {
                TolRule::RelTwoNorm(eps) => {
                    sigmas.get(tail_start).copied().unwrap_or(0.0) <= eps * ref_two_norm
                }
                TolRule::AbsTwoNorm(t) => sigmas.get(tail_start).copied().unwrap_or(0.0) <= t,
                TolRule::AbsFrobenius(t) => {
                    let tail: f64 = sigmas[tail_start.min(sigmas.len())..]
                        .iter()
                        .map(|s| s * s)
                        .sum();
                    tail.sqrt() <= t
                }
            }
        };
        for k in 0..=sigmas.len() {
            if cut(k) {
                return k;
            }
        }
        sigmas.len()
    }
}

/// Low-rank factorization M ~ U * Rt with orthonormal U.
#[derive(Debug, Clone)]
pub struct LowRankFactor {
    /// Orthonormal column basis, rows x rank.
    pub u: DMatrix<f64>,
    /// Coefficients, rank x cols.
    pub rt: DMatrix<f64>,
    /// 2-norm of the discarded part.
    pub err: f64,
    /// Frobenius norm of the discarded part.
    pub err_frob: f64,
    /// 2-norm of the matrix that was compressed (the truncation reference).
    pub input_norm: f64,
}

impl LowRankFactor {
    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    fn empty(rows: usize, cols: usize) -> Self {
        Self {
            u: DMatrix::zeros(rows, 0),
            rt: DMatrix::zeros(0, cols),
            err: 0.0,
            err_frob: 0.0,
            input_norm: 0.0,
        }
    }
}

/// One-sided Jacobi SVD of a tall matrix (nrows >= ncols): rotate column
/// pairs until mutually orthogonal. The reconstruction A = W V^T is exact
/// by construction (V is a product of plane rotations), which makes this
/// the trustworthy fallback when the fast bidiagonal SVD misbehaves on
/// clustered or tiny singular values.
fn jacobi_svd_tall(a: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    let m = a.nrows();
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let tol = 1e-15;
    for _ in 0..60 {
        let mut rotated = false;
        for i in 0..n.saturating_sub(1) {
            for j in (i + 1)..n {
                let aii = w.column(i).norm_squared();
                let ajj = w.column(j).norm_squared();
                let aij = w.column(i).dot(&w.column(j));
                if aii == 0.0 || ajj == 0.0 || aij.abs() <= tol * (aii * ajj).sqrt() {
                    continue;
                }
                rotated = true;
                let tau = (ajj - aii) / (2.0 * aij);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for r in 0..m {
                    let x = w[(r, i)];
                    let y = w[(r, j)];
                    w[(r, i)] = c * x - s * y;
                    w[(r, j)] = s * x + c * y;
                }
                for r in 0..n {
                    let x = v[(r, i)];
                    let y = v[(r, j)];
                    v[(r, i)] = c * x - s * y;
                    v[(r, j)] = s * x + c * y;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..n).map(|c| w.column(c).norm()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| norms[y].partial_cmp(&norms[x]).unwrap().then(x.cmp(&y)));
    let mut u = DMatrix::zeros(m, n);
    let mut sig = vec![0.0; n];
    let mut vt = DMatrix::zeros(n, n);
    for (c_new, &c_old) in order.iter().enumerate() {
        sig[c_new] = norms[c_old];
        if norms[c_old] > 0.0 {
            let col = w.column(c_old) / norms[c_old];
            u.column_mut(c_new).copy_from(&col);
        }
        vt.row_mut(c_new).copy_from(&v.column(c_old).transpose());
    }
    (u, sig, vt)
}

fn jacobi_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if m.nrows() >= m.ncols() {
        jacobi_svd_tall(m)
    } else {
        let (u2, sig, vt2) = jacobi_svd_tall(&m.transpose());
        (vt2.transpose(), sig, u2.transpose())
    }
}

// Deterministic probe vector for the factorization consistency check.
fn probe_vector(len: usize, salt: usize) -> DVector<f64> {
    DVector::from_fn(len, |i, _| {
        let h = (i.wrapping_mul(2654435761).wrapping_add(salt * 97)) % 1000;
        h as f64 / 1000.0 - 0.5
    })
}

fn svd_consistent(
    m: &DMatrix<f64>,
    u: &DMatrix<f64>,
    sig: &[f64],
    vt: &DMatrix<f64>,
) -> bool {
    let k = sig.len();
    if k == 0 {
        return true;
    }
    if sig.windows(2).any(|w| w[1] > w[0]) {
        return false;
    }
    let sigma1 = sig[0];
    let gram = u.transpose() * u;
    if (gram - DMatrix::identity(k, k)).norm() > 1e-12 * (k as f64).sqrt().max(1.0) {
        return false;
    }
    for salt in 0..2usize {
        let z = probe_vector(m.ncols(), salt);
        let mut t = vt * &z;
        for (r, &s) in sig.iter().enumerate() {
            t[r] *= s;
        }
        let resid = m * &z - u * t;
        if resid.norm() > 3e-12 * sigma1.max(f64::MIN_POSITIVE) * z.norm() {
            return false;
        }
    }
    true
}

fn svd_parts(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
    if m.nrows() == 0 || m.ncols() == 0 {
        return (
            DMatrix::zeros(m.nrows(), 0),
            Vec::new(),
            DMatrix::zeros(0, m.ncols()),
        );
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let vt = svd.v_t.expect("svd v_t");
    let sig = svd.singular_values.as_slice().to_vec();
    if svd_consistent(m, &u, &sig, &vt) {
        (u, sig, vt)
    } else {
        jacobi_svd(m)
    }
}

/// Spectral norm (largest singular value).
pub fn two_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    svd_parts(m).1.first().copied().unwrap_or(0.0)
}

fn factor_from_svd(
    u: &DMatrix<f64>,
    sigmas: &[f64],
    vt: &DMatrix<f64>,
    rank: usize,
    input_norm: f64,
) -> LowRankFactor {
    let uk = u.columns(0, rank).into_owned();
    let mut rt = vt.rows(0, rank).into_owned();
    for (r, &s) in sigmas[..rank].iter().enumerate() {
        for c in 0..rt.ncols() {
            rt[(r, c)] *= s;
        }
    }
    let err = sigmas.get(rank).copied().unwrap_or(0.0);
    let err_frob = sigmas[rank..].iter().map(|s| s * s).sum::<f64>().sqrt();
    LowRankFactor {
        u: uk,
        rt,
        err,
        err_frob,
        input_norm,
    }
}

/// Truncated SVD with the rule applied against `ref_two_norm` (pass the
/// matrix's own 2-norm for self-relative truncation).
pub fn truncated_svd_with_rule(
    m: &DMatrix<f64>,
    rule: TolRule,
    ref_two_norm: Option<f64>,
) -> LowRankFactor {
    if m.nrows() == 0 || m.ncols() == 0 {
        return LowRankFactor::empty(m.nrows(), m.ncols());
    }
    let (u, sigmas, vt) = svd_parts(m);
    let reference = ref_two_norm.unwrap_or_else(|| sigmas.iter().cloned().fold(0.0, f64::max));
    let rank = rule.rank(&sigmas, reference);
    factor_from_svd(&u, &sigmas, &vt, rank, reference)
}

/// Truncated SVD at relative 2-norm tolerance eps: the returned rank is the
/// smallest k with sigma_{k+1} <= eps * sigma_1 (eps = 0 keeps every nonzero
/// singular value).
pub fn truncated_svd(m: &DMatrix<f64>, eps: f64) -> LowRankFactor {
    truncated_svd_with_rule(m, TolRule::RelTwoNorm(eps), None)
}

/// Modified Gram-Schmidt with one reorthogonalization pass. Columns whose
/// residual after projection drops below `drop_tol` times their original norm
/// are dropped.
pub fn orthonormalize_cols(m: &DMatrix<f64>, drop_tol: f64) -> DMatrix<f64> {
    let rows = m.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for c in 0..m.ncols() {
        let col = m.column(c).into_owned();
        let orig = col.norm();
        if orig == 0.0 {
            continue;
        }
        let mut v = col;
        for _ in 0..2 {
            for q in &basis {
                let h = q.dot(&v);
                v.axpy(-h, q, 1.0);
            }
        }
        let r = v.norm();
        if r < drop_tol * orig {
            continue;
        }
        basis.push(v / r);
    }
    let mut out = DMatrix::zeros(rows, basis.len());
    for (c, q) in basis.iter().enumerate() {
        out.set_column(c, q);
    }
    out
}

/// Compression of A_sw that keeps `phi_x` and `A_sw * phi_y` (given as
/// `phi_y_image`) exactly inside the returned basis.
///
/// The preserved directions are orthonormalized into U1, the component
/// U1 * (U1^T A_sw) is kept, and the deflated remainder is truncated at
/// `eps * ||A_sw||_2`. The result satisfies A_sw phi_y = U R^T phi_y and
/// A_ws phi_x = R U^T phi_x to roundoff, with total error <= eps ||A_sw||_2.
pub fn preserving_compress(
    a_sw: &DMatrix<f64>,
    phi_x: &DMatrix<f64>,
    phi_y_image: &DMatrix<f64>,
    eps: f64,
) -> LowRankFactor {
    preserving_compress_with_rule(a_sw, phi_x, phi_y_image, TolRule::RelTwoNorm(eps))
}

/// `preserving_compress` with an explicit truncation rule for the deflated
/// remainder; relative rules reference the 2-norm of the original matrix.
pub fn preserving_compress_with_rule(
    a_sw: &DMatrix<f64>,
    phi_x: &DMatrix<f64>,
    phi_y_image: &DMatrix<f64>,
    rule: TolRule,
) -> LowRankFactor {
    let (rows, cols) = (a_sw.nrows(), a_sw.ncols());
    if rows == 0 || cols == 0 {
        return LowRankFactor::empty(rows, cols);
    }
    let ref_norm = two_norm(a_sw);
    if ref_norm == 0.0 {
        return LowRankFactor::empty(rows, cols);
    }
    let nprev = phi_x.ncols() + phi_y_image.ncols();
    if nprev == 0 {
        return truncated_svd_with_rule(a_sw, rule, Some(ref_norm));
    }
    let mut targets = DMatrix::zeros(rows, nprev);
    targets.columns_mut(0, phi_x.ncols()).copy_from(phi_x);
    targets
        .columns_mut(phi_x.ncols(), phi_y_image.ncols())
        .copy_from(phi_y_image);
    let u1 = orthonormalize_cols(&targets, 1e-12);
    let k1t = u1.transpose() * a_sw;
    let deflated = a_sw - &u1 * &k1t;
    let tail = truncated_svd_with_rule(&deflated, rule, Some(ref_norm));

    let k1 = u1.ncols();
    let k2 = tail.rank();
    let mut u = DMatrix::zeros(rows, k1 + k2);
    u.columns_mut(0, k1).copy_from(&u1);
    u.columns_mut(k1, k2).copy_from(&tail.u);
    let mut rt = DMatrix::zeros(k1 + k2, cols);
    rt.rows_mut(0, k1).copy_from(&k1t);
    rt.rows_mut(k1, k2).copy_from(&tail.rt);
    LowRankFactor {
        u,
        rt,
        err: tail.err,
        err_frob: tail.err_frob,
        input_norm: ref_norm,
    }
}

/// Cholesky factor of an SPD matrix, kept for repeated solves.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    dim: usize,
}

/// Factor M, reporting `context` on a non-positive pivot.
pub fn spd_factor(m: DMatrix<f64>, context: &str) -> Result<SpdFactor> {
    let dim = m.nrows();
    match m.cholesky() {
        Some(chol) => Ok(SpdFactor { chol, dim }),
        None => Err(Error::NotSpd {
            context: context.to_string(),
        }),
    }
}

impl SpdFactor {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn solve_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        if self.dim == 0 {
            return DVector::zeros(0);
        }
        self.chol.solve(rhs)
    }

    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        if self.dim == 0 {
            return DMatrix::zeros(0, rhs.ncols());
        }
        self.chol.solve(rhs)
    }

    /// Explicit inverse, symmetrized. Used only where the inverse becomes a
    /// stored block of the remaining system.
    pub fn inverse(&self) -> DMatrix<f64> {
        let inv = self.solve_mat(&DMatrix::identity(self.dim, self.dim));
        (&inv + inv.transpose()) * 0.5
    }
}

pub fn spd_solve(f: &SpdFactor, rhs: &DVector<f64>) -> DVector<f64> {
    f.solve_vec(rhs)
}

/// One measured inequality: the scheme guarantees lhs <= rhs.
#[derive(Debug, Clone)]
pub struct BoundCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ProjectionKind {
    OneSided,
    SymmetricFirst,
    SymmetricSecond,
}

/// Outcome of a projection scheme: the approximation of B^T, an orthonormal
/// basis containing its column space, and the measured bound inequalities.
#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub bt_approx: DMatrix<f64>,
    pub basis: DMatrix<f64>,
    pub checks: Vec<BoundCheck>,
    /// Achieved ||B^T - Btilde^T||_2.
    pub err_two_norm: f64,
    /// ||B||_2 of the projected matrix.
    pub input_norm: f64,
}

impl ProjectionResult {
    /// U, R^T form with orthonormal U reproducing bt_approx.
    pub fn to_low_rank(&self) -> LowRankFactor {
        let rt = self.basis.transpose() * &self.bt_approx;
        LowRankFactor {
            u: self.basis.clone(),
            rt,
            err: self.err_two_norm,
            err_frob: self.err_two_norm,
            input_norm: self.input_norm,
        }
    }
}

fn truncated_basis(m: &DMatrix<f64>, rule: TolRule, reference: Option<f64>) -> DMatrix<f64> {
    truncated_svd_with_rule(m, rule, reference).u
}

fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// First-order one-sided projection of B^T (B = A_ws).
///
/// `xs` holds the preserved directions on the current node (n_s x M), `xw`
/// the directions on the well-separated side (n_w x M), both already scaled.
pub fn project_one_sided(
    b: &DMatrix<f64>,
    xs: &DMatrix<f64>,
    xw: &DMatrix<f64>,
    eps1: f64,
    eps2: f64,
) -> ProjectionResult {
    let bt = b.transpose();
    let ms = hcat(xs, &(&bt * xw));
    let norm_b = two_norm(b);
    let norm_ms = two_norm(&ms);

    let u1 = truncated_basis(&ms, TolRule::RelTwoNorm(eps1), None);
    let bhat_t = &u1 * (u1.transpose() * &bt);
    let resid = &bt - &bhat_t;
    let u2 = truncated_basis(&resid, TolRule::AbsTwoNorm(eps2 * norm_b), None);
    let bt_approx = &bhat_t + &u2 * (u2.transpose() * &resid);

    let diff_t = &bt - &bt_approx;
    let mut checks = vec![BoundCheck {
        name: "overall".into(),
        lhs: two_norm(&diff_t),
        rhs: eps2 * norm_b,
    }];
    let diff = diff_t.transpose();
    for i in 0..xs.ncols() {
        checks.push(BoundCheck {
            name: format!("preserve_s_col{i}"),
            lhs: (&diff * xs.column(i)).norm(),
            rhs: eps1 * eps2 * norm_b * norm_ms,
        });
    }
    if xw.ncols() > 0 {
        checks.push(BoundCheck {
            name: "preserve_w_min".into(),
            lhs: two_norm(&(&diff_t * xw)),
            rhs: (eps1 * norm_ms).min(eps2 * norm_b * two_norm(xw)),
        });
    }
    let err_two_norm = checks[0].lhs;
    let basis = orthonormalize_cols(&hcat(&u1, &u2), 1e-12);
    ProjectionResult {
        bt_approx,
        basis,
        checks,
        err_two_norm,
        input_norm: norm_b,
    }
}

/// First-order symmetric projection of B^T.
pub fn project_symmetric_first(
    b: &DMatrix<f64>,
    xs: &DMatrix<f64>,
    xw: &DMatrix<f64>,
    eps1: f64,
    eps2: f64,
) -> ProjectionResult {
    let bt = b.transpose();
    let ms = hcat(xs, &(&bt * xw));
    let mw = hcat(xw, &(b * xs));
    let norm_b = two_norm(b);
    let (norm_ms, norm_mw) = (two_norm(&ms), two_norm(&mw));

    let u1s = truncated_basis(&ms, TolRule::RelTwoNorm(eps1), None);
    let u1w = truncated_basis(&mw, TolRule::RelTwoNorm(eps1), None);
    let bhat_t = &u1s * (u1s.transpose() * &bt * &u1w) * u1w.transpose();
    let resid = &bt - &bhat_t;
    let u2 = truncated_basis(&resid, TolRule::AbsTwoNorm(eps2 * norm_b), None);
    let bt_approx = &bhat_t + &u2 * (u2.transpose() * &resid);

    let diff_t = &bt - &bt_approx;
    let mut checks = vec![BoundCheck {
        name: "overall".into(),
        lhs: two_norm(&diff_t),
        rhs: eps2 * norm_b,
    }];
    if xw.ncols() > 0 {
        checks.push(BoundCheck {
            name: "preserve_w_min".into(),
            lhs: two_norm(&(&diff_t * xw)),
            rhs: (eps1 * (norm_ms + norm_b * norm_mw)).min(eps2 * norm_b * two_norm(xw)),
        });
    }
    let err_two_norm = checks[0].lhs;
    let basis = orthonormalize_cols(&hcat(&u1s, &u2), 1e-12);
    ProjectionResult {
        bt_approx,
        basis,
        checks,
        err_two_norm,
        input_norm: norm_b,
    }
}

/// Second-order symmetric projection of B^T.
pub fn project_symmetric_second(
    b: &DMatrix<f64>,
    xs: &DMatrix<f64>,
    xw: &DMatrix<f64>,
    eps1: f64,
    eps2: f64,
) -> ProjectionResult {
    let bt = b.transpose();
    let norm_b = two_norm(b);

    let u1s = truncated_basis(xs, TolRule::RelTwoNorm(eps1), None);
    let u1w = truncated_basis(xw, TolRule::RelTwoNorm(eps1), None);
    // bhat_t = bt - (I - PsPs^T) bt (I - PwPw^T)
    let defl = {
        let left = &bt - &u1s * (u1s.transpose() * &bt);
        &left - (&left * &u1w) * u1w.transpose()
    };
    let bhat_t = &bt - &defl;
    let resid = &bt - &bhat_t;
    let u2 = truncated_basis(&resid, TolRule::AbsTwoNorm(eps2 * norm_b), None);
    let bt_approx = &bhat_t + &u2 * (u2.transpose() * &resid);

    let diff_t = &bt - &bt_approx;
    let diff = diff_t.transpose();
    let mut checks = vec![BoundCheck {
        name: "overall".into(),
        lhs: two_norm(&diff_t),
        rhs: eps2 * norm_b,
    }];
    if xs.ncols() > 0 {
        checks.push(BoundCheck {
            name: "preserve_s".into(),
            lhs: two_norm(&(&diff * xs)),
            rhs: eps1 * eps2 * norm_b * two_norm(xs),
        });
        for i in 0..xs.ncols() {
            checks.push(BoundCheck {
                name: format!("preserve_s_col{i}"),
                lhs: (&diff * xs.column(i)).norm(),
                rhs: eps1 * eps2 * norm_b * two_norm(xs),
            });
        }
    }
    if xw.ncols() > 0 {
        checks.push(BoundCheck {
            name: "preserve_w".into(),
            lhs: two_norm(&(&diff_t * xw)),
            rhs: eps1 * eps2 * norm_b * two_norm(xw),
        });
    }
    // The column space of bhat_t spans u1s plus the deflected image of u1w.
    let extra = {
        let img = &bt * &u1w;
        &img - &u1s * (u1s.transpose() * &img)
    };
    let err_two_norm = checks[0].lhs;
    let basis = orthonormalize_cols(&hcat(&hcat(&u1s, &extra), &u2), 1e-12);
    ProjectionResult {
        bt_approx,
        basis,
        checks,
        err_two_norm,
        input_norm: norm_b,
    }
}

pub fn project(
    kind: ProjectionKind,
    b: &DMatrix<f64>,
    xs: &DMatrix<f64>,
    xw: &DMatrix<f64>,
    eps1: f64,
    eps2: f64,
) -> ProjectionResult {
    match kind {
        ProjectionKind::OneSided => project_one_sided(b, xs, xw, eps1, eps2),
        ProjectionKind::SymmetricFirst => project_symmetric_first(b, xs, xw, eps1, eps2),
        ProjectionKind::SymmetricSecond => project_symmetric_second(b, xs, xw, eps1, eps2),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn truncated_svd_zero_matrix() {
        let f = truncated_svd(&DMatrix::zeros(4, 6), 0.1);
        assert_eq!(f.rank(), 0);
        assert_eq!(f.err, 0.0);
    }

    #[test]
    fn truncated_svd_rank_one() {
        let u = DVector::from_vec(vec![1.0, 2.0, -1.0]);
        let v = DVector::from_vec(vec![0.5, 1.5, 2.5, -0.5]);
        let m = &u * v.transpose();
        let f = truncated_svd(&m, 0.1);
        assert_eq!(f.rank(), 1);
        let sigma1 = two_norm(&m);
        assert!(f.err <= 1e-12 * sigma1);
        assert!((&f.u * &f.rt - &m).norm() <= 1e-12 * sigma1);
    }

    #[test]
    fn truncated_svd_meets_tolerance_vs_full_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let m = random_matrix(&mut rng, 20, 30);
        let eps = 0.3;
        let f = truncated_svd(&m, eps);
        let resid = &m - &f.u * &f.rt;
        let nm = two_norm(&m);
        assert!(two_norm(&resid) <= eps * nm + 1e-12);
        // oracle: recompute the full singular spectrum and check the rank rule
        let sigmas = m.clone().singular_values();
        let s: Vec<f64> = sigmas.as_slice().to_vec();
        let k = f.rank();
        assert!(s.get(k).copied().unwrap_or(0.0) <= eps * s[0]);
        if k > 0 {
            assert!(s[k - 1] > eps * s[0]);
        }
        // orthonormality
        let gram = f.u.transpose() * &f.u;
        assert!((gram - DMatrix::identity(k, k)).norm() <= 1e-12);
    }

    #[test]
    fn truncated_svd_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 12, 15);
        let f = truncated_svd(&m, 0.25);
        let recompressed = truncated_svd(&(&f.u * &f.rt), 0.25);
        assert_eq!(recompressed.rank(), f.rank());
        assert!(recompressed.err <= f.err + 1e-12);
    }

    #[test]
    fn truncated_svd_eps_zero_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(&mut rng, 8, 5);
        let f = truncated_svd(&m, 0.0);
        assert!((&f.u * &f.rt - &m).norm() <= 1e-13 * two_norm(&m));
    }

    #[test]
    fn abs_frobenius_rule() {
        let sig = [3.0, 2.0, 1.0, 0.5];
        // tail frob: k=2 -> sqrt(1+0.25)=1.118; k=3 -> 0.5
        assert_eq!(TolRule::AbsFrobenius(1.2).rank(&sig, 3.0), 2);
        assert_eq!(TolRule::AbsFrobenius(0.6).rank(&sig, 3.0), 3);
        assert_eq!(TolRule::AbsFrobenius(10.0).rank(&sig, 3.0), 0);
    }

    #[test]
    fn orthonormalize_drops_dependent_columns() {
        let mut m = DMatrix::zeros(4, 3);
        m.set_column(0, &DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]));
        m.set_column(1, &DVector::from_vec(vec![2.0, 0.0, 0.0, 0.0]));
        m.set_column(2, &DVector::from_vec(vec![1.0, 1.0, 0.0, 0.0]));
        let q = orthonormalize_cols(&m, 1e-12);
        assert_eq!(q.ncols(), 2);
        let gram = q.transpose() * &q;
        assert!((gram - DMatrix::identity(2, 2)).norm() <= 1e-13);
    }

    #[test]
    fn preserving_compress_contains_unit_vector() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_matrix(&mut rng, 6, 9);
        let e1 = DMatrix::from_fn(6, 1, |r, _| if r == 0 { 1.0 } else { 0.0 });
        let img = DMatrix::zeros(6, 0);
        let f = preserving_compress(&a, &e1, &img, 1.0);
        // e1 in span{U}: U U^T e1 = e1
        let p = &f.u * (f.u.transpose() * &e1);
        assert!((p - &e1).norm() <= 1e-12);
    }

    #[test]
    fn preserving_compress_empty_set_matches_svd() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let a = random_matrix(&mut rng, 10, 14);
        let none = DMatrix::zeros(10, 0);
        let f1 = preserving_compress(&a, &none, &none, 0.2);
        let f2 = truncated_svd(&a, 0.2);
        assert_eq!(f1.rank(), f2.rank());
        assert!((f1.err - f2.err).abs() <= 1e-14);
    }

    #[test]
    fn preserving_compress_residuals_and_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let b = random_matrix(&mut rng, 16, 24);
        let phi_x = random_matrix(&mut rng, 16, 1);
        let phi_y = random_matrix(&mut rng, 24, 1);
        let img = &b * &phi_y;
        let f = preserving_compress(&b, &phi_x, &img, 0.2);
        let nb = two_norm(&b);

        // overall error
        let approx = &f.u * &f.rt;
        assert!(two_norm(&(&b - &approx)) <= 0.2 * nb + 1e-12);
        // concatenated basis orthonormal
        let k = f.rank();
        let gram = f.u.transpose() * &f.u;
        assert!((gram - DMatrix::identity(k, k)).norm() <= 1e-12);
        // B phi_y preserved: (B - U R^T) phi_y ~ 0
        let r1 = (&b - &approx) * &phi_y;
        assert!(r1.norm() <= 1e-10 * nb * phi_y.norm());
        // B^T phi_x preserved: (B^T - R U^T) phi_x ~ 0
        let r2 = (b.transpose() - approx.transpose()) * &phi_x;
        assert!(r2.norm() <= 1e-10 * nb * phi_x.norm());
    }

    #[test]
    fn spd_factor_solves() {
        // identity
        let f = spd_factor(DMatrix::identity(3, 3), "t").unwrap();
        let rhs = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert_eq!(spd_solve(&f, &rhs), rhs);
        // hand inverse of [[2,1],[1,2]], rhs (1,0) -> (2/3, -1/3)
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let f = spd_factor(m, "t").unwrap();
        let x = spd_solve(&f, &DVector::from_vec(vec![1.0, 0.0]));
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-14);
        assert!((x[1] + 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn spd_factor_random_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = random_matrix(&mut rng, 8, 8);
        let m = &g * g.transpose() + DMatrix::identity(8, 8);
        let f = spd_factor(m.clone(), "t").unwrap();
        let rhs = random_matrix(&mut rng, 8, 1).column(0).into_owned();
        let x = spd_solve(&f, &rhs);
        assert!((m * x - rhs).norm() <= 1e-10);
    }

    #[test]
    fn spd_factor_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let e = spd_factor(m, "node 3 at level 1").unwrap_err();
        assert!(e.to_string().contains("node 3"));
    }

    #[test]
    fn spd_factor_zero_dim() {
        let f = spd_factor(DMatrix::zeros(0, 0), "t").unwrap();
        assert_eq!(f.inverse().nrows(), 0);
        assert_eq!(f.solve_vec(&DVector::zeros(0)).len(), 0);
    }

    fn check_all(res: &ProjectionResult) {
        for c in &res.checks {
            assert!(
                c.lhs <= c.rhs + 1e-10 * (1.0 + c.rhs.abs()),
                "{}: lhs {} > rhs {}",
                c.name,
                c.lhs,
                c.rhs
            );
        }
    }

    #[test]
    fn projections_reduce_to_svd_on_empty_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let b = random_matrix(&mut rng, 18, 12); // B is n_w x n_s
        let xs = DMatrix::zeros(12, 0);
        let xw = DMatrix::zeros(18, 0);
        for kind in [
            ProjectionKind::OneSided,
            ProjectionKind::SymmetricFirst,
            ProjectionKind::SymmetricSecond,
        ] {
            let res = project(kind, &b, &xs, &xw, 0.05, 0.3);
            let oracle = truncated_svd(&b.transpose(), 0.3);
            let d = &res.bt_approx - &oracle.u * &oracle.rt;
            assert!(d.norm() <= 1e-10 * two_norm(&b), "{kind:?}");
            check_all(&res);
        }
    }

    #[test]
    fn projections_exact_at_zero_eps() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let b = random_matrix(&mut rng, 10, 8);
        let xs = random_matrix(&mut rng, 8, 2);
        let xw = random_matrix(&mut rng, 10, 2);
        for kind in [
            ProjectionKind::OneSided,
            ProjectionKind::SymmetricFirst,
            ProjectionKind::SymmetricSecond,
        ] {
            let res = project(kind, &b, &xs, &xw, 0.0, 0.0);
            let d = &res.bt_approx - b.transpose();
            assert!(d.norm() <= 1e-11 * two_norm(&b), "{kind:?}");
        }
    }

    #[test]
    fn projection_bounds_random_instances() {
        // seeded sweep over all three schemes
        for seed in 0..25u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let b = random_matrix(&mut rng, 18, 12);
            let xs = random_matrix(&mut rng, 12, 2);
            let xw = random_matrix(&mut rng, 18, 2);
            for kind in [
                ProjectionKind::OneSided,
                ProjectionKind::SymmetricFirst,
                ProjectionKind::SymmetricSecond,
            ] {
                let res = project(kind, &b, &xs, &xw, 0.05, 0.3);
                check_all(&res);
            }
        }
    }

    #[test]
    fn projection_basis_reproduces_approximation() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let b = random_matrix(&mut rng, 14, 10);
        let xs = random_matrix(&mut rng, 10, 1);
        let xw = random_matrix(&mut rng, 14, 1);
        for kind in [
            ProjectionKind::OneSided,
            ProjectionKind::SymmetricFirst,
            ProjectionKind::SymmetricSecond,
        ] {
            let res = project(kind, &b, &xs, &xw, 0.05, 0.3);
            let f = res.to_low_rank();
            let d = &f.u * &f.rt - &res.bt_approx;
            assert!(d.norm() <= 1e-10 * (1.0 + two_norm(&res.bt_approx)), "{kind:?}");
        }
    }
}
