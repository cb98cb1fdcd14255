//! Desk-scale numerical verification: materialize the solve operator,
//! measure ||A - A_H||_F and kappa(A_H^{-1} A), reassemble the extended
//! factorization densely, and check the equivalent-extension identity and
//! the accumulation error bound.

use crate::error::{Error, Result};
use crate::factor::{ExtendedRecord, HFactorization};
use crate::sparse::SparseSymMatrix;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

pub const DESK_LIMIT: usize = 4096;

fn check_desk(n: usize) -> Result<()> {
    if n > DESK_LIMIT {
        return Err(Error::Unsupported(format!(
            "dense diagnostics limited to n <= {DESK_LIMIT}, got {n}"
        )));
    }
    Ok(())
}

/// Dense A_H^{-1}, column by column (column j = apply_inverse(e_j)).
pub fn materialize_solve_operator(h: &HFactorization) -> Result<DMatrix<f64>> {
    let n = h.n();
    check_desk(n)?;
    let cols: Vec<DVector<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = DVector::zeros(n);
            e[j] = 1.0;
            h.apply_inverse(&e).expect("dimension checked")
        })
        .collect();
    let mut m = DMatrix::zeros(n, n);
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    Ok(m)
}

/// A_H recovered by inverting the materialized solve operator (Cholesky
/// when SPD, LU otherwise).
pub fn recover_ah(hinv: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (hinv + hinv.transpose()) * 0.5;
    let ah = match sym.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => sym
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Singular("materialized solve operator".into()))?,
    };
    Ok((&ah + ah.transpose()) * 0.5)
}

fn factorization_error_from(hinv: &DMatrix<f64>, a: &SparseSymMatrix) -> Result<(f64, f64)> {
    let ah = recover_ah(hinv)?;
    let ad = a.to_dense();
    let diff = (&ad - &ah).norm();
    Ok((diff, diff / ad.norm()))
}

/// ||A - A_H||_F and its value relative to ||A||_F.
pub fn factorization_error(h: &HFactorization, a: &SparseSymMatrix) -> Result<(f64, f64)> {
    check_desk(a.n())?;
    let hinv = materialize_solve_operator(h)?;
    factorization_error_from(&hinv, a)
}

#[derive(Debug, Clone, Serialize)]
pub struct CondReport {
    /// kappa(A_H^{-1} A) as the ratio of extreme eigenvalues of the
    /// symmetrized pencil L^T A_H^{-1} L with A = L L^T.
    pub kappa: f64,
    /// c0: smallest eigenvalue of the pencil.
    pub lambda_min: f64,
    /// c1: largest eigenvalue of the pencil.
    pub lambda_max: f64,
    pub a_h_spd: bool,
    pub method: &'static str,
}

fn tridiag_extremes(alphas: &[f64], betas: &[f64]) -> (f64, f64) {
    let m = alphas.len();
    let mut tri = DMatrix::zeros(m, m);
    for i in 0..m {
        tri[(i, i)] = alphas[i];
        if i + 1 < m {
            tri[(i, i + 1)] = betas[i];
            tri[(i + 1, i)] = betas[i];
        }
    }
    let eig = tri.symmetric_eigen();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
        hi = hi.max(l);
    }
    (lo, hi)
}

/// Extreme eigenvalues of A_H^{-1} A by Lanczos in the A-inner product
/// (A_H^{-1} A is self-adjoint there), with full reorthogonalization and
/// early termination once both extremes settle.
fn lanczos_pencil_extremes(
    h: &HFactorization,
    a: &SparseSymMatrix,
    max_steps: usize,
) -> (f64, f64) {
    use rand::prelude::*;
    let n = a.n();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x1a2c);
    let mut v = DVector::from_fn(n, |_, _| rng.random::<f64>() - 0.5);
    let mut av = a.spmv(&v).expect("dim");
    let nrm = v.dot(&av).sqrt();
    v /= nrm;
    av /= nrm;
    let mut basis = vec![v];
    let mut images = vec![av]; // A v_j, cached for A-inner products
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();
    let mut last = (f64::NAN, f64::NAN);
    let steps = max_steps.min(n);
    for k in 0..steps {
        let mut w = h.apply_inverse(&images[k]).expect("dim");
        let alpha = w.dot(&images[k]);
        alphas.push(alpha);
        for _ in 0..2 {
            for (q, aq) in basis.iter().zip(&images) {
                let c = w.dot(aq);
                w.axpy(-c, q, 1.0);
            }
        }
        let aw = a.spmv(&w).expect("dim");
        let beta_sq = w.dot(&aw);
        let beta = beta_sq.max(0.0).sqrt();
        if beta < 1e-12 * alpha.abs().max(1.0) || k + 1 == steps {
            break;
        }
        betas.push(beta);
        basis.push(&w / beta);
        images.push(&aw / beta);
        if (k + 1) % 20 == 0 {
            let cur = tridiag_extremes(&alphas, &betas);
            let scale = cur.1.abs().max(1.0);
            if (cur.0 - last.0).abs() <= 1e-10 * scale
                && (cur.1 - last.1).abs() <= 1e-10 * scale
            {
                return cur;
            }
            last = cur;
        }
    }
    tridiag_extremes(&alphas, &betas)
}

/// kappa(A_H^{-1} A) as the extreme-eigenvalue ratio of the symmetrized
/// pencil. Dense generalized eigensolve up to 1500 unknowns, A-inner-product
/// Lanczos beyond.
pub fn preconditioned_condition_number(
    h: &HFactorization,
    a: &SparseSymMatrix,
) -> Result<CondReport> {
    preconditioned_condition_number_with(h, a, None)
}

fn preconditioned_condition_number_with(
    h: &HFactorization,
    a: &SparseSymMatrix,
    premade: Option<&DMatrix<f64>>,
) -> Result<CondReport> {
    let n = a.n();
    check_desk(n)?;
    let (lambda_min, lambda_max, method) = if n <= 1500 {
        let ad = a.to_dense();
        let chol = ad
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotSpd { context: "system matrix".into() })?;
        let l = chol.l();
        let hinv = match premade {
            Some(m) => m.clone(),
            None => materialize_solve_operator(h)?,
        };
        let m = l.transpose() * &hinv * &l;
        let m = (&m + m.transpose()) * 0.5;
        let eig = m.symmetric_eigen();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in eig.eigenvalues.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi, "dense")
    } else {
        let (lo, hi) = lanczos_pencil_extremes(h, a, 400);
        (lo, hi, "lanczos")
    };
    Ok(CondReport {
        kappa: lambda_max / lambda_min,
        lambda_min,
        lambda_max,
        a_h_spd: lambda_min > 0.0,
        method,
    })
}

fn gather_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows.len(), x.ncols());
    for (li, &r) in rows.iter().enumerate() {
        m.row_mut(li).copy_from(&x.row(r));
    }
    m
}

fn add_rows(x: &mut DMatrix<f64>, rows: &[usize], add: &DMatrix<f64>) {
    for (li, &r) in rows.iter().enumerate() {
        for c in 0..x.ncols() {
            x[(r, c)] += add[(li, c)];
        }
    }
}

fn gather_cols(x: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(x.nrows(), cols.len());
    for (lj, &c) in cols.iter().enumerate() {
        m.column_mut(lj).copy_from(&x.column(c));
    }
    m
}

fn add_cols(x: &mut DMatrix<f64>, cols: &[usize], add: &DMatrix<f64>) {
    for (lj, &c) in cols.iter().enumerate() {
        for r in 0..x.nrows() {
            x[(r, c)] += add[(r, lj)];
        }
    }
}

fn set_block(x: &mut DMatrix<f64>, rows: &[usize], cols: &[usize], m: &DMatrix<f64>) {
    for (li, &r) in rows.iter().enumerate() {
        for (lj, &c) in cols.iter().enumerate() {
            x[(r, c)] = m[(li, lj)];
        }
    }
}

/// Reassemble the extended hierarchical factorization densely:
/// K_H = U_1 L_1 ... U_M L_M K_end L_M^T U_M^T ... L_1^T U_1^T,
/// applying each sparse factor as row/column updates.
pub fn assemble_extended(h: &HFactorization) -> Result<DMatrix<f64>> {
    let rec: &ExtendedRecord = h.extended_record().ok_or_else(|| {
        Error::InvalidConfig("factorization was built without record_extended".into())
    })?;
    let d = rec.total_slots;
    check_desk(d)?;
    let mut x = DMatrix::zeros(d, d);
    for nr in &rec.nodes {
        set_block(&mut x, &nr.s_slots, &nr.s_slots, &nr.a_ss);
        let neg_s = -&nr.s_mat;
        set_block(&mut x, &nr.b_slots, &nr.b_slots, &neg_s);
    }
    set_block(&mut x, &rec.root_slots, &rec.root_slots, &rec.root_matrix);

    for nr in rec.nodes.iter().rev() {
        // X <- L X L^T
        let xs = gather_rows(&x, &nr.s_slots);
        let xb = gather_rows(&x, &nr.b_slots);
        add_rows(&mut x, &nr.b_slots, &(&nr.l_bs * &xs));
        for nb in &nr.neighbors {
            add_rows(&mut x, &nb.slots, &(&nb.l_ns * &xs + &nb.l_nb * &xb));
        }
        add_rows(&mut x, &nr.r_slots, &(&nr.s_inv * &xb));
        let ys = gather_cols(&x, &nr.s_slots);
        let yb = gather_cols(&x, &nr.b_slots);
        add_cols(&mut x, &nr.b_slots, &(&ys * nr.l_bs.transpose()));
        for nb in &nr.neighbors {
            add_cols(
                &mut x,
                &nb.slots,
                &(&ys * nb.l_ns.transpose() + &yb * nb.l_nb.transpose()),
            );
        }
        add_cols(&mut x, &nr.r_slots, &(&yb * nr.s_inv.transpose()));

        // X <- U X U^T
        let xr = gather_rows(&x, &nr.r_slots);
        let xb = gather_rows(&x, &nr.b_slots);
        add_rows(&mut x, &nr.s_slots, &(&nr.u * &xr));
        add_rows(&mut x, &nr.w_slots, &(nr.rt.transpose() * &xb));
        let yr = gather_cols(&x, &nr.r_slots);
        let yb = gather_cols(&x, &nr.b_slots);
        add_cols(&mut x, &nr.s_slots, &(&yr * nr.u.transpose()));
        add_cols(&mut x, &nr.w_slots, &(&yb * &nr.rt));
    }
    Ok(x)
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtensionCheck {
    /// ||Schur_f(K_H) - A||_F.
    pub defect_frob: f64,
    pub defect_rel: f64,
    pub pass: bool,
}

/// Equivalent-extension check: Schur-complement the assembled
/// extended matrix onto the original unknowns and compare with A. The
/// identity holds to roundoff at eps = 0; at eps > 0 the defect measures
/// the accumulated compression error.
pub fn verify_equivalent_extension(
    a: &SparseSymMatrix,
    k_ext: &DMatrix<f64>,
) -> Result<ExtensionCheck> {
    let n = a.n();
    let d = k_ext.nrows();
    let ah = schur_onto_leading(k_ext, n)?;
    let ad = a.to_dense();
    let defect = (&ad - &ah).norm();
    let rel = defect / ad.norm();
    debug_assert!(d >= n);
    Ok(ExtensionCheck {
        defect_frob: defect,
        defect_rel: rel,
        pass: rel <= 1e-10,
    })
}

/// K_ff - K_fc K_cc^{-1} K_cf for the leading f = 0..n block.
pub fn schur_onto_leading(k_ext: &DMatrix<f64>, n: usize) -> Result<DMatrix<f64>> {
    let d = k_ext.nrows();
    let m = d - n;
    let k_ff = k_ext.view((0, 0), (n, n)).into_owned();
    if m == 0 {
        return Ok(k_ff);
    }
    let k_fc = k_ext.view((0, n), (n, m)).into_owned();
    let k_cf = k_ext.view((n, 0), (m, n)).into_owned();
    let k_cc = k_ext.view((n, n), (m, m)).into_owned();
    let lu = k_cc.lu();
    let sol = lu
        .solve(&k_cf)
        .ok_or_else(|| Error::Singular("extended auxiliary block".into()))?;
    Ok(&k_ff - &k_fc * sol)
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorBoundCheck {
    pub measured_error_frob: f64,
    pub bound: f64,
    pub kcc_inv_kcf_frob: f64,
    pub kcc_inv_frob: f64,
    /// sqrt(2) * sum of per-step ||E_sw||_F.
    pub total_step_error: f64,
    pub pass: bool,
}

/// Error-accumulation check: the measured ||A - A_H||_F must stay under
/// sqrt(1 + 2||K_cc^{-1}K_cf||_F^2) * E + ||K_cc^{-1}||_F * E^2 with E the
/// accumulated per-step truncation error.
pub fn error_bound_check(h: &HFactorization, a: &SparseSymMatrix) -> Result<ErrorBoundCheck> {
    let n = a.n();
    let k_ext = assemble_extended(h)?;
    let d = k_ext.nrows();
    let m = d - n;
    let ah = schur_onto_leading(&k_ext, n)?;
    let measured = (a.to_dense() - &ah).norm();

    let step_sum: f64 = h
        .extended_record()
        .expect("assemble_extended succeeded")
        .nodes
        .iter()
        .map(|nr| nr.err_frob)
        .sum();
    let total = 2f64.sqrt() * step_sum;

    let (kcc_inv_kcf, kcc_inv) = if m == 0 {
        (0.0, 0.0)
    } else {
        let k_cf = k_ext.view((n, 0), (m, n)).into_owned();
        let k_cc = k_ext.view((n, n), (m, m)).into_owned();
        let lu = k_cc.lu();
        let x = lu
            .solve(&k_cf)
            .ok_or_else(|| Error::Singular("extended auxiliary block".into()))?;
        let inv = lu
            .try_inverse()
            .ok_or_else(|| Error::Singular("extended auxiliary block".into()))?;
        (x.norm(), inv.norm())
    };
    let bound = (1.0 + 2.0 * kcc_inv_kcf * kcc_inv_kcf).sqrt() * total + kcc_inv * total * total;
    Ok(ErrorBoundCheck {
        measured_error_frob: measured,
        bound,
        kcc_inv_kcf_frob: kcc_inv_kcf,
        kcc_inv_frob: kcc_inv,
        total_step_error: total,
        pass: measured <= bound * (1.0 + 1e-9) + 1e-12,
    })
}

/// Rayleigh-quotient floor of the A-orthogonal complement of span{v}
/// (Example-2 style two-subspace split).
pub fn complement_rayleigh_floor(a: &SparseSymMatrix, v: &DVector<f64>) -> Result<f64> {
    let n = a.n();
    if n > 1500 {
        return Err(Error::Unsupported(
            "complement Rayleigh floor limited to n <= 1500".into(),
        ));
    }
    let av = a.spmv(v)?;
    // orthonormal basis of the complement of span{A v} via a Householder
    // reflector mapping A v onto e_1
    let mut u = av.clone();
    let alpha = u.norm();
    if alpha == 0.0 {
        return Err(Error::Singular("A v vanished".into()));
    }
    u[0] += if u[0] >= 0.0 { alpha } else { -alpha };
    let un = u.norm();
    let u = u / un;
    // columns 1..n of H = I - 2 u u^T span the complement
    let ad = a.to_dense();
    let mut q = DMatrix::zeros(n, n - 1);
    for j in 1..n {
        let mut col = DVector::zeros(n);
        col[j] = 1.0;
        let c = 2.0 * u[j];
        col.axpy(-c, &u, 1.0);
        q.set_column(j - 1, &col);
    }
    let proj = q.transpose() * &ad * &q;
    let proj = (&proj + proj.transpose()) * 0.5;
    let eig = proj.symmetric_eigen();
    let mut lo = f64::INFINITY;
    for &l in eig.eigenvalues.iter() {
        lo = lo.min(l);
    }
    Ok(lo)
}

#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsReport {
    pub n: usize,
    pub eps: f64,
    pub mode: String,
    pub kappa: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub a_h_spd: bool,
    pub eig_method: &'static str,
    pub factorization_error_frob: f64,
    pub factorization_error_rel: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub preservation_residuals: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub extension_check: Option<ExtensionCheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_bound: Option<ErrorBoundCheck>,
}

/// The full desk-scale report for one factorization.
pub fn run_diagnostics(h: &HFactorization, a: &SparseSymMatrix) -> Result<DiagnosticsReport> {
    check_desk(a.n())?;
    let hinv = materialize_solve_operator(h)?;
    let cond = preconditioned_condition_number_with(h, a, Some(&hinv))?;
    let (err_frob, err_rel) = factorization_error_from(&hinv, a)?;
    let mut preservation = Vec::new();
    if let Some(phis) = h.preserved_vectors() {
        for phi in phis {
            let x = h.apply_inverse(&a.spmv(phi)?)?;
            preservation.push((&x - phi).norm() / phi.norm());
        }
    }
    let mu2 = match h.preserved_vectors() {
        Some(phis) if a.n() <= 1500 && !phis.is_empty() => {
            complement_rayleigh_floor(a, &phis[0]).ok()
        }
        _ => None,
    };
    let (extension_check, error_bound) = if h.extended_record().is_some() {
        let k_ext = assemble_extended(h)?;
        (
            Some(verify_equivalent_extension(a, &k_ext)?),
            Some(error_bound_check(h, a)?),
        )
    } else {
        (None, None)
    };
    Ok(DiagnosticsReport {
        n: a.n(),
        eps: h.config().eps,
        mode: h.config().mode.name().to_string(),
        kappa: cond.kappa,
        lambda_min: cond.lambda_min,
        lambda_max: cond.lambda_max,
        a_h_spd: cond.a_h_spd,
        eig_method: cond.method,
        factorization_error_frob: err_frob,
        factorization_error_rel: err_rel,
        preservation_residuals: preservation,
        mu2,
        extension_check,
        error_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factor::{factorize, Mode, SolverConfig, Truncation};
    use crate::hierarchy::{ClusterHierarchy, WellSepPredicate};
    use crate::problems::{poisson_matrix, Coefficient, GridSpec};

    fn poisson(k: usize) -> (SparseSymMatrix, Vec<[f64; 3]>) {
        let spec = GridSpec::new(2, k, Coefficient::Constant(1.0)).unwrap();
        poisson_matrix(&spec).unwrap()
    }

    fn factor(
        a: &SparseSymMatrix,
        coords: &[[f64; 3]],
        depth: usize,
        eps: f64,
        mode: Mode,
        record: bool,
    ) -> HFactorization {
        let hier =
            ClusterHierarchy::build(a, Some(coords), depth, WellSepPredicate::Geometric).unwrap();
        let cfg = SolverConfig {
            eps,
            mode,
            record_extended: record,
            ..SolverConfig::default()
        };
        factorize(a, &hier, &cfg, None).unwrap()
    }

    #[test]
    fn materialize_identity_matrix() {
        let a = SparseSymMatrix::identity(16);
        let hier =
            ClusterHierarchy::build(&a, None, 2, WellSepPredicate::GraphAdjacency).unwrap();
        let h = factorize(&a, &hier, &SolverConfig::default(), None).unwrap();
        let hinv = materialize_solve_operator(&h).unwrap();
        assert!((hinv - DMatrix::<f64>::identity(16, 16)).norm() <= 1e-12);
    }

    #[test]
    fn eps_zero_recovers_a() {
        let (a, coords) = poisson(8);
        let h = factor(&a, &coords, 3, 0.0, Mode::LoRaSp, false);
        let hinv = materialize_solve_operator(&h).unwrap();
        let ah = recover_ah(&hinv).unwrap();
        let ad = a.to_dense();
        assert!((ah - &ad).norm() <= 1e-9 * ad.norm());
        let (_, rel) = factorization_error(&h, &a).unwrap();
        assert!(rel <= 1e-9);
    }

    #[test]
    fn kappa_one_at_eps_zero() {
        let (a, coords) = poisson(8);
        let h = factor(&a, &coords, 3, 0.0, Mode::LoRaSp, false);
        let rep = preconditioned_condition_number(&h, &a).unwrap();
        assert!(rep.a_h_spd);
        assert!((rep.kappa - 1.0).abs() <= 1e-8, "kappa {}", rep.kappa);
    }

    #[test]
    fn kappa_at_least_one_and_error_monotone_in_eps() {
        let (a, coords) = poisson(16);
        let h1 = factor(&a, &coords, 5, 0.1, Mode::LoRaSp, false);
        let h3 = factor(&a, &coords, 5, 0.3, Mode::LoRaSp, false);
        let r1 = preconditioned_condition_number(&h1, &a).unwrap();
        let r3 = preconditioned_condition_number(&h3, &a).unwrap();
        assert!(r1.kappa >= 1.0 - 1e-8);
        assert!(r3.kappa >= 1.0 - 1e-8);
        let (e1, _) = factorization_error(&h1, &a).unwrap();
        let (e3, _) = factorization_error(&h3, &a).unwrap();
        assert!(e3 >= e1, "error(0.3)={e3} < error(0.1)={e1}");
    }

    #[test]
    fn gc_constant_beats_lorasp_kappa() {
        let (a, coords) = poisson(16);
        let hl = factor(&a, &coords, 5, 0.1, Mode::LoRaSp, false);
        let hg = factor(&a, &coords, 5, 0.1, Mode::GcConstant, false);
        let rl = preconditioned_condition_number(&hl, &a).unwrap();
        let rg = preconditioned_condition_number(&hg, &a).unwrap();
        assert!(
            rg.kappa < rl.kappa,
            "gc {} vs lorasp {}",
            rg.kappa,
            rl.kappa
        );
    }

    #[test]
    fn lanczos_matches_dense_eig() {
        let (a, coords) = poisson(16);
        let h = factor(&a, &coords, 5, 0.2, Mode::LoRaSp, false);
        let rep = preconditioned_condition_number(&h, &a).unwrap();
        assert_eq!(rep.method, "dense");
        let (lo, hi) = lanczos_pencil_extremes(&h, &a, 400);
        assert!(
            (lo - rep.lambda_min).abs() <= 1e-7 * rep.lambda_max,
            "lanczos {lo} vs dense {}",
            rep.lambda_min
        );
        assert!((hi - rep.lambda_max).abs() <= 1e-7 * rep.lambda_max);
    }

    #[test]
    fn extension_identity_exact_at_eps_zero() {
        // 1D chain n=64 with genuine multilevel compression
        let mut t = Vec::new();
        for i in 0..64 {
            t.push((i, i, 2.0));
            if i + 1 < 64 {
                t.push((i, i + 1, -1.0));
            }
        }
        let a = SparseSymMatrix::from_triplets(64, &t).unwrap();
        let hier =
            ClusterHierarchy::build(&a, None, 5, WellSepPredicate::GraphAdjacency).unwrap();
        let cfg = SolverConfig {
            eps: 0.0,
            record_extended: true,
            ..SolverConfig::default()
        };
        let h = factorize(&a, &hier, &cfg, None).unwrap();
        let k_ext = assemble_extended(&h).unwrap();
        assert!((&k_ext - k_ext.transpose()).norm() <= 1e-10 * k_ext.norm());
        let check = verify_equivalent_extension(&a, &k_ext).unwrap();
        assert!(check.pass, "defect {}", check.defect_rel);

        // at eps = 0 the reassembled product must reproduce the base
        // extended matrix entrywise: A on the original slots and the
        // black/red -I couplings, nothing else
        let rec = h.extended_record().unwrap();
        let d = rec.total_slots;
        let mut k_base = DMatrix::<f64>::zeros(d, d);
        k_base.view_mut((0, 0), (64, 64)).copy_from(&a.to_dense());
        for nr in &rec.nodes {
            for (&bs, &rs) in nr.b_slots.iter().zip(&nr.r_slots) {
                k_base[(bs, rs)] = -1.0;
                k_base[(rs, bs)] = -1.0;
            }
        }
        let defect = (&k_ext - &k_base).norm() / k_base.norm();
        assert!(defect <= 1e-11, "entrywise reassembly defect {defect}");

        // the telescoped Schur complement agrees with the inverse of the
        // materialized solve operator
        let ah_schur = schur_onto_leading(&k_ext, 64).unwrap();
        let hinv = materialize_solve_operator(&h).unwrap();
        let ah_inv = recover_ah(&hinv).unwrap();
        assert!((&ah_schur - &ah_inv).norm() <= 1e-8 * ah_inv.norm());
    }

    #[test]
    fn extension_defect_matches_factorization_error() {
        let (a, coords) = poisson(16);
        let h = factor(&a, &coords, 5, 0.2, Mode::LoRaSp, true);
        let k_ext = assemble_extended(&h).unwrap();
        let check = verify_equivalent_extension(&a, &k_ext).unwrap();
        assert!(!check.pass);
        let (err, _) = factorization_error(&h, &a).unwrap();
        // both routes measure ||A - A_H||_F
        assert!(
            (check.defect_frob - err).abs() <= 1e-6 * err.max(1.0),
            "schur {} vs inverse {err}",
            check.defect_frob
        );
    }

    #[test]
    fn error_bound_holds_abs_frobenius() {
        let (a, coords) = poisson(16);
        let hier =
            ClusterHierarchy::build(&a, Some(&coords), 5, WellSepPredicate::Geometric).unwrap();
        for eps in [0.05, 0.2] {
            let cfg = SolverConfig {
                eps,
                truncation: Truncation::AbsFrobenius,
                record_extended: true,
                ..SolverConfig::default()
            };
            let h = factorize(&a, &hier, &cfg, None).unwrap();
            let check = error_bound_check(&h, &a).unwrap();
            assert!(
                check.pass,
                "measured {} bound {}",
                check.measured_error_frob, check.bound
            );
        }
    }

    #[test]
    fn report_serializes() {
        let (a, coords) = poisson(8);
        let h = factor(&a, &coords, 3, 0.1, Mode::GcConstant, true);
        let rep = run_diagnostics(&h, &a).unwrap();
        assert!(rep.kappa >= 1.0 - 1e-8);
        assert_eq!(rep.preservation_residuals.len(), 1);
        assert!(rep.preservation_residuals[0] <= 1e-9);
        assert!(rep.mu2.is_some());
        let s = serde_json::to_string_pretty(&rep).unwrap();
        assert!(s.contains("kappa"));
    }

    #[test]
    fn desk_limit_enforced() {
        let spec = GridSpec::new(2, 70, Coefficient::Constant(1.0)).unwrap();
        let (a, coords) = poisson_matrix(&spec).unwrap();
        let h = factor(&a, &coords, 9, 0.1, Mode::LoRaSp, false);
        assert!(materialize_solve_operator(&h).is_err());
    }
}
