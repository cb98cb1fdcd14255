//! Benchmark problem generators: 2D/3D central finite-difference Poisson
//! matrices with constant, piecewise-constant, and random edge coefficients,
//! analytic eigen-data for the constant case, and MatrixMarket I/O.
//!
//! Stencil entries are h^2-scaled (the constant-coefficient diagonal is 4 in
//! 2D, 6 in 3D). Iteration counts of the solvers under test are invariant to
//! this scaling. Unknowns are the interior points of a (k+2)^d lattice with
//! homogeneous Dirichlet boundary, ordered x-fastest.

use crate::error::{Error, Result};
use crate::sparse::SparseSymMatrix;
use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    /// alpha = 1e-5 on the inner cube [1/4,3/4]^d, 1 outside.
    Piecewise,
    /// One uniform [0,1] sample per lattice edge, reproducible by seed.
    Random { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub k: usize,
    pub coeff: Coefficient,
}

impl GridSpec {
    pub fn new(dim: usize, k: usize, coeff: Coefficient) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::InvalidConfig(format!("dim must be 2 or 3, got {dim}")));
        }
        if k < 2 {
            return Err(Error::InvalidConfig(format!("k must be >= 2, got {k}")));
        }
        Ok(Self { dim, k, coeff })
    }

    pub fn n(&self) -> usize {
        self.k.pow(self.dim as u32)
    }

    pub fn h(&self) -> f64 {
        1.0 / (self.k as f64 + 1.0)
    }
}

const INNER_ALPHA: f64 = 1e-5;

fn piecewise_alpha(mid: &[f64]) -> f64 {
    if mid.iter().all(|&x| (0.25..=0.75).contains(&x)) {
        INNER_ALPHA
    } else {
        1.0
    }
}

/// Assemble the Poisson matrix and the interior-point coordinates.
///
/// Variable coefficients live on lattice edges: each edge contributes
/// -alpha_e off-diagonal (interior-interior edges only) and +alpha_e to the
/// diagonal of each interior endpoint, so boundary edges stiffen the
/// diagonal and the matrix stays SPD.
pub fn poisson_matrix(spec: &GridSpec) -> Result<(SparseSymMatrix, Vec<[f64; 3]>)> {
    let k = spec.k;
    let h = spec.h();
    let dim = spec.dim;
    let n = spec.n();

    let interior_index = |p: &[usize; 3]| -> Option<usize> {
        // lattice point -> interior unknown id (x-fastest)
        if p[..dim].iter().any(|&c| c == 0 || c == k + 1) {
            return None;
        }
        let mut idx = 0usize;
        for d in (0..dim).rev() {
            idx = idx * k + (p[d] - 1);
        }
        Some(idx)
    };

    let mut rng = match spec.coeff {
        Coefficient::Random { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };

    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut diag = vec![0.0f64; n];

    // canonical edge sweep: for each axis, every lattice point with a
    // +1 neighbor along that axis, in a fixed lexicographic order
    let kk = k + 2;
    let mut p = [0usize; 3];
    for axis in 0..dim {
        let mut count = [kk; 3];
        for (d, c) in count.iter_mut().enumerate().take(3) {
            if d >= dim {
                *c = 1;
            }
        }
        count[axis] = kk - 1;
        for z in 0..count[2] {
            for y in 0..count[1] {
                for x in 0..count[0] {
                    p[0] = x;
                    p[1] = y;
                    p[2] = z;
                    let mut q = p;
                    q[axis] += 1;
                    let a = interior_index(&p);
                    let b = interior_index(&q);
                    if a.is_none() && b.is_none() {
                        continue;
                    }
                    let alpha = match spec.coeff {
                        Coefficient::Constant(c) => c,
                        Coefficient::Piecewise => {
                            let mut mid = [0.0f64; 3];
                            for d in 0..dim {
                                mid[d] = (p[d] as f64 + q[d] as f64) * 0.5 * h;
                            }
                            piecewise_alpha(&mid[..dim])
                        }
                        Coefficient::Random { .. } => {
                            rng.as_mut().unwrap().random::<f64>()
                        }
                    };
                    if let Some(i) = a {
                        diag[i] += alpha;
                    }
                    if let Some(j) = b {
                        diag[j] += alpha;
                    }
                    if let (Some(i), Some(j)) = (a, b) {
                        triplets.push((i, j, -alpha));
                    }
                }
            }
        }
    }
    for (i, &d) in diag.iter().enumerate() {
        triplets.push((i, i, d));
    }
    let a = SparseSymMatrix::from_triplets(n, &triplets)?;

    let mut coords = Vec::with_capacity(n);
    match dim {
        2 => {
            for j in 1..=k {
                for i in 1..=k {
                    coords.push([i as f64 * h, j as f64 * h, 0.0]);
                }
            }
        }
        _ => {
            for m in 1..=k {
                for j in 1..=k {
                    for i in 1..=k {
                        coords.push([i as f64 * h, j as f64 * h, m as f64 * h]);
                    }
                }
            }
        }
    }
    // coordinate order must match unknown order
    debug_assert_eq!(coords.len(), n);
    Ok((a, coords))
}

/// Eigenvalue of the h^2-scaled constant-coefficient stencil for mode
/// indices (modes are 1-based).
pub fn stencil_eigenvalue(dim: usize, k: usize, modes: &[usize]) -> f64 {
    let denom = k as f64 + 1.0;
    let mut lam = 2.0 * dim as f64;
    for &m in modes.iter().take(dim) {
        lam -= 2.0 * (std::f64::consts::PI * m as f64 / denom).cos();
    }
    lam
}

/// Unit-norm eigenvector of the smallest eigenvalue.
///
/// Constant coefficients have the analytic sine mode at any size; variable
/// coefficients fall back to a dense eigensolver and are limited to
/// n <= 4096.
pub fn smallest_eigenvector(spec: &GridSpec) -> Result<DVector<f64>> {
    match spec.coeff {
        Coefficient::Constant(_) => {
            let k = spec.k;
            let denom = k as f64 + 1.0;
            let s = |i: usize| (std::f64::consts::PI * i as f64 / denom).sin();
            let n = spec.n();
            let mut v = DVector::zeros(n);
            let mut idx = 0usize;
            if spec.dim == 2 {
                for j in 1..=k {
                    for i in 1..=k {
                        v[idx] = s(i) * s(j);
                        idx += 1;
                    }
                }
            } else {
                for m in 1..=k {
                    for j in 1..=k {
                        for i in 1..=k {
                            v[idx] = s(i) * s(j) * s(m);
                            idx += 1;
                        }
                    }
                }
            }
            let norm = v.norm();
            Ok(v / norm)
        }
        _ => {
            if spec.n() > 4096 {
                return Err(Error::Unsupported(format!(
                    "dense eigensolver limited to n <= 4096, got {}",
                    spec.n()
                )));
            }
            let (a, _) = poisson_matrix(spec)?;
            let dense = a.to_dense();
            let eig = dense.symmetric_eigen();
            let mut best = 0usize;
            for i in 1..eig.eigenvalues.len() {
                if eig.eigenvalues[i] < eig.eigenvalues[best] {
                    best = i;
                }
            }
            let v = eig.eigenvectors.column(best).into_owned();
            let norm = v.norm();
            Ok(v / norm)
        }
    }
}

/// Read a MatrixMarket "coordinate real symmetric" file; the stored triangle
/// is mirrored on load.
pub fn read_matrix_market<P: AsRef<Path>>(path: P) -> Result<SparseSymMatrix> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, msg: "empty file".into() })?;
    let header = header?;
    let toks: Vec<String> = header.split_whitespace().map(|t| t.to_lowercase()).collect();
    if toks.len() < 5
        || toks[0] != "%%matrixmarket"
        || toks[1] != "matrix"
        || toks[2] != "coordinate"
        || toks[3] != "real"
    {
        return Err(Error::Parse {
            line: 1,
            msg: format!("expected '%%MatrixMarket matrix coordinate real symmetric', got '{header}'"),
        });
    }
    if toks[4] != "symmetric" {
        return Err(Error::Parse {
            line: 1,
            msg: format!("only symmetric matrices are supported, got '{}'", toks[4]),
        });
    }

    let mut size: Option<(usize, usize, usize)> = None;
    let mut entries: Vec<(usize, usize, f64)> = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('%') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: lineno + 1, msg };
        let toks: Vec<&str> = line.split_whitespace().collect();
        match size {
            None => {
                if toks.len() != 3 {
                    return Err(parse_err("expected 'rows cols nnz'".into()));
                }
                let r: usize = toks[0].parse().map_err(|e| parse_err(format!("{e}")))?;
                let c: usize = toks[1].parse().map_err(|e| parse_err(format!("{e}")))?;
                let z: usize = toks[2].parse().map_err(|e| parse_err(format!("{e}")))?;
                if r != c {
                    return Err(parse_err(format!("matrix must be square, got {r}x{c}")));
                }
                size = Some((r, c, z));
                entries.reserve(z);
            }
            Some((r, _, _)) => {
                if toks.len() != 3 {
                    return Err(parse_err("expected 'i j value'".into()));
                }
                let i: usize = toks[0].parse().map_err(|e| parse_err(format!("{e}")))?;
                let j: usize = toks[1].parse().map_err(|e| parse_err(format!("{e}")))?;
                let v: f64 = toks[2].parse().map_err(|e| parse_err(format!("{e}")))?;
                if i == 0 || j == 0 || i > r || j > r {
                    return Err(parse_err(format!("index ({i},{j}) out of range 1..={r}")));
                }
                entries.push((i - 1, j - 1, v));
            }
        }
    }
    let (n, _, z) = size.ok_or_else(|| Error::Parse { line: 2, msg: "missing size line".into() })?;
    if entries.len() != z {
        return Err(Error::Parse {
            line: 0,
            msg: format!("expected {z} entries, found {}", entries.len()),
        });
    }
    SparseSymMatrix::from_triplets(n, &entries)
}

/// Write the lower triangle in coordinate real symmetric format with 17
/// significant digits, enough to round-trip f64 exactly.
pub fn write_matrix_market<P: AsRef<Path>>(a: &SparseSymMatrix, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    writeln!(w, "%%MatrixMarket matrix coordinate real symmetric")?;
    let mut lower: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..a.n() {
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            if j <= i && v != 0.0 {
                lower.push((i, j, v));
            }
        }
    }
    writeln!(w, "{} {} {}", a.n(), a.n(), lower.len())?;
    for (i, j, v) in lower {
        writeln!(w, "{} {} {:.16e}", i + 1, j + 1, v)?;
    }
    w.flush()?;
    Ok(())
}
