//! Sparse symmetric matrix storage, block extraction against a cluster
//! partition, and the block-level adjacency graph.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

/// Symmetric sparse matrix in compressed-row form.
///
/// Both triangles are stored explicitly, which doubles memory but makes block
/// extraction a plain row scan. Indices are 0-based; the MatrixMarket reader
/// converts from 1-based at the I/O boundary.
#[derive(Debug, Clone)]
pub struct SparseSymMatrix {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSymMatrix {
    /// Build from triplets. Duplicate entries are summed; missing mirror
    /// entries are filled in so both triangles end up stored, and a diagonal
    /// slot is kept on every row.
    pub fn from_triplets(n: usize, entries: &[(usize, usize, f64)]) -> Result<Self> {
        let mut map: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for &(i, j, v) in entries {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: i.max(j) + 1,
                    context: "triplet index out of range".into(),
                });
            }
            *map.entry((i, j)).or_insert(0.0) += v;
        }
        // Mirror whichever triangle was given.
        let keys: Vec<(usize, usize)> = map.keys().copied().collect();
        for (i, j) in keys {
            if i != j {
                let v = map[&(i, j)];
                map.entry((j, i)).or_insert(v);
            }
        }
        for i in 0..n {
            map.entry((i, i)).or_insert(0.0);
        }

        let mut row_offsets = vec![0usize; n + 1];
        for &(i, _) in map.keys() {
            row_offsets[i + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let mut col_indices = Vec::with_capacity(map.len());
        let mut values = Vec::with_capacity(map.len());
        for ((_, j), v) in map {
            col_indices.push(j);
            values.push(v);
        }
        Ok(Self {
            n,
            row_offsets,
            col_indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        let entries: Vec<_> = (0..n).map(|i| (i, i, 1.0)).collect();
        Self::from_triplets(n, &entries).expect("identity build")
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.row_offsets[i], self.row_offsets[i + 1]);
        (&self.col_indices[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => 0.0,
        }
    }

    /// ‖A − Aᵀ‖_F at storage level.
    pub fn symmetry_defect(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                let d = v - self.get(j, i);
                acc += d * d;
            }
        }
        acc.sqrt()
    }

    /// y = Ax.
    pub fn spmv(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
                context: "spmv input".into(),
            });
        }
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            let mut acc = 0.0;
            for (&j, &v) in cols.iter().zip(vals) {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        Ok(y)
    }

    /// ‖b − Ax‖₂.
    pub fn residual_norm(&self, x: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: b.len(),
                context: "residual rhs".into(),
            });
        }
        let ax = self.spmv(x)?;
        Ok((b - ax).norm())
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

/// Dense copy of A(rows, cols); zeros where no entry is stored.
pub fn extract_block(a: &SparseSymMatrix, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    let mut pos: BTreeMap<usize, usize> = BTreeMap::new();
    for (p, &c) in cols.iter().enumerate() {
        pos.insert(c, p);
    }
    let mut block = DMatrix::zeros(rows.len(), cols.len());
    for (li, &gi) in rows.iter().enumerate() {
        let (rcols, rvals) = a.row(gi);
        for (&gj, &v) in rcols.iter().zip(rvals) {
            if let Some(&lj) = pos.get(&gj) {
                block[(li, lj)] = v;
            }
        }
    }
    block
}

/// Disjoint clusters covering the index set {0..n-1}.
#[derive(Debug, Clone)]
pub struct ClusterPartition {
    cluster_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClusterPartition {
    /// Build from member lists; checks disjoint exact cover of {0..n-1}.
    pub fn new(n: usize, members: Vec<Vec<usize>>) -> Result<Self> {
        let mut cluster_of = vec![usize::MAX; n];
        let mut seen = 0usize;
        for (c, list) in members.iter().enumerate() {
            for &i in list {
                if i >= n {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} out of range for n={n}"
                    )));
                }
                if cluster_of[i] != usize::MAX {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} assigned to clusters {} and {c}",
                        cluster_of[i]
                    )));
                }
                cluster_of[i] = c;
                seen += 1;
            }
        }
        if seen != n {
            return Err(Error::InvalidPartition(format!(
                "partition covers {seen} of {n} indices"
            )));
        }
        let mut members = members;
        for list in &mut members {
            list.sort_unstable();
        }
        Ok(Self {
            cluster_of,
            members,
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.members.len()
    }

    pub fn cluster_of(&self, i: usize) -> usize {
        self.cluster_of[i]
    }

    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    pub fn n(&self) -> usize {
        self.cluster_of.len()
    }
}

/// Cluster-level adjacency: edge (i, j) iff block A_{I_i I_j} has a
/// structural nonzero. Self-edges are excluded.
#[derive(Debug, Clone)]
pub struct BlockGraph {
    adjacency: Vec<Vec<usize>>,
}

impl BlockGraph {
    pub fn num_clusters(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, c: usize) -> &[usize] {
        &self.adjacency[c]
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(|l| l.len()).sum::<usize>() / 2
    }
}

pub fn build_block_graph(a: &SparseSymMatrix, part: &ClusterPartition) -> Result<BlockGraph> {
    if part.n() != a.n() {
        return Err(Error::InvalidPartition(format!(
            "partition over {} indices, matrix has {}",
            part.n(),
            a.n()
        )));
    }
    let nc = part.num_clusters();
    let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); nc];
    for i in 0..a.n() {
        let ci = part.cluster_of(i);
        let (cols, vals) = a.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            let cj = part.cluster_of(j);
            if ci != cj && v != 0.0 {
                adjacency[ci].push(cj);
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    Ok(BlockGraph { adjacency })
}
