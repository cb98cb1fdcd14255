//! Solve phase: apply the inverse of the hierarchical operator by forward
//! substitution, restriction, recursive parent solve, prolongation, and
//! backward substitution, batched level by level.

use crate::error::{Error, Result};
use crate::factor::{HFactorization, NodeRef};
use crate::sparse::SparseSymMatrix;
use nalgebra::DVector;

/// Deterministic linear map; both the system matrix and the factorization
/// inverse are driven through this for the Krylov loops.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply_to(&self, v: &DVector<f64>) -> DVector<f64>;
}

impl LinearOperator for SparseSymMatrix {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply_to(&self, v: &DVector<f64>) -> DVector<f64> {
        self.spmv(v).expect("spmv dimension")
    }
}

/// Handle exposing `apply_inverse` as a linear operator.
pub struct HInverse<'a>(&'a HFactorization);

impl LinearOperator for HInverse<'_> {
    fn dim(&self) -> usize {
        self.0.n()
    }

    fn apply_to(&self, v: &DVector<f64>) -> DVector<f64> {
        self.0.apply_inverse(v).expect("apply_inverse dimension")
    }
}

pub fn as_linear_operator(h: &HFactorization) -> HInverse<'_> {
    HInverse(h)
}

impl HFactorization {
    /// x = A_H^{-1} b.
    pub fn apply_inverse(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        if b.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: b.len(),
                context: "apply_inverse rhs".into(),
            });
        }
        let leaf_rhs: Vec<DVector<f64>> = self
            .leaf_index_sets
            .iter()
            .map(|set| DVector::from_fn(set.len(), |r, _| b[set[r]]))
            .collect();
        let leaf_x = self.solve_level(0, leaf_rhs);
        let mut x = DVector::zeros(self.n);
        for (set, seg) in self.leaf_index_sets.iter().zip(&leaf_x) {
            for (r, &g) in set.iter().enumerate() {
                x[g] = seg[r];
            }
        }
        Ok(x)
    }

    fn solve_level(&self, t: usize, rhs: Vec<DVector<f64>>) -> Vec<DVector<f64>> {
        if t == self.levels.len() {
            return vec![self.root.solve_vec(&rhs[0])];
        }
        let lf = &self.levels[t];
        let n_sup = lf.nodes.len();
        let mut work = rhs;
        let mut red_rhs: Vec<DVector<f64>> =
            lf.red_dims.iter().map(|&d| DVector::zeros(d)).collect();

        // forward substitution and restriction, in elimination order
        for i in 0..n_sup {
            let node = &lf.nodes[i];
            let (m, p) = node.forward_components(&work[i]);
            for (nref, a_sn) in node.neighbors() {
                let upd = a_sn.transpose() * &m;
                match *nref {
                    NodeRef::Sup(j) => work[j] -= &upd,
                    NodeRef::Red(j) => red_rhs[j] -= &upd,
                }
            }
            red_rhs[i] += &p;
        }

        // parent level solve on the pairwise-merged red nodes
        let parent_rhs: Vec<DVector<f64>> = red_rhs
            .chunks(2)
            .map(|pair| {
                let mut v = DVector::zeros(pair[0].len() + pair[1].len());
                v.rows_mut(0, pair[0].len()).copy_from(&pair[0]);
                v.rows_mut(pair[0].len(), pair[1].len()).copy_from(&pair[1]);
                v
            })
            .collect();
        let psi_parent = self.solve_level(t + 1, parent_rhs);
        let psi_red: Vec<DVector<f64>> = (0..n_sup)
            .map(|j| {
                let seg = &psi_parent[j / 2];
                let off = if j % 2 == 0 { 0 } else { lf.red_dims[j - 1] };
                seg.rows(off, lf.red_dims[j]).into_owned()
            })
            .collect();

        // prolongation and backward substitution in reverse order
        let mut x: Vec<DVector<f64>> = lf
            .nodes
            .iter()
            .map(|nf| DVector::zeros(nf.dim))
            .collect();
        for i in (0..n_sup).rev() {
            let node = &lf.nodes[i];
            let mut local = work[i].clone();
            for (nref, a_sn) in node.neighbors() {
                let xn = match *nref {
                    NodeRef::Sup(j) => &x[j],
                    NodeRef::Red(j) => &psi_red[j],
                };
                local -= a_sn * xn;
            }
            x[i] = node.apply_pss_t(&psi_red[i]) + node.apply_mss(&local);
        }
        x
    }
}
