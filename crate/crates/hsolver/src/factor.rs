//! Setup phase of the hierarchical solver: per super node, compress the
//! well-separated interactions, extend the system with a black node and a
//! parent red node, and eliminate; repeat level by level until a single
//! node remains, then factor it densely.
//!
//! The active system is kept as a block-sparse map keyed by (node, node).
//! Elimination writes Schur updates only into neighbor and parent entries;
//! blocks between two well-separated nodes arise solely as fill-in and are
//! compressed when their row node is eliminated.

use crate::dense::{
    self, project, LowRankFactor, ProjectionKind, SpdFactor, TolRule,
};
use crate::error::{Error, Result};
use crate::hierarchy::ClusterHierarchy;
use crate::sparse::SparseSymMatrix;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EpsSchedule {
    Constant,
    /// eps_l = eps * 2^((l - l_max)/3): fixed at the leaf, shrinking toward
    /// the root.
    LeafAnchored,
    /// eps_l = eps * h * 2^((l_max - l)/3): small at the leaf, growing
    /// toward the root.
    RootAnchored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    LoRaSp,
    GcConstant,
    GcEigenvector,
    GcUser,
}

impl Mode {
    pub fn is_gc(&self) -> bool {
        !matches!(self, Mode::LoRaSp)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Mode::LoRaSp => "lorasp",
            Mode::GcConstant => "gc-constant",
            Mode::GcEigenvector => "gc-eigenvector",
            Mode::GcUser => "gc-user",
        }
    }
}

/// How preserved vectors enter the compression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum PreserveStyle {
    /// Orthonormalize [phi_x, A_sw phi_y] into the basis; preservation is
    /// exact to roundoff.
    Exact,
    /// Projection scheme with improved (not exact) accuracy on the
    /// preserved directions.
    Approximate { scheme: ProjectionKind, eps1: f64 },
}

/// Truncation semantics for the per-node compression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Truncation {
    /// sigma_{k+1} <= eps_l * ||A_sw||_2 (benchmark semantics).
    RelTwoNorm,
    /// Tail Frobenius norm <= eps_l, absolute (diagnostics only).
    AbsFrobenius,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolverConfig {
    pub eps: f64,
    pub eps_schedule: EpsSchedule,
    pub leaf_size: usize,
    pub mode: Mode,
    pub preserve_style: PreserveStyle,
    pub truncation: Truncation,
    /// Mesh width for the root-anchored schedule.
    pub mesh_width: Option<f64>,
    /// Capture the per-node extension/elimination factors so the extended
    /// matrix can be reassembled densely (desk-scale diagnostics only).
    pub record_extended: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps: 0.1,
            eps_schedule: EpsSchedule::Constant,
            leaf_size: 8,
            mode: Mode::LoRaSp,
            preserve_style: PreserveStyle::Exact,
            truncation: Truncation::RelTwoNorm,
            mesh_width: None,
            record_extended: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.eps) {
            return Err(Error::InvalidConfig(format!(
                "eps must be in [0,1), got {}",
                self.eps
            )));
        }
        if self.leaf_size == 0 {
            return Err(Error::InvalidConfig("leaf_size must be >= 1".into()));
        }
        if self.eps_schedule == EpsSchedule::RootAnchored && self.mesh_width.is_none() {
            return Err(Error::InvalidConfig(
                "root-anchored schedule requires mesh_width".into(),
            ));
        }
        Ok(())
    }
}

// 2^(d/3) with the whole-power part split off so that three-level steps
// change the value by an exact power of two.
fn pow2_thirds(d: usize) -> f64 {
    let (q, r) = (d / 3, d % 3);
    2f64.powi(q as i32) * 2f64.powf(r as f64 / 3.0)
}

/// Per-level compression parameter. Levels are numbered with l = l_max at
/// the leaves, decreasing toward the root.
pub fn eps_for_level(cfg: &SolverConfig, l: usize, l_max: usize) -> f64 {
    let d = l_max - l;
    match cfg.eps_schedule {
        EpsSchedule::Constant => cfg.eps,
        EpsSchedule::LeafAnchored => cfg.eps / pow2_thirds(d),
        EpsSchedule::RootAnchored => {
            let h = cfg.mesh_width.expect("validated");
            cfg.eps * h * pow2_thirds(d)
        }
    }
}

/// Reference to a node active at elimination time of some super node:
/// either a later super on the same level or the parent red node generated
/// by an earlier one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Sup(usize),
    Red(usize),
}

/// Everything the solve phase needs from one eliminated super node.
#[derive(Debug)]
pub struct NodeFactor {
    pub level: usize,
    pub id: usize,
    pub dim: usize,
    pub rank: usize,
    chol_ss: SpdFactor,
    u: DMatrix<f64>,
    chol_s: SpdFactor,
    /// (node, A_sn) for every active neighbor holding a block at
    /// elimination time.
    neighbors: Vec<(NodeRef, DMatrix<f64>)>,
    /// Black-node segment R^T phi_w (GC bookkeeping).
    pub black_seg: Option<DMatrix<f64>>,
    /// ||A_sw||_2 at compression and the achieved truncation errors.
    pub a_sw_norm: f64,
    pub compress_err: f64,
    pub compress_err_frob: f64,
}

impl NodeFactor {
    /// M_ss v and P_ss v from shared triangular solves.
    pub(crate) fn forward_components(&self, v: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let t = self.chol_ss.solve_vec(v);
        if self.rank == 0 {
            return (t, DVector::zeros(0));
        }
        let p = self.chol_s.solve_vec(&(self.u.transpose() * &t));
        let m = &t - self.chol_ss.solve_vec(&(&self.u * &p));
        (m, p)
    }

    /// M_ss v = A_ss^{-1} v - P_ss^T S P_ss v, applied through the stored
    /// Cholesky factors.
    pub fn apply_mss(&self, v: &DVector<f64>) -> DVector<f64> {
        self.forward_components(v).0
    }

    /// P_ss v = S^{-1} U^T A_ss^{-1} v.
    pub fn apply_pss(&self, v: &DVector<f64>) -> DVector<f64> {
        self.forward_components(v).1
    }

    /// P_ss^T w = A_ss^{-1} U S^{-1} w.
    pub fn apply_pss_t(&self, w: &DVector<f64>) -> DVector<f64> {
        if self.rank == 0 {
            return DVector::zeros(self.dim);
        }
        self.chol_ss.solve_vec(&(&self.u * self.chol_s.solve_vec(w)))
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn neighbors(&self) -> &[(NodeRef, DMatrix<f64>)] {
        &self.neighbors
    }

    fn entries(&self) -> usize {
        self.dim * self.dim
            + self.dim * self.rank
            + self.rank * self.rank
            + self
                .neighbors
                .iter()
                .map(|(_, b)| b.nrows() * b.ncols())
                .sum::<usize>()
    }
}

/// Recorded extension/elimination factors of one node, for desk-scale
/// reassembly of the extended matrix.
#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub s_slots: Vec<usize>,
    pub b_slots: Vec<usize>,
    pub r_slots: Vec<usize>,
    pub u: DMatrix<f64>,
    pub rt: DMatrix<f64>,
    /// Slots of the concatenated well-separated nodes (column order of rt).
    pub w_slots: Vec<usize>,
    pub l_bs: DMatrix<f64>,
    pub neighbors: Vec<NeighborRecord>,
    pub s_inv: DMatrix<f64>,
    pub a_ss: DMatrix<f64>,
    pub s_mat: DMatrix<f64>,
    pub err_frob: f64,
}

#[derive(Debug, Clone)]
pub struct NeighborRecord {
    pub slots: Vec<usize>,
    pub l_ns: DMatrix<f64>,
    pub l_nb: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct ExtendedRecord {
    pub total_slots: usize,
    pub nodes: Vec<NodeRecord>,
    pub root_slots: Vec<usize>,
    pub root_matrix: DMatrix<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelStats {
    pub level: usize,
    /// Level index fed to the eps schedule (l_max at the leaves).
    pub schedule_level: usize,
    pub num_supers: usize,
    pub eps_l: f64,
    pub max_super_dim: usize,
    pub max_red_dim: usize,
    pub max_rank: usize,
    pub mean_rank: f64,
    pub fill_blocks_created: usize,
    pub factor_entries: usize,
    pub max_compress_rel_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct FactorStats {
    pub n: usize,
    pub depth: usize,
    pub mode: Mode,
    pub eps: f64,
    pub eps_schedule: EpsSchedule,
    pub levels: Vec<LevelStats>,
    pub root_dim: usize,
    pub total_factor_entries: usize,
    /// max red dim per level divided by the finer level's; linear
    /// complexity needs these under `rank_growth_limit`.
    pub rank_growth_ratios: Vec<f64>,
    /// 2^(1/3), the level-to-level growth threshold for linear complexity.
    pub rank_growth_limit: f64,
    pub setup_seconds: f64,
}

pub struct LevelFactor {
    pub nodes: Vec<NodeFactor>,
    pub red_dims: Vec<usize>,
    pub eps_l: f64,
}

/// The immutable factorization: per-level ordered node factors plus the
/// dense root factor. Safe to share across threads for concurrent solves.
pub struct HFactorization {
    pub(crate) n: usize,
    pub(crate) leaf_index_sets: Vec<Vec<usize>>,
    pub(crate) levels: Vec<LevelFactor>,
    pub(crate) root: SpdFactor,
    cfg: SolverConfig,
    stats: FactorStats,
    preserved: Option<Vec<DVector<f64>>>,
    pub(crate) rec: Option<ExtendedRecord>,
}

impl HFactorization {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn stats(&self) -> &FactorStats {
        &self.stats
    }

    pub fn stats_json(&self) -> String {
        serde_json::to_string_pretty(&self.stats).expect("stats serialize")
    }

    pub fn factor_entries(&self) -> usize {
        self.stats.total_factor_entries
    }

    /// The vectors the factorization preserves exactly (GC modes).
    pub fn preserved_vectors(&self) -> Option<&[DVector<f64>]> {
        self.preserved.as_deref()
    }

    pub fn extended_record(&self) -> Option<&ExtendedRecord> {
        self.rec.as_ref()
    }
}

/// Arguments of one compression step.
pub struct PreservedArgs<'a> {
    pub phi_x: &'a DMatrix<f64>,
    pub phi_y: &'a DMatrix<f64>,
    pub style: PreserveStyle,
}

/// Compress one well-separated interaction block A_sw at tolerance eps_l.
/// LoRaSp mode is a plain truncated SVD; GC mode routes through the
/// preserving compression (exact) or a projection scheme (approximate).
pub fn compress_step(
    a_sw: &DMatrix<f64>,
    eps_l: f64,
    truncation: Truncation,
    preserved: Option<PreservedArgs<'_>>,
) -> LowRankFactor {
    let rule = match truncation {
        Truncation::RelTwoNorm => TolRule::RelTwoNorm(eps_l),
        Truncation::AbsFrobenius => TolRule::AbsFrobenius(eps_l),
    };
    match preserved {
        None => dense::truncated_svd_with_rule(a_sw, rule, None),
        Some(args) => match args.style {
            PreserveStyle::Exact => {
                let image = a_sw * args.phi_y;
                dense::preserving_compress_with_rule(a_sw, args.phi_x, &image, rule)
            }
            PreserveStyle::Approximate { scheme, eps1 } => {
                if a_sw.nrows() == 0 || a_sw.ncols() == 0 {
                    return dense::truncated_svd_with_rule(a_sw, rule, None);
                }
                let b = a_sw.transpose();
                project(scheme, &b, args.phi_x, args.phi_y, eps1, eps_l).to_low_rank()
            }
        },
    }
}

type BlockMap = BTreeMap<(usize, usize), DMatrix<f64>>;

struct Slots {
    next: usize,
    sup: Vec<Vec<usize>>,
    red: Vec<Vec<usize>>,
}

impl Slots {
    fn alloc(&mut self, len: usize) -> Vec<usize> {
        let r = (self.next..self.next + len).collect();
        self.next += len;
        r
    }
}

/// Factorize `a` over the prebuilt hierarchy.
///
/// `preserve` supplies the vectors for GcEigenvector / GcUser; GcConstant
/// generates the all-ones vector internally and LoRaSp must not receive any.
pub fn factorize(
    a: &SparseSymMatrix,
    hier: &ClusterHierarchy,
    cfg: &SolverConfig,
    preserve: Option<&[DVector<f64>]>,
) -> Result<HFactorization> {
    cfg.validate()?;
    let n = a.n();
    let start = std::time::Instant::now();

    let preserved: Option<Vec<DVector<f64>>> = match cfg.mode {
        Mode::LoRaSp => {
            if preserve.is_some_and(|p| !p.is_empty()) {
                return Err(Error::InvalidConfig(
                    "lorasp mode does not take preserved vectors".into(),
                ));
            }
            None
        }
        Mode::GcConstant => Some(vec![DVector::from_element(n, 1.0)]),
        Mode::GcEigenvector | Mode::GcUser => {
            let p = preserve.filter(|p| !p.is_empty()).ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "{} mode requires preserved vectors",
                    cfg.mode.name()
                ))
            })?;
            for v in p {
                if v.len() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        got: v.len(),
                        context: "preserved vector".into(),
                    });
                }
            }
            Some(p.to_vec())
        }
    };
    let num_preserved = preserved.as_ref().map_or(0, Vec::len);

    // ---- leaf assembly -------------------------------------------------
    let n_leaf = hier.num_leaf_supers();
    let leaf_index_sets: Vec<Vec<usize>> =
        (0..n_leaf).map(|i| hier.leaf_super_indices(i)).collect();
    let mut sup_dims: Vec<usize> = leaf_index_sets.iter().map(Vec::len).collect();

    // original index -> (leaf super, offset)
    let mut place = vec![(0usize, 0usize); n];
    for (s, set) in leaf_index_sets.iter().enumerate() {
        for (off, &g) in set.iter().enumerate() {
            place[g] = (s, off);
        }
    }
    let mut blocks: BlockMap = BTreeMap::new();
    for gi in 0..n {
        let (si, oi) = place[gi];
        let (cols, vals) = a.row(gi);
        for (&gj, &v) in cols.iter().zip(vals) {
            let (sj, oj) = place[gj];
            blocks
                .entry((si, sj))
                .or_insert_with(|| DMatrix::zeros(sup_dims[si], sup_dims[sj]))[(oi, oj)] = v;
        }
    }

    // preserved segments per leaf super
    let mut seg_sup: Vec<DMatrix<f64>> = Vec::new();
    if let Some(ref phis) = preserved {
        seg_sup = leaf_index_sets
            .iter()
            .map(|set| {
                DMatrix::from_fn(set.len(), num_preserved, |r, c| phis[c][set[r]])
            })
            .collect();
    }

    let mut slots = if cfg.record_extended {
        Some(Slots {
            next: n,
            sup: leaf_index_sets.clone(),
            red: Vec::new(),
        })
    } else {
        None
    };
    let mut records: Vec<NodeRecord> = Vec::new();

    let l_max = hier.depth();
    let num_levels = hier.num_levels();
    let mut levels: Vec<LevelFactor> = Vec::new();
    let mut level_stats: Vec<LevelStats> = Vec::new();
    let mut max_red_dims: Vec<usize> = Vec::new();

    for t in 0..num_levels {
        let n_sup = hier.level(t).num_supers;
        debug_assert_eq!(n_sup, sup_dims.len());
        if n_sup == 1 {
            break; // root level: factor directly below
        }
        let schedule_level = l_max - t;
        let eps_l = eps_for_level(cfg, schedule_level, l_max);
        let adjacency = &hier.level(t).adjacency;

        let mut nodes: Vec<NodeFactor> = Vec::with_capacity(n_sup);
        let mut red_dims: Vec<usize> = Vec::with_capacity(n_sup);
        let mut seg_red: Vec<DMatrix<f64>> = Vec::with_capacity(n_sup);
        let mut fill_created = 0usize;
        let mut max_rel_err = 0.0f64;

        if let Some(s) = slots.as_mut() {
            s.red.clear();
        }

        for i in 0..n_sup {
            let dim = sup_dims[i];
            let is_adj = |j: usize| adjacency[i].binary_search(&j).is_ok();

            // split stored row blocks into neighbors and well-separated
            let row: Vec<(usize, DMatrix<f64>)> = {
                let keys: Vec<usize> = blocks
                    .range((i, 0)..(i, usize::MAX))
                    .map(|(&(_, k), _)| k)
                    .collect();
                keys.into_iter()
                    .filter(|&k| k != i)
                    .map(|k| (k, blocks.remove(&(i, k)).expect("row block")))
                    .collect()
            };
            let a_ss = blocks
                .remove(&(i, i))
                .unwrap_or_else(|| DMatrix::zeros(dim, dim));

            let mut nbr_blocks: Vec<(usize, DMatrix<f64>)> = Vec::new();
            let mut w_blocks: Vec<(usize, DMatrix<f64>)> = Vec::new();
            for (k, blk) in row {
                let gen = if k < n_sup { k } else { k - n_sup };
                if is_adj(gen) {
                    nbr_blocks.push((k, blk));
                } else {
                    w_blocks.push((k, blk));
                }
            }

            // ---- compression ------------------------------------------
            let w_total: usize = w_blocks.iter().map(|(_, b)| b.ncols()).sum();
            let mut a_sw = DMatrix::zeros(dim, w_total);
            {
                let mut off = 0;
                for (_, b) in &w_blocks {
                    a_sw.columns_mut(off, b.ncols()).copy_from(b);
                    off += b.ncols();
                }
            }
            let preserved_args = preserved.as_ref().map(|_| {
                let phi_y = {
                    let mut m = DMatrix::zeros(w_total, num_preserved);
                    let mut off = 0;
                    for (k, b) in &w_blocks {
                        let seg = if *k < n_sup {
                            &seg_sup[*k]
                        } else {
                            &seg_red[*k - n_sup]
                        };
                        m.rows_mut(off, b.ncols()).copy_from(seg);
                        off += b.ncols();
                    }
                    m
                };
                (seg_sup[i].clone(), phi_y)
            });
            let lr = compress_step(
                &a_sw,
                eps_l,
                cfg.truncation,
                preserved_args.as_ref().map(|(px, py)| PreservedArgs {
                    phi_x: px,
                    phi_y: py,
                    style: cfg.preserve_style,
                }),
            );
            let a_sw_norm = lr.input_norm;
            let rank = lr.rank();
            if a_sw_norm > 0.0 {
                max_rel_err = max_rel_err.max(lr.err / a_sw_norm);
            }

            // ---- extension: replace the s <-> w couplings by w <-> r ---
            let red_key = n_sup + i;
            {
                let mut off = 0;
                for (k, b) in &w_blocks {
                    let cols = b.ncols();
                    blocks.remove(&(*k, i));
                    if rank > 0 {
                        let rt_slice = lr.rt.columns(off, cols).into_owned();
                        blocks.insert((*k, red_key), rt_slice.transpose());
                        blocks.insert((red_key, *k), rt_slice);
                    }
                    off += cols;
                }
            }
            let black_seg = preserved_args
                .as_ref()
                .map(|(_, phi_y)| &lr.rt * phi_y);
            if let Some((_, _)) = &preserved_args {
                seg_red.push(lr.u.transpose() * &seg_sup[i]);
            } else {
                seg_red.push(DMatrix::zeros(rank, 0));
            }

            // ---- elimination -------------------------------------------
            let ctx = |what: &str| format!("{what} of node {i} at level {t}");
            let chol_ss = dense::spd_factor(a_ss.clone(), &ctx("A_ss"))?;
            let w_mat = chol_ss.solve_mat(&lr.u); // A_ss^{-1} U
            let s_mat = {
                let s = lr.u.transpose() * &w_mat;
                (&s + s.transpose()) * 0.5
            };
            let chol_s = dense::spd_factor(s_mat.clone(), &ctx("S"))?;

            // per neighbor: T = A_ss^{-1} A_sn, Y = P_ss A_sn, G = M_ss A_sn
            let mut t_list: Vec<DMatrix<f64>> = Vec::with_capacity(nbr_blocks.len());
            let mut y_list: Vec<DMatrix<f64>> = Vec::with_capacity(nbr_blocks.len());
            let mut g_list: Vec<DMatrix<f64>> = Vec::with_capacity(nbr_blocks.len());
            for (_, a_sn) in &nbr_blocks {
                let t_n = chol_ss.solve_mat(a_sn);
                let y_n = chol_s.solve_mat(&(lr.u.transpose() * &t_n));
                let g_n = &t_n - &w_mat * &y_n;
                t_list.push(t_n);
                y_list.push(y_n);
                g_list.push(g_n);
            }

            // Schur updates among neighbors (fill-in appears here)
            for (kp, a_sp) in nbr_blocks.iter() {
                for (q, (kq, _)) in nbr_blocks.iter().enumerate() {
                    if kq < kp {
                        continue;
                    }
                    let upd = a_sp.transpose() * &g_list[q];
                    match blocks.get_mut(&(*kp, *kq)) {
                        Some(blk) => *blk -= &upd,
                        None => {
                            fill_created += 1;
                            blocks.insert((*kp, *kq), -&upd);
                        }
                    }
                    if kp == kq {
                        let blk = blocks.get_mut(&(*kp, *kq)).expect("diag");
                        let sym = (blk.clone() + blk.transpose()) * 0.5;
                        *blk = sym;
                    } else {
                        let m = blocks[&(*kp, *kq)].transpose();
                        blocks.insert((*kq, *kp), m);
                    }
                }
            }

            // parent red node row: diagonal S^{-1} and couplings P_ss A_sn
            if rank > 0 {
                blocks.insert((red_key, red_key), chol_s.inverse());
                for (p, (kp, _)) in nbr_blocks.iter().enumerate() {
                    blocks.insert((red_key, *kp), y_list[p].clone());
                    blocks.insert((*kp, red_key), y_list[p].transpose());
                }
            }

            // drop the remaining column blocks of the eliminated node
            for (k, _) in &nbr_blocks {
                blocks.remove(&(*k, i));
            }

            if let Some(s) = slots.as_mut() {
                let b_slots = s.alloc(rank);
                let r_slots = s.alloc(rank);
                let w_slots: Vec<usize> = w_blocks
                    .iter()
                    .flat_map(|(k, _)| {
                        if *k < n_sup {
                            s.sup[*k].clone()
                        } else {
                            s.red[*k - n_sup].clone()
                        }
                    })
                    .collect();
                let neighbors_rec: Vec<NeighborRecord> = nbr_blocks
                    .iter()
                    .enumerate()
                    .map(|(p, (k, _))| NeighborRecord {
                        slots: if *k < n_sup {
                            s.sup[*k].clone()
                        } else {
                            s.red[*k - n_sup].clone()
                        },
                        l_ns: t_list[p].transpose(),
                        l_nb: y_list[p].transpose(),
                    })
                    .collect();
                records.push(NodeRecord {
                    s_slots: s.sup[i].clone(),
                    b_slots,
                    r_slots: r_slots.clone(),
                    u: lr.u.clone(),
                    rt: lr.rt.clone(),
                    w_slots,
                    l_bs: w_mat.transpose(),
                    neighbors: neighbors_rec,
                    s_inv: chol_s.inverse(),
                    a_ss,
                    s_mat,
                    err_frob: lr.err_frob,
                });
                s.red.push(r_slots);
            }

            nodes.push(NodeFactor {
                level: t,
                id: i,
                dim,
                rank,
                chol_ss,
                u: lr.u,
                chol_s,
                neighbors: nbr_blocks
                    .into_iter()
                    .map(|(k, b)| {
                        let r = if k < n_sup {
                            NodeRef::Sup(k)
                        } else {
                            NodeRef::Red(k - n_sup)
                        };
                        (r, b)
                    })
                    .collect(),
                black_seg,
                a_sw_norm,
                compress_err: lr.err,
                compress_err_frob: lr.err_frob,
            });
            red_dims.push(rank);
        }

        // ---- stats and merge into the next level ------------------------
        let entries: usize = nodes.iter().map(NodeFactor::entries).sum();
        let ranks: Vec<usize> = nodes.iter().map(|nf| nf.rank).collect();
        level_stats.push(LevelStats {
            level: t,
            schedule_level,
            num_supers: n_sup,
            eps_l,
            max_super_dim: sup_dims.iter().copied().max().unwrap_or(0),
            max_red_dim: red_dims.iter().copied().max().unwrap_or(0),
            max_rank: ranks.iter().copied().max().unwrap_or(0),
            mean_rank: ranks.iter().sum::<usize>() as f64 / ranks.len().max(1) as f64,
            fill_blocks_created: fill_created,
            factor_entries: entries,
            max_compress_rel_err: max_rel_err,
        });
        max_red_dims.push(red_dims.iter().copied().max().unwrap_or(0));

        // reds pair-merge into the next level's supers
        let next_n = n_sup / 2;
        let mut next_dims = vec![0usize; next_n];
        for (j, &d) in red_dims.iter().enumerate() {
            next_dims[j / 2] += d;
        }
        let mut next_blocks: BlockMap = BTreeMap::new();
        let red_offset = |j: usize| -> usize {
            if j.is_multiple_of(2) {
                0
            } else {
                red_dims[j - 1]
            }
        };
        for ((kp, kq), blk) in std::mem::take(&mut blocks) {
            debug_assert!(
                kp >= n_sup && kq >= n_sup,
                "only red-red blocks may remain after a level ({kp},{kq})"
            );
            let (p, q) = (kp - n_sup, kq - n_sup);
            let (sa, sb) = (p / 2, q / 2);
            let dst = next_blocks
                .entry((sa, sb))
                .or_insert_with(|| DMatrix::zeros(next_dims[sa], next_dims[sb]));
            dst.view_mut((red_offset(p), red_offset(q)), (blk.nrows(), blk.ncols()))
                .copy_from(&blk);
        }
        blocks = next_blocks;
        sup_dims = next_dims;

        if preserved.is_some() {
            seg_sup = (0..next_n)
                .map(|a_id| {
                    let top = &seg_red[2 * a_id];
                    let bot = &seg_red[2 * a_id + 1];
                    let mut m = DMatrix::zeros(top.nrows() + bot.nrows(), num_preserved);
                    m.rows_mut(0, top.nrows()).copy_from(top);
                    m.rows_mut(top.nrows(), bot.nrows()).copy_from(bot);
                    m
                })
                .collect();
        }
        if let Some(s) = slots.as_mut() {
            s.sup = s
                .red
                .chunks(2)
                .map(|pair| {
                    let mut v = pair[0].clone();
                    v.extend_from_slice(&pair[1]);
                    v
                })
                .collect();
        }

        levels.push(LevelFactor {
            nodes,
            red_dims,
            eps_l,
        });
    }

    // ---- root: factor the remaining single node densely -----------------
    let root_dim = sup_dims[0];
    let root_matrix = blocks
        .remove(&(0, 0))
        .unwrap_or_else(|| DMatrix::zeros(root_dim, root_dim));
    let root_matrix = (&root_matrix + root_matrix.transpose()) * 0.5;
    let root = dense::spd_factor(root_matrix.clone(), "root")?;

    let rec = slots.map(|s| ExtendedRecord {
        total_slots: s.next,
        nodes: records,
        root_slots: s.sup[0].clone(),
        root_matrix,
    });

    let total_entries: usize =
        level_stats.iter().map(|l| l.factor_entries).sum::<usize>() + root_dim * root_dim;
    let leaf_red_max = (0..hier.leaf_clusters().num_clusters())
        .map(|c| hier.leaf_clusters().members(c).len())
        .max()
        .unwrap_or(0);
    let mut rank_growth_ratios = Vec::new();
    let mut prev = leaf_red_max as f64;
    for &d in &max_red_dims {
        rank_growth_ratios.push(d as f64 / prev.max(1.0));
        prev = d as f64;
    }
    let stats = FactorStats {
        n,
        depth: hier.depth(),
        mode: cfg.mode,
        eps: cfg.eps,
        eps_schedule: cfg.eps_schedule,
        levels: level_stats,
        root_dim,
        total_factor_entries: total_entries,
        rank_growth_ratios,
        rank_growth_limit: 2f64.powf(1.0 / 3.0),
        setup_seconds: start.elapsed().as_secs_f64(),
    };

    Ok(HFactorization {
        n,
        leaf_index_sets,
        levels,
        root,
        cfg: cfg.clone(),
        stats,
        preserved,
        rec,
    })
}
