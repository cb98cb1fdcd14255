//! Cluster hierarchy: leaf red nodes from recursive bisection, pairwise
//! merge into super nodes, and per-level neighbor / well-separated
//! classification.
//!
//! Adjacency is frozen from the original block structure (or from geometry
//! for grid problems) and propagated upward by pair quotienting; fill-in
//! created during elimination never changes it. A parent red node inherits
//! the neighbor list of the super node that generated it, so the lists here
//! classify every active node at elimination time. How new parent red nodes
//! interleave with remaining super nodes is not pinned down beyond that
//! inheritance; we classify them purely by the generator's adjacency.

use crate::error::{Error, Result};
use crate::sparse::{build_block_graph, ClusterPartition, SparseSymMatrix};
use serde::Serialize;

/// Rule used to split same-level nodes into neighbors and well-separated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WellSepPredicate {
    /// Two clusters are well-separated iff they are not adjacent in the
    /// block graph.
    GraphAdjacency,
    /// Two clusters are well-separated iff their distance exceeds the size
    /// of the clusters (requires coordinates).
    Geometric,
}

/// One level of super nodes. Level 0 holds the leaf super nodes; the last
/// level holds a single root node.
#[derive(Debug, Clone, Serialize)]
pub struct LevelTopology {
    pub num_supers: usize,
    /// Sorted neighbor lists among same-level supers, self excluded.
    pub adjacency: Vec<Vec<usize>>,
    /// Number of original indices covered by each super node.
    pub member_counts: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ClusterHierarchy {
    depth: usize,
    leaf_clusters: ClusterPartition,
    levels: Vec<LevelTopology>,
    predicate: WellSepPredicate,
}

/// Largest depth L with n / 2^L >= leaf_size (at least 1).
pub fn default_depth(n: usize, leaf_size: usize) -> usize {
    let mut l = 0usize;
    while n >> (l + 1) >= leaf_size.max(1) {
        l += 1;
    }
    l.max(1)
}

/// Recursive coordinate bisection: split along the longest box axis into
/// balanced halves, 2^depth clusters in tree order.
pub fn bisect_grid(coords: &[[f64; 3]], depth: usize) -> Result<ClusterPartition> {
    let n = coords.len();
    check_depth(n, depth)?;
    let mut clusters = Vec::with_capacity(1 << depth);
    let all: Vec<usize> = (0..n).collect();
    split_geometric(coords, all, depth, &mut clusters);
    ClusterPartition::new(n, clusters)
}

fn split_geometric(
    coords: &[[f64; 3]],
    mut set: Vec<usize>,
    depth: usize,
    out: &mut Vec<Vec<usize>>,
) {
    if depth == 0 {
        set.sort_unstable();
        out.push(set);
        return;
    }
    // longest bounding-box axis
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &set {
        for d in 0..3 {
            lo[d] = lo[d].min(coords[i][d]);
            hi[d] = hi[d].max(coords[i][d]);
        }
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).partial_cmp(&(hi[b] - lo[b])).unwrap())
        .unwrap();
    set.sort_by(|&a, &b| {
        coords[a][axis]
            .partial_cmp(&coords[b][axis])
            .unwrap()
            .then(a.cmp(&b))
    });
    let mid = set.len().div_ceil(2);
    let right = set.split_off(mid);
    split_geometric(coords, set, depth - 1, out);
    split_geometric(coords, right, depth - 1, out);
}

/// Recursive graph bisection with a BFS level-set heuristic: order the
/// subset from a pseudo-peripheral vertex and cut at the midpoint.
pub fn bisect_graph(a: &SparseSymMatrix, depth: usize) -> Result<ClusterPartition> {
    let n = a.n();
    check_depth(n, depth)?;
    let mut clusters = Vec::with_capacity(1 << depth);
    let all: Vec<usize> = (0..n).collect();
    split_graph(a, all, depth, &mut clusters);
    ClusterPartition::new(n, clusters)
}

fn check_depth(n: usize, depth: usize) -> Result<()> {
    if depth == 0 {
        return Err(Error::InvalidConfig("tree depth must be >= 1".into()));
    }
    if depth >= usize::BITS as usize || n < (1usize << depth) {
        return Err(Error::DepthTooLarge { depth, n });
    }
    Ok(())
}

fn bfs_order(a: &SparseSymMatrix, set: &[usize], start: usize) -> Vec<usize> {
    let mut in_set = std::collections::BTreeMap::new();
    for (p, &i) in set.iter().enumerate() {
        in_set.insert(i, p);
    }
    let mut seen = vec![false; set.len()];
    let mut order = Vec::with_capacity(set.len());
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(start);
    seen[in_set[&start]] = true;
    while let Some(v) = queue.pop_front() {
        order.push(v);
        let (cols, _) = a.row(v);
        for &u in cols {
            if let Some(&p) = in_set.get(&u) {
                if !seen[p] {
                    seen[p] = true;
                    queue.push_back(u);
                }
            }
        }
        // restart on the lowest unseen vertex of a disconnected piece
        if queue.is_empty() && order.len() < set.len() {
            for (p, &i) in set.iter().enumerate() {
                if !seen[p] {
                    seen[p] = true;
                    queue.push_back(i);
                    break;
                }
            }
        }
    }
    order
}

fn split_graph(a: &SparseSymMatrix, mut set: Vec<usize>, depth: usize, out: &mut Vec<Vec<usize>>) {
    if depth == 0 {
        set.sort_unstable();
        out.push(set);
        return;
    }
    set.sort_unstable();
    // pseudo-peripheral start: farthest vertex from an arbitrary seed
    let far = *bfs_order(a, &set, set[0]).last().unwrap();
    let order = bfs_order(a, &set, far);
    let mid = order.len().div_ceil(2);
    let left: Vec<usize> = order[..mid].to_vec();
    let right: Vec<usize> = order[mid..].to_vec();
    split_graph(a, left, depth - 1, out);
    split_graph(a, right, depth - 1, out);
}

/// Pair consecutive red nodes: super i = red 2i cup red 2i+1.
pub fn merge_pairs(red_members: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    if !red_members.len().is_multiple_of(2) {
        return Err(Error::InvalidPartition(format!(
            "cannot pair an odd number of red nodes ({})",
            red_members.len()
        )));
    }
    Ok(red_members
        .chunks(2)
        .map(|pair| {
            let mut m = pair[0].clone();
            m.extend_from_slice(&pair[1]);
            m
        })
        .collect())
}

#[derive(Debug, Clone, Copy)]
struct BoundingBox {
    lo: [f64; 3],
    hi: [f64; 3],
}

impl BoundingBox {
    fn of(coords: &[[f64; 3]], members: &[usize]) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for &i in members {
            for d in 0..3 {
                lo[d] = lo[d].min(coords[i][d]);
                hi[d] = hi[d].max(coords[i][d]);
            }
        }
        Self { lo, hi }
    }

    fn merge(&self, o: &Self) -> Self {
        let mut lo = self.lo;
        let mut hi = self.hi;
        for d in 0..3 {
            lo[d] = lo[d].min(o.lo[d]);
            hi[d] = hi[d].max(o.hi[d]);
        }
        Self { lo, hi }
    }

    fn diag_sq(&self) -> f64 {
        (0..3).map(|d| (self.hi[d] - self.lo[d]).powi(2)).sum()
    }

    fn gap_sq(&self, o: &Self) -> f64 {
        (0..3)
            .map(|d| {
                let g = (self.lo[d] - o.hi[d]).max(o.lo[d] - self.hi[d]).max(0.0);
                g * g
            })
            .sum()
    }
}

// Well-separated iff the gap between the boxes exceeds the larger box
// diagonal; ties count as neighbors.
fn boxes_adjacent(a: &BoundingBox, b: &BoundingBox) -> bool {
    let size_sq = a.diag_sq().max(b.diag_sq());
    a.gap_sq(b) <= size_sq * (1.0 + 1e-12)
}

impl ClusterHierarchy {
    /// Build the full hierarchy for `a`, with geometry-driven bisection and
    /// classification when coordinates are supplied and the predicate asks
    /// for it.
    pub fn build(
        a: &SparseSymMatrix,
        coords: Option<&[[f64; 3]]>,
        depth: usize,
        predicate: WellSepPredicate,
    ) -> Result<Self> {
        if predicate == WellSepPredicate::Geometric && coords.is_none() {
            return Err(Error::InvalidConfig(
                "geometric predicate requires coordinates".into(),
            ));
        }
        let leaf_clusters = match coords {
            Some(c) => {
                if c.len() != a.n() {
                    return Err(Error::DimensionMismatch {
                        expected: a.n(),
                        got: c.len(),
                        context: "coordinate count".into(),
                    });
                }
                bisect_grid(c, depth)?
            }
            None => bisect_graph(a, depth)?,
        };

        let num_levels = depth; // level t has 2^(depth-1-t) supers
        let mut levels = Vec::with_capacity(num_levels);

        // member lists per level (supers only; reds are the same sets)
        let red_members: Vec<Vec<usize>> = (0..leaf_clusters.num_clusters())
            .map(|c| leaf_clusters.members(c).to_vec())
            .collect();
        let mut super_members = merge_pairs(&red_members)?;

        match predicate {
            WellSepPredicate::Geometric => {
                let coords = coords.unwrap();
                let mut boxes: Vec<BoundingBox> = super_members
                    .iter()
                    .map(|m| BoundingBox::of(coords, m))
                    .collect();
                loop {
                    let ns = super_members.len();
                    let mut adjacency = vec![Vec::new(); ns];
                    for i in 0..ns {
                        for j in (i + 1)..ns {
                            if boxes_adjacent(&boxes[i], &boxes[j]) {
                                adjacency[i].push(j);
                                adjacency[j].push(i);
                            }
                        }
                    }
                    levels.push(LevelTopology {
                        num_supers: ns,
                        adjacency,
                        member_counts: super_members.iter().map(Vec::len).collect(),
                    });
                    if ns == 1 {
                        break;
                    }
                    super_members = merge_pairs(&super_members)?;
                    boxes = boxes
                        .chunks(2)
                        .map(|pair| pair[0].merge(&pair[1]))
                        .collect();
                }
            }
            WellSepPredicate::GraphAdjacency => {
                let part = ClusterPartition::new(a.n(), super_members.clone())?;
                let g = build_block_graph(a, &part)?;
                let mut adjacency: Vec<Vec<usize>> = (0..g.num_clusters())
                    .map(|c| g.neighbors(c).to_vec())
                    .collect();
                loop {
                    let ns = super_members.len();
                    levels.push(LevelTopology {
                        num_supers: ns,
                        adjacency: adjacency.clone(),
                        member_counts: super_members.iter().map(Vec::len).collect(),
                    });
                    if ns == 1 {
                        break;
                    }
                    // quotient by pairing
                    let half = ns / 2;
                    let mut next = vec![Vec::new(); half];
                    for (i, list) in adjacency.iter().enumerate() {
                        for &j in list {
                            if i / 2 != j / 2 {
                                next[i / 2].push(j / 2);
                            }
                        }
                    }
                    for l in &mut next {
                        l.sort_unstable();
                        l.dedup();
                    }
                    adjacency = next;
                    super_members = merge_pairs(&super_members)?;
                }
            }
        }

        Ok(Self {
            depth,
            leaf_clusters,
            levels,
            predicate,
        })
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn predicate(&self) -> WellSepPredicate {
        self.predicate
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, t: usize) -> &LevelTopology {
        &self.levels[t]
    }

    pub fn leaf_clusters(&self) -> &ClusterPartition {
        &self.leaf_clusters
    }

    pub fn num_leaf_supers(&self) -> usize {
        self.levels[0].num_supers
    }

    /// Original indices covered by leaf super node `i`, in segment order
    /// (red 2i followed by red 2i+1).
    pub fn leaf_super_indices(&self, i: usize) -> Vec<usize> {
        let mut v = self.leaf_clusters.members(2 * i).to_vec();
        v.extend_from_slice(self.leaf_clusters.members(2 * i + 1));
        v
    }

    /// Split the same-level supers into (neighbors, well_separated) relative
    /// to `super_id`. Together the two lists cover every other node active
    /// at elimination time: ids below `super_id` stand for the parent red
    /// nodes those supers generated.
    pub fn interaction_lists(&self, level: usize, super_id: usize) -> (Vec<usize>, Vec<usize>) {
        let topo = &self.levels[level];
        let nbrs = &topo.adjacency[super_id];
        let mut ws = Vec::new();
        for j in 0..topo.num_supers {
            if j != super_id && nbrs.binary_search(&j).is_err() {
                ws.push(j);
            }
        }
        (nbrs.clone(), ws)
    }

    /// Debug dump with node counts, sizes and adjacency per level.
    pub fn dump_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            depth: usize,
            predicate: WellSepPredicate,
            leaf_cluster_sizes: Vec<usize>,
            levels: &'a [LevelTopology],
        }
        let d = Dump {
            depth: self.depth,
            predicate: self.predicate,
            leaf_cluster_sizes: (0..self.leaf_clusters.num_clusters())
                .map(|c| self.leaf_clusters.members(c).len())
                .collect(),
            levels: &self.levels,
        };
        serde_json::to_string_pretty(&d).expect("serialize hierarchy")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(n: usize) -> SparseSymMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        SparseSymMatrix::from_triplets(n, &t).unwrap()
    }

    fn line_coords(n: usize) -> Vec<[f64; 3]> {
        (0..n).map(|i| [i as f64, 0.0, 0.0]).collect()
    }

    fn grid_coords(k: usize) -> Vec<[f64; 3]> {
        let h = 1.0 / (k as f64 + 1.0);
        let mut c = Vec::with_capacity(k * k);
        for j in 0..k {
            for i in 0..k {
                c.push([(i as f64 + 1.0) * h, (j as f64 + 1.0) * h, 0.0]);
            }
        }
        c
    }

    #[test]
    fn bisect_1d_chain_contiguous() {
        // 1D chain n=16, depth 3 -> 8 contiguous clusters of 2
        let part = bisect_grid(&line_coords(16), 3).unwrap();
        assert_eq!(part.num_clusters(), 8);
        for c in 0..8 {
            assert_eq!(part.members(c), &[2 * c, 2 * c + 1]);
        }
    }

    #[test]
    fn bisect_depth_one_covers_everything() {
        let part = bisect_grid(&line_coords(5), 1).unwrap();
        assert_eq!(part.num_clusters(), 2);
        let mut all: Vec<usize> = part.members(0).to_vec();
        all.extend_from_slice(part.members(1));
        all.sort_unstable();
        assert_eq!(all, (0..5).collect::<Vec<_>>());
    }

    #[test]
    fn depth_too_large_rejected() {
        assert!(bisect_grid(&line_coords(4), 3).is_err());
        assert!(bisect_graph(&chain(4), 3).is_err());
    }

    #[test]
    fn default_depth_matches_leaf_target() {
        // 32x32 grid, leaf size 8 -> depth 7, 128 leaves of 8
        assert_eq!(default_depth(1024, 8), 7);
        assert_eq!(default_depth(4096, 8), 9);
        assert_eq!(default_depth(512, 8), 6);
        assert_eq!(default_depth(262144, 8), 15);
    }

    #[test]
    fn leaf_count_and_sizes_32x32() {
        let coords = grid_coords(32);
        let depth = default_depth(1024, 8);
        let part = bisect_grid(&coords, depth).unwrap();
        assert_eq!(depth, 7);
        assert_eq!(part.num_clusters(), 128);
        for c in 0..128 {
            assert_eq!(part.members(c).len(), 8);
        }
    }

    #[test]
    fn merge_pairs_halves_and_covers() {
        let lists: Vec<Vec<usize>> = (0..128).map(|i| vec![2 * i, 2 * i + 1]).collect();
        let merged = merge_pairs(&lists).unwrap();
        assert_eq!(merged.len(), 64);
        let mut all: Vec<usize> = merged.into_iter().flatten().collect();
        all.sort_unstable();
        assert_eq!(all, (0..256).collect::<Vec<_>>());
        assert!(merge_pairs(&lists[..3]).is_err());
    }

    #[test]
    fn graph_bisection_chain_balanced() {
        let a = chain(16);
        let part = bisect_graph(&a, 3).unwrap();
        assert_eq!(part.num_clusters(), 8);
        for c in 0..8 {
            assert_eq!(part.members(c).len(), 2);
        }
        // BFS ordering on a path keeps clusters contiguous
        for c in 0..8 {
            let m = part.members(c);
            assert_eq!(m[1], m[0] + 1);
        }
    }

    #[test]
    fn hierarchy_levels_halve() {
        let a = chain(64);
        let h = ClusterHierarchy::build(&a, None, 4, WellSepPredicate::GraphAdjacency).unwrap();
        assert_eq!(h.num_levels(), 4);
        assert_eq!(h.level(0).num_supers, 8);
        assert_eq!(h.level(1).num_supers, 4);
        assert_eq!(h.level(3).num_supers, 1);
        // union of leaf supers covers all indices exactly once
        let mut all: Vec<usize> = (0..h.num_leaf_supers())
            .flat_map(|i| h.leaf_super_indices(i))
            .collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn adjacency_symmetric_all_levels() {
        let a = chain(64);
        for pred in [WellSepPredicate::GraphAdjacency, WellSepPredicate::Geometric] {
            let coords = line_coords(64);
            let h = ClusterHierarchy::build(&a, Some(&coords), 4, pred).unwrap();
            for t in 0..h.num_levels() {
                let topo = h.level(t);
                for i in 0..topo.num_supers {
                    for &j in &topo.adjacency[i] {
                        assert!(topo.adjacency[j].contains(&i), "{pred:?} level {t}");
                    }
                }
            }
        }
    }

    #[test]
    fn interaction_lists_partition_actives() {
        let a = chain(32);
        let h = ClusterHierarchy::build(&a, None, 3, WellSepPredicate::GraphAdjacency).unwrap();
        let topo = h.level(0);
        for i in 0..topo.num_supers {
            let (nbrs, ws) = h.interaction_lists(0, i);
            let mut all: Vec<usize> = nbrs.iter().chain(ws.iter()).copied().collect();
            all.sort_unstable();
            let expect: Vec<usize> = (0..topo.num_supers).filter(|&j| j != i).collect();
            assert_eq!(all, expect);
        }
    }

    #[test]
    fn fully_dense_block_graph_has_no_well_separated() {
        // complete coupling: every pair of clusters interacts
        let n = 8;
        let mut t = Vec::new();
        for i in 0..n {
            for j in i..n {
                t.push((i, j, if i == j { 10.0 } else { 1.0 }));
            }
        }
        let a = SparseSymMatrix::from_triplets(n, &t).unwrap();
        let h = ClusterHierarchy::build(&a, None, 2, WellSepPredicate::GraphAdjacency).unwrap();
        for i in 0..h.level(0).num_supers {
            let (_, ws) = h.interaction_lists(0, i);
            assert!(ws.is_empty());
        }
    }

    #[test]
    fn geometric_corner_cluster_4x4() {
        // 8x8 grid split into a 4x4 arrangement of 2x2 clusters; the corner
        // cluster's geometric neighbors are the <=3 clusters within one
        // cluster size; everything else is well-separated.
        let k = 8usize;
        let coords = grid_coords(k);
        let mut t = Vec::new();
        let idx = |i: usize, j: usize| i + k * j;
        for j in 0..k {
            for i in 0..k {
                t.push((idx(i, j), idx(i, j), 4.0));
                if i + 1 < k {
                    t.push((idx(i, j), idx(i + 1, j), -1.0));
                }
                if j + 1 < k {
                    t.push((idx(i, j), idx(i, j + 1), -1.0));
                }
            }
        }
        let a = SparseSymMatrix::from_triplets(k * k, &t).unwrap();
        let h = ClusterHierarchy::build(&a, Some(&coords), 5, WellSepPredicate::Geometric).unwrap();
        // level 0 supers: 16 clusters of 4 (2x2 squares, tree order)
        let topo = h.level(0);
        assert_eq!(topo.num_supers, 16);
        assert!(topo.member_counts.iter().all(|&c| c == 4));

        // oracle: enumerate distances between cluster point sets
        let members: Vec<Vec<usize>> = {
            let reds: Vec<Vec<usize>> = (0..h.leaf_clusters().num_clusters())
                .map(|c| h.leaf_clusters().members(c).to_vec())
                .collect();
            merge_pairs(&reds).unwrap()
        };
        let dist_sq = |a: &[usize], b: &[usize]| -> f64 {
            let mut best = f64::INFINITY;
            for &p in a {
                for &q in b {
                    let d: f64 = (0..3).map(|d| (coords[p][d] - coords[q][d]).powi(2)).sum();
                    best = best.min(d);
                }
            }
            best
        };
        let size_sq = |m: &[usize]| -> f64 {
            let bb = BoundingBox::of(&coords, m);
            bb.diag_sq()
        };
        // find the cluster containing index 0 (grid corner)
        let corner = (0..16).find(|&c| members[c].contains(&0)).unwrap();
        let mut expected_nbrs = Vec::new();
        for j in 0..16 {
            if j == corner {
                continue;
            }
            let s = size_sq(&members[corner]).max(size_sq(&members[j]));
            if dist_sq(&members[corner], &members[j]) <= s * (1.0 + 1e-12) {
                expected_nbrs.push(j);
            }
        }
        assert_eq!(topo.adjacency[corner], expected_nbrs);
        assert!(expected_nbrs.len() <= 3);
        let (nbrs, ws) = h.interaction_lists(0, corner);
        assert_eq!(nbrs, expected_nbrs);
        assert_eq!(nbrs.len() + ws.len(), 15);
    }

    #[test]
    fn dump_json_parses() {
        let a = chain(16);
        let h = ClusterHierarchy::build(&a, None, 2, WellSepPredicate::GraphAdjacency).unwrap();
        let s = h.dump_json();
        let v: serde_json::Value = serde_json::from_str(&s).unwrap();
        assert_eq!(v["depth"], 2);
    }
}
