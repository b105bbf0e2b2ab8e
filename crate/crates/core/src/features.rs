//! Structural per-claim graph features.
//!
//! Feature semantics follow the NetworkX conventions for directed graphs so
//! that natively computed values interoperate with datasets whose features
//! were extracted externally: pagerank with damping 0.85 and uniform dangling
//! redistribution, Brandes betweenness normalized by (n-1)(n-2), closeness on
//! incoming distances with the Wasserman-Faust scaling, and the Fagiolo
//! directed clustering coefficient.

use alloc::vec;
use alloc::vec::Vec;

use crate::adg::{Adg, ClaimId};

/// Emitted feature keys, in `feature_vector` order.
pub const STRUCTURAL_FEATURE_NAMES: [&str; 10] = [
    "nx_in_degree",
    "nx_out_degree",
    "nx_pagerank",
    "nx_betweenness",
    "nx_closeness",
    "nx_clustering",
    "nx_is_source",
    "nx_is_sink",
    "nx_reachability",
    "nx_depth_from_sources",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralFeatures {
    pub in_degree: usize,
    pub out_degree: usize,
    pub pagerank: f64,
    pub betweenness: f64,
    pub closeness: f64,
    pub clustering: f64,
    pub is_source: bool,
    pub is_sink: bool,
    /// Number of descendants.
    pub reachability: usize,
    /// Longest path from any source node.
    pub depth_from_sources: usize,
}

impl StructuralFeatures {
    /// Values in [`STRUCTURAL_FEATURE_NAMES`] order.
    pub fn feature_vector(&self) -> [f64; 10] {
        [
            self.in_degree as f64,
            self.out_degree as f64,
            self.pagerank,
            self.betweenness,
            self.closeness,
            self.clustering,
            self.is_source as u8 as f64,
            self.is_sink as u8 as f64,
            self.reachability as f64,
            self.depth_from_sources as f64,
        ]
    }
}

const PAGERANK_DAMPING: f64 = 0.85;
const PAGERANK_TOL: f64 = 1e-10;

/// Deterministic structural features for every claim of a validated graph,
/// indexed by claim id.
pub fn compute_structural_features(adg: &Adg) -> Vec<StructuralFeatures> {
    let n = adg.n_claims();
    if n == 0 {
        return Vec::new();
    }
    let pagerank = pagerank(adg);
    let betweenness = betweenness(adg);
    let closeness = closeness(adg);
    let clustering = clustering(adg);
    let depth = depth_from_sources(adg);

    (0..n as ClaimId)
        .map(|v| {
            let in_degree = adg.parents(v).unwrap().len();
            let out_degree = adg.children(v).unwrap().len();
            StructuralFeatures {
                in_degree,
                out_degree,
                pagerank: pagerank[v as usize],
                betweenness: betweenness[v as usize],
                closeness: closeness[v as usize],
                clustering: clustering[v as usize],
                is_source: in_degree == 0,
                is_sink: out_degree == 0,
                reachability: adg.descendants(v).unwrap().len(),
                depth_from_sources: depth[v as usize],
            }
        })
        .collect()
}

/// Power iteration with uniform start; dangling mass is redistributed
/// uniformly. Iterates until the L1 residual drops below 1e-10, so the
/// scores sum to one well within 1e-9.
fn pagerank(adg: &Adg) -> Vec<f64> {
    let n = adg.n_claims();
    let nf = n as f64;
    let mut rank = vec![1.0 / nf; n];
    let mut next = vec![0.0; n];
    for _ in 0..1000 {
        let mut dangling = 0.0;
        for v in 0..n {
            let children = adg.children(v as ClaimId).unwrap();
            if children.is_empty() {
                dangling += rank[v];
            }
        }
        let base = (1.0 - PAGERANK_DAMPING) / nf + PAGERANK_DAMPING * dangling / nf;
        next.iter_mut().for_each(|x| *x = base);
        for v in 0..n {
            let children = adg.children(v as ClaimId).unwrap();
            if !children.is_empty() {
                let share = PAGERANK_DAMPING * rank[v] / children.len() as f64;
                for &c in children {
                    next[c as usize] += share;
                }
            }
        }
        let residual: f64 = rank.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        core::mem::swap(&mut rank, &mut next);
        if residual < PAGERANK_TOL {
            break;
        }
    }
    rank
}

/// Brandes' algorithm on the directed unweighted graph, endpoints excluded,
/// normalized by (n-1)(n-2).
fn betweenness(adg: &Adg) -> Vec<f64> {
    let n = adg.n_claims();
    let mut centrality = vec![0.0; n];
    if n < 3 {
        return centrality;
    }
    for s in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0; n];
        let mut dist = vec![usize::MAX; n];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = alloc::collections::VecDeque::new();
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in adg.children(v as ClaimId).unwrap() {
                let w = w as usize;
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                centrality[w] += delta[w];
            }
        }
    }
    let scale = 1.0 / ((n - 1) as f64 * (n - 2) as f64);
    centrality.iter_mut().for_each(|x| *x *= scale);
    centrality
}

/// Closeness on incoming shortest paths with the Wasserman-Faust correction:
/// ((r-1)/sum_d) * ((r-1)/(n-1)) where r counts the nodes that reach `v`.
fn closeness(adg: &Adg) -> Vec<f64> {
    let n = adg.n_claims();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    for v in 0..n {
        // BFS over reversed edges.
        let mut dist = vec![usize::MAX; n];
        dist[v] = 0;
        let mut queue = alloc::collections::VecDeque::new();
        queue.push_back(v);
        let mut total = 0usize;
        let mut reached = 1usize;
        while let Some(u) = queue.pop_front() {
            for &p in adg.parents(u as ClaimId).unwrap() {
                let p = p as usize;
                if dist[p] == usize::MAX {
                    dist[p] = dist[u] + 1;
                    total += dist[p];
                    reached += 1;
                    queue.push_back(p);
                }
            }
        }
        if total > 0 {
            let r = (reached - 1) as f64;
            out[v] = (r / total as f64) * (r / (n - 1) as f64);
        }
    }
    out
}

/// Fagiolo directed clustering: (A + A^T)^3 diagonal over the number of
/// possible directed triangles, zero when the degree admits none.
fn clustering(adg: &Adg) -> Vec<f64> {
    let n = adg.n_claims();
    let mut sym = vec![vec![0u8; n]; n];
    for &(p, c) in adg.edges() {
        sym[p as usize][c as usize] += 1;
        sym[c as usize][p as usize] += 1;
    }
    (0..n)
        .map(|v| {
            let in_deg = adg.parents(v as ClaimId).unwrap().len();
            let out_deg = adg.children(v as ClaimId).unwrap().len();
            let total = in_deg + out_deg;
            // Reciprocal pairs mark both directions; a DAG has none.
            let bidir = sym[v].iter().filter(|&&x| x == 2).count();
            let denom = 2.0 * (total * total.saturating_sub(1)) as f64 - 4.0 * bidir as f64;
            if denom <= 0.0 {
                return 0.0;
            }
            let mut walks = 0u64;
            for j in 0..n {
                if sym[v][j] == 0 {
                    continue;
                }
                for k in 0..n {
                    walks += sym[v][j] as u64 * sym[j][k] as u64 * sym[k][v] as u64;
                }
            }
            walks as f64 / denom
        })
        .collect()
}

/// Longest-path depth: sources sit at 0, every other node one past its
/// deepest parent.
fn depth_from_sources(adg: &Adg) -> Vec<usize> {
    let n = adg.n_claims();
    let mut depth = vec![0usize; n];
    for &v in adg.topo_order() {
        let parents = adg.parents(v).unwrap();
        depth[v as usize] = parents.iter().map(|&p| depth[p as usize] + 1).max().unwrap_or(0);
    }
    depth
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{case_study_edges, graph};

    #[test]
    fn singleton_graph() {
        let adg = graph(&[1], &[]);
        let f = &compute_structural_features(&adg)[0];
        assert!((f.pagerank - 1.0).abs() < 1e-12);
        assert_eq!(f.betweenness, 0.0);
        assert_eq!(f.reachability, 0);
        assert!(f.is_source);
        assert!(f.is_sink);
        assert_eq!(f.depth_from_sources, 0);
    }

    #[test]
    fn case_study_claim_8_anchors() {
        let adg = graph(&[1; 12], &case_study_edges());
        let f = &compute_structural_features(&adg)[8];
        assert_eq!(f.in_degree, 2);
        assert_eq!(f.out_degree, 1);
        assert_eq!(f.reachability, 3);
        // 24 source/target pairs route through claim 8; 24 / (11 * 10) = 0.2181..
        assert!((f.betweenness - 24.0 / 110.0).abs() < 1e-12);
        assert!((f.betweenness - 0.22).abs() < 0.01);
    }

    #[test]
    fn chain_depth_and_reachability() {
        let adg = graph(&[1; 4], &[(0, 1), (1, 2), (2, 3)]);
        let feats = compute_structural_features(&adg);
        assert_eq!(feats[0].depth_from_sources, 0);
        assert_eq!(feats[0].reachability, 3);
        assert_eq!(feats[3].depth_from_sources, 3);
        assert_eq!(feats[3].reachability, 0);
    }

    #[test]
    fn depth_uses_longest_path() {
        // 0 -> 3 directly and 0 -> 1 -> 2 -> 3.
        let adg = graph(&[1; 4], &[(0, 3), (0, 1), (1, 2), (2, 3)]);
        let feats = compute_structural_features(&adg);
        assert_eq!(feats[3].depth_from_sources, 3);
    }

    #[test]
    fn pagerank_sums_to_one() {
        let adg = graph(&[1; 12], &case_study_edges());
        let feats = compute_structural_features(&adg);
        let sum: f64 = feats.iter().map(|f| f.pagerank).sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(feats.iter().all(|f| f.pagerank > 0.0 && f.pagerank <= 1.0));
    }

    #[test]
    fn closeness_matches_reverse_distance_form() {
        // 0 -> 1, 1 -> 2, 1 -> 3, 1 -> 4, 1 -> 6, 6 -> 5 (7 nodes). Node 2 is
        // reached by {0, 1} at distances {2, 1}: (2/3) * (2/6) = 0.2222...
        let adg = graph(&[1; 7], &[(0, 1), (1, 2), (1, 3), (1, 4), (1, 6), (6, 5)]);
        let feats = compute_structural_features(&adg);
        assert!((feats[2].closeness - 2.0 / 9.0).abs() < 1e-12);
        assert!((feats[2].closeness - 0.22).abs() < 0.01);
    }

    #[test]
    fn clustering_counts_transitive_triangles() {
        let adg = graph(&[1; 3], &[(0, 1), (0, 2), (1, 2)]);
        let feats = compute_structural_features(&adg);
        for f in &feats {
            assert!((f.clustering - 0.5).abs() < 1e-12);
        }
        // Triangle-free diamond.
        let adg = graph(&[1; 4], &[(0, 1), (0, 2), (1, 3), (2, 3)]);
        assert!(compute_structural_features(&adg).iter().all(|f| f.clustering == 0.0));
    }

    #[test]
    fn source_sink_flags_match_degrees() {
        let adg = graph(&[1; 12], &case_study_edges());
        for f in compute_structural_features(&adg) {
            assert_eq!(f.is_source, f.in_degree == 0);
            assert_eq!(f.is_sink, f.out_degree == 0);
        }
    }
}
