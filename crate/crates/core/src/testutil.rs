//! Shared fixtures for unit tests.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::adg::{Adg, AdgProblem, Claim, ClaimId};

/// 12-claim diamond-plus-chain graph used as a numeric anchor.
pub fn case_study_edges() -> Vec<(ClaimId, ClaimId)> {
    vec![
        (0, 1),
        (0, 2),
        (1, 4),
        (2, 4),
        (3, 4),
        (4, 6),
        (5, 6),
        (6, 8),
        (7, 8),
        (8, 9),
        (9, 10),
        (10, 11),
    ]
}

/// Problem with given labels and edges; no features.
pub fn graph(labels: &[u8], edges: &[(ClaimId, ClaimId)]) -> Adg {
    let claims = labels.iter().map(|&l| Claim::new(vec![], l == 1, None)).collect();
    AdgProblem::new("test".to_string(), claims, edges.to_vec())
        .validate(0)
        .unwrap()
}

/// Deterministic pseudo-random layered DAG, used by property tests. `state`
/// seeds a small xorshift generator so callers stay independent of rand.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n.max(1)
    }

    pub fn f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Random DAG over `n` nodes: each ordered pair (u, v) with u < v becomes an
/// edge with probability `p`. Labels drawn uniformly.
pub fn random_graph(n: usize, p: f64, rng: &mut XorShift) -> Adg {
    let mut edges = Vec::new();
    for u in 0..n as ClaimId {
        for v in (u + 1)..n as ClaimId {
            if rng.f64() < p {
                edges.push((u, v));
            }
        }
    }
    let labels: Vec<u8> = (0..n).map(|_| (rng.f64() < 0.7) as u8).collect();
    graph(&labels, &edges)
}
