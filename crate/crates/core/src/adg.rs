//! Directed acyclic claim graphs and the coherent-factuality predicate.
//!
//! A problem is a set of atomic claims plus dependency edges pointing from a
//! premise to the claim that uses it. Claim ids are dense 0-based indices into
//! the claim list. Validation checks acyclicity once and caches the transitive
//! ancestor/descendant closures; the validated [`Adg`] is immutable afterwards
//! and safe to share across threads.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use thiserror::Error;

/// Dense 0-based claim index within one problem.
pub type ClaimId = u32;

/// Set of claim ids, ordered for deterministic iteration.
pub type ClaimSet = BTreeSet<ClaimId>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdgError {
    #[error("dependency cycle through claim {claim}")]
    CycleDetected { claim: ClaimId },
    #[error("edge ({parent}, {child}) references a claim outside 0..{n_claims}")]
    InvalidEdgeEndpoint {
        parent: ClaimId,
        child: ClaimId,
        n_claims: usize,
    },
    #[error("duplicate edge ({parent}, {child})")]
    DuplicateEdge { parent: ClaimId, child: ClaimId },
    #[error("unknown claim id {claim} (problem has {n_claims} claims)")]
    UnknownClaimId { claim: ClaimId, n_claims: usize },
    #[error("claim {claim} has {found} features but the schema expects {expected}")]
    FeatureLengthMismatch {
        claim: ClaimId,
        expected: usize,
        found: usize,
    },
    #[error("feature name {index} is empty")]
    EmptyFeatureName { index: usize },
    #[error("duplicate feature name `{name}`")]
    DuplicateFeatureName { name: String },
    #[error("claim {claim} has a non-finite feature or frequency value")]
    NonFiniteValue { claim: ClaimId },
}

/// One atomic claim: a feature vector, a truth label and an optional
/// self-consistency frequency count.
#[derive(Debug, Clone, PartialEq)]
pub struct Claim {
    pub features: Vec<f64>,
    /// True when the claim is factually correct.
    pub label: bool,
    /// Self-consistency regeneration count; `None` when the dataset does not
    /// carry frequencies.
    pub freq: Option<f64>,
}

impl Claim {
    pub fn new(features: Vec<f64>, label: bool, freq: Option<f64>) -> Self {
        Self {
            features,
            label,
            freq,
        }
    }
}

/// Ordered list of feature names shared by every claim of a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeatureSchema {
    names: Vec<String>,
}

impl FeatureSchema {
    /// Names must be unique and non-empty.
    pub fn new(names: Vec<String>) -> Result<Self, AdgError> {
        let mut seen = BTreeSet::new();
        for (index, name) in names.iter().enumerate() {
            if name.is_empty() {
                return Err(AdgError::EmptyFeatureName { index });
            }
            if !seen.insert(name.clone()) {
                return Err(AdgError::DuplicateFeatureName { name: name.clone() });
            }
        }
        Ok(Self { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// An unvalidated claim graph: claims plus (parent, child) dependency edges.
#[derive(Debug, Clone, PartialEq)]
pub struct AdgProblem {
    pub id: String,
    pub claims: Vec<Claim>,
    pub edges: Vec<(ClaimId, ClaimId)>,
}

impl AdgProblem {
    pub fn new(id: impl Into<String>, claims: Vec<Claim>, edges: Vec<(ClaimId, ClaimId)>) -> Self {
        Self {
            id: id.into(),
            claims,
            edges,
        }
    }

    /// Checks edge endpoints, rejects duplicates and cycles (self-loops are
    /// cycles), and caches a topological order plus ancestor/descendant
    /// closures. Feature vectors must all have `n_features` entries.
    pub fn validate(self, n_features: usize) -> Result<Adg, AdgError> {
        let n = self.claims.len();

        for (id, claim) in self.claims.iter().enumerate() {
            let id = id as ClaimId;
            if claim.features.len() != n_features {
                return Err(AdgError::FeatureLengthMismatch {
                    claim: id,
                    expected: n_features,
                    found: claim.features.len(),
                });
            }
            let finite =
                claim.features.iter().all(|x| x.is_finite()) && claim.freq.is_none_or(|f| f.is_finite());
            if !finite {
                return Err(AdgError::NonFiniteValue { claim: id });
            }
        }

        let mut parents: Vec<Vec<ClaimId>> = vec![Vec::new(); n];
        let mut children: Vec<Vec<ClaimId>> = vec![Vec::new(); n];
        let mut seen = BTreeSet::new();
        for &(parent, child) in &self.edges {
            if parent as usize >= n || child as usize >= n {
                return Err(AdgError::InvalidEdgeEndpoint {
                    parent,
                    child,
                    n_claims: n,
                });
            }
            if !seen.insert((parent, child)) {
                return Err(AdgError::DuplicateEdge { parent, child });
            }
            if parent == child {
                return Err(AdgError::CycleDetected { claim: parent });
            }
            parents[child as usize].push(parent);
            children[parent as usize].push(child);
        }
        for list in parents.iter_mut().chain(children.iter_mut()) {
            list.sort_unstable();
        }

        // Kahn's algorithm; any node left with positive in-degree sits on a cycle.
        let mut indegree: Vec<usize> = parents.iter().map(Vec::len).collect();
        let mut queue: Vec<ClaimId> = (0..n as ClaimId).filter(|&v| indegree[v as usize] == 0).collect();
        let mut topo = Vec::with_capacity(n);
        let mut head = 0;
        while head < queue.len() {
            let v = queue[head];
            head += 1;
            topo.push(v);
            for &c in &children[v as usize] {
                indegree[c as usize] -= 1;
                if indegree[c as usize] == 0 {
                    queue.push(c);
                }
            }
        }
        if topo.len() != n {
            let claim = (0..n).find(|&v| indegree[v] > 0).unwrap() as ClaimId;
            return Err(AdgError::CycleDetected { claim });
        }

        let mut ancestors: Vec<BTreeSet<ClaimId>> = vec![BTreeSet::new(); n];
        for &v in &topo {
            let mut acc = BTreeSet::new();
            for &p in &parents[v as usize] {
                acc.insert(p);
                acc.extend(ancestors[p as usize].iter().copied());
            }
            ancestors[v as usize] = acc;
        }
        let mut descendants: Vec<BTreeSet<ClaimId>> = vec![BTreeSet::new(); n];
        for &v in topo.iter().rev() {
            let mut acc = BTreeSet::new();
            for &c in &children[v as usize] {
                acc.insert(c);
                acc.extend(descendants[c as usize].iter().copied());
            }
            descendants[v as usize] = acc;
        }

        let collect = |sets: Vec<BTreeSet<ClaimId>>| -> Vec<Vec<ClaimId>> {
            sets.into_iter().map(|s| s.into_iter().collect()).collect()
        };

        Ok(Adg {
            problem: self,
            n_features,
            topo,
            parents,
            children,
            ancestors: collect(ancestors),
            descendants: collect(descendants),
        })
    }
}

/// A validated claim graph with cached topological order and transitive
/// closures.
#[derive(Debug, Clone, PartialEq)]
pub struct Adg {
    problem: AdgProblem,
    n_features: usize,
    topo: Vec<ClaimId>,
    parents: Vec<Vec<ClaimId>>,
    children: Vec<Vec<ClaimId>>,
    ancestors: Vec<Vec<ClaimId>>,
    descendants: Vec<Vec<ClaimId>>,
}

impl Adg {
    pub fn id(&self) -> &str {
        &self.problem.id
    }

    pub fn n_claims(&self) -> usize {
        self.problem.claims.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn claims(&self) -> &[Claim] {
        &self.problem.claims
    }

    pub fn claim(&self, v: ClaimId) -> Result<&Claim, AdgError> {
        self.problem.claims.get(v as usize).ok_or(AdgError::UnknownClaimId {
            claim: v,
            n_claims: self.n_claims(),
        })
    }

    pub fn edges(&self) -> &[(ClaimId, ClaimId)] {
        &self.problem.edges
    }

    /// Claim ids in a topological order (parents before children).
    pub fn topo_order(&self) -> &[ClaimId] {
        &self.topo
    }

    pub fn parents(&self, v: ClaimId) -> Result<&[ClaimId], AdgError> {
        self.check(v)?;
        Ok(&self.parents[v as usize])
    }

    pub fn children(&self, v: ClaimId) -> Result<&[ClaimId], AdgError> {
        self.check(v)?;
        Ok(&self.children[v as usize])
    }

    /// Transitive closure of parents, excluding `v` itself. Sorted.
    pub fn ancestors(&self, v: ClaimId) -> Result<&[ClaimId], AdgError> {
        self.check(v)?;
        Ok(&self.ancestors[v as usize])
    }

    /// Transitive closure of children, excluding `v` itself. Sorted.
    pub fn descendants(&self, v: ClaimId) -> Result<&[ClaimId], AdgError> {
        self.check(v)?;
        Ok(&self.descendants[v as usize])
    }

    pub fn label(&self, v: ClaimId) -> bool {
        self.problem.claims[v as usize].label
    }

    /// True claims in the problem.
    pub fn true_claims(&self) -> impl Iterator<Item = ClaimId> + '_ {
        (0..self.n_claims() as ClaimId).filter(|&v| self.label(v))
    }

    /// False claims in the problem.
    pub fn false_claims(&self) -> impl Iterator<Item = ClaimId> + '_ {
        (0..self.n_claims() as ClaimId).filter(|&v| !self.label(v))
    }

    /// A retained set is coherently factual when every retained claim is true
    /// and its full ancestor set is retained (hence also true). The empty set
    /// is vacuously coherent; a fully hallucinated problem therefore admits
    /// only the empty retained set.
    pub fn is_coherently_factual(&self, retained: &ClaimSet) -> Result<bool, AdgError> {
        for &v in retained {
            self.check(v)?;
        }
        for &v in retained {
            if !self.label(v) {
                return Ok(false);
            }
            if self.ancestors[v as usize].iter().any(|a| !retained.contains(a)) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    fn check(&self, v: ClaimId) -> Result<(), AdgError> {
        if (v as usize) < self.n_claims() {
            Ok(())
        } else {
            Err(AdgError::UnknownClaimId {
                claim: v,
                n_claims: self.n_claims(),
            })
        }
    }
}
