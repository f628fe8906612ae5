//! Linear assignment over the affinity matrix.

use crate::affinity::AffinityMatrix;
use crate::error::{Error, Result};
use crate::geometry::RigidTransform;

/// One accepted infrastructure ↔ vehicle correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchedPair {
    pub infra: usize,
    pub vehicle: usize,
    pub affinity: f64,
    pub hypothesis: Option<RigidTransform>,
}

/// Common objects found in both scenes.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub pairs: Vec<MatchedPair>,
    pub threshold_used: f64,
}

impl MatchSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Maximum-weight one-to-one assignment of size min(m, n), as (row, col)
/// pairs sorted by row.
///
/// The matrix is padded to a square with zero affinity, turned into a cost
/// matrix by negation (`max - a`) and solved with the O(n³) shortest
/// augmenting path form of the Hungarian method. All comparisons are strict,
/// so among equal-cost alternatives the lowest column index wins and the
/// result is reproducible.
pub fn solve_assignment(a: &AffinityMatrix) -> Vec<(usize, usize)> {
    let (m, n) = (a.rows(), a.cols());
    if m == 0 || n == 0 {
        return Vec::new();
    }
    let size = m.max(n);
    let max = a.values().iter().copied().fold(0.0f64, f64::max);
    let cost = |i: usize, j: usize| if i < m && j < n { max - a.get(i, j) } else { max };

    // 1-based potentials; p[j] is the row assigned to column j, 0 = none.
    let mut u = vec![0.0f64; size + 1];
    let mut v = vec![0.0f64; size + 1];
    let mut p = vec![0usize; size + 1];
    let mut way = vec![0usize; size + 1];
    for i in 1..=size {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; size + 1];
        let mut used = vec![false; size + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=size {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=size {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut pairs: Vec<(usize, usize)> = (1..=size)
        .filter(|&j| p[j] != 0)
        .map(|j| (p[j] - 1, j - 1))
        .filter(|&(i, j)| i < m && j < n)
        .collect();
    pairs.sort_unstable();
    pairs
}

/// Total affinity of an assignment.
pub fn assignment_weight(a: &AffinityMatrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(i, j)| a.get(i, j)).sum()
}

/// Keeps assigned pairs whose affinity reaches `threshold`. Zero-affinity
/// pairs carry no evidence and are always dropped.
pub fn filter_matches(assignment: &[(usize, usize)], a: &AffinityMatrix, threshold: f64) -> Result<MatchSet> {
    if !(threshold >= 0.0) {
        return Err(Error::InvalidParams(format!("match threshold must be >= 0, got {threshold}")));
    }
    let pairs: Vec<MatchedPair> = assignment
        .iter()
        .filter(|&&(i, j)| {
            let v = a.get(i, j);
            v > 0.0 && v >= threshold
        })
        .map(|&(i, j)| MatchedPair {
            infra: i,
            vehicle: j,
            affinity: a.get(i, j),
            hypothesis: a.hypothesis(i, j).copied(),
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoMatches);
    }
    Ok(MatchSet {
        pairs,
        threshold_used: threshold,
    })
}
