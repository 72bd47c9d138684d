//! Bipartite matching primitives: exact maximum-weight matching and
//! Birkhoff-von Neumann decomposition of fractional matchings.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::rational::{sum, Rational};
use num::traits::{One, Zero};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatchingError {
    #[error("edge ({0}, {1}) out of range")]
    EdgeOutOfRange(usize, usize),
    #[error("negative weight on edge ({0}, {1})")]
    NegativeWeight(usize, usize),
    #[error("fraction on edge ({0}, {1}) outside (0, 1]")]
    BadFraction(usize, usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("row or column sums exceed 1")]
    NotSubstochastic,
    #[error("no matching saturates the left side")]
    NoSaturatingMatching,
    #[error("no perfect matching on the support")]
    NotFound,
    #[error("decomposition failed to reconstruct its input")]
    InvariantViolation,
}

/// A bipartite graph with nonnegative rational edge weights. Vertex pairs
/// without an edge are not matchable.
#[derive(Debug, Clone)]
pub struct WeightedBipartiteGraph {
    pub left: usize,
    pub right: usize,
    weights: BTreeMap<(usize, usize), Rational>,
}

impl WeightedBipartiteGraph {
    pub fn new(
        left: usize,
        right: usize,
        edges: Vec<(usize, usize, Rational)>,
    ) -> Result<Self, MatchingError> {
        let mut weights = BTreeMap::new();
        for (l, r, w) in edges {
            if l >= left || r >= right {
                return Err(MatchingError::EdgeOutOfRange(l, r));
            }
            if w < Rational::zero() {
                return Err(MatchingError::NegativeWeight(l, r));
            }
            if weights.insert((l, r), w).is_some() {
                return Err(MatchingError::DuplicateEdge(l, r));
            }
        }
        Ok(WeightedBipartiteGraph {
            left,
            right,
            weights,
        })
    }

    pub fn weight(&self, l: usize, r: usize) -> Option<&Rational> {
        self.weights.get(&(l, r))
    }
}

/// Maximum-weight matching that saturates every left vertex, by successive
/// shortest augmenting paths with exact rational potentials (Hungarian
/// method). Missing edges are unmatchable; if some left vertex cannot be
/// saturated the graph fails Hall's condition and an error is returned.
///
/// Ties are resolved deterministically toward lower column indices.
pub fn max_weight_matching(
    g: &WeightedBipartiteGraph,
) -> Result<Vec<(usize, usize)>, MatchingError> {
    if g.left > g.right {
        return Err(MatchingError::NoSaturatingMatching);
    }
    if g.left == 0 {
        return Ok(Vec::new());
    }
    let nr = g.right;
    // Minimize cost = -weight.
    let cost = |l: usize, r: usize| g.weights.get(&(l, r)).map(|w| -w);

    // job[r] = left vertex currently matched to column r; index nr is a
    // virtual column holding the vertex being inserted.
    let mut job: Vec<Option<usize>> = vec![None; nr + 1];
    let mut pot_left = vec![Rational::zero(); g.left];
    let mut pot_right = vec![Rational::zero(); nr + 1];

    for l in 0..g.left {
        let mut w_cur = nr;
        job[nr] = Some(l);
        let mut min_to: Vec<Option<Rational>> = vec![None; nr + 1];
        let mut prev: Vec<Option<usize>> = vec![None; nr + 1];
        let mut visited = vec![false; nr + 1];

        while let Some(row) = job[w_cur] {
            visited[w_cur] = true;
            let mut delta: Option<Rational> = None;
            let mut w_next = None;
            for r in 0..nr {
                if visited[r] {
                    continue;
                }
                if let Some(c) = cost(row, r) {
                    let diff = c - &pot_left[row] - &pot_right[r];
                    if min_to[r].as_ref().is_none_or(|m| diff < *m) {
                        min_to[r] = Some(diff);
                        prev[r] = Some(w_cur);
                    }
                }
                if let Some(m) = &min_to[r] {
                    if delta.as_ref().is_none_or(|d| m < d) {
                        delta = Some(m.clone());
                        w_next = Some(r);
                    }
                }
            }
            let (Some(delta), Some(w_next_col)) = (delta, w_next) else {
                return Err(MatchingError::NoSaturatingMatching);
            };
            for r in 0..=nr {
                if visited[r] {
                    pot_left[job[r].unwrap()] += &delta;
                    pot_right[r] -= &delta;
                } else if let Some(m) = &mut min_to[r] {
                    *m -= &delta;
                }
            }
            w_cur = w_next_col;
        }
        // augment along parent pointers
        while w_cur != nr {
            let p = prev[w_cur].expect("augmenting path is connected");
            job[w_cur] = job[p];
            w_cur = p;
        }
    }

    let mut result = Vec::with_capacity(g.left);
    for (r, owner) in job.iter().enumerate().take(nr) {
        if let Some(l) = owner {
            result.push((*l, r));
        }
    }
    result.sort();
    debug_assert_eq!(result.len(), g.left);
    Ok(result)
}

/// A fractional matching: positive fractions on (left, right) pairs with
/// all row and column sums at most 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FractionalMatching {
    pub left: usize,
    pub right: usize,
    entries: BTreeMap<(usize, usize), Rational>,
}

impl FractionalMatching {
    pub fn new(
        left: usize,
        right: usize,
        entries: Vec<(usize, usize, Rational)>,
    ) -> Result<Self, MatchingError> {
        let one = Rational::one();
        let mut map = BTreeMap::new();
        for (l, r, f) in entries {
            if l >= left || r >= right {
                return Err(MatchingError::EdgeOutOfRange(l, r));
            }
            if f <= Rational::zero() || f > one {
                return Err(MatchingError::BadFraction(l, r));
            }
            if map.insert((l, r), f).is_some() {
                return Err(MatchingError::DuplicateEdge(l, r));
            }
        }
        let fm = FractionalMatching {
            left,
            right,
            entries: map,
        };
        for l in 0..left {
            if fm.row_sum(l) > one {
                return Err(MatchingError::NotSubstochastic);
            }
        }
        for r in 0..right {
            if fm.col_sum(r) > one {
                return Err(MatchingError::NotSubstochastic);
            }
        }
        Ok(fm)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(usize, usize), &Rational)> {
        self.entries.iter()
    }

    pub fn row_sum(&self, l: usize) -> Rational {
        sum(self
            .entries
            .range((l, 0)..=(l, self.right.max(1) - 1))
            .map(|(_, f)| f))
    }

    pub fn col_sum(&self, r: usize) -> Rational {
        sum(self
            .entries
            .iter()
            .filter(|((_, rr), _)| *rr == r)
            .map(|(_, f)| f))
    }
}

/// Kuhn's augmenting-path search: a matching on the positive-fraction edges
/// saturating every left vertex that has at least one entry. Lowest-index
/// exploration order makes the result deterministic.
pub fn perfect_matching_on_support(
    fm: &FractionalMatching,
) -> Result<Vec<(usize, usize)>, MatchingError> {
    let adj: Vec<Vec<usize>> = {
        let mut adj = vec![Vec::new(); fm.left];
        for &(l, r) in fm.entries.keys() {
            adj[l].push(r);
        }
        for list in adj.iter_mut() {
            list.sort_unstable();
        }
        adj
    };
    let mut match_right: Vec<Option<usize>> = vec![None; fm.right];
    for l in 0..fm.left {
        if adj[l].is_empty() {
            continue;
        }
        let mut seen = vec![false; fm.right];
        if !augment(l, &adj, &mut match_right, &mut seen) {
            return Err(MatchingError::NotFound);
        }
    }
    let mut result = Vec::new();
    for (r, l) in match_right.iter().enumerate() {
        if let Some(l) = l {
            result.push((*l, r));
        }
    }
    result.sort();
    Ok(result)
}

fn augment(
    l: usize,
    adj: &[Vec<usize>],
    match_right: &mut [Option<usize>],
    seen: &mut [bool],
) -> bool {
    for &r in &adj[l] {
        if seen[r] {
            continue;
        }
        seen[r] = true;
        if match_right[r].is_none() || augment(match_right[r].unwrap(), adj, match_right, seen) {
            match_right[r] = Some(l);
            return true;
        }
    }
    false
}

/// A convex combination of matchings: `(coefficient, edge list)` terms.
pub type MatchingMix = Vec<(Rational, Vec<(usize, usize)>)>;

/// Birkhoff-von Neumann decomposition. The matching is completed to a
/// doubly stochastic square matrix with dummy rows and columns absorbing
/// the residual mass, then perfect matchings are peeled off at the minimum
/// fraction along each one. Dummy edges are stripped from the returned
/// matchings, so coefficients sum to 1 while individual matchings may be
/// partial on the real vertices.
pub fn bvn_decompose(fm: &FractionalMatching) -> Result<MatchingMix, MatchingError> {
    let nl = fm.left;
    let nr = fm.right;
    let n = nl + nr;
    let one = Rational::one();
    let mut mat = vec![vec![Rational::zero(); n]; n];
    for (&(l, r), f) in fm.entries.iter() {
        mat[l][r] = f.clone();
    }
    // dummy column nl + ... wait: dummy column for real row l sits at index
    // nr + l; dummy row for real column r sits at index nl + r.
    let mut col_deficit = vec![Rational::zero(); nr]; // mass dummy row nl+r still needs
    let mut row_deficit = vec![Rational::zero(); nl]; // mass dummy col nr+l still needs
    for l in 0..nl {
        let rs = fm.row_sum(l);
        mat[l][nr + l] = &one - &rs;
        row_deficit[l] = rs;
    }
    for r in 0..nr {
        let cs = fm.col_sum(r);
        mat[nl + r][r] = &one - &cs;
        col_deficit[r] = cs;
    }
    // northwest-corner fill of the dummy-dummy block
    let mut l = 0;
    let mut r = 0;
    while l < nl && r < nr {
        if row_deficit[l].is_zero() {
            l += 1;
            continue;
        }
        if col_deficit[r].is_zero() {
            r += 1;
            continue;
        }
        let take = row_deficit[l].clone().min(col_deficit[r].clone());
        mat[nl + r][nr + l] = take.clone();
        row_deficit[l] -= &take;
        col_deficit[r] -= &take;
    }
    debug_assert!(row_deficit.iter().all(Rational::is_zero));
    debug_assert!(col_deficit.iter().all(Rational::is_zero));

    // peel perfect matchings at the minimum fraction until nothing is left
    let mut result: MatchingMix = Vec::new();
    let mut remaining = one.clone();
    while !remaining.is_zero() {
        let mut support: Vec<(usize, usize, Rational)> = Vec::new();
        for (i, row) in mat.iter().enumerate() {
            for (j, f) in row.iter().enumerate() {
                if !f.is_zero() {
                    support.push((i, j, f / &remaining));
                }
            }
        }
        let square =
            FractionalMatching::new(n, n, support).expect("rescaled peel state is stochastic");
        let matching = perfect_matching_on_support(&square)?;
        if matching.len() != n {
            return Err(MatchingError::NotFound);
        }
        let theta = matching
            .iter()
            .map(|&(i, j)| mat[i][j].clone())
            .min()
            .expect("n >= 1 here");
        for &(i, j) in &matching {
            mat[i][j] -= &theta;
        }
        let real: Vec<(usize, usize)> = matching
            .into_iter()
            .filter(|&(i, j)| i < nl && j < nr)
            .collect();
        remaining -= &theta;
        result.push((theta, real));
    }

    // reconstruction must reproduce the input exactly
    let mut rebuilt: BTreeMap<(usize, usize), Rational> = BTreeMap::new();
    for (coef, matching) in &result {
        for &(l, r) in matching {
            *rebuilt.entry((l, r)).or_insert_with(Rational::zero) += coef;
        }
    }
    rebuilt.retain(|_, f| !f.is_zero());
    if rebuilt != fm.entries {
        return Err(MatchingError::InvariantViolation);
    }
    Ok(result)
}
