//! λ-uniform spanning-tree distributions: marginals from the weighted
//! Laplacian, an exact enumeration oracle, and closure operations on the
//! enumerated law.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{bridges, components, DisjointSets};

/// Default cap on the number of enumerated trees.
pub const DEFAULT_TREE_LIMIT: usize = 1_000_000;
/// Edges lighter than this fraction of the heaviest one are dropped.
const RELATIVE_WEIGHT_FLOOR: f64 = 1e-12;

/// Edge subsets of graphs with at most 128 edges.
pub type EdgeMask = u128;

pub fn mask_of(edges: &[usize]) -> EdgeMask {
    edges.iter().fold(0, |m, &e| m | 1 << e)
}

pub fn mask_members(mask: EdgeMask) -> Vec<usize> {
    (0..128).filter(|&e| mask >> e & 1 == 1).collect()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("support graph is disconnected")]
    Disconnected,
    #[error("edge {index} = ({u},{v}) is invalid for {n} vertices")]
    InvalidEdge { index: usize, u: usize, v: usize, n: usize },
    #[error("edge {index} has weight {weight}; weights must be nonnegative")]
    InvalidWeight { index: usize, weight: f64 },
    #[error("forced edges contain a cycle")]
    ForcedCycle,
    #[error("more than {limit} spanning trees (stopped at {reached})")]
    Budget { limit: usize, reached: usize },
    #[error("enumeration supports at most 128 edges, got {0}")]
    TooManyEdges(usize),
    #[error("constraint has probability zero")]
    EmptySupport,
}

/// Multigraph with a weight per edge. An infinite weight marks an edge that
/// every tree must contain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self, TreeError> {
        for (index, &(u, v, w)) in edges.iter().enumerate() {
            if u >= n || v >= n || u == v {
                return Err(TreeError::InvalidEdge { index, u, v, n });
            }
            if w.is_nan() || w < 0.0 {
                return Err(TreeError::InvalidWeight { index, weight: w });
            }
        }
        Ok(WeightedGraph { n, edges })
    }

    /// All weights set to 1.
    pub fn unit(n: usize, pairs: &[(usize, usize)]) -> Result<Self, TreeError> {
        Self::new(n, pairs.iter().map(|&(u, v)| (u, v, 1.0)).collect())
    }

    pub fn complete(n: usize) -> Self {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in u + 1..n {
                edges.push((u, v, 1.0));
            }
        }
        WeightedGraph { n, edges }
    }

    pub fn cycle(n: usize) -> Self {
        WeightedGraph { n, edges: (0..n).map(|v| (v, (v + 1) % n, 1.0)).collect() }
    }

    pub fn with_weights(&self, weights: &[f64]) -> Result<Self, TreeError> {
        Self::new(self.n, self.edges.iter().zip(weights).map(|(&(u, v, _), &w)| (u, v, w)).collect())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.2).collect()
    }
}

/// `P[e ∈ T]` for every edge under the λ-uniform law, via effective
/// resistances of the weighted Laplacian.
pub fn marginals(g: &WeightedGraph) -> Result<Vec<f64>, TreeError> {
    Ok(tree_statistics(g, false)?.marginals)
}

/// Marginals, log partition function, and optionally the covariance of edge
/// indicators of the λ-uniform law.
#[derive(Debug, Clone)]
pub struct TreeStatistics {
    pub marginals: Vec<f64>,
    /// `ln Σ_T Π_{e∈T, λ_e<∞} λ_e` over trees containing every forced edge.
    pub log_partition: f64,
    /// Dense `m × m` covariance of the indicators `1[e ∈ T]`.
    pub covariance: Option<DMatrix<f64>>,
}

pub fn tree_statistics(g: &WeightedGraph, with_covariance: bool) -> Result<TreeStatistics, TreeError> {
    let m = g.edges.len();
    let mut p = vec![0.0; m];
    let mut forced = DisjointSets::new(g.n);
    for (i, &(u, v, w)) in g.edges.iter().enumerate() {
        if w.is_infinite() {
            if !forced.union(u, v) {
                return Err(TreeError::ForcedCycle);
            }
            p[i] = 1.0;
        }
    }
    let (k, label) = components(g.n, (0..g.n).map(|v| (v, forced.find(v))));
    let scale = g.edges.iter().map(|e| e.2).filter(|w| w.is_finite()).fold(0.0, f64::max);
    let live: Vec<usize> = (0..m)
        .filter(|&i| {
            let (u, v, w) = g.edges[i];
            w.is_finite() && w > RELATIVE_WEIGHT_FLOOR * scale && label[u] != label[v]
        })
        .collect();
    let mut covariance = with_covariance.then(|| DMatrix::zeros(m, m));
    if k == 1 {
        return Ok(TreeStatistics { marginals: p, log_partition: 0.0, covariance });
    }
    let contracted: Vec<(usize, usize)> = live.iter().map(|&i| (label[g.edges[i].0], label[g.edges[i].1])).collect();
    if components(k, contracted.iter().copied()).0 != 1 {
        return Err(TreeError::Disconnected);
    }
    // Reduced Laplacian with the last super-vertex grounded.
    let dim = k - 1;
    let mut lap = DMatrix::<f64>::zeros(dim, dim);
    for (&i, &(a, b)) in live.iter().zip(&contracted) {
        let w = g.edges[i].2 / scale;
        if a < dim {
            lap[(a, a)] += w;
        }
        if b < dim {
            lap[(b, b)] += w;
        }
        if a < dim && b < dim {
            lap[(a, b)] -= w;
            lap[(b, a)] -= w;
        }
    }
    let chol = lap.cholesky().ok_or(TreeError::Disconnected)?;
    let log_partition = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() + dim as f64 * scale.ln();
    let inv = chol.inverse();
    let entry = |a: usize, b: usize| if a < dim && b < dim { inv[(a, b)] } else { 0.0 };
    let is_bridge = bridges(k, &contracted);
    for (j, (&i, &(a, b))) in live.iter().zip(&contracted).enumerate() {
        p[i] = if is_bridge[j] {
            1.0
        } else {
            let resistance = entry(a, a) + entry(b, b) - 2.0 * entry(a, b);
            (g.edges[i].2 / scale * resistance).clamp(0.0, 1.0)
        };
    }
    if let Some(cov) = covariance.as_mut() {
        // Transfer currents: Cov(e, f) = -w_e w_f (b_e' L⁻¹ b_f)² for e ≠ f.
        for (j1, (&e, &(a, b))) in live.iter().zip(&contracted).enumerate() {
            if is_bridge[j1] {
                continue;
            }
            let we = g.edges[e].2 / scale;
            for (j2, (&f, &(c, d))) in live.iter().zip(&contracted).enumerate() {
                if j2 <= j1 || is_bridge[j2] {
                    continue;
                }
                let transfer = entry(a, c) - entry(a, d) - entry(b, c) + entry(b, d);
                let value = -we * (g.edges[f].2 / scale) * transfer * transfer;
                cov[(e, f)] = value;
                cov[(f, e)] = value;
            }
            cov[(e, e)] = p[e] * (1.0 - p[e]);
        }
    }
    Ok(TreeStatistics { marginals: p, log_partition, covariance })
}

/// A spanning tree as an edge mask with its probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightedTree {
    pub edges: EdgeMask,
    pub probability: f64,
}

/// A finite law on spanning trees listed explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactTreeDistribution {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub trees: Vec<WeightedTree>,
    pub marginals: Vec<f64>,
}

/// Events on trees that closure operations condition on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeConstraint {
    EdgeIn(usize),
    EdgeOut(usize),
    /// The tree restricted to the induced edges of these vertices is a spanning tree of them.
    SetIsTree(Vec<usize>),
}

/// Lists every spanning tree with probability proportional to the product
/// of its weights. Edges of weight zero never appear; infinite weights are
/// forced into every tree.
pub fn enumerate_trees(g: &WeightedGraph, limit: usize) -> Result<ExactTreeDistribution, TreeError> {
    let m = g.edges.len();
    if m > 128 {
        return Err(TreeError::TooManyEdges(m));
    }
    let usable: Vec<bool> = g.edges.iter().map(|e| e.2 > 0.0).collect();
    let forced: Vec<bool> = g.edges.iter().map(|e| e.2.is_infinite()).collect();
    let mut walker = Enumerator { g, usable: &usable, forced: &forced, limit, found: Vec::new(), chosen: 0 };
    let mut sets = UndoSets::new(g.n);
    if g.n > 1 && !walker.still_connectable(&sets, 0) {
        return Err(TreeError::Disconnected);
    }
    walker.descend(0, &mut sets, g.n.saturating_sub(1), 1.0)?;
    let edges = g.edges.iter().map(|e| (e.0, e.1)).collect();
    Ok(ExactTreeDistribution::from_weights(g.n, edges, walker.found))
}

struct Enumerator<'a> {
    g: &'a WeightedGraph,
    usable: &'a [bool],
    forced: &'a [bool],
    limit: usize,
    found: Vec<WeightedTree>,
    chosen: EdgeMask,
}

impl Enumerator<'_> {
    fn descend(&mut self, i: usize, sets: &mut UndoSets, needed: usize, weight: f64) -> Result<(), TreeError> {
        if needed == 0 {
            if (i..self.g.edges.len()).any(|j| self.forced[j]) {
                return Ok(());
            }
            if self.found.len() == self.limit {
                return Err(TreeError::Budget { limit: self.limit, reached: self.found.len() + 1 });
            }
            self.found.push(WeightedTree { edges: self.chosen, probability: weight });
            return Ok(());
        }
        if i == self.g.edges.len() {
            return Ok(());
        }
        let (u, v, w) = self.g.edges[i];
        if self.usable[i] {
            let mark = sets.mark();
            if sets.union(u, v) {
                self.chosen |= 1 << i;
                let factor = if w.is_finite() { w } else { 1.0 };
                self.descend(i + 1, sets, needed - 1, weight * factor)?;
                self.chosen &= !(1 << i);
            }
            sets.rollback(mark);
        }
        if !self.forced[i] && self.still_connectable(sets, i + 1) {
            self.descend(i + 1, sets, needed, weight)?;
        }
        Ok(())
    }

    /// Whether chosen edges plus usable edges from `from` on still span.
    fn still_connectable(&self, sets: &UndoSets, from: usize) -> bool {
        let mut probe = DisjointSets::new(self.g.n);
        for v in 0..self.g.n {
            probe.union(v, sets.find(v));
        }
        let mut parts = (0..self.g.n).filter(|&v| sets.find(v) == v).count();
        for j in from..self.g.edges.len() {
            if self.usable[j] && probe.union(self.g.edges[j].0, self.g.edges[j].1) {
                parts -= 1;
                if parts == 1 {
                    return true;
                }
            }
        }
        parts == 1
    }
}

/// Union-find without path compression so unions can be undone.
struct UndoSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    history: Vec<usize>,
}

impl UndoSets {
    fn new(n: usize) -> Self {
        UndoSets { parent: (0..n).collect(), size: vec![1; n], history: Vec::new() }
    }

    fn find(&self, mut v: usize) -> usize {
        while self.parent[v] != v {
            v = self.parent[v];
        }
        v
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.history.push(rb);
        true
    }

    fn mark(&self) -> usize {
        self.history.len()
    }

    fn rollback(&mut self, mark: usize) {
        while self.history.len() > mark {
            let rb = self.history.pop().unwrap_or_default();
            let ra = self.parent[rb];
            self.size[ra] -= self.size[rb];
            self.parent[rb] = rb;
        }
    }
}

/// Distribution of `|A ∩ T|` for an edge set `A`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSequence {
    pub probabilities: Vec<f64>,
    pub mean: f64,
    pub mode: usize,
}

impl RankSequence {
    /// `p_k² ≥ p_{k-1} p_{k+1}` up to `tol` for every interior `k`.
    pub fn is_log_concave(&self, tol: f64) -> bool {
        self.probabilities.windows(3).all(|w| w[1] * w[1] + tol >= w[0] * w[2])
    }

    /// Whether some zero lies strictly between two positive entries.
    pub fn has_internal_zeros(&self, tol: f64) -> bool {
        let support: Vec<usize> =
            (0..self.probabilities.len()).filter(|&k| self.probabilities[k] > tol).collect();
        match (support.first(), support.last()) {
            (Some(&lo), Some(&hi)) => support.len() != hi - lo + 1,
            _ => false,
        }
    }

    pub fn mode_near_mean(&self) -> bool {
        (self.mode as f64 - self.mean).abs() <= 1.0 + 1e-12
    }
}

impl ExactTreeDistribution {
    /// Normalizes nonnegative tree weights into a distribution.
    pub fn from_weights(n: usize, edges: Vec<(usize, usize)>, mut trees: Vec<WeightedTree>) -> Self {
        let total: f64 = trees.iter().map(|t| t.probability).sum();
        for t in &mut trees {
            t.probability /= total;
        }
        let mut d = ExactTreeDistribution { n, marginals: Vec::new(), edges, trees };
        d.marginals = d.edge_marginals();
        d
    }

    fn edge_marginals(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.edges.len()];
        for t in &self.trees {
            for e in mask_members(t.edges) {
                p[e] += t.probability;
            }
        }
        p
    }

    pub fn probability(&self, event: impl Fn(EdgeMask) -> bool) -> f64 {
        self.trees.iter().filter(|t| event(t.edges)).map(|t| t.probability).sum()
    }

    /// Law of `|A ∩ T|` over `k = 0..=|A|`.
    pub fn rank_sequence(&self, a: EdgeMask) -> RankSequence {
        let size = a.count_ones() as usize;
        let mut probabilities = vec![0.0; size + 1];
        for t in &self.trees {
            probabilities[(t.edges & a).count_ones() as usize] += t.probability;
        }
        let mean = probabilities.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
        let mode = (0..=size).fold(0, |best, k| if probabilities[k] > probabilities[best] { k } else { best });
        RankSequence { probabilities, mean, mode }
    }

    /// Edges of `E(S)` for a vertex set `S`.
    pub fn induced_edges(&self, vertices: &[usize]) -> EdgeMask {
        let inside = self.indicator(vertices);
        self.edge_mask(|u, v| inside[u] && inside[v])
    }

    /// Edges of `δ(S)`.
    pub fn boundary_edges(&self, vertices: &[usize]) -> EdgeMask {
        let inside = self.indicator(vertices);
        self.edge_mask(|u, v| inside[u] != inside[v])
    }

    /// Edges with one endpoint in each of two disjoint vertex sets.
    pub fn edges_between(&self, a: &[usize], b: &[usize]) -> EdgeMask {
        let (ia, ib) = (self.indicator(a), self.indicator(b));
        self.edge_mask(|u, v| (ia[u] && ib[v]) || (ia[v] && ib[u]))
    }

    pub fn edge_mask(&self, keep: impl Fn(usize, usize) -> bool) -> EdgeMask {
        self.edges.iter().enumerate().filter(|(_, &(u, v))| keep(u, v)).fold(0, |m, (i, _)| m | 1 << i)
    }

    fn indicator(&self, vertices: &[usize]) -> Vec<bool> {
        let mut inside = vec![false; self.n];
        for &v in vertices {
            inside[v] = true;
        }
        inside
    }

    /// Whether `T ∩ E(S)` spans `S` as a tree.
    pub fn is_tree_on(&self, tree: EdgeMask, vertices: &[usize]) -> bool {
        (tree & self.induced_edges(vertices)).count_ones() as usize + 1 == vertices.len()
    }

    /// Restricts to trees satisfying the constraint and renormalizes.
    pub fn condition(&self, constraint: &TreeConstraint) -> Result<Self, TreeError> {
        let keep: Box<dyn Fn(EdgeMask) -> bool> = match constraint {
            TreeConstraint::EdgeIn(e) => {
                let e = *e;
                Box::new(move |t| t >> e & 1 == 1)
            }
            TreeConstraint::EdgeOut(e) => {
                let e = *e;
                Box::new(move |t| t >> e & 1 == 0)
            }
            TreeConstraint::SetIsTree(s) => {
                let induced = self.induced_edges(s);
                let need = s.len().saturating_sub(1) as u32;
                Box::new(move |t| (t & induced).count_ones() == need)
            }
        };
        self.filter(keep)
    }

    /// Conditions on an arbitrary event.
    pub fn filter(&self, keep: impl Fn(EdgeMask) -> bool) -> Result<Self, TreeError> {
        let trees: Vec<WeightedTree> = self.trees.iter().copied().filter(|t| keep(t.edges)).collect();
        if trees.iter().map(|t| t.probability).sum::<f64>() <= 0.0 {
            return Err(TreeError::EmptySupport);
        }
        Ok(Self::from_weights(self.n, self.edges.clone(), trees))
    }

    /// Largest `P[e,f ∈ T] − P[e]P[f]` over distinct edge pairs; nonpositive
    /// for negatively associated laws.
    pub fn max_pair_correlation(&self) -> f64 {
        let m = self.edges.len();
        let mut joint = vec![0.0; m * m];
        for t in &self.trees {
            let members = mask_members(t.edges);
            for &e in &members {
                for &f in &members {
                    joint[e * m + f] += t.probability;
                }
            }
        }
        let mut worst = f64::NEG_INFINITY;
        for e in 0..m {
            for f in e + 1..m {
                worst = worst.max(joint[e * m + f] - self.marginals[e] * self.marginals[f]);
            }
        }
        worst
    }

    /// Smallest `P[e | |F ∩ T| ≥ k] − P[e]` over `e ∈ F` and feasible `k`;
    /// nonnegative under stochastic dominance.
    pub fn min_dominance_gap(&self, f: EdgeMask) -> f64 {
        let mut worst = f64::INFINITY;
        for k in 0..=f.count_ones() {
            let Ok(cond) = self.filter(|t| (t & f).count_ones() >= k) else { continue };
            for e in mask_members(f) {
                worst = worst.min(cond.marginals[e] - self.marginals[e]);
            }
        }
        worst
    }

    pub fn tree_count(&self) -> usize {
        self.trees.len()
    }

    /// Largest `|P[inner, outer] − P[inner]·P[outer]|` after conditioning on
    /// `S` being a tree, where `inner = T ∩ E(S)` and `outer` is the rest.
    /// Zero when the conditioned law is a product over `E(S)` and `E(G/S)`.
    pub fn product_form_gap(&self, vertices: &[usize]) -> Result<f64, TreeError> {
        let cond = self.condition(&TreeConstraint::SetIsTree(vertices.to_vec()))?;
        let induced = self.induced_edges(vertices);
        let mut joint: HashMap<(EdgeMask, EdgeMask), f64> = HashMap::new();
        let mut inner: HashMap<EdgeMask, f64> = HashMap::new();
        let mut outer: HashMap<EdgeMask, f64> = HashMap::new();
        for t in &cond.trees {
            let (a, b) = (t.edges & induced, t.edges & !induced);
            *joint.entry((a, b)).or_default() += t.probability;
            *inner.entry(a).or_default() += t.probability;
            *outer.entry(b).or_default() += t.probability;
        }
        let mut worst = 0.0_f64;
        for (a, pa) in &inner {
            for (b, pb) in &outer {
                let pab = joint.get(&(*a, *b)).copied().unwrap_or(0.0);
                worst = worst.max((pab - pa * pb).abs());
            }
        }
        Ok(worst)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn weighted_triangle() -> WeightedGraph {
        WeightedGraph::new(3, vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 2.0)]).unwrap()
    }

    #[test]
    fn symmetric_marginals() {
        for p in marginals(&WeightedGraph::complete(3)).unwrap() {
            assert_abs_diff_eq!(p, 2.0 / 3.0, epsilon = 1e-12);
        }
        for p in marginals(&WeightedGraph::complete(4)).unwrap() {
            assert_abs_diff_eq!(p, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn weighted_triangle_marginals_and_trees() {
        // Trees {01,12}, {01,02}, {12,02} weigh 1, 2, 2 out of 5.
        let p = marginals(&weighted_triangle()).unwrap();
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 0.8, epsilon = 1e-12);
        let d = enumerate_trees(&weighted_triangle(), DEFAULT_TREE_LIMIT).unwrap();
        let mut probs: Vec<f64> = d.trees.iter().map(|t| t.probability).collect();
        probs.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(probs[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(probs[1], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(probs[2], 0.4, epsilon = 1e-12);
    }

    #[test]
    fn tree_counts() {
        assert_eq!(enumerate_trees(&WeightedGraph::complete(3), 10).unwrap().tree_count(), 3);
        let c4 = enumerate_trees(&WeightedGraph::cycle(4), 10).unwrap();
        assert_eq!(c4.tree_count(), 4);
        assert!(c4.trees.iter().all(|t| (t.probability - 0.25).abs() < 1e-15));
        assert_eq!(enumerate_trees(&WeightedGraph::complete(5), 1000).unwrap().tree_count(), 125);
        assert_eq!(
            enumerate_trees(&WeightedGraph::complete(5), 100),
            Err(TreeError::Budget { limit: 100, reached: 101 })
        );
    }

    #[test]
    fn disconnected_inputs_rejected() {
        let g = WeightedGraph::unit(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(marginals(&g), Err(TreeError::Disconnected));
        assert_eq!(enumerate_trees(&g, 10).unwrap_err(), TreeError::Disconnected);
    }

    #[test]
    fn bridges_and_forced_edges_are_certain() {
        let g = WeightedGraph::new(4, vec![(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (2, 3, 0.3)]).unwrap();
        assert_eq!(marginals(&g).unwrap()[3], 1.0);
        let forced = WeightedGraph::new(3, vec![(0, 1, f64::INFINITY), (1, 2, 1.0), (0, 2, 1.0)]).unwrap();
        let p = marginals(&forced).unwrap();
        assert_eq!(p[0], 1.0);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);
        let d = enumerate_trees(&forced, 10).unwrap();
        assert_eq!(d.tree_count(), 2);
    }

    #[test]
    fn conditioning_on_k3() {
        let d = enumerate_trees(&WeightedGraph::complete(3), 10).unwrap();
        let inc = d.condition(&TreeConstraint::EdgeIn(0)).unwrap();
        assert_abs_diff_eq!(inc.marginals[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(inc.marginals[2], 0.5, epsilon = 1e-15);
        let exc = d.condition(&TreeConstraint::EdgeOut(0)).unwrap();
        assert_eq!(exc.tree_count(), 1);
        assert_eq!(exc.trees[0].edges, 0b110);
        let both = exc.condition(&TreeConstraint::EdgeIn(0));
        assert_eq!(both, Err(TreeError::EmptySupport));
    }

    #[test]
    fn rank_sequences() {
        let k4 = enumerate_trees(&WeightedGraph::complete(4), 100).unwrap();
        let all = k4.rank_sequence(mask_of(&[0, 1, 2, 3, 4, 5]));
        assert_eq!(all.probabilities[3], 1.0);
        // Trees of K4 by degree of vertex 0: 9, 6, 1 out of 16.
        let star = k4.rank_sequence(k4.boundary_edges(&[0]));
        let expected = [0.0, 9.0 / 16.0, 6.0 / 16.0, 1.0 / 16.0];
        for (a, b) in star.probabilities.iter().zip(expected) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
        assert!(star.is_log_concave(0.0) && !star.has_internal_zeros(1e-15) && star.mode_near_mean());
        let single = k4.rank_sequence(mask_of(&[2]));
        assert_abs_diff_eq!(single.probabilities[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn negative_dependence_on_k4() {
        let k4 = enumerate_trees(&WeightedGraph::complete(4), 100).unwrap();
        assert!(k4.max_pair_correlation() <= 1e-12);
        assert!(k4.min_dominance_gap(k4.boundary_edges(&[1])) >= -1e-12);
    }

    #[test]
    fn marginals_sum_to_rank() {
        let g = WeightedGraph::new(
            5,
            vec![(0, 1, 0.5), (1, 2, 2.0), (2, 3, 1.5), (3, 4, 0.7), (4, 0, 1.1), (0, 2, 3.0), (1, 3, 0.2)],
        )
        .unwrap();
        let p = marginals(&g).unwrap();
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 4.0, epsilon = 1e-9);
        let d = enumerate_trees(&g, 1000).unwrap();
        for (a, b) in p.iter().zip(&d.marginals) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn statistics_match_enumeration() {
        let g = WeightedGraph::new(
            5,
            vec![(0, 1, 0.5), (1, 2, 2.0), (2, 3, 1.5), (3, 4, 0.7), (4, 0, 1.1), (0, 2, 3.0), (1, 3, 0.2)],
        )
        .unwrap();
        let stats = tree_statistics(&g, true).unwrap();
        let d = enumerate_trees(&g, 1000).unwrap();
        let mut total = 0.0;
        for t in &d.trees {
            total += mask_members(t.edges).iter().map(|&e| g.edges[e].2).product::<f64>();
        }
        assert_abs_diff_eq!(stats.log_partition, total.ln(), epsilon = 1e-12);
        let cov = stats.covariance.unwrap();
        for e in 0..7 {
            for f in 0..7 {
                let joint = d.probability(|t| t >> e & 1 == 1 && t >> f & 1 == 1);
                assert_abs_diff_eq!(cov[(e, f)], joint - d.marginals[e] * d.marginals[f], epsilon = 1e-12);
            }
        }
    }
}
