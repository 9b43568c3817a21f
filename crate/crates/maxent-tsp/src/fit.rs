//! Fits edge weights λ so that λ-uniform spanning-tree marginals match a
//! point of the spanning-tree polytope.
//!
//! Points on a proper face of the polytope have tight sets `S` with
//! `x(E(S)) = |S| − 1`. Matching such a point needs weight ratios that grow
//! without bound, so the support is split along tight sets first: each piece
//! (the inside of `S`, and the graph with `S` contracted) is fitted on its
//! own, and the fitted law is the product of the piece laws. This is the
//! limit of the λ-uniform laws obtained by scaling the weights inside each
//! tight set by an ever larger common factor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::FlowNetwork;
use crate::lp::LpSolution;
use crate::trees::{
    enumerate_trees, mask_members, tree_statistics, EdgeMask, ExactTreeDistribution, TreeError, WeightedGraph,
    WeightedTree,
};

pub const DEFAULT_FIT_EPS: f64 = 1e-4;
/// Values at or above `1 - FORCE_TOL` are forced into every tree, at or below it dropped.
const FORCE_TOL: f64 = 1e-9;
/// Slack below which a vertex set counts as tight.
pub const TIGHT_TOL: f64 = 1e-7;
/// Floor on `log λ` relative to the largest weight of a piece.
const MIN_LOG_WEIGHT: f64 = -25.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("fit tolerance {0} must be at least 1e-8")]
    InvalidEps(f64),
    #[error("no convergence after {iterations} iterations; best relative error {best_err:e}")]
    NonConvergence { iterations: usize, best_err: f64, best_lambda: Vec<f64> },
    #[error("target value {value} on edge {edge} is outside [0, 1]")]
    InvalidTarget { edge: usize, value: f64 },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// How weights are updated between marginal evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FitMethod {
    /// `log λ_e += step · ln(x_e / P_λ[e])`; a step is kept only if it lowers
    /// the convex dual `ln Z(λ) − Σ x_e log λ_e`, otherwise it is halved.
    Multiplicative,
    /// Damped Newton steps on the same dual with the edge covariance as Hessian.
    #[default]
    Newton,
}

/// One factor of the fitted law: a multigraph on local vertex ids whose
/// edges refer back to the input edge list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPiece {
    pub n: usize,
    /// `(local u, local v, input edge index)`.
    pub edges: Vec<(usize, usize, usize)>,
}

/// Fitted weights for each input edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    /// Weight per edge, normalized so each piece has largest weight 1.
    /// Dropped edges carry 0.
    pub lambda: Vec<f64>,
    /// `max |P[e] − x_e| / x_e` over edges that were not dropped.
    pub max_rel_err: f64,
    pub iterations: usize,
    /// Edges with target 1, present in every tree.
    pub contracted: Vec<usize>,
    /// Edges with target 0, never present.
    pub deleted: Vec<usize>,
    pub targets: Vec<f64>,
    pub pieces: Vec<FitPiece>,
    /// Vertex sets split off as tight, in discovery order.
    pub tight_sets: Vec<Vec<usize>>,
}

impl FitResult {
    /// Each piece as a weighted graph, with the input edge index of every local edge.
    pub fn piece_graphs(&self) -> Vec<(WeightedGraph, Vec<usize>)> {
        self.pieces
            .iter()
            .map(|p| {
                let edges = p.edges.iter().map(|&(u, v, e)| (u, v, self.lambda[e])).collect();
                (WeightedGraph { n: p.n, edges }, p.edges.iter().map(|e| e.2).collect())
            })
            .collect()
    }

    /// Marginals of the fitted law recomputed from the stored weights.
    pub fn marginals(&self) -> Result<Vec<f64>, TreeError> {
        let mut p = vec![0.0; self.edges.len()];
        for (g, index) in self.piece_graphs() {
            let local = tree_statistics(&g, false)?.marginals;
            for (value, e) in local.into_iter().zip(index) {
                p[e] = value;
            }
        }
        Ok(p)
    }

    /// Relative error recomputed from the stored weights.
    pub fn recompute_error(&self) -> Result<f64, TreeError> {
        Ok(relative_error(&self.marginals()?, &self.targets, &self.deleted_mask()))
    }

    /// The fitted law listed tree by tree, as a product over pieces.
    pub fn exact_distribution(&self, limit: usize) -> Result<ExactTreeDistribution, TreeError> {
        if self.edges.len() > 128 {
            return Err(TreeError::TooManyEdges(self.edges.len()));
        }
        let mut trees = vec![WeightedTree { edges: 0, probability: 1.0 }];
        for (g, index) in self.piece_graphs() {
            let local = enumerate_trees(&g, limit)?;
            let mut next = Vec::with_capacity(trees.len() * local.trees.len());
            for t in &trees {
                for s in &local.trees {
                    if next.len() == limit {
                        return Err(TreeError::Budget { limit, reached: limit + 1 });
                    }
                    let global: EdgeMask =
                        mask_members(s.edges).into_iter().fold(t.edges, |m, e| m | 1 << index[e]);
                    next.push(WeightedTree { edges: global, probability: t.probability * s.probability });
                }
            }
            trees = next;
        }
        Ok(ExactTreeDistribution::from_weights(self.n, self.edges.clone(), trees))
    }

    fn deleted_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.edges.len()];
        for &i in &self.deleted {
            mask[i] = true;
        }
        mask
    }
}

fn relative_error(p: &[f64], x: &[f64], deleted: &[bool]) -> f64 {
    p.iter()
        .zip(x)
        .zip(deleted)
        .filter(|(_, &d)| !d)
        .map(|((p, x), _)| (p - x).abs() / x)
        .fold(0.0, f64::max)
}

/// Fits the non-root edges of a split LP solution with the default method.
pub fn fit_lambda(sol: &LpSolution, eps: f64) -> Result<FitResult, FitError> {
    let edges: Vec<(usize, usize, f64)> = sol.tree_edges().map(|(_, e)| (e.u, e.v, e.x)).collect();
    fit_marginals(sol.n, &edges, eps, FitMethod::default())
}

/// Finds weights whose tree marginals match `target` within relative `eps`.
pub fn fit_marginals(
    n: usize,
    target: &[(usize, usize, f64)],
    eps: f64,
    method: FitMethod,
) -> Result<FitResult, FitError> {
    if eps.is_nan() || eps < 1e-8 {
        return Err(FitError::InvalidEps(eps));
    }
    for (edge, &(_, _, value)) in target.iter().enumerate() {
        if !(0.0..=1.0 + FORCE_TOL).contains(&value) {
            return Err(FitError::InvalidTarget { edge, value });
        }
    }
    let m = target.len();
    let x: Vec<f64> = target.iter().map(|e| e.2).collect();
    let contracted: Vec<usize> = (0..m).filter(|&i| x[i] >= 1.0 - FORCE_TOL).collect();
    let deleted: Vec<usize> = (0..m).filter(|&i| x[i] <= FORCE_TOL).collect();
    let kept: Vec<(usize, usize, usize)> =
        (0..m).filter(|&i| x[i] > FORCE_TOL).map(|i| (target[i].0, target[i].1, i)).collect();

    let (pieces, tight_sets) = decompose(n, kept, &x);
    let mut lambda = vec![0.0; m];
    let mut iterations = 0;
    for piece in &pieces {
        let local: Vec<(usize, usize, f64)> = piece.edges.iter().map(|&(u, v, e)| (u, v, x[e])).collect();
        match fit_piece(piece.n, &local, eps, method) {
            Ok((weights, used)) => {
                iterations += used;
                for (&(_, _, e), w) in piece.edges.iter().zip(weights) {
                    lambda[e] = w;
                }
            }
            Err(FitError::NonConvergence { iterations: used, best_err, best_lambda }) => {
                for (&(_, _, e), w) in piece.edges.iter().zip(best_lambda) {
                    lambda[e] = w;
                }
                return Err(FitError::NonConvergence { iterations: iterations + used, best_err, best_lambda: lambda });
            }
            Err(other) => return Err(other),
        }
    }
    let mut result = FitResult {
        n,
        edges: target.iter().map(|&(u, v, _)| (u, v)).collect(),
        lambda,
        max_rel_err: 0.0,
        iterations,
        contracted,
        deleted,
        targets: x,
        pieces,
        tight_sets,
    };
    result.max_rel_err = result.recompute_error()?;
    Ok(result)
}

struct WorkPiece {
    /// Input vertices merged into each local vertex.
    members: Vec<Vec<usize>>,
    edges: Vec<(usize, usize, usize)>,
}

/// Splits the support along tight sets until no piece has a proper one.
fn decompose(n: usize, kept: Vec<(usize, usize, usize)>, x: &[f64]) -> (Vec<FitPiece>, Vec<Vec<usize>>) {
    let mut stack = vec![WorkPiece { members: (0..n).map(|v| vec![v]).collect(), edges: kept }];
    let mut leaves = Vec::new();
    let mut tight_sets = Vec::new();
    while let Some(piece) = stack.pop() {
        let local_n = piece.members.len();
        let Some(inside) = find_tight_set(local_n, &piece.edges, x) else {
            leaves.push(FitPiece { n: local_n, edges: piece.edges });
            continue;
        };
        let mut relabel = vec![0; local_n];
        let mut inner_members = Vec::new();
        let mut outer_members = vec![Vec::new()];
        for v in 0..local_n {
            if inside[v] {
                relabel[v] = inner_members.len();
                inner_members.push(piece.members[v].clone());
                outer_members[0].extend(piece.members[v].iter().copied());
            } else {
                relabel[v] = outer_members.len();
                outer_members.push(piece.members[v].clone());
            }
        }
        let mut set = outer_members[0].clone();
        set.sort_unstable();
        tight_sets.push(set);
        let (mut inner_edges, mut outer_edges) = (Vec::new(), Vec::new());
        for &(u, v, e) in &piece.edges {
            match (inside[u], inside[v]) {
                (true, true) => inner_edges.push((relabel[u], relabel[v], e)),
                (true, false) => outer_edges.push((0, relabel[v], e)),
                (false, true) => outer_edges.push((relabel[u], 0, e)),
                (false, false) => outer_edges.push((relabel[u], relabel[v], e)),
            }
        }
        stack.push(WorkPiece { members: outer_members, edges: outer_edges });
        stack.push(WorkPiece { members: inner_members, edges: inner_edges });
    }
    (leaves, tight_sets)
}

/// A proper vertex subset `S` with `2 ≤ |S| < n` and `x(E(S)) ≥ |S| − 1 − tol`.
/// Forced edges are tried first; otherwise, for each edge, the smallest set
/// containing both ends that minimizes `|S| − x(E(S))` comes from one min cut.
fn find_tight_set(n: usize, edges: &[(usize, usize, usize)], x: &[f64]) -> Option<Vec<bool>> {
    if n <= 2 {
        return None;
    }
    for &(u, v, e) in edges {
        if x[e] >= 1.0 - FORCE_TOL {
            let mut side = vec![false; n];
            side[u] = true;
            side[v] = true;
            return Some(side);
        }
    }
    let mut degree = vec![0.0; n];
    for &(u, v, e) in edges {
        degree[u] += x[e];
        degree[v] += x[e];
    }
    // Per-vertex bias so that among near-ties the smaller set wins.
    let bias = TIGHT_TOL / n as f64;
    let mut tried = std::collections::HashSet::new();
    for &(u, v, _) in edges {
        if !tried.insert((u.min(v), u.max(v))) {
            continue;
        }
        let (s, t) = (n, n + 1);
        let mut net = FlowNetwork::<f64>::new(n + 2);
        let mut offset = 0.0;
        for (w, d) in degree.iter().enumerate() {
            let a = 1.0 - d / 2.0 + bias;
            if a > 0.0 {
                net.add_arc(w, t, a);
            } else {
                net.add_arc(s, w, -a);
                offset += a;
            }
        }
        for &(a, b, e) in edges {
            net.add_arc(a, b, x[e] / 2.0);
            net.add_arc(b, a, x[e] / 2.0);
        }
        net.add_arc(s, u, f64::INFINITY);
        net.add_arc(s, v, f64::INFINITY);
        // Cut value = |S| − x(E(S)) + bias·|S| for the source side S.
        let value = net.max_flow(s, t) + offset;
        let side: Vec<bool> = net.source_side(s)[..n].to_vec();
        let size = side.iter().filter(|&&b| b).count();
        if size < n && value - bias * size as f64 <= 1.0 + TIGHT_TOL {
            return Some(side);
        }
    }
    None
}

/// Fits one piece; returns weights with maximum 1 and the iteration count.
fn fit_piece(
    n: usize,
    target: &[(usize, usize, f64)],
    eps: f64,
    method: FitMethod,
) -> Result<(Vec<f64>, usize), FitError> {
    let m = target.len();
    let x: Vec<f64> = target.iter().map(|e| e.2).collect();
    let forced: Vec<bool> = x.iter().map(|&v| v >= 1.0 - FORCE_TOL).collect();
    let free: Vec<usize> = (0..m).filter(|&i| !forced[i]).collect();
    let none_dropped = vec![false; m];

    let evaluate = |log_lambda: &[f64], with_covariance: bool| -> Result<Iterate, TreeError> {
        let edges: Vec<(usize, usize, f64)> = target
            .iter()
            .enumerate()
            .map(|(i, &(u, v, _))| (u, v, if forced[i] { f64::INFINITY } else { log_lambda[i].exp() }))
            .collect();
        let stats = tree_statistics(&WeightedGraph { n, edges }, with_covariance)?;
        let dual = stats.log_partition - free.iter().map(|&i| x[i] * log_lambda[i]).sum::<f64>();
        let err = relative_error(&stats.marginals, &x, &none_dropped);
        Ok(Iterate { log_lambda: log_lambda.to_vec(), p: stats.marginals, dual, err, covariance: stats.covariance })
    };
    let finish =
        |log_lambda: &[f64]| -> Vec<f64> { (0..m).map(|i| if forced[i] { 1.0 } else { log_lambda[i].exp() }).collect() };

    let budget = 10_000 * m.max(1);
    let newton = method == FitMethod::Newton;
    let mut current = evaluate(&vec![0.0; m], newton)?;
    let mut best_err = current.err;
    let mut step = 1.0;
    let mut iterations = 0;
    while current.err > eps {
        if iterations >= budget {
            return Err(FitError::NonConvergence { iterations, best_err, best_lambda: finish(&current.log_lambda) });
        }
        iterations += 1;
        let direction: Vec<f64> = match (&current.covariance, newton) {
            (Some(cov), true) => newton_direction(cov, &current.p, &x, &free),
            _ => free.iter().map(|&i| (x[i] / current.p[i].max(f64::MIN_POSITIVE)).ln()).collect(),
        };
        let slope: f64 = free.iter().zip(&direction).map(|(&i, d)| (current.p[i] - x[i]) * d).sum();
        let mut t = if newton { 1.0 } else { step };
        loop {
            let mut trial = current.log_lambda.clone();
            for (&i, d) in free.iter().zip(&direction) {
                trial[i] += t * d;
            }
            normalize(&mut trial, &free);
            // Extreme steps can underflow weights and disconnect the support.
            let candidate = evaluate(&trial, newton);
            // Near the optimum the dual changes below round-off, so a step
            // that halves the marginal error is also accepted.
            let accepted = matches!(&candidate, Ok(next)
                if next.dual <= current.dual + 1e-4 * t * slope.min(0.0) || next.err <= 0.5 * current.err);
            if accepted || t < 1e-12 {
                match candidate {
                    Ok(next) if next.err.is_finite() => {
                        best_err = best_err.min(next.err);
                        current = next;
                    }
                    _ => {
                        let best_lambda = finish(&current.log_lambda);
                        return Err(FitError::NonConvergence { iterations, best_err, best_lambda });
                    }
                }
                break;
            }
            t *= 0.5;
            iterations += 1;
        }
        step = (t * 2.0).min(1.0);
    }
    Ok((finish(&current.log_lambda), iterations))
}

struct Iterate {
    log_lambda: Vec<f64>,
    p: Vec<f64>,
    dual: f64,
    err: f64,
    covariance: Option<DMatrix<f64>>,
}

/// Solves `Cov · d = x − p` on the free edges. The covariance is singular
/// along the all-ones direction, so a tiny ridge keeps the solve well posed.
fn newton_direction(cov: &DMatrix<f64>, p: &[f64], x: &[f64], free: &[usize]) -> Vec<f64> {
    let k = free.len();
    let mut h = DMatrix::from_fn(k, k, |a, b| cov[(free[a], free[b])]);
    let ridge = 1e-10 * (0..k).map(|a| h[(a, a)]).fold(0.0, f64::max).max(1e-300);
    for a in 0..k {
        h[(a, a)] += ridge;
    }
    let rhs = DVector::from_iterator(k, free.iter().map(|&i| x[i] - p[i]));
    match h.clone().cholesky() {
        Some(c) => c.solve(&rhs).iter().copied().collect(),
        None => h.lu().solve(&rhs).map(|d| d.iter().copied().collect()).unwrap_or_else(|| {
            free.iter().map(|&i| (x[i] / p[i].max(f64::MIN_POSITIVE)).ln()).collect()
        }),
    }
}

/// Shifts so the largest free log-weight is 0 and clamps the rest.
fn normalize(log_lambda: &mut [f64], free: &[usize]) {
    let top = free.iter().map(|&i| log_lambda[i]).fold(f64::NEG_INFINITY, f64::max);
    if top.is_finite() {
        for &i in free {
            log_lambda[i] = (log_lambda[i] - top).max(MIN_LOG_WEIGHT);
        }
    }
}
