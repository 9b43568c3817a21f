//! Held-Karp subtour LP by cutting planes, the root-splitting transform, and
//! spanning-tree polytope membership checks.

mod simplex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{components, stoer_wagner};
use crate::instance::MetricInstance;
pub use simplex::{BoundedSimplex, RowKind, SimplexError};

/// Support values at or below this are pruned from solutions.
pub const SUPPORT_THRESHOLD: f64 = 1e-9;
/// Tolerance for degree equalities on reported solutions.
pub const DEGREE_TOL: f64 = 1e-8;
/// Largest post-split vertex count for exhaustive polytope checks.
pub const POLYTOPE_BRUTE_FORCE_LIMIT: usize = 14;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("tolerance {0} outside [1e-12, 1e-6]")]
    InvalidTolerance(f64),
    #[error("simplex did not finish within {iterations} iterations")]
    SolverFailure { iterations: usize },
    #[error("cutting-plane loop exceeded {0} rounds")]
    RoundBudget(usize),
    #[error("LP infeasible (residual {0})")]
    Infeasible(f64),
    #[error("vertex {vertex} has fractional degree {degree}, expected 2")]
    DegreeViolation { vertex: usize, degree: f64 },
    #[error("solution has no root edge; split it first")]
    NotSplit,
    #[error("edge ({u},{v}) is invalid for {n} vertices")]
    InvalidEdge { u: usize, v: usize, n: usize },
}

/// One support edge with its LP value and cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LpEdge {
    pub u: usize,
    pub v: usize,
    pub x: f64,
    pub cost: f64,
}

/// A subtour constraint `x(δ(S)) ≥ 2` that is violated, or merely reported.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutViolation {
    pub vertex_set: Vec<usize>,
    pub weight: f64,
}

/// A fractional Held-Karp solution on its support, before or after splitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "LpSolutionJson", try_from = "LpSolutionJson")]
pub struct LpSolution {
    pub n: usize,
    pub edges: Vec<LpEdge>,
    /// Index of the zero-cost edge joining the two halves of the split vertex.
    pub root_edge: Option<usize>,
    pub objective: f64,
    /// Original vertex that was split; it keeps its id and the copy gets id `n - 1`.
    pub split_origin: Option<usize>,
    /// Objective after each cutting-plane round.
    pub objective_trace: Vec<f64>,
    pub cuts_added: usize,
}

#[derive(Serialize, Deserialize)]
struct LpSolutionJson {
    n: usize,
    edges: Vec<(usize, usize, f64)>,
    costs: Vec<f64>,
    root_edge: Option<usize>,
    objective: f64,
    #[serde(default)]
    split_origin: Option<usize>,
}

impl From<LpSolution> for LpSolutionJson {
    fn from(s: LpSolution) -> Self {
        LpSolutionJson {
            n: s.n,
            edges: s.edges.iter().map(|e| (e.u, e.v, e.x)).collect(),
            costs: s.edges.iter().map(|e| e.cost).collect(),
            root_edge: s.root_edge,
            objective: s.objective,
            split_origin: s.split_origin,
        }
    }
}

impl TryFrom<LpSolutionJson> for LpSolution {
    type Error = LpError;
    fn try_from(j: LpSolutionJson) -> Result<Self, LpError> {
        let edges = j
            .edges
            .iter()
            .zip(j.costs.iter().chain(std::iter::repeat(&0.0)))
            .map(|(&(u, v, x), &cost)| LpEdge { u, v, x, cost })
            .collect();
        let mut sol = LpSolution::from_parts(j.n, edges, j.root_edge)?;
        sol.split_origin = j.split_origin;
        Ok(sol)
    }
}

impl LpSolution {
    /// Assembles a solution from explicit edges; the objective is recomputed.
    pub fn from_parts(n: usize, edges: Vec<LpEdge>, root_edge: Option<usize>) -> Result<Self, LpError> {
        for e in &edges {
            if e.u >= n || e.v >= n || e.u == e.v {
                return Err(LpError::InvalidEdge { u: e.u, v: e.v, n });
            }
        }
        let objective = edges.iter().map(|e| e.x * e.cost).sum();
        Ok(LpSolution {
            n,
            edges,
            root_edge,
            objective,
            split_origin: root_edge.map(|_| 0),
            objective_trace: vec![objective],
            cuts_added: 0,
        })
    }

    /// Fractional degree of every vertex.
    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for e in &self.edges {
            d[e.u] += e.x;
            d[e.v] += e.x;
        }
        d
    }

    /// Largest deviation of a vertex degree from 2.
    pub fn max_degree_error(&self) -> f64 {
        self.degrees().iter().map(|d| (d - 2.0).abs()).fold(0.0, f64::max)
    }

    /// `x(δ(S))` for the indicated side.
    pub fn cut_weight(&self, side: &[bool]) -> f64 {
        self.edges.iter().filter(|e| side[e.u] != side[e.v]).map(|e| e.x).sum()
    }

    /// Endpoints of the root edge.
    pub fn root_pair(&self) -> Option<(usize, usize)> {
        self.root_edge.map(|r| (self.edges[r].u, self.edges[r].v))
    }

    /// Edges other than the root edge, with their original indices.
    pub fn tree_edges(&self) -> impl Iterator<Item = (usize, &LpEdge)> {
        self.edges.iter().enumerate().filter(move |(i, _)| Some(*i) != self.root_edge)
    }

    /// Smallest support value, reported because the prune threshold stands in
    /// for the extreme-point lower bound on support values.
    pub fn min_support_value(&self) -> f64 {
        self.edges.iter().map(|e| e.x).fold(f64::INFINITY, f64::min)
    }

    fn weighted_edges(&self) -> Vec<(usize, usize, f64)> {
        self.edges.iter().map(|e| (e.u, e.v, e.x)).collect()
    }
}

/// Checks the subtour constraints of a degree-feasible candidate. Returns a
/// global minimum cut if it is lighter than `2 - tol`; a disconnected support
/// yields one of its components with weight 0.
pub fn separate_subtour(sol: &LpSolution, tol: f64) -> Option<CutViolation> {
    violated_cuts(sol, tol).into_iter().next()
}

/// Violated cuts ordered by weight: the global minimum cut first, followed by
/// other violated cut-of-the-phase sets found on the way.
fn violated_cuts(sol: &LpSolution, tol: f64) -> Vec<CutViolation> {
    let n = sol.n;
    let support = sol.edges.iter().filter(|e| e.x > SUPPORT_THRESHOLD).map(|e| (e.u, e.v));
    let (count, label) = components(n, support);
    if count > 1 {
        return (0..count)
            .map(|c| CutViolation {
                vertex_set: (0..n).filter(|&v| label[v] == c).collect(),
                weight: 0.0,
            })
            .filter(|c| c.vertex_set.len() < n)
            .collect();
    }
    let (best, phases) = stoer_wagner(n, &sol.weighted_edges());
    if best.weight >= 2.0 - tol {
        return Vec::new();
    }
    let mut out: Vec<CutViolation> = std::iter::once(best)
        .chain(phases)
        .filter(|c| c.weight < 2.0 - tol)
        .map(|c| {
            let side = canonical_side(&c.side);
            CutViolation { weight: sol.cut_weight(&side), vertex_set: members(&side) }
        })
        .collect();
    let first = out.remove(0);
    out.sort_by(|a, b| a.weight.total_cmp(&b.weight));
    out.dedup_by(|a, b| a.vertex_set == b.vertex_set);
    out.retain(|c| c.vertex_set != first.vertex_set);
    out.insert(0, first);
    out
}

/// The side of a bipartition that does not contain vertex 0.
fn canonical_side(side: &[bool]) -> Vec<bool> {
    if side[0] {
        side.iter().map(|s| !s).collect()
    } else {
        side.to_vec()
    }
}

fn members(side: &[bool]) -> Vec<usize> {
    side.iter().enumerate().filter(|(_, &s)| s).map(|(v, _)| v).collect()
}

/// Solves the subtour-elimination LP on the complete graph by cutting planes
/// over a warm-started simplex. The result is an extreme point of the final
/// relaxation with support values above [`SUPPORT_THRESHOLD`].
pub fn solve_held_karp(inst: &MetricInstance, tol: f64) -> Result<LpSolution, LpError> {
    if !(1e-12..=1e-6).contains(&tol) {
        return Err(LpError::InvalidTolerance(tol));
    }
    let n = inst.n();
    let mut pairs = Vec::with_capacity(n * (n - 1) / 2);
    for u in 0..n {
        for v in u + 1..n {
            pairs.push((u, v));
        }
    }
    let scale = pairs.iter().map(|&(u, v)| inst.cost(u, v)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let costs: Vec<f64> = pairs.iter().map(|&(u, v)| inst.cost(u, v) / scale).collect();
    let mut lp = BoundedSimplex::new(costs, vec![1.0; pairs.len()]);
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, &(u, v)) in pairs.iter().enumerate() {
        incident[u].push(j);
        incident[v].push(j);
    }
    for row in &incident {
        let coeffs: Vec<(usize, f64)> = row.iter().map(|&j| (j, 1.0)).collect();
        lp.add_row(&coeffs, 2.0, RowKind::Equal);
    }
    let index_of = |u: usize, v: usize| {
        let (a, b) = if u < v { (u, v) } else { (v, u) };
        a * (2 * n - a - 1) / 2 + (b - a - 1)
    };

    let max_rounds = 20 * n + 200;
    let mut trace = Vec::new();
    let mut cuts_added = 0;
    for _round in 0..max_rounds {
        lp.solve().map_err(|e| match e {
            SimplexError::IterationBudget(iterations) => LpError::SolverFailure { iterations },
            SimplexError::Infeasible(r) => LpError::Infeasible(r),
            SimplexError::Unbounded => LpError::SolverFailure { iterations: lp.iterations },
        })?;
        let values = lp.values();
        let sol = assemble(inst, &pairs, &values, &trace, cuts_added);
        trace.push(sol.objective);
        let cuts = violated_cuts(&sol, tol);
        if cuts.is_empty() {
            let mut sol = sol;
            sol.objective_trace = trace;
            let worst = sol.max_degree_error();
            if worst > DEGREE_TOL {
                let degrees = sol.degrees();
                let vertex = (0..n).find(|&v| (degrees[v] - 2.0).abs() == worst).unwrap_or(0);
                return Err(LpError::DegreeViolation { vertex, degree: degrees[vertex] });
            }
            return Ok(sol);
        }
        for cut in cuts.iter().take(32) {
            let mut inside = vec![false; n];
            for &v in &cut.vertex_set {
                inside[v] = true;
            }
            let mut coeffs = Vec::new();
            for &u in &cut.vertex_set {
                for v in 0..n {
                    if !inside[v] {
                        coeffs.push((index_of(u, v), 1.0));
                    }
                }
            }
            lp.add_row(&coeffs, 2.0, RowKind::AtLeast);
            cuts_added += 1;
        }
    }
    Err(LpError::RoundBudget(max_rounds))
}

fn assemble(
    inst: &MetricInstance,
    pairs: &[(usize, usize)],
    values: &[f64],
    trace: &[f64],
    cuts_added: usize,
) -> LpSolution {
    let mut edges = Vec::new();
    for (j, &(u, v)) in pairs.iter().enumerate() {
        let mut x = values[j];
        if x <= SUPPORT_THRESHOLD {
            continue;
        }
        if (1.0 - x).abs() < 1e-12 {
            x = 1.0;
        }
        edges.push(LpEdge { u, v, x: x.min(1.0), cost: inst.cost(u, v) });
    }
    let objective = edges.iter().map(|e| e.x * e.cost).sum();
    LpSolution {
        n: inst.n(),
        edges,
        root_edge: None,
        objective,
        split_origin: None,
        objective_trace: trace.to_vec(),
        cuts_added,
    }
}

/// Splits the lowest-index vertex `u` into `u` and a new vertex `n`, joined
/// by a zero-cost root edge with value 1. Each edge at `u` is duplicated with
/// half its value on each copy.
pub fn split_root(sol: &LpSolution) -> LpSolution {
    let u = 0;
    let copy = sol.n;
    let mut edges = Vec::with_capacity(sol.edges.len() + 8);
    let mut halves = Vec::new();
    for e in &sol.edges {
        if e.u == u || e.v == u {
            let w = if e.u == u { e.v } else { e.u };
            let half = e.x / 2.0;
            edges.push(LpEdge { u, v: w, x: half, cost: e.cost });
            halves.push(LpEdge { u: copy, v: w, x: half, cost: e.cost });
        } else {
            edges.push(*e);
        }
    }
    edges.extend(halves);
    edges.push(LpEdge { u, v: copy, x: 1.0, cost: 0.0 });
    let root = edges.len() - 1;
    let objective = edges.iter().map(|e| e.x * e.cost).sum();
    LpSolution {
        n: sol.n + 1,
        edges,
        root_edge: Some(root),
        objective,
        split_origin: Some(u),
        objective_trace: sol.objective_trace.clone(),
        cuts_added: sol.cuts_added,
    }
}

/// Maps a post-split vertex back to the original instance.
pub fn original_vertex(sol: &LpSolution, v: usize) -> usize {
    match (sol.split_origin, sol.root_pair()) {
        (Some(origin), Some((a, b))) if v == a || v == b => origin,
        _ => v,
    }
}

/// A set whose induced edges exceed the spanning-tree polytope bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreePolytopeViolation {
    pub vertex_set: Vec<usize>,
    /// `x(E(S))` over non-root edges.
    pub inner_weight: f64,
    /// `|S| - 1`.
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolytopeVerdict {
    Pass { sets_checked: usize, exhaustive: bool, max_excess: f64 },
    Violation(TreePolytopeViolation),
}

/// Tests whether the non-root part of a split solution lies in the spanning
/// tree polytope. Up to [`POLYTOPE_BRUTE_FORCE_LIMIT`] vertices every subset
/// is checked. Beyond that, every set avoiding one root endpoint satisfies
/// `x(E(S)) = |S| - x(δ(S))/2`, so a global minimum cut of the full solution
/// decides membership; sampled sets cross-check the identity.
pub fn check_spanning_tree_polytope(sol: &LpSolution) -> Result<PolytopeVerdict, LpError> {
    let root = sol.root_edge.ok_or(LpError::NotSplit)?;
    let n = sol.n;
    let tree_edges: Vec<(usize, usize, f64)> =
        sol.tree_edges().map(|(_, e)| (e.u, e.v, e.x)).collect();
    let inner = |side: &[bool]| -> f64 {
        tree_edges.iter().filter(|&&(u, v, _)| side[u] && side[v]).map(|e| e.2).sum()
    };
    let total: f64 = tree_edges.iter().map(|e| e.2).sum();
    if (total - (n as f64 - 1.0)).abs() > DEGREE_TOL {
        return Ok(PolytopeVerdict::Violation(TreePolytopeViolation {
            vertex_set: (0..n).collect(),
            inner_weight: total,
            limit: n as f64 - 1.0,
        }));
    }
    let mut max_excess = total - (n as f64 - 1.0);
    if n <= POLYTOPE_BRUTE_FORCE_LIMIT {
        let mut checked = 0;
        let mut side = vec![false; n];
        for mask in 1u32..(1u32 << n) {
            let size = mask.count_ones() as usize;
            if size < 2 {
                continue;
            }
            for (v, s) in side.iter_mut().enumerate() {
                *s = mask >> v & 1 == 1;
            }
            let w = inner(&side);
            checked += 1;
            let excess = w - (size as f64 - 1.0);
            if excess > 1e-9 {
                return Ok(PolytopeVerdict::Violation(TreePolytopeViolation {
                    vertex_set: members(&side),
                    inner_weight: w,
                    limit: size as f64 - 1.0,
                }));
            }
            max_excess = max_excess.max(excess);
        }
        return Ok(PolytopeVerdict::Pass { sets_checked: checked, exhaustive: true, max_excess });
    }

    let degrees = sol.degrees();
    if let Some(vertex) = (0..n).find(|&v| (degrees[v] - 2.0).abs() > DEGREE_TOL) {
        return Err(LpError::DegreeViolation { vertex, degree: degrees[vertex] });
    }
    let (ru, rv) = (sol.edges[root].u, sol.edges[root].v);
    let (cut, _) = stoer_wagner(n, &sol.weighted_edges());
    if cut.weight < 2.0 - DEGREE_TOL {
        // Pick the side holding at most one root endpoint.
        let side: Vec<bool> =
            if cut.side[ru] && cut.side[rv] { cut.side.iter().map(|s| !s).collect() } else { cut.side.clone() };
        let size = side.iter().filter(|&&s| s).count();
        return Ok(PolytopeVerdict::Violation(TreePolytopeViolation {
            inner_weight: inner(&side),
            limit: size as f64 - 1.0,
            vertex_set: members(&side),
        }));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let samples = 2000;
    for _ in 0..samples {
        let side: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let size = side.iter().filter(|&&s| s).count();
        if size < 2 {
            continue;
        }
        let w = inner(&side);
        let both = side[ru] && side[rv];
        let identity = size as f64 - sol.cut_weight(&side) / 2.0 - if both { 1.0 } else { 0.0 };
        let excess = w - (size as f64 - 1.0);
        if (identity - w).abs() > 1e-7 || excess > 1e-9 {
            return Ok(PolytopeVerdict::Violation(TreePolytopeViolation {
                vertex_set: members(&side),
                inner_weight: w,
                limit: size as f64 - 1.0,
            }));
        }
        max_excess = max_excess.max(excess);
    }
    Ok(PolytopeVerdict::Pass { sets_checked: samples, exhaustive: false, max_excess })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_complete(n: usize) -> MetricInstance {
        let mut c = vec![1.0; n * n];
        for v in 0..n {
            c[v * n + v] = 0.0;
        }
        MetricInstance::from_matrix("unit", n, c, true).unwrap()
    }

    fn solution(n: usize, edges: &[(usize, usize, f64)]) -> LpSolution {
        let edges = edges.iter().map(|&(u, v, x)| LpEdge { u, v, x, cost: 1.0 }).collect();
        LpSolution::from_parts(n, edges, None).unwrap()
    }

    fn k4_two_thirds() -> LpSolution {
        let mut e = Vec::new();
        for u in 0..4 {
            for v in u + 1..4 {
                e.push((u, v, 2.0 / 3.0));
            }
        }
        solution(4, &e)
    }

    #[test]
    fn unit_k4_objective_is_four() {
        let sol = solve_held_karp(&unit_complete(4), 1e-9).unwrap();
        assert!((sol.objective - 4.0).abs() < 1e-9);
        assert!(sol.max_degree_error() < 1e-9);
    }

    #[test]
    fn unit_square_uses_the_sides() {
        let s = 2f64.sqrt();
        let inst = MetricInstance::from_matrix(
            "square",
            4,
            vec![0., 1., s, 1., 1., 0., 1., s, s, 1., 0., 1., 1., s, 1., 0.],
            true,
        )
        .unwrap();
        let sol = solve_held_karp(&inst, 1e-9).unwrap();
        assert!((sol.objective - 4.0).abs() < 1e-9);
        assert_eq!(sol.edges.len(), 4);
        assert!(sol.edges.iter().all(|e| e.x == 1.0 && e.cost == 1.0));
    }

    #[test]
    fn tolerance_range_enforced() {
        assert!(matches!(solve_held_karp(&unit_complete(4), 1e-3), Err(LpError::InvalidTolerance(_))));
    }

    #[test]
    fn separation_examples() {
        let two_triangles =
            solution(6, &[(0, 1, 1.0), (1, 2, 1.0), (2, 0, 1.0), (3, 4, 1.0), (4, 5, 1.0), (5, 3, 1.0)]);
        let cut = separate_subtour(&two_triangles, 1e-9).unwrap();
        assert_eq!(cut.weight, 0.0);
        assert_eq!(cut.vertex_set, vec![0, 1, 2]);
        let cycle = solution(5, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 4, 1.0), (4, 0, 1.0)]);
        assert!(separate_subtour(&cycle, 1e-9).is_none());
        assert!(separate_subtour(&k4_two_thirds(), 1e-9).is_none());
    }

    #[test]
    fn k4_min_cut_is_two_by_enumeration() {
        let sol = k4_two_thirds();
        let mut best = f64::INFINITY;
        for mask in 1u32..8 {
            let side: Vec<bool> = (0..4).map(|v| v < 3 && mask >> v & 1 == 1).collect();
            best = best.min(sol.cut_weight(&side));
        }
        assert!((best - 2.0).abs() < 1e-12);
    }

    #[test]
    fn split_cycle_and_k4() {
        let c4 = solution(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]);
        let s = split_root(&c4);
        assert_eq!(s.n, 5);
        let d = s.degrees();
        assert!(d.iter().all(|&x| (x - 2.0).abs() < 1e-15));
        let root = s.root_edge.unwrap();
        assert_eq!((s.edges[root].u, s.edges[root].v, s.edges[root].x), (0, 4, 1.0));
        assert_eq!(s.objective, c4.objective);

        let k4 = split_root(&k4_two_thirds());
        let at_u0: f64 = k4.tree_edges().filter(|(_, e)| e.u == 0 || e.v == 0).map(|(_, e)| e.x).sum();
        assert!((at_u0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn split_preserves_cuts_avoiding_the_root() {
        let k4 = k4_two_thirds();
        let s = split_root(&k4);
        for mask in 1u32..16 {
            if mask & 1 == 1 {
                continue;
            }
            let side4: Vec<bool> = (0..4).map(|v| mask >> v & 1 == 1).collect();
            let mut side5 = side4.clone();
            side5.push(false);
            assert!((k4.cut_weight(&side4) - s.cut_weight(&side5)).abs() < 1e-12);
        }
    }

    #[test]
    fn polytope_checks() {
        let c4 = solution(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)]);
        let s = split_root(&c4);
        let x_e: f64 = s.tree_edges().map(|(_, e)| e.x).sum();
        assert_eq!(x_e, 4.0);
        assert!(matches!(check_spanning_tree_polytope(&s).unwrap(), PolytopeVerdict::Pass { .. }));
        assert!(matches!(
            check_spanning_tree_polytope(&split_root(&k4_two_thirds())).unwrap(),
            PolytopeVerdict::Pass { exhaustive: true, .. }
        ));

        // A full triangle on {1,2,3} has x(E(S)) = |S| while the total is still n - 1.
        let edges = [(1, 2, 1.0), (2, 3, 1.0), (3, 1, 1.0), (0, 4, 1.0), (0, 1, 1.0)];
        let bad = LpSolution::from_parts(
            5,
            edges.iter().map(|&(u, v, x)| LpEdge { u, v, x, cost: 0.0 }).collect(),
            Some(3),
        )
        .unwrap();
        match check_spanning_tree_polytope(&bad).unwrap() {
            PolytopeVerdict::Violation(v) => {
                assert!(v.inner_weight > v.limit);
                assert!(v.vertex_set.contains(&1) && v.vertex_set.contains(&2) && v.vertex_set.contains(&3));
            }
            other => panic!("expected violation, got {other:?}"),
        }
    }

    #[test]
    fn json_round_trip() {
        let s = split_root(&k4_two_thirds());
        let text = serde_json::to_string(&s).unwrap();
        assert!(text.contains("\"edges\":[[0,1,"));
        let back: LpSolution = serde_json::from_str(&text).unwrap();
        assert_eq!(back.edges, s.edges);
        assert_eq!(back.root_edge, s.root_edge);
    }
}
