//! Parity correction of a spanning tree: odd vertices, minimum-cost perfect
//! matching, O-join feasibility, Euler-tour shortcutting, and the
//! Christofides baseline.

mod blossom;

pub use blossom::max_weight_matching;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::components;
use crate::instance::{InstanceError, MetricInstance, Tour};

/// Largest odd set solved by the subset dynamic program.
pub const BRUTE_FORCE_MATCHING_LIMIT: usize = 24;
/// Largest vertex count for exhaustive O-join cut checks.
pub const OJOIN_CUT_LIMIT: usize = 20;
/// Costs are rounded to multiples of `max cost / QUANTUM_STEPS` before matching.
const QUANTUM_STEPS: f64 = (1u64 << 40) as f64;

#[derive(Debug, Error)]
pub enum MatchingError {
    #[error("odd set has {0} vertices; a perfect matching needs an even count")]
    OddCardinality(usize),
    #[error("vertex {vertex} is out of range or repeated")]
    InvalidVertex { vertex: usize },
    #[error("{size} vertices exceed the exhaustive limit {limit}")]
    TooLarge { size: usize, limit: usize },
    #[error("vertex {0} has odd degree")]
    OddDegree(usize),
    #[error("multigraph is disconnected")]
    Disconnected,
    #[error(transparent)]
    Instance(#[from] InstanceError),
}

/// Vertices of odd degree in a multigraph on `n` vertices; loops count twice.
pub fn odd_vertices(n: usize, edges: &[(usize, usize)]) -> Vec<usize> {
    let mut parity = vec![false; n];
    for &(u, v) in edges {
        parity[u] ^= true;
        parity[v] ^= true;
    }
    (0..n).filter(|&v| parity[v]).collect()
}

/// A perfect matching on an odd set with its cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    pub pairs: Vec<(usize, usize)>,
    pub cost: f64,
}

fn check_odd_set(inst: &MetricInstance, odd: &[usize]) -> Result<(), MatchingError> {
    if odd.len() % 2 == 1 {
        return Err(MatchingError::OddCardinality(odd.len()));
    }
    let mut seen = vec![false; inst.n()];
    for &v in odd {
        if v >= inst.n() || std::mem::replace(&mut seen[v], true) {
            return Err(MatchingError::InvalidVertex { vertex: v });
        }
    }
    Ok(())
}

/// Minimum-cost perfect matching on `odd` under the instance metric.
///
/// Costs are quantized to integers (exactly, when they are already integral)
/// and solved with the blossom method, so the result is optimal up to
/// `|odd| / 2` quanta of `max cost · 2⁻⁴⁰`.
pub fn min_matching(inst: &MetricInstance, odd: &[usize]) -> Result<Matching, MatchingError> {
    check_odd_set(inst, odd)?;
    let k = odd.len();
    if k == 0 {
        return Ok(Matching { pairs: Vec::new(), cost: 0.0 });
    }
    let mut max_cost: f64 = 0.0;
    let mut integral = true;
    for a in 0..k {
        for b in a + 1..k {
            let c = inst.cost(odd[a], odd[b]);
            max_cost = max_cost.max(c);
            integral &= c.fract() == 0.0;
        }
    }
    let unit = if integral && max_cost < 1e12 { 1.0 } else { (max_cost / QUANTUM_STEPS).max(f64::MIN_POSITIVE) };
    let top = (max_cost / unit).round() as i64;
    let mut edges = Vec::with_capacity(k * (k - 1) / 2);
    for a in 0..k {
        for b in a + 1..k {
            let q = (inst.cost(odd[a], odd[b]) / unit).round() as i64;
            edges.push((a, b, top + 1 - q));
        }
    }
    let mate = max_weight_matching(k, &edges, true);
    let mut pairs = Vec::with_capacity(k / 2);
    for (a, m) in mate.iter().enumerate() {
        let b = m.expect("complete graph on an even set has a perfect matching");
        if a < b {
            pairs.push((odd[a], odd[b]));
        }
    }
    let cost = pairs.iter().map(|&(u, v)| inst.cost(u, v)).sum();
    Ok(Matching { pairs, cost })
}

/// Exact minimum matching by dynamic programming over subsets, always pairing
/// the lowest remaining vertex.
pub fn brute_force_matching(inst: &MetricInstance, odd: &[usize]) -> Result<Matching, MatchingError> {
    check_odd_set(inst, odd)?;
    let k = odd.len();
    if k > BRUTE_FORCE_MATCHING_LIMIT {
        return Err(MatchingError::TooLarge { size: k, limit: BRUTE_FORCE_MATCHING_LIMIT });
    }
    let full = (1usize << k) - 1;
    let mut best = vec![f64::INFINITY; full + 1];
    let mut choice = vec![0usize; full + 1];
    best[0] = 0.0;
    for mask in 1..=full {
        if mask.count_ones() % 2 == 1 {
            continue;
        }
        let a = mask.trailing_zeros() as usize;
        let rest = mask & !(1 << a);
        let mut bits = rest;
        while bits != 0 {
            let b = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let value = best[rest & !(1 << b)] + inst.cost(odd[a], odd[b]);
            if value < best[mask] {
                best[mask] = value;
                choice[mask] = b;
            }
        }
    }
    let mut pairs = Vec::with_capacity(k / 2);
    let mut mask = full;
    while mask != 0 {
        let a = mask.trailing_zeros() as usize;
        let b = choice[mask];
        pairs.push((odd[a], odd[b]));
        mask &= !(1 << a) & !(1 << b);
    }
    Ok(Matching { pairs, cost: best[full] })
}

/// Outcome of checking `y(δ(S)) ≥ 1` over the cuts with `|S ∩ O|` odd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OjoinVerdict {
    Pass { sets_checked: usize, min_weight: f64 },
    Violation { vertex_set: Vec<usize>, weight: f64 },
}

impl OjoinVerdict {
    pub fn passed(&self) -> bool {
        matches!(self, OjoinVerdict::Pass { .. })
    }
}

/// Exhaustive O-join feasibility of `y` on a graph with `n ≤ 20` vertices.
/// Sets are enumerated without the last vertex, so each cut appears once.
pub fn ojoin_feasible(
    n: usize,
    edges: &[(usize, usize, f64)],
    odd: &[usize],
    tol: f64,
) -> Result<OjoinVerdict, MatchingError> {
    if n > OJOIN_CUT_LIMIT {
        return Err(MatchingError::TooLarge { size: n, limit: OJOIN_CUT_LIMIT });
    }
    if odd.len() % 2 == 1 {
        return Err(MatchingError::OddCardinality(odd.len()));
    }
    let odd_mask: u64 = odd.iter().fold(0, |m, &v| m | 1 << v);
    let edge_masks: Vec<(u64, u64, f64)> = edges.iter().map(|&(u, v, y)| (1u64 << u, 1u64 << v, y)).collect();
    let mut checked = 0;
    let mut min_weight = f64::INFINITY;
    for set in 1u64..(1u64 << (n - 1)) {
        if (set & odd_mask).count_ones().is_multiple_of(2) {
            continue;
        }
        checked += 1;
        let weight: f64 =
            edge_masks.iter().filter(|&&(a, b, _)| (set & a != 0) != (set & b != 0)).map(|e| e.2).sum();
        if weight < 1.0 - tol {
            let vertex_set = (0..n).filter(|&v| set >> v & 1 == 1).collect();
            return Ok(OjoinVerdict::Violation { vertex_set, weight });
        }
        min_weight = min_weight.min(weight);
    }
    Ok(OjoinVerdict::Pass { sets_checked: checked, min_weight })
}

/// The same check restricted to a supplied family of vertex sets.
pub fn ojoin_feasible_on(
    n: usize,
    edges: &[(usize, usize, f64)],
    odd: &[usize],
    sets: &[Vec<usize>],
    tol: f64,
) -> OjoinVerdict {
    let mut is_odd = vec![false; n];
    for &v in odd {
        is_odd[v] = true;
    }
    let mut checked = 0;
    let mut min_weight = f64::INFINITY;
    for s in sets {
        let mut inside = vec![false; n];
        for &v in s {
            inside[v] = true;
        }
        if s.iter().filter(|&&v| is_odd[v]).count() % 2 == 0 {
            continue;
        }
        checked += 1;
        let weight: f64 = edges.iter().filter(|e| inside[e.0] != inside[e.1]).map(|e| e.2).sum();
        if weight < 1.0 - tol {
            return OjoinVerdict::Violation { vertex_set: s.clone(), weight };
        }
        min_weight = min_weight.min(weight);
    }
    OjoinVerdict::Pass { sets_checked: checked, min_weight }
}

/// Euler circuit of a connected even multigraph, keeping only the first visit
/// of every vertex. Vertices without edges are not allowed unless `n == 1`.
pub fn eulerian_shortcut(n: usize, edges: &[(usize, usize)]) -> Result<Vec<usize>, MatchingError> {
    if let Some(&v) = odd_vertices(n, edges).first() {
        return Err(MatchingError::OddDegree(v));
    }
    if n > 1 && components(n, edges.iter().copied()).0 != 1 {
        return Err(MatchingError::Disconnected);
    }
    let mut adjacency = vec![Vec::new(); n];
    for (i, &(u, v)) in edges.iter().enumerate() {
        adjacency[u].push((v, i));
        adjacency[v].push((u, i));
    }
    let mut used = vec![false; edges.len()];
    let mut next = vec![0usize; n];
    let mut stack = vec![0usize];
    let mut circuit = Vec::with_capacity(edges.len() + 1);
    while let Some(&u) = stack.last() {
        let list = &adjacency[u];
        while next[u] < list.len() && used[list[next[u]].1] {
            next[u] += 1;
        }
        if next[u] == list.len() {
            circuit.push(u);
            stack.pop();
        } else {
            let (v, i) = list[next[u]];
            used[i] = true;
            stack.push(v);
        }
    }
    circuit.reverse();
    let mut seen = vec![false; n];
    Ok(circuit.into_iter().filter(|&v| !std::mem::replace(&mut seen[v], true)).collect())
}

/// Minimum spanning tree of the complete metric graph (Prim, O(n²)).
pub fn minimum_spanning_tree(inst: &MetricInstance) -> Vec<(usize, usize)> {
    let n = inst.n();
    let mut in_tree = vec![false; n];
    let mut best = vec![(f64::INFINITY, 0usize); n];
    let mut tree = Vec::with_capacity(n.saturating_sub(1));
    best[0].0 = 0.0;
    for _ in 0..n {
        let u = (0..n).filter(|&v| !in_tree[v]).min_by(|&a, &b| best[a].0.total_cmp(&best[b].0)).expect("vertex left");
        in_tree[u] = true;
        if u != 0 {
            tree.push((best[u].1, u));
        }
        for v in 0..n {
            if !in_tree[v] && inst.cost(u, v) < best[v].0 {
                best[v] = (inst.cost(u, v), u);
            }
        }
    }
    tree
}

/// Parity-corrects a connected spanning multigraph with a minimum matching on
/// its odd vertices and shortcuts the Euler circuit.
pub fn complete_to_tour(inst: &MetricInstance, edges: &[(usize, usize)]) -> Result<(Tour, Matching), MatchingError> {
    let odd = odd_vertices(inst.n(), edges);
    let matching = min_matching(inst, &odd)?;
    let mut all = edges.to_vec();
    all.extend(matching.pairs.iter().copied());
    let order = eulerian_shortcut(inst.n(), &all)?;
    Ok((Tour::new(inst, order)?, matching))
}

/// MST plus minimum matching on its odd vertices, shortcut to a tour.
pub fn christofides(inst: &MetricInstance) -> Result<Tour, MatchingError> {
    Ok(complete_to_tour(inst, &minimum_spanning_tree(inst))?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{exact_opt, random_euclidean};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(points: &[f64]) -> MetricInstance {
        let n = points.len();
        let cost = (0..n * n).map(|i| (points[i / n] - points[i % n]).abs()).collect();
        MetricInstance::from_matrix("line", n, cost, true).unwrap()
    }

    #[test]
    fn odd_sets() {
        assert_eq!(odd_vertices(4, &[(0, 1), (1, 2), (2, 3)]), vec![0, 3]);
        assert_eq!(odd_vertices(4, &[(0, 1), (0, 2), (0, 3)]), vec![0, 1, 2, 3]);
    }

    #[test]
    fn tiny_matchings() {
        let inst = line(&[0.0, 1.0, 2.0, 3.0]);
        let m = min_matching(&inst, &[0, 3]).unwrap();
        assert_eq!(m.pairs, vec![(0, 3)]);
        assert_eq!(m.cost, 3.0);
        let m = min_matching(&inst, &[0, 1, 2, 3]).unwrap();
        assert_eq!(m.pairs, vec![(0, 1), (2, 3)]);
        assert_eq!(m.cost, 2.0);
        assert!(matches!(min_matching(&inst, &[0, 1, 2]), Err(MatchingError::OddCardinality(3))));
    }

    #[test]
    fn blossom_matches_dynamic_program() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for trial in 0..60 {
            let inst = random_euclidean(14, 1000 + trial).unwrap();
            let size = 2 * rng.random_range(1..=7);
            let mut odd: Vec<usize> = (0..14).collect();
            for i in 0..size {
                let j = rng.random_range(i..14);
                odd.swap(i, j);
            }
            odd.truncate(size);
            let fast = min_matching(&inst, &odd).unwrap();
            let slow = brute_force_matching(&inst, &odd).unwrap();
            assert!((fast.cost - slow.cost).abs() <= 1e-9 * slow.cost.max(1.0), "trial {trial}");
        }
    }

    #[test]
    fn ojoin_checks() {
        // Unit square tour, y = x/2 with x the tour indicator.
        let tour = [(0, 1, 0.5), (1, 2, 0.5), (2, 3, 0.5), (3, 0, 0.5)];
        assert!(ojoin_feasible(4, &tour, &[0, 1], 1e-9).unwrap().passed());
        assert!(ojoin_feasible(4, &tour, &[0, 1, 2, 3], 1e-9).unwrap().passed());
        let zero = [(0, 1, 0.0), (1, 2, 0.0)];
        match ojoin_feasible(3, &zero, &[0, 2], 1e-9).unwrap() {
            OjoinVerdict::Violation { vertex_set, weight } => {
                assert_eq!(weight, 0.0);
                assert_eq!(vertex_set, vec![0]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn shortcut_cases() {
        assert_eq!(eulerian_shortcut(3, &[(0, 1), (1, 2), (2, 0)]).unwrap(), vec![0, 1, 2]);
        // Triangle plus a doubled edge.
        let order = eulerian_shortcut(3, &[(0, 1), (1, 2), (2, 0), (0, 1), (0, 1)]).unwrap();
        let mut sorted = order.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
        assert!(matches!(eulerian_shortcut(3, &[(0, 1), (1, 2)]), Err(MatchingError::OddDegree(0))));
    }

    #[test]
    fn christofides_small_cases() {
        let unit = MetricInstance::from_matrix("k3", 3, vec![0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0], true).unwrap();
        assert_eq!(christofides(&unit).unwrap().cost, 3.0);
        let s = 2f64.sqrt();
        let square = MetricInstance::from_matrix(
            "square",
            4,
            vec![0.0, 1.0, s, 1.0, 1.0, 0.0, 1.0, s, s, 1.0, 0.0, 1.0, 1.0, s, 1.0, 0.0],
            true,
        )
        .unwrap();
        assert!((christofides(&square).unwrap().cost - 4.0).abs() < 1e-12);
        let inst = random_euclidean(12, 5).unwrap();
        let opt = exact_opt(&inst).unwrap().cost;
        assert!(christofides(&inst).unwrap().cost <= 1.5 * opt + 1e-9);
    }
}
