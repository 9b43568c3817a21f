//! Near-minimum cuts of a fractional solution: enumeration, crossing
//! structure along an optimal cycle, polygons of crossing cuts, and the
//! laminar cut hierarchy with its edge partitions.

use std::collections::{BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{stoer_wagner, DisjointSets};
use crate::lp::LpSolution;

/// Largest vertex count enumerated by brute force over subsets.
pub const BRUTE_FORCE_CUT_LIMIT: usize = 14;
/// Absolute tolerance on cut weights.
pub const CUT_TOL: f64 = 1e-9;
/// Target probability that randomized enumeration misses a cut.
const MISS_PROBABILITY: f64 = 1e-4;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CutError {
    #[error("minimum cut {0} is below 2; the input is not a feasible solution")]
    Inconsistent(f64),
    #[error("graph needs at least 2 vertices")]
    TooSmall,
    #[error("eta {0} must be finite and nonnegative")]
    InvalidEta(f64),
    #[error("solution has no root edge; split it first")]
    NotSplit,
    #[error("tour does not visit the {0} original vertices exactly once")]
    InvalidTour(usize),
    #[error("hierarchy sets {a:?} and {b:?} cross")]
    NotLaminar { a: Vec<usize>, b: Vec<usize> },
    #[error("node {0} is not in the hierarchy")]
    UnknownNode(usize),
}

/// One side of a cut of weight at most `2 + η`, never containing the root pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NearMinCut {
    pub vertex_set: Vec<usize>,
    pub weight: f64,
    /// Positions `[l, r)` along the reference cycle, when the set is an interval.
    pub interval: Option<(usize, usize)>,
}

fn cut_weight(edges: &[(usize, usize, f64)], inside: &[bool]) -> f64 {
    edges.iter().filter(|e| inside[e.0] != inside[e.1]).map(|e| e.2).sum()
}

fn indicator(n: usize, set: &[usize]) -> Vec<bool> {
    let mut inside = vec![false; n];
    for &v in set {
        inside[v] = true;
    }
    inside
}

/// The side to report: the one avoiding the root pair, or vertex 0 without one.
/// `None` when the bipartition separates the root pair.
fn canonical_side(inside: &[bool], root_pair: Option<(usize, usize)>) -> Option<Vec<usize>> {
    let n = inside.len();
    let (a, b) = root_pair.unwrap_or((0, 0));
    if inside[a] != inside[b] {
        return None;
    }
    let flip = inside[a];
    Some((0..n).filter(|&v| inside[v] != flip).collect())
}

fn check_inputs(n: usize, edges: &[(usize, usize, f64)], eta: f64) -> Result<(), CutError> {
    if n < 2 {
        return Err(CutError::TooSmall);
    }
    if !eta.is_finite() || eta < 0.0 {
        return Err(CutError::InvalidEta(eta));
    }
    let (min, _) = stoer_wagner(n, edges);
    if min.weight < 2.0 - 1e-6 {
        return Err(CutError::Inconsistent(min.weight));
    }
    Ok(())
}

fn sort_cuts(cuts: &mut [NearMinCut]) {
    cuts.sort_by(|a, b| a.vertex_set.len().cmp(&b.vertex_set.len()).then_with(|| a.vertex_set.cmp(&b.vertex_set)));
}

/// All cuts of weight at most `2 + eta`. Exact by subset enumeration for
/// `n ≤ 14`, randomized contraction otherwise.
pub fn enumerate_near_min_cuts(
    n: usize,
    edges: &[(usize, usize, f64)],
    eta: f64,
    root_pair: Option<(usize, usize)>,
) -> Result<Vec<NearMinCut>, CutError> {
    if n <= BRUTE_FORCE_CUT_LIMIT {
        enumerate_brute_force(n, edges, eta, root_pair)
    } else {
        enumerate_by_contraction(n, edges, eta, root_pair, 0x5eed)
    }
}

/// Exhaustive enumeration over the subsets that avoid a fixed pivot vertex.
pub fn enumerate_brute_force(
    n: usize,
    edges: &[(usize, usize, f64)],
    eta: f64,
    root_pair: Option<(usize, usize)>,
) -> Result<Vec<NearMinCut>, CutError> {
    check_inputs(n, edges, eta)?;
    assert!(n < 64, "subset enumeration needs fewer than 64 vertices");
    let pivot = root_pair.map_or(0, |p| p.0);
    let others: Vec<usize> = (0..n).filter(|&v| v != pivot).collect();
    let mut cuts = Vec::new();
    let mut inside = vec![false; n];
    for mask in 1u64..(1u64 << others.len()) {
        for (i, &v) in others.iter().enumerate() {
            inside[v] = mask >> i & 1 == 1;
        }
        let weight = cut_weight(edges, &inside);
        if weight > 2.0 + eta + CUT_TOL {
            continue;
        }
        if let Some(vertex_set) = canonical_side(&inside, root_pair) {
            cuts.push(NearMinCut { vertex_set, weight, interval: None });
        }
    }
    sort_cuts(&mut cuts);
    Ok(cuts)
}

/// Repeated random contraction down to a few super-vertices, keeping every
/// light bipartition of the survivors. A cut of weight `α·2` survives one
/// trial with probability at least `Π_{i>r} (1 − 2α/i)`; the trial count
/// drives the miss probability for all `n^{2α}` candidate cuts below 1e-4.
pub fn enumerate_by_contraction(
    n: usize,
    edges: &[(usize, usize, f64)],
    eta: f64,
    root_pair: Option<(usize, usize)>,
    seed: u64,
) -> Result<Vec<NearMinCut>, CutError> {
    check_inputs(n, edges, eta)?;
    let alpha = (2.0 + eta) / 2.0;
    let survivors = ((2.0 * alpha).floor() as usize + 2).max(4).min(n);
    let survive: f64 = ((survivors + 1)..=n).map(|i| 1.0 - 2.0 * alpha / i as f64).product();
    let candidates = (n as f64).powf(2.0 * alpha);
    let trials = ((candidates / MISS_PROBABILITY).ln() / survive).ceil().max(1.0) as usize;
    log::debug!("contraction enumeration: n={n} alpha={alpha} trials={trials}");

    let positive: Vec<(usize, usize, f64)> = edges.iter().copied().filter(|e| e.2 > 0.0 && e.0 != e.1).collect();
    let found: HashSet<Vec<usize>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(t as u64);
            contraction_trial(n, &positive, survivors, &mut rng, eta, root_pair)
        })
        .reduce(HashSet::new, |mut a, b| {
            a.extend(b);
            a
        });
    let mut cuts: Vec<NearMinCut> = found
        .into_iter()
        .map(|vertex_set| {
            let weight = cut_weight(edges, &indicator(n, &vertex_set));
            NearMinCut { vertex_set, weight, interval: None }
        })
        .collect();
    sort_cuts(&mut cuts);
    Ok(cuts)
}

fn contraction_trial(
    n: usize,
    edges: &[(usize, usize, f64)],
    survivors: usize,
    rng: &mut ChaCha8Rng,
    eta: f64,
    root_pair: Option<(usize, usize)>,
) -> HashSet<Vec<usize>> {
    // Exponential clocks with rate w give the weighted contraction order.
    let mut order: Vec<(f64, usize)> =
        edges.iter().enumerate().map(|(i, e)| (-(1.0 - rng.random::<f64>()).ln() / e.2, i)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut sets = DisjointSets::new(n);
    let mut groups = n;
    for &(_, i) in &order {
        if groups <= survivors {
            break;
        }
        if sets.union(edges[i].0, edges[i].1) {
            groups -= 1;
        }
    }
    let mut label = vec![usize::MAX; n];
    let mut roots = Vec::new();
    for v in 0..n {
        let r = sets.find(v);
        if label[r] == usize::MAX {
            label[r] = roots.len();
            roots.push(r);
        }
        label[v] = label[r];
    }
    let k = roots.len();
    let mut found = HashSet::new();
    let mut inside = vec![false; n];
    for mask in 1u64..(1u64 << (k - 1)) {
        for v in 0..n {
            inside[v] = mask >> label[v] & 1 == 1;
        }
        if cut_weight(edges, &inside) <= 2.0 + eta + CUT_TOL {
            if let Some(side) = canonical_side(&inside, root_pair) {
                found.insert(side);
            }
        }
    }
    found
}

/// Every interval of the cycle `order` that avoids its first and last
/// positions with weight at most `2 + eta`. Exact for cut families known to
/// consist of intervals, such as near-minimum cuts of `(x + cycle) / 2`.
pub fn enumerate_interval_cuts(order: &[usize], edges: &[(usize, usize, f64)], eta: f64) -> Vec<NearMinCut> {
    let n = order.len();
    let mut position = vec![0; n];
    for (p, &v) in order.iter().enumerate() {
        position[v] = p;
    }
    let mut cuts = Vec::new();
    for l in 1..n - 1 {
        let mut inside = vec![false; n];
        for r in l + 1..n {
            inside[order[r - 1]] = true;
            let weight = cut_weight(edges, &inside);
            if weight <= 2.0 + eta + CUT_TOL {
                let mut vertex_set: Vec<usize> = order[l..r].to_vec();
                vertex_set.sort_unstable();
                cuts.push(NearMinCut { vertex_set, weight, interval: Some((l, r)) });
            }
        }
    }
    sort_cuts(&mut cuts);
    cuts
}

/// How a cut is crossed by the rest of its family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingTag {
    Uncrossed,
    /// Crossed only by cuts that start further left.
    LeftOnly,
    /// Crossed only by cuts that start further right.
    RightOnly,
    Both,
}

/// Crossing structure of a cut family along a reference cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub tags: Vec<CrossingTag>,
    /// Connected components of the crossing graph among cuts not crossed on both sides.
    pub components: Vec<Vec<usize>>,
    /// Cuts that are not intervals of the cycle.
    pub non_intervals: Vec<usize>,
}

fn crosses(a: (usize, usize), b: (usize, usize)) -> bool {
    (a.0 < b.0 && b.0 < a.1 && a.1 < b.1) || (b.0 < a.0 && a.0 < b.1 && b.1 < a.1)
}

/// Fills in interval positions of each cut along `order` and classifies
/// crossings. A cut `S` crosses `S'` on the left when `S` starts further left.
pub fn classify_crossings(cuts: &mut [NearMinCut], order: &[usize]) -> CrossingReport {
    let n = order.len();
    let mut position = vec![usize::MAX; n];
    for (p, &v) in order.iter().enumerate() {
        position[v] = p;
    }
    let mut non_intervals = Vec::new();
    for (i, cut) in cuts.iter_mut().enumerate() {
        let l = cut.vertex_set.iter().map(|&v| position[v]).min().unwrap_or(0);
        let r = cut.vertex_set.iter().map(|&v| position[v]).max().map_or(0, |p| p + 1);
        if r - l == cut.vertex_set.len() && l > 0 && r < n {
            cut.interval = Some((l, r));
        } else {
            cut.interval = None;
            non_intervals.push(i);
        }
    }
    let k = cuts.len();
    let mut left = vec![false; k];
    let mut right = vec![false; k];
    let mut neighbours = vec![Vec::new(); k];
    for i in 0..k {
        let Some(a) = cuts[i].interval else { continue };
        for j in i + 1..k {
            let Some(b) = cuts[j].interval else { continue };
            if crosses(a, b) {
                let (first, second) = if a.0 < b.0 { (i, j) } else { (j, i) };
                right[first] = true;
                left[second] = true;
                neighbours[i].push(j);
                neighbours[j].push(i);
            }
        }
    }
    let tags: Vec<CrossingTag> = (0..k)
        .map(|i| match (left[i], right[i]) {
            (false, false) => CrossingTag::Uncrossed,
            (true, false) => CrossingTag::LeftOnly,
            (false, true) => CrossingTag::RightOnly,
            (true, true) => CrossingTag::Both,
        })
        .collect();
    let mut seen = vec![false; k];
    let mut components = Vec::new();
    for start in 0..k {
        if seen[start] || tags[start] == CrossingTag::Both || cuts[start].interval.is_none() {
            continue;
        }
        let mut component = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < component.len() {
            let u = component[head];
            head += 1;
            for &w in &neighbours[u] {
                if !seen[w] && tags[w] != CrossingTag::Both {
                    seen[w] = true;
                    component.push(w);
                }
            }
        }
        component.sort_unstable();
        components.push(component);
    }
    CrossingReport { tags, components, non_intervals }
}

/// Split of `δ(u)` into the parts `A`, `B`, `C` (edge indices).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgePartition {
    pub a: Vec<usize>,
    pub b: Vec<usize>,
    pub c: Vec<usize>,
}

impl EdgePartition {
    pub fn masses(&self, x: &[f64]) -> (f64, f64, f64) {
        let sum = |s: &[usize]| s.iter().map(|&e| x[e]).sum::<f64>();
        (sum(&self.a), sum(&self.b), sum(&self.c))
    }
}

/// Atoms and hierarchies of one connected component of crossing cuts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    /// `atoms[0]` is the root atom; the rest follow the cycle left to right.
    pub atoms: Vec<Vec<usize>>,
    /// Member cut indices into the enumerated family.
    pub cuts: Vec<usize>,
    /// `(ℓ, r)` per member cut: it holds atoms `ℓ..r`.
    pub arcs: Vec<(usize, usize)>,
    /// Member positions (into `cuts`) open on the left, and open on the right.
    pub left: Vec<usize>,
    pub right: Vec<usize>,
    /// Closest strict ancestor within the same hierarchy, per member position.
    pub strict_parent: Vec<Option<usize>>,
    pub union: Vec<usize>,
    /// Every atom is a contiguous run of the cycle.
    pub atoms_contiguous: bool,
    pub partition: EdgePartition,
}

impl Polygon {
    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }
}

/// Builds the polygon of a component with at least two cuts; `None` for a
/// single cut, which the caller handles directly.
pub fn polygon_of(
    cuts: &[NearMinCut],
    tags: &[CrossingTag],
    component: &[usize],
    order: &[usize],
    edges: &[(usize, usize, f64)],
) -> Option<Polygon> {
    if component.len() < 2 {
        return None;
    }
    let n = order.len();
    let mut position = vec![0; n];
    for (p, &v) in order.iter().enumerate() {
        position[v] = p;
    }
    // Atoms: vertices grouped by their membership signature.
    let members: Vec<Vec<bool>> = component.iter().map(|&c| indicator(n, &cuts[c].vertex_set)).collect();
    let mut groups: Vec<(Vec<bool>, Vec<usize>)> = Vec::new();
    for &v in order {
        let signature: Vec<bool> = members.iter().map(|m| m[v]).collect();
        match groups.iter_mut().find(|g| g.0 == signature) {
            Some(g) => g.1.push(v),
            None => groups.push((signature, vec![v])),
        }
    }
    let root = groups.iter().position(|g| g.0.iter().all(|&b| !b)).expect("root atom avoids every cut");
    let mut atoms = vec![groups[root].1.clone()];
    let mut rest: Vec<Vec<usize>> = groups.iter().enumerate().filter(|(i, _)| *i != root).map(|(_, g)| g.1.clone()).collect();
    rest.sort_by_key(|a| position[a[0]]);
    let atoms_contiguous = rest.iter().all(|a| {
        let first = position[a[0]];
        a.iter().enumerate().all(|(i, &v)| position[v] == first + i)
    });
    atoms.extend(rest);
    let mut atom_of = vec![0; n];
    for (i, atom) in atoms.iter().enumerate() {
        for &v in atom {
            atom_of[v] = i;
        }
    }
    let arcs: Vec<(usize, usize)> = component
        .iter()
        .map(|&c| {
            let ids: Vec<usize> = cuts[c].vertex_set.iter().map(|&v| atom_of[v]).collect();
            (*ids.iter().min().expect("nonempty"), ids.iter().max().expect("nonempty") + 1)
        })
        .collect();
    let k = component.len();
    let left: Vec<usize> = (0..k).filter(|&i| tags[component[i]] != CrossingTag::LeftOnly).collect();
    let right: Vec<usize> = (0..k).filter(|&i| tags[component[i]] == CrossingTag::LeftOnly).collect();
    let mut strict_parent = vec![None; k];
    for (family, use_left) in [(&left, true), (&right, false)] {
        for &i in family.iter() {
            let end = |j: usize| if use_left { arcs[j].0 } else { arcs[j].1 };
            strict_parent[i] = family
                .iter()
                .copied()
                .filter(|&j| j != i && arcs[j].0 <= arcs[i].0 && arcs[i].1 <= arcs[j].1 && end(j) != end(i))
                .min_by_key(|&j| arcs[j].1 - arcs[j].0);
        }
    }
    let mut union: Vec<usize> = atoms[1..].iter().flatten().copied().collect();
    union.sort_unstable();
    let first = &atoms[1];
    let last = &atoms[atoms.len() - 1];
    let partition = polygon_partition(n, edges, &atoms[0], first, last);
    Some(Polygon {
        atoms,
        cuts: component.to_vec(),
        arcs,
        left,
        right,
        strict_parent,
        union,
        atoms_contiguous,
        partition,
    })
}

/// `A = E(first, outside)`, `B = E(last, outside)`, `C` the rest of the boundary.
fn polygon_partition(
    n: usize,
    edges: &[(usize, usize, f64)],
    outside: &[usize],
    first: &[usize],
    last: &[usize],
) -> EdgePartition {
    let out = indicator(n, outside);
    let f = indicator(n, first);
    let l = indicator(n, last);
    let mut partition = EdgePartition { a: Vec::new(), b: Vec::new(), c: Vec::new() };
    for (i, &(u, v, _)) in edges.iter().enumerate() {
        if out[u] == out[v] {
            continue;
        }
        let inner = if out[u] { v } else { u };
        if f[inner] {
            partition.a.push(i);
        } else if l[inner] {
            partition.b.push(i);
        } else {
            partition.c.push(i);
        }
    }
    partition
}

/// One numeric check with its bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub value: f64,
    pub bound: f64,
    /// True when `value ≥ bound` is required, false for `value ≤ bound`.
    pub lower: bool,
    pub passed: bool,
}

impl BoundCheck {
    pub fn at_least(name: impl Into<String>, value: f64, bound: f64) -> Self {
        BoundCheck { name: name.into(), value, bound, lower: true, passed: value >= bound - CUT_TOL }
    }

    pub fn at_most(name: impl Into<String>, value: f64, bound: f64) -> Self {
        BoundCheck { name: name.into(), value, bound, lower: false, passed: value <= bound + CUT_TOL }
    }

    pub fn margin(&self) -> f64 {
        if self.lower {
            self.value - self.bound
        } else {
            self.bound - self.value
        }
    }
}

/// Structural checks of a polygon against the solution `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonReport {
    pub atoms: usize,
    pub eps_eta: f64,
    pub checks: Vec<BoundCheck>,
}

impl PolygonReport {
    pub fn violations(&self) -> usize {
        self.checks.iter().filter(|c| !c.passed).count()
    }
}

fn between(edges: &[(usize, usize, f64)], a: &[bool], b: &[bool]) -> f64 {
    edges.iter().filter(|e| (a[e.0] && b[e.1]) || (a[e.1] && b[e.0])).map(|e| e.2).sum()
}

/// Adjacent atoms share at least `1 − 14η`, every atom has boundary at most
/// `2 + 14η`, the root meets the middle atoms in at most `14η`, and the union
/// is a `(2 + 4η)`-near minimum cut.
pub fn verify_polygon_structure(p: &Polygon, n: usize, edges: &[(usize, usize, f64)], eta: f64) -> PolygonReport {
    let eps = 14.0 * eta;
    let m = p.atoms.len();
    let sets: Vec<Vec<bool>> = p.atoms.iter().map(|a| indicator(n, a)).collect();
    let mut checks = Vec::new();
    for i in 0..m {
        let j = (i + 1) % m;
        checks.push(BoundCheck::at_least(format!("x(E(a{i},a{j}))"), between(edges, &sets[i], &sets[j]), 1.0 - eps));
    }
    for (i, s) in sets.iter().enumerate() {
        checks.push(BoundCheck::at_most(format!("x(delta(a{i}))"), cut_weight(edges, s), 2.0 + eps));
    }
    if m > 3 {
        let middle: Vec<usize> = p.atoms[2..m - 1].iter().flatten().copied().collect();
        let value = between(edges, &sets[0], &indicator(n, &middle));
        checks.push(BoundCheck::at_most("x(E(a0, middle atoms))", value, eps));
    }
    checks.push(BoundCheck::at_most("x(delta(union))", cut_weight(edges, &indicator(n, &p.union)), 2.0 + 4.0 * eta));
    PolygonReport { atoms: m, eps_eta: eps, checks }
}

/// Role of a hierarchy node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Degree,
    /// Union of a component of at least two crossing cuts.
    Polygon,
    /// Exactly two children and no component; a polygon with two atoms.
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchyNode {
    pub vertex_set: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub kind: NodeKind,
    /// For polygon and triangle nodes: children in cycle order.
    pub atoms: Vec<usize>,
    pub partition: Option<EdgePartition>,
    /// Both the component rule and the two-children rule applied.
    pub ambiguous: bool,
}

/// Laminar family of near-minimum cuts rooted at all vertices but the root pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutHierarchy {
    pub n: usize,
    pub root_pair: (usize, usize),
    pub eta: f64,
    pub eps_eta: f64,
    pub nodes: Vec<HierarchyNode>,
    pub root: usize,
    /// Cycle order on the split graph used for the `z` cuts.
    pub cycle: Vec<usize>,
    /// The reference tour was not certified optimal.
    pub heuristic_opt: bool,
    pub cuts: Vec<NearMinCut>,
    pub crossing: CrossingReport,
    pub polygons: Vec<Polygon>,
    /// Edges `(u, v, x)` of the split solution, root edge included.
    pub edges: Vec<(usize, usize, f64)>,
}

/// A top edge bundle: LP edges whose smallest enclosing node is the degree
/// cut `parent`, running between its children `u` and `v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopBundle {
    pub parent: usize,
    pub u: usize,
    pub v: usize,
    pub edges: Vec<usize>,
    pub x: f64,
}

/// Split-graph cycle from a tour of the original vertices: the split vertex
/// first, the tour in order, then its copy; the root edge closes the cycle.
pub fn split_cycle(sol: &LpSolution, tour: &[usize]) -> Result<Vec<usize>, CutError> {
    let (u0, v0) = sol.root_pair().ok_or(CutError::NotSplit)?;
    let origin = sol.split_origin.unwrap_or(u0);
    let n = sol.n - 1;
    let mut seen = vec![false; n];
    if tour.len() != n || tour.iter().any(|&v| v >= n || std::mem::replace(&mut seen[v], true)) {
        return Err(CutError::InvalidTour(n));
    }
    let start = tour.iter().position(|&v| v == origin).expect("tour visits the split vertex");
    let mut cycle = vec![u0];
    cycle.extend((1..n).map(|i| tour[(start + i) % n]));
    cycle.push(v0);
    Ok(cycle)
}

fn is_subset(a: &[usize], b: &[usize]) -> bool {
    let mut j = 0;
    for &v in a {
        while j < b.len() && b[j] < v {
            j += 1;
        }
        if j == b.len() || b[j] != v {
            return false;
        }
    }
    true
}

fn intersects(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Equal => return true,
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    false
}

/// Builds the cut hierarchy from the `η`-near minimum cuts of `z = (x + OPT)/2`
/// on the split graph. `tour` is an optimal tour of the original vertices,
/// or a heuristic one flagged by `heuristic_opt`.
pub fn build_hierarchy(sol: &LpSolution, tour: &[usize], eta: f64, heuristic_opt: bool) -> Result<CutHierarchy, CutError> {
    let (u0, v0) = sol.root_pair().ok_or(CutError::NotSplit)?;
    let n = sol.n;
    let cycle = split_cycle(sol, tour)?;
    let edges: Vec<(usize, usize, f64)> = sol.edges.iter().map(|e| (e.u, e.v, e.x)).collect();
    let mut z: Vec<(usize, usize, f64)> = edges.iter().map(|&(u, v, x)| (u, v, x / 2.0)).collect();
    for i in 0..n {
        z.push((cycle[i], cycle[(i + 1) % n], 0.5));
    }
    check_inputs(n, &edges, eta)?;
    // Near-minimum cuts of z are cycle intervals once x has minimum cut 2 and η < 1.
    let mut cuts = if n <= BRUTE_FORCE_CUT_LIMIT || eta >= 1.0 {
        enumerate_near_min_cuts(n, &z, eta, Some((u0, v0)))?
    } else {
        enumerate_interval_cuts(&cycle, &z, eta)
    };
    let crossing = classify_crossings(&mut cuts, &cycle);

    let mut sets: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut polygons = Vec::new();
    for component in &crossing.components {
        if component.len() == 1 {
            sets.insert(cuts[component[0]].vertex_set.clone());
            continue;
        }
        let polygon = polygon_of(&cuts, &crossing.tags, component, &cycle, &edges).expect("two or more cuts");
        for atom in &polygon.atoms[1..] {
            let mut atom = atom.clone();
            atom.sort_unstable();
            sets.insert(atom);
        }
        sets.insert(polygon.union.clone());
        polygons.push(polygon);
    }
    let root_set: Vec<usize> = (0..n).filter(|&v| v != u0 && v != v0).collect();
    sets.insert(root_set.clone());
    let mut node_sets: Vec<Vec<usize>> = sets.into_iter().collect();
    node_sets.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
    for i in 0..node_sets.len() {
        for j in i + 1..node_sets.len() {
            let (a, b) = (&node_sets[i], &node_sets[j]);
            if intersects(a, b) && !is_subset(b, a) {
                return Err(CutError::NotLaminar { a: a.clone(), b: b.clone() });
            }
        }
    }
    // Sorted by decreasing size, the parent is the last earlier superset.
    let mut nodes: Vec<HierarchyNode> = Vec::with_capacity(node_sets.len());
    for i in 0..node_sets.len() {
        let parent = (0..i).rev().find(|&j| is_subset(&node_sets[i], &node_sets[j]));
        nodes.push(HierarchyNode {
            vertex_set: node_sets[i].clone(),
            parent,
            children: Vec::new(),
            kind: NodeKind::Degree,
            atoms: Vec::new(),
            partition: None,
            ambiguous: false,
        });
        if let Some(p) = parent {
            nodes[p].children.push(i);
        }
    }
    let mut position = vec![0; n];
    for (p, &v) in cycle.iter().enumerate() {
        position[v] = p;
    }
    for node in nodes.iter_mut() {
        node.children.sort_by_key(|&c| position[node_sets[c][0]]);
    }
    for i in 0..nodes.len() {
        let polygon = polygons.iter().find(|p| p.union == nodes[i].vertex_set);
        let two_children = nodes[i].children.len() == 2;
        if let Some(p) = polygon {
            nodes[i].kind = NodeKind::Polygon;
            nodes[i].ambiguous = two_children;
            nodes[i].atoms = nodes[i].children.clone();
            nodes[i].partition = Some(p.partition.clone());
        } else if two_children {
            let (x, y) = (nodes[i].children[0], nodes[i].children[1]);
            let outside: Vec<usize> = (0..n).filter(|v| nodes[i].vertex_set.binary_search(v).is_err()).collect();
            nodes[i].kind = NodeKind::Triangle;
            nodes[i].atoms = vec![x, y];
            let mut partition = polygon_partition(n, &edges, &outside, &node_sets[x], &node_sets[y]);
            partition.c.clear();
            nodes[i].partition = Some(partition);
        }
    }
    Ok(CutHierarchy {
        n,
        root_pair: (u0, v0),
        eta,
        eps_eta: 14.0 * eta,
        nodes,
        root: 0,
        cycle,
        heuristic_opt,
        cuts,
        crossing,
        polygons,
        edges,
    })
}

impl CutHierarchy {
    fn contains(&self, node: usize, v: usize) -> bool {
        self.nodes[node].vertex_set.binary_search(&v).is_ok()
    }

    /// `x(δ(S))` for a node.
    pub fn boundary_weight(&self, node: usize) -> f64 {
        cut_weight(&self.edges, &indicator(self.n, &self.nodes[node].vertex_set))
    }

    /// Edge indices of `δ(S)`.
    pub fn boundary(&self, node: usize) -> Vec<usize> {
        let inside = indicator(self.n, &self.nodes[node].vertex_set);
        (0..self.edges.len()).filter(|&i| inside[self.edges[i].0] != inside[self.edges[i].1]).collect()
    }

    /// Smallest node containing both endpoints of edge `e`; `None` for edges
    /// at the root pair.
    pub fn edge_parent(&self, e: usize) -> Option<usize> {
        let (u, v, _) = self.edges[e];
        let (a, b) = self.root_pair;
        if [u, v].iter().any(|&w| w == a || w == b) {
            return None;
        }
        let mut node = self.root;
        'descend: loop {
            for &c in &self.nodes[node].children {
                if self.contains(c, u) && self.contains(c, v) {
                    node = c;
                    continue 'descend;
                }
            }
            return Some(node);
        }
    }

    /// Child of `node` containing vertex `v`, if any.
    pub fn child_containing(&self, node: usize, v: usize) -> Option<usize> {
        self.nodes[node].children.iter().copied().find(|&c| self.contains(c, v))
    }

    /// Top edge bundles grouped by degree cut and child pair.
    pub fn top_bundles(&self) -> Vec<TopBundle> {
        let mut bundles: Vec<TopBundle> = Vec::new();
        for e in 0..self.edges.len() {
            let Some(p) = self.edge_parent(e) else { continue };
            if self.nodes[p].kind != NodeKind::Degree {
                continue;
            }
            let (u, v, x) = self.edges[e];
            let (Some(a), Some(b)) = (self.child_containing(p, u), self.child_containing(p, v)) else { continue };
            let (a, b) = (a.min(b), a.max(b));
            match bundles.iter_mut().find(|t| t.parent == p && t.u == a && t.v == b) {
                Some(t) => {
                    t.edges.push(e);
                    t.x += x;
                }
                None => bundles.push(TopBundle { parent: p, u: a, v: b, edges: vec![e], x }),
            }
        }
        bundles
    }

    /// True when no two nodes cross.
    pub fn is_laminar(&self) -> bool {
        self.nodes.iter().enumerate().all(|(i, a)| {
            self.nodes[i + 1..].iter().all(|b| {
                !intersects(&a.vertex_set, &b.vertex_set)
                    || is_subset(&a.vertex_set, &b.vertex_set)
                    || is_subset(&b.vertex_set, &a.vertex_set)
            })
        })
    }

    /// Near-minimum-cut and adjacency checks for every node, at `ε_η = 14η`.
    pub fn node_checks(&self) -> Vec<BoundCheck> {
        let eps = self.eps_eta;
        let mut checks = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            checks.push(BoundCheck::at_most(format!("node {i}: x(delta)"), self.boundary_weight(i), 2.0 + eps));
            if let Some(partition) = &node.partition {
                let x: Vec<f64> = self.edges.iter().map(|e| e.2).collect();
                let (a, b, c) = partition.masses(&x);
                checks.push(BoundCheck::at_least(format!("node {i}: x(A)"), a, 1.0 - eps));
                checks.push(BoundCheck::at_least(format!("node {i}: x(B)"), b, 1.0 - eps));
                checks.push(BoundCheck::at_most(format!("node {i}: x(C)"), c, eps));
                for pair in node.atoms.windows(2) {
                    let s = indicator(self.n, &self.nodes[pair[0]].vertex_set);
                    let t = indicator(self.n, &self.nodes[pair[1]].vertex_set);
                    checks.push(BoundCheck::at_least(
                        format!("node {i}: x(E(u{}, u{}))", pair[0], pair[1]),
                        between(&self.edges, &s, &t),
                        1.0 - eps,
                    ));
                }
            }
        }
        checks
    }
}

/// Which branch of the degree partition applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PartitionCase {
    TwoMinimal,
    OneMinimal,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegreePartition {
    pub node: usize,
    pub case: PartitionCase,
    pub a_cut: Option<usize>,
    pub b_cut: Option<usize>,
    pub partition: EdgePartition,
    pub checks: Vec<BoundCheck>,
}

/// Partition of `δ(u)` by its minimal descendants that carry at least
/// `1 − eps_oneone` of the boundary.
pub fn degree_partition(h: &CutHierarchy, node: usize, eps_oneone: f64) -> Result<DegreePartition, CutError> {
    if node >= h.nodes.len() {
        return Err(CutError::UnknownNode(node));
    }
    let boundary = h.boundary(node);
    let x: Vec<f64> = h.edges.iter().map(|e| e.2).collect();
    let shared = |d: usize| -> Vec<usize> {
        let inside = indicator(h.n, &h.nodes[d].vertex_set);
        boundary.iter().copied().filter(|&e| inside[h.edges[e].0] != inside[h.edges[e].1]).collect()
    };
    let mass = |s: &[usize]| s.iter().map(|&e| x[e]).sum::<f64>();
    let mut descendants = Vec::new();
    let mut stack = h.nodes[node].children.clone();
    while let Some(d) = stack.pop() {
        descendants.push(d);
        stack.extend(h.nodes[d].children.iter().copied());
    }
    let qualifying: Vec<usize> =
        descendants.iter().copied().filter(|&d| mass(&shared(d)) >= 1.0 - eps_oneone - CUT_TOL).collect();
    let mut minimal: Vec<usize> = qualifying
        .iter()
        .copied()
        .filter(|&d| !qualifying.iter().any(|&o| o != d && is_subset(&h.nodes[o].vertex_set, &h.nodes[d].vertex_set)))
        .collect();
    minimal.sort_unstable();
    let take = |s: &[usize]| -> Vec<usize> { boundary.iter().copied().filter(|e| !s.contains(e)).collect() };
    let (case, a_cut, b_cut, partition) = match minimal.as_slice() {
        [a, b, ..] => {
            let sa = shared(*a);
            let sb = shared(*b);
            let both: Vec<usize> = sa.iter().chain(&sb).copied().collect();
            (PartitionCase::TwoMinimal, Some(*a), Some(*b), EdgePartition { c: take(&both), a: sa, b: sb })
        }
        [a] => {
            let sa = shared(*a);
            let holder = h.child_containing(node, h.nodes[*a].vertex_set[0]).expect("descendant lies in a child");
            let c: Vec<usize> = shared(holder).into_iter().filter(|e| !sa.contains(e)).collect();
            let both: Vec<usize> = sa.iter().chain(&c).copied().collect();
            (PartitionCase::OneMinimal, Some(*a), None, EdgePartition { b: take(&both), a: sa, c })
        }
        [] => {
            // Greedy split by decreasing value.
            let mut sorted = boundary.clone();
            sorted.sort_by(|&p, &q| x[q].total_cmp(&x[p]).then(p.cmp(&q)));
            let mut a = Vec::new();
            let mut b = Vec::new();
            for e in sorted {
                if mass(&a) < 1.0 - eps_oneone {
                    a.push(e);
                } else {
                    b.push(e);
                }
            }
            (PartitionCase::Fallback, None, None, EdgePartition { a, b, c: Vec::new() })
        }
    };
    let (xa, xb, xc) = partition.masses(&x);
    let checks = vec![
        BoundCheck::at_least("x(A)", xa, 1.0 - eps_oneone),
        BoundCheck::at_least("x(B)", xb, 1.0 - eps_oneone),
        BoundCheck::at_most("x(A) upper", xa, 1.0 + h.eps_eta),
        BoundCheck::at_most("x(B) upper", xb, 1.0 + h.eps_eta),
        BoundCheck::at_most("x(C)", xc, 2.0 * eps_oneone + h.eps_eta),
    ];
    Ok(DegreePartition { node, case, a_cut, b_cut, partition, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::{split_root, LpEdge};

    fn cycle_edges(n: usize) -> Vec<(usize, usize, f64)> {
        (0..n).map(|v| (v, (v + 1) % n, 1.0)).collect()
    }

    fn k4() -> Vec<(usize, usize, f64)> {
        let t = 2.0 / 3.0;
        vec![(0, 1, t), (0, 2, t), (0, 3, t), (1, 2, t), (1, 3, t), (2, 3, t)]
    }

    #[test]
    fn cycle_has_all_arcs() {
        let cuts = enumerate_near_min_cuts(5, &cycle_edges(5), 0.0, None).unwrap();
        assert_eq!(cuts.len(), 10);
        assert!(cuts.iter().all(|c| (c.weight - 2.0).abs() < 1e-12));
    }

    #[test]
    fn k4_singletons_only() {
        let cuts = enumerate_near_min_cuts(4, &k4(), 0.5, None).unwrap();
        assert_eq!(cuts.len(), 4);
        assert!(cuts.iter().all(|c| c.vertex_set.len() == 1 || c.vertex_set.len() == 3));
    }

    #[test]
    fn light_graph_rejected() {
        let path = vec![(0, 1, 1.0), (1, 2, 1.0)];
        assert!(matches!(enumerate_near_min_cuts(3, &path, 0.0, None), Err(CutError::Inconsistent(_))));
    }

    #[test]
    fn contraction_agrees_with_brute_force() {
        let mut edges = cycle_edges(9);
        edges.extend([(0, 4, 0.3), (2, 7, 0.2)]);
        let a = enumerate_brute_force(9, &edges, 0.6, Some((0, 8))).unwrap();
        let b = enumerate_by_contraction(9, &edges, 0.6, Some((0, 8)), 3).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|c| !c.vertex_set.contains(&0) && !c.vertex_set.contains(&8)));
    }

    #[test]
    fn crossing_tags() {
        let n = 8;
        let order: Vec<usize> = (0..n).collect();
        let mk = |set: Vec<usize>| NearMinCut { vertex_set: set, weight: 2.0, interval: None };
        // [1,3) and [5,7) disjoint; [1,4) and [2,5) cross; [2,3) nested.
        let mut cuts = vec![mk(vec![1, 2]), mk(vec![5, 6])];
        let report = classify_crossings(&mut cuts, &order);
        assert_eq!(report.tags, vec![CrossingTag::Uncrossed, CrossingTag::Uncrossed]);
        assert_eq!(report.components.len(), 2);
        let mut cuts = vec![mk(vec![1, 2, 3]), mk(vec![2, 3, 4]), mk(vec![2])];
        let report = classify_crossings(&mut cuts, &order);
        assert_eq!(report.tags, vec![CrossingTag::RightOnly, CrossingTag::LeftOnly, CrossingTag::Uncrossed]);
        let polygon = polygon_of(&cuts, &report.tags, &report.components[0], &order, &[]).unwrap();
        assert_eq!(polygon.atoms[1..].to_vec(), vec![vec![1], vec![2, 3], vec![4]]);
        assert_eq!(polygon.arcs, vec![(1, 3), (2, 4)]);
        assert!(polygon.atoms_contiguous);
        let mut cuts = vec![mk(vec![1, 2, 3]), mk(vec![3, 4, 5]), mk(vec![2, 3, 4])];
        let report = classify_crossings(&mut cuts, &order);
        assert_eq!(report.tags[2], CrossingTag::Both);
    }

    fn integral_cycle(n: usize) -> LpSolution {
        let edges = (0..n).map(|v| LpEdge { u: v, v: (v + 1) % n, x: 1.0, cost: 1.0 }).collect();
        split_root(&LpSolution::from_parts(n, edges, None).unwrap())
    }

    #[test]
    fn integral_cycle_polygon_is_exact() {
        let sol = integral_cycle(6);
        let tour: Vec<usize> = (0..6).collect();
        let h = build_hierarchy(&sol, &tour, 0.0, false).unwrap();
        assert!(h.is_laminar());
        assert_eq!(h.polygons.len(), 1);
        let p = &h.polygons[0];
        assert_eq!(p.atom_count(), 6);
        let edges: Vec<(usize, usize, f64)> = sol.edges.iter().map(|e| (e.u, e.v, e.x)).collect();
        let report = verify_polygon_structure(p, sol.n, &edges, 0.0);
        assert_eq!(report.violations(), 0);
        assert!(h.node_checks().iter().all(|c| c.passed));
    }

    #[test]
    fn split_k4_hierarchy() {
        let edges = k4().into_iter().map(|(u, v, x)| LpEdge { u, v, x, cost: 1.0 }).collect();
        let sol = split_root(&LpSolution::from_parts(4, edges, None).unwrap());
        let h = build_hierarchy(&sol, &[0, 1, 2, 3], 0.0, false).unwrap();
        let root = &h.nodes[h.root];
        assert_eq!(root.vertex_set, vec![1, 2, 3]);
        assert_eq!(root.children.len(), 3);
        assert_eq!(root.kind, NodeKind::Degree);
        assert_eq!(h.top_bundles().len(), 3);
        let partition = degree_partition(&h, h.root, 0.01).unwrap();
        assert!(partition.checks.iter().all(|c| c.passed), "{partition:?}");
    }
}
