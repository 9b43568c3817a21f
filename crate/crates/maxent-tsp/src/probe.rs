//! Exact checks of negative-dependence facts on small spanning tree laws:
//! Bernoulli sums, conditioning on near-minimum cuts, the generalized
//! Gurvits bound, the marginal-preserving max-flow event, and the
//! classification of top edge bundles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::cuts::{degree_partition, BoundCheck, CutError, CutHierarchy, TopBundle};
use crate::graph::FlowNetwork;
use crate::trees::{mask_members, EdgeMask, ExactTreeDistribution, TreeError};

/// Marginals further than this from the LP values are rejected.
pub const MARGINAL_TOL: f64 = 1e-6;
/// Tolerance for probability identities and log-concavity.
pub const ROUND_OFF: f64 = 1e-9;
/// Resolution of the integer max-flow solve, in units of `β`.
const FLOW_GRID: f64 = 1e15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error("distribution marginals differ from the solution by {gap:e}")]
    Mismatch { gap: f64 },
    #[error("edge sets must be disjoint")]
    Overlap,
    #[error("at most 3 edge sets are supported, got {0}")]
    TooManySets(usize),
    #[error("one target count per edge set is required")]
    TargetCount,
    #[error("A and B never hold exactly one tree edge each")]
    Degenerate,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("bundle ({u}, {v}) does not join two children of node {parent}")]
    NotSiblings { parent: usize, u: usize, v: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
    #[error(transparent)]
    Cut(#[from] CutError),
}

/// The constants of the analysis, derived from `eta` and the half-edge width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConstants {
    pub eta: f64,
    pub eps_eta: f64,
    pub eps_half: f64,
    pub eps_oneone: f64,
    pub p: f64,
    pub eps_m: f64,
    pub beta: f64,
    pub tau: f64,
    pub eps_p: f64,
}

impl AnalysisConstants {
    pub fn new(eta: f64) -> Self {
        Self::with_eps_half(eta, 0.0002)
    }

    pub fn with_eps_half(eta: f64, eps_half: f64) -> Self {
        let beta = eta / 8.0;
        AnalysisConstants {
            eta,
            eps_eta: 14.0 * eta,
            eps_half,
            eps_oneone: eps_half / 12.0,
            p: 0.005 * eps_half * eps_half,
            eps_m: 1.0 / 4000.0,
            beta,
            tau: 0.571 * beta,
            eps_p: 3.9e-17,
        }
    }
}

/// A set of named checks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckList {
    pub checks: Vec<BoundCheck>,
}

impl CheckList {
    pub fn push(&mut self, check: BoundCheck) {
        self.checks.push(check);
    }

    pub fn extend(&mut self, other: CheckList) {
        self.checks.extend(other.checks);
    }

    pub fn violations(&self) -> Vec<&BoundCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn len(&self) -> usize {
        self.checks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checks.is_empty()
    }

    /// Smallest margin over all checks.
    pub fn min_margin(&self) -> f64 {
        self.checks.iter().map(BoundCheck::margin).fold(f64::INFINITY, f64::min)
    }
}

/// Law of a sum of independent Bernoullis, by convolution.
pub fn bernoulli_sum_law(probabilities: &[f64]) -> Vec<f64> {
    let mut law = vec![1.0];
    for &p in probabilities {
        let mut next = vec![0.0; law.len() + 1];
        for (k, &w) in law.iter().enumerate() {
            next[k] += w * (1.0 - p);
            next[k + 1] += w * p;
        }
        law = next;
    }
    law
}

pub fn even_probability(law: &[f64]) -> f64 {
    law.iter().step_by(2).sum()
}

pub fn poisson_pmf(rate: f64, k: usize) -> f64 {
    if rate == 0.0 {
        return if k == 0 { 1.0 } else { 0.0 };
    }
    (-rate + k as f64 * rate.ln() - ln_gamma(k as f64 + 1.0)).exp()
}

/// `P[Poisson(rate) ≥ k]`.
pub fn poisson_tail(rate: f64, k: usize) -> f64 {
    (1.0 - (0..k).map(|j| poisson_pmf(rate, j)).sum::<f64>()).max(0.0)
}

/// Lower bound on `P[X = k]` for a Bernoulli sum with mean `q`, valid when
/// `k − 1 < q < k + 1`; minimizes over the number `ℓ` of sure successes.
pub fn point_mass_bound(q: f64, k: usize) -> f64 {
    let top = (q.floor() as usize).min(k);
    (0..=top)
        .map(|l| {
            let rate = q - l as f64;
            let excess = (q - k as f64).max(0.0);
            poisson_pmf(rate, k - l) * (1.0 - rate / (k - l + 1) as f64).powf(excess)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Lower bound on `P[X ≥ ⌈q⌉]` for a Bernoulli sum with mean `q`.
pub fn upper_tail_bound(q: f64) -> f64 {
    let k = q.ceil() as usize;
    let top = q.floor() as usize;
    (0..=top)
        .filter(|&l| (l as f64) < q || l == 0)
        .map(|l| poisson_tail(q - l as f64, k - l))
        .fold(f64::INFINITY, f64::min)
}

/// Random probabilities with sum `q`, each at most 1.
fn random_probabilities(n: usize, q: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
    let mut capped = vec![false; n];
    loop {
        let fixed: f64 = capped.iter().filter(|&&c| c).count() as f64;
        let free: f64 = (0..n).filter(|&i| !capped[i]).map(|i| p[i]).sum();
        let scale = (q - fixed) / free;
        let mut changed = false;
        for i in 0..n {
            if !capped[i] && p[i] * scale >= 1.0 {
                capped[i] = true;
                p[i] = 1.0;
                changed = true;
            }
        }
        if !changed {
            for i in 0..n {
                if !capped[i] {
                    p[i] *= scale;
                }
            }
            return p;
        }
    }
}

/// `ℓ` sure successes and the remaining mean split evenly over `m − ℓ` trials.
fn extremal_probabilities(m: usize, sure: usize, q: f64) -> Option<Vec<f64>> {
    if sure > m || (sure as f64) > q || (m == sure && (q - sure as f64).abs() > 1e-12) {
        return None;
    }
    let rest = if m > sure { (q - sure as f64) / (m - sure) as f64 } else { 0.0 };
    if rest > 1.0 {
        return None;
    }
    let mut p = vec![1.0; sure];
    p.extend(std::iter::repeat_n(rest, m - sure));
    Some(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliReport {
    pub laws_checked: usize,
    pub checks: CheckList,
}

/// Checks the even-sum identity, the parity bound for means up to 1.2, and
/// the Poisson lower bounds on point masses and upper tails over product
/// laws built from `q_grid × n_grid`: random vectors plus the extremal ones.
pub fn bernoulli_facts(q_grid: &[f64], n_grid: &[usize], seed: u64) -> BernoulliReport {
    let mut checks = CheckList::default();
    let mut laws_checked = 0;
    for &n in n_grid {
        for p in [0.0, 0.1, 0.3, 0.5, 0.7, 1.0] {
            let law = bernoulli_sum_law(&vec![p; n]);
            let exact = even_probability(&law);
            let formula = 0.5 * (1.0 + (1.0 - 2.0 * p).powi(n as i32));
            checks.push(BoundCheck::at_most(format!("even-sum identity p={p} n={n}"), (exact - formula).abs(), ROUND_OFF));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &q in q_grid {
        for &n in n_grid {
            if (n as f64) < q {
                continue;
            }
            let mut vectors: Vec<Vec<f64>> = (0..3).map(|_| random_probabilities(n, q, &mut rng)).collect();
            vectors.extend((0..=q.floor() as usize).filter_map(|l| extremal_probabilities(n, l, q)));
            for p in vectors {
                laws_checked += 1;
                let law = bernoulli_sum_law(&p);
                let label = format!("q={q:.3} n={n} p0={:.3}", p[0]);
                if q <= 1.2 {
                    checks.push(BoundCheck::at_most(
                        format!("even parity bound {label}"),
                        even_probability(&law),
                        0.5 * (1.0 + (-2.0 * q).exp()),
                    ));
                }
                let lowest = (q - 1.0).floor().max(-1.0) as i64 + 1;
                for k in lowest.max(0) as usize..=(q + 1.0).ceil() as usize {
                    let kf = k as f64;
                    if kf - 1.0 < q && q < kf + 1.0 {
                        let mass = law.get(k).copied().unwrap_or(0.0);
                        checks.push(BoundCheck::at_least(format!("point mass k={k} {label}"), mass, point_mass_bound(q, k)));
                    }
                }
                let k = q.ceil() as usize;
                let tail: f64 = law.iter().skip(k).sum();
                checks.push(BoundCheck::at_least(format!("upper tail {label}"), tail, upper_tail_bound(q)));
            }
        }
    }
    BernoulliReport { laws_checked, checks }
}

fn mask_weight(x: &[f64], mask: EdgeMask) -> f64 {
    mask_members(mask).iter().map(|&e| x[e]).sum()
}

/// Largest gap between the law's marginals and `x`.
pub fn check_marginals(d: &ExactTreeDistribution, x: &[f64]) -> Result<f64, ProbeError> {
    if x.len() != d.edges.len() {
        return Err(ProbeError::Mismatch { gap: f64::INFINITY });
    }
    let gap = d.marginals.iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    if gap > MARGINAL_TOL {
        return Err(ProbeError::Mismatch { gap });
    }
    Ok(gap)
}

/// Tree-conditioning facts on an exact law with marginals `x`:
/// near-minimum cuts are trees with probability `1 − ε/2`, disjoint pairs of
/// cuts share exactly one tree edge, unlikely edge sets are often empty, and
/// (for maximum-entropy laws) conditioning on a tree cut shifts expectations
/// inside and outside by at most `ε/2` in the stated direction.
pub fn verify_tree_conditioning(
    d: &ExactTreeDistribution,
    x: &[f64],
    sets: &[Vec<usize>],
    edge_sets: &[EdgeMask],
    max_entropy: bool,
) -> Result<CheckList, ProbeError> {
    check_marginals(d, x)?;
    let mut checks = CheckList::default();
    let excess = |s: &[usize]| (mask_weight(x, d.boundary_edges(s)) - 2.0).max(0.0);
    for s in sets {
        let eps = excess(s);
        let tree = d.probability(|t| d.is_tree_on(t, s));
        checks.push(BoundCheck::at_least(format!("P[{s:?} is tree]"), tree, 1.0 - eps / 2.0));
        if max_entropy && tree > 0.0 {
            let cond = d.condition(&crate::trees::TreeConstraint::SetIsTree(s.clone()))?;
            let inside = d.induced_edges(s);
            let outside = !inside & ((1u128 << d.edges.len()) - 1);
            for (label, mask, lo, hi) in [("inside", inside, 0.0, eps / 2.0), ("outside", outside, -eps / 2.0, 0.0)] {
                let before = mask_weight(&d.marginals, mask);
                let after = mask_weight(&cond.marginals, mask);
                checks.push(BoundCheck::at_least(format!("{label} shift {s:?}"), after - before, lo - ROUND_OFF));
                checks.push(BoundCheck::at_most(format!("{label} shift {s:?}"), after - before, hi + ROUND_OFF));
            }
        }
    }
    for (i, a) in sets.iter().enumerate() {
        for b in &sets[i + 1..] {
            if a.iter().any(|v| b.contains(v)) {
                continue;
            }
            let mut union: Vec<usize> = a.iter().chain(b).copied().collect();
            union.sort_unstable();
            let bound = 1.0 - (excess(a) + excess(b) + excess(&union)) / 2.0;
            if bound <= 0.0 {
                continue;
            }
            let between = d.edges_between(a, b);
            let one = d.probability(|t| (t & between).count_ones() == 1);
            checks.push(BoundCheck::at_least(format!("P[E({a:?},{b:?}) = 1]"), one, bound));
        }
    }
    for &a in edge_sets {
        let empty = d.probability(|t| t & a == 0);
        checks.push(BoundCheck::at_least(format!("P[T avoids {:?}]", mask_members(a)), empty, 1.0 - mask_weight(x, a)));
    }
    Ok(checks)
}

/// Log-concavity, contiguous support and mode placement of rank sequences,
/// plus pairwise negative correlation.
pub fn verify_rank_properties(d: &ExactTreeDistribution, edge_sets: &[EdgeMask]) -> CheckList {
    let mut checks = CheckList::default();
    for &a in edge_sets {
        let rank = d.rank_sequence(a);
        let label = format!("{:?}", mask_members(a));
        let worst_concavity = rank
            .probabilities
            .windows(3)
            .map(|w| w[1] * w[1] - w[0] * w[2])
            .fold(f64::INFINITY, f64::min)
            .min(0.0);
        checks.push(BoundCheck::at_least(format!("log-concave {label}"), worst_concavity, -ROUND_OFF));
        checks.push(BoundCheck::at_most(
            format!("no internal zeros {label}"),
            f64::from(u8::from(rank.has_internal_zeros(1e-15))),
            0.0,
        ));
        checks.push(BoundCheck::at_most(format!("mode near mean {label}"), (rank.mode as f64 - rank.mean).abs(), 1.0));
    }
    checks.push(BoundCheck::at_most("max pair correlation", d.max_pair_correlation(), ROUND_OFF));
    checks
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GurvitsReport {
    pub targets: Vec<usize>,
    /// Smallest tail probability over nonempty subfamilies.
    pub eps: f64,
    pub joint: f64,
    pub total: f64,
    pub bound: f64,
    pub check: BoundCheck,
}

/// `P[∀i: A_i = n_i] ≥ ε^{2^m} Π_{k≥2} 1/(max(n_k, n_1+…+n_{k−1}) + 1) · P[ΣA_i = Σn_i]`.
pub fn gurvits_bound_check(
    d: &ExactTreeDistribution,
    sets: &[EdgeMask],
    targets: &[usize],
) -> Result<GurvitsReport, ProbeError> {
    let m = sets.len();
    if m > 3 {
        return Err(ProbeError::TooManySets(m));
    }
    if targets.len() != m {
        return Err(ProbeError::TargetCount);
    }
    for i in 0..m {
        for j in i + 1..m {
            if sets[i] & sets[j] != 0 {
                return Err(ProbeError::Overlap);
            }
        }
    }
    let count = |t: EdgeMask, members: &[usize]| -> usize { members.iter().map(|&i| (t & sets[i]).count_ones() as usize).sum() };
    let mut eps = 1.0_f64;
    for subset in 1usize..(1 << m) {
        let members: Vec<usize> = (0..m).filter(|i| subset >> i & 1 == 1).collect();
        let goal: usize = members.iter().map(|&i| targets[i]).sum();
        let at_least = d.probability(|t| count(t, &members) >= goal);
        let at_most = d.probability(|t| count(t, &members) <= goal);
        eps = eps.min(at_least).min(at_most);
    }
    let all: Vec<usize> = (0..m).collect();
    let goal: usize = targets.iter().sum();
    let joint = d.probability(|t| (0..m).all(|i| (t & sets[i]).count_ones() as usize == targets[i]));
    let total = d.probability(|t| count(t, &all) == goal);
    let mut factor = eps.powi(1 << m);
    let mut prefix = targets.first().copied().unwrap_or(0);
    for &n_k in targets.iter().skip(1) {
        factor /= (n_k.max(prefix) + 1) as f64;
        prefix += n_k;
    }
    let bound = factor * total;
    let check = BoundCheck::at_least(format!("gurvits targets {targets:?}"), joint, bound);
    Ok(GurvitsReport { targets: targets.to_vec(), eps, joint, total, bound, check })
}

/// Whether the precondition on `ε, ζ` is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventMode {
    Strict,
    Exploratory,
}

/// A sub-probability measure on the trees of a law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSubdistribution {
    /// Event mass per tree, aligned with the law's tree list.
    pub mass: Vec<f64>,
    pub probability: f64,
    /// `P[e ∈ T | event]` for every edge.
    pub conditional_marginals: Vec<f64>,
}

impl EventSubdistribution {
    fn new(d: &ExactTreeDistribution, mass: Vec<f64>) -> Self {
        let probability: f64 = mass.iter().sum();
        let mut conditional_marginals = vec![0.0; d.edges.len()];
        if probability > 0.0 {
            for (t, &w) in d.trees.iter().zip(&mass) {
                for e in mask_members(t.edges) {
                    conditional_marginals[e] += w / probability;
                }
            }
        }
        EventSubdistribution { mass, probability, conditional_marginals }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxflowEvent {
    pub zeta: f64,
    pub eps: f64,
    /// `P[A_T = B_T = 1]`.
    pub joint_single: f64,
    /// Capacity scale of the source and sink arcs.
    pub beta: f64,
    /// Max flow divided by `β`.
    pub normalized_flow: f64,
    pub event: EventSubdistribution,
    pub distortion_a: f64,
    pub distortion_b: f64,
    pub checks: CheckList,
}

/// Routes flow from `A` to `B` through pair probabilities conditional on
/// `A_T = B_T = 1` and keeps, for each pair, a matching fraction of the trees
/// containing it. The result is an event on which both sides hold exactly
/// one edge and whose edge marginals on `A` and `B` stay within `ζ` of the
/// original ones in total variation.
pub fn construct_maxflow_event(
    d: &ExactTreeDistribution,
    a: EdgeMask,
    b: EdgeMask,
    zeta: f64,
    eps: f64,
    mode: EventMode,
) -> Result<MaxflowEvent, ProbeError> {
    if a & b != 0 {
        return Err(ProbeError::Overlap);
    }
    let ea = mask_weight(&d.marginals, a);
    let eb = mask_weight(&d.marginals, b);
    if mode == EventMode::Strict {
        if (ea - 1.0).abs() > eps || (eb - 1.0).abs() > eps {
            return Err(ProbeError::Precondition(format!("E[A]={ea}, E[B]={eb} not within {eps} of 1")));
        }
        if 300.0 * eps >= zeta || zeta >= 0.003 {
            return Err(ProbeError::Precondition(format!("need 300·eps < zeta < 0.003, got eps={eps}, zeta={zeta}")));
        }
    }
    let single = |t: EdgeMask| (t & a).count_ones() == 1 && (t & b).count_ones() == 1;
    let joint_single = d.probability(single);
    if joint_single <= 0.0 {
        return Err(ProbeError::Degenerate);
    }
    let left = mask_members(a);
    let right = mask_members(b);
    let mut pair = vec![vec![0.0; right.len()]; left.len()];
    let mut pair_of = vec![None; d.trees.len()];
    for (index, t) in d.trees.iter().enumerate() {
        if !single(t.edges) {
            continue;
        }
        let i = left.iter().position(|&e| t.edges >> e & 1 == 1).expect("one edge of A");
        let j = right.iter().position(|&f| t.edges >> f & 1 == 1).expect("one edge of B");
        pair[i][j] += t.probability / joint_single;
        pair_of[index] = Some((i, j));
    }
    let beta = 0.1 * zeta * zeta / 36.0 / joint_single;
    let grid = |c: f64| (c * FLOW_GRID).round() as i128;
    let (source, sink) = (0, 1 + left.len() + right.len());
    let mut network = FlowNetwork::<i128>::new(sink + 1);
    for (i, &e) in left.iter().enumerate() {
        network.add_arc(source, 1 + i, grid(d.marginals[e]));
    }
    for (j, &f) in right.iter().enumerate() {
        network.add_arc(1 + left.len() + j, sink, grid(d.marginals[f]));
    }
    let mut middle = vec![vec![None; right.len()]; left.len()];
    for i in 0..left.len() {
        for j in 0..right.len() {
            if pair[i][j] > 0.0 {
                middle[i][j] = Some(network.add_arc(1 + i, 1 + left.len() + j, grid(pair[i][j] / beta)));
            }
        }
    }
    let total = network.max_flow(source, sink);
    let normalized_flow = total as f64 / FLOW_GRID;
    let routed = |i: usize, j: usize| middle[i][j].map_or(0.0, |arc| beta * network.flow_on(arc) as f64 / FLOW_GRID);
    let mass: Vec<f64> = d
        .trees
        .iter()
        .zip(&pair_of)
        .map(|(t, p)| match *p {
            Some((i, j)) => (t.probability * (routed(i, j) / pair[i][j]).min(1.0)).max(0.0),
            None => 0.0,
        })
        .collect();
    let event = EventSubdistribution::new(d, mass);
    let distortion = |edges: &[usize]| -> f64 {
        edges.iter().map(|&e| (d.marginals[e] - event.conditional_marginals[e]).abs()).sum()
    };
    let distortion_a = distortion(&left);
    let distortion_b = distortion(&right);

    let mut checks = CheckList::default();
    let outside = d.trees.iter().zip(&event.mass).filter(|(t, _)| !single(t.edges)).map(|(_, &w)| w).sum::<f64>();
    checks.push(BoundCheck::at_most("event outside A_T = B_T = 1", outside, 0.0));
    let overshoot = d.trees.iter().zip(&event.mass).map(|(t, &w)| w - t.probability).fold(0.0, f64::max);
    checks.push(BoundCheck::at_most("event mass exceeds tree probability", overshoot, 0.0));
    if mode == EventMode::Strict {
        checks.push(BoundCheck::at_least("normalized min cut", normalized_flow, 1.0 - zeta / 3.0 - eps));
        checks.push(BoundCheck::at_least(
            "event probability",
            event.probability,
            0.002 * zeta * zeta * (1.0 - zeta / 3.0 - eps),
        ));
        checks.push(BoundCheck::at_most("distortion on A", distortion_a, zeta));
        checks.push(BoundCheck::at_most("distortion on B", distortion_b, zeta));
    }
    Ok(MaxflowEvent { zeta, eps, joint_single, beta, normalized_flow, event, distortion_a, distortion_b, checks })
}

/// The law conditioned on a polygon or triangle node being a tree with no
/// edge of `C`, with the node's `A` and `B` sides as masks.
pub fn polygon_sides(
    h: &CutHierarchy,
    d: &ExactTreeDistribution,
    node: usize,
) -> Result<(ExactTreeDistribution, EdgeMask, EdgeMask), ProbeError> {
    let partition = h.nodes.get(node).and_then(|n| n.partition.as_ref()).ok_or(CutError::UnknownNode(node))?;
    let set = &h.nodes[node].vertex_set;
    let c = edge_mask_of(d, &partition.c);
    let inner = d.induced_edges(set);
    let need = set.len() as u32 - 1;
    let cond = d.filter(|t| (t & inner).count_ones() == need && t & c == 0)?;
    Ok((cond, edge_mask_of(d, &partition.a), edge_mask_of(d, &partition.b)))
}

/// `max(|E[A_T] − 1|, |E[B_T] − 1|)`.
pub fn side_deviation(d: &ExactTreeDistribution, a: EdgeMask, b: EdgeMask) -> f64 {
    (mask_weight(&d.marginals, a) - 1.0).abs().max((mask_weight(&d.marginals, b) - 1.0).abs())
}

/// Builds the max-flow event for a node's sides under [`polygon_sides`].
pub fn polygon_event(
    h: &CutHierarchy,
    d: &ExactTreeDistribution,
    node: usize,
    zeta: f64,
    eps: f64,
    mode: EventMode,
) -> Result<MaxflowEvent, ProbeError> {
    let (cond, a, b) = polygon_sides(h, d, node)?;
    construct_maxflow_event(&cond, a, b, zeta, eps, mode)
}

/// Hierarchy edge indices as a mask over the law's edges; the root edge has
/// no counterpart and is dropped.
pub fn edge_mask_of(d: &ExactTreeDistribution, edges: &[usize]) -> EdgeMask {
    edges.iter().filter(|&&e| e < d.edges.len()).fold(0, |m, &e| m | 1 << e)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub parent: usize,
    pub u: usize,
    pub v: usize,
    pub x: f64,
    pub half: bool,
    /// `P[δ(u)_T = δ(v)_T = 2 | u, v trees]`.
    pub even_even: f64,
    pub good: bool,
    /// Probability of being 2-1-1 happy with respect to `u` and to `v`.
    pub happy_u: f64,
    pub happy_v: f64,
    /// Up-going mass `x(δ(u) ∩ δ(parent))` and the same for `v`.
    pub up_u: f64,
    pub up_v: f64,
    /// For bad bundles: the necessary conditions for badness.
    pub bad_conditions: Option<CheckList>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleReport {
    /// Bundle indices sharing the middle node.
    pub first: usize,
    pub second: usize,
    pub middle: usize,
    /// Probability that all three nodes are trees with even degree 2.
    pub happy: f64,
    pub good: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub bundles: Vec<BundleReport>,
    pub triples: Vec<TripleReport>,
    pub checks: CheckList,
}

/// Labels each top edge bundle half or not, good or bad, computes its happy
/// probabilities, and for bad ones checks the three necessary conditions.
pub fn classify_edges(
    h: &CutHierarchy,
    d: &ExactTreeDistribution,
    consts: &AnalysisConstants,
) -> Result<Classification, ProbeError> {
    let bundles_in = h.top_bundles();
    classify_bundles(h, d, consts, &bundles_in)
}

pub fn classify_bundles(
    h: &CutHierarchy,
    d: &ExactTreeDistribution,
    consts: &AnalysisConstants,
    bundles_in: &[TopBundle],
) -> Result<Classification, ProbeError> {
    if d.edges.len() + 1 != h.edges.len() {
        return Err(ProbeError::Mismatch { gap: f64::INFINITY });
    }
    let x: Vec<f64> = h.edges.iter().map(|e| e.2).collect();
    let set = |node: usize| h.nodes[node].vertex_set.as_slice();
    let tree_on = |t: EdgeMask, node: usize| d.is_tree_on(t, set(node));
    let degree = |t: EdgeMask, node: usize| (t & d.boundary_edges(set(node))).count_ones();
    let mut bundles = Vec::new();
    for bundle in bundles_in {
        let children = &h.nodes[bundle.parent].children;
        if bundle.u == bundle.v || !children.contains(&bundle.u) || !children.contains(&bundle.v) {
            return Err(ProbeError::NotSiblings { parent: bundle.parent, u: bundle.u, v: bundle.v });
        }
        let (u, v) = (bundle.u, bundle.v);
        let half = (bundle.x - 0.5).abs() <= consts.eps_half;
        let both_trees = d.probability(|t| tree_on(t, u) && tree_on(t, v));
        let even_even = if both_trees > 0.0 {
            d.probability(|t| tree_on(t, u) && tree_on(t, v) && degree(t, u) == 2 && degree(t, v) == 2) / both_trees
        } else {
            0.0
        };
        let good = !half || even_even >= 3.0 * consts.eps_half;
        let happy = |me: usize, other: usize| -> Result<f64, ProbeError> {
            let part = degree_partition(h, me, consts.eps_oneone)?.partition;
            let (ma, mb, mc) = (edge_mask_of(d, &part.a), edge_mask_of(d, &part.b), edge_mask_of(d, &part.c));
            Ok(d.probability(|t| {
                (t & ma).count_ones() == 1
                    && (t & mb).count_ones() == 1
                    && t & mc == 0
                    && degree(t, other) == 2
                    && tree_on(t, me)
                    && tree_on(t, other)
            }))
        };
        let up = |node: usize| -> f64 {
            let parent = h.boundary(bundle.parent);
            h.boundary(node).iter().filter(|e| parent.contains(e)).map(|&e| x[e]).sum()
        };
        bundles.push(BundleReport {
            parent: bundle.parent,
            u,
            v,
            x: bundle.x,
            half,
            even_even,
            good,
            happy_u: happy(u, v)?,
            happy_v: happy(v, u)?,
            up_u: up(u),
            up_v: up(v),
            bad_conditions: None,
        });
    }
    let mut checks = CheckList::default();
    for i in 0..bundles.len() {
        let b = &bundles[i];
        if b.good {
            continue;
        }
        let mut bad = CheckList::default();
        bad.push(BoundCheck::at_most("bad bundle is half", (b.x - 0.5).abs(), consts.eps_half));
        bad.push(BoundCheck::at_most("up mass at u", b.up_u, 0.5 + 9.0 * consts.eps_half));
        bad.push(BoundCheck::at_most("up mass at v", b.up_v, 0.5 + 9.0 * consts.eps_half));
        let bad_neighbours = bundles
            .iter()
            .enumerate()
            .filter(|(j, o)| {
                *j != i && o.parent == b.parent && o.half && !o.good && [o.u, o.v].iter().any(|w| *w == b.u || *w == b.v)
            })
            .count();
        bad.push(BoundCheck::at_most("other bad half bundles at u or v", bad_neighbours as f64, 0.0));
        checks.extend(bad.clone());
        bundles[i].bad_conditions = Some(bad);
    }
    let mut triples = Vec::new();
    for i in 0..bundles.len() {
        for j in i + 1..bundles.len() {
            let (e, f) = (&bundles[i], &bundles[j]);
            if e.parent != f.parent || !e.half || !f.half {
                continue;
            }
            let Some(middle) = [e.u, e.v].into_iter().find(|w| *w == f.u || *w == f.v) else { continue };
            let first = if e.u == middle { e.v } else { e.u };
            let last = if f.u == middle { f.v } else { f.u };
            if first == last {
                continue;
            }
            let happy = d.probability(|t| {
                [first, middle, last].iter().all(|&w| tree_on(t, w) && degree(t, w) == 2)
            });
            triples.push(TripleReport { first: i, second: j, middle, happy, good: happy >= consts.p });
        }
    }
    Ok(Classification { bundles, triples, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{enumerate_trees, mask_of, WeightedGraph};
    use approx::assert_abs_diff_eq;

    #[test]
    fn constants_follow_eta() {
        let c = AnalysisConstants::new(1e-3);
        assert_abs_diff_eq!(c.eps_eta, 0.014, epsilon = 1e-15);
        assert_abs_diff_eq!(c.eps_oneone, 0.0002 / 12.0, epsilon = 1e-18);
        assert_abs_diff_eq!(c.p, 0.005 * 4e-8, epsilon = 1e-20);
        assert_abs_diff_eq!(c.tau, 0.571 * 1.25e-4, epsilon = 1e-18);
        assert_eq!(c.eps_p, 3.9e-17);
    }

    #[test]
    fn even_sums() {
        for n in 1..10 {
            assert_abs_diff_eq!(even_probability(&bernoulli_sum_law(&vec![0.5; n])), 0.5, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(even_probability(&bernoulli_sum_law(&[0.3, 0.3])), 0.58, epsilon = 1e-12);
        let single = even_probability(&bernoulli_sum_law(&[1.0]));
        assert_eq!(single, 0.0);
        assert!(single <= 0.5 * (1.0 + (-2.0f64).exp()));
    }

    #[test]
    fn poisson_helpers() {
        assert_abs_diff_eq!(poisson_pmf(1.0, 1), (-1.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(poisson_tail(2.0, 0), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(poisson_tail(1.0, 1), 1.0 - (-1.0f64).exp(), epsilon = 1e-15);
        // A single sure trial: the ℓ = 1 term vanishes into Poi(0, 0) = 1.
        assert!(point_mass_bound(1.0, 1) <= (-1.0f64).exp() + 1e-15);
    }

    #[test]
    fn bernoulli_grid_has_no_violations() {
        let q: Vec<f64> = (1..=12).map(|i| i as f64 / 10.0).collect();
        let n: Vec<usize> = (1..=30).collect();
        let report = bernoulli_facts(&q, &n, 7);
        assert!(report.laws_checked > 1000);
        assert!(report.checks.passed(), "{:?}", report.checks.violations());
    }

    #[test]
    fn single_edge_gurvits_is_tight() {
        let d = enumerate_trees(&WeightedGraph::complete(4), 100).unwrap();
        let r = gurvits_bound_check(&d, &[mask_of(&[0])], &[1]).unwrap();
        assert_abs_diff_eq!(r.joint, 0.5, epsilon = 1e-12);
        // ε = 1/2 and the exponent 2^m = 2.
        assert_abs_diff_eq!(r.bound, 0.5 * 0.5 * 0.5, epsilon = 1e-12);
        assert!(r.check.passed);
        assert_eq!(gurvits_bound_check(&d, &[3, 1], &[1, 1]).unwrap_err(), ProbeError::Overlap);
    }

    #[test]
    fn uniform_k4_degree_and_far_edge() {
        // K4 edges: (0,1) (0,2) (0,3) (1,2) (1,3) (2,3).
        let d = enumerate_trees(&WeightedGraph::complete(4), 100).unwrap();
        assert_eq!(d.tree_count(), 16);
        let r = gurvits_bound_check(&d, &[mask_of(&[0, 1, 2]), mask_of(&[5])], &[2, 1]).unwrap();
        // Degree 2 at vertex 0 and edge (2,3): 2 of 16 trees.
        assert_abs_diff_eq!(r.joint, 2.0 / 16.0, epsilon = 1e-12);
        assert!(r.check.passed && r.bound > 0.0);
    }

    #[test]
    fn independent_sets_factor() {
        // Two disjoint triangles joined by a bridge: the sides are independent.
        let g = WeightedGraph::unit(6, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (4, 5), (3, 5)]).unwrap();
        let d = enumerate_trees(&g, 100).unwrap();
        let r = gurvits_bound_check(&d, &[mask_of(&[0, 1]), mask_of(&[4, 5])], &[1, 1]).unwrap();
        let side = d.probability(|t| (t & mask_of(&[0, 1])).count_ones() == 1);
        assert_abs_diff_eq!(r.joint, side * side, epsilon = 1e-12);
        assert!(r.check.passed);
    }

    #[test]
    fn conditioning_on_integral_path() {
        // A split integral cycle leaves a single path tree.
        let g = WeightedGraph::unit(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        let d = enumerate_trees(&g, 100).unwrap();
        let x = d.marginals.clone();
        let report = verify_tree_conditioning(&d, &x, &[vec![1, 2], vec![3]], &[mask_of(&[0])], true).unwrap();
        assert!(report.passed(), "{:?}", report.violations());
        let mut wrong = x.clone();
        wrong[0] += 0.1;
        assert!(matches!(verify_tree_conditioning(&d, &wrong, &[], &[], true), Err(ProbeError::Mismatch { .. })));
    }

    #[test]
    fn deterministic_sides_give_undistorted_event() {
        // Path 0-1-2 plus a triangle 2-3-4: edges 0 and 1 are always in.
        let g = WeightedGraph::unit(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (2, 4)]).unwrap();
        let d = enumerate_trees(&g, 100).unwrap();
        let e = construct_maxflow_event(&d, mask_of(&[0]), mask_of(&[1]), 1.0 / 4000.0, 0.0, EventMode::Strict).unwrap();
        assert!(e.checks.passed(), "{:?}", e.checks.violations());
        assert_abs_diff_eq!(e.distortion_a, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.joint_single, 1.0, epsilon = 1e-12);
        // The event is a uniform thinning of the whole space.
        let ratio: Vec<f64> = d.trees.iter().zip(&e.event.mass).map(|(t, m)| m / t.probability).collect();
        assert!(ratio.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    #[test]
    fn degenerate_event() {
        let d = enumerate_trees(&WeightedGraph::complete(3), 10).unwrap();
        let r = construct_maxflow_event(&d, mask_of(&[0, 1, 2]), 0, 0.002, 0.0, EventMode::Exploratory);
        assert_eq!(r.unwrap_err(), ProbeError::Degenerate);
    }

    #[test]
    fn rank_properties_on_k5() {
        let d = enumerate_trees(&WeightedGraph::complete(5), 1000).unwrap();
        let sets: Vec<EdgeMask> = (0..5).map(|v| d.boundary_edges(&[v])).collect();
        assert!(verify_rank_properties(&d, &sets).passed());
    }

    #[test]
    fn upper_tail_bound_examples() {
        // q = 1: only ℓ = 0 applies, giving 1 − 1/e.
        assert_abs_diff_eq!(upper_tail_bound(1.0), 1.0 - (-1.0f64).exp(), epsilon = 1e-12);
        let law = bernoulli_sum_law(&[0.5, 0.5]);
        assert!(law[1] + law[2] >= upper_tail_bound(1.0));
        let p = random_probabilities(3, 2.5, &mut ChaCha8Rng::seed_from_u64(1));
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 2.5, epsilon = 1e-12);
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
