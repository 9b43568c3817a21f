//! Exact sampling of λ-weighted spanning trees with Wilson's algorithm, plus
//! goodness-of-fit checks against the enumeration oracle.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::fit::FitResult;
use crate::graph::{components, DisjointSets};
use crate::lp::LpSolution;
use crate::trees::{enumerate_trees, mask_of, tree_statistics, EdgeMask, TreeError, WeightedGraph};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SampleError {
    #[error("support graph is disconnected")]
    Disconnected,
    #[error("forced edges contain a cycle")]
    ForcedCycle,
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error("fit has {fit} edges but the solution has {solution} tree edges")]
    Mismatch { fit: usize, solution: usize },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Per-sample generator: one ChaCha stream per sample index, so batches give
/// the same trees however they are split across threads.
pub fn sample_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Wilson sampler prepared for one weighted multigraph. Infinite weights are
/// contracted first and appear in every tree; zero weights never do.
#[derive(Debug, Clone)]
pub struct TreeSampler {
    /// Forced edges, always included.
    forced: Vec<usize>,
    /// Per super-vertex: neighbours with edge id and cumulative weight.
    adjacency: Vec<Vec<(usize, usize, f64)>>,
}

impl TreeSampler {
    pub fn new(g: &WeightedGraph) -> Result<Self, SampleError> {
        let mut sets = DisjointSets::new(g.n);
        let mut forced = Vec::new();
        for (i, &(u, v, w)) in g.edges.iter().enumerate() {
            if w.is_infinite() {
                if !sets.union(u, v) {
                    return Err(SampleError::ForcedCycle);
                }
                forced.push(i);
            }
        }
        let (k, label) = components(g.n, (0..g.n).map(|v| (v, sets.find(v))));
        let mut adjacency = vec![Vec::new(); k];
        let mut live = Vec::new();
        for (i, &(u, v, w)) in g.edges.iter().enumerate() {
            let (a, b) = (label[u], label[v]);
            if w.is_finite() && w > 0.0 && a != b {
                adjacency[a].push((b, i, w));
                adjacency[b].push((a, i, w));
                live.push((a, b));
            }
        }
        if components(k, live).0 != 1 {
            return Err(SampleError::Disconnected);
        }
        for list in &mut adjacency {
            let mut total = 0.0;
            for entry in list.iter_mut() {
                total += entry.2;
                entry.2 = total;
            }
        }
        Ok(TreeSampler { forced, adjacency })
    }

    /// One tree as sorted edge indices.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let k = self.adjacency.len();
        let mut tree = self.forced.clone();
        let mut in_tree = vec![false; k];
        let mut next: Vec<(usize, usize)> = vec![(usize::MAX, usize::MAX); k];
        in_tree[k - 1] = true;
        for start in 0..k {
            let mut u = start;
            while !in_tree[u] {
                next[u] = self.step(u, rng);
                u = next[u].0;
            }
            // Following `next` from the start retraces the loop-erased path.
            let mut u = start;
            while !in_tree[u] {
                in_tree[u] = true;
                tree.push(next[u].1);
                u = next[u].0;
            }
        }
        tree.sort_unstable();
        tree
    }

    fn step<R: Rng + ?Sized>(&self, u: usize, rng: &mut R) -> (usize, usize) {
        let list = &self.adjacency[u];
        let total = list.last().map_or(0.0, |e| e.2);
        let r = rng.random::<f64>() * total;
        let j = list.partition_point(|e| e.2 <= r).min(list.len() - 1);
        (list[j].0, list[j].1)
    }
}

/// Draws one tree with probability proportional to the product of its weights.
pub fn sample_tree<R: Rng + ?Sized>(g: &WeightedGraph, rng: &mut R) -> Result<Vec<usize>, SampleError> {
    Ok(TreeSampler::new(g)?.sample(rng))
}

/// Cross-check sampler: decides edges one at a time from exact conditional
/// marginals. Needs one factorization per edge, so only for small graphs.
pub fn sample_tree_conditional<R: Rng + ?Sized>(g: &WeightedGraph, rng: &mut R) -> Result<Vec<usize>, SampleError> {
    let mut current = g.clone();
    for i in 0..current.edges.len() {
        let w = current.edges[i].2;
        if w == 0.0 || w.is_infinite() {
            continue;
        }
        let p = tree_statistics(&current, false)?.marginals[i];
        current.edges[i].2 = if rng.random::<f64>() < p { f64::INFINITY } else { 0.0 };
    }
    Ok((0..current.edges.len()).filter(|&i| current.edges[i].2.is_infinite()).collect())
}

/// Sampler for a fitted law: one Wilson sampler per piece, trees joined.
#[derive(Debug, Clone)]
pub struct FittedSampler {
    pieces: Vec<(TreeSampler, Vec<usize>)>,
    edge_count: usize,
}

impl FittedSampler {
    pub fn new(fit: &FitResult) -> Result<Self, SampleError> {
        let pieces = fit
            .piece_graphs()
            .into_iter()
            .map(|(g, index)| Ok((TreeSampler::new(&g)?, index)))
            .collect::<Result<_, SampleError>>()?;
        Ok(FittedSampler { pieces, edge_count: fit.edges.len() })
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        let mut tree: Vec<usize> = self
            .pieces
            .iter()
            .flat_map(|(sampler, index)| sampler.sample(rng).into_iter().map(|e| index[e]).collect::<Vec<_>>())
            .collect();
        tree.sort_unstable();
        tree
    }
}

/// Draws `count` trees in parallel; tree `i` uses `sample_rng(seed, i)`.
pub fn sample_many<F>(count: usize, seed: u64, threads: usize, draw: F) -> Result<Vec<Vec<usize>>, SampleError>
where
    F: Fn(&mut ChaCha8Rng) -> Vec<usize> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SampleError::ThreadPool(e.to_string()))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(|i| draw(&mut sample_rng(seed, i as u64))).collect()))
}

/// A batch of sampled trees with summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub seed: u64,
    pub trees: Vec<Vec<usize>>,
    /// Fraction of trees containing each edge.
    pub frequencies: Vec<f64>,
    /// Mean of the per-tree cost, when costs were supplied.
    pub mean_cost: Option<f64>,
    pub cost_std_err: Option<f64>,
}

impl SampleBatch {
    pub fn new(seed: u64, edge_count: usize, trees: Vec<Vec<usize>>, costs: Option<&[f64]>) -> Self {
        let mut counts = vec![0usize; edge_count];
        for t in &trees {
            for &e in t {
                counts[e] += 1;
            }
        }
        let k = trees.len().max(1) as f64;
        let frequencies = counts.iter().map(|&c| c as f64 / k).collect();
        let (mean_cost, cost_std_err) = match costs {
            Some(c) => {
                let values: Vec<f64> = trees.iter().map(|t| t.iter().map(|&e| c[e]).sum()).collect();
                let (mean, se) = mean_and_std_err(&values);
                (Some(mean), Some(se))
            }
            None => (None, None),
        };
        SampleBatch { seed, trees, frequencies, mean_cost, cost_std_err }
    }

    /// Largest gap between empirical frequencies and the given marginals.
    pub fn max_frequency_gap(&self, marginals: &[f64]) -> f64 {
        self.frequencies.iter().zip(marginals).map(|(f, p)| (f - p).abs()).fold(0.0, f64::max)
    }
}

fn mean_and_std_err(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / k;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Pearson goodness of fit of sampled trees against the exact law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquareReport {
    pub samples: usize,
    pub trees: usize,
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Goodness of fit of Wilson samples on `g`.
pub fn chi_square_check(g: &WeightedGraph, samples: usize, seed: u64) -> Result<ChiSquareReport, SampleError> {
    let sampler = TreeSampler::new(g)?;
    chi_square_with(g, samples, seed, |rng| sampler.sample(rng))
}

/// Goodness of fit of an arbitrary sampler on `g`; used for negative controls.
pub fn chi_square_with<F>(g: &WeightedGraph, samples: usize, seed: u64, draw: F) -> Result<ChiSquareReport, SampleError>
where
    F: Fn(&mut ChaCha8Rng) -> Vec<usize> + Sync,
{
    let exact = enumerate_trees(g, crate::trees::DEFAULT_TREE_LIMIT)?;
    let index: HashMap<EdgeMask, usize> = exact.trees.iter().enumerate().map(|(i, t)| (t.edges, i)).collect();
    let mut observed = vec![0usize; exact.trees.len()];
    let mut stray = 0usize;
    for tree in sample_many(samples, seed, rayon::current_num_threads(), draw)? {
        match index.get(&mask_of(&tree)) {
            Some(&i) => observed[i] += 1,
            None => stray += 1,
        }
    }
    let k = samples as f64;
    let mut statistic: f64 =
        exact.trees.iter().zip(&observed).map(|(t, &o)| (o as f64 - k * t.probability).powi(2) / (k * t.probability)).sum();
    if stray > 0 {
        statistic = f64::INFINITY;
    }
    let dof = exact.trees.len().saturating_sub(1);
    let p_value = if dof == 0 {
        if stray == 0 { 1.0 } else { 0.0 }
    } else if statistic.is_infinite() {
        0.0
    } else {
        let dist = ChiSquared::new(dof as f64).expect("positive degrees of freedom");
        dist.sf(statistic)
    };
    Ok(ChiSquareReport { samples, trees: exact.trees.len(), statistic, dof, p_value })
}

/// A sampler that returns one fixed tree a tenth of the time; the chi-square
/// check must reject it.
pub fn biased_sampler(sampler: &TreeSampler) -> impl Fn(&mut ChaCha8Rng) -> Vec<usize> + Sync + '_ {
    move |rng| {
        if rng.random::<f64>() < 0.1 {
            sampler.sample(&mut sample_rng(0, 0))
        } else {
            sampler.sample(rng)
        }
    }
}

/// Comparison of the sampled mean of `c(T ∪ e0)` with the LP cost `c(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostCheck {
    pub samples: usize,
    pub mean_cost: f64,
    pub std_err: f64,
    pub lp_cost: f64,
    /// `eps · c(x)`: the bias allowed by the fit tolerance.
    pub bias_bound: f64,
    pub deviation: f64,
    pub passed: bool,
}

/// Samples trees from a fit of `sol` and compares the mean cost of
/// `T ∪ e0` with `c(x)`.
pub fn expected_cost_check(
    sol: &LpSolution,
    fit: &FitResult,
    eps: f64,
    samples: usize,
    seed: u64,
    threads: usize,
) -> Result<CostCheck, SampleError> {
    let tree_costs: Vec<f64> = sol.tree_edges().map(|(_, e)| e.cost).collect();
    if tree_costs.len() != fit.edges.len() {
        return Err(SampleError::Mismatch { fit: fit.edges.len(), solution: tree_costs.len() });
    }
    let root_cost = sol.root_edge.map_or(0.0, |r| sol.edges[r].cost);
    let sampler = FittedSampler::new(fit)?;
    let trees = sample_many(samples, seed, threads, |rng| sampler.sample(rng))?;
    let values: Vec<f64> = trees.iter().map(|t| root_cost + t.iter().map(|&e| tree_costs[e]).sum::<f64>()).collect();
    let (mean_cost, std_err) = mean_and_std_err(&values);
    let lp_cost = sol.objective;
    let bias_bound = eps * lp_cost;
    let deviation = (mean_cost - lp_cost).abs();
    // Round-off allowance for sums that are exact in theory.
    let passed = deviation <= bias_bound + 3.0 * std_err + 1e-9 * lp_cost.abs().max(1.0);
    Ok(CostCheck { samples, mean_cost, std_err, lp_cost, bias_bound, deviation, passed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::{fit_marginals, FitMethod};
    use crate::trees::marginals;

    #[test]
    fn tree_input_returns_itself() {
        let g = WeightedGraph::unit(4, &[(0, 1), (1, 2), (1, 3)]).unwrap();
        let mut rng = sample_rng(1, 0);
        for _ in 0..20 {
            assert_eq!(sample_tree(&g, &mut rng).unwrap(), vec![0, 1, 2]);
        }
    }

    #[test]
    fn disconnected_rejected() {
        let g = WeightedGraph::unit(4, &[(0, 1), (2, 3)]).unwrap();
        assert_eq!(TreeSampler::new(&g).unwrap_err(), SampleError::Disconnected);
    }

    #[test]
    fn weighted_triangle_frequencies() {
        // Trees {01,12}: 1, {01,02}: 2, {12,02}: 2 out of 5.
        let g = WeightedGraph::new(3, vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 2.0)]).unwrap();
        let sampler = TreeSampler::new(&g).unwrap();
        let k = 100_000;
        let trees = sample_many(k, 7, 2, |rng| sampler.sample(rng)).unwrap();
        let missing_02 = trees.iter().filter(|t| !t.contains(&2)).count() as f64 / k as f64;
        let sigma = (0.2f64 * 0.8 / k as f64).sqrt();
        assert!((missing_02 - 0.2).abs() < 3.0 * sigma);
    }

    #[test]
    fn forced_edges_always_present() {
        let g = WeightedGraph::new(4, vec![(0, 1, f64::INFINITY), (1, 2, 1.0), (2, 3, 1.0), (3, 1, 1.0), (0, 2, 1.0)])
            .unwrap();
        let mut rng = sample_rng(3, 0);
        for _ in 0..100 {
            let t = sample_tree(&g, &mut rng).unwrap();
            assert!(t.contains(&0));
            assert_eq!(t.len(), 3);
        }
    }

    #[test]
    fn parallel_batches_are_deterministic() {
        let g = WeightedGraph::complete(6);
        let sampler = TreeSampler::new(&g).unwrap();
        let a = sample_many(500, 11, 1, |rng| sampler.sample(rng)).unwrap();
        let b = sample_many(500, 11, 4, |rng| sampler.sample(rng)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn chi_square_accepts_wilson_and_rejects_bias() {
        let c4 = WeightedGraph::cycle(4);
        assert!(chi_square_check(&c4, 10_000, 1).unwrap().p_value > 0.01);
        let k4 = WeightedGraph::complete(4);
        let report = chi_square_check(&k4, 100_000, 2).unwrap();
        assert_eq!(report.trees, 16);
        assert!(report.p_value > 0.01);
        let sampler = TreeSampler::new(&k4).unwrap();
        let biased = chi_square_with(&k4, 100_000, 2, biased_sampler(&sampler)).unwrap();
        assert!(biased.p_value < 1e-6);
    }

    #[test]
    fn conditional_sampler_matches_law() {
        let g = WeightedGraph::new(4, vec![(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (3, 0, 1.0), (0, 2, 3.0)]).unwrap();
        let report = chi_square_with(&g, 20_000, 5, |rng| sample_tree_conditional(&g, rng).unwrap()).unwrap();
        assert!(report.p_value > 0.01, "{report:?}");
    }

    #[test]
    fn frequencies_track_marginals() {
        let g = WeightedGraph::new(5, vec![(0, 1, 0.5), (1, 2, 2.0), (2, 3, 1.5), (3, 4, 0.7), (4, 0, 1.1), (0, 2, 3.0)])
            .unwrap();
        let sampler = TreeSampler::new(&g).unwrap();
        let k = 20_000;
        let batch = SampleBatch::new(9, g.edges.len(), sample_many(k, 9, 2, |rng| sampler.sample(rng)).unwrap(), None);
        assert!((batch.frequencies.iter().sum::<f64>() - 4.0).abs() < 1e-9);
        let bound = 5.0 * ((g.edges.len() as f64).ln() / k as f64).sqrt();
        assert!(batch.max_frequency_gap(&marginals(&g).unwrap()) <= bound);
    }

    #[test]
    fn fitted_pieces_sample_jointly() {
        let t = 2.0 / 3.0;
        let edges = [(0, 1, t), (1, 2, t), (0, 2, t), (2, 3, 0.5), (0, 3, 0.5)];
        let fit = fit_marginals(4, &edges, 1e-8, FitMethod::Newton).unwrap();
        let sampler = FittedSampler::new(&fit).unwrap();
        let k = 30_000;
        let batch = SampleBatch::new(4, 5, sample_many(k, 4, 2, |rng| sampler.sample(rng)).unwrap(), None);
        assert!(batch.trees.iter().all(|t| t.len() == 3));
        assert!(batch.max_frequency_gap(&fit.targets) < 5.0 * (5f64.ln() / k as f64).sqrt());
    }
}
