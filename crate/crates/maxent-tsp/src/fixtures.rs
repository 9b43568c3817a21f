//! Small split LP solutions whose tree laws can be enumerated exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::{fit_lambda, FitError, FitResult};
use crate::instance::{exact_opt, random_euclidean, InstanceError};
use crate::lp::{split_root, solve_held_karp, LpEdge, LpError, LpSolution};
use crate::trees::{ExactTreeDistribution, TreeError, DEFAULT_TREE_LIMIT};

/// Marginal accuracy used when fitting fixtures for exact probes.
pub const FIXTURE_FIT_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Fit(#[from] FitError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// A split solution with root pair `(0, n − 1)` and a reference tour of the
/// original vertices, where vertex 0 stands for the split pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    pub solution: LpSolution,
    pub tour: Vec<usize>,
    /// The tour is optimal for the instance costs.
    pub tour_is_optimal: bool,
}

impl Fixture {
    /// Fits the maximum-entropy law and lists its trees.
    pub fn distribution(&self) -> Result<(FitResult, ExactTreeDistribution), FixtureError> {
        let fit = fit_lambda(&self.solution, FIXTURE_FIT_EPS)?;
        let d = fit.exact_distribution(DEFAULT_TREE_LIMIT)?;
        Ok((fit, d))
    }

    /// LP values of the non-root edges, aligned with the tree law's edges.
    pub fn tree_values(&self) -> Vec<f64> {
        self.solution.tree_edges().map(|(_, e)| e.x).collect()
    }
}

fn split_fixture(name: &str, n: usize, edges: &[(usize, usize, f64)], tour: Vec<usize>) -> Fixture {
    let root = n - 1;
    let mut list: Vec<LpEdge> = edges.iter().map(|&(u, v, x)| LpEdge { u, v, x, cost: 1.0 }).collect();
    list.push(LpEdge { u: 0, v: root, x: 1.0, cost: 0.0 });
    let index = list.len() - 1;
    let solution = LpSolution::from_parts(n, list, Some(index)).expect("fixture edges are valid");
    Fixture { name: name.to_string(), solution, tour, tour_is_optimal: false }
}

/// Two unit pairs `{a, b}`, `{c, d}` joined by two half edges, each vertex
/// sending a half edge to the root pair. With the tour `a b d c` the cut
/// hierarchy consists of three triangles.
pub fn three_triangles() -> Fixture {
    let (a, b, c, d) = (1, 2, 3, 4);
    let edges = [
        (a, b, 1.0),
        (c, d, 1.0),
        (a, c, 0.5),
        (b, d, 0.5),
        (0, a, 0.5),
        (0, b, 0.5),
        (c, 5, 0.5),
        (d, 5, 0.5),
    ];
    split_fixture("three-triangles", 6, &edges, vec![0, a, b, d, c])
}

/// A degree cut whose half edges `(a, b)` and `(c, d)` are perfectly
/// anticorrelated, which makes `(a, b)` a bad bundle.
pub fn bad_edge() -> Fixture {
    let (a, b, c, d) = (1, 2, 3, 4);
    let edges = [
        (0, a, 0.5),
        (0, b, 0.5),
        (a, b, 0.5),
        (a, c, 1.0),
        (c, 5, 0.5),
        (c, d, 0.5),
        (d, 5, 0.5),
        (b, d, 1.0),
    ];
    split_fixture("bad-edge", 6, &edges, vec![0, a, b, c, d])
}

/// The split integral cycle on `n` original vertices.
pub fn integral_cycle(n: usize) -> Fixture {
    let split = n;
    let mut edges: Vec<(usize, usize, f64)> = (1..n - 1).map(|v| (v, v + 1, 1.0)).collect();
    edges.insert(0, (0, 1, 1.0));
    edges.push((n - 1, split, 1.0));
    let mut f = split_fixture(&format!("integral-cycle-{n}"), n + 1, &edges, (0..n).collect());
    f.tour_is_optimal = true;
    f
}

/// Held-Karp optimum of a random Euclidean instance, split at vertex 0,
/// with its exact optimal tour.
pub fn random_fixture(n: usize, seed: u64) -> Result<Fixture, FixtureError> {
    let inst = random_euclidean(n, seed)?;
    let solution = split_root(&solve_held_karp(&inst, 1e-9)?);
    let tour = exact_opt(&inst)?.order;
    Ok(Fixture { name: format!("random-{n}-{seed}"), solution, tour, tour_is_optimal: true })
}

/// Random instances whose Held-Karp optimum is fractional away from the
/// root and whose tree laws stay small.
pub const FRACTIONAL_SEEDS: &[(usize, u64)] =
    &[(9, 59), (11, 76), (11, 121), (11, 139), (12, 17), (12, 50), (12, 60), (12, 67), (12, 76)];

/// Hand-built fixtures, two integral random ones, and the fractional ones.
pub fn default_library() -> Vec<Fixture> {
    let mut library = vec![three_triangles(), bad_edge(), integral_cycle(5), integral_cycle(8)];
    for &(n, seed) in [(7, 0), (8, 1)].iter().chain(FRACTIONAL_SEEDS) {
        if let Ok(f) = random_fixture(n, seed) {
            library.push(f);
        }
    }
    library
}
