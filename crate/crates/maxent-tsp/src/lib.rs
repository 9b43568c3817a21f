//! Maximum-entropy spanning-tree toolkit for metric TSP: the Held-Karp LP,
//! λ-uniform tree distributions, O-join tour construction, near-minimum cut
//! structure, and numerical probes of the supporting inequalities.

pub mod graph;
pub mod instance;
pub mod lp;
pub mod trees;
pub mod cuts;
pub mod fit;
pub mod fixtures;
pub mod matching;
pub mod pipeline;
pub mod probe;
pub mod sampler;
