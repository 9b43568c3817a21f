//! Small graph routines shared across modules: union-find, components,
//! bridges, Stoer-Wagner minimum cuts, and Dinic maximum flow.

use std::collections::VecDeque;
use std::ops::{Add, Sub};

/// Union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    pub fn new(n: usize) -> Self {
        DisjointSets { parent: (0..n).collect(), size: vec![1; n] }
    }

    pub fn find(&mut self, mut v: usize) -> usize {
        while self.parent[v] != v {
            self.parent[v] = self.parent[self.parent[v]];
            v = self.parent[v];
        }
        v
    }

    /// Merges the sets of `a` and `b`; returns false if they were already joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// Component label per vertex, labels numbered 0.. in order of first vertex.
pub fn components(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> (usize, Vec<usize>) {
    let mut sets = DisjointSets::new(n);
    for (u, v) in edges {
        sets.union(u, v);
    }
    let mut label = vec![usize::MAX; n];
    let mut root_label = vec![usize::MAX; n];
    let mut count = 0;
    for v in 0..n {
        let r = sets.find(v);
        if root_label[r] == usize::MAX {
            root_label[r] = count;
            count += 1;
        }
        label[v] = root_label[r];
    }
    (count, label)
}

/// Flags the edges of a multigraph whose removal disconnects their component.
pub fn bridges(n: usize, edges: &[(usize, usize)]) -> Vec<bool> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (i, &(u, v)) in edges.iter().enumerate() {
        adj[u].push((v, i));
        adj[v].push((u, i));
    }
    let mut is_bridge = vec![false; edges.len()];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0; n];
    let mut timer = 0;
    for start in 0..n {
        if disc[start] != usize::MAX {
            continue;
        }
        // Iterative DFS frames: (vertex, edge used to enter, next adjacency slot).
        let mut stack = vec![(start, usize::MAX, 0usize)];
        disc[start] = timer;
        low[start] = timer;
        timer += 1;
        while let Some(&mut (v, via, ref mut slot)) = stack.last_mut() {
            if *slot < adj[v].len() {
                let (w, e) = adj[v][*slot];
                *slot += 1;
                if e == via {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, e, 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[v]);
                    if low[v] > disc[parent] {
                        is_bridge[via] = true;
                    }
                }
            }
        }
    }
    is_bridge
}

/// A cut found by Stoer-Wagner: one side as a vertex indicator and its weight.
#[derive(Debug, Clone)]
pub struct WeightedCut {
    pub side: Vec<bool>,
    pub weight: f64,
}

/// Global minimum cut of a connected weighted graph together with every
/// cut-of-the-phase encountered. Deterministic: ties go to the lowest index.
pub fn stoer_wagner(n: usize, edges: &[(usize, usize, f64)]) -> (WeightedCut, Vec<WeightedCut>) {
    assert!(n >= 2, "minimum cut needs two vertices");
    let mut w = vec![vec![0.0; n]; n];
    for &(u, v, x) in edges {
        if u != v {
            w[u][v] += x;
            w[v][u] += x;
        }
    }
    let mut members: Vec<Vec<usize>> = (0..n).map(|v| vec![v]).collect();
    let mut active: Vec<usize> = (0..n).collect();
    let mut phases = Vec::with_capacity(n - 1);
    let mut best: Option<WeightedCut> = None;
    while active.len() > 1 {
        let mut added = vec![false; n];
        let mut key = vec![0.0; n];
        let mut order = Vec::with_capacity(active.len());
        for _ in 0..active.len() {
            let mut pick = usize::MAX;
            for &v in &active {
                if !added[v] && (pick == usize::MAX || key[v] > key[pick]) {
                    pick = v;
                }
            }
            added[pick] = true;
            order.push(pick);
            for &v in &active {
                if !added[v] {
                    key[v] += w[pick][v];
                }
            }
        }
        let t = order[order.len() - 1];
        let s = order[order.len() - 2];
        let mut side = vec![false; n];
        for &m in &members[t] {
            side[m] = true;
        }
        let cut = WeightedCut { side, weight: key[t] };
        if best.as_ref().is_none_or(|b| cut.weight < b.weight) {
            best = Some(cut.clone());
        }
        phases.push(cut);
        // Merge the last vertex into the one added just before it.
        let moved = std::mem::take(&mut members[t]);
        members[s].extend(moved);
        for v in 0..n {
            w[s][v] += w[t][v];
            w[v][s] = w[s][v];
        }
        w[s][s] = 0.0;
        active.retain(|&v| v != t);
    }
    (best.expect("at least one phase"), phases)
}

/// Capacity type for [`FlowNetwork`]; floats compare against a small
/// residual threshold, integers exactly.
pub trait FlowValue: Copy + PartialOrd + Add<Output = Self> + Sub<Output = Self> {
    const ZERO: Self;
    fn is_positive(self) -> bool;
    fn min_of(self, other: Self) -> Self {
        if other < self {
            other
        } else {
            self
        }
    }
}

impl FlowValue for f64 {
    const ZERO: f64 = 0.0;
    fn is_positive(self) -> bool {
        self > 1e-12
    }
}

impl FlowValue for i128 {
    const ZERO: i128 = 0;
    fn is_positive(self) -> bool {
        self > 0
    }
}

/// Directed flow network solved by Dinic's algorithm.
#[derive(Debug, Clone)]
pub struct FlowNetwork<C> {
    n: usize,
    head: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<C>,
    original: Vec<C>,
}

impl<C: FlowValue> FlowNetwork<C> {
    pub fn new(n: usize) -> Self {
        FlowNetwork { n, head: vec![Vec::new(); n], to: Vec::new(), cap: Vec::new(), original: Vec::new() }
    }

    /// Adds arc `u → v`; returns its id for [`FlowNetwork::flow_on`].
    pub fn add_arc(&mut self, u: usize, v: usize, capacity: C) -> usize {
        let id = self.to.len();
        self.head[u].push(id);
        self.to.push(v);
        self.cap.push(capacity);
        self.original.push(capacity);
        self.head[v].push(id + 1);
        self.to.push(u);
        self.cap.push(C::ZERO);
        self.original.push(C::ZERO);
        id
    }

    /// Flow currently routed on an arc.
    pub fn flow_on(&self, arc: usize) -> C {
        self.original[arc] - self.cap[arc]
    }

    pub fn max_flow(&mut self, s: usize, t: usize) -> C {
        let mut total = C::ZERO;
        loop {
            let level = self.levels(s);
            if level[t] == usize::MAX {
                return total;
            }
            let mut next = vec![0; self.n];
            while let Some(pushed) = self.augment(s, t, &level, &mut next) {
                total = total + pushed;
            }
        }
    }

    /// Vertices reachable from `s` in the residual graph: the smallest
    /// source side among minimum cuts.
    pub fn source_side(&self, s: usize) -> Vec<bool> {
        let level = self.levels(s);
        level.iter().map(|&l| l != usize::MAX).collect()
    }

    fn levels(&self, s: usize) -> Vec<usize> {
        let mut level = vec![usize::MAX; self.n];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &a in &self.head[u] {
                let v = self.to[a];
                if level[v] == usize::MAX && self.cap[a].is_positive() {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        level
    }

    /// One blocking-flow augmentation along a shortest path, iteratively.
    fn augment(&mut self, s: usize, t: usize, level: &[usize], next: &mut [usize]) -> Option<C> {
        let mut path: Vec<usize> = Vec::new();
        let mut u = s;
        loop {
            if u == t {
                let mut bottleneck = self.cap[path[0]];
                for &a in &path[1..] {
                    bottleneck = bottleneck.min_of(self.cap[a]);
                }
                for &a in &path {
                    self.cap[a] = self.cap[a] - bottleneck;
                    self.cap[a ^ 1] = self.cap[a ^ 1] + bottleneck;
                }
                return Some(bottleneck);
            }
            let mut advanced = false;
            while next[u] < self.head[u].len() {
                let a = self.head[u][next[u]];
                let v = self.to[a];
                if self.cap[a].is_positive() && level[v] == level[u] + 1 {
                    path.push(a);
                    u = v;
                    advanced = true;
                    break;
                }
                next[u] += 1;
            }
            if !advanced {
                if u == s {
                    return None;
                }
                // Dead end: retire the arc that led here and step back.
                let a = path.pop()?;
                u = self.to[a ^ 1];
                next[u] += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bridges_of_two_triangles_joined_by_edge() {
        let edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)];
        let b = bridges(6, &edges);
        assert_eq!(b, vec![false, false, false, true, false, false, false]);
    }

    #[test]
    fn parallel_edges_are_not_bridges() {
        let b = bridges(2, &[(0, 1), (0, 1)]);
        assert_eq!(b, vec![false, false]);
    }

    #[test]
    fn stoer_wagner_matches_brute_force() {
        let edges = [
            (0, 1, 2.0),
            (0, 4, 3.0),
            (1, 2, 3.0),
            (1, 4, 2.0),
            (1, 5, 2.0),
            (2, 3, 4.0),
            (2, 6, 2.0),
            (3, 6, 2.0),
            (3, 7, 2.0),
            (4, 5, 3.0),
            (5, 6, 1.0),
            (6, 7, 3.0),
        ];
        let (cut, _) = stoer_wagner(8, &edges);
        let mut best = f64::INFINITY;
        for mask in 1u32..(1 << 7) {
            let w: f64 = edges
                .iter()
                .filter(|&&(u, v, _)| ((mask >> u) & 1) != ((mask >> v) & 1))
                .map(|e| e.2)
                .sum();
            best = best.min(w);
        }
        assert_eq!(cut.weight, best);
        assert_eq!(best, 4.0);
        let recomputed: f64 = edges.iter().filter(|&&(u, v, _)| cut.side[u] != cut.side[v]).map(|e| e.2).sum();
        assert_eq!(recomputed, cut.weight);
    }

    #[test]
    fn components_labels() {
        let (count, label) = components(5, [(0, 1), (3, 4)]);
        assert_eq!(count, 3);
        assert_eq!(label, vec![0, 0, 1, 2, 2]);
    }

    #[test]
    fn dinic_small_networks() {
        let mut net = FlowNetwork::<i128>::new(4);
        net.add_arc(0, 1, 3);
        net.add_arc(0, 2, 2);
        net.add_arc(1, 2, 1);
        net.add_arc(1, 3, 2);
        net.add_arc(2, 3, 3);
        assert_eq!(net.max_flow(0, 3), 5);
        let mut f = FlowNetwork::<f64>::new(3);
        let a = f.add_arc(0, 1, 0.5);
        f.add_arc(1, 2, 0.25);
        assert_eq!(f.max_flow(0, 2), 0.25);
        assert_eq!(f.flow_on(a), 0.25);
        assert_eq!(f.source_side(0), vec![true, true, false]);
    }
}
