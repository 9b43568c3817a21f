//! Metric TSP instances: TSPLIB loading, random generation, and a bitmask
//! dynamic-programming optimum for tiny inputs.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest vertex count accepted by [`exact_opt`].
pub const EXACT_OPT_LIMIT: usize = 16;

/// Triangle-inequality excess that is silently repaired by metric completion.
const METRIC_REPAIR_TOL: f64 = 1e-9;

/// How EXPLICIT inputs that violate the triangle inequality are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum MetricPolicy {
    /// Repair violations up to 1e-9, reject anything larger.
    #[default]
    Strict,
    /// Replace every cost by its shortest-path distance, whatever the excess.
    Complete,
}

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unsupported {field}: {value}")]
    Unsupported { field: String, value: String },
    #[error("missing {0}")]
    Missing(&'static str),
    #[error("instance needs at least 3 vertices, got {0}")]
    TooSmall(usize),
    #[error("exact optimum is limited to {limit} vertices, got {n}")]
    TooLarge { n: usize, limit: usize },
    #[error("cost matrix has {got} entries, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error("cost({u},{v}) = {value} is not a finite nonnegative number")]
    InvalidCost { u: usize, v: usize, value: f64 },
    #[error("cost matrix is not symmetric at ({u},{v})")]
    Asymmetric { u: usize, v: usize },
    #[error("diagonal entry cost({0},{0}) is nonzero")]
    NonzeroDiagonal(usize),
    #[error("triangle inequality violated by {excess} on {u} -> {via} -> {v}")]
    NotMetric { u: usize, via: usize, v: usize, excess: f64 },
    #[error("tour is not a permutation of 0..{0}")]
    InvalidTour(usize),
}

/// Symmetric nonnegative cost matrix satisfying the triangle inequality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricInstance {
    name: String,
    n: usize,
    cost: Vec<f64>,
    optimum_hint: Option<f64>,
}

impl MetricInstance {
    /// Builds an instance from a row-major matrix. With `check_metric`, triangle
    /// violations up to 1e-9 are repaired by shortest-path completion and larger
    /// ones are rejected.
    pub fn from_matrix(
        name: impl Into<String>,
        n: usize,
        cost: Vec<f64>,
        check_metric: bool,
    ) -> Result<Self, InstanceError> {
        if n < 3 {
            return Err(InstanceError::TooSmall(n));
        }
        if cost.len() != n * n {
            return Err(InstanceError::Shape { got: cost.len(), expected: n * n });
        }
        for u in 0..n {
            if cost[u * n + u] != 0.0 {
                return Err(InstanceError::NonzeroDiagonal(u));
            }
            for v in 0..n {
                let value = cost[u * n + v];
                if !value.is_finite() || value < 0.0 {
                    return Err(InstanceError::InvalidCost { u, v, value });
                }
                if value != cost[v * n + u] {
                    return Err(InstanceError::Asymmetric { u, v });
                }
            }
        }
        let name = name.into();
        let optimum_hint = known_optimum(&name);
        let mut inst = MetricInstance { name, n, cost, optimum_hint };
        if check_metric {
            inst.enforce_metric()?;
        }
        Ok(inst)
    }

    /// Replaces the costs by their metric completion (all-pairs shortest
    /// paths). Returns the largest reduction applied.
    pub fn complete_metric(&mut self) -> f64 {
        let n = self.n;
        let before = self.cost.clone();
        shortest_paths(n, &mut self.cost);
        before.iter().zip(&self.cost).map(|(a, b)| a - b).fold(0.0, f64::max)
    }

    fn enforce_metric(&mut self) -> Result<(), InstanceError> {
        let n = self.n;
        let (mut worst, mut witness) = (0.0_f64, (0, 0, 0));
        for via in 0..n {
            for u in 0..n {
                for v in 0..n {
                    let excess = self.cost(u, v) - (self.cost(u, via) + self.cost(via, v));
                    if excess > worst {
                        worst = excess;
                        witness = (u, via, v);
                    }
                }
            }
        }
        if worst > METRIC_REPAIR_TOL {
            let (u, via, v) = witness;
            return Err(InstanceError::NotMetric { u, via, v, excess: worst });
        }
        if worst > 0.0 {
            log::warn!("{}: repairing triangle violations up to {worst:e}", self.name);
            shortest_paths(n, &mut self.cost);
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn cost(&self, u: usize, v: usize) -> f64 {
        self.cost[u * self.n + v]
    }

    /// Known optimal tour cost, when the instance is a registered benchmark.
    pub fn optimum_hint(&self) -> Option<f64> {
        self.optimum_hint
    }

    pub fn with_optimum_hint(mut self, hint: Option<f64>) -> Self {
        self.optimum_hint = hint;
        self
    }

    /// Cost of the closed walk visiting `order` and returning to its start.
    pub fn cycle_cost(&self, order: &[usize]) -> f64 {
        let k = order.len();
        (0..k).map(|i| self.cost(order[i], order[(i + 1) % k])).sum()
    }

    /// Serializes as an EXPLICIT FULL_MATRIX TSPLIB file. Costs are written in
    /// shortest round-trip form, so reloading reproduces the matrix exactly.
    pub fn to_tsplib(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "NAME: {}", self.name);
        let _ = writeln!(out, "TYPE: TSP");
        let _ = writeln!(out, "DIMENSION: {}", self.n);
        let _ = writeln!(out, "EDGE_WEIGHT_TYPE: EXPLICIT");
        let _ = writeln!(out, "EDGE_WEIGHT_FORMAT: FULL_MATRIX");
        let _ = writeln!(out, "EDGE_WEIGHT_SECTION");
        for u in 0..self.n {
            let row: Vec<String> = (0..self.n).map(|v| format!("{}", self.cost(u, v))).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out.push_str("EOF\n");
        out
    }
}

/// Hamiltonian cycle with its cost, including the closing edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tour {
    pub order: Vec<usize>,
    pub cost: f64,
}

impl Tour {
    pub fn new(inst: &MetricInstance, order: Vec<usize>) -> Result<Self, InstanceError> {
        let n = inst.n();
        let mut seen = vec![false; n];
        if order.len() != n {
            return Err(InstanceError::InvalidTour(n));
        }
        for &v in &order {
            if v >= n || std::mem::replace(&mut seen[v], true) {
                return Err(InstanceError::InvalidTour(n));
            }
        }
        let cost = inst.cycle_cost(&order);
        Ok(Tour { order, cost })
    }

    /// TSPLIB `TOUR_SECTION` text with 1-based vertex ids.
    pub fn to_tsplib(&self, name: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "NAME: {name}");
        let _ = writeln!(out, "TYPE: TOUR");
        let _ = writeln!(out, "COMMENT: length {}", self.cost);
        let _ = writeln!(out, "DIMENSION: {}", self.order.len());
        let _ = writeln!(out, "TOUR_SECTION");
        for v in &self.order {
            let _ = writeln!(out, "{}", v + 1);
        }
        out.push_str("-1\nEOF\n");
        out
    }
}

/// Optimal tour lengths documented for the bundled TSPLIB instances.
pub fn known_optimum(name: &str) -> Option<f64> {
    let stem = name.trim().trim_end_matches(".tsp");
    BUNDLED.iter().find(|b| b.name == stem).map(|b| b.optimum)
}

struct Bundled {
    name: &'static str,
    /// Optimum of the instance as loaded, i.e. after metric completion where that applies.
    optimum: f64,
    policy: MetricPolicy,
    text: &'static str,
}

const BUNDLED: &[Bundled] = &[
    Bundled { name: "burma14", optimum: 3323.0, policy: MetricPolicy::Strict, text: include_str!("../data/tsplib/burma14.tsp") },
    Bundled { name: "ulysses16", optimum: 6859.0, policy: MetricPolicy::Strict, text: include_str!("../data/tsplib/ulysses16.tsp") },
    Bundled { name: "gr17", optimum: 2085.0, policy: MetricPolicy::Complete, text: include_str!("../data/tsplib/gr17.tsp") },
    Bundled { name: "ulysses22", optimum: 7013.0, policy: MetricPolicy::Strict, text: include_str!("../data/tsplib/ulysses22.tsp") },
    Bundled { name: "berlin52", optimum: 7542.0, policy: MetricPolicy::Strict, text: include_str!("../data/tsplib/berlin52.tsp") },
];

/// Names of the TSPLIB instances shipped with the crate.
pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|b| b.name)
}

/// Raw TSPLIB text of a bundled instance.
pub fn bundled_text(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|b| b.name == name).map(|b| b.text)
}

/// Loads a bundled instance by name.
pub fn load_bundled(name: &str) -> Option<Result<MetricInstance, InstanceError>> {
    BUNDLED.iter().find(|b| b.name == name).map(|b| load_tsplib_with(b.text, b.policy))
}

#[derive(Clone, Copy, PartialEq)]
enum WeightType {
    Euc2d,
    Geo,
    Explicit,
}

#[derive(Clone, Copy, PartialEq)]
enum WeightFormat {
    Function,
    FullMatrix,
    LowerDiagRow,
}

/// Parses the supported TSPLIB subset: EUC_2D, GEO, and EXPLICIT weights in
/// FULL_MATRIX or LOWER_DIAG_ROW layout.
pub fn load_tsplib(text: &str) -> Result<MetricInstance, InstanceError> {
    load_tsplib_with(text, MetricPolicy::Strict)
}

/// [`load_tsplib`] with an explicit policy for non-metric EXPLICIT weights.
pub fn load_tsplib_with(text: &str, policy: MetricPolicy) -> Result<MetricInstance, InstanceError> {
    let lines: Vec<&str> = text.lines().collect();
    let mut name = String::from("unnamed");
    let mut dimension: Option<usize> = None;
    let mut weight_type: Option<WeightType> = None;
    let mut format = WeightFormat::Function;
    let mut coords: Option<Vec<(f64, f64)>> = None;
    let mut weights: Option<Vec<f64>> = None;
    let mut i = 0;
    while i < lines.len() {
        let line_no = i + 1;
        let line = lines[i].trim();
        i += 1;
        if line.is_empty() {
            continue;
        }
        let (key, value) = match line.split_once(':') {
            Some((k, v)) => (k.trim(), v.trim()),
            None => (line, ""),
        };
        match key {
            "EOF" => break,
            "NAME" => name = value.to_string(),
            "COMMENT" | "DISPLAY_DATA_TYPE" | "NODE_COORD_TYPE" => {}
            "TYPE" => {
                if value != "TSP" {
                    return Err(unsupported("TYPE", value));
                }
            }
            "DIMENSION" => {
                dimension = Some(value.parse().map_err(|_| malformed(line_no, "DIMENSION is not an integer"))?)
            }
            "EDGE_WEIGHT_TYPE" => {
                weight_type = Some(match value {
                    "EUC_2D" => WeightType::Euc2d,
                    "GEO" => WeightType::Geo,
                    "EXPLICIT" => WeightType::Explicit,
                    other => return Err(unsupported("EDGE_WEIGHT_TYPE", other)),
                })
            }
            "EDGE_WEIGHT_FORMAT" => {
                format = match value {
                    "FUNCTION" => WeightFormat::Function,
                    "FULL_MATRIX" => WeightFormat::FullMatrix,
                    "LOWER_DIAG_ROW" => WeightFormat::LowerDiagRow,
                    other => return Err(unsupported("EDGE_WEIGHT_FORMAT", other)),
                }
            }
            "NODE_COORD_SECTION" => {
                let n = dimension.ok_or(InstanceError::Missing("DIMENSION before NODE_COORD_SECTION"))?;
                coords = Some(parse_coords(&lines, &mut i, n)?);
            }
            "DISPLAY_DATA_SECTION" => {
                let n = dimension.ok_or(InstanceError::Missing("DIMENSION before DISPLAY_DATA_SECTION"))?;
                parse_coords(&lines, &mut i, n)?;
            }
            "EDGE_WEIGHT_SECTION" => {
                let n = dimension.ok_or(InstanceError::Missing("DIMENSION before EDGE_WEIGHT_SECTION"))?;
                let count = match format {
                    WeightFormat::FullMatrix => n * n,
                    WeightFormat::LowerDiagRow => n * (n + 1) / 2,
                    WeightFormat::Function => {
                        return Err(malformed(line_no, "EDGE_WEIGHT_SECTION requires EDGE_WEIGHT_FORMAT"))
                    }
                };
                weights = Some(parse_numbers(&lines, &mut i, count)?);
            }
            other => return Err(unsupported("keyword", other)),
        }
    }
    let n = dimension.ok_or(InstanceError::Missing("DIMENSION"))?;
    let weight_type = weight_type.ok_or(InstanceError::Missing("EDGE_WEIGHT_TYPE"))?;
    let mut cost = vec![0.0; n * n];
    match weight_type {
        WeightType::Euc2d | WeightType::Geo => {
            let pts = coords.ok_or(InstanceError::Missing("NODE_COORD_SECTION"))?;
            for u in 0..n {
                for v in 0..n {
                    if u != v {
                        cost[u * n + v] = if weight_type == WeightType::Euc2d {
                            euc_2d(pts[u], pts[v])
                        } else {
                            geo(pts[u], pts[v])
                        };
                    }
                }
            }
        }
        WeightType::Explicit => {
            let w = weights.ok_or(InstanceError::Missing("EDGE_WEIGHT_SECTION"))?;
            match format {
                WeightFormat::FullMatrix => cost = w,
                WeightFormat::LowerDiagRow => {
                    let mut k = 0;
                    for u in 0..n {
                        for v in 0..=u {
                            cost[u * n + v] = w[k];
                            cost[v * n + u] = w[k];
                            k += 1;
                        }
                    }
                }
                WeightFormat::Function => return Err(InstanceError::Missing("EDGE_WEIGHT_FORMAT")),
            }
        }
    }
    let explicit = weight_type == WeightType::Explicit;
    if explicit && policy == MetricPolicy::Complete {
        let mut inst = MetricInstance::from_matrix(name, n, cost, false)?;
        let reduced = inst.complete_metric();
        if reduced > 0.0 {
            log::warn!("{}: metric completion lowered costs by up to {reduced}", inst.name);
        }
        return Ok(inst);
    }
    MetricInstance::from_matrix(name, n, cost, explicit)
}

fn shortest_paths(n: usize, d: &mut [f64]) {
    for via in 0..n {
        for u in 0..n {
            for v in 0..n {
                let through = d[u * n + via] + d[via * n + v];
                if through < d[u * n + v] {
                    d[u * n + v] = through;
                }
            }
        }
    }
}

fn unsupported(field: &str, value: &str) -> InstanceError {
    InstanceError::Unsupported { field: field.to_string(), value: value.to_string() }
}

fn malformed(line: usize, message: impl Into<String>) -> InstanceError {
    InstanceError::Malformed { line, message: message.into() }
}

fn parse_coords(lines: &[&str], i: &mut usize, n: usize) -> Result<Vec<(f64, f64)>, InstanceError> {
    let mut pts = vec![None; n];
    for _ in 0..n {
        let line_no = *i + 1;
        let line = lines.get(*i).ok_or_else(|| malformed(line_no, "coordinate section ended early"))?;
        *i += 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(malformed(line_no, "expected `id x y`"));
        }
        let id: usize = fields[0].parse().map_err(|_| malformed(line_no, "node id is not an integer"))?;
        let x: f64 = fields[1].parse().map_err(|_| malformed(line_no, "x is not a number"))?;
        let y: f64 = fields[2].parse().map_err(|_| malformed(line_no, "y is not a number"))?;
        if id == 0 || id > n || pts[id - 1].is_some() {
            return Err(malformed(line_no, format!("node id {id} out of range or repeated")));
        }
        pts[id - 1] = Some((x, y));
    }
    Ok(pts.into_iter().map(|p| p.expect("every id filled")).collect())
}

fn parse_numbers(lines: &[&str], i: &mut usize, count: usize) -> Result<Vec<f64>, InstanceError> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let line_no = *i + 1;
        let line = lines.get(*i).ok_or_else(|| malformed(line_no, "weight section ended early"))?;
        *i += 1;
        for tok in line.split_whitespace() {
            let value: f64 = tok.parse().map_err(|_| malformed(line_no, format!("`{tok}` is not a number")))?;
            out.push(value);
        }
        if out.len() > count {
            return Err(malformed(line_no, "too many weights in section"));
        }
    }
    Ok(out)
}

fn euc_2d(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).hypot(a.1 - b.1) + 0.5).floor()
}

fn geo(a: (f64, f64), b: (f64, f64)) -> f64 {
    // The TSPLIB GEO convention uses this truncated value.
    #[allow(clippy::approx_constant)]
    const PI: f64 = 3.141592;
    const RADIUS: f64 = 6378.388;
    let rad = |t: f64| {
        let deg = t.trunc();
        PI * (deg + 5.0 * (t - deg) / 3.0) / 180.0
    };
    let (lat_a, lon_a, lat_b, lon_b) = (rad(a.0), rad(a.1), rad(b.0), rad(b.1));
    let q1 = (lon_a - lon_b).cos();
    let q2 = (lat_a - lat_b).cos();
    let q3 = (lat_a + lat_b).cos();
    (RADIUS * (0.5 * ((1.0 + q1) * q2 - (1.0 - q1) * q3)).acos() + 1.0).trunc()
}

/// Points drawn i.i.d. uniform on the unit square with exact Euclidean costs.
pub fn random_euclidean(n: usize, seed: u64) -> Result<MetricInstance, InstanceError> {
    if n < 3 {
        return Err(InstanceError::TooSmall(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random::<f64>(), rng.random::<f64>())).collect();
    let mut cost = vec![0.0; n * n];
    for u in 0..n {
        for v in 0..u {
            let d = (pts[u].0 - pts[v].0).hypot(pts[u].1 - pts[v].1);
            cost[u * n + v] = d;
            cost[v * n + u] = d;
        }
    }
    MetricInstance::from_matrix(format!("random-n{n}-s{seed}"), n, cost, false)
}

/// Optimal tour by Held-Karp bitmask dynamic programming over subsets of
/// vertices 1..n, with vertex 0 as the fixed start.
pub fn exact_opt(inst: &MetricInstance) -> Result<Tour, InstanceError> {
    let n = inst.n();
    if n > EXACT_OPT_LIMIT {
        return Err(InstanceError::TooLarge { n, limit: EXACT_OPT_LIMIT });
    }
    let m = n - 1;
    let full = 1usize << m;
    let mut best = vec![f64::INFINITY; full * m];
    let mut prev = vec![usize::MAX; full * m];
    for j in 0..m {
        best[(1 << j) * m + j] = inst.cost(0, j + 1);
    }
    for set in 1..full {
        for j in 0..m {
            let here = best[set * m + j];
            if set & (1 << j) == 0 || here.is_infinite() {
                continue;
            }
            for k in 0..m {
                if set & (1 << k) != 0 {
                    continue;
                }
                let next = set | (1 << k);
                let value = here + inst.cost(j + 1, k + 1);
                if value < best[next * m + k] {
                    best[next * m + k] = value;
                    prev[next * m + k] = j;
                }
            }
        }
    }
    let last = (0..m)
        .min_by(|&a, &b| {
            let ca = best[(full - 1) * m + a] + inst.cost(a + 1, 0);
            let cb = best[(full - 1) * m + b] + inst.cost(b + 1, 0);
            ca.total_cmp(&cb)
        })
        .expect("n >= 3");
    let mut order = Vec::with_capacity(n);
    let (mut set, mut j) = (full - 1, last);
    while j != usize::MAX {
        order.push(j + 1);
        let p = prev[set * m + j];
        set &= !(1 << j);
        j = p;
    }
    order.push(0);
    order.reverse();
    Tour::new(inst, order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perms(items: &mut Vec<usize>, k: usize, visit: &mut dyn FnMut(&[usize])) {
        if k == items.len() {
            visit(items);
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            perms(items, k + 1, visit);
            items.swap(k, i);
        }
    }

    fn brute_force_opt(inst: &MetricInstance) -> f64 {
        let mut rest: Vec<usize> = (1..inst.n()).collect();
        let mut best = f64::INFINITY;
        perms(&mut rest, 0, &mut |p| {
            let mut order = vec![0];
            order.extend_from_slice(p);
            best = best.min(inst.cycle_cost(&order));
        });
        best
    }

    #[test]
    fn explicit_unit_matrix() {
        let text = "NAME: ones\nTYPE: TSP\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EXPLICIT\n\
                    EDGE_WEIGHT_FORMAT: FULL_MATRIX\nEDGE_WEIGHT_SECTION\n0 1 1\n1 0 1\n1 1 0\nEOF\n";
        let inst = load_tsplib(text).unwrap();
        assert_eq!(inst.n(), 3);
        for u in 0..3 {
            for v in 0..3 {
                assert_eq!(inst.cost(u, v), if u == v { 0.0 } else { 1.0 });
            }
        }
    }

    #[test]
    fn euclidean_three_four_five() {
        let text = "NAME: t\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n\
                    1 0 0\n2 3 4\n3 0 4\nEOF\n";
        let inst = load_tsplib(text).unwrap();
        assert_eq!(inst.cost(0, 1), 5.0);
    }

    #[test]
    fn unsupported_weight_type_names_field() {
        let text = "NAME: t\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: ATT\nEOF\n";
        match load_tsplib(text) {
            Err(InstanceError::Unsupported { field, value }) => {
                assert_eq!(field, "EDGE_WEIGHT_TYPE");
                assert_eq!(value, "ATT");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_coordinate_reports_line() {
        let text = "NAME: t\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EUC_2D\nNODE_COORD_SECTION\n\
                    1 0 0\n2 x 4\n3 0 4\nEOF\n";
        match load_tsplib(text) {
            Err(InstanceError::Malformed { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn lower_diag_row_layout() {
        let text = "NAME: t\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EXPLICIT\nEDGE_WEIGHT_FORMAT: LOWER_DIAG_ROW\n\
                    EDGE_WEIGHT_SECTION\n0 2 0\n3 4 0\nEOF\n";
        let inst = load_tsplib(text).unwrap();
        assert_eq!(inst.cost(1, 0), 2.0);
        assert_eq!(inst.cost(0, 2), 3.0);
        assert_eq!(inst.cost(2, 1), 4.0);
    }

    #[test]
    fn explicit_large_violation_rejected_small_repaired() {
        let bad = "NAME: t\nDIMENSION: 3\nEDGE_WEIGHT_TYPE: EXPLICIT\nEDGE_WEIGHT_FORMAT: FULL_MATRIX\n\
                   EDGE_WEIGHT_SECTION\n0 1 5\n1 0 1\n5 1 0\nEOF\n";
        assert!(matches!(load_tsplib(bad), Err(InstanceError::NotMetric { .. })));
        let slight = vec![0.0, 1.0, 2.0 + 5e-10, 1.0, 0.0, 1.0, 2.0 + 5e-10, 1.0, 0.0];
        let inst = MetricInstance::from_matrix("slight", 3, slight, true).unwrap();
        assert_eq!(inst.cost(0, 2), 2.0);
    }

    #[test]
    fn random_instances_are_deterministic_and_metric() {
        let a = random_euclidean(3, 7).unwrap();
        let b = random_euclidean(3, 7).unwrap();
        assert_eq!(a, b);
        let inst = random_euclidean(10, 1).unwrap();
        for u in 0..10 {
            for v in 0..10 {
                for w in 0..10 {
                    assert!(inst.cost(u, w) <= inst.cost(u, v) + inst.cost(v, w));
                }
            }
        }
        assert!(matches!(random_euclidean(2, 0), Err(InstanceError::TooSmall(2))));
    }

    #[test]
    fn random_instance_mean_distance() {
        // The mean distance between two uniform points in the unit square is about 0.5214.
        let inst = random_euclidean(50, 2).unwrap();
        let mut total = 0.0;
        for u in 0..50 {
            for v in 0..u {
                total += inst.cost(u, v);
            }
        }
        let mean = total / (50.0 * 49.0 / 2.0);
        assert!((0.4..=0.6).contains(&mean), "mean {mean}");
    }

    #[test]
    fn tsplib_round_trip_is_exact() {
        let inst = random_euclidean(7, 11).unwrap();
        let back = load_tsplib(&inst.to_tsplib()).unwrap();
        assert_eq!(back.n(), 7);
        for u in 0..7 {
            for v in 0..7 {
                assert_eq!(back.cost(u, v), inst.cost(u, v));
            }
        }
    }

    #[test]
    fn exact_opt_small_shapes() {
        let tri = MetricInstance::from_matrix("tri", 3, vec![0., 1., 1., 1., 0., 1., 1., 1., 0.], true).unwrap();
        assert_eq!(exact_opt(&tri).unwrap().cost, 3.0);
        let s = 2f64.sqrt();
        let square = MetricInstance::from_matrix(
            "square",
            4,
            vec![0., 1., s, 1., 1., 0., 1., s, s, 1., 0., 1., 1., s, 1., 0.],
            true,
        )
        .unwrap();
        assert_eq!(exact_opt(&square).unwrap().cost, 4.0);
    }

    #[test]
    fn exact_opt_matches_permutation_search() {
        let inst = random_euclidean(8, 3).unwrap();
        let tour = exact_opt(&inst).unwrap();
        assert!((tour.cost - brute_force_opt(&inst)).abs() < 1e-12);
        assert_eq!(tour.cost, inst.cycle_cost(&tour.order));
    }

    #[test]
    fn exact_opt_size_limit() {
        let inst = random_euclidean(17, 0).unwrap();
        assert!(matches!(exact_opt(&inst), Err(InstanceError::TooLarge { n: 17, .. })));
    }

    #[test]
    fn tour_validation() {
        let inst = random_euclidean(4, 0).unwrap();
        assert!(Tour::new(&inst, vec![0, 1, 2, 2]).is_err());
        assert!(Tour::new(&inst, vec![0, 1, 2]).is_err());
        let t = Tour::new(&inst, vec![3, 1, 0, 2]).unwrap();
        assert!(t.to_tsplib("x").contains("TOUR_SECTION\n4\n2\n1\n3\n-1\nEOF"));
    }

    #[test]
    fn gr17_needs_metric_completion() {
        let text = bundled_text("gr17").unwrap();
        assert!(matches!(load_tsplib(text), Err(InstanceError::NotMetric { .. })));
        let inst = load_bundled("gr17").unwrap().unwrap();
        for u in 0..17 {
            for v in 0..17 {
                for w in 0..17 {
                    assert!(inst.cost(u, v) <= inst.cost(u, w) + inst.cost(w, v));
                }
            }
        }
        assert_eq!(inst.optimum_hint(), Some(2085.0));
    }
}
