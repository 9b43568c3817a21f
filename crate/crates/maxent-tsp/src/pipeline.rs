//! End-to-end runs over one instance or the fixture library, each producing
//! a serializable report with a list of pass/fail assertions.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cuts::{
    build_hierarchy, enumerate_near_min_cuts, BoundCheck, CrossingTag, CutError, CutHierarchy, NodeKind, PolygonReport,
    verify_polygon_structure,
};
use crate::fit::{fit_lambda, FitError, FitResult};
use crate::fixtures::{default_library, Fixture, FixtureError};
use crate::instance::{exact_opt, known_optimum, load_bundled, load_tsplib, random_euclidean, InstanceError, MetricInstance, Tour, EXACT_OPT_LIMIT};
use crate::lp::{check_spanning_tree_polytope, original_vertex, solve_held_karp, split_root, LpError, LpSolution, PolytopeVerdict, SUPPORT_THRESHOLD};
use crate::matching::{christofides, complete_to_tour, MatchingError};
use crate::probe::{
    bernoulli_facts, check_marginals, classify_edges, construct_maxflow_event, gurvits_bound_check, polygon_sides,
    side_deviation, verify_rank_properties, verify_tree_conditioning, BundleReport, CheckList, EventMode,
    GurvitsReport, AnalysisConstants, ProbeError, ROUND_OFF,
};
use crate::sampler::{sample_many, FittedSampler, SampleError};
use crate::trees::{mask_members, EdgeMask, ExactTreeDistribution, TreeError};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_ETA: f64 = 1e-3;
pub const DEFAULT_SAMPLES: usize = 200;
/// The two event scales exercised by the probe.
pub const PROBE_ZETAS: [f64; 2] = [1.0 / 4000.0, 0.002];
/// Fixtures on which the max-flow event must hold for the probe to pass.
pub const MIN_EVENT_FIXTURES: usize = 10;

const APPROXIMATION_FACTOR: f64 = 1.5;
const APPROXIMATION_SLACK: f64 = 1e-6;
const LP_TOL: f64 = 1e-9;
/// Cuts up to weight `2 + PROBE_CUT_SLACK` feed the conditioning checks.
const PROBE_CUT_SLACK: f64 = 0.5;
const PROBE_SET_CAP: usize = 60;
const PROBE_RANK_SET_CAP: usize = 20;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("instance: {0}")]
    Instance(#[from] InstanceError),
    #[error("lp: {0}")]
    Lp(#[from] LpError),
    #[error("fit: {0}")]
    Fit(#[from] FitError),
    #[error("tree law: {0}")]
    Tree(#[from] TreeError),
    #[error("sampling: {0}")]
    Sample(#[from] SampleError),
    #[error("matching: {0}")]
    Matching(#[from] MatchingError),
    #[error("cut atlas: {0}")]
    Cut(#[from] CutError),
    #[error("probe: {0}")]
    Probe(#[from] ProbeError),
    #[error("fixture: {0}")]
    Fixture(#[from] FixtureError),
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("no instance given; pass --instance or --random")]
    NoInstance,
    #[error("unknown bundled instance {0:?}")]
    UnknownInstance(String),
    #[error("invalid setting: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Tour,
    Atlas,
    Probe,
    Lp,
    Fit,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Tour => "tour",
            Command::Atlas => "atlas",
            Command::Probe => "probe",
            Command::Lp => "lp",
            Command::Fit => "fit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceSource {
    File(PathBuf),
    Bundled(String),
    Random { n: usize, seed: u64 },
}

impl InstanceSource {
    /// A bundled instance when the name matches one, a file path otherwise.
    pub fn parse(text: &str) -> Self {
        if load_bundled(text).is_some() {
            InstanceSource::Bundled(text.to_string())
        } else {
            InstanceSource::File(PathBuf::from(text))
        }
    }

    pub fn load(&self) -> Result<MetricInstance, PipelineError> {
        match self {
            InstanceSource::File(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io { path: path.clone(), source })?;
                Ok(load_tsplib(&text)?)
            }
            InstanceSource::Bundled(name) => {
                Ok(load_bundled(name).ok_or_else(|| PipelineError::UnknownInstance(name.clone()))??)
            }
            InstanceSource::Random { n, seed } => Ok(random_euclidean(*n, *seed)?),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub instance: Option<InstanceSource>,
    pub eta: f64,
    pub fit_eps: f64,
    pub samples: usize,
    pub seed: u64,
    /// Worker threads for sampling; 0 lets the pool decide.
    pub threads: usize,
    /// Where the CLI writes the JSON report; not part of the echo.
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(command: Command) -> Self {
        RunConfig {
            command,
            instance: None,
            eta: DEFAULT_ETA,
            fit_eps: crate::fit::DEFAULT_FIT_EPS,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            threads: 0,
            out: None,
        }
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return Err(PipelineError::InvalidConfig(format!("eta must be a nonnegative number, got {}", self.eta)));
        }
        if !(self.fit_eps.is_finite() && self.fit_eps > 0.0) {
            return Err(PipelineError::InvalidConfig(format!("fit-eps must be positive, got {}", self.fit_eps)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Assertion {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Assertion { name: name.into(), passed, detail: detail.into() }
    }

    fn from_check(check: &BoundCheck) -> Self {
        let relation = if check.lower { ">=" } else { "<=" };
        Assertion::new(&check.name, check.passed, format!("{} {relation} {}", check.value, check.bound))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub name: String,
    pub n: usize,
    pub optimum: Option<Optimum>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimumSource {
    Exact,
    Known,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimum {
    pub cost: f64,
    pub source: OptimumSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpSummary {
    pub objective: f64,
    pub cuts_added: usize,
    pub objective_trace: Vec<f64>,
    pub max_degree_error: f64,
    /// Support edges `(u, v, x)` of the unsplit solution.
    pub support: Vec<(usize, usize, f64)>,
    pub fractional_edges: usize,
    pub polytope: PolytopeVerdict,
}

impl LpSummary {
    fn new(sol: &LpSolution, polytope: PolytopeVerdict) -> Self {
        let support: Vec<(usize, usize, f64)> =
            sol.edges.iter().filter(|e| e.x > SUPPORT_THRESHOLD).map(|e| (e.u, e.v, e.x)).collect();
        let fractional_edges = support.iter().filter(|e| (e.2 - e.2.round()).abs() > 1e-7).count();
        LpSummary {
            objective: sol.objective,
            cuts_added: sol.cuts_added,
            objective_trace: sol.objective_trace.clone(),
            max_degree_error: sol.max_degree_error(),
            support,
            fractional_edges,
            polytope,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub max_rel_err: f64,
    /// Error recomputed from the weights alone.
    pub recomputed_err: f64,
    pub iterations: usize,
    pub pieces: usize,
    pub tight_sets: Vec<Vec<usize>>,
    /// Split-graph edges `(u, v)` aligned with `lambda`.
    pub edges: Vec<(usize, usize)>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ratios {
    pub best_over_lp: Option<f64>,
    pub mean_over_lp: Option<f64>,
    pub baseline_over_lp: f64,
    pub produced_over_lp: f64,
    pub best_over_opt: Option<f64>,
    pub baseline_over_opt: Option<f64>,
    pub produced_over_opt: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TourOrigin {
    Sample,
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TourSummary {
    pub samples: usize,
    /// Cost of `T ∪ e0` per sampled tree.
    pub tree_costs: Vec<f64>,
    /// Tour cost per sampled tree.
    pub tour_costs: Vec<f64>,
    pub best_sample: Option<usize>,
    pub best: Option<Tour>,
    pub mean_tour_cost: Option<f64>,
    /// Christofides on the same instance.
    pub baseline: Tour,
    /// The cheaper of the best sample and the baseline.
    pub produced: Tour,
    pub produced_from: TourOrigin,
    pub ratios: Ratios,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagCounts {
    pub uncrossed: usize,
    pub left_only: usize,
    pub right_only: usize,
    pub both: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSummary {
    /// Original vertex ids; the split pair shows as vertex 0.
    pub vertices: Vec<usize>,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    pub kind: NodeKind,
    pub atoms: Vec<usize>,
    pub ambiguous: bool,
    pub boundary_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasSummary {
    pub eta: f64,
    pub eps_eta: f64,
    pub reference_tour: Tour,
    /// The reference tour is heuristic, so polygon bounds are advisory.
    pub heuristic_opt: bool,
    pub cut_count: usize,
    pub tags: TagCounts,
    pub components: usize,
    pub non_intervals: usize,
    pub laminar: bool,
    pub nodes: Vec<NodeSummary>,
    pub polygons: Vec<PolygonReport>,
    pub polygon_violations: usize,
    pub node_checks: usize,
    pub node_violations: Vec<BoundCheck>,
    pub top_bundles: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub count: usize,
    pub min_margin: f64,
    pub violations: Vec<BoundCheck>,
}

impl From<&CheckList> for CheckSummary {
    fn from(list: &CheckList) -> Self {
        CheckSummary {
            count: list.len(),
            min_margin: list.min_margin(),
            violations: list.violations().into_iter().cloned().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "status", content = "reason")]
pub enum EventStatus {
    Passed,
    Failed,
    /// The node's sides are too far from expectation 1 for this `ζ`.
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub node: usize,
    pub kind: NodeKind,
    pub zeta: f64,
    pub eps: f64,
    pub status: EventStatus,
    pub probability: f64,
    pub normalized_flow: f64,
    pub distortion_a: f64,
    pub distortion_b: f64,
    pub violations: Vec<BoundCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureProbe {
    pub name: String,
    pub trees: usize,
    pub fit_error: f64,
    pub marginal_gap: f64,
    pub conditioning: CheckSummary,
    pub rank: CheckSummary,
    pub gurvits: Vec<GurvitsReport>,
    pub events: Vec<EventSummary>,
    pub bundles: Vec<BundleReport>,
    pub classification: CheckSummary,
}

impl FixtureProbe {
    pub fn failures(&self) -> usize {
        self.conditioning.violations.len()
            + self.rank.violations.len()
            + self.classification.violations.len()
            + self.gurvits.iter().filter(|g| !g.check.passed).count()
            + self.events.iter().filter(|e| e.status == EventStatus::Failed).count()
    }

    /// Some node carries the event at every probed `ζ` and none fails.
    pub fn event_holds(&self) -> bool {
        let failed = self.events.iter().any(|e| e.status == EventStatus::Failed);
        let node_passes = |node: usize| {
            PROBE_ZETAS.iter().all(|&z| self.events.iter().any(|e| e.node == node && e.zeta == z && e.status == EventStatus::Passed))
        };
        !failed && self.events.iter().any(|e| node_passes(e.node))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "outcome")]
pub enum FixtureOutcome {
    Probed(Box<FixtureProbe>),
    Error { name: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeSummary {
    pub constants: AnalysisConstants,
    pub bernoulli_laws: usize,
    pub bernoulli: CheckSummary,
    pub fixtures: Vec<FixtureOutcome>,
    pub event_fixtures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: Command,
    pub config: RunConfig,
    pub instance: Option<InstanceSummary>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub lp: Option<LpSummary>,
    pub fit: Option<FitSummary>,
    pub tour: Option<TourSummary>,
    pub atlas: Option<AtlasSummary>,
    pub probe: Option<ProbeSummary>,
    pub assertions: Vec<Assertion>,
    pub passed: bool,
}

impl RunReport {
    fn new(config: &RunConfig) -> Self {
        RunReport {
            schema_version: SCHEMA_VERSION,
            command: config.command,
            config: config.clone(),
            instance: None,
            timings: BTreeMap::new(),
            lp: None,
            fit: None,
            tour: None,
            atlas: None,
            probe: None,
            assertions: Vec::new(),
            passed: true,
        }
    }

    fn assert(&mut self, assertion: Assertion) {
        self.passed &= assertion.passed;
        self.assertions.push(assertion);
    }

    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.timings.entry(stage.to_string()).or_default() += start.elapsed().as_secs_f64();
        out
    }

    pub fn failures(&self) -> Vec<&Assertion> {
        self.assertions.iter().filter(|a| !a.passed).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// The report with timings cleared, for comparing runs.
    pub fn without_timings(&self) -> Self {
        RunReport { timings: BTreeMap::new(), ..self.clone() }
    }
}

/// Runs one command.
pub fn run(config: &RunConfig) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let mut report = RunReport::new(config);
    if config.command == Command::Probe {
        let probe = report.time("probe", || probe_library(&default_library(), config.eta, config.seed));
        for a in probe_assertions(&probe) {
            report.assert(a);
        }
        report.probe = Some(probe);
        return Ok(report);
    }
    let source = config.instance.as_ref().ok_or(PipelineError::NoInstance)?;
    let inst = report.time("load", || source.load())?;
    let optimum = report.time("optimum", || optimum_of(&inst))?;
    report.instance = Some(InstanceSummary { name: inst.name().to_string(), n: inst.n(), optimum: optimum.clone() });

    let (sol, split) = report.time("lp", || solve_lp(&inst))?;
    let polytope = report.time("polytope", || check_spanning_tree_polytope(&split))?;
    report.assert(Assertion::new(
        "split solution lies in the spanning tree polytope",
        matches!(polytope, PolytopeVerdict::Pass { .. }),
        format!("{polytope:?}"),
    ));
    report.assert(Assertion::new(
        "LP degrees equal 2",
        sol.max_degree_error() <= 1e-6,
        format!("max degree error {:e}", sol.max_degree_error()),
    ));
    report.lp = Some(LpSummary::new(&sol, polytope));
    match config.command {
        Command::Lp => {}
        Command::Fit | Command::Tour => {
            let fit = report.time("fit", || fit_lambda(&split, config.fit_eps))?;
            let recomputed_err = report.time("fit", || fit.recompute_error())?.max(0.0);
            report.assert(Assertion::new(
                "fit marginal error within tolerance",
                fit.max_rel_err <= config.fit_eps,
                format!("{:e} <= {:e}", fit.max_rel_err, config.fit_eps),
            ));
            if config.command == Command::Tour {
                let tour = report.time("tour", || {
                    tour_summary(&inst, &split, &fit, optimum.as_ref(), config.samples, config.seed, config.threads)
                })?;
                let bound = APPROXIMATION_FACTOR * sol.objective + APPROXIMATION_SLACK;
                report.assert(Assertion::new(
                    "produced tour within 1.5 of the LP bound",
                    tour.produced.cost <= bound,
                    format!("{} <= {bound}", tour.produced.cost),
                ));
                report.assert(Assertion::new(
                    "baseline tour within 1.5 of the LP bound",
                    tour.baseline.cost <= bound,
                    format!("{} <= {bound}", tour.baseline.cost),
                ));
                if let Some(opt) = &optimum {
                    report.assert(Assertion::new(
                        "LP bound at most the optimum",
                        sol.objective <= opt.cost * (1.0 + 1e-9),
                        format!("{} <= {}", sol.objective, opt.cost),
                    ));
                }
                report.tour = Some(tour);
            }
            report.fit = Some(FitSummary {
                max_rel_err: fit.max_rel_err,
                recomputed_err,
                iterations: fit.iterations,
                pieces: fit.pieces.len(),
                tight_sets: fit.tight_sets.clone(),
                edges: fit.edges.clone(),
                lambda: fit.lambda.clone(),
            });
        }
        Command::Atlas => {
            let atlas = report.time("atlas", || atlas_summary(&inst, &split, config.eta))?;
            for a in atlas_assertions(&atlas) {
                report.assert(a);
            }
            report.atlas = Some(atlas);
        }
        Command::Probe => unreachable!("handled above"),
    }
    Ok(report)
}

/// The exact optimum for small instances, otherwise a published value.
pub fn optimum_of(inst: &MetricInstance) -> Result<Option<Optimum>, PipelineError> {
    if inst.n() <= EXACT_OPT_LIMIT {
        return Ok(Some(Optimum { cost: exact_opt(inst)?.cost, source: OptimumSource::Exact }));
    }
    Ok(inst
        .optimum_hint()
        .or_else(|| known_optimum(inst.name()))
        .map(|cost| Optimum { cost, source: OptimumSource::Known }))
}

/// The Held-Karp optimum and its split at vertex 0.
pub fn solve_lp(inst: &MetricInstance) -> Result<(LpSolution, LpSolution), PipelineError> {
    let sol = solve_held_karp(inst, LP_TOL)?;
    let split = split_root(&sol);
    Ok((sol, split))
}

/// Original-vertex edges of a sampled tree; the root edge becomes a loop
/// and is left out.
pub fn tree_to_edges(split: &LpSolution, fit: &FitResult, tree: &[usize]) -> Vec<(usize, usize)> {
    tree.iter()
        .map(|&e| {
            let (u, v) = fit.edges[e];
            (original_vertex(split, u), original_vertex(split, v))
        })
        .collect()
}

/// Cost of `T ∪ e0` for a sampled tree.
pub fn tree_cost(split: &LpSolution, tree: &[usize]) -> f64 {
    let costs: Vec<f64> = split.tree_edges().map(|(_, e)| e.cost).collect();
    let root = split.root_edge.map_or(0.0, |r| split.edges[r].cost);
    root + tree.iter().map(|&e| costs[e]).sum::<f64>()
}

/// Draws `count` trees and turns each into a tour through a minimum
/// matching on its odd vertices. Returns the trees with their tours.
pub fn sample_tours(
    inst: &MetricInstance,
    split: &LpSolution,
    fit: &FitResult,
    count: usize,
    seed: u64,
    threads: usize,
) -> Result<Vec<(Vec<usize>, Tour)>, PipelineError> {
    let sampler = FittedSampler::new(fit)?;
    let trees = sample_many(count, seed, threads, |rng| sampler.sample(rng))?;
    trees
        .into_iter()
        .map(|tree| {
            let (tour, _) = complete_to_tour(inst, &tree_to_edges(split, fit, &tree))?;
            Ok((tree, tour))
        })
        .collect()
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

fn tour_summary(
    inst: &MetricInstance,
    split: &LpSolution,
    fit: &FitResult,
    optimum: Option<&Optimum>,
    samples: usize,
    seed: u64,
    threads: usize,
) -> Result<TourSummary, PipelineError> {
    let sampled = sample_tours(inst, split, fit, samples, seed, threads)?;
    let tree_costs: Vec<f64> = sampled.iter().map(|(t, _)| tree_cost(split, t)).collect();
    let tour_costs: Vec<f64> = sampled.iter().map(|(_, t)| t.cost).collect();
    let best_sample = (0..tour_costs.len()).min_by(|&a, &b| tour_costs[a].total_cmp(&tour_costs[b]));
    let best = best_sample.map(|i| sampled[i].1.clone());
    let mean_tour_cost = (!tour_costs.is_empty()).then(|| tour_costs.iter().sum::<f64>() / tour_costs.len() as f64);
    let baseline = christofides(inst)?;
    let (produced, produced_from) = match &best {
        Some(b) if b.cost <= baseline.cost => (b.clone(), TourOrigin::Sample),
        _ => (baseline.clone(), TourOrigin::Baseline),
    };
    let lp = split.objective;
    let opt = optimum.map(|o| o.cost);
    let ratios = Ratios {
        best_over_lp: best.as_ref().map(|b| ratio(b.cost, lp)),
        mean_over_lp: mean_tour_cost.map(|m| ratio(m, lp)),
        baseline_over_lp: ratio(baseline.cost, lp),
        produced_over_lp: ratio(produced.cost, lp),
        best_over_opt: best.as_ref().zip(opt).map(|(b, o)| ratio(b.cost, o)),
        baseline_over_opt: opt.map(|o| ratio(baseline.cost, o)),
        produced_over_opt: opt.map(|o| ratio(produced.cost, o)),
    };
    Ok(TourSummary {
        samples,
        tree_costs,
        tour_costs,
        best_sample,
        best,
        mean_tour_cost,
        baseline,
        produced,
        produced_from,
        ratios,
    })
}

/// Repeated 2-opt moves until none shortens the tour.
pub fn improve_two_opt(inst: &MetricInstance, tour: &Tour) -> Tour {
    let mut order = tour.order.clone();
    let n = order.len();
    let mut improved = true;
    while improved {
        improved = false;
        for i in 0..n.saturating_sub(2) {
            for j in i + 2..n {
                if i == 0 && j == n - 1 {
                    continue;
                }
                let (a, b) = (order[i], order[i + 1]);
                let (c, d) = (order[j], order[(j + 1) % n]);
                let delta = inst.cost(a, c) + inst.cost(b, d) - inst.cost(a, b) - inst.cost(c, d);
                if delta < -1e-10 {
                    order[i + 1..=j].reverse();
                    improved = true;
                }
            }
        }
    }
    let cost = inst.cycle_cost(&order);
    Tour { order, cost }
}

/// An optimal tour for small instances, otherwise Christofides improved by
/// 2-opt. The flag reports whether the tour is heuristic.
pub fn reference_tour(inst: &MetricInstance) -> Result<(Tour, bool), PipelineError> {
    if inst.n() <= EXACT_OPT_LIMIT {
        return Ok((exact_opt(inst)?, false));
    }
    Ok((improve_two_opt(inst, &christofides(inst)?), true))
}

fn atlas_summary(inst: &MetricInstance, split: &LpSolution, eta: f64) -> Result<AtlasSummary, PipelineError> {
    let (tour, heuristic_opt) = reference_tour(inst)?;
    let h = build_hierarchy(split, &tour.order, eta, heuristic_opt)?;
    Ok(summarize_hierarchy(&h, split, tour))
}

/// Condenses a hierarchy into counts, node outlines and structural checks.
pub fn summarize_hierarchy(h: &CutHierarchy, split: &LpSolution, reference_tour: Tour) -> AtlasSummary {
    let mut tags = TagCounts::default();
    for tag in &h.crossing.tags {
        match tag {
            CrossingTag::Uncrossed => tags.uncrossed += 1,
            CrossingTag::LeftOnly => tags.left_only += 1,
            CrossingTag::RightOnly => tags.right_only += 1,
            CrossingTag::Both => tags.both += 1,
        }
    }
    let nodes = h
        .nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let mut vertices: Vec<usize> = node.vertex_set.iter().map(|&v| original_vertex(split, v)).collect();
            vertices.sort_unstable();
            vertices.dedup();
            NodeSummary {
                vertices,
                parent: node.parent,
                children: node.children.clone(),
                kind: node.kind,
                atoms: node.atoms.clone(),
                ambiguous: node.ambiguous,
                boundary_weight: h.boundary_weight(i),
            }
        })
        .collect();
    let polygons: Vec<PolygonReport> =
        h.polygons.iter().map(|p| verify_polygon_structure(p, h.n, &h.edges, h.eta)).collect();
    let node_checks = h.node_checks();
    AtlasSummary {
        eta: h.eta,
        eps_eta: h.eps_eta,
        reference_tour,
        heuristic_opt: h.heuristic_opt,
        cut_count: h.cuts.len(),
        tags,
        components: h.crossing.components.len(),
        non_intervals: h.crossing.non_intervals.len(),
        laminar: h.is_laminar(),
        nodes,
        polygon_violations: polygons.iter().map(PolygonReport::violations).sum(),
        polygons,
        node_checks: node_checks.len(),
        node_violations: node_checks.into_iter().filter(|c| !c.passed).collect(),
        top_bundles: h.top_bundles().len(),
    }
}

fn atlas_assertions(atlas: &AtlasSummary) -> Vec<Assertion> {
    let mut out = vec![Assertion::new("hierarchy is laminar", atlas.laminar, format!("{} nodes", atlas.nodes.len()))];
    if atlas.heuristic_opt {
        return out;
    }
    out.push(Assertion::new(
        "near-minimum cuts are tour intervals",
        atlas.non_intervals == 0,
        format!("{} of {} cuts are not intervals", atlas.non_intervals, atlas.cut_count),
    ));
    out.push(Assertion::new(
        "polygon inequalities",
        atlas.polygon_violations == 0,
        format!("{} violations over {} polygons", atlas.polygon_violations, atlas.polygons.len()),
    ));
    out.push(Assertion::new(
        "node side masses",
        atlas.node_violations.is_empty(),
        format!("{} of {} checks violated", atlas.node_violations.len(), atlas.node_checks),
    ));
    out
}

/// Runs the probe suite over every fixture plus the Bernoulli facts.
pub fn probe_library(library: &[Fixture], eta: f64, seed: u64) -> ProbeSummary {
    let constants = AnalysisConstants::new(eta);
    let q_grid: Vec<f64> = (1..=12).map(|k| k as f64 / 10.0).collect();
    let n_grid: Vec<usize> = (1..=30).collect();
    let bernoulli = bernoulli_facts(&q_grid, &n_grid, seed);
    let fixtures: Vec<FixtureOutcome> = library
        .iter()
        .map(|f| match probe_fixture(f, &constants) {
            Ok(p) => FixtureOutcome::Probed(Box::new(p)),
            Err(e) => FixtureOutcome::Error { name: f.name.clone(), message: e.to_string() },
        })
        .collect();
    let event_fixtures =
        fixtures.iter().filter(|f| matches!(f, FixtureOutcome::Probed(p) if p.event_holds())).count();
    ProbeSummary {
        constants,
        bernoulli_laws: bernoulli.laws_checked,
        bernoulli: CheckSummary::from(&bernoulli.checks),
        fixtures,
        event_fixtures,
    }
}

fn probe_assertions(probe: &ProbeSummary) -> Vec<Assertion> {
    let mut out = vec![Assertion::new(
        "Bernoulli sum facts",
        probe.bernoulli.violations.is_empty(),
        format!("{} checks over {} laws", probe.bernoulli.count, probe.bernoulli_laws),
    )];
    out.extend(probe.bernoulli.violations.iter().map(Assertion::from_check));
    for outcome in &probe.fixtures {
        match outcome {
            FixtureOutcome::Probed(p) => {
                out.push(Assertion::new(
                    format!("probe {}", p.name),
                    p.failures() == 0,
                    format!("{} trees, {} failures", p.trees, p.failures()),
                ));
            }
            FixtureOutcome::Error { name, message } => out.push(Assertion::new(format!("probe {name}"), false, message)),
        }
    }
    out.push(Assertion::new(
        "max-flow event on enough fixtures",
        probe.event_fixtures >= MIN_EVENT_FIXTURES,
        format!("{} >= {MIN_EVENT_FIXTURES}", probe.event_fixtures),
    ));
    out
}

fn vertex_boundary(d: &ExactTreeDistribution, v: usize) -> Vec<usize> {
    mask_members(d.boundary_edges(&[v]))
}

/// Probes one fixture: exact marginals, conditioning on tree cuts, rank
/// sequences, the Gurvits bound, max-flow events and edge classification.
pub fn probe_fixture(f: &Fixture, constants: &AnalysisConstants) -> Result<FixtureProbe, PipelineError> {
    let (fit, d) = f.distribution()?;
    let x = f.tree_values();
    let marginal_gap = check_marginals(&d, &x)?;
    let sol = &f.solution;
    let n = sol.n;
    let root_pair = sol.root_pair().ok_or(CutError::NotSplit)?;
    let edges: Vec<(usize, usize, f64)> = sol.edges.iter().map(|e| (e.u, e.v, e.x)).collect();
    let mut cuts = enumerate_near_min_cuts(n, &edges, PROBE_CUT_SLACK, Some(root_pair))?;
    cuts.sort_by(|a, b| a.weight.total_cmp(&b.weight).then_with(|| a.vertex_set.cmp(&b.vertex_set)));
    let sets: Vec<Vec<usize>> = cuts.iter().take(PROBE_SET_CAP).map(|c| c.vertex_set.clone()).collect();

    let h = build_hierarchy(sol, &f.tour, constants.eta, !f.tour_is_optimal)?;
    let to_mask = |list: &[usize]| list.iter().fold(0 as EdgeMask, |m, &e| m | 1 << e);
    let mut edge_sets: Vec<EdgeMask> = (0..d.edges.len()).map(|e| 1 << e).collect();
    for e in 0..d.edges.len() {
        for g in e + 1..d.edges.len() {
            let (a, b) = (d.edges[e], d.edges[g]);
            let adjacent = a.0 == b.0 || a.0 == b.1 || a.1 == b.0 || a.1 == b.1;
            if adjacent && x[e] + x[g] < 1.0 {
                edge_sets.push(1 << e | 1 << g);
            }
        }
    }
    for node in &h.nodes {
        if let Some(p) = &node.partition {
            let c = crate::probe::edge_mask_of(&d, &p.c);
            if c != 0 {
                edge_sets.push(c);
            }
        }
    }
    let conditioning = verify_tree_conditioning(&d, &x, &sets, &edge_sets, true)?;

    let inner_vertices: Vec<usize> = (0..n).filter(|&v| v != root_pair.0 && v != root_pair.1).collect();
    let mut rank_sets: Vec<EdgeMask> = inner_vertices.iter().map(|&v| d.boundary_edges(&[v])).collect();
    for s in sets.iter().take(PROBE_RANK_SET_CAP) {
        rank_sets.push(d.boundary_edges(s));
        let inner = d.induced_edges(s);
        if inner != 0 {
            rank_sets.push(inner);
        }
    }
    rank_sets.retain(|&m| m != 0);
    rank_sets.sort_unstable();
    rank_sets.dedup();
    let rank = verify_rank_properties(&d, &rank_sets);

    let mut gurvits = Vec::new();
    for &v in &inner_vertices {
        let around = vertex_boundary(&d, v);
        gurvits.push(gurvits_bound_check(&d, &[to_mask(&around)], &[2])?);
        if around.len() >= 2 {
            let halves = [
                to_mask(&around.iter().copied().step_by(2).collect::<Vec<_>>()),
                to_mask(&around.iter().copied().skip(1).step_by(2).collect::<Vec<_>>()),
            ];
            let targets: Vec<usize> = halves
                .iter()
                .map(|&m| mask_members(m).iter().map(|&e| d.marginals[e]).sum::<f64>().round() as usize)
                .collect();
            gurvits.push(gurvits_bound_check(&d, &halves, &targets)?);
        }
    }
    for node in &h.nodes {
        if let (NodeKind::Polygon | NodeKind::Triangle, Some(p)) = (node.kind, &node.partition) {
            let sides = [to_mask(&p.a), to_mask(&p.b), to_mask(&p.c)].map(|m| m & ((1 << d.edges.len()) - 1));
            if sides[0] != 0 && sides[1] != 0 {
                gurvits.push(gurvits_bound_check(&d, &sides, &[1, 1, 0])?);
            }
        }
    }

    let mut events = Vec::new();
    for (index, node) in h.nodes.iter().enumerate() {
        if node.partition.is_none() {
            continue;
        }
        let (cond, a, b) = match polygon_sides(&h, &d, index) {
            Ok(sides) => sides,
            Err(ProbeError::Tree(_)) => continue,
            Err(e) => return Err(e.into()),
        };
        let eps = side_deviation(&cond, a, b) + ROUND_OFF;
        for zeta in PROBE_ZETAS {
            let skipped = |reason: String| EventSummary {
                node: index,
                kind: node.kind,
                zeta,
                eps,
                status: EventStatus::Skipped(reason),
                probability: 0.0,
                normalized_flow: 0.0,
                distortion_a: 0.0,
                distortion_b: 0.0,
                violations: Vec::new(),
            };
            if 300.0 * eps >= zeta {
                events.push(skipped(format!("side expectations deviate by {eps:e}")));
                continue;
            }
            let summary = match construct_maxflow_event(&cond, a, b, zeta, eps, EventMode::Strict) {
                Ok(ev) => EventSummary {
                    node: index,
                    kind: node.kind,
                    zeta,
                    eps,
                    status: if ev.checks.passed() { EventStatus::Passed } else { EventStatus::Failed },
                    probability: ev.event.probability,
                    normalized_flow: ev.normalized_flow,
                    distortion_a: ev.distortion_a,
                    distortion_b: ev.distortion_b,
                    violations: ev.checks.violations().into_iter().cloned().collect(),
                },
                Err(ProbeError::Precondition(reason)) => skipped(reason),
                Err(ProbeError::Degenerate) => EventSummary { status: EventStatus::Failed, ..skipped(String::new()) },
                Err(e) => return Err(e.into()),
            };
            events.push(summary);
        }
    }

    let classification = classify_edges(&h, &d, constants)?;
    Ok(FixtureProbe {
        name: f.name.clone(),
        trees: d.tree_count(),
        fit_error: fit.max_rel_err,
        marginal_gap,
        conditioning: CheckSummary::from(&conditioning),
        rank: CheckSummary::from(&rank),
        gurvits,
        events,
        bundles: classification.bundles.clone(),
        classification: CheckSummary::from(&classification.checks),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{bad_edge, three_triangles};

    fn config(command: Command, n: usize, seed: u64) -> RunConfig {
        RunConfig { instance: Some(InstanceSource::Random { n, seed }), samples: 20, ..RunConfig::new(command) }
    }

    #[test]
    fn tour_run_passes_and_is_deterministic() {
        let cfg = config(Command::Tour, 9, 3);
        let first = run(&cfg).unwrap();
        assert!(first.passed, "{:?}", first.failures());
        let tour = first.tour.as_ref().unwrap();
        assert_eq!(tour.tour_costs.len(), 20);
        assert!(tour.produced.cost <= tour.baseline.cost);
        let threaded = run(&RunConfig { threads: 3, ..cfg.clone() }).unwrap();
        assert_eq!(first.without_timings().tour, threaded.without_timings().tour);
        let again = run(&cfg).unwrap();
        assert_eq!(first.without_timings().to_json(), again.without_timings().to_json());
    }

    #[test]
    fn sampled_trees_map_to_connected_multigraphs() {
        let inst = random_euclidean(8, 1).unwrap();
        let (_, split) = solve_lp(&inst).unwrap();
        let fit = fit_lambda(&split, 1e-6).unwrap();
        for (tree, tour) in sample_tours(&inst, &split, &fit, 10, 5, 1).unwrap() {
            let edges = tree_to_edges(&split, &fit, &tree);
            assert_eq!(edges.len(), inst.n());
            let mut ds = crate::graph::DisjointSets::new(inst.n());
            let merged = edges.iter().filter(|&&(u, v)| ds.union(u, v)).count();
            assert_eq!(merged, inst.n() - 1);
            assert_eq!(tour.order.len(), inst.n());
        }
    }

    #[test]
    fn lp_and_fit_commands() {
        let lp = run(&config(Command::Lp, 10, 2)).unwrap();
        assert!(lp.passed);
        assert!(lp.fit.is_none());
        let fit = run(&RunConfig { fit_eps: 1e-6, ..config(Command::Fit, 10, 2) }).unwrap();
        assert!(fit.passed);
        assert!(fit.fit.unwrap().max_rel_err <= 1e-6);
    }

    #[test]
    fn atlas_on_small_instance() {
        let report = run(&config(Command::Atlas, 12, 17)).unwrap();
        assert!(report.passed, "{:?}", report.failures());
        let atlas = report.atlas.unwrap();
        assert!(!atlas.heuristic_opt);
        assert_eq!(atlas.nodes[0].parent, None);
        assert_eq!(atlas.nodes[0].vertices, (1..12).collect::<Vec<_>>());
    }

    #[test]
    fn missing_instance_is_an_error() {
        assert!(matches!(run(&RunConfig::new(Command::Tour)), Err(PipelineError::NoInstance)));
        let bad = RunConfig { eta: -1.0, ..config(Command::Atlas, 6, 0) };
        assert!(matches!(run(&bad), Err(PipelineError::InvalidConfig(_))));
    }

    #[test]
    fn two_opt_never_worsens() {
        let inst = random_euclidean(20, 4).unwrap();
        let start = christofides(&inst).unwrap();
        let better = improve_two_opt(&inst, &start);
        assert!(better.cost <= start.cost + 1e-9);
        assert!((better.cost - inst.cycle_cost(&better.order)).abs() < 1e-9);
    }

    #[test]
    fn hand_built_fixtures_probe_cleanly() {
        let constants = AnalysisConstants::new(DEFAULT_ETA);
        for f in [three_triangles(), bad_edge()] {
            let p = probe_fixture(&f, &constants).unwrap();
            assert_eq!(p.failures(), 0, "{}: {p:?}", f.name);
            assert!(p.marginal_gap < 1e-6);
        }
        let p = probe_fixture(&three_triangles(), &constants).unwrap();
        assert!(p.event_holds());
    }

    #[test]
    fn bundled_names_parse_as_bundled() {
        assert_eq!(InstanceSource::parse("burma14"), InstanceSource::Bundled("burma14".into()));
        assert!(matches!(InstanceSource::parse("/tmp/x.tsp"), InstanceSource::File(_)));
    }
}
