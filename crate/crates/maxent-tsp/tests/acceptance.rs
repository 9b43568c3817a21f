//! End-to-end acceptance run. Prints one line per criterion and exits
//! nonzero when a gating criterion fails.

use std::time::{Duration, Instant};

use maxent_tsp::cuts::{build_hierarchy, enumerate_by_contraction, enumerate_near_min_cuts, verify_polygon_structure};
use maxent_tsp::fit::{fit_lambda, fit_marginals, FitMethod, DEFAULT_FIT_EPS};
use maxent_tsp::fixtures::{default_library, FRACTIONAL_SEEDS};
use maxent_tsp::instance::{bundled_names, random_euclidean};
use maxent_tsp::matching::{brute_force_matching, min_matching};
use maxent_tsp::pipeline::{
    probe_library, run, solve_lp, Command, FixtureOutcome, InstanceSource, RunConfig, RunReport, DEFAULT_ETA,
    MIN_EVENT_FIXTURES,
};
use maxent_tsp::sampler::{biased_sampler, chi_square_check, chi_square_with, expected_cost_check, TreeSampler};
use maxent_tsp::trees::{enumerate_trees, WeightedGraph, DEFAULT_TREE_LIMIT};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SUITE_SIZE: usize = 50;
const SUITE_SAMPLES: usize = 200;
const COST_SAMPLES: usize = 10_000;
const CHI_SQUARE_SAMPLES: usize = 100_000;

struct Outcome {
    id: usize,
    passed: bool,
    gating: bool,
    detail: String,
}

impl Outcome {
    fn print(&self) {
        let verdict = match (self.passed, self.gating) {
            (true, _) => "PASS",
            (false, true) => "FAIL",
            (false, false) => "SOFT-FAIL",
        };
        println!("criterion {:>2} {verdict}: {}", self.id, self.detail);
    }
}

/// Random Euclidean instances with 10 to 16 vertices, led by the seeds known
/// to give fractional LP optima.
fn suite_sources() -> Vec<InstanceSource> {
    let mut out: Vec<InstanceSource> = FRACTIONAL_SEEDS
        .iter()
        .filter(|(n, _)| (10..=16).contains(n))
        .map(|&(n, seed)| InstanceSource::Random { n, seed })
        .collect();
    let mut seed = 1000;
    while out.len() < SUITE_SIZE {
        out.push(InstanceSource::Random { n: 10 + out.len() % 7, seed });
        seed += 1;
    }
    out.extend(bundled_names().map(|name| InstanceSource::Bundled(name.to_string())));
    out
}

struct SuiteRun {
    reports: Vec<RunReport>,
    elapsed: Duration,
}

fn run_suite() -> Result<SuiteRun, String> {
    let start = Instant::now();
    let mut reports = Vec::new();
    for (i, source) in suite_sources().into_iter().enumerate() {
        let config = RunConfig {
            instance: Some(source.clone()),
            samples: SUITE_SAMPLES,
            seed: i as u64,
            ..RunConfig::new(Command::Tour)
        };
        reports.push(run(&config).map_err(|e| format!("{source:?}: {e}"))?);
    }
    Ok(SuiteRun { reports, elapsed: start.elapsed() })
}

fn name_of(report: &RunReport) -> &str {
    report.instance.as_ref().map_or("?", |i| i.name.as_str())
}

fn pipeline_guarantee(suite: &SuiteRun) -> Outcome {
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for r in &suite.reports {
        let (lp, tour) = (r.lp.as_ref().unwrap(), r.tour.as_ref().unwrap());
        worst = worst.max(tour.produced.cost / lp.objective);
        if tour.produced.cost > 1.5 * lp.objective + 1e-6 {
            failures.push(name_of(r).to_string());
        }
    }
    let fast = suite.elapsed <= Duration::from_secs(60);
    Outcome {
        id: 1,
        passed: failures.is_empty() && fast,
        gating: true,
        detail: format!(
            "{} instances, worst tour/LP {worst:.4}, {:.1}s, over-bound: {failures:?}",
            suite.reports.len(),
            suite.elapsed.as_secs_f64()
        ),
    }
}

fn empirical_ratio(suite: &SuiteRun) -> Outcome {
    let mut ratios = Vec::new();
    let mut means = Vec::new();
    for r in &suite.reports {
        let tour = r.tour.as_ref().unwrap();
        let Some(opt) = r.instance.as_ref().and_then(|i| i.optimum.as_ref()) else { continue };
        if let Some(best) = tour.best.as_ref() {
            ratios.push((name_of(r).to_string(), best.cost / opt.cost));
        }
        if let Some(mean) = tour.mean_tour_cost {
            means.push(mean / opt.cost);
        }
    }
    let worst = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
    let mean_of_means = means.iter().sum::<f64>() / means.len().max(1) as f64;
    let over: Vec<&str> = ratios.iter().filter(|r| r.1 > 1.4).map(|r| r.0.as_str()).collect();
    Outcome {
        id: 2,
        passed: over.is_empty(),
        gating: false,
        detail: format!(
            "{} instances with OPT, worst best-of-{SUITE_SAMPLES}/OPT {worst:.4}, mean sample/OPT {mean_of_means:.4}, above 1.4: {over:?}",
            ratios.len()
        ),
    }
}

/// Tree marginals by direct enumeration, weighted by λ.
fn enumerated_marginals(n: usize, edges: &[(usize, usize, f64)]) -> Vec<f64> {
    let g = WeightedGraph::new(n, edges.to_vec()).unwrap();
    enumerate_trees(&g, DEFAULT_TREE_LIMIT).unwrap().marginals
}

fn marginal_fitting(suite: &SuiteRun) -> Outcome {
    let worst_suite = suite.reports.iter().map(|r| r.fit.as_ref().unwrap().max_rel_err).fold(0.0, f64::max);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_round_trip = 0.0_f64;
    let mut errors = Vec::new();
    let graphs: Vec<(usize, Vec<(usize, usize)>)> = vec![
        (4, (0..4).flat_map(|u| (u + 1..4).map(move |v| (u, v))).collect()),
        (5, (0..5).flat_map(|u| (u + 1..5).map(move |v| (u, v))).collect()),
        (6, (0..6).map(|v| (v, (v + 1) % 6)).chain([(0, 3), (1, 4), (2, 5)]).collect()),
        (7, (1..7).map(|v| (0, v)).chain((1..7).map(|v| (v, v % 6 + 1))).collect()),
    ];
    for (n, pairs) in &graphs {
        for _ in 0..5 {
            let weighted: Vec<(usize, usize, f64)> =
                pairs.iter().map(|&(u, v)| (u, v, rng.random_range(0.2..5.0))).collect();
            let target: Vec<(usize, usize, f64)> = pairs
                .iter()
                .zip(enumerated_marginals(*n, &weighted))
                .map(|(&(u, v), p)| (u, v, p))
                .collect();
            match fit_marginals(*n, &target, 1e-8, FitMethod::Newton).and_then(|fit| Ok(fit.marginals()?)) {
                Ok(m) => {
                    let gap = m.iter().zip(&target).map(|(a, t)| (a - t.2).abs()).fold(0.0, f64::max);
                    worst_round_trip = worst_round_trip.max(gap);
                }
                Err(e) => errors.push(e.to_string()),
            }
        }
    }
    Outcome {
        id: 3,
        passed: worst_suite <= DEFAULT_FIT_EPS && worst_round_trip <= 1e-6 && errors.is_empty(),
        gating: true,
        detail: format!(
            "worst suite error {worst_suite:.2e}, worst round-trip gap {worst_round_trip:.2e} over {} graphs, errors: {errors:?}",
            graphs.len() * 5
        ),
    }
}

fn sampler_exactness() -> Outcome {
    let triangle = WeightedGraph::new(3, vec![(0, 1, 1.0), (1, 2, 1.0), (0, 2, 2.0)]).unwrap();
    let cases = [
        ("K3", WeightedGraph::complete(3)),
        ("C4", WeightedGraph::cycle(4)),
        ("K4", WeightedGraph::complete(4)),
        ("triangle (1,1,2)", triangle),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for (i, (name, g)) in cases.iter().enumerate() {
        match chi_square_check(g, CHI_SQUARE_SAMPLES, 11 + i as u64) {
            Ok(r) => {
                passed &= r.p_value > 0.01;
                parts.push(format!("{name} p={:.3}", r.p_value));
            }
            Err(e) => {
                passed = false;
                parts.push(format!("{name} error {e}"));
            }
        }
    }
    let k4 = WeightedGraph::complete(4);
    let sampler = TreeSampler::new(&k4).unwrap();
    match chi_square_with(&k4, CHI_SQUARE_SAMPLES, 99, biased_sampler(&sampler)) {
        Ok(r) => {
            passed &= r.p_value < 1e-6;
            parts.push(format!("biased K4 p={:.1e}", r.p_value));
        }
        Err(e) => {
            passed = false;
            parts.push(format!("biased error {e}"));
        }
    }
    Outcome { id: 4, passed, gating: true, detail: parts.join(", ") }
}

fn expected_tree_cost() -> Outcome {
    let mut failures = Vec::new();
    let mut worst = 0.0_f64;
    let mut count = 0;
    for (i, source) in suite_sources().iter().enumerate() {
        let outcome = source.load().map_err(|e| e.to_string()).and_then(|inst| {
            let (_, split) = solve_lp(&inst).map_err(|e| e.to_string())?;
            let fit = fit_lambda(&split, DEFAULT_FIT_EPS).map_err(|e| e.to_string())?;
            expected_cost_check(&split, &fit, DEFAULT_FIT_EPS, COST_SAMPLES, 500 + i as u64, 0).map_err(|e| e.to_string())
        });
        match outcome {
            Ok(check) => {
                count += 1;
                let allowed = check.bias_bound + 3.0 * check.std_err;
                if allowed > 0.0 {
                    worst = worst.max(check.deviation / allowed);
                }
                if !check.passed {
                    failures.push(format!("{source:?}"));
                }
            }
            Err(e) => failures.push(e),
        }
    }
    Outcome {
        id: 5,
        passed: failures.is_empty(),
        gating: true,
        detail: format!("{count} instances, {COST_SAMPLES} trees each, worst deviation/allowance {worst:.3}, failures: {failures:?}"),
    }
}

fn matching_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut discrepancies = 0;
    let mut sizes = [0usize; 13];
    for trial in 0..200 {
        let size = 4 + 2 * (trial % 5);
        let inst = random_euclidean(14, 10_000 + trial as u64).unwrap();
        let mut vertices: Vec<usize> = (0..14).collect();
        vertices.shuffle(&mut rng);
        let mut odd = vertices[..size].to_vec();
        odd.sort_unstable();
        sizes[size] += 1;
        match (min_matching(&inst, &odd), brute_force_matching(&inst, &odd)) {
            (Ok(a), Ok(b)) if (a.cost - b.cost).abs() <= 1e-9 * b.cost.max(1.0) => {}
            _ => discrepancies += 1,
        }
    }
    let spread: Vec<String> = (4..=12).step_by(2).map(|s| format!("|O|={s}: {}", sizes[s])).collect();
    Outcome {
        id: 6,
        passed: discrepancies == 0,
        gating: true,
        detail: format!("200 instances ({}), {discrepancies} discrepancies", spread.join(", ")),
    }
}

/// Every vertex set avoiding vertex 0 (or the root pair) with cut weight at
/// most `2 + eta`, by bitmask enumeration.
fn bitmask_cuts(n: usize, edges: &[(usize, usize, f64)], eta: f64, root: Option<(usize, usize)>) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 1u32..(1 << n) {
        let inside = |v: usize| mask >> v & 1 == 1;
        let excluded = match root {
            Some((a, b)) => inside(a) || inside(b),
            None => inside(0),
        };
        if excluded {
            continue;
        }
        let weight: f64 = edges.iter().filter(|e| inside(e.0) != inside(e.1)).map(|e| e.2).sum();
        if weight <= 2.0 + eta + 1e-9 {
            out.push((0..n).filter(|&v| inside(v)).collect());
        }
    }
    out.sort();
    out
}

/// A connected random graph scaled so its minimum cut is exactly 2.
fn random_weighted_graph(rng: &mut ChaCha8Rng, n: usize) -> Vec<(usize, usize, f64)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges: Vec<(usize, usize, f64)> =
        (0..n).map(|i| (order[i], order[(i + 1) % n], rng.random_range(0.5..1.5))).collect();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < 0.25 {
                edges.push((u, v, rng.random_range(0.05..0.6)));
            }
        }
    }
    let mut min = f64::INFINITY;
    for mask in 1u32..(1 << n) - 1 {
        let w: f64 = edges.iter().filter(|e| (mask >> e.0 & 1) != (mask >> e.1 & 1)).map(|e| e.2).sum();
        min = min.min(w);
    }
    edges.iter().map(|&(u, v, w)| (u, v, 2.0 * w / min)).collect()
}

fn cut_enumeration_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut discrepancies = Vec::new();
    let mut compared = 0;
    for trial in 0..100 {
        let n = rng.random_range(4..=14);
        let edges = random_weighted_graph(&mut rng, n);
        let root = (trial % 2 == 1).then_some((0, n - 1));
        for eta in [0.0, 0.1, 0.5] {
            let expected = bitmask_cuts(n, &edges, eta, root);
            let sets = |r: Result<Vec<maxent_tsp::cuts::NearMinCut>, _>| -> Option<Vec<Vec<usize>>> {
                let mut s: Vec<Vec<usize>> = r.ok()?.into_iter().map(|c| c.vertex_set).collect();
                s.sort();
                Some(s)
            };
            compared += 1;
            if sets(enumerate_near_min_cuts(n, &edges, eta, root)).as_ref() != Some(&expected) {
                discrepancies.push(format!("exact trial {trial} eta {eta}"));
            }
            if sets(enumerate_by_contraction(n, &edges, eta, root, trial as u64)).as_ref() != Some(&expected) {
                discrepancies.push(format!("contraction trial {trial} eta {eta}"));
            }
        }
    }
    Outcome {
        id: 7,
        passed: discrepancies.is_empty(),
        gating: true,
        detail: format!("{compared} graph/eta pairs, both enumerators, discrepancies: {discrepancies:?}"),
    }
}

fn structure_theorems() -> Outcome {
    let mut polygons = 0;
    let mut checks = 0;
    let mut violations = Vec::new();
    let mut skipped_heuristic = 0;
    for (i, source) in suite_sources().into_iter().enumerate() {
        let config = RunConfig { instance: Some(source), eta: DEFAULT_ETA, seed: i as u64, ..RunConfig::new(Command::Atlas) };
        match run(&config) {
            Ok(r) => {
                let atlas = r.atlas.as_ref().unwrap();
                if atlas.heuristic_opt {
                    skipped_heuristic += 1;
                    continue;
                }
                polygons += atlas.polygons.len();
                checks += atlas.polygons.iter().map(|p| p.checks.len()).sum::<usize>();
                if atlas.polygon_violations > 0 || !r.passed {
                    violations.push(name_of(&r).to_string());
                }
            }
            Err(e) => violations.push(e.to_string()),
        }
    }
    for f in default_library() {
        if !f.tour_is_optimal {
            continue;
        }
        match build_hierarchy(&f.solution, &f.tour, DEFAULT_ETA, false) {
            Ok(h) => {
                for p in &h.polygons {
                    let report = verify_polygon_structure(p, h.n, &h.edges, h.eta);
                    polygons += 1;
                    checks += report.checks.len();
                    if report.violations() > 0 {
                        violations.push(f.name.clone());
                    }
                }
            }
            Err(e) => violations.push(format!("{}: {e}", f.name)),
        }
    }
    Outcome {
        id: 8,
        passed: violations.is_empty() && polygons > 0,
        gating: true,
        detail: format!(
            "{polygons} polygons, {checks} inequalities at eta {DEFAULT_ETA}, {skipped_heuristic} instances without exact OPT skipped, violations: {violations:?}"
        ),
    }
}

fn probe_criteria() -> (Outcome, Outcome) {
    let start = Instant::now();
    let library = default_library();
    let probe = probe_library(&library, DEFAULT_ETA, 0);
    let elapsed = start.elapsed();
    let mut failing = Vec::new();
    let mut checks = probe.bernoulli.count;
    for outcome in &probe.fixtures {
        match outcome {
            FixtureOutcome::Probed(p) => {
                checks += p.conditioning.count + p.rank.count + p.classification.count + p.gurvits.len();
                if p.conditioning.violations.len() + p.rank.violations.len() + p.classification.violations.len() > 0
                    || p.gurvits.iter().any(|g| !g.check.passed)
                {
                    failing.push(p.name.clone());
                }
            }
            FixtureOutcome::Error { name, message } => failing.push(format!("{name}: {message}")),
        }
    }
    let bernoulli_ok = probe.bernoulli.violations.is_empty();
    let suite = Outcome {
        id: 9,
        passed: failing.is_empty() && bernoulli_ok && elapsed <= Duration::from_secs(120),
        gating: true,
        detail: format!(
            "{} fixtures, {checks} exact checks, Bernoulli ok {bernoulli_ok}, {:.1}s, failing: {failing:?}",
            library.len(),
            elapsed.as_secs_f64()
        ),
    };
    let mut event_failures = Vec::new();
    let mut events_passed = 0;
    for outcome in &probe.fixtures {
        if let FixtureOutcome::Probed(p) = outcome {
            for e in &p.events {
                match e.status {
                    maxent_tsp::pipeline::EventStatus::Passed => events_passed += 1,
                    maxent_tsp::pipeline::EventStatus::Failed => event_failures.push(format!("{} node {}", p.name, e.node)),
                    maxent_tsp::pipeline::EventStatus::Skipped(_) => {}
                }
            }
        }
    }
    let events = Outcome {
        id: 10,
        passed: event_failures.is_empty() && probe.event_fixtures >= MIN_EVENT_FIXTURES,
        gating: true,
        detail: format!(
            "event holds for both zeta on {} fixtures (need {MIN_EVENT_FIXTURES}), {events_passed} node events passed, failures: {event_failures:?}",
            probe.event_fixtures
        ),
    };
    (suite, events)
}

fn main() {
    let mut outcomes = Vec::new();
    match run_suite() {
        Ok(suite) => {
            outcomes.push(pipeline_guarantee(&suite));
            outcomes.push(empirical_ratio(&suite));
            outcomes.push(marginal_fitting(&suite));
        }
        Err(e) => {
            for (id, gating) in [(1, true), (2, false), (3, true)] {
                outcomes.push(Outcome { id, passed: false, gating, detail: format!("suite failed: {e}") });
            }
        }
    }
    outcomes.push(sampler_exactness());
    outcomes.push(expected_tree_cost());
    outcomes.push(matching_exactness());
    outcomes.push(cut_enumeration_exactness());
    outcomes.push(structure_theorems());
    let (suite, events) = probe_criteria();
    outcomes.push(suite);
    outcomes.push(events);
    for o in &outcomes {
        o.print();
    }
    let failed = outcomes.iter().filter(|o| o.gating && !o.passed).count();
    println!("acceptance: {} of {} gating criteria passed", outcomes.iter().filter(|o| o.gating && o.passed).count(), outcomes.iter().filter(|o| o.gating).count());
    if failed > 0 {
        std::process::exit(1);
    }
}
