use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use maxent_tsp::pipeline::{run, Command, InstanceSource, RunConfig, RunReport, DEFAULT_ETA, DEFAULT_SAMPLES};

#[derive(Parser)]
#[command(name = "maxent-tsp", version, about = "Max-entropy tree rounding for metric TSP")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Sample trees from the fitted law, repair parity, and keep the best tour.
    Tour(Options),
    /// Build the near-minimum cut hierarchy and check its polygon structure.
    Atlas(Options),
    /// Run the exact probe suite over the built-in fixture library.
    Probe(Options),
    /// Solve the Held-Karp relaxation.
    Lp(Options),
    /// Fit maximum-entropy tree weights to the LP solution.
    Fit(Options),
}

#[derive(Args)]
struct Options {
    /// TSPLIB file or bundled instance name.
    #[arg(long, conflicts_with = "random")]
    instance: Option<String>,
    /// Random Euclidean instance with this many vertices.
    #[arg(long, value_name = "N")]
    random: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_ETA)]
    eta: f64,
    #[arg(long, default_value_t = maxent_tsp::fit::DEFAULT_FIT_EPS)]
    fit_eps: f64,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    /// Sampling threads; 0 uses every core.
    #[arg(long, env = "MAXENT_TSP_THREADS", default_value_t = 0)]
    threads: usize,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Sub {
    fn into_config(self) -> RunConfig {
        let (command, o) = match self {
            Sub::Tour(o) => (Command::Tour, o),
            Sub::Atlas(o) => (Command::Atlas, o),
            Sub::Probe(o) => (Command::Probe, o),
            Sub::Lp(o) => (Command::Lp, o),
            Sub::Fit(o) => (Command::Fit, o),
        };
        let instance = match (o.instance, o.random) {
            (Some(text), _) => Some(InstanceSource::parse(&text)),
            (None, Some(n)) => Some(InstanceSource::Random { n, seed: o.seed }),
            (None, None) => None,
        };
        RunConfig {
            command,
            instance,
            eta: o.eta,
            fit_eps: o.fit_eps,
            samples: o.samples,
            seed: o.seed,
            threads: o.threads,
            out: o.out,
        }
    }
}

fn print_summary(report: &RunReport) {
    if let Some(inst) = &report.instance {
        eprintln!("instance {} (n = {})", inst.name, inst.n);
    }
    if let Some(lp) = &report.lp {
        eprintln!("lp objective {:.6}", lp.objective);
    }
    if let Some(fit) = &report.fit {
        eprintln!("fit error {:e} after {} iterations", fit.max_rel_err, fit.iterations);
    }
    if let Some(tour) = &report.tour {
        eprintln!(
            "tour {:.6} ({:?}), tour/lp {:.4}, baseline {:.6}",
            tour.produced.cost, tour.produced_from, tour.ratios.produced_over_lp, tour.baseline.cost
        );
    }
    if let Some(atlas) = &report.atlas {
        eprintln!("atlas {} cuts, {} nodes, {} polygons", atlas.cut_count, atlas.nodes.len(), atlas.polygons.len());
    }
    if let Some(probe) = &report.probe {
        eprintln!("probe {} fixtures, event holds on {}", probe.fixtures.len(), probe.event_fixtures);
    }
    for failure in report.failures() {
        eprintln!("FAILED {}: {}", failure.name, failure.detail);
    }
    eprintln!("{} assertions, {}", report.assertions.len(), if report.passed { "all passed" } else { "some failed" });
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let config = Cli::parse().command.into_config();
    info!("running {}", config.command.name());
    let report = match run(&config) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    print_summary(&report);
    let json = report.to_json();
    match &config.out {
        Some(path) => {
            if let Err(e) = std::fs::write(path, json + "\n") {
                eprintln!("error: writing {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => println!("{json}"),
    }
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
