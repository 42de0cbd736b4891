use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use ditree::bench::{
    ablate, ablation_csv, ablation_svg, emit_plot, load_suite, report_csv, run_benchmark,
    run_single, trials_csv, AblationKind, BenchOptions, Budget, Method,
};
use ditree::config::AppConfig;
use ditree::dynamics::CarState;
use ditree::error::{Error, Result};
use ditree::expert::{generate_dataset, Dataset};
use ditree::grid::{load_map_file, RobotGeometry};
use ditree::planner::{PlanResult, PlanStatus, Query};
use ditree::policy::{build_training_samples, condition_dim, train, PolicyNet};
use ditree::validate::validate_result;

#[derive(Parser)]
#[command(name = "ditree", version, about = "Kinodynamic tree planning with a flow-matching action sampler")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate an expert dataset (A* + path tracking) on a map
    GenData {
        /// Map file
        #[arg(long)]
        map: PathBuf,
        /// Number of start/goal queries to attempt
        #[arg(long)]
        queries: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset file; a .toml metadata sidecar is written next to it
        #[arg(long)]
        out: PathBuf,
        /// Run configuration (TOML); defaults are used when omitted
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train the flow-matching policy on a dataset
    Train {
        /// Dataset file written by gen-data
        #[arg(long)]
        data: PathBuf,
        /// Map the dataset was generated on (checked by hash)
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output weights file; the resolved config is written to <out>.toml
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a single query on a map
    Plan {
        #[arg(long)]
        map: PathBuf,
        /// rrt, ditree or dp
        #[arg(long)]
        method: String,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Wall-clock budget in seconds
        #[arg(long, default_value_t = 30.0)]
        budget: f64,
        /// Use an iteration budget instead of the wall clock
        #[arg(long)]
        deterministic: bool,
        /// Iteration budget in --deterministic mode
        #[arg(long, default_value_t = 2000)]
        iterations: u64,
        /// Where to write the result (JSON)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Optional tree/trajectory plot (SVG)
        #[arg(long)]
        plot: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Start state "x,y,psi,v,d,delta"; defaults to the map's S marker
        #[arg(long)]
        start: Option<String>,
        /// Goal "x,y"; defaults to the map's G marker
        #[arg(long)]
        goal: Option<String>,
    },
    /// Run a benchmark suite and write a CSV report
    Bench {
        /// Suite TOML file, or a directory containing suite.toml
        #[arg(long)]
        suite: PathBuf,
        /// Comma-separated subset of rrt,ditree,dp
        #[arg(long, value_delimiter = ',', default_value = "rrt,ditree")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Wall-clock budget per trial in seconds
        #[arg(long, default_value_t = 30.0)]
        budget: f64,
        /// Budget by iteration count instead of wall clock; the report then
        /// omits wall-time columns and is byte-reproducible
        #[arg(long)]
        deterministic: bool,
        /// Iteration budget per trial in --deterministic mode
        #[arg(long, default_value_t = 2000)]
        iterations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads (defaults to all cores)
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Report CSV path; per-trial records go to <report>.trials.csv
        #[arg(long)]
        report: PathBuf,
    },
    /// Sweep one policy parameter and report success-rate curves
    Ablate {
        /// denoise_K, prop_N or dgb
        #[arg(long)]
        kind: String,
        /// Comma-separated values to sweep
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        suite: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        #[arg(long, default_value_t = 30.0)]
        budget: f64,
        #[arg(long)]
        deterministic: bool,
        #[arg(long, default_value_t = 2000)]
        iterations: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output stem; writes <out>.csv and <out>.svg
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a saved plan result over its map as SVG
    Plot {
        #[arg(long)]
        map: PathBuf,
        /// Result JSON written by `plan --out`
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Weights sidecar: `<weights>.toml` next to the weights file.
fn sidecar_path(weights: &Path) -> PathBuf {
    let mut os = weights.as_os_str().to_os_string();
    os.push(".toml");
    PathBuf::from(os)
}

/// Resolve the run configuration: explicit --config wins, then the weights
/// sidecar written by `train`, then built-in defaults.
fn resolve_config(config: &Option<PathBuf>, weights: &Option<PathBuf>) -> Result<AppConfig> {
    if let Some(c) = config {
        return AppConfig::load(c);
    }
    if let Some(w) = weights {
        let sc = sidecar_path(w);
        if sc.exists() {
            return AppConfig::load(&sc);
        }
    }
    Ok(AppConfig::default())
}

fn parse_floats(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::Config(format!("{what}: {e}")))?;
    if vals.len() != n {
        return Err(Error::Config(format!("{what} needs {n} comma-separated numbers")));
    }
    Ok(vals)
}

fn build_query(
    grid: &ditree::grid::OccupancyGrid,
    start: &Option<String>,
    goal: &Option<String>,
    goal_radius: f64,
) -> Result<Query> {
    let start = match start {
        Some(s) => {
            let v = parse_floats(s, 6, "--start")?;
            CarState::new(v[0], v[1], v[2], v[3], v[4], v[5])
        }
        None => {
            let (x, y) = grid.start_hint().ok_or_else(|| {
                Error::Config("map has no start marker; pass --start x,y,psi,v,d,delta".into())
            })?;
            CarState::new(x, y, 0.0, 0.0, 0.0, 0.0)
        }
    };
    let goal = match goal {
        Some(g) => {
            let v = parse_floats(g, 2, "--goal")?;
            (v[0], v[1])
        }
        None => grid
            .goal_hint()
            .ok_or_else(|| Error::Config("map has no goal marker; pass --goal x,y".into()))?,
    };
    Ok(Query { start, goal, goal_radius })
}

fn pick_budget(deterministic: bool, budget: f64, iterations: u64) -> Budget {
    if deterministic {
        Budget::Iterations(iterations)
    } else {
        Budget::Wall(budget)
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|s| Method::parse(s)).collect()
}

/// TOML-safe copy for sidecars: TOML integers are i64.
fn toml_safe(app: &AppConfig) -> AppConfig {
    let mut c = app.clone();
    c.planner.max_iterations = c.planner.max_iterations.min(i64::MAX as usize);
    c
}

#[derive(Serialize)]
struct DatasetMeta<'a> {
    map: String,
    map_sha256: &'a str,
    queries: usize,
    seed: u64,
    trajectories: usize,
    config: AppConfig,
}

fn cmd_gen_data(map: &Path, queries: usize, seed: u64, out: &Path, config: &Option<PathBuf>) -> Result<()> {
    let app = resolve_config(config, &None)?;
    let geom = RobotGeometry::default_car();
    let (grid, hash) = load_map_file(map)?;
    let ds = generate_dataset(&grid, &hash, queries, seed, &geom, &app.car, &app.gen)?;
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    ds.save(out)?;
    let meta = DatasetMeta {
        map: map.display().to_string(),
        map_sha256: &hash,
        queries,
        seed,
        trajectories: ds.trajectories.len(),
        config: toml_safe(&app),
    };
    let meta_text = toml::to_string_pretty(&meta)
        .map_err(|e| Error::Config(format!("metadata serialize error: {e}")))?;
    std::fs::write(sidecar_path(out), meta_text)?;
    let steps: usize = ds.trajectories.iter().map(|t| t.actions.len()).sum();
    println!(
        "wrote {} trajectories ({steps} steps) from {queries} queries to {}",
        ds.trajectories.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(data: &Path, map: &Path, config: &Option<PathBuf>, out: &Path) -> Result<()> {
    let mut app = resolve_config(config, &None)?;
    let geom = RobotGeometry::default_car();
    let (grid, hash) = load_map_file(map)?;
    let ds = Dataset::load(data)?;
    if ds.trajectories.iter().any(|t| t.map_id != hash) {
        return Err(Error::Config(format!(
            "dataset {} was generated on a different map than {}",
            data.display(),
            map.display()
        )));
    }
    let samples = build_training_samples(&ds, &grid, &geom, &app.car, &app.train)?;
    app.sample.norm = Some(ds.norm); // the sidecar must pin what the targets were scaled by
    println!("training on {} windows from {} trajectories", samples.len(), ds.trajectories.len());
    let (net, losses) = train(&samples, condition_dim(app.train.patch_size), &app.train)?;
    let per_epoch = samples.len().div_ceil(app.train.batch_size).max(1);
    for (e, chunk) in losses.chunks(per_epoch).enumerate() {
        if e % 5 == 0 || e + 1 == app.train.epochs {
            let mean = chunk.iter().sum::<f64>() / chunk.len() as f64;
            println!("epoch {:>3}  loss {mean:.4}", e + 1);
        }
    }
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    net.save(out)?;
    std::fs::write(sidecar_path(out), toml_safe(&app).to_toml_string()?)?;
    let tail = losses.iter().rev().take(50).sum::<f64>() / losses.len().min(50).max(1) as f64;
    println!(
        "saved {} parameters to {} (final loss ~ {tail:.4})",
        net.parameter_count(),
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_plan(
    map: &Path,
    method: &str,
    weights: &Option<PathBuf>,
    seed: u64,
    budget: Budget,
    out: &Option<PathBuf>,
    plot: &Option<PathBuf>,
    config: &Option<PathBuf>,
    start: &Option<String>,
    goal: &Option<String>,
) -> Result<()> {
    let method = Method::parse(method)?;
    let app = resolve_config(config, weights)?;
    let geom = RobotGeometry::default_car();
    let (grid, _) = load_map_file(map)?;
    let net = match weights {
        Some(w) => Some(PolicyNet::load(w)?),
        None => None,
    };
    let query = build_query(&grid, start, goal, app.planner.goal_radius)?;
    let (result, tree) = run_single(method, &query, &grid, &geom, &app, net.as_ref(), budget, seed)?;
    if result.status == PlanStatus::Solved {
        validate_result(&result, &grid, &geom, &app.car)?;
    }
    match (&result.status, &result.trajectory) {
        (PlanStatus::Solved, Some(t)) => println!(
            "{method}: solved in {:.3} s / {} iterations; {} actions, {:.2} m",
            result.stats.wall_time_s,
            result.stats.iterations,
            t.actions.len(),
            t.path_length()
        ),
        _ => println!(
            "{method}: {:?} after {:.3} s / {} iterations",
            result.status, result.stats.wall_time_s, result.stats.iterations
        ),
    }
    if let Some(out) = out {
        std::fs::write(out, result.to_json())?;
        println!("result written to {}", out.display());
    }
    if let Some(plot_path) = plot {
        emit_plot(&grid, Some(&query), tree.as_ref(), result.trajectory.as_ref(), plot_path)?;
        println!("plot written to {}", plot_path.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    suite: &Path,
    methods: &[String],
    trials: usize,
    budget: Budget,
    seed: u64,
    workers: Option<usize>,
    weights: &Option<PathBuf>,
    config: &Option<PathBuf>,
    report: &Path,
) -> Result<()> {
    let methods = parse_methods(methods)?;
    let app = resolve_config(config, weights)?;
    let geom = RobotGeometry::default_car();
    let net = match weights {
        Some(w) => Some(PolicyNet::load(w)?),
        None => None,
    };
    let scenarios = load_suite(suite, &geom)?;
    let opts = BenchOptions { trials, budget, base_seed: seed, workers };
    let outcome = run_benchmark(&scenarios, &methods, &opts, &app, net.as_ref(), &geom)?;
    let include_runtime = matches!(budget, Budget::Wall(_));
    let csv = report_csv(&outcome.stats, include_runtime);
    if let Some(dir) = report.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(report, &csv)?;
    let mut trials_path = report.as_os_str().to_os_string();
    trials_path.push(".trials.csv");
    std::fs::write(&trials_path, trials_csv(&outcome.records, include_runtime))?;
    print!("{csv}");
    println!("report written to {}", report.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    kind: &str,
    values: &[f64],
    suite: &Path,
    weights: &Path,
    trials: usize,
    budget: Budget,
    seed: u64,
    workers: Option<usize>,
    config: &Option<PathBuf>,
    out: &Path,
) -> Result<()> {
    let kind = AblationKind::parse(kind)?;
    let app = resolve_config(config, &Some(weights.to_path_buf()))?;
    let geom = RobotGeometry::default_car();
    let net = PolicyNet::load(weights)?;
    let scenarios = load_suite(suite, &geom)?;
    let opts = BenchOptions { trials, budget, base_seed: seed, workers };
    let rows = ablate(kind, values, &scenarios, &opts, &app, &net, &geom)?;
    let include_runtime = matches!(budget, Budget::Wall(_));
    let csv = ablation_csv(kind, &rows, include_runtime);
    let svg = ablation_svg(kind, &rows, include_runtime);
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(out.with_extension("csv"), &csv)?;
    std::fs::write(out.with_extension("svg"), svg)?;
    print!("{csv}");
    println!("sweep written to {} and {}", out.with_extension("csv").display(), out.with_extension("svg").display());
    Ok(())
}

fn cmd_plot(map: &Path, result: &Path, out: &Path) -> Result<()> {
    let (grid, _) = load_map_file(map)?;
    let text = std::fs::read_to_string(result)?;
    let result = PlanResult::from_json(&text)?;
    emit_plot(&grid, Some(&result.query), None, result.trajectory.as_ref(), out)?;
    println!("plot written to {}", out.display());
    Ok(())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.cmd {
        Cmd::GenData { map, queries, seed, out, config } => {
            cmd_gen_data(map, *queries, *seed, out, config)
        }
        Cmd::Train { data, map, config, out } => cmd_train(data, map, config, out),
        Cmd::Plan {
            map,
            method,
            weights,
            seed,
            budget,
            deterministic,
            iterations,
            out,
            plot,
            config,
            start,
            goal,
        } => cmd_plan(
            map,
            method,
            weights,
            *seed,
            pick_budget(*deterministic, *budget, *iterations),
            out,
            plot,
            config,
            start,
            goal,
        ),
        Cmd::Bench {
            suite,
            methods,
            trials,
            budget,
            deterministic,
            iterations,
            seed,
            workers,
            weights,
            config,
            report,
        } => cmd_bench(
            suite,
            methods,
            *trials,
            pick_budget(*deterministic, *budget, *iterations),
            *seed,
            *workers,
            weights,
            config,
            report,
        ),
        Cmd::Ablate {
            kind,
            values,
            suite,
            weights,
            trials,
            budget,
            deterministic,
            iterations,
            seed,
            workers,
            config,
            out,
        } => cmd_ablate(
            kind,
            values,
            suite,
            weights,
            *trials,
            pick_budget(*deterministic, *budget, *iterations),
            *seed,
            *workers,
            config,
            out,
        ),
        Cmd::Plot { map, result, out } => cmd_plot(map, result, out),
    }
}

fn main() {
    if let Err(e) = real_main() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
