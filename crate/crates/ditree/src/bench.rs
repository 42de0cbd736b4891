//! Benchmark harness: scenario suites, trial orchestration, summary
//! statistics, ablation sweeps, and SVG rendering of maps, trees and
//! trajectories.
//!
//! A suite is a TOML file (or a directory containing `suite.toml`):
//!
//! ```toml
//! train_map = "maps/train.txt"
//!
//! [[scenario]]
//! label = "corridor"
//! map = "maps/corridor.txt"
//! split = "test"
//! start = [1.5, 1.5, 0.0, 0.0, 0.0, 0.0]
//! goal = [12.0, 8.0]
//! goal_radius = 1.0
//! ```
//!
//! Map paths are resolved relative to the suite file. Test-split scenarios
//! must use maps that differ from `train_map` (checked by file hash).

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::config::AppConfig;
use crate::dynamics::propagate;
use crate::error::{Error, Result};
use crate::grid::{extract_local_patch, load_map_file, OccupancyGrid, RobotGeometry};
use crate::planner::{
    in_goal, plan, PlanResult, PlanStats, PlanStatus, PlanTree, Query, Trajectory,
    UniformSampler,
};
use crate::policy::{build_condition, sample_actions, DiffusionSampler, PolicyNet, Target};
use crate::validate::validate_result;

/// Maximum actions per diffusion-policy rollout before it restarts.
pub const DP_ROLLOUT_CAP: usize = 2048;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rrt,
    Ditree,
    Dp,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "rrt" => Ok(Method::Rrt),
            "ditree" => Ok(Method::Ditree),
            "dp" => Ok(Method::Dp),
            other => Err(Error::Config(format!("unknown method {other:?} (rrt, ditree, dp)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Rrt => "rrt",
            Method::Ditree => "ditree",
            Method::Dp => "dp",
        }
    }

    pub fn needs_weights(self) -> bool {
        !matches!(self, Method::Rrt)
    }

    fn tag(self) -> u64 {
        match self {
            Method::Rrt => 0,
            Method::Ditree => 1,
            Method::Dp => 2,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// One planning problem, with its map loaded and pre-validated.
#[derive(Debug)]
pub struct Scenario {
    pub label: String,
    pub map_path: PathBuf,
    /// SHA-256 of the map file; used for the train/test distinctness check.
    pub map_id: String,
    pub split: Split,
    pub grid: OccupancyGrid,
    pub query: Query,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuiteFile {
    #[serde(default)]
    train_map: Option<String>,
    #[serde(rename = "scenario")]
    scenarios: Vec<ScenarioSpec>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioSpec {
    label: String,
    map: String,
    split: Split,
    start: [f64; 6],
    goal: [f64; 2],
    #[serde(default = "default_goal_radius")]
    goal_radius: f64,
}

fn default_goal_radius() -> f64 {
    1.0
}

/// Load a suite from a TOML file or from a directory containing `suite.toml`.
pub fn load_suite(path: &Path, geom: &RobotGeometry) -> Result<Vec<Scenario>> {
    let file = if path.is_dir() { path.join("suite.toml") } else { path.to_path_buf() };
    let text = std::fs::read_to_string(&file)?;
    let spec: SuiteFile = toml::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", file.display())))?;
    if spec.scenarios.is_empty() {
        return Err(Error::Config(format!("{}: suite has no scenarios", file.display())));
    }
    let base = file.parent().unwrap_or(Path::new("."));
    let train_hash = match &spec.train_map {
        Some(rel) => Some(load_map_file(&base.join(rel))?.1),
        None => None,
    };

    let mut out = Vec::with_capacity(spec.scenarios.len());
    for sc in &spec.scenarios {
        if out.iter().any(|s: &Scenario| s.label == sc.label) {
            return Err(Error::Config(format!("duplicate scenario label {:?}", sc.label)));
        }
        let map_path = base.join(&sc.map);
        let (grid, map_id) = load_map_file(&map_path)?;
        if sc.split == Split::Test && train_hash.as_deref() == Some(map_id.as_str()) {
            return Err(Error::Config(format!(
                "scenario {:?}: test split reuses the training map {}",
                sc.label, sc.map
            )));
        }
        let query = Query {
            start: crate::dynamics::CarState::from_array(sc.start),
            goal: (sc.goal[0], sc.goal[1]),
            goal_radius: sc.goal_radius,
        };
        if !query.start.is_finite() {
            return Err(Error::Config(format!("scenario {:?}: start is not finite", sc.label)));
        }
        if !grid.is_state_free(geom, query.start.pose()) {
            return Err(Error::Config(format!("scenario {:?}: start is in collision", sc.label)));
        }
        if !(query.goal_radius > 0.0) {
            return Err(Error::Config(format!("scenario {:?}: goal radius must be positive", sc.label)));
        }
        out.push(Scenario { label: sc.label.clone(), map_path, map_id, split: sc.split, grid, query });
    }
    Ok(out)
}

/// How trial termination is budgeted. Wall-clock matches the evaluation
/// protocol; an iteration budget makes results machine-independent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Budget {
    Wall(f64),
    Iterations(u64),
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub trials: usize,
    pub budget: Budget,
    pub base_seed: u64,
    /// Worker threads; `None` uses the global pool.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub scenario: String,
    pub method: Method,
    pub seed: u64,
    pub solved: bool,
    pub wall_time_s: f64,
    pub iterations: u64,
    pub length_m: Option<f64>,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Per-trial seed: a function of the base seed and the trial's coordinates
/// only, so records do not depend on execution order.
pub fn trial_seed(base: u64, scenario_idx: usize, method: Method, trial: usize) -> u64 {
    let tag = ((scenario_idx as u64) << 34) ^ (method.tag() << 32) ^ trial as u64;
    splitmix64(base ^ splitmix64(tag))
}

enum MethodRunner {
    Rrt(UniformSampler),
    Ditree(DiffusionSampler),
    Dp(DiffusionSampler),
}

fn build_runner(m: Method, app: &AppConfig, net: Option<&PolicyNet>) -> Result<MethodRunner> {
    match m {
        Method::Rrt => Ok(MethodRunner::Rrt(UniformSampler { params: app.car })),
        Method::Ditree | Method::Dp => {
            let net = net.ok_or_else(|| {
                Error::Config(format!("method {m} needs trained weights (pass --weights)"))
            })?;
            let sampler = DiffusionSampler::new(
                net.clone(),
                app.car,
                app.planner.dt,
                app.sample,
                app.train.patch_size,
                app.train.patch_extent,
            )?;
            Ok(if m == Method::Ditree {
                MethodRunner::Ditree(sampler)
            } else {
                MethodRunner::Dp(sampler)
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub records: Vec<TrialRecord>,
    pub stats: Vec<MethodStats>,
}

fn budgeted_cfg(base: crate::planner::PlannerConfig, budget: Budget, seed: u64) -> crate::planner::PlannerConfig {
    let mut cfg = base;
    (cfg.time_budget, cfg.max_iterations) = match budget {
        Budget::Wall(t) => (t, usize::MAX),
        Budget::Iterations(n) => (f64::INFINITY, n as usize),
    };
    cfg.rng_seed = seed;
    cfg
}

/// Plan one query with one method; the same dispatch the benchmark uses.
/// Returns the tree too when the method builds one.
pub fn run_single(
    method: Method,
    query: &Query,
    grid: &OccupancyGrid,
    geom: &RobotGeometry,
    app: &AppConfig,
    net: Option<&PolicyNet>,
    budget: Budget,
    seed: u64,
) -> Result<(PlanResult, Option<PlanTree>)> {
    app.validate()?;
    let runner = build_runner(method, app, net)?;
    let cfg = budgeted_cfg(app.planner, budget, seed);
    match &runner {
        MethodRunner::Rrt(s) => {
            let (r, t) = crate::planner::plan_with_tree(query, grid, geom, s, &cfg, &app.car)?;
            Ok((r, Some(t)))
        }
        MethodRunner::Ditree(s) => {
            let (r, t) = crate::planner::plan_with_tree(query, grid, geom, s, &cfg, &app.car)?;
            Ok((r, Some(t)))
        }
        MethodRunner::Dp(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = dp_baseline(s, query, grid, geom, budget, DP_ROLLOUT_CAP, &mut rng)?;
            Ok((r, None))
        }
    }
}

/// Run `trials` plans per (scenario, method) pair and aggregate. Every
/// Solved result is re-checked by the independent validator before it is
/// counted; a validation failure aborts the benchmark with an error.
pub fn run_benchmark(
    suite: &[Scenario],
    methods: &[Method],
    opts: &BenchOptions,
    app: &AppConfig,
    net: Option<&PolicyNet>,
    geom: &RobotGeometry,
) -> Result<BenchOutcome> {
    if suite.is_empty() {
        return Err(Error::Config("benchmark suite is empty".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods selected".into()));
    }
    for (i, m) in methods.iter().enumerate() {
        if methods[..i].contains(m) {
            return Err(Error::Config(format!("method {m} listed twice")));
        }
    }
    if opts.trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    app.validate()?;
    let runners: Vec<MethodRunner> =
        methods.iter().map(|&m| build_runner(m, app, net)).collect::<Result<_>>()?;

    let mut descs = Vec::with_capacity(suite.len() * methods.len() * opts.trials);
    for si in 0..suite.len() {
        for mi in 0..methods.len() {
            for ti in 0..opts.trials {
                descs.push((si, mi, ti));
            }
        }
    }

    let run_one = |&(si, mi, ti): &(usize, usize, usize)| -> Result<TrialRecord> {
        let sc = &suite[si];
        let method = methods[mi];
        let seed = trial_seed(opts.base_seed, si, method, ti);
        let cfg = budgeted_cfg(app.planner, opts.budget, seed);
        let result = match &runners[mi] {
            MethodRunner::Rrt(s) => plan(&sc.query, &sc.grid, geom, s, &cfg, &app.car)?,
            MethodRunner::Ditree(s) => plan(&sc.query, &sc.grid, geom, s, &cfg, &app.car)?,
            MethodRunner::Dp(s) => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                dp_baseline(s, &sc.query, &sc.grid, geom, opts.budget, DP_ROLLOUT_CAP, &mut rng)?
            }
        };
        if result.status == PlanStatus::Solved {
            validate_result(&result, &sc.grid, geom, &app.car).map_err(|e| {
                Error::Validation(format!(
                    "scenario {:?} method {} seed {seed}: {e}",
                    sc.label, method
                ))
            })?;
        }
        Ok(TrialRecord {
            scenario: sc.label.clone(),
            method,
            seed,
            solved: result.status == PlanStatus::Solved,
            wall_time_s: result.stats.wall_time_s,
            iterations: result.stats.iterations,
            length_m: result.trajectory.as_ref().map(|t| t.path_length()),
        })
    };

    let records: Result<Vec<TrialRecord>> = match opts.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| descs.par_iter().map(run_one).collect())
        }
        None => descs.par_iter().map(run_one).collect(),
    };
    let records = records?;
    let stats = report_stats(&records);
    Ok(BenchOutcome { records, stats })
}

/// Standalone diffusion-policy baseline: roll the policy out from the start
/// state, always conditioned on the goal, restarting on collision or after
/// `rollout_cap` actions, until the goal disc is reached or the budget runs
/// out. No tree is kept.
pub fn dp_baseline(
    sampler: &DiffusionSampler,
    query: &Query,
    grid: &OccupancyGrid,
    geom: &RobotGeometry,
    budget: Budget,
    rollout_cap: usize,
    rng: &mut ChaCha8Rng,
) -> Result<PlanResult> {
    if !grid.is_state_free(geom, query.start.pose()) {
        return Err(Error::InvalidQuery("start state is in collision".into()));
    }
    let clock = Instant::now();
    let mut stats = PlanStats::default();
    let h = sampler.h();
    let target = Target::Goal(query.goal.0, query.goal.1);
    let dt = sampler.dt;

    let finish = |status: PlanStatus,
                  trajectory: Option<Trajectory>,
                  mut stats: PlanStats|
     -> Result<PlanResult> {
        stats.wall_time_s = clock.elapsed().as_secs_f64();
        Ok(PlanResult { status, trajectory, stats, query: *query })
    };

    if in_goal(&query.start, query.goal, query.goal_radius) {
        let t = Trajectory { states: vec![query.start], actions: vec![], dt };
        return finish(PlanStatus::Solved, Some(t), stats);
    }

    'rollout: loop {
        let mut states = vec![query.start];
        let mut actions = Vec::new();
        let mut cur = query.start;
        while actions.len() < rollout_cap {
            match budget {
                Budget::Wall(t) => {
                    if clock.elapsed().as_secs_f64() > t {
                        return finish(PlanStatus::Timeout, None, stats);
                    }
                }
                Budget::Iterations(n) => {
                    if stats.iterations >= n {
                        return finish(PlanStatus::IterationLimit, None, stats);
                    }
                }
            }
            stats.iterations += 1;
            stats.sampler_calls += 1;
            let patch = extract_local_patch(grid, cur.pose(), sampler.patch_size, sampler.patch_extent);
            let cond = build_condition(&cur, &target, &patch, &sampler.params);
            let chunk =
                sample_actions(&sampler.net, &cond, &sampler.sample_cfg, &sampler.norm, &sampler.params, rng)?;
            debug_assert_eq!(chunk.len(), h);
            let seg = propagate(&cur, &chunk, dt, &sampler.params)?;
            for (k, s) in seg.iter().enumerate().skip(1) {
                stats.collision_checks += 1;
                if !grid.is_state_free(geom, s.pose()) {
                    continue 'rollout;
                }
                if in_goal(s, query.goal, query.goal_radius) {
                    states.extend_from_slice(&seg[1..=k]);
                    actions.extend_from_slice(&chunk[..k]);
                    let t = Trajectory { states, actions, dt };
                    return finish(PlanStatus::Solved, Some(t), stats);
                }
            }
            states.extend_from_slice(&seg[1..]);
            actions.extend_from_slice(&chunk);
            cur = *seg.last().unwrap();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodStats {
    pub scenario: String,
    pub method: Method,
    pub trials: usize,
    pub successes: usize,
    pub rate_pct: f64,
    pub rt_mean_s: Option<f64>,
    pub rt_std_s: Option<f64>,
    pub len_mean_m: Option<f64>,
    pub len_rel_rrt: Option<f64>,
}

/// Welford online mean and population standard deviation.
fn mean_std(xs: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (mut n, mut mean, mut m2) = (0.0f64, 0.0f64, 0.0f64);
    for x in xs {
        n += 1.0;
        let d = x - mean;
        mean += d / n;
        m2 += d * (x - mean);
    }
    if n == 0.0 {
        None
    } else {
        Some((mean, (m2 / n).sqrt()))
    }
}

/// Aggregate per-trial records into one row per (scenario, method), in
/// first-appearance order. Runtime and length statistics cover successful
/// trials only; they are `None` when there were no successes. The relative
/// length is defined only when the method and the RRT baseline both
/// succeeded at least once on the scenario.
pub fn report_stats(records: &[TrialRecord]) -> Vec<MethodStats> {
    let mut keys: Vec<(String, Method)> = Vec::new();
    for r in records {
        let key = (r.scenario.clone(), r.method);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out: Vec<MethodStats> = keys
        .into_iter()
        .map(|(scenario, method)| {
            let rs: Vec<&TrialRecord> =
                records.iter().filter(|r| r.scenario == scenario && r.method == method).collect();
            let trials = rs.len();
            let successes = rs.iter().filter(|r| r.solved).count();
            let rt = mean_std(rs.iter().filter(|r| r.solved).map(|r| r.wall_time_s));
            let len = mean_std(rs.iter().filter(|r| r.solved).filter_map(|r| r.length_m));
            MethodStats {
                scenario,
                method,
                trials,
                successes,
                rate_pct: 100.0 * successes as f64 / trials as f64,
                rt_mean_s: rt.map(|(m, _)| m),
                rt_std_s: rt.map(|(_, s)| s),
                len_mean_m: len.map(|(m, _)| m),
                len_rel_rrt: None,
            }
        })
        .collect();
    for i in 0..out.len() {
        let rrt_len = out
            .iter()
            .find(|s| s.scenario == out[i].scenario && s.method == Method::Rrt)
            .and_then(|s| s.len_mean_m);
        out[i].len_rel_rrt = match (out[i].len_mean_m, rrt_len) {
            (Some(a), Some(b)) if b > 0.0 => Some(a / b),
            _ => None,
        };
    }
    out
}

fn fmt_opt(v: Option<f64>, decimals: usize) -> String {
    match v {
        Some(x) => format!("{x:.decimals$}"),
        None => "--".into(),
    }
}

/// Render the report as CSV. Wall-time columns are omitted when
/// `include_runtime` is false (iteration-budget mode), keeping the output
/// byte-reproducible.
pub fn report_csv(stats: &[MethodStats], include_runtime: bool) -> String {
    let mut s = String::new();
    if include_runtime {
        s.push_str("scenario,method,trials,successes,rate_pct,rt_mean_s,rt_std_s,len_mean_m,len_rel_rrt\n");
    } else {
        s.push_str("scenario,method,trials,successes,rate_pct,len_mean_m,len_rel_rrt\n");
    }
    for r in stats {
        if include_runtime {
            s.push_str(&format!(
                "{},{},{},{},{:.1},{},{},{},{}\n",
                r.scenario,
                r.method,
                r.trials,
                r.successes,
                r.rate_pct,
                fmt_opt(r.rt_mean_s, 3),
                fmt_opt(r.rt_std_s, 3),
                fmt_opt(r.len_mean_m, 3),
                fmt_opt(r.len_rel_rrt, 3),
            ));
        } else {
            s.push_str(&format!(
                "{},{},{},{},{:.1},{},{}\n",
                r.scenario,
                r.method,
                r.trials,
                r.successes,
                r.rate_pct,
                fmt_opt(r.len_mean_m, 3),
                fmt_opt(r.len_rel_rrt, 3),
            ));
        }
    }
    s
}

/// Per-trial records as CSV (one row per plan run).
pub fn trials_csv(records: &[TrialRecord], include_runtime: bool) -> String {
    let mut s = String::new();
    if include_runtime {
        s.push_str("scenario,method,seed,solved,iterations,length_m,wall_time_s\n");
    } else {
        s.push_str("scenario,method,seed,solved,iterations,length_m\n");
    }
    for r in records {
        if include_runtime {
            s.push_str(&format!(
                "{},{},{},{},{},{},{:.3}\n",
                r.scenario,
                r.method,
                r.seed,
                r.solved,
                r.iterations,
                fmt_opt(r.length_m, 3),
                r.wall_time_s,
            ));
        } else {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.scenario,
                r.method,
                r.seed,
                r.solved,
                r.iterations,
                fmt_opt(r.length_m, 3),
            ));
        }
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationKind {
    DenoiseK,
    PropN,
    Dgb,
}

impl AblationKind {
    pub fn parse(s: &str) -> Result<AblationKind> {
        match s {
            "denoise_K" => Ok(AblationKind::DenoiseK),
            "prop_N" => Ok(AblationKind::PropN),
            "dgb" => Ok(AblationKind::Dgb),
            other => Err(Error::Config(format!(
                "unknown ablation kind {other:?} (denoise_K, prop_N, dgb)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            AblationKind::DenoiseK => "denoise_K",
            AblationKind::PropN => "prop_N",
            AblationKind::Dgb => "dgb",
        }
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub value: f64,
    pub trials: usize,
    pub successes: usize,
    pub rate_pct: f64,
    pub rt_mean_s: Option<f64>,
    pub len_mean_m: Option<f64>,
}

fn apply_ablation(kind: AblationKind, value: f64, cfg: &mut AppConfig, h: usize) -> Result<()> {
    let as_count = |v: f64, what: &str| -> Result<usize> {
        if v.fract() != 0.0 || v < 1.0 || v > 1e9 {
            return Err(Error::Config(format!("{what} must be a positive integer, got {v}")));
        }
        Ok(v as usize)
    };
    match kind {
        AblationKind::DenoiseK => cfg.sample.k = as_count(value, "denoise_K")?,
        AblationKind::PropN => {
            let n = as_count(value, "prop_N")?;
            if n % h != 0 {
                return Err(Error::Config(format!(
                    "prop_N {n} is not a multiple of the policy chunk H = {h}"
                )));
            }
            cfg.planner.n_actions = n;
        }
        AblationKind::Dgb => {
            if !(0.0..=1.0).contains(&value) {
                return Err(Error::Config(format!("dgb must lie in [0,1], got {value}")));
            }
            cfg.sample.dgb = value;
        }
    }
    cfg.validate()
}

/// Sweep one policy parameter over `values`, running the tree planner with
/// the learned sampler for each setting and aggregating across the whole
/// suite.
pub fn ablate(
    kind: AblationKind,
    values: &[f64],
    suite: &[Scenario],
    opts: &BenchOptions,
    app: &AppConfig,
    net: &PolicyNet,
    geom: &RobotGeometry,
) -> Result<Vec<AblationRow>> {
    if values.is_empty() {
        return Err(Error::Config("ablation needs at least one value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = app.clone();
        apply_ablation(kind, v, &mut cfg, net.h)?;
        let outcome = run_benchmark(suite, &[Method::Ditree], opts, &cfg, Some(net), geom)?;
        let trials = outcome.records.len();
        let successes = outcome.records.iter().filter(|r| r.solved).count();
        let rt = mean_std(outcome.records.iter().filter(|r| r.solved).map(|r| r.wall_time_s));
        let len = mean_std(outcome.records.iter().filter(|r| r.solved).filter_map(|r| r.length_m));
        rows.push(AblationRow {
            value: v,
            trials,
            successes,
            rate_pct: 100.0 * successes as f64 / trials as f64,
            rt_mean_s: rt.map(|(m, _)| m),
            len_mean_m: len.map(|(m, _)| m),
        });
    }
    Ok(rows)
}

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v}")
    }
}

pub fn ablation_csv(kind: AblationKind, rows: &[AblationRow], include_runtime: bool) -> String {
    let mut s = String::new();
    if include_runtime {
        s.push_str(&format!("{kind},trials,successes,rate_pct,rt_mean_s,len_mean_m\n"));
    } else {
        s.push_str(&format!("{kind},trials,successes,rate_pct,len_mean_m\n"));
    }
    for r in rows {
        if include_runtime {
            s.push_str(&format!(
                "{},{},{},{:.1},{},{}\n",
                fmt_value(r.value),
                r.trials,
                r.successes,
                r.rate_pct,
                fmt_opt(r.rt_mean_s, 3),
                fmt_opt(r.len_mean_m, 3),
            ));
        } else {
            s.push_str(&format!(
                "{},{},{},{:.1},{}\n",
                fmt_value(r.value),
                r.trials,
                r.successes,
                r.rate_pct,
                fmt_opt(r.len_mean_m, 3),
            ));
        }
    }
    s
}

/// Success-rate curve for an ablation sweep. With `runtime_axis` the x axis
/// is mean runtime (success-rate-vs-runtime curve); otherwise the swept
/// value itself is used, which keeps the plot meaningful in
/// iteration-budget mode.
pub fn ablation_svg(kind: AblationKind, rows: &[AblationRow], runtime_axis: bool) -> String {
    let (w, h) = (600.0, 400.0);
    let (ml, mr, mt, mb) = (70.0, 25.0, 40.0, 55.0);
    let points: Vec<(f64, f64, f64)> = rows
        .iter()
        .filter_map(|r| {
            let x = if runtime_axis { r.rt_mean_s? } else { r.value };
            Some((x, r.rate_pct, r.value))
        })
        .collect();
    let (mut x0, mut x1) = points
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    if points.is_empty() {
        (x0, x1) = (0.0, 1.0);
    } else if x0 == x1 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - y / 100.0 * (h - mt - mb);

    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n"
    ));
    s.push_str(&format!("<rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"#ffffff\"/>\n"));
    let xlabel = if runtime_axis { "mean runtime (s)" } else { "value" };
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{} sweep</text>\n",
        w / 2.0,
        kind
    ));
    // axes
    s.push_str(&format!(
        "<line x1=\"{ml:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#000\"/>\n",
        h - mb,
        w - mr,
        h - mb
    ));
    s.push_str(&format!(
        "<line x1=\"{ml:.1}\" y1=\"{mt:.1}\" x2=\"{ml:.1}\" y2=\"{:.1}\" stroke=\"#000\"/>\n",
        h - mb
    ));
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{xlabel}</text>\n",
        (ml + w - mr) / 2.0,
        h - 14.0
    ));
    s.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">success rate (%)</text>\n",
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0
    ));
    for (label, y) in [("0", 0.0), ("50", 50.0), ("100", 100.0)] {
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{label}</text>\n",
            ml - 6.0,
            sy(y) + 4.0
        ));
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{ml:.1}\" y2=\"{:.1}\" stroke=\"#000\"/>\n",
            ml - 4.0,
            sy(y),
            sy(y)
        ));
    }
    for (label, x) in [(format!("{x0:.3}"), x0), (format!("{x1:.3}"), x1)] {
        s.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>\n",
            sx(x),
            h - mb + 18.0
        ));
    }
    if points.len() > 1 {
        let pts: Vec<String> =
            points.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        s.push_str(&format!(
            "<polyline class=\"curve\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }
    for p in &points {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#1f77b4\"/>\n",
            sx(p.0),
            sy(p.1)
        ));
        s.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            sx(p.0),
            sy(p.1) - 9.0,
            fmt_value(p.2)
        ));
    }
    s.push_str("</svg>\n");
    s
}

const PLOT_SCALE: f64 = 40.0; // pixels per meter

/// Render a map with optional tree, solution and query markers as SVG. The
/// output is a pure function of the inputs: identical input produces
/// byte-identical SVG.
pub fn render_svg(
    grid: &OccupancyGrid,
    query: Option<&Query>,
    tree: Option<&PlanTree>,
    solution: Option<&Trajectory>,
) -> Result<String> {
    let (min_x, min_y, max_x, max_y) = grid.bounds();
    let s = PLOT_SCALE;
    let (w, h) = ((max_x - min_x) * s, (max_y - min_y) * s);
    let px = |x: f64| (x - min_x) * s;
    let py = |y: f64| (max_y - y) * s; // flip: SVG y grows downward

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n"
    ));
    out.push_str(&format!("<rect width=\"{w:.0}\" height=\"{h:.0}\" fill=\"#ffffff\"/>\n"));

    let cell = grid.cell_size();
    let origin = grid.origin();
    for cy in 0..grid.height_cells() {
        for cx in 0..grid.width_cells() {
            if grid.is_occupied_cell(cx, cy) {
                let x0 = origin.0 + cx as f64 * cell;
                let y1 = origin.1 + (cy + 1) as f64 * cell;
                out.push_str(&format!(
                    "<rect class=\"obstacle\" x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#3a3a3a\"/>\n",
                    px(x0),
                    py(y1),
                    cell * s,
                    cell * s
                ));
            }
        }
    }

    if let Some(tree) = tree {
        for id in 1..tree.len() as u32 {
            let states = tree.edge_states(id)?;
            let pts: Vec<String> =
                states.iter().map(|st| format!("{:.2},{:.2}", px(st.x), py(st.y))).collect();
            out.push_str(&format!(
                "<polyline class=\"edge\" fill=\"none\" stroke=\"#8ab4d8\" stroke-width=\"1\" points=\"{}\"/>\n",
                pts.join(" ")
            ));
        }
    }

    if let Some(t) = solution {
        if t.states.len() >= 2 {
            let pts: Vec<String> =
                t.states.iter().map(|st| format!("{:.2},{:.2}", px(st.x), py(st.y))).collect();
            out.push_str(&format!(
                "<polyline class=\"solution\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"3\" points=\"{}\"/>\n",
                pts.join(" ")
            ));
        }
    }

    if let Some(q) = query {
        out.push_str(&format!(
            "<circle class=\"goal-region\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#ff7f0e\" stroke-width=\"2\"/>\n",
            px(q.goal.0),
            py(q.goal.1),
            q.goal_radius * s
        ));
        out.push_str(&format!(
            "<circle class=\"goal\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#ff7f0e\"/>\n",
            px(q.goal.0),
            py(q.goal.1)
        ));
        out.push_str(&format!(
            "<circle class=\"start\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"5\" fill=\"#2ca02c\"/>\n",
            px(q.start.x),
            py(q.start.y)
        ));
    }

    out.push_str("</svg>\n");
    Ok(out)
}

/// Render and write an SVG plot.
pub fn emit_plot(
    grid: &OccupancyGrid,
    query: Option<&Query>,
    tree: Option<&PlanTree>,
    solution: Option<&Trajectory>,
    path: &Path,
) -> Result<()> {
    let svg = render_svg(grid, query, tree, solution)?;
    std::fs::write(path, svg)?;
    Ok(())
}
