//! End-to-end acceptance checks. Each numbered criterion prints exactly one
//! PASS/FAIL line; the test fails if any criterion does. The heavyweight
//! benchmark experiments run once and feed several criteria.

use std::path::{Path, PathBuf};
use std::process::Command;

use ditree::bench::{
    ablate, load_suite, run_benchmark, AblationKind, BenchOptions, BenchOutcome, Budget, Method,
    TrialRecord,
};
use ditree::config::AppConfig;
use ditree::dynamics::{propagate, CarAction, CarParams, CarState};
use ditree::expert::{astar, path_cost};
use ditree::grid::{OccupancyGrid, Pose, RobotGeometry};
use ditree::policy::{
    condition_dim, fm_loss, sample_chunk_normalized, train, PolicyNet, SampleConfig, SampleMode,
    TrainConfig, TrainSample,
};
use ditree::spatial::{MetricWeights, StateIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn assets() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("assets")
}

fn weights_path() -> PathBuf {
    assets().join("weights/policy.fmw")
}

struct Criterion {
    id: usize,
    name: &'static str,
    ok: bool,
    detail: String,
}

fn rate(records: &[TrialRecord], method: Method) -> f64 {
    let (mut n, mut s) = (0usize, 0usize);
    for r in records.iter().filter(|r| r.method == method) {
        n += 1;
        s += r.solved as usize;
    }
    100.0 * s as f64 / n.max(1) as f64
}

// --- criterion 2: success monotone in the iteration budget, high at the top

fn completeness_trend(
    suite: &[ditree::bench::Scenario],
    app: &AppConfig,
    net: &PolicyNet,
    geom: &RobotGeometry,
) -> (Criterion, usize) {
    let budgets = [200u64, 1000, 5000];
    let mut trials = 0usize;
    let mut detail = String::new();
    let mut ok = true;
    let mut rates = vec![Vec::new(); 2];
    for &iters in &budgets {
        let opts = BenchOptions {
            trials: 50,
            budget: Budget::Iterations(iters),
            base_seed: 11,
            workers: None,
        };
        match run_benchmark(suite, &[Method::Rrt, Method::Ditree], &opts, app, Some(net), geom) {
            Ok(out) => {
                trials += out.records.len();
                rates[0].push(rate(&out.records, Method::Rrt));
                rates[1].push(rate(&out.records, Method::Ditree));
            }
            Err(e) => {
                return (
                    Criterion {
                        id: 2,
                        name: "completeness trend",
                        ok: false,
                        detail: format!("benchmark failed: {e}"),
                    },
                    trials,
                );
            }
        }
    }
    for (m, r) in [("rrt", &rates[0]), ("ditree", &rates[1])] {
        if !(r[0] <= r[1] && r[1] <= r[2]) {
            ok = false;
        }
        if r[2] < 95.0 {
            ok = false;
        }
        detail.push_str(&format!("{m} {:.0}/{:.0}/{:.0}% ", r[0], r[1], r[2]));
    }
    detail.push_str("at 200/1000/5000 iterations");
    (Criterion { id: 2, name: "completeness trend", ok, detail }, trials)
}

// --- criteria 3 and 4 share one desk-suite run

fn headline_and_length(
    suite: &[ditree::bench::Scenario],
    app: &AppConfig,
    net: &PolicyNet,
    geom: &RobotGeometry,
) -> (Criterion, Criterion, usize) {
    let opts =
        BenchOptions { trials: 10, budget: Budget::Wall(30.0), base_seed: 23, workers: None };
    let out: BenchOutcome =
        match run_benchmark(suite, &[Method::Rrt, Method::Ditree], &opts, app, Some(net), geom) {
            Ok(out) => out,
            Err(e) => {
                let fail = |id, name| Criterion {
                    id,
                    name,
                    ok: false,
                    detail: format!("benchmark failed: {e}"),
                };
                return (fail(3, "headline success gap"), fail(4, "relative length"), 0);
            }
        };
    let trials = out.records.len();
    let r_rrt = rate(&out.records, Method::Rrt);
    let r_dit = rate(&out.records, Method::Ditree);
    let c3 = Criterion {
        id: 3,
        name: "headline success gap",
        ok: r_dit >= r_rrt + 15.0,
        detail: format!("ditree {r_dit:.0}% vs rrt {r_rrt:.0}% over {} scenarios", suite.len()),
    };
    let ratios: Vec<f64> = out
        .stats
        .iter()
        .filter(|s| s.method == Method::Ditree)
        .filter_map(|s| s.len_rel_rrt)
        .collect();
    let mean_ratio = ratios.iter().sum::<f64>() / ratios.len().max(1) as f64;
    let c4 = Criterion {
        id: 4,
        name: "relative length",
        ok: !ratios.is_empty() && mean_ratio <= 0.85,
        detail: if ratios.is_empty() {
            "no scenario solved by both methods".to_string()
        } else {
            format!("mean len/rrt {:.2} over {} scenarios solved by both", mean_ratio, ratios.len())
        },
    };
    (c3, c4, trials)
}

// --- criterion 5: K = 1 at least matches K = 8 under the same wall clock

fn denoise_ablation(
    suite: &[ditree::bench::Scenario],
    app: &AppConfig,
    net: &PolicyNet,
    geom: &RobotGeometry,
) -> (Criterion, usize) {
    let opts =
        BenchOptions { trials: 10, budget: Budget::Wall(10.0), base_seed: 31, workers: None };
    match ablate(AblationKind::DenoiseK, &[1.0, 8.0], suite, &opts, app, net, geom) {
        Ok(rows) => {
            let trials: usize = rows.iter().map(|r| r.trials).sum();
            let (k1, k8) = (rows[0].rate_pct, rows[1].rate_pct);
            (
                Criterion {
                    id: 5,
                    name: "denoise-step ordering",
                    ok: k1 >= k8 - 5.0,
                    detail: format!("K=1 {k1:.0}% vs K=8 {k8:.0}% at equal wall clock"),
                },
                trials,
            )
        }
        Err(e) => (
            Criterion {
                id: 5,
                name: "denoise-step ordering",
                ok: false,
                detail: format!("ablation failed: {e}"),
            },
            0,
        ),
    }
}

// --- criterion 6: flow-matching machinery

fn synthetic_samples(h: usize, cd: usize) -> Vec<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    (0..6)
        .map(|_| TrainSample {
            u1: (0..2 * h).map(|_| rng.gen_range(-0.9..0.9)).collect(),
            cond: (0..cd).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        })
        .collect()
}

fn fm_correctness() -> Criterion {
    let mut detail = Vec::new();
    let mut ok = true;

    // (a) analytic vs central-difference gradients on a 2-layer net.
    let (h, cd) = (2usize, condition_dim(3));
    let batch = synthetic_samples(h, cd);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut net =
        PolicyNet::random(&[PolicyNet::input_dim(h, cd), 8, 2 * h], h, cd, 0.8, &mut rng).unwrap();
    let loss_at = |net: &PolicyNet, batch: &[TrainSample]| -> f64 {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        fm_loss(net, batch, &mut r).unwrap().0
    };
    let analytic = {
        let mut r = ChaCha8Rng::seed_from_u64(7);
        fm_loss(&net, &batch, &mut r).unwrap().1.flatten()
    };
    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut flat_index = 0usize;
    for li in 0..net.layers.len() {
        let nw = net.layers[li].w.len();
        let nb = net.layers[li].b.len();
        for pi in 0..nw + nb {
            let read = |net: &mut PolicyNet, v: f64| {
                if pi < nw {
                    net.layers[li].w[pi] += v;
                } else {
                    net.layers[li].b[pi - nw] += v;
                }
            };
            read(&mut net, eps);
            let up = loss_at(&net, &batch);
            read(&mut net, -2.0 * eps);
            let down = loss_at(&net, &batch);
            read(&mut net, eps);
            let num = (up - down) / (2.0 * eps);
            let ana = analytic[flat_index];
            let rel = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-6);
            worst = worst.max(rel);
            flat_index += 1;
        }
    }
    if worst >= 1e-4 {
        ok = false;
    }
    detail.push(format!("grad rel err {worst:.1e}"));

    // (b) a two-mode action distribution stays two-mode through the sampler.
    let cd1 = condition_dim(3);
    let cond = vec![0.0; cd1];
    let mut samples = Vec::new();
    for i in 0..120 {
        let sign = if i % 2 == 0 { 0.7 } else { -0.7 };
        samples.push(TrainSample { u1: vec![sign, sign], cond: cond.clone() });
    }
    let tcfg = TrainConfig {
        h: 1,
        hidden: vec![32, 32],
        epochs: 300,
        batch_size: 16,
        learning_rate: 3e-3,
        patch_size: 3,
        ..TrainConfig::default()
    };
    let (mode_net, _) = train(&samples, cd1, &tcfg).unwrap();
    let scfg = SampleConfig { k: 16, mode: SampleMode::Ode, final_noise: 0.0, ..SampleConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let (mut lo, mut hi) = (0usize, 0usize);
    for _ in 0..1000 {
        let u = sample_chunk_normalized(&mode_net, &cond, &scfg, &mut rng).unwrap();
        if u[0] + u[1] > 0.0 {
            hi += 1;
        } else {
            lo += 1;
        }
    }
    if lo < 200 || hi < 200 {
        ok = false;
    }
    detail.push(format!("modes {lo}/{hi}"));

    // (c) on a constant field the Euler chain is exact for any K.
    let mut cnet = PolicyNet::zeros(&[PolicyNet::input_dim(1, cd1), 2], 1, cd1).unwrap();
    cnet.layers[0].b = vec![0.31, -0.47];
    let run = |k: usize| {
        let cfg = SampleConfig { k, mode: SampleMode::Ode, final_noise: 0.0, ..SampleConfig::default() };
        let mut r = ChaCha8Rng::seed_from_u64(44);
        sample_chunk_normalized(&cnet, &cond, &cfg, &mut r).unwrap()
    };
    let (one, eight) = (run(1), run(8));
    let kdiff = one.iter().zip(&eight).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
    if kdiff > 1e-12 {
        ok = false;
    }
    detail.push(format!("K-invariance gap {kdiff:.1e}"));

    Criterion { id: 6, name: "flow matching", ok, detail: detail.join(", ") }
}

// --- criterion 7: the sampler has full support over the action square

fn full_support() -> Criterion {
    let cd = condition_dim(3);
    let net = PolicyNet::zeros(&[PolicyNet::input_dim(1, cd), 2], 1, cd).unwrap();
    let cond = vec![0.0; cd];
    let cfg = SampleConfig {
        k: 4,
        mode: SampleMode::Sde,
        sde_noise_scale: 0.5,
        final_noise: 0.1,
        ..SampleConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut hit = [false; 64];
    let mut draws = 0usize;
    for i in 0..100_000 {
        let u = sample_chunk_normalized(&net, &cond, &cfg, &mut rng).unwrap();
        let cx = (((u[0] + 1.0) / 0.25) as usize).min(7);
        let cy = (((u[1] + 1.0) / 0.25) as usize).min(7);
        hit[cy * 8 + cx] = true;
        draws = i + 1;
        if hit.iter().all(|h| *h) {
            break;
        }
    }
    let covered = hit.iter().filter(|h| **h).count();
    Criterion {
        id: 7,
        name: "full support",
        ok: covered == 64,
        detail: format!("{covered}/64 cells after {draws} draws"),
    }
}

// --- criterion 8: dynamics fidelity

fn dynamics_fidelity() -> Criterion {
    let p = CarParams::default();
    let mut detail = Vec::new();
    let mut ok = true;

    // Rest is an exact equilibrium: zero velocity, zero drive, zero input.
    let rest = CarState::zeros();
    let seg = propagate(&rest, &vec![CarAction::zero(); 50], 0.1, &p).unwrap();
    let still = seg.iter().all(|s| s.to_array() == rest.to_array());
    if !still {
        ok = false;
    }
    detail.push(format!("rest {}", if still { "exact" } else { "drifts" }));

    // Coasting decays monotonically toward rest without crossing zero.
    let coast = CarState::new(0.0, 0.0, 0.0, 2.0, 0.0, 0.0);
    let seg = propagate(&coast, &vec![CarAction::zero(); 400], 0.1, &p).unwrap();
    let mono = seg.windows(2).all(|w| w[1].v <= w[0].v && w[1].v >= 0.0);
    let settled = seg.last().unwrap().v < 1e-3;
    if !mono || !settled {
        ok = false;
    }
    detail.push(format!("coast v_end {:.1e}", seg.last().unwrap().v));

    // Richardson: halving dt should shrink the step error by ~2^4.
    let s0 = CarState::new(0.0, 0.0, 0.2, 1.5, 0.3, 0.1);
    let a = CarAction::new(0.5, 0.3);
    let end = |n: usize| {
        let dt = 0.4 / n as f64;
        *propagate(&s0, &vec![a; n], dt, &p).unwrap().last().unwrap()
    };
    let (c1, c2, c4) = (end(4), end(8), end(16));
    let err = |a: &CarState, b: &CarState| {
        a.to_array().iter().zip(b.to_array()).map(|(x, y)| (x - y).abs()).fold(0.0f64, f64::max)
    };
    let order = (err(&c1, &c2) / err(&c2, &c4)).log2();
    if !(order >= 3.0) {
        ok = false;
    }
    detail.push(format!("observed order {order:.2}"));

    // Rotating the start rotates the whole rollout.
    let phi = 0.7f64;
    let (sin, cos) = phi.sin_cos();
    let a_seq: Vec<CarAction> =
        (0..40).map(|i| CarAction::new((i % 5) as f64 * 0.2 - 0.4, 0.3 - (i % 3) as f64 * 0.2)).collect();
    let base = CarState::new(1.0, -2.0, 0.4, 1.0, 0.2, -0.1);
    let rot = CarState::new(
        cos * base.x - sin * base.y,
        sin * base.x + cos * base.y,
        base.psi + phi,
        base.v,
        base.d,
        base.delta,
    );
    let t1 = propagate(&base, &a_seq, 0.1, &p).unwrap();
    let t2 = propagate(&rot, &a_seq, 0.1, &p).unwrap();
    let mut gap = 0.0f64;
    for (u, w) in t1.iter().zip(&t2) {
        gap = gap.max((cos * u.x - sin * u.y - w.x).abs());
        gap = gap.max((sin * u.x + cos * u.y - w.y).abs());
        gap = gap.max((u.psi + phi - w.psi).abs());
        gap = gap.max((u.v - w.v).abs().max((u.d - w.d).abs()).max((u.delta - w.delta).abs()));
    }
    if gap > 1e-9 {
        ok = false;
    }
    detail.push(format!("rotation gap {gap:.1e}"));

    Criterion { id: 8, name: "dynamics fidelity", ok, detail: detail.join(", ") }
}

// --- criterion 9: oracle equivalences

fn dijkstra_cost(grid: &OccupancyGrid, start: (usize, usize), goal: (usize, usize)) -> Option<f64> {
    let (w, h) = (grid.width_cells(), grid.height_cells());
    let idx = |c: (usize, usize)| c.1 * w + c.0;
    let free = |x: isize, y: isize| {
        x >= 0
            && y >= 0
            && (x as usize) < w
            && (y as usize) < h
            && !grid.is_occupied_cell(x as usize, y as usize)
    };
    if !free(start.0 as isize, start.1 as isize) || !free(goal.0 as isize, goal.1 as isize) {
        return None;
    }
    let mut dist = vec![f64::INFINITY; w * h];
    let mut done = vec![false; w * h];
    dist[idx(start)] = 0.0;
    loop {
        let mut u = usize::MAX;
        let mut best = f64::INFINITY;
        for (i, d) in dist.iter().enumerate() {
            if !done[i] && *d < best {
                best = *d;
                u = i;
            }
        }
        if u == usize::MAX {
            return None;
        }
        done[u] = true;
        let c = (u % w, u / w);
        if c == goal {
            return Some(dist[u]);
        }
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let (nx, ny) = (c.0 as isize + dx, c.1 as isize + dy);
                if !free(nx, ny) {
                    continue;
                }
                if dx != 0
                    && dy != 0
                    && (!free(c.0 as isize + dx, c.1 as isize) || !free(c.0 as isize, c.1 as isize + dy))
                {
                    continue;
                }
                let step = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
                let v = idx((nx as usize, ny as usize));
                if dist[u] + step < dist[v] {
                    dist[v] = dist[u] + step;
                }
            }
        }
    }
}

fn oracle_equivalences() -> Criterion {
    let mut ok = true;
    let mut detail = Vec::new();

    // Nearest-neighbour index against a linear scan.
    let w = MetricWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut index = StateIndex::new();
    let mut stored = Vec::new();
    let random_state = |rng: &mut ChaCha8Rng| {
        CarState::new(
            rng.gen_range(0.0..20.0),
            rng.gen_range(0.0..20.0),
            rng.gen_range(-3.1..3.1),
            rng.gen_range(-1.0..3.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-0.4..0.4),
        )
    };
    for _ in 0..1000 {
        let s = random_state(&mut rng);
        index.insert(&s);
        stored.push(s);
    }
    let mut nn_bad = 0usize;
    for _ in 0..100 {
        let q = random_state(&mut rng);
        let got = w.dist2(index.state(index.nearest(&q, &w).unwrap()), &q);
        let want = stored.iter().map(|s| w.dist2(s, &q)).fold(f64::INFINITY, f64::min);
        if got != want {
            nn_bad += 1;
        }
    }
    if nn_bad > 0 {
        ok = false;
    }
    detail.push(format!("nn mismatches {nn_bad}/100"));

    // A* against Dijkstra on random maps.
    let mut astar_bad = 0usize;
    let mut checked = 0usize;
    while checked < 200 {
        let (gw, gh) = (rng.gen_range(8..24), rng.gen_range(8..24));
        let occ: Vec<bool> = (0..gw * gh).map(|_| rng.gen_bool(0.25)).collect();
        let grid = OccupancyGrid::new(gw, gh, 1.0, (0.0, 0.0), occ).unwrap();
        let start = (rng.gen_range(0..gw), rng.gen_range(0..gh));
        let goal = (rng.gen_range(0..gw), rng.gen_range(0..gh));
        if grid.is_occupied_cell(start.0, start.1) || grid.is_occupied_cell(goal.0, goal.1) {
            continue;
        }
        checked += 1;
        let want = dijkstra_cost(&grid, start, goal);
        let got = astar(&grid, start, goal).map(|p| path_cost(&p));
        match (got, want) {
            (None, None) => {}
            (Some(a), Some(b)) if (a - b).abs() <= 1e-9 * b.max(1.0) => {}
            _ => astar_bad += 1,
        }
    }
    if astar_bad > 0 {
        ok = false;
    }
    detail.push(format!("a* mismatches {astar_bad}/200"));

    // Sphere-set collision checking against a Monte-Carlo point oracle.
    let geom = RobotGeometry::default_car();
    let tau = 2.0 * 0.5 / (100_000f64).sqrt();
    let mut mc_bad = 0usize;
    let mut tested = 0usize;
    'outer: for g in 0..8 {
        let occ: Vec<bool> = (0..14 * 14).map(|_| rng.gen_bool(0.2)).collect();
        let grid = OccupancyGrid::new(14, 14, 0.5, (0.0, 0.0), occ).unwrap();
        for _ in 0..40 {
            let pose = Pose::new(
                rng.gen_range(0.5..6.5),
                rng.gen_range(0.5..6.5),
                rng.gen_range(-3.1..3.1),
            );
            let margin = grid.clearance(&geom, pose);
            if margin.abs() <= tau {
                continue;
            }
            tested += 1;
            let mut any_occupied = false;
            let (sin, cos) = pose.psi.sin_cos();
            for s in &geom.spheres {
                let cx = pose.x + cos * s.offset_x - sin * s.offset_y;
                let cy = pose.y + sin * s.offset_x + cos * s.offset_y;
                for _ in 0..100_000 / 2 {
                    let r = s.radius * rng.gen_range(0.0f64..1.0).sqrt();
                    let a = rng.gen_range(0.0..std::f64::consts::TAU);
                    if grid.is_occupied_world(cx + r * a.cos(), cy + r * a.sin()) {
                        any_occupied = true;
                        break;
                    }
                }
            }
            let free = grid.is_state_free(&geom, pose);
            if free != (margin > 0.0) || free == any_occupied {
                mc_bad += 1;
            }
            if tested >= 120 {
                break 'outer;
            }
        }
        let _ = g;
    }
    if mc_bad > 0 {
        ok = false;
    }
    detail.push(format!("collision mismatches {mc_bad}/{tested}"));

    Criterion { id: 9, name: "oracle equivalences", ok, detail: detail.join(", ") }
}

// --- criterion 10: the CLI reproduces reports byte for byte

fn determinism(dir: &Path) -> Criterion {
    let bin = env!("CARGO_BIN_EXE_ditree");
    let suite = assets().join("suites/uturn.toml");
    let run = |tag: &str| -> Result<(Vec<u8>, Vec<u8>), String> {
        let report = dir.join(format!("det_{tag}.csv"));
        let st = Command::new(bin)
            .args([
                "bench",
                "--suite",
                suite.to_str().unwrap(),
                "--methods",
                "rrt,ditree",
                "--trials",
                "10",
                "--deterministic",
                "--iterations",
                "600",
                "--seed",
                "99",
                "--weights",
                weights_path().to_str().unwrap(),
                "--report",
                report.to_str().unwrap(),
            ])
            .output()
            .map_err(|e| e.to_string())?;
        if !st.status.success() {
            return Err(String::from_utf8_lossy(&st.stderr).into_owned());
        }
        let a = std::fs::read(&report).map_err(|e| e.to_string())?;
        let mut trials = report.into_os_string();
        trials.push(".trials.csv");
        let b = std::fs::read(&trials).map_err(|e| e.to_string())?;
        Ok((a, b))
    };
    match (run("a"), run("b")) {
        (Ok((r1, t1)), Ok((r2, t2))) => {
            let ok = r1 == r2 && t1 == t2;
            Criterion {
                id: 10,
                name: "deterministic reports",
                ok,
                detail: if ok {
                    format!("two runs, {} report bytes identical", r1.len())
                } else {
                    "reports differ between runs".to_string()
                },
            }
        }
        (Err(e), _) | (_, Err(e)) => Criterion {
            id: 10,
            name: "deterministic reports",
            ok: false,
            detail: format!("bench run failed: {}", e.lines().last().unwrap_or("")),
        },
    }
}

#[test]
fn acceptance() {
    let geom = RobotGeometry::default_car();
    let app = AppConfig::load(&weights_path().with_extension("fmw.toml"))
        .expect("weights sidecar config");
    let net = PolicyNet::load(&weights_path()).expect("shipped policy weights");
    let uturn = load_suite(&assets().join("suites/uturn.toml"), &geom).unwrap();
    let desk = load_suite(&assets().join("suites/desk.toml"), &geom).unwrap();
    let tmp = std::env::temp_dir().join(format!("ditree-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&tmp).unwrap();

    let mut validated = 0usize;
    let mut results = Vec::new();

    let (c2, n) = completeness_trend(&uturn, &app, &net, &geom);
    validated += n;
    results.push(c2);
    let (c3, c4, n) = headline_and_length(&desk, &app, &net, &geom);
    validated += n;
    results.push(c3);
    results.push(c4);
    let (c5, n) = denoise_ablation(&desk, &app, &net, &geom);
    validated += n;
    results.push(c5);

    // Top up the validated-trial count with cheap deterministic runs; every
    // solved trial inside run_benchmark passes the independent re-check or
    // the call errors out.
    for (suite, trials, iters, seed) in
        [(&uturn, 500usize, 600u64, 71u64), (&desk, 120, 300, 72)]
    {
        let opts = BenchOptions {
            trials,
            budget: Budget::Iterations(iters),
            base_seed: seed,
            workers: None,
        };
        match run_benchmark(suite, &[Method::Rrt], &opts, &app, None, &geom) {
            Ok(out) => validated += out.records.len(),
            Err(e) => results.push(Criterion {
                id: 1,
                name: "safety gate",
                ok: false,
                detail: format!("bulk run failed: {e}"),
            }),
        }
    }
    if !results.iter().any(|c| c.id == 1) {
        results.push(Criterion {
            id: 1,
            name: "safety gate",
            ok: validated >= 1500,
            detail: format!("{validated} trials, every solved result re-validated"),
        });
    }

    results.push(fm_correctness());
    results.push(full_support());
    results.push(dynamics_fidelity());
    results.push(oracle_equivalences());
    results.push(determinism(&tmp));

    results.sort_by_key(|c| c.id);
    let mut failures = Vec::new();
    for c in &results {
        println!(
            "criterion {:>2} [{}] {} — {}",
            c.id,
            if c.ok { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
        if !c.ok {
            failures.push(format!("criterion {} ({}): {}", c.id, c.name, c.detail));
        }
    }
    let _ = std::fs::remove_dir_all(&tmp);
    assert!(failures.is_empty(), "failed acceptance criteria:\n{}", failures.join("\n"));
}
