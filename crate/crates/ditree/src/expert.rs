//! Expert-data pipeline: grid A* planning, a pure-pursuit tracking
//! controller that turns cell paths into dynamically feasible trajectories,
//! clearance filtering of training windows, and the `DKD1` dataset file.
//!
//! All persisted quantities (start state, controls, dt, goal) are quantized
//! to f32 at generation time, so a dataset survives the f32 file round trip
//! and replays bit-exactly from the stored values.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate_step, propagate, wrap_angle, CarAction, CarParams, CarState};
use crate::error::{Error, Result};
use crate::grid::{OccupancyGrid, RobotGeometry};
use crate::policy::ActionNorm;

/// Grid cell address (cx, cy).
pub type Cell = (usize, usize);

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Round through f32 so the value is exactly representable in the dataset
/// file format.
fn quant(x: f64) -> f64 {
    x as f32 as f64
}

// ---------------------------------------------------------------------------
// A*
// ---------------------------------------------------------------------------

/// The eight neighbor offsets, cardinal moves first.
const STEPS: [(isize, isize); 8] =
    [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

fn cell_at(grid: &OccupancyGrid, cx: isize, cy: isize) -> Option<Cell> {
    if cx < 0 || cy < 0 || cx as usize >= grid.width_cells() || cy as usize >= grid.height_cells() {
        None
    } else {
        Some((cx as usize, cy as usize))
    }
}

/// Free 8-connected successors of `c` with step costs. A diagonal move is
/// allowed only when both adjacent cardinal cells are free, so a disc robot
/// never has to cut a corner of an occupied cell.
fn successors(grid: &OccupancyGrid, c: Cell, out: &mut Vec<(Cell, f64)>) {
    out.clear();
    for &(dx, dy) in &STEPS {
        let Some(n) = cell_at(grid, c.0 as isize + dx, c.1 as isize + dy) else { continue };
        if grid.is_occupied_cell(n.0, n.1) {
            continue;
        }
        if dx != 0 && dy != 0 {
            let side_a = cell_at(grid, c.0 as isize + dx, c.1 as isize);
            let side_b = cell_at(grid, c.0 as isize, c.1 as isize + dy);
            let blocked = |s: Option<Cell>| s.map_or(true, |(x, y)| grid.is_occupied_cell(x, y));
            if blocked(side_a) || blocked(side_b) {
                continue;
            }
            out.push((n, SQRT_2));
        } else {
            out.push((n, 1.0));
        }
    }
}

/// Octile distance in cells: admissible and consistent for unit/√2 costs.
fn octile(a: Cell, b: Cell) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
    hi + (SQRT_2 - 1.0) * lo
}

/// Total-ordered heap key: (priority, insertion counter). The counter makes
/// expansion order — and therefore the returned path — deterministic.
#[derive(PartialEq)]
struct Key(f64, u64);

impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// 8-connected A* over free cells with the octile heuristic. Returns a
/// minimum-cost cell path from `start` to `goal`, or `None` when the goal is
/// unreachable (or either endpoint is occupied / out of bounds).
pub fn astar(grid: &OccupancyGrid, start: Cell, goal: Cell) -> Option<Vec<Cell>> {
    let (w, h) = (grid.width_cells(), grid.height_cells());
    if start.0 >= w || start.1 >= h || goal.0 >= w || goal.1 >= h {
        return None;
    }
    if grid.is_occupied_cell(start.0, start.1) || grid.is_occupied_cell(goal.0, goal.1) {
        return None;
    }
    if start == goal {
        return Some(vec![start]);
    }
    let idx = |c: Cell| c.1 * w + c.0;
    let mut g = vec![f64::INFINITY; w * h];
    let mut parent: Vec<Option<Cell>> = vec![None; w * h];
    let mut closed = vec![false; w * h];
    let mut heap: BinaryHeap<Reverse<(Key, Cell)>> = BinaryHeap::new();
    let mut counter = 0u64;
    let mut nbrs = Vec::with_capacity(8);

    g[idx(start)] = 0.0;
    heap.push(Reverse((Key(octile(start, goal), counter), start)));
    while let Some(Reverse((_, c))) = heap.pop() {
        if closed[idx(c)] {
            continue;
        }
        closed[idx(c)] = true;
        if c == goal {
            let mut path = vec![c];
            let mut cur = c;
            while let Some(p) = parent[idx(cur)] {
                path.push(p);
                cur = p;
            }
            path.reverse();
            return Some(path);
        }
        let gc = g[idx(c)];
        successors(grid, c, &mut nbrs);
        for &(n, step) in &nbrs {
            let cand = gc + step;
            if cand < g[idx(n)] {
                g[idx(n)] = cand;
                parent[idx(n)] = Some(c);
                counter += 1;
                heap.push(Reverse((Key(cand + octile(n, goal), counter), n)));
            }
        }
    }
    None
}

/// Cost of a cell path under the unit/√2 step metric.
pub fn path_cost(path: &[Cell]) -> f64 {
    path.windows(2)
        .map(|w| if w[0].0 != w[1].0 && w[0].1 != w[1].1 { SQRT_2 } else { 1.0 })
        .sum()
}

// ---------------------------------------------------------------------------
// Tracking controller
// ---------------------------------------------------------------------------

/// Pure-pursuit + PD gains for the expert tracker. Everything the controller
/// uses is declared here so a dataset is reproducible from its config.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackingGains {
    /// Pure-pursuit lookahead distance in meters.
    pub lookahead: f64,
    /// Cruise speed setpoint in m/s.
    pub v_set: f64,
    /// Distance from the goal at which the speed setpoint starts shrinking.
    pub slowdown_radius: f64,
    /// Minimum speed setpoint so the car still creeps into the goal.
    pub v_floor: f64,
    /// Success radius around the final waypoint, meters.
    pub goal_tolerance: f64,
    pub kp_steer: f64,
    pub kd_steer: f64,
    pub kp_speed: f64,
    pub kd_speed: f64,
    /// Rate gain pushing the drive command toward its setpoint.
    pub kp_drive: f64,
    /// Hard cap on tracking steps before the attempt is abandoned.
    pub max_steps: usize,
}

impl Default for TrackingGains {
    fn default() -> Self {
        // The drive is strong (a unit of D is worth ~c_m1/m ≈ 50 m/s²), so
        // the speed loop leans on the feedforward term. Both rate loops
        // must stay well inside discrete-time stability (k·dt < 1) or the
        // recorded actions chatter between the saturation rails, which
        // makes them useless as imitation targets: the speed crossover is
        // kept near 2 rad/s (kp_speed·c_m1/m) with the drive lag an octave
        // above it.
        Self {
            lookahead: 0.8,
            v_set: 1.0,
            slowdown_radius: 1.0,
            v_floor: 0.15,
            goal_tolerance: 0.3,
            kp_steer: 6.0,
            kd_steer: 0.05,
            kp_speed: 0.045,
            kd_speed: 0.01,
            kp_drive: 6.0,
            max_steps: 2000,
        }
    }
}

impl TrackingGains {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.lookahead, self.v_set, self.goal_tolerance, self.slowdown_radius];
        if pos.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config(
                "lookahead, v_set, slowdown_radius and goal_tolerance must be positive".into(),
            ));
        }
        let gains = [self.kp_steer, self.kd_steer, self.kp_speed, self.kd_speed, self.kp_drive];
        if gains.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("controller gains must be finite and non-negative".into()));
        }
        if self.v_floor < 0.0 || !self.v_floor.is_finite() {
            return Err(Error::Config("v_floor must be non-negative".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Drive command that holds speed `v` in steady state (motor force equals
/// rolling + quadratic drag).
fn drive_feedforward(v: f64, p: &CarParams) -> f64 {
    let denom = p.c_m1 - p.c_m2 * v;
    if denom.abs() < 1e-6 {
        return 0.0;
    }
    ((p.c_r2 * v * v + p.c_r0 * (p.c_r3 * v).tanh()) / denom).clamp(p.d_min, p.d_max)
}

/// Point at arc distance `lookahead` ahead of the projection of `p` onto the
/// polyline; clamps to the final vertex when the path runs out.
fn lookahead_point(pts: &[(f64, f64)], p: (f64, f64), lookahead: f64) -> (f64, f64) {
    debug_assert!(pts.len() >= 2);
    // Closest point on the polyline (earliest segment wins ties).
    let mut best = (f64::INFINITY, 0usize, 0.0f64);
    for i in 0..pts.len() - 1 {
        let (ax, ay) = pts[i];
        let (bx, by) = pts[i + 1];
        let (ex, ey) = (bx - ax, by - ay);
        let len2 = ex * ex + ey * ey;
        let t = if len2 > 0.0 { (((p.0 - ax) * ex + (p.1 - ay) * ey) / len2).clamp(0.0, 1.0) } else { 0.0 };
        let (qx, qy) = (ax + t * ex, ay + t * ey);
        let d2 = (p.0 - qx).powi(2) + (p.1 - qy).powi(2);
        if d2 < best.0 {
            best = (d2, i, t);
        }
    }
    // Walk `lookahead` meters forward from the projection.
    let (_, mut seg, mut t) = best;
    let mut remaining = lookahead;
    loop {
        let (ax, ay) = pts[seg];
        let (bx, by) = pts[seg + 1];
        let seg_len = ((bx - ax).powi(2) + (by - ay).powi(2)).sqrt();
        let left = seg_len * (1.0 - t);
        if remaining <= left || seg + 2 == pts.len() {
            let adv = if seg_len > 0.0 { (t + remaining / seg_len).min(1.0) } else { 1.0 };
            return (ax + adv * (bx - ax), ay + adv * (by - ay));
        }
        remaining -= left;
        seg += 1;
        t = 0.0;
    }
}

/// One dynamically feasible demonstration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertTrajectory {
    /// Identifier of the map this was collected on (the map file hash).
    pub map_id: String,
    /// Goal position in meters.
    pub goal: (f64, f64),
    /// Visited states; `states.len() == actions.len() + 1`.
    pub states: Vec<CarState>,
    /// Applied rate commands.
    pub actions: Vec<CarAction>,
    /// Integration step, seconds.
    pub dt: f64,
}

impl ExpertTrajectory {
    /// Re-integrate the stored controls from the stored initial state.
    pub fn replay(&self, params: &CarParams) -> Result<Vec<CarState>> {
        if self.actions.is_empty() {
            return Ok(vec![self.states[0]]);
        }
        propagate(&self.states[0], &self.actions, self.dt, params)
    }

    /// Check the trajectory invariants: exact replay through the dynamics,
    /// every state collision-free, final position within `tol` of the goal.
    pub fn check(
        &self,
        grid: &OccupancyGrid,
        geom: &RobotGeometry,
        params: &CarParams,
        tol: f64,
    ) -> Result<()> {
        if self.states.len() != self.actions.len() + 1 {
            return Err(Error::Dataset("state/action length mismatch".into()));
        }
        let replayed = self.replay(params)?;
        if replayed != self.states {
            return Err(Error::Dataset("stored states do not replay".into()));
        }
        for s in &self.states {
            if !grid.is_state_free(geom, s.pose()) {
                return Err(Error::Dataset("stored state in collision".into()));
            }
        }
        let last = self.states.last().unwrap();
        let dist = ((last.x - self.goal.0).powi(2) + (last.y - self.goal.1).powi(2)).sqrt();
        if dist > tol {
            return Err(Error::Dataset(format!("final state {dist:.3} m from goal")));
        }
        Ok(())
    }
}

/// Track a cell path with pure-pursuit steering and PD rate loops. The start
/// state sits at the path head facing the second waypoint; success means
/// reaching the final waypoint within `gains.goal_tolerance`. Collisions and
/// the step limit abort the attempt.
pub fn track_path(
    path: &[Cell],
    grid: &OccupancyGrid,
    geom: &RobotGeometry,
    params: &CarParams,
    gains: &TrackingGains,
    dt: f64,
    map_id: &str,
) -> Result<ExpertTrajectory> {
    gains.validate()?;
    params.validate()?;
    if path.is_empty() {
        return Err(Error::Dataset("empty cell path".into()));
    }
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Config("dt must be positive".into()));
    }
    let dt = quant(dt);
    let pts: Vec<(f64, f64)> = path.iter().map(|&(cx, cy)| grid.cell_center(cx, cy)).collect();
    let (gx, gy) = *pts.last().unwrap();
    let goal = (quant(gx), quant(gy));
    let psi0 = if pts.len() >= 2 {
        quant(wrap_angle((pts[1].1 - pts[0].1).atan2(pts[1].0 - pts[0].0)))
    } else {
        0.0
    };
    let start = CarState::new(quant(pts[0].0), quant(pts[0].1), psi0, 0.0, 0.0, 0.0);
    if !grid.is_state_free(geom, start.pose()) {
        return Err(Error::Dataset("start pose in collision".into()));
    }
    let mut traj = ExpertTrajectory {
        map_id: map_id.to_string(),
        goal,
        states: vec![start],
        actions: Vec::new(),
        dt,
    };
    if pts.len() == 1 {
        return Ok(traj);
    }

    let mut cur = start;
    let mut prev_e_delta = 0.0;
    let mut prev_e_v = 0.0;
    let mut have_prev = false;
    for step in 0..gains.max_steps {
        let dist_goal = ((cur.x - goal.0).powi(2) + (cur.y - goal.1).powi(2)).sqrt();
        if dist_goal <= gains.goal_tolerance {
            return Ok(traj);
        }
        // Pure pursuit: chase a point `lookahead` meters down the path. The
        // chord curvature 2·sin(α)/L_d maps to a steering setpoint through
        // the yaw-rate gain c2 (ψ̇ = v·c2·δ).
        let (lx, ly) = lookahead_point(&pts, (cur.x, cur.y), gains.lookahead);
        let alpha = wrap_angle((ly - cur.y).atan2(lx - cur.x) - cur.psi);
        let kappa = 2.0 * alpha.sin() / gains.lookahead;
        let delta_set = (kappa / params.c2).clamp(params.delta_min, params.delta_max);
        let e_delta = delta_set - cur.delta;
        let v_des = (gains.v_set * (dist_goal / gains.slowdown_radius).min(1.0)).max(gains.v_floor);
        let e_v = v_des - cur.v;
        let (de_delta, de_v) = if have_prev {
            ((e_delta - prev_e_delta) / dt, (e_v - prev_e_v) / dt)
        } else {
            (0.0, 0.0)
        };
        let ddelta = (gains.kp_steer * e_delta + gains.kd_steer * de_delta)
            .clamp(-params.ddelta_max, params.ddelta_max);
        let d_set = (drive_feedforward(v_des, params)
            + gains.kp_speed * e_v
            + gains.kd_speed * de_v)
            .clamp(params.d_min, params.d_max);
        let dd = (gains.kp_drive * (d_set - cur.d)).clamp(-params.dd_max, params.dd_max);
        let a = CarAction::new(quant(dd), quant(ddelta));
        let next = integrate_step(&cur, &a, dt, params)?;
        if !grid.is_state_free(geom, next.pose()) {
            return Err(Error::Dataset(format!("collision at step {step}")));
        }
        traj.states.push(next);
        traj.actions.push(a);
        prev_e_delta = e_delta;
        prev_e_v = e_v;
        have_prev = true;
        cur = next;
    }
    Err(Error::Dataset(format!("step limit {} reached", gains.max_steps)))
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

/// A collection of expert trajectories plus the action normalization and the
/// generation seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectories: Vec<ExpertTrajectory>,
    pub norm: ActionNorm,
    pub seed: u64,
}

/// Training-window start indices for one trajectory: every `stride`-th index
/// with a full H-action window remaining, kept only when the robot body at
/// the window's first state clears obstacles by more than `clearance`.
pub fn allowed_window_starts(
    traj: &ExpertTrajectory,
    grid: &OccupancyGrid,
    geom: &RobotGeometry,
    clearance: f64,
    h: usize,
    stride: usize,
) -> Vec<usize> {
    let stride = stride.max(1);
    if h == 0 || traj.actions.len() < h {
        return Vec::new();
    }
    (0..=traj.actions.len() - h)
        .step_by(stride)
        .filter(|&s| grid.clearance(geom, traj.states[s].pose()) > clearance)
        .collect()
}

/// Drop trajectories that contribute no training window: shorter than H+1
/// states, or with every window start within `clearance` of an obstacle.
pub fn filter_dataset(
    ds: &Dataset,
    grid: &OccupancyGrid,
    geom: &RobotGeometry,
    clearance: f64,
    h: usize,
    stride: usize,
) -> Dataset {
    let trajectories = ds
        .trajectories
        .iter()
        .filter(|t| !allowed_window_starts(t, grid, geom, clearance, h, stride).is_empty())
        .cloned()
        .collect();
    Dataset { trajectories, norm: ds.norm, seed: ds.seed }
}

/// Dilate occupancy by `r` cells (Chebyshev distance); cells outside the
/// grid count as occupied. Used for query sampling and A* only, so expert
/// paths keep a margin from walls that the cell-center waypoints would
/// otherwise hug; tracking still collision-checks the real map.
pub fn inflate_grid(grid: &OccupancyGrid, r: usize) -> OccupancyGrid {
    if r == 0 {
        return grid.clone();
    }
    let (w, h) = (grid.width_cells(), grid.height_cells());
    let mut occ = vec![false; w * h];
    let ri = r as isize;
    for cy in 0..h as isize {
        for cx in 0..w as isize {
            let mut hit = false;
            'scan: for dy in -ri..=ri {
                for dx in -ri..=ri {
                    let (nx, ny) = (cx + dx, cy + dy);
                    if nx < 0
                        || ny < 0
                        || nx >= w as isize
                        || ny >= h as isize
                        || grid.is_occupied_cell(nx as usize, ny as usize)
                    {
                        hit = true;
                        break 'scan;
                    }
                }
            }
            occ[cy as usize * w + cx as usize] = hit;
        }
    }
    OccupancyGrid::new(w, h, grid.cell_size(), grid.origin(), occ).expect("source grid was valid")
}

/// Everything `generate_dataset` needs besides the map and the car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub dt: f64,
    pub gains: TrackingGains,
    /// Clearance threshold used when filtering training windows.
    pub clearance: f64,
    /// Action-chunk length the windows are sized for.
    pub h: usize,
    /// Window stride.
    pub stride: usize,
    /// Minimum octile separation (in cells) between start and goal.
    pub min_goal_dist_cells: f64,
    /// Obstacle inflation (cells) applied to the A* planning grid only.
    pub inflate_cells: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            gains: TrackingGains::default(),
            clearance: 0.15,
            h: 16,
            stride: 4,
            min_goal_dist_cells: 3.0,
            inflate_cells: 1,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.clearance >= 0.0) {
            return Err(Error::Config("clearance must be non-negative".into()));
        }
        if self.h == 0 || self.stride == 0 {
            return Err(Error::Config("h and stride must be at least 1".into()));
        }
        if !(self.min_goal_dist_cells >= 0.0) {
            return Err(Error::Config("min_goal_dist_cells must be non-negative".into()));
        }
        if self.inflate_cells > 16 {
            return Err(Error::Config("inflate_cells must be at most 16".into()));
        }
        self.gains.validate()
    }
}

/// Run the full collection pipeline on one map: sample free start/goal
/// cells, plan with A*, track with the controller, keep successes, filter
/// windows. Deterministic for a fixed seed; each query derives its own rng
/// stream so results do not depend on evaluation order.
pub fn generate_dataset(
    grid: &OccupancyGrid,
    map_id: &str,
    n_queries: usize,
    seed: u64,
    geom: &RobotGeometry,
    params: &CarParams,
    cfg: &GenConfig,
) -> Result<Dataset> {
    cfg.validate()?;
    params.validate()?;
    if n_queries == 0 {
        return Err(Error::Config("n_queries must be at least 1".into()));
    }
    // Queries are sampled and planned on an inflated copy of the map so
    // expert paths stay off the walls; tracking runs against the real one.
    let plan_grid = inflate_grid(grid, cfg.inflate_cells);
    let mut free = Vec::new();
    for cy in 0..plan_grid.height_cells() {
        for cx in 0..plan_grid.width_cells() {
            if !plan_grid.is_occupied_cell(cx, cy) {
                free.push((cx, cy));
            }
        }
    }
    if free.len() < 2 {
        return Err(Error::Dataset(format!(
            "map {map_id} has {} free cells; need at least 2",
            free.len()
        )));
    }

    let mut trajectories = Vec::new();
    let (mut no_path, mut track_fail) = (0usize, 0usize);
    for q in 0..n_queries {
        let qseed = seed.wrapping_add((q as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut rng = ChaCha8Rng::seed_from_u64(qseed);
        let start = free[rng.gen_range(0..free.len())];
        let mut goal = free[rng.gen_range(0..free.len())];
        for _ in 0..64 {
            if goal != start && octile(start, goal) >= cfg.min_goal_dist_cells {
                break;
            }
            goal = free[rng.gen_range(0..free.len())];
        }
        if goal == start {
            no_path += 1;
            continue;
        }
        let Some(path) = astar(&plan_grid, start, goal) else {
            no_path += 1;
            continue;
        };
        match track_path(&path, grid, geom, params, &cfg.gains, cfg.dt, map_id) {
            Ok(t) => trajectories.push(t),
            Err(_) => track_fail += 1,
        }
    }
    let raw = Dataset { trajectories, norm: ActionNorm::from_params(params), seed };
    let mut filtered = filter_dataset(&raw, grid, geom, cfg.clearance, cfg.h, cfg.stride);
    if filtered.trajectories.is_empty() {
        return Err(Error::Dataset(format!(
            "no usable trajectories from {n_queries} queries on {map_id} \
             ({no_path} unreachable, {track_fail} tracking failures, \
             {} filtered out)",
            raw.trajectories.len()
        )));
    }
    filtered.norm = ActionNorm::fit(filtered.trajectories.iter().flat_map(|t| t.actions.iter()));
    Ok(filtered)
}

// ---------------------------------------------------------------------------
// DKD1 file format
// ---------------------------------------------------------------------------

const DATASET_MAGIC: &[u8; 4] = b"DKD1";

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f32(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&(v as f32).to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("unexpected end of dataset file".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn get_f32(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::Format("unexpected end of dataset file".into()))?;
    let v = f32::from_le_bytes(b);
    if !v.is_finite() {
        return Err(Error::Format("non-finite value in dataset file".into()));
    }
    Ok(v as f64)
}

impl Dataset {
    /// Write the `DKD1` binary layout (little-endian, f32 payload).
    pub fn save(&self, path: &Path) -> Result<()> {
        if self.trajectories.is_empty() {
            return Err(Error::Dataset("refusing to save an empty dataset".into()));
        }
        let dt0 = self.trajectories[0].dt;
        if self.trajectories.iter().any(|t| t.dt != dt0) {
            return Err(Error::Dataset("trajectories disagree on dt".into()));
        }
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(DATASET_MAGIC)?;
        put_u32(&mut w, self.trajectories.len() as u32)?;
        for t in &self.trajectories {
            if t.states.len() != t.actions.len() + 1 {
                return Err(Error::Dataset("state/action length mismatch".into()));
            }
            put_u32(&mut w, t.map_id.len() as u32)?;
            w.write_all(t.map_id.as_bytes())?;
            put_f32(&mut w, t.goal.0)?;
            put_f32(&mut w, t.goal.1)?;
            put_f32(&mut w, t.dt)?;
            put_u32(&mut w, t.actions.len() as u32)?;
            for s in &t.states {
                for v in s.to_array() {
                    put_f32(&mut w, v)?;
                }
            }
            for a in &t.actions {
                put_f32(&mut w, a.dd)?;
                put_f32(&mut w, a.ddelta)?;
            }
        }
        for v in self.norm.offset {
            put_f32(&mut w, v)?;
        }
        for v in self.norm.scale {
            put_f32(&mut w, v)?;
        }
        w.write_all(&self.seed.to_le_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::Format("dataset file too short".into()))?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format("bad dataset magic".into()));
        }
        let count = get_u32(&mut r)? as usize;
        if count == 0 || count > 1_000_000 {
            return Err(Error::Format(format!("implausible trajectory count {count}")));
        }
        let mut trajectories = Vec::with_capacity(count);
        let mut dt0 = None;
        for _ in 0..count {
            let id_len = get_u32(&mut r)? as usize;
            if id_len > 4096 {
                return Err(Error::Format(format!("implausible map_id length {id_len}")));
            }
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id).map_err(|_| Error::Format("unexpected end of dataset file".into()))?;
            let map_id = String::from_utf8(id)
                .map_err(|_| Error::Format("map_id is not valid UTF-8".into()))?;
            let goal = (get_f32(&mut r)?, get_f32(&mut r)?);
            let dt = get_f32(&mut r)?;
            if !(dt > 0.0) {
                return Err(Error::Format("dataset dt must be positive".into()));
            }
            match dt0 {
                None => dt0 = Some(dt),
                Some(d) if d != dt => {
                    return Err(Error::Format("trajectories disagree on dt".into()))
                }
                _ => {}
            }
            let t_len = get_u32(&mut r)? as usize;
            if t_len > 10_000_000 {
                return Err(Error::Format(format!("implausible trajectory length {t_len}")));
            }
            let mut states = Vec::with_capacity(t_len + 1);
            for _ in 0..t_len + 1 {
                let mut a = [0.0f64; 6];
                for v in &mut a {
                    *v = get_f32(&mut r)?;
                }
                states.push(CarState::from_array(a));
            }
            let mut actions = Vec::with_capacity(t_len);
            for _ in 0..t_len {
                let dd = get_f32(&mut r)?;
                let ddelta = get_f32(&mut r)?;
                actions.push(CarAction::new(dd, ddelta));
            }
            trajectories.push(ExpertTrajectory { map_id, goal, states, actions, dt });
        }
        let norm = ActionNorm {
            offset: [get_f32(&mut r)?, get_f32(&mut r)?],
            scale: [get_f32(&mut r)?, get_f32(&mut r)?],
        };
        norm.validate()?;
        let mut seed_bytes = [0u8; 8];
        r.read_exact(&mut seed_bytes)
            .map_err(|_| Error::Format("unexpected end of dataset file".into()))?;
        let seed = u64::from_le_bytes(seed_bytes);
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after dataset footer".into()));
        }
        Ok(Dataset { trajectories, norm, seed })
    }
}
