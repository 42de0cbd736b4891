//! Sampling-based kinodynamic tree planner.
//!
//! The loop: draw a target state, pick the nearest tree vertex under the
//! weighted metric, ask the action sampler for an edge worth of controls,
//! forward-simulate them, and keep the edge only if every intermediate
//! state is collision-free. The planner is generic over the action
//! sampler; the uniform baseline and the learned policy plug into the same
//! loop and inherit the same validity contract.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{propagate, CarAction, CarParams, CarState};
use crate::error::{Error, Result};
use crate::grid::{OccupancyGrid, RobotGeometry};
use crate::spatial::{MetricWeights, StateIndex};

/// Controls of one tree edge. Uniform-RRT edges hold a single control for
/// the whole propagation, so they are stored as (action, count) instead of
/// materializing N copies; policy edges store the full sequence.
#[derive(Debug, Clone, PartialEq)]
pub enum EdgeActions {
    /// Root vertex: no incoming edge.
    Root,
    /// One control applied `count` times.
    Held { action: CarAction, count: u32 },
    /// Explicit per-step controls.
    Seq(Box<[CarAction]>),
}

impl EdgeActions {
    pub fn len(&self) -> usize {
        match self {
            EdgeActions::Root => 0,
            EdgeActions::Held { count, .. } => *count as usize,
            EdgeActions::Seq(a) => a.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(&self) -> Vec<CarAction> {
        match self {
            EdgeActions::Root => Vec::new(),
            EdgeActions::Held { action, count } => vec![*action; *count as usize],
            EdgeActions::Seq(a) => a.to_vec(),
        }
    }

}

#[derive(Debug, Clone)]
pub struct Vertex {
    pub state: CarState,
    pub parent: Option<u32>,
    pub edge_actions: EdgeActions,
    pub accumulated_time: f64,
}

/// Planner search tree. Edge states are not stored; they are recomputed on
/// demand by replaying the edge controls, which is bit-exact because the
/// integrator is deterministic. Every edge was collision-checked state by
/// state before insertion.
#[derive(Debug)]
pub struct PlanTree {
    vertices: Vec<Vertex>,
    index: StateIndex,
    dt: f64,
    params: CarParams,
}

impl PlanTree {
    pub fn new(root: CarState, dt: f64, params: CarParams) -> Self {
        let mut index = StateIndex::new();
        index.insert(&root);
        Self {
            vertices: vec![Vertex {
                state: root,
                parent: None,
                edge_actions: EdgeActions::Root,
                accumulated_time: 0.0,
            }],
            index,
            dt,
            params,
        }
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex(&self, id: u32) -> &Vertex {
        &self.vertices[id as usize]
    }

    pub fn nearest(&self, q: &CarState, w: &MetricWeights) -> u32 {
        self.index.nearest(q, w).expect("tree always holds the root")
    }

    pub fn add_vertex(&mut self, state: CarState, parent: u32, edge_actions: EdgeActions) -> u32 {
        assert!((parent as usize) < self.vertices.len(), "dangling parent id");
        assert!(!edge_actions.is_empty(), "edges must contain at least one action");
        let accumulated_time =
            self.vertices[parent as usize].accumulated_time + edge_actions.len() as f64 * self.dt;
        let id = self.index.insert(&state);
        debug_assert_eq!(id as usize, self.vertices.len());
        self.vertices.push(Vertex { state, parent: Some(parent), edge_actions, accumulated_time });
        id
    }

    /// Replay the incoming edge of `id`; states include both endpoints.
    pub fn edge_states(&self, id: u32) -> Result<Vec<CarState>> {
        let v = &self.vertices[id as usize];
        match v.parent {
            None => Ok(vec![v.state]),
            Some(p) => {
                let actions = v.edge_actions.to_vec();
                propagate(&self.vertices[p as usize].state, &actions, self.dt, &self.params)
            }
        }
    }

    /// Root-to-leaf trajectory with shared endpoints deduplicated.
    pub fn extract_trajectory(&self, leaf: u32) -> Result<(Vec<CarState>, Vec<CarAction>)> {
        if (leaf as usize) >= self.vertices.len() {
            return Err(Error::InvalidQuery(format!("no vertex {leaf} in tree")));
        }
        let mut path = Vec::new();
        let mut cur = leaf;
        loop {
            path.push(cur);
            match self.vertices[cur as usize].parent {
                Some(p) => cur = p,
                None => break,
            }
        }
        path.reverse();
        let mut states = vec![self.vertices[path[0] as usize].state];
        let mut actions = Vec::new();
        for &id in &path[1..] {
            let edge = self.edge_states(id)?;
            states.extend_from_slice(&edge[1..]);
            actions.extend(self.vertices[id as usize].edge_actions.to_vec());
        }
        Ok((states, actions))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// Wall-clock budget in seconds (authoritative stop condition).
    pub time_budget: f64,
    /// Secondary safeguard on iteration count.
    pub max_iterations: usize,
    /// Node-selection goal bias (classic RRT bias, not the diffusion one).
    pub p_gb: f64,
    /// Actions per edge.
    pub n_actions: usize,
    /// Control period in seconds.
    pub dt: f64,
    pub weights: MetricWeights,
    /// Default goal radius for queries constructed from this config.
    pub goal_radius: f64,
    pub rng_seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            time_budget: 120.0,
            max_iterations: usize::MAX,
            p_gb: 0.05,
            n_actions: 64,
            dt: 0.1,
            weights: MetricWeights::default(),
            goal_radius: 1.0,
            rng_seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.time_budget > 0.0) {
            return Err(Error::Config("time_budget must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.p_gb) {
            return Err(Error::Config("p_gb must lie in [0,1]".into()));
        }
        if self.n_actions == 0 {
            return Err(Error::Config("n_actions must be at least 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be positive".into()));
        }
        if !(self.weights.w_xy > 0.0) || self.weights.w_psi < 0.0 || self.weights.w_v < 0.0 {
            return Err(Error::Config("metric weights need w_xy > 0 and the rest non-negative".into()));
        }
        if !(self.goal_radius > 0.0) {
            return Err(Error::Config("goal_radius must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Query {
    pub start: CarState,
    pub goal: (f64, f64),
    pub goal_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlanStatus {
    Solved,
    Timeout,
    IterationLimit,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanStats {
    pub iterations: u64,
    pub vertices: u64,
    pub collision_checks: u64,
    pub sampler_calls: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<CarState>,
    pub actions: Vec<CarAction>,
    pub dt: f64,
}

impl Trajectory {
    /// Polyline length of the (x, y) projection in meters.
    pub fn path_length(&self) -> f64 {
        self.states.windows(2).map(|w| ((w[1].x - w[0].x).powi(2) + (w[1].y - w[0].y).powi(2)).sqrt()).sum()
    }

    pub fn duration(&self) -> f64 {
        self.actions.len() as f64 * self.dt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub status: PlanStatus,
    pub trajectory: Option<Trajectory>,
    pub stats: PlanStats,
    pub query: Query,
}

#[derive(Serialize, Deserialize)]
struct ResultWire {
    status: PlanStatus,
    stats: PlanStats,
    dt: f64,
    start: [f64; 6],
    goal: [f64; 2],
    goal_radius: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    states: Option<Vec<[f64; 6]>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    actions: Option<Vec<[f64; 2]>>,
}

impl PlanResult {
    pub fn to_json(&self) -> String {
        let wire = ResultWire {
            status: self.status,
            stats: self.stats,
            dt: self.trajectory.as_ref().map(|t| t.dt).unwrap_or(0.0),
            start: self.query.start.to_array(),
            goal: [self.query.goal.0, self.query.goal.1],
            goal_radius: self.query.goal_radius,
            states: self
                .trajectory
                .as_ref()
                .map(|t| t.states.iter().map(|s| s.to_array()).collect()),
            actions: self
                .trajectory
                .as_ref()
                .map(|t| t.actions.iter().map(|a| [a.dd, a.ddelta]).collect()),
        };
        serde_json::to_string_pretty(&wire).expect("result serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: ResultWire = serde_json::from_str(text)?;
        let trajectory = match (wire.states, wire.actions) {
            (Some(states), Some(actions)) => Some(Trajectory {
                states: states.into_iter().map(CarState::from_array).collect(),
                actions: actions.into_iter().map(|a| CarAction::new(a[0], a[1])).collect(),
                dt: wire.dt,
            }),
            _ => None,
        };
        Ok(PlanResult {
            status: wire.status,
            trajectory,
            stats: wire.stats,
            query: Query {
                start: CarState::from_array(wire.start),
                goal: (wire.goal[0], wire.goal[1]),
                goal_radius: wire.goal_radius,
            },
        })
    }
}

/// Edge proposal from an action sampler. `states` carries the sampler's own
/// forward simulation when it already ran one (the learned sampler
/// simulates chunk by chunk); it must equal `propagate(x_near, actions)`
/// bit-for-bit, which holds because both use the same integrator.
pub struct SampledEdge {
    pub actions: Vec<CarAction>,
    pub states: Option<Vec<CarState>>,
}

/// Action-selection strategy plugged into the planner loop.
pub trait ActionSampler {
    fn sample_edge(
        &self,
        x_near: &CarState,
        x_rand: &CarState,
        goal: (f64, f64),
        grid: &OccupancyGrid,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SampledEdge>;

    /// Short label used in reports.
    fn name(&self) -> &'static str;
}

/// Classical kinodynamic-RRT baseline: one control drawn uniformly from the
/// control box and held for the whole edge.
pub struct UniformSampler {
    pub params: CarParams,
}

impl ActionSampler for UniformSampler {
    fn sample_edge(
        &self,
        _x_near: &CarState,
        _x_rand: &CarState,
        _goal: (f64, f64),
        _grid: &OccupancyGrid,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<SampledEdge> {
        assert!(n >= 1);
        let a = CarAction::new(
            rng.gen_range(-self.params.dd_max..=self.params.dd_max),
            rng.gen_range(-self.params.ddelta_max..=self.params.ddelta_max),
        );
        Ok(SampledEdge { actions: vec![a; n], states: None })
    }

    fn name(&self) -> &'static str {
        "rrt"
    }
}

/// Draw a planner target: the goal lifted to a state with probability
/// `p_gb`, otherwise a state uniform over the grid bounds, heading, and the
/// velocity interval (throttle and steering zeroed).
pub fn sample_state(
    grid: &OccupancyGrid,
    goal: (f64, f64),
    p_gb: f64,
    params: &CarParams,
    rng: &mut ChaCha8Rng,
) -> CarState {
    if p_gb > 0.0 && rng.gen_range(0.0..1.0) < p_gb {
        return CarState::new(goal.0, goal.1, 0.0, 0.0, 0.0, 0.0);
    }
    let (min_x, min_y, max_x, max_y) = grid.bounds();
    let psi = {
        // Uniform over (−π, π]: negate a draw from [−π, π).
        let raw = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
        -raw
    };
    CarState::new(
        rng.gen_range(min_x..max_x),
        rng.gen_range(min_y..max_y),
        psi,
        rng.gen_range(params.v_min..params.v_max),
        0.0,
        0.0,
    )
}

pub(crate) fn in_goal(s: &CarState, goal: (f64, f64), r: f64) -> bool {
    let dx = s.x - goal.0;
    let dy = s.y - goal.1;
    dx * dx + dy * dy <= r * r
}

/// Run the tree planner until the goal disc is reached, the wall clock
/// exceeds the budget, or the iteration cap is hit.
pub fn plan(
    query: &Query,
    grid: &OccupancyGrid,
    geom: &RobotGeometry,
    sampler: &dyn ActionSampler,
    cfg: &PlannerConfig,
    params: &CarParams,
) -> Result<PlanResult> {
    plan_with_tree(query, grid, geom, sampler, cfg, params).map(|(r, _)| r)
}

/// Like [`plan`], but also hands back the search tree (for plotting and
/// diagnostics).
pub fn plan_with_tree(
    query: &Query,
    grid: &OccupancyGrid,
    geom: &RobotGeometry,
    sampler: &dyn ActionSampler,
    cfg: &PlannerConfig,
    params: &CarParams,
) -> Result<(PlanResult, PlanTree)> {
    cfg.validate()?;
    params.validate()?;
    if !query.start.is_finite() {
        return Err(Error::InvalidQuery("start state is not finite".into()));
    }
    if !params.state_in_bounds(&query.start) {
        return Err(Error::InvalidQuery("start state violates model bounds".into()));
    }
    if !(query.goal_radius > 0.0) {
        return Err(Error::InvalidQuery("goal radius must be positive".into()));
    }
    let (min_x, min_y, max_x, max_y) = grid.bounds();
    if query.goal.0 < min_x || query.goal.0 > max_x || query.goal.1 < min_y || query.goal.1 > max_y {
        return Err(Error::InvalidQuery("goal lies outside the map bounds".into()));
    }
    if !grid.is_state_free(geom, query.start.pose()) {
        return Err(Error::InvalidQuery("start state is in collision".into()));
    }

    let clock = Instant::now();
    let mut stats = PlanStats::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut tree = PlanTree::new(query.start, cfg.dt, *params);

    let finish = |tree: &PlanTree, leaf: u32, status: PlanStatus, mut stats: PlanStats, clock: Instant| -> Result<PlanResult> {
        stats.vertices = tree.len() as u64;
        stats.wall_time_s = clock.elapsed().as_secs_f64();
        let trajectory = if status == PlanStatus::Solved {
            let (states, actions) = tree.extract_trajectory(leaf)?;
            Some(Trajectory { states, actions, dt: cfg.dt })
        } else {
            None
        };
        Ok(PlanResult { status, trajectory, stats, query: *query })
    };

    if in_goal(&query.start, query.goal, query.goal_radius) {
        let r = finish(&tree, 0, PlanStatus::Solved, stats, clock)?;
        return Ok((r, tree));
    }

    while stats.iterations < cfg.max_iterations as u64 {
        if clock.elapsed().as_secs_f64() > cfg.time_budget {
            let r = finish(&tree, 0, PlanStatus::Timeout, stats, clock)?;
            return Ok((r, tree));
        }
        stats.iterations += 1;

        let x_rand = sample_state(grid, query.goal, cfg.p_gb, params, &mut rng);
        let near_id = tree.nearest(&x_rand, &cfg.weights);
        let x_near = tree.vertex(near_id).state;

        stats.sampler_calls += 1;
        let edge = sampler.sample_edge(&x_near, &x_rand, query.goal, grid, cfg.n_actions, &mut rng)?;
        debug_assert!(!edge.actions.is_empty());
        let states = match edge.states {
            Some(s) => {
                debug_assert_eq!(s.len(), edge.actions.len() + 1);
                s
            }
            None => propagate(&x_near, &edge.actions, cfg.dt, params)?,
        };

        // Gate substates in order; accept early if one enters the goal disc
        // behind a collision-free prefix.
        let mut accepted = 0usize; // substates verified free so far
        let mut goal_hit = None;
        for (k, s) in states.iter().enumerate().skip(1) {
            stats.collision_checks += 1;
            if !grid.is_state_free(geom, s.pose()) {
                break;
            }
            accepted = k;
            if in_goal(s, query.goal, query.goal_radius) {
                goal_hit = Some(k);
                break;
            }
        }

        if let Some(k) = goal_hit {
            let edge_actions = if k == edge.actions.len() {
                EdgeActions::Seq(edge.actions.into_boxed_slice())
            } else {
                EdgeActions::Seq(edge.actions[..k].to_vec().into_boxed_slice())
            };
            let leaf = tree.add_vertex(states[k], near_id, edge_actions);
            let r = finish(&tree, leaf, PlanStatus::Solved, stats, clock)?;
            return Ok((r, tree));
        }
        if accepted == edge.actions.len() {
            let held = edge.actions.iter().all(|a| *a == edge.actions[0]);
            let edge_actions = if held {
                EdgeActions::Held { action: edge.actions[0], count: edge.actions.len() as u32 }
            } else {
                EdgeActions::Seq(edge.actions.into_boxed_slice())
            };
            tree.add_vertex(*states.last().unwrap(), near_id, edge_actions);
        }
    }
    let r = finish(&tree, 0, PlanStatus::IterationLimit, stats, clock)?;
    Ok((r, tree))
}
