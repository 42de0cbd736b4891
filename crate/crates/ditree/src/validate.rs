//! Independent safety validation of solved plans.
//!
//! Every Solved result is re-simulated and re-collision-checked here before
//! it may be counted as a success. The integrator and the collision test in
//! this module are written separately from the `dynamics` and `grid`
//! implementations (plain arrays, explicit RK4 stages, brute-force occupied
//! cell scan) so a bug in the planner's fast path cannot hide itself.

use crate::dynamics::CarParams;
use crate::error::{Error, Result};
use crate::grid::{OccupancyGrid, RobotGeometry};
use crate::planner::{PlanResult, PlanStatus};

/// Agreement tolerance between the planner's stored states and the fresh
/// re-simulation. Both integrate the same real-valued map; they differ only
/// in floating-point evaluation order, which stays far below this bound even
/// over thousand-step trajectories.
pub const RESIM_TOL: f64 = 1e-9;

fn deriv(s: &[f64; 6], a: (f64, f64), p: &CarParams) -> [f64; 6] {
    let (psi, v, d, delta) = (s[2], s[3], s[4], s[5]);
    let slip = psi + p.c1 * delta;
    let fx = (p.c_m1 - p.c_m2 * v) * d - p.c_r2 * v * v - p.c_r0 * (p.c_r3 * v).tanh();
    [
        v * slip.cos(),
        v * slip.sin(),
        v * p.c2 * delta,
        fx * (p.c1 * delta).cos() / p.m,
        a.0,
        a.1,
    ]
}

/// Explicit RK4 step with the post-step clamps spelled out.
fn rk4_step(s: &[f64; 6], a: (f64, f64), dt: f64, p: &CarParams) -> [f64; 6] {
    let k1 = deriv(s, a, p);
    let mut s2 = [0.0; 6];
    for i in 0..6 {
        s2[i] = s[i] + 0.5 * dt * k1[i];
    }
    let k2 = deriv(&s2, a, p);
    let mut s3 = [0.0; 6];
    for i in 0..6 {
        s3[i] = s[i] + 0.5 * dt * k2[i];
    }
    let k3 = deriv(&s3, a, p);
    let mut s4 = [0.0; 6];
    for i in 0..6 {
        s4[i] = s[i] + dt * k3[i];
    }
    let k4 = deriv(&s4, a, p);
    let mut out = [0.0; 6];
    for i in 0..6 {
        out[i] = s[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out[3] = out[3].clamp(p.v_min, p.v_max);
    out[4] = out[4].clamp(p.d_min, p.d_max);
    out[5] = out[5].clamp(p.delta_min, p.delta_max);
    out
}

/// Brute-force body collision test: every sphere must sit fully inside the
/// map and clear every occupied cell rectangle.
fn state_collides(grid: &OccupancyGrid, geom: &RobotGeometry, s: &[f64; 6]) -> bool {
    let (minx, miny, maxx, maxy) = grid.bounds();
    let (sin, cos) = s[2].sin_cos();
    for sp in &geom.spheres {
        let px = s[0] + cos * sp.offset_x - sin * sp.offset_y;
        let py = s[1] + sin * sp.offset_x + cos * sp.offset_y;
        if px - sp.radius < minx || px + sp.radius > maxx || py - sp.radius < miny || py + sp.radius > maxy {
            return true;
        }
        for cy in 0..grid.height_cells() {
            for cx in 0..grid.width_cells() {
                if !grid.is_occupied_cell(cx, cy) {
                    continue;
                }
                let (ccx, ccy) = grid.cell_center(cx, cy);
                let half = grid.cell_size() / 2.0;
                let dx = ((px - ccx).abs() - half).max(0.0);
                let dy = ((py - ccy).abs() - half).max(0.0);
                if dx * dx + dy * dy <= sp.radius * sp.radius {
                    return true;
                }
            }
        }
    }
    false
}

/// Re-simulate and re-check a Solved result from scratch. Non-Solved results
/// pass vacuously (there is nothing to certify). Errors spell out the first
/// violated condition.
pub fn validate_result(
    result: &PlanResult,
    grid: &OccupancyGrid,
    geom: &RobotGeometry,
    params: &CarParams,
) -> Result<()> {
    if result.status != PlanStatus::Solved {
        return Ok(());
    }
    let traj = result
        .trajectory
        .as_ref()
        .ok_or_else(|| Error::Validation("solved result carries no trajectory".into()))?;
    if traj.states.is_empty() {
        return Err(Error::Validation("empty state sequence".into()));
    }
    if traj.states.len() != traj.actions.len() + 1 {
        return Err(Error::Validation(format!(
            "{} states vs {} actions",
            traj.states.len(),
            traj.actions.len()
        )));
    }
    if !(traj.dt > 0.0) {
        return Err(Error::Validation("non-positive dt".into()));
    }
    let q = &result.query;
    let first = traj.states[0];
    if first != q.start {
        return Err(Error::Validation("trajectory does not start at the query start".into()));
    }

    // Controls must respect the control box.
    for (i, a) in traj.actions.iter().enumerate() {
        if !(a.dd.abs() <= params.dd_max && a.ddelta.abs() <= params.ddelta_max) {
            return Err(Error::Validation(format!("action {i} outside the control box")));
        }
        if !a.dd.is_finite() || !a.ddelta.is_finite() {
            return Err(Error::Validation(format!("action {i} is not finite")));
        }
    }

    // Fresh forward simulation, compared state by state.
    let mut s = first.to_array();
    if state_collides(grid, geom, &s) {
        return Err(Error::Validation("start state collides".into()));
    }
    for (i, a) in traj.actions.iter().enumerate() {
        s = rk4_step(&s, (a.dd, a.ddelta), traj.dt, params);
        let claimed = traj.states[i + 1].to_array();
        for k in 0..6 {
            if !(s[k] - claimed[k]).abs().le(&RESIM_TOL) {
                return Err(Error::Validation(format!(
                    "state {} component {k} deviates by {:.3e} under re-simulation",
                    i + 1,
                    (s[k] - claimed[k]).abs()
                )));
            }
        }
        if state_collides(grid, geom, &s) {
            return Err(Error::Validation(format!("re-simulated state {} collides", i + 1)));
        }
        if !(s[3] >= params.v_min
            && s[3] <= params.v_max
            && s[4] >= params.d_min
            && s[4] <= params.d_max
            && s[5] >= params.delta_min
            && s[5] <= params.delta_max)
        {
            return Err(Error::Validation(format!("state {} leaves the state bounds", i + 1)));
        }
    }

    // The trajectory must actually end inside the goal disc.
    let dx = s[0] - q.goal.0;
    let dy = s[1] - q.goal.1;
    if dx * dx + dy * dy > q.goal_radius * q.goal_radius {
        return Err(Error::Validation(format!(
            "final state is {:.3} m from the goal (radius {})",
            (dx * dx + dy * dy).sqrt(),
            q.goal_radius
        )));
    }
    Ok(())
}
